#include "lidattack/wire.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <istream>
#include <thread>

#include "lidattack/errors.hpp"

namespace lidattack::wire {

namespace {

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

void ignore_sigpipe() {
  static const bool done = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

ProtocolError protocol_error(const std::string& what, const std::string& raw) {
  return ProtocolError("protocol error: " + what, raw);
}

Detection checked_detection(const nlohmann::json& j, const std::string& raw) {
  Detection d;
  try {
    d = j.get<Detection>();
  } catch (const nlohmann::json::exception& e) {
    throw protocol_error(std::string("malformed detection: ") + e.what(), raw);
  }
  if (d.label.empty()) throw protocol_error("detection with empty label", raw);
  if (!(d.score >= 0.0 && d.score <= 1.0)) throw protocol_error("detection score outside [0, 1]", raw);
  if (!d.box.center.allFinite() || !d.box.half_extents.allFinite() || !std::isfinite(d.box.yaw) ||
      (d.box.half_extents.array() < 0).any()) {
    throw protocol_error("detection box is not finite and non-negative", raw);
  }
  return d;
}

std::uint64_t message_id(const nlohmann::json& j, const std::string& raw) {
  const auto it = j.find("id");
  if (it == j.end() || !it->is_number_unsigned()) throw protocol_error("missing or invalid id", raw);
  return it->get<std::uint64_t>();
}

}  // namespace

std::string hello_request() { return nlohmann::json{{"op", "hello"}, {"version", kProtocolVersion}}.dump(); }

std::string detect_request(std::uint64_t id, const PointCloud& cloud) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : cloud) pts.push_back({p.x, p.y, p.z, p.intensity});
  return nlohmann::json{{"op", "detect"}, {"id", id}, {"points", std::move(pts)}}.dump();
}

std::string shutdown_request() { return nlohmann::json{{"op", "shutdown"}}.dump(); }

std::string hello_response(const DetectorInfo& info) {
  return nlohmann::json{{"op", "hello"},
                        {"version", kProtocolVersion},
                        {"name", info.name},
                        {"default_threshold", info.default_threshold},
                        {"classes", info.classes}}
      .dump();
}

std::string detections_response(std::uint64_t id, const std::vector<Detection>& detections) {
  return nlohmann::json{{"op", "detections"}, {"id", id}, {"detections", detections}}.dump();
}

std::string error_response(const std::string& message) {
  return nlohmann::json{{"op", "error"}, {"message", message}}.dump();
}

nlohmann::json parse_message(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw protocol_error(std::string("invalid JSON: ") + e.what(), line);
  }
  if (!j.is_object() || !j.contains("op") || !j["op"].is_string()) throw protocol_error("message without op", line);
  return j;
}

DetectorInfo parse_hello_response(const std::string& line) {
  const auto j = parse_message(line);
  const auto op = j["op"].get<std::string>();
  if (op == "error") throw protocol_error("peer rejected handshake: " + j.value("message", std::string()), line);
  if (op != "hello") throw protocol_error("expected hello, got " + op, line);
  if (!j.contains("version") || !j["version"].is_number_integer()) throw protocol_error("hello without version", line);
  if (j["version"].get<int>() != kProtocolVersion) {
    throw protocol_error("protocol version mismatch: peer speaks " + j["version"].dump(), line);
  }
  DetectorInfo info;
  try {
    info.name = j.at("name").get<std::string>();
    info.default_threshold = j.at("default_threshold").get<double>();
    info.classes = j.at("classes").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw protocol_error(std::string("malformed hello: ") + e.what(), line);
  }
  if (!(info.default_threshold > 0.0 && info.default_threshold < 1.0)) {
    throw protocol_error("default_threshold outside (0, 1)", line);
  }
  return info;
}

std::vector<Detection> parse_detections_response(const std::string& line, std::uint64_t expected_id) {
  const auto j = parse_message(line);
  const auto op = j["op"].get<std::string>();
  if (op == "error") throw protocol_error("peer error: " + j.value("message", std::string()), line);
  if (op != "detections") throw protocol_error("expected detections, got " + op, line);
  const auto id = message_id(j, line);
  if (id != expected_id) {
    throw protocol_error("response id " + std::to_string(id) + " does not match request id " + std::to_string(expected_id),
                         line);
  }
  const auto it = j.find("detections");
  if (it == j.end() || !it->is_array()) throw protocol_error("detections must be an array", line);
  std::vector<Detection> out;
  for (const auto& d : *it) out.push_back(checked_detection(d, line));
  return out;
}

PointCloud parse_points(const nlohmann::json& points) {
  if (!points.is_array()) throw ArgumentError("points must be an array");
  PointCloud cloud;
  cloud.reserve(points.size());
  for (const auto& row : points) {
    if (!row.is_array() || row.size() != 4) throw ArgumentError("each point must be [x, y, z, intensity]");
    Point3 p{row[0].get<double>(), row[1].get<double>(), row[2].get<double>(), row[3].get<double>()};
    if (!p.finite()) throw ArgumentError("non-finite point coordinate");
    cloud.push_back(p);
  }
  return cloud;
}

LineChannel::LineChannel(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) { ignore_sigpipe(); }

LineChannel::~LineChannel() {
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
}

void LineChannel::close_write() {
  if (write_fd_ < 0) return;
  if (write_fd_ == read_fd_) {
    ::shutdown(write_fd_, SHUT_WR);
  } else {
    ::close(write_fd_);
  }
  write_fd_ = -1;
}

void LineChannel::send_line(const std::string& line) {
  if (line.find('\n') != std::string::npos) throw ArgumentError("wire message contains a newline");
  if (write_fd_ < 0) throw TransportError("channel is closed for writing");
  std::string data = line + '\n';
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("write to oracle peer failed"));
    }
    off += static_cast<std::size_t>(n);
  }
}

bool LineChannel::try_recv_line(std::string& line, int timeout_ms) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      line = buffer_.substr(0, nl);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      buffer_.erase(0, nl + 1);
      return true;
    }
    if (eof_) {
      if (buffer_.empty()) return false;
      throw TransportError("peer closed the connection mid-message");
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw TransportError("timed out after " + std::to_string(timeout_ms) + " ms waiting for peer");
    pollfd pfd{read_fd_, POLLIN, 0};
    const int r = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("poll failed"));
    }
    if (r == 0) continue;
    char chunk[65536];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError(errno_text("read from oracle peer failed"));
    }
    if (n == 0) {
      eof_ = true;
    } else {
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }
}

std::string LineChannel::recv_line(int timeout_ms) {
  std::string line;
  if (!try_recv_line(line, timeout_ms)) throw TransportError("oracle peer closed the connection");
  return line;
}

ChildProcess::ChildProcess(const std::string& command) {
  ignore_sigpipe();
  int to_child[2];
  int from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw TransportError(errno_text("pipe"));
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw TransportError(errno_text("pipe"));
  }
  pid_ = ::fork();
  if (pid_ < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    throw TransportError(errno_text("fork"));
  }
  if (pid_ == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  channel_ = std::make_unique<LineChannel>(from_child[0], to_child[1]);
}

int ChildProcess::wait(int grace_ms) {
  if (reaped_) return status_;
  channel_->close_write();
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(grace_ms);
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) break;
    if (r < 0 && errno != EINTR) {
      status = -1;
      break;
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  reaped_ = true;
  status_ = status;
  return status_;
}

ChildProcess::~ChildProcess() {
  if (pid_ > 0) wait();
}

std::unique_ptr<LineChannel> connect_tcp(const std::string& host, std::uint16_t port, int timeout_ms) {
  ignore_sigpipe();
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0) throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  std::string last_error = "no addresses";
  for (addrinfo* a = res; a != nullptr; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, a->ai_protocol);
    if (fd < 0) continue;
    int r = ::connect(fd, a->ai_addr, a->ai_addrlen);
    if (r != 0 && errno == EINPROGRESS) {
      pollfd pfd{fd, POLLOUT, 0};
      r = ::poll(&pfd, 1, timeout_ms);
      if (r == 1) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        r = err == 0 ? 0 : -1;
        errno = err;
      } else {
        if (r == 0) errno = ETIMEDOUT;
        r = -1;
      }
    }
    if (r == 0) {
      ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
      ::freeaddrinfo(res);
      return std::make_unique<LineChannel>(fd, fd);
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw TransportError("cannot connect to " + host + ":" + std::to_string(port) + ": " + last_error);
}

TcpListener::TcpListener(std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw TransportError(errno_text("socket"));
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0) {
    const std::string msg = errno_text("bind/listen");
    ::close(fd_);
    throw TransportError(msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

int TcpListener::accept_fd() {
  for (;;) {
    const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) return fd;
    if (errno != EINTR) throw TransportError(errno_text("accept"));
  }
}

std::unique_ptr<PeerConnection> PeerConnection::open(const std::string& endpoint, int timeout_ms) {
  std::unique_ptr<PeerConnection> peer(new PeerConnection());
  if (endpoint.rfind("exec:", 0) == 0) {
    const std::string command = endpoint.substr(5);
    if (command.empty()) throw ArgumentError("exec: endpoint needs a command");
    peer->child_ = std::make_unique<ChildProcess>(command);
    return peer;
  }
  if (endpoint.rfind("tcp:", 0) == 0) {
    const std::string rest = endpoint.substr(4);
    const auto sep = rest.rfind(':');
    if (sep == std::string::npos || sep == 0) throw ArgumentError("tcp endpoint must be tcp:<host>:<port>");
    const std::string port_text = rest.substr(sep + 1);
    unsigned port = 0;
    const auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc() || ptr != port_text.data() + port_text.size() || port == 0 || port > 65535) {
      throw ArgumentError("invalid port in endpoint: " + port_text);
    }
    peer->socket_ = connect_tcp(rest.substr(0, sep), static_cast<std::uint16_t>(port), timeout_ms);
    return peer;
  }
  throw ArgumentError("endpoint must start with exec: or tcp: (" + endpoint + ")");
}

void PeerConnection::close() {
  if (child_) {
    child_->wait();
  } else if (socket_) {
    socket_->close_write();
  }
}

PeerConnection::~PeerConnection() { close(); }

namespace {

std::string compare_response(const nlohmann::json& expected, const nlohmann::json& actual, bool exact,
                             bool& id_mismatch) {
  const auto eop = expected.value("op", std::string());
  const auto aop = actual.value("op", std::string());
  if (eop != aop) return "expected op '" + eop + "', got '" + aop + "'";
  if (eop == "error") return {};
  if (eop == "hello") {
    if (actual.value("version", -1) != expected.value("version", -2)) return "hello version differs";
    if (exact && actual != expected) return "hello differs from transcript";
    return {};
  }
  if (eop == "detections") {
    if (!actual.contains("id") || actual["id"] != expected["id"]) {
      id_mismatch = true;
      return "response id " + actual.value("id", nlohmann::json()).dump() + " does not match " + expected["id"].dump();
    }
    if (!actual.contains("detections") || !actual["detections"].is_array()) return "detections is not an array";
    if (exact && actual["detections"] != expected["detections"]) return "detections differ from transcript";
    return {};
  }
  if (exact && actual != expected) return "response differs from transcript";
  return {};
}

}  // namespace

TranscriptReport replay_transcript(LineChannel& channel, std::istream& transcript, int timeout_ms) {
  TranscriptReport report;
  std::string expected_name;
  std::string peer_name;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(transcript, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line.size() < 2 || (line.compare(0, 2, "> ") != 0 && line.compare(0, 2, "< ") != 0)) {
      throw MalformedFileError("transcript line " + std::to_string(lineno) + " must start with '> ' or '< '");
    }
    const std::string body = line.substr(2);
    if (line[0] == '>') {
      channel.send_line(body);
      continue;
    }
    ++report.exchanges;
    nlohmann::json expected;
    try {
      expected = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedFileError("transcript line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string raw = channel.recv_line(timeout_ms);
    const auto actual = parse_message(raw);
    if (expected.value("op", std::string()) == "hello") {
      expected_name = expected.value("name", std::string());
      peer_name = actual.value("name", std::string());
    }
    const bool exact = !expected_name.empty() && expected_name == peer_name;
    const auto problem = compare_response(expected, actual, exact, report.id_mismatch);
    if (!problem.empty()) report.mismatches.push_back("line " + std::to_string(lineno) + ": " + problem);
  }
  return report;
}

}  // namespace lidattack::wire
