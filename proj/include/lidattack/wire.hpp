#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidattack/oracle.hpp"

// Newline-delimited JSON protocol spoken with external detectors, and the
// byte channels it runs over (child process pipes or a TCP socket).
namespace lidattack::wire {

inline constexpr int kProtocolVersion = 1;
inline constexpr int kDefaultTimeoutMs = 5000;

std::string hello_request();
std::string detect_request(std::uint64_t id, const PointCloud& cloud);
std::string shutdown_request();

std::string hello_response(const DetectorInfo& info);
std::string detections_response(std::uint64_t id, const std::vector<Detection>& detections);
std::string error_response(const std::string& message);

// All parsers throw ProtocolError carrying the offending line.
nlohmann::json parse_message(const std::string& line);
DetectorInfo parse_hello_response(const std::string& line);
std::vector<Detection> parse_detections_response(const std::string& line, std::uint64_t expected_id);
PointCloud parse_points(const nlohmann::json& points);

// Bidirectional line channel over a pair of file descriptors (may be the same
// socket). Owns the descriptors.
class LineChannel {
 public:
  LineChannel(int read_fd, int write_fd);
  ~LineChannel();
  LineChannel(const LineChannel&) = delete;
  LineChannel& operator=(const LineChannel&) = delete;

  // `line` must not contain a newline; one is appended.
  void send_line(const std::string& line);
  // Throws TransportError on EOF, read failure or timeout.
  std::string recv_line(int timeout_ms);
  // Like recv_line but returns false on clean EOF instead of throwing.
  bool try_recv_line(std::string& line, int timeout_ms);
  void close_write();

 private:
  int read_fd_;
  int write_fd_;
  std::string buffer_;
  bool eof_ = false;
};

// `/bin/sh -c command` with stdin/stdout connected to the channel. stderr is inherited.
class ChildProcess {
 public:
  explicit ChildProcess(const std::string& command);
  ~ChildProcess();
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  LineChannel& channel() { return *channel_; }
  // Closes our end and reaps the child, killing it if it lingers past grace_ms.
  int wait(int grace_ms = 1000);

 private:
  int pid_ = -1;
  std::unique_ptr<LineChannel> channel_;
  bool reaped_ = false;
  int status_ = 0;
};

std::unique_ptr<LineChannel> connect_tcp(const std::string& host, std::uint16_t port, int timeout_ms);

// Loopback listener; port 0 picks a free port.
class TcpListener {
 public:
  explicit TcpListener(std::uint16_t port = 0);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  // Blocks for the next connection; returns its descriptor.
  int accept_fd();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// A protocol peer reached through `exec:<command>` or `tcp:<host>:<port>`.
class PeerConnection {
 public:
  static std::unique_ptr<PeerConnection> open(const std::string& endpoint, int timeout_ms = kDefaultTimeoutMs);
  ~PeerConnection();

  LineChannel& channel() { return child_ ? child_->channel() : *socket_; }
  // Closes the write side and, for child processes, reaps the child.
  void close();

 private:
  PeerConnection() = default;
  std::unique_ptr<ChildProcess> child_;
  std::unique_ptr<LineChannel> socket_;
};

// Replays a transcript of "> request" / "< response" lines against a peer.
// Responses are compared structurally: detection lists must match exactly
// only when `peer_name` equals the transcript's hello name, and error
// responses are compared by op alone.
struct TranscriptReport {
  std::size_t exchanges = 0;
  std::vector<std::string> mismatches;
  bool id_mismatch = false;
  bool ok() const { return mismatches.empty(); }
};

TranscriptReport replay_transcript(LineChannel& channel, std::istream& transcript, int timeout_ms = kDefaultTimeoutMs);

}  // namespace lidattack::wire
