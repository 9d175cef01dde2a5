#include <doctest.h>

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "lidattack/errors.hpp"
#include "lidattack/external_oracle.hpp"
#include "lidattack/stub_server.hpp"
#include "lidattack/wire.hpp"

using namespace lidattack;

namespace {

const std::string kStub = LIDATTACK_STUB_BIN;
const std::string kGolden = LIDATTACK_GOLDEN_DIR;

std::string exec_stub(const std::string& flags = {}) { return "exec:" + kStub + (flags.empty() ? "" : " " + flags); }

// In-process TCP stub on a free loopback port.
class ThreadedStub {
 public:
  explicit ThreadedStub(StubOptions options = {}) {
    thread_ = std::thread([this, options] {
      const int fd = listener_.accept_fd();
      wire::LineChannel channel(fd, fd);
      session_ = serve_stub(channel, options);
    });
  }
  ~ThreadedStub() {
    if (thread_.joinable()) thread_.join();
  }
  std::string endpoint() const { return "tcp:127.0.0.1:" + std::to_string(listener_.port()); }
  StubSession join() {
    thread_.join();
    return session_;
  }

 private:
  wire::TcpListener listener_;
  StubSession session_;
  std::thread thread_;
};

}  // namespace

TEST_SUITE("wire") {

TEST_CASE("request and response codecs roundtrip") {
  const PointCloud cloud = {{1.5, -2.25, 0.125, 0.5}, {0, 0, 0, 0}};
  const auto req = wire::parse_message(wire::detect_request(42, cloud));
  CHECK(req["op"] == "detect");
  CHECK(req["id"] == 42);
  CHECK(wire::parse_points(req["points"]) == cloud);

  Detection d;
  d.label = "Car";
  d.score = 0.75;
  d.box.center = {1, 2, 3};
  d.box.half_extents = {2, 1, 0.5};
  d.box.yaw = 0.25;
  const auto dets = wire::parse_detections_response(wire::detections_response(9, {d, d}), 9);
  REQUIRE(dets.size() == 2);
  CHECK(dets[1].label == "Car");
  CHECK(dets[1].score == 0.75);
  CHECK(dets[1].box.center == d.box.center);
  CHECK(dets[1].box.yaw == 0.25);

  const DetectorInfo info{"x", 0.3, {"Car"}};
  const auto back = wire::parse_hello_response(wire::hello_response(info));
  CHECK(back.name == "x");
  CHECK(back.default_threshold == 0.3);
  CHECK(back.classes == info.classes);

  CHECK(wire::parse_message(wire::hello_request())["version"] == wire::kProtocolVersion);
  CHECK(wire::parse_message(wire::shutdown_request())["op"] == "shutdown");
}

TEST_CASE("malformed responses raise ProtocolError with the raw line") {
  const std::string bad_json = "{not json";
  try {
    wire::parse_message(bad_json);
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(e.raw() == bad_json);
  }
  const std::string wrong_id = R"({"op":"detections","id":3,"detections":[]})";
  try {
    wire::parse_detections_response(wrong_id, 4);
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(e.raw() == wrong_id);
  }
  CHECK_THROWS_AS(wire::parse_detections_response(R"({"op":"error","message":"boom"})", 1), ProtocolError);
  CHECK_THROWS_AS(wire::parse_detections_response(R"({"id":1,"detections":[]})", 1), ProtocolError);
  CHECK_THROWS_AS(
      wire::parse_detections_response(
          R"({"op":"detections","id":1,"detections":[{"label":"Car","score":1.5,"box":{"center":[0,0,0],"half_extents":[1,1,1],"yaw":0}}]})",
          1),
      ProtocolError);
  CHECK_THROWS_AS(
      wire::parse_hello_response(R"({"op":"hello","version":2,"name":"n","default_threshold":0.5,"classes":[]})"),
      ProtocolError);
  CHECK_THROWS_AS(
      wire::parse_hello_response(R"({"op":"hello","version":1,"name":"n","default_threshold":1.5,"classes":[]})"),
      ProtocolError);
  CHECK_THROWS_AS(wire::parse_points(nlohmann::json::parse("[[1,2,3]]")), ArgumentError);
}

TEST_CASE("external oracle over a child process") {
  auto oracle = ExternalOracle::open(exec_stub());
  CHECK(oracle->info().name == "stub");
  CHECK(oracle->info().default_threshold == 0.5);
  CHECK(oracle->info().classes == std::vector<std::string>{"Car", "Pedestrian", "Cyclist"});
  const PointCloud cloud = {{10, 0, 0, 0}, {12, 2, 1, 0}};
  const auto dets = oracle->detect(cloud);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].label == "Car");
  CHECK(dets[0].score == 0.9);
  CHECK((dets[0].box.center - Eigen::Vector3d(11, 1, 0.5)).norm() < 1e-12);
  CHECK(oracle->detect({}).empty());
  CHECK(oracle->calls() == 2);
}

TEST_CASE("external oracle over tcp") {
  ThreadedStub stub;
  {
    auto oracle = open_oracle(stub.endpoint());
    CHECK(oracle->info().name == "stub");
    for (int i = 0; i < 5; ++i) CHECK(oracle->detect({{1, 1, 1, 0}}).size() == 1);
  }
  const auto session = stub.join();
  CHECK(session.shutdown);
  CHECK(session.requests == 7);  // hello, five detects, shutdown
}

TEST_CASE("id mismatch is a protocol error and poisons the handle") {
  auto oracle = ExternalOracle::open(exec_stub("--corrupt-ids"));
  try {
    oracle->detect({{1, 1, 1, 0}});
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(e.raw().find("\"id\":2") != std::string::npos);
  }
  CHECK_THROWS_AS(oracle->detect({{1, 1, 1, 0}}), TransportError);
}

TEST_CASE("silent peer times out") {
  const auto start = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(ExternalOracle::open(exec_stub("--silent"), 300), TransportError);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  CHECK(ms >= 250);
  CHECK(ms < 3000);
}

TEST_CASE("peer that exits immediately is a transport error") {
  CHECK_THROWS_AS(ExternalOracle::open("exec:true", 2000), TransportError);
  CHECK_THROWS_AS(ExternalOracle::open("exec:echo '{\"op\":\"hello\",\"version\":2}'", 2000), ProtocolError);
}

TEST_CASE("endpoint grammar") {
  CHECK_THROWS_AS(open_oracle("smoke-signals"), ArgumentError);
  CHECK_THROWS_AS(open_oracle("tcp:127.0.0.1"), ArgumentError);
  CHECK_THROWS_AS(open_oracle("builtin:nope"), ArgumentError);
  CHECK(open_oracle("builtin:voxel0.2")->info().name == "toy-voxel-0.2");
  CHECK(open_oracle("builtin:voxel0.4")->info().name == "toy-voxel-0.4");
  // nothing listens on this port once the listener is gone
  std::uint16_t port;
  {
    wire::TcpListener l;
    port = l.port();
  }
  CHECK_THROWS_AS(open_oracle("tcp:127.0.0.1:" + std::to_string(port), 500), TransportError);
}

TEST_CASE("stub answers unknown ops and bad versions with errors") {
  auto peer = wire::PeerConnection::open(exec_stub());
  auto& ch = peer->channel();
  ch.send_line(R"({"op":"frobnicate"})");
  CHECK(wire::parse_message(ch.recv_line(2000))["op"] == "error");
  ch.send_line(R"({"op":"hello","version":3})");
  CHECK(wire::parse_message(ch.recv_line(2000))["op"] == "error");
  ch.send_line("garbage");
  CHECK(wire::parse_message(ch.recv_line(2000))["op"] == "error");
  ch.send_line(R"({"op":"detect","id":5,"points":[[1,2,3,0]]})");
  CHECK(wire::parse_detections_response(ch.recv_line(2000), 5).size() == 1);
  ch.send_line(wire::shutdown_request());
  peer->close();
}

TEST_CASE("golden transcripts replay against the stub") {
  for (const char* name : {"handshake.ndjson", "detect.ndjson", "errors.ndjson"}) {
    CAPTURE(name);
    std::ifstream in(kGolden + "/" + name);
    REQUIRE(in);
    auto peer = wire::PeerConnection::open(exec_stub());
    const auto report = wire::replay_transcript(peer->channel(), in, 3000);
    for (const auto& m : report.mismatches) MESSAGE(m);
    CHECK(report.ok());
    CHECK(report.exchanges > 0);
    CHECK_FALSE(report.id_mismatch);
    peer->close();
  }
}

TEST_CASE("golden replay flags wrong ids") {
  std::ifstream in(kGolden + "/detect.ndjson");
  auto peer = wire::PeerConnection::open(exec_stub("--corrupt-ids"));
  const auto report = wire::replay_transcript(peer->channel(), in, 3000);
  CHECK_FALSE(report.ok());
  CHECK(report.id_mismatch);
  peer->close();
}

TEST_CASE("golden replay against a differently named peer compares structure only") {
  std::ifstream in(kGolden + "/detect.ndjson");
  auto peer = wire::PeerConnection::open(exec_stub("--name other"));
  const auto report = wire::replay_transcript(peer->channel(), in, 3000);
  CHECK(report.ok());
  peer->close();
}

TEST_CASE("replay detects a changed detection payload") {
  std::istringstream transcript(
      "> {\"op\":\"hello\",\"version\":1}\n"
      "< {\"op\":\"hello\",\"version\":1,\"name\":\"stub\",\"default_threshold\":0.5,\"classes\":[\"Car\",\"Pedestrian\","
      "\"Cyclist\"]}\n"
      "> {\"op\":\"detect\",\"id\":1,\"points\":[[1.0,0.0,0.0,0.0]]}\n"
      "< {\"op\":\"detections\",\"id\":1,\"detections\":[]}\n");
  auto peer = wire::PeerConnection::open(exec_stub());
  const auto report = wire::replay_transcript(peer->channel(), transcript, 3000);
  CHECK_FALSE(report.ok());
  CHECK_FALSE(report.id_mismatch);
  peer->channel().send_line(wire::shutdown_request());
  peer->close();
}

TEST_CASE("line channel rejects embedded newlines") {
  auto peer = wire::PeerConnection::open(exec_stub());
  CHECK_THROWS_AS(peer->channel().send_line("a\nb"), ArgumentError);
  peer->channel().send_line(wire::shutdown_request());
  peer->close();
}

}
