#include "lidattack/stub_server.hpp"

#include <climits>

#include "lidattack/errors.hpp"

namespace lidattack {

namespace {

std::string respond(const nlohmann::json& msg, const StubOptions& options, bool& stop) {
  const auto op = msg["op"].get<std::string>();
  if (op == "hello") {
    if (msg.value("version", -1) != wire::kProtocolVersion) return wire::error_response("unsupported protocol version");
    return wire::hello_response({options.name, 0.5, {"Car", "Pedestrian", "Cyclist"}});
  }
  if (op == "shutdown") {
    stop = true;
    return {};
  }
  if (op == "detect") {
    if (!msg.contains("id") || !msg["id"].is_number_unsigned()) return wire::error_response("detect needs an unsigned id");
    auto id = msg["id"].get<std::uint64_t>();
    PointCloud cloud;
    try {
      cloud = wire::parse_points(msg.value("points", nlohmann::json()));
    } catch (const ArgumentError& e) {
      return wire::error_response(e.what());
    }
    std::vector<Detection> dets;
    if (!cloud.empty()) {
      Detection d;
      d.label = "Car";
      d.score = 0.9;
      d.box.center = centroid(cloud);
      d.box.half_extents = {2.0, 1.0, 0.75};
      d.box.yaw = 0.0;
      dets.push_back(d);
    }
    if (options.corrupt_ids) ++id;
    return wire::detections_response(id, dets);
  }
  return wire::error_response("unknown op '" + op + "'");
}

}  // namespace

StubSession serve_stub(wire::LineChannel& channel, const StubOptions& options) {
  StubSession session;
  std::string line;
  while (channel.try_recv_line(line, INT_MAX)) {
    ++session.requests;
    bool stop = false;
    std::string reply;
    try {
      reply = respond(wire::parse_message(line), options, stop);
    } catch (const ProtocolError& e) {
      reply = wire::error_response(e.what());
    }
    if (stop) {
      session.shutdown = true;
      break;
    }
    if (!options.silent) channel.send_line(reply);
  }
  return session;
}

}  // namespace lidattack
