#include "lidattack/external_oracle.hpp"

#include "lidattack/errors.hpp"
#include "lidattack/toy_detector.hpp"

namespace lidattack {

ExternalOracle::ExternalOracle(std::unique_ptr<wire::PeerConnection> peer, int timeout_ms)
    : peer_(std::move(peer)), timeout_ms_(timeout_ms) {}

std::unique_ptr<ExternalOracle> ExternalOracle::open(const std::string& endpoint, int timeout_ms) {
  std::unique_ptr<ExternalOracle> o(new ExternalOracle(wire::PeerConnection::open(endpoint, timeout_ms), timeout_ms));
  auto& ch = o->peer_->channel();
  ch.send_line(wire::hello_request());
  o->info_ = wire::parse_hello_response(ch.recv_line(timeout_ms));
  return o;
}

ExternalOracle::~ExternalOracle() {
  if (!broken_) {
    try {
      peer_->channel().send_line(wire::shutdown_request());
    } catch (const Error&) {
    }
  }
}

std::vector<Detection> ExternalOracle::do_detect(const PointCloud& cloud) {
  std::lock_guard lock(mutex_);
  if (broken_) throw TransportError("oracle connection is unusable after an earlier failure");
  const std::uint64_t id = next_id_++;
  auto& ch = peer_->channel();
  try {
    ch.send_line(wire::detect_request(id, cloud));
    return wire::parse_detections_response(ch.recv_line(timeout_ms_), id);
  } catch (const Error&) {
    // The stream may hold a late or partial reply; nothing after it can be trusted.
    broken_ = true;
    throw;
  }
}

std::unique_ptr<Oracle> open_oracle(const std::string& endpoint, int timeout_ms) {
  if (endpoint.rfind("builtin:", 0) == 0) return make_builtin_oracle(endpoint.substr(8));
  return ExternalOracle::open(endpoint, timeout_ms);
}

}  // namespace lidattack
