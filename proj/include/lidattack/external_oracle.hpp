#pragma once

#include <memory>
#include <mutex>
#include <string>

#include "lidattack/oracle.hpp"
#include "lidattack/wire.hpp"

namespace lidattack {

// Detector on the far side of the line protocol. Requests on one handle are
// serialized; the handshake runs in open().
class ExternalOracle final : public Oracle {
 public:
  // `exec:<command>` or `tcp:<host>:<port>`.
  static std::unique_ptr<ExternalOracle> open(const std::string& endpoint, int timeout_ms = wire::kDefaultTimeoutMs);
  ~ExternalOracle() override;

  const DetectorInfo& info() const override { return info_; }

 protected:
  std::vector<Detection> do_detect(const PointCloud& cloud) override;

 private:
  ExternalOracle(std::unique_ptr<wire::PeerConnection> peer, int timeout_ms);

  std::unique_ptr<wire::PeerConnection> peer_;
  int timeout_ms_;
  DetectorInfo info_;
  std::mutex mutex_;
  std::uint64_t next_id_ = 1;
  bool broken_ = false;
};

// Oracle endpoints:
//   builtin:voxel0.2 | builtin:voxel0.4   in-process toy detectors
//   exec:<shell command>                  child process speaking the protocol on stdio
//   tcp:<host>:<port>                     protocol over a TCP connection
std::unique_ptr<Oracle> open_oracle(const std::string& endpoint, int timeout_ms = wire::kDefaultTimeoutMs);

}  // namespace lidattack
