#pragma once

#include <string>

#include "lidattack/wire.hpp"

namespace lidattack {

// Conformance peer for the wire protocol. Any non-empty cloud yields a single
// Car detection (score 0.9) centered on the cloud centroid.
struct StubOptions {
  std::string name = "stub";
  bool corrupt_ids = false;  // answer detect requests with id + 1
  bool silent = false;       // read requests but never answer
};

struct StubSession {
  std::size_t requests = 0;
  bool shutdown = false;  // false when the peer simply hung up
};

// Serves one peer until shutdown or EOF.
StubSession serve_stub(wire::LineChannel& channel, const StubOptions& options);

}  // namespace lidattack
