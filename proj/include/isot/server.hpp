#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>

#include "isot/scenario.hpp"

namespace isot {

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8765;             // 0 picks a free port
  double frame_rate = 30.0;    // state frames per wall-clock second
  double time_scale = 1.0;     // simulated seconds per wall-clock second
  std::uint64_t seed = 1;
  int max_sessions = 0;        // return after this many sessions; 0 runs until stopped
  std::function<void(int port)> on_listening;
  const std::atomic<bool>* stop = nullptr;
};

/// WebSocket state-stream service, one session at a time. Each client
/// connection is a fresh session; extra clients get a "busy" error frame.
/// Blocks until `stop` is raised or `max_sessions` sessions have ended.
void serve(const Scenario& scenario, const ServeOptions& options);

}  // namespace isot
