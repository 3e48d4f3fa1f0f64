#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <json.hpp>

#include "isot/simulation.hpp"

namespace isot {

/// One interactive session: the batch simulation with the leader script
/// replaced by client commands. Transport-free; the server feeds it lines.
class Session {
 public:
  Session(const Scenario& scenario, const ForceMapper& mapper, std::uint64_t seed);

  /// Applies one client frame and returns the reply: {type:"ack", command}
  /// or {type:"error", code, reason}. Never throws on bad input.
  nlohmann::json handle(const std::string& text);

  /// Runs the control ticks covering `seconds` of simulated time.
  void advance(double seconds);

  /// Snapshot of the latest tick as a state frame.
  nlohmann::json state_frame() const;

  const Simulation& simulation() const { return *sim_; }

  static constexpr double kPalmHold = 0.6;  // s the open-palm flag stays raised

 private:
  void reset();
  nlohmann::json command(const nlohmann::json& frame);

  const Scenario& sc_;
  const ForceMapper& mapper_;
  std::uint64_t seed_;
  std::unique_ptr<Simulation> sim_;
  Vec3 wrist_ = Vec3::Zero();
  double palm_until_ = -1.0;
  double pending_ = 0.0;  // simulated time owed but smaller than a tick
};

}  // namespace isot
