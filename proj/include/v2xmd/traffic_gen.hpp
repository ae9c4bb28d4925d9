#pragma once

#include <cstdint>
#include <string>

#include "v2xmd/ingestion.hpp"

namespace v2xmd {

enum class Regime { RushHour, Afternoon };

inline std::string to_string(Regime r) { return r == Regime::RushHour ? "rush" : "afternoon"; }

// Synthesizes benign ego + neighbor trajectories: smooth car following with
// bounded acceleration, occasional braking pulses, lane changes, and senders
// drifting in and out of radio range.
struct TrafficConfig {
  uint64_t seed = 1;
  int num_senders = 10;
  double duration = 120.0;    // seconds
  double cam_period = 1.0;    // seconds
  Regime regime = Regime::Afternoon;

  // road model
  int lane_count = 3;
  double lane_width = 3.5;       // meters
  double segment_length = 2000;  // meters

  double comm_range = 300.0;     // meters
  double accel_max = 4.0;        // |a| bound, m/s^2
  double braking_prob = 0.02;    // per cam step
  double lane_change_prob = 0.005;

  // measurement noise on transmitted values (zero disables)
  double pos_noise = 0.5;   // meters
  double spd_noise = 0.2;   // m/s
  double acl_noise = 0.3;   // m/s^2
  double hed_noise = 0.01;  // radians

  void validate() const;
};

TraceFile generate(const TrafficConfig& config);

}  // namespace v2xmd
