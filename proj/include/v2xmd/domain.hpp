#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace v2xmd {

inline constexpr int kFeatureCount = 8;
inline constexpr const char* kEgoSenderId = "ego";

// Column order is fixed across the whole pipeline.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "dx", "dy", "dspd_x", "dspd_y", "dacl_x", "dacl_y", "dhed_x", "dhed_y"};

struct KinematicState {
  double pos_x = 0, pos_y = 0;   // meters
  double spd_x = 0, spd_y = 0;   // m/s
  double acl_x = 0, acl_y = 0;   // m/s^2
  double hed_x = 0, hed_y = 0;   // heading unit vector, (0,0) if unknown

  bool finite() const {
    for (double v : {pos_x, pos_y, spd_x, spd_y, acl_x, acl_y, hed_x, hed_y})
      if (!std::isfinite(v)) return false;
    return true;
  }

  // unit length within 1e-3, or both zero when heading is unknown
  bool heading_valid() const {
    const double m2 = hed_x * hed_x + hed_y * hed_y;
    return m2 == 0.0 || std::abs(m2 - 1.0) <= 1e-3;
  }

  double component(int f) const {
    switch (f) {
      case 0: return pos_x;
      case 1: return pos_y;
      case 2: return spd_x;
      case 3: return spd_y;
      case 4: return acl_x;
      case 5: return acl_y;
      case 6: return hed_x;
      case 7: return hed_y;
    }
    throw std::out_of_range("KinematicState::component");
  }
};

enum class MsgType { Ego, Received };  // VeReMi++ type 2 / type 3

enum class AttackLabel : int {
  A0 = 0,   // benign
  A1, A2, A3, A4,       // position falsification
  A5, A6, A7, A8,       // speed falsification
  A9, A10,              // behavioral
  A11, A12,             // replay / delay
  A13, A14, A15,        // DoS
  A16, A17, A18, A19,   // Sybil
};

inline constexpr int kAttackLabelCount = 20;

inline std::string to_string(AttackLabel l) {
  return "A" + std::to_string(static_cast<int>(l));
}

inline std::optional<AttackLabel> attack_label_from_string(std::string_view s) {
  if (s.size() < 2 || s.size() > 3 || s[0] != 'A') return std::nullopt;
  int v = 0;
  for (size_t i = 1; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
    v = v * 10 + (s[i] - '0');
  }
  if (v < 0 || v >= kAttackLabelCount) return std::nullopt;
  if (s.size() == 3 && s[1] == '0') return std::nullopt;  // no "A03"
  return static_cast<AttackLabel>(v);
}

inline std::string_view attack_label_name(AttackLabel l) {
  static constexpr std::array<std::string_view, kAttackLabelCount> names = {
      "Benign",           "ConstPosition",    "ConstPosOffset",
      "RandomPosition",   "RandomPosOffset",  "ConstSpeed",
      "ConstSpeedOffset", "RandomSpeed",      "RandomSpeedOffset",
      "EventualStop",     "Disruptive",       "DataReplay",
      "DelayedMessages",  "DoS",              "DoSRandom",
      "DoSDisruptive",    "GridSybil",        "DataReplaySybil",
      "DoSRandomSybil",   "DoSDisruptiveSybil"};
  return names[static_cast<int>(l)];
}

struct CamRecord {
  MsgType msg_type = MsgType::Received;
  double recv_time = 0;  // seconds
  double send_time = 0;  // seconds
  std::string sender_id;
  KinematicState state;
  AttackLabel label = AttackLabel::A0;
};

struct RelativeFeatureVector {
  std::array<double, kFeatureCount> d{};  // CAM field minus ego field
  double timestamp = 0;                   // the CAM recv_time

  bool finite() const {
    for (double v : d)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// One gap-split segment: strictly increasing timestamps, consecutive gaps
// within the configured threshold.
using Segment = std::vector<RelativeFeatureVector>;

struct SenderSequence {
  std::string sender_id;
  AttackLabel label = AttackLabel::A0;
  std::vector<Segment> segments;

  size_t total_observations() const {
    size_t n = 0;
    for (const auto& s : segments) n += s.size();
    return n;
  }
};

}  // namespace v2xmd
