#include "v2xmd/traffic_gen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "v2xmd/rng.hpp"

namespace v2xmd {

namespace {

struct RegimeParams {
  double speed_mean, speed_std, speed_max;
};

RegimeParams regime_params(Regime r) {
  // rush hour is dense and slow, afternoon free-flowing
  if (r == Regime::RushHour) return {6.0, 2.0, 15.0};
  return {12.0, 3.0, 25.0};
}

struct Vehicle {
  Rng rng;
  double x = 0, y = 0, vx = 0, vy = 0, ax = 0, ay = 0;
  double hed_x = 1, hed_y = 0;
  double target_speed = 0;
  double target_y = 0;
  int brake_steps = 0;       // substeps of active braking pulse left
  double brake_accel = 0;
  double phase = 0;          // cam emission offset within a period
  double silent_until = -1;  // respawn cooldown, absolute time

  explicit Vehicle(uint64_t seed) : rng(seed) {}
};

double sample_speed(Rng& rng, const RegimeParams& p) {
  return std::clamp(rng.normal(p.speed_mean, p.speed_std), 0.0, p.speed_max);
}

void update_heading(Vehicle& v) {
  const double mag = std::hypot(v.vx, v.vy);
  if (mag > 0.1) {
    v.hed_x = v.vx / mag;
    v.hed_y = v.vy / mag;
  }
}

KinematicState report_state(const Vehicle& v, const TrafficConfig& cfg, Rng& rng) {
  KinematicState s;
  s.pos_x = v.x + rng.normal(0, cfg.pos_noise);
  s.pos_y = v.y + rng.normal(0, cfg.pos_noise);
  s.spd_x = v.vx + rng.normal(0, cfg.spd_noise);
  s.spd_y = v.vy + rng.normal(0, cfg.spd_noise);
  s.acl_x = v.ax + rng.normal(0, cfg.acl_noise);
  s.acl_y = v.ay + rng.normal(0, cfg.acl_noise);
  const double rot = rng.normal(0, cfg.hed_noise);
  const double c = std::cos(rot), sn = std::sin(rot);
  s.hed_x = v.hed_x * c - v.hed_y * sn;
  s.hed_y = v.hed_x * sn + v.hed_y * c;
  const double m = std::hypot(s.hed_x, s.hed_y);
  if (m > 1e-9) {
    s.hed_x /= m;
    s.hed_y /= m;
  }
  return s;
}

}  // namespace

void TrafficConfig::validate() const {
  if (num_senders < 1) throw std::invalid_argument("TrafficConfig: num_senders must be >= 1");
  if (cam_period <= 0) throw std::invalid_argument("TrafficConfig: cam_period must be positive");
  if (duration < 15 * cam_period)
    throw std::invalid_argument("TrafficConfig: duration must cover at least 15 cam periods");
  if (lane_count < 1 || lane_width <= 0 || segment_length <= 0 || comm_range <= 0 ||
      accel_max <= 0)
    throw std::invalid_argument("TrafficConfig: road parameters must be positive");
}

TraceFile generate(const TrafficConfig& cfg) {
  cfg.validate();
  const RegimeParams rp = regime_params(cfg.regime);

  constexpr int kSubsteps = 20;  // per cam period
  const double dt = cfg.cam_period / kSubsteps;
  const int total_steps = static_cast<int>(std::llround(cfg.duration / dt));

  // vehicle 0 is the ego
  std::vector<Vehicle> fleet;
  fleet.reserve(cfg.num_senders + 1);
  for (int i = 0; i <= cfg.num_senders; ++i)
    fleet.emplace_back(hash_combine(cfg.seed, 0x76656869ull + i));

  auto lane_y = [&](int lane) { return (lane + 0.5) * cfg.lane_width; };
  auto init_vehicle = [&](Vehicle& v, double x) {
    const int lane = static_cast<int>(v.rng.below(cfg.lane_count));
    v.x = x;
    v.y = lane_y(lane);
    v.target_y = v.y;
    v.target_speed = sample_speed(v.rng, rp);
    v.vx = v.target_speed;
    v.vy = 0;
    v.hed_x = 1;
    v.hed_y = 0;
  };

  Vehicle& ego = fleet[0];
  init_vehicle(ego, 0.0);
  ego.phase = 0.0;
  for (int i = 1; i <= cfg.num_senders; ++i) {
    Vehicle& v = fleet[i];
    init_vehicle(v, v.rng.uniform(-0.7, 0.7) * cfg.comm_range);
    v.phase = std::floor(v.rng.uniform() * kSubsteps) / kSubsteps * cfg.cam_period;
  }

  TraceFile trace;
  const double spawn_gap = 2.5 * kDefaultGapThreshold;  // clean segment break on respawn

  for (int step = 0; step <= total_steps; ++step) {
    const double now = step * dt;
    const bool cam_boundary = step % kSubsteps == 0;

    for (size_t vi = 0; vi < fleet.size(); ++vi) {
      Vehicle& v = fleet[vi];

      if (cam_boundary && now < cfg.duration) {
        if (v.brake_steps == 0 && v.rng.uniform() < cfg.braking_prob) {
          v.brake_steps = static_cast<int>(std::llround(v.rng.uniform(1.0, 2.0) / dt));
          v.brake_accel = -v.rng.uniform(3.0, 4.0);
        }
        if (v.rng.uniform() < cfg.lane_change_prob) {
          const int cur = static_cast<int>(std::clamp(
              std::floor(v.y / cfg.lane_width), 0.0, static_cast<double>(cfg.lane_count - 1)));
          int next = cur + (v.rng.uniform() < 0.5 ? -1 : 1);
          next = std::clamp(next, 0, cfg.lane_count - 1);
          v.target_y = lane_y(next);
        }
      }

      // longitudinal control: relax to target speed, or to a braking pulse
      double ax_cmd;
      if (v.brake_steps > 0) {
        ax_cmd = v.brake_accel;
        --v.brake_steps;
      } else {
        ax_cmd = 0.6 * (v.target_speed - v.vx) + v.rng.normal(0, 0.15);
      }
      ax_cmd = std::clamp(ax_cmd, -cfg.accel_max, cfg.accel_max);
      double vx_new = v.vx + ax_cmd * dt;
      if (vx_new < 0) vx_new = 0;
      const double ax_eff = (vx_new - v.vx) / dt;

      // lateral: critically damped approach to the target lane center
      double ay_cmd = std::clamp(1.2 * (v.target_y - v.y) - 1.8 * v.vy, -cfg.accel_max,
                                 cfg.accel_max);
      // keep the total acceleration inside the bound
      const double amag = std::hypot(ax_eff, ay_cmd);
      if (amag > cfg.accel_max) ay_cmd *= cfg.accel_max / amag;
      const double vy_new = v.vy + ay_cmd * dt;

      v.x += 0.5 * (v.vx + vx_new) * dt;
      v.y += 0.5 * (v.vy + vy_new) * dt;
      v.vx = vx_new;
      v.vy = vy_new;
      v.ax = ax_eff;
      v.ay = ay_cmd;
      update_heading(v);
    }

    // respawn senders that drifted far out of range, after a silent gap
    for (int i = 1; i <= cfg.num_senders; ++i) {
      Vehicle& v = fleet[i];
      const double rel = v.x - ego.x;
      if (std::abs(rel) > cfg.comm_range + 20.0 && v.silent_until < now) {
        v.silent_until = now + spawn_gap + v.rng.uniform(0.0, 5.0);
        const double speed = sample_speed(v.rng, rp);
        // enter from the side it will drift away from slowest
        const double side = speed >= ego.target_speed ? -0.85 : 0.85;
        const int lane = static_cast<int>(v.rng.below(cfg.lane_count));
        v.x = ego.x + side * cfg.comm_range;
        v.y = lane_y(lane);
        v.target_y = v.y;
        v.target_speed = speed;
        v.vx = speed;
        v.vy = 0;
        v.brake_steps = 0;
        update_heading(v);
      }
    }

    // CAM emissions on this substep
    if (now < cfg.duration) {
      const int period_sub = step % kSubsteps;
      if (period_sub == 0) {
        CamRecord r;
        r.msg_type = MsgType::Ego;
        r.recv_time = now;
        r.send_time = now;
        r.sender_id = kEgoSenderId;
        // the ego knows its own state exactly
        r.state = KinematicState{ego.x, ego.y, ego.vx, ego.vy, ego.ax, ego.ay,
                                 ego.hed_x, ego.hed_y};
        trace.records.push_back(std::move(r));
      }
      for (int i = 1; i <= cfg.num_senders; ++i) {
        Vehicle& v = fleet[i];
        const int phase_sub = static_cast<int>(std::llround(v.phase / dt)) % kSubsteps;
        if (period_sub != phase_sub) continue;
        if (now < v.silent_until) continue;
        if (std::abs(v.x - ego.x) > cfg.comm_range) continue;
        CamRecord r;
        r.msg_type = MsgType::Received;
        r.recv_time = now;
        r.send_time = std::max(0.0, now - 0.02);
        r.sender_id = "s" + std::to_string(i);
        r.state = report_state(v, cfg, v.rng);
        trace.records.push_back(std::move(r));
      }
    }
  }

  std::stable_sort(trace.records.begin(), trace.records.end(),
                   [](const CamRecord& a, const CamRecord& b) {
                     if (a.recv_time != b.recv_time) return a.recv_time < b.recv_time;
                     if (a.msg_type != b.msg_type) return a.msg_type == MsgType::Ego;
                     return a.sender_id < b.sender_id;
                   });
  return trace;
}

}  // namespace v2xmd
