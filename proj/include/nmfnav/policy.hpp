#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <ostream>
#include <vector>

#include "json.hpp"

#include "nmfnav/dataset.hpp"
#include "nmfnav/error.hpp"
#include "nmfnav/nets.hpp"
#include "nmfnav/rng.hpp"
#include "nmfnav/sensors.hpp"
#include "nmfnav/train.hpp"
#include "nmfnav/world.hpp"

namespace nmfnav {

inline constexpr double kMaxLinear = 0.5;   // m/s
inline constexpr double kMaxAngular = 1.5;  // rad/s
inline constexpr double kControlDt = 0.1;   // s

// ---------------------------------------------------------------- commands

inline DriveCommand clamp_command(const DriveCommand& c) {
  if (!std::isfinite(c.linear) || !std::isfinite(c.angular)) throw NumericError("clamp_command: non-finite command");
  return {std::clamp(c.linear, -kMaxLinear, kMaxLinear), std::clamp(c.angular, -kMaxAngular, kMaxAngular)};
}

/// Network output to command: constant forward speed, angular = clamp(s) * max.
inline DriveCommand steering_command(double s) {
  if (!std::isfinite(s)) throw NumericError("non-finite steering output");
  return clamp_command({kMaxLinear, std::clamp(s, -1.0, 1.0) * kMaxAngular});
}

/// Angular command normalized into the [-1, 1] steering label.
inline float command_steering(const DriveCommand& c) {
  return static_cast<float>(std::clamp(c.angular / kMaxAngular, -1.0, 1.0));
}

// ---------------------------------------------------------------- models

/// Maps one observation to a raw steering value (not yet clamped).
using SteeringModel = std::function<double(const SensorTriple&)>;

/// Eval-mode network inference on a single observation.
inline SteeringModel network_model(std::shared_ptr<const ModelWeights> weights, const NetConfig& cfg) {
  if (!weights) throw Error("network_model: no weights");
  return [weights, cfg](const SensorTriple& t) {
    Dataset one;
    one.config = cfg;
    one.samples.push_back(make_sample(t, cfg));
    const std::size_t idx = 0;
    const Batch b = make_batch(one, std::span<const std::size_t>(&idx, 1), weights->arch());
    Tape tape(false);
    return static_cast<double>(forward(tape, *weights, b, RunOptions{}).output[0]);
  };
}

// ---------------------------------------------------------------- scripted driver

/// Teleop stand-in: steer toward the most open heading (preferring straight
/// ahead) and away from anything inside the repulsion range. Reads only the
/// laser, so its labels are a function of the observation.
struct DriverConfig {
  double horizon = 6.0;        // free distance cap, m
  double margin = 0.25;        // lateral clearance beyond the robot radius
  double forward_bias = 1.0;   // m of free distance traded per rad of turn
  double max_turn = 75.0 * std::numbers::pi / 180.0;
  double heading_gain = 1.5;   // rad/s per rad of heading error
  double repel_range = 1.0;
  double repel_gain = 4.0;
  double blocked = 1.0;        // free distance below which the driver turns hard
};

inline double scripted_steering(const LaserScan& scan, const DriverConfig& cfg = {}, double radius = kRobotRadius) {
  const std::size_t n = scan.beams();
  if (n == 0) throw ShapeError("scripted_steering: empty scan");
  std::vector<double> angle(n), range(n);
  for (std::size_t i = 0; i < n; ++i) {
    angle[i] = std::numbers::pi / 2 - static_cast<double>(i) * scan.increment;
    range[i] = LaserScan::is_miss(scan.ranges[i]) ? scan.max_range : static_cast<double>(scan.ranges[i]);
  }
  const double half_width = radius + cfg.margin;
  const auto free_distance = [&](double a) {
    double d = cfg.horizon;
    for (std::size_t j = 0; j < n; ++j) {
      const double delta = angle[j] - a;
      const double along = range[j] * std::cos(delta);
      if (along <= 0) continue;
      if (std::abs(range[j] * std::sin(delta)) < half_width) d = std::min(d, along);
    }
    return d;
  };

  double best_a = 0, best_score = -std::numeric_limits<double>::infinity(), best_free = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(angle[i]) > cfg.max_turn + 1e-9) continue;
    const double d = free_distance(angle[i]);
    const double score = d - cfg.forward_bias * std::abs(angle[i]);
    if (score > best_score) {
      best_score = score;
      best_a = angle[i];
      best_free = d;
    }
  }

  double steer;
  if (best_free < cfg.blocked) {
    double left = 0, right = 0;
    for (std::size_t i = 0; i < n; ++i) (angle[i] > 0 ? left : right) += range[i];
    steer = left >= right ? 1.0 : -1.0;
  } else {
    steer = cfg.heading_gain * best_a / kMaxAngular;
  }

  double repel = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (range[i] >= cfg.repel_range) continue;
    const double w = (cfg.repel_range - range[i]) / cfg.repel_range;
    repel -= w * w * std::sin(angle[i]) * std::cos(angle[i]) * scan.increment;
  }
  steer += cfg.repel_gain * repel;
  return std::clamp(steer, -1.0, 1.0);
}

inline SteeringModel driver_model(const DriverConfig& cfg = {}) {
  return [cfg](const SensorTriple& t) { return scripted_steering(t.scan, cfg); };
}

// ---------------------------------------------------------------- closed loop

struct PolicyOutput {
  DriveCommand cmd;
  double raw = 0;
  SensorTriple obs;  // steering left at 0: no label at run time
};

/// Acquire all modalities at one tick, infer, map to a clamped command.
inline PolicyOutput policy_step(const SteeringModel& model, const WorldModel& world, const RobotState& state,
                                std::uint64_t tick, const SensorConfig& sensors = {}) {
  if (state.collided) throw Error("policy_step: robot has collided");
  PolicyOutput out;
  out.obs = capture(world, state.pose, tick, sensors);
  out.raw = model(out.obs);
  out.cmd = steering_command(out.raw);
  return out;
}

enum class Termination { collision, step_limit };

inline const char* to_string(Termination t) { return t == Termination::collision ? "collision" : "step-limit"; }

struct EpisodeConfig {
  std::size_t max_steps = 600;
  double dt = kControlDt;
  SensorConfig sensors;

  void validate() const {
    if (max_steps < 1) throw RangeError("run_episode: max_steps must be >= 1");
    if (!(dt > 0 && dt <= 0.5)) throw RangeError("run_episode: dt must be in (0, 0.5]");
  }
};

struct EpisodeStep {
  std::uint64_t tick = 0;
  Pose pose;  // before the command
  DriveCommand cmd;
  double raw = 0;
  bool collided = false;  // after the command
};

struct EpisodeResult {
  double distance = 0;
  std::size_t steps = 0;
  Termination terminated_by = Termination::step_limit;
  std::vector<Pose> trace;  // steps + 1 poses
  std::vector<EpisodeStep> log;
  EnvType env = EnvType::normal_city;
  std::uint64_t seed = 0;

  nlohmann::json summary_json() const {
    return {{"type", "episode"}, {"env", to_string(env)}, {"seed", seed},          {"distance", distance},
            {"steps", steps},    {"terminated_by", to_string(terminated_by)}};
  }

  /// One JSON line per step, then the summary line.
  void write_ndjson(std::ostream& os) const {
    for (const auto& s : log) {
      os << nlohmann::json{{"tick", s.tick},
                           {"pose", {s.pose.x, s.pose.y, s.pose.theta}},
                           {"cmd", {s.cmd.linear, s.cmd.angular}},
                           {"raw", s.raw},
                           {"collided", s.collided}}
                .dump()
         << '\n';
    }
    os << summary_json().dump() << '\n';
  }
};

inline double polyline_length(const std::vector<Pose>& trace) {
  double d = 0;
  for (std::size_t k = 1; k < trace.size(); ++k) d += std::hypot(trace[k].x - trace[k - 1].x, trace[k].y - trace[k - 1].y);
  return d;
}

inline EpisodeResult run_episode(const SteeringModel& model, const WorldModel& world, const Pose& start,
                                 const EpisodeConfig& cfg = {}) {
  cfg.validate();
  EpisodeResult r;
  r.env = world.env;
  r.seed = world.seed;
  RobotState state;
  state.pose = start;
  r.trace.push_back(start);
  for (std::size_t k = 0; k < cfg.max_steps; ++k) {
    const PolicyOutput out = policy_step(model, world, state, k, cfg.sensors);
    const Pose before = state.pose;
    state = step_robot(state, out.cmd, cfg.dt, world);
    r.trace.push_back(state.pose);
    r.distance += std::hypot(state.pose.x - before.x, state.pose.y - before.y);
    r.log.push_back({k, before, out.cmd, out.raw, state.collided});
    ++r.steps;
    if (state.collided) {
      r.terminated_by = Termination::collision;
      break;
    }
  }
  return r;
}

inline EpisodeResult run_episode(const SteeringModel& model, EnvType env, std::uint64_t seed,
                                 const EpisodeConfig& cfg = {}) {
  const WorldModel w = generate_world(env, seed);
  return run_episode(model, w, w.spawn, cfg);
}

// ---------------------------------------------------------------- data collection

struct CollectConfig {
  std::vector<EnvType> envs{EnvType::normal_city};
  std::size_t records = 1000;
  double dr_fraction = 0.45;
  std::uint64_t seed = 1;
  std::size_t episode_steps = 100;
  double noise = 0.3;         // std of the executed-steering perturbation
  double noise_decay = 0.9;   // per-step correlation of the perturbation
  double area_scale = 0.1;
  SensorConfig sensors;
  DriverConfig driver;

  void validate() const {
    if (envs.empty()) throw RangeError("collect: no environments");
    if (records < 1) throw RangeError("collect: records must be >= 1");
    if (!(dr_fraction >= 0 && dr_fraction <= 1)) throw RangeError("collect: dr fraction must be in [0,1]");
    if (episode_steps < 1) throw RangeError("collect: episode length must be >= 1");
  }
};

struct CollectSummary {
  std::size_t records = 0;
  std::size_t episodes = 0;
  std::size_t collisions = 0;
  std::size_t dr_episodes = 0;
  std::map<EnvType, std::size_t> per_env;

  nlohmann::json to_json() const {
    nlohmann::json env = nlohmann::json::object();
    for (const auto& [e, n] : per_env) env[to_string(e)] = n;
    return {{"records", records}, {"episodes", episodes}, {"collisions", collisions},
            {"dr_episodes", dr_episodes}, {"per_env", env}};
  }
};

/// A collision-free pose at least 0.6 m from everything, facing roughly the
/// most open direction.
inline Pose random_start(const WorldModel& w, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Pose p{rng.uniform(0.6, w.width - 0.6), rng.uniform(0.6, w.height - 0.6), 0.0};
    if (check_collision(w, p, 0.6)) continue;
    double best = -1;
    for (int k = 0; k < 36; ++k) {
      const double h = normalize_angle(k * std::numbers::pi / 18);
      const double d = raycast(w, p.x, p.y, h, 16.0).distance;
      if (std::min(d, 16.0) > best) {
        best = std::min(d, 16.0);
        p.theta = h;
      }
    }
    p.theta = normalize_angle(p.theta + rng.uniform(-0.5, 0.5));
    return p;
  }
  return w.spawn;
}

/// Scripted teleoperation. Episodes cycle through `envs`; within each env the
/// domain-randomized share tracks dr_fraction exactly. Labels are the
/// driver's clean steering; the executed command carries a correlated
/// perturbation so the data also covers recovery from drift.
inline CollectSummary collect(const CollectConfig& cfg, const std::function<void(const SensorTriple&)>& sink) {
  cfg.validate();
  CollectSummary s;
  std::map<EnvType, std::size_t> env_episodes;
  std::uint64_t tick = 0;
  for (std::size_t e = 0; s.records < cfg.records; ++e) {
    const EnvType env = cfg.envs[e % cfg.envs.size()];
    const std::uint64_t world_seed = mix_seed(cfg.seed, e);
    WorldModel w = generate_world(env, world_seed, cfg.area_scale);
    const std::size_t j = env_episodes[env]++;
    // Rounded schedule: after k episodes of an env, round(k * f) were randomized.
    const bool dr = std::floor(static_cast<double>(j + 1) * cfg.dr_fraction + 0.5) >
                    std::floor(static_cast<double>(j) * cfg.dr_fraction + 0.5);
    if (dr) {
      w = randomize_appearance(w, mix_seed(world_seed, 0xd7));
      ++s.dr_episodes;
    }
    Rng rng(mix_seed(world_seed, 0x57a7));
    RobotState state;
    state.pose = random_start(w, rng);
    double perturb = 0;
    ++s.episodes;
    for (std::size_t k = 0; k < cfg.episode_steps && s.records < cfg.records; ++k) {
      SensorTriple t = capture(w, state.pose, tick++, cfg.sensors);
      const double label = scripted_steering(t.scan, cfg.driver);
      t.steering = static_cast<float>(label);
      sink(t);
      ++s.records;
      ++s.per_env[env];
      perturb = cfg.noise_decay * perturb + std::sqrt(1 - cfg.noise_decay * cfg.noise_decay) * cfg.noise * rng.normal();
      state = step_robot(state, steering_command(label + perturb), kControlDt, w);
      if (state.collided) {
        ++s.collisions;
        break;
      }
    }
  }
  return s;
}

/// Writes a collected dataset to `path` (overwriting).
inline CollectSummary collect_to_file(const CollectConfig& cfg, const std::filesystem::path& path) {
  DatasetWriter writer(path, DatasetHeader::from(cfg.sensors));
  return collect(cfg, [&](const SensorTriple& t) { writer.append(t); });
}

}  // namespace nmfnav
