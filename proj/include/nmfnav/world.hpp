#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nmfnav/error.hpp"
#include "nmfnav/rng.hpp"

// 2.5D obstacle worlds: axis-aligned boxes and discs on a ground plane inside
// a rectangular area [0, width] x [0, height]. Angles are counter-clockwise
// from +x; headings live in (-pi, pi].
namespace nmfnav {

enum class EnvType : std::uint8_t { normal_city = 0, collapsed_house = 1, collapsed_city = 2, cave = 3 };

inline constexpr std::array<EnvType, 4> kAllEnvs{EnvType::normal_city, EnvType::collapsed_house,
                                                 EnvType::collapsed_city, EnvType::cave};
inline constexpr std::array<EnvType, 3> kComplexEnvs{EnvType::collapsed_house, EnvType::collapsed_city, EnvType::cave};

inline std::string to_string(EnvType e) {
  switch (e) {
    case EnvType::normal_city: return "normal_city";
    case EnvType::collapsed_house: return "collapsed_house";
    case EnvType::collapsed_city: return "collapsed_city";
    case EnvType::cave: return "cave";
  }
  return "unknown";
}

inline EnvType parse_env(std::string_view s) {
  for (EnvType e : kAllEnvs)
    if (to_string(e) == s) return e;
  throw RangeError("unknown environment type '" + std::string(s) + "'");
}

inline EnvType env_from_index(std::uint8_t v) {
  if (v > 3) throw RangeError("environment index " + std::to_string(v) + " out of range");
  return static_cast<EnvType>(v);
}

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Color&) const = default;
};

enum class ObjectClass : std::uint8_t { wall, building, rubble, debris, furniture, rock, pole, vehicle };

inline std::string to_string(ObjectClass c) {
  static constexpr std::array<const char*, 8> names{"wall",      "building", "rubble", "debris",
                                                    "furniture", "rock",     "pole",   "vehicle"};
  return names[static_cast<std::size_t>(c)];
}

inline Color class_color(ObjectClass c) {
  static constexpr std::array<Color, 8> palette{{{150, 150, 150},
                                                 {170, 90, 60},
                                                 {120, 110, 100},
                                                 {140, 100, 50},
                                                 {160, 120, 70},
                                                 {100, 90, 80},
                                                 {60, 60, 70},
                                                 {40, 80, 160}}};
  return palette[static_cast<std::size_t>(c)];
}

enum class Footprint : std::uint8_t { box, disc };

struct Obstacle {
  Footprint shape = Footprint::box;
  double cx = 0, cy = 0;
  double hx = 0, hy = 0;  // box half extents
  double radius = 0;      // disc radius
  double height = 1.0;
  Color color;
  ObjectClass cls = ObjectClass::debris;

  static Obstacle box(double cx, double cy, double hx, double hy, double height, ObjectClass cls) {
    return Obstacle{Footprint::box, cx, cy, hx, hy, 0.0, height, class_color(cls), cls};
  }
  static Obstacle disc(double cx, double cy, double r, double height, ObjectClass cls) {
    return Obstacle{Footprint::disc, cx, cy, 0.0, 0.0, r, height, class_color(cls), cls};
  }
  bool same_geometry(const Obstacle& o) const {
    return shape == o.shape && cx == o.cx && cy == o.cy && hx == o.hx && hy == o.hy && radius == o.radius &&
           height == o.height && cls == o.cls;
  }
};

struct Pose {
  double x = 0, y = 0, theta = 0;
  bool operator==(const Pose&) const = default;
};

inline double normalize_angle(double a) {
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

struct WorldModel {
  double width = 10.0, height = 10.0;
  std::vector<Obstacle> obstacles;
  Color ground{90, 85, 80};
  Color ceiling{150, 180, 210};
  double light = 1.0;
  EnvType env = EnvType::normal_city;
  std::uint64_t seed = 0;
  std::uint64_t dr_seed = 0;
  bool randomized = false;
  double area_scale = 0.1;
  Pose spawn;

  bool in_bounds(double x, double y) const { return x >= 0 && x <= width && y >= 0 && y <= height; }
};

/// Obstacles other than walls, i.e. the objects the density targets count.
inline std::size_t object_count(const WorldModel& w) {
  return static_cast<std::size_t>(
      std::count_if(w.obstacles.begin(), w.obstacles.end(), [](const Obstacle& o) { return o.cls != ObjectClass::wall; }));
}

// ---------------------------------------------------------------- geometry

/// Distance from a point to an obstacle footprint; 0 inside.
inline double footprint_distance(const Obstacle& o, double x, double y) {
  if (o.shape == Footprint::disc) return std::max(0.0, std::hypot(x - o.cx, y - o.cy) - o.radius);
  const double dx = std::max(std::abs(x - o.cx) - o.hx, 0.0);
  const double dy = std::max(std::abs(y - o.cy) - o.hy, 0.0);
  return std::hypot(dx, dy);
}

/// True iff a disc of `radius` at (x, y) strictly overlaps an obstacle or leaves the bounds.
/// Tangency is not a collision.
inline bool check_collision(const WorldModel& w, const Pose& p, double radius) {
  if (!(radius > 0)) throw RangeError("check_collision: radius must be > 0");
  if (p.x - radius < 0 || p.x + radius > w.width || p.y - radius < 0 || p.y + radius > w.height) return true;
  for (const auto& o : w.obstacles)
    if (footprint_distance(o, p.x, p.y) < radius) return true;
  return false;
}

/// Smallest distance from (x, y) to any obstacle footprint; +inf with no obstacles.
inline double clearance(const WorldModel& w, double x, double y) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : w.obstacles) best = std::min(best, footprint_distance(o, x, y));
  return best;
}

struct RayHit {
  double distance = std::numeric_limits<double>::infinity();
  int obstacle = -1;
  bool hit() const { return obstacle >= 0; }
};

/// Nearest intersection of the ray from (ox, oy) at `angle` with any obstacle
/// within `max_range`. Bounds are not obstacles.
inline RayHit raycast(const WorldModel& w, double ox, double oy, double angle, double max_range) {
  const double dx = std::cos(angle), dy = std::sin(angle);
  RayHit best;
  for (std::size_t k = 0; k < w.obstacles.size(); ++k) {
    const Obstacle& o = w.obstacles[k];
    double t = std::numeric_limits<double>::infinity();
    if (o.shape == Footprint::box) {
      double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
      bool miss = false;
      const double orig[2] = {ox - o.cx, oy - o.cy}, dir[2] = {dx, dy}, half[2] = {o.hx, o.hy};
      for (int a = 0; a < 2 && !miss; ++a) {
        if (std::abs(dir[a]) < 1e-15) {
          if (std::abs(orig[a]) > half[a]) miss = true;
          continue;
        }
        double t1 = (-half[a] - orig[a]) / dir[a], t2 = (half[a] - orig[a]) / dir[a];
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
      }
      if (!miss && tmin <= tmax && tmin > 0) t = tmin;
    } else {
      const double fx = ox - o.cx, fy = oy - o.cy;
      const double b = fx * dx + fy * dy;
      const double c = fx * fx + fy * fy - o.radius * o.radius;
      const double disc = b * b - c;
      if (c > 0 && disc >= 0) {
        const double t0 = -b - std::sqrt(disc);
        if (t0 > 0) t = t0;
      }
    }
    if (t <= max_range && t < best.distance) best = RayHit{t, static_cast<int>(k)};
  }
  return best;
}

// ---------------------------------------------------------------- generation

namespace detail {

inline bool overlaps_any(const WorldModel& w, const Obstacle& cand, double gap) {
  for (const auto& o : w.obstacles) {
    if (cand.shape == Footprint::disc) {
      if (footprint_distance(o, cand.cx, cand.cy) < cand.radius + gap) return true;
    } else if (o.shape == Footprint::disc) {
      if (footprint_distance(cand, o.cx, o.cy) < o.radius + gap) return true;
    } else if (std::abs(cand.cx - o.cx) < cand.hx + o.hx + gap && std::abs(cand.cy - o.cy) < cand.hy + o.hy + gap) {
      return true;
    }
  }
  return false;
}

inline void add_perimeter(WorldModel& w, double thickness, double height) {
  const double t = thickness / 2;
  w.obstacles.push_back(Obstacle::box(w.width / 2, t, w.width / 2, t, height, ObjectClass::wall));
  w.obstacles.push_back(Obstacle::box(w.width / 2, w.height - t, w.width / 2, t, height, ObjectClass::wall));
  w.obstacles.push_back(Obstacle::box(t, w.height / 2, t, w.height / 2 - thickness, height, ObjectClass::wall));
  w.obstacles.push_back(Obstacle::box(w.width - t, w.height / 2, t, w.height / 2 - thickness, height, ObjectClass::wall));
}

/// Picks the heading (of 72 candidates) with the longest clear straight run.
inline double open_heading(const WorldModel& w, double x, double y) {
  double best_h = 0, best = -1;
  for (int k = 0; k < 72; ++k) {
    const double h = normalize_angle(k * std::numbers::pi / 36);
    double run = std::numeric_limits<double>::infinity();
    for (double off : {-0.3, 0.0, 0.3}) run = std::min(run, raycast(w, x, y, h + off, 16.0).distance);
    run = std::min(run, 16.0);
    if (run > best) {
      best = run;
      best_h = h;
    }
  }
  return best_h;
}

inline std::size_t density_count(double per_m2, double area, Rng& rng) {
  const double target = per_m2 * area;
  const double jitter = std::round(0.15 * target);
  const double n = std::round(target) + std::round(rng.uniform(-jitter, jitter));
  return static_cast<std::size_t>(std::max(1.0, n));
}

inline bool place(WorldModel& w, Rng& rng, const std::function<Obstacle(Rng&)>& make, double spawn_clear, double gap,
                  double margin) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Obstacle o = make(rng);
    const double ex = o.shape == Footprint::disc ? o.radius : o.hx;
    const double ey = o.shape == Footprint::disc ? o.radius : o.hy;
    o.cx = rng.uniform(margin + ex, w.width - margin - ex);
    o.cy = rng.uniform(margin + ey, w.height - margin - ey);
    if (footprint_distance(o, w.spawn.x, w.spawn.y) < spawn_clear) continue;
    if (overlaps_any(w, o, gap)) continue;
    w.obstacles.push_back(o);
    return true;
  }
  return false;
}

inline void build_normal_city(WorldModel& w, Rng& rng) {
  w.width = 8.0;
  w.height = std::max(12.0, 400.0 * w.area_scale);
  w.light = rng.uniform(0.85, 1.0);
  w.ground = {80, 80, 85};
  w.ceiling = {140, 185, 230};
  w.obstacles.push_back(Obstacle::box(w.width / 2, 0.1, w.width / 2, 0.1, 3.0, ObjectClass::wall));
  w.obstacles.push_back(Obstacle::box(w.width / 2, w.height - 0.1, w.width / 2, 0.1, 3.0, ObjectClass::wall));
  for (int side = 0; side < 2; ++side) {
    double y = 0.2;
    while (y < w.height - 0.2) {
      const double len = std::min(rng.uniform(3.0, 8.0), w.height - 0.2 - y);
      const double depth = rng.uniform(1.2, 1.8);
      const double cx = side == 0 ? depth / 2 : w.width - depth / 2;
      w.obstacles.push_back(Obstacle::box(cx, y + len / 2, depth / 2, len / 2, rng.uniform(3.0, 10.0), ObjectClass::building));
      y += len;
    }
  }
  w.spawn = Pose{w.width / 2 + rng.uniform(-0.4, 0.4), 1.5, std::numbers::pi / 2};
  const std::size_t poles = static_cast<std::size_t>(std::round(w.height / 8.0));
  for (std::size_t k = 0; k < poles; ++k) {
    const double x = rng.bernoulli(0.5) ? 2.2 : w.width - 2.2;
    const double y = rng.uniform(4.0, w.height - 1.0);
    Obstacle pole = Obstacle::disc(x, y, 0.1, 4.0, ObjectClass::pole);
    if (!overlaps_any(w, pole, 0.3)) w.obstacles.push_back(pole);
  }
}

inline bool build_scatter(WorldModel& w, Rng& rng, double per_m2, double full_area, double aspect) {
  const double area = full_area * w.area_scale;
  w.width = std::sqrt(area * aspect);
  w.height = area / w.width;
  add_perimeter(w, 0.2, 2.5);
  w.spawn = Pose{rng.uniform(1.3, w.width - 1.3), rng.uniform(1.3, w.height - 1.3), 0.0};
  const std::size_t n = density_count(per_m2, area, rng);
  const bool house = w.env == EnvType::collapsed_house;
  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform();
    std::function<Obstacle(Rng&)> make;
    if (u < 0.45) {
      // Small floor debris: 0.1 to 0.4 m footprints.
      make = [](Rng& r) {
        if (r.bernoulli(0.5)) return Obstacle::disc(0, 0, r.uniform(0.05, 0.2), r.uniform(0.1, 0.3), ObjectClass::debris);
        return Obstacle::box(0, 0, r.uniform(0.05, 0.2), r.uniform(0.05, 0.2), r.uniform(0.1, 0.3), ObjectClass::debris);
      };
    } else if (house) {
      make = [](Rng& r) {
        return Obstacle::box(0, 0, r.uniform(0.2, 0.5), r.uniform(0.2, 0.5), r.uniform(0.4, 1.0), ObjectClass::furniture);
      };
    } else if (u < 0.85) {
      make = [](Rng& r) {
        return Obstacle::box(0, 0, r.uniform(0.3, 1.2), r.uniform(0.3, 1.2), r.uniform(0.5, 3.0), ObjectClass::rubble);
      };
    } else if (u < 0.93) {
      make = [](Rng& r) {
        const bool along_x = r.bernoulli(0.5);
        return Obstacle::box(0, 0, along_x ? 1.0 : 0.45, along_x ? 0.45 : 1.0, 1.5, ObjectClass::vehicle);
      };
    } else {
      make = [](Rng&) { return Obstacle::disc(0, 0, 0.1, 4.0, ObjectClass::pole); };
    }
    if (!place(w, rng, make, 1.0, 0.1, 0.2)) return false;
  }
  return true;
}

inline bool build_cave(WorldModel& w, Rng& rng) {
  const double area = 4000.0 * w.area_scale;
  const int n = std::max(8, static_cast<int>(std::round(std::sqrt(area))));
  w.width = w.height = n;
  w.light = rng.uniform(0.15, 0.4);
  w.ground = {70, 60, 50};
  w.ceiling = {50, 45, 40};
  std::vector<std::uint8_t> open(static_cast<std::size_t>(n * n), 0);
  const auto carve = [&](int i, int j, int size) {
    for (int a = 0; a < size; ++a)
      for (int b = 0; b < size; ++b) {
        const int ii = std::clamp(i + a, 1, n - 2), jj = std::clamp(j + b, 1, n - 2);
        open[static_cast<std::size_t>(jj * n + ii)] = 1;
      }
  };
  int ci = n / 2 - 2, cj = n / 2 - 2;
  carve(ci, cj, 4);  // spawn chamber
  w.spawn = Pose{ci + 2.0, cj + 2.0, 0.0};
  int dir = static_cast<int>(rng.below(4));
  static constexpr int di[4] = {1, 0, -1, 0}, dj[4] = {0, 1, 0, -1};
  const std::size_t target = static_cast<std::size_t>(0.32 * n * n);
  for (int step = 0; step < 20000 && static_cast<std::size_t>(std::count(open.begin(), open.end(), 1)) < target; ++step) {
    if (rng.bernoulli(0.2)) dir = (dir + (rng.bernoulli(0.5) ? 1 : 3)) % 4;
    const int ni = ci + di[dir], nj = cj + dj[dir];
    if (ni < 1 || nj < 1 || ni > n - 3 || nj > n - 3) {
      dir = (dir + 2) % 4;
      continue;
    }
    ci = ni;
    cj = nj;
    carve(ci, cj, 2);
  }
  // Remaining rock cells become obstacles, merged into horizontal runs.
  for (int j = 0; j < n; ++j) {
    int i = 0;
    while (i < n) {
      if (open[static_cast<std::size_t>(j * n + i)]) {
        ++i;
        continue;
      }
      int end = i;
      while (end < n && !open[static_cast<std::size_t>(j * n + end)]) ++end;
      w.obstacles.push_back(Obstacle::box((i + end) / 2.0, j + 0.5, (end - i) / 2.0, 0.5, 2.5, ObjectClass::wall));
      i = end;
    }
  }
  const std::size_t rocks = density_count(60.0 / 4000.0, area, rng);
  const auto make = [](Rng& r) { return Obstacle::disc(0, 0, r.uniform(0.1, 0.25), r.uniform(0.2, 0.8), ObjectClass::rock); };
  for (std::size_t k = 0; k < rocks; ++k)
    if (!place(w, rng, make, 1.0, 0.3, 0.0)) return false;
  return true;
}

}  // namespace detail

inline constexpr double kRobotRadius = 0.2;

/// True when a corridor at least two robot diameters wide connects the spawn
/// point to somewhere `reach` meters away.
inline bool traversable(const WorldModel& w, double reach, double robot_radius = kRobotRadius) {
  const double cell = 0.1;
  const int nx = static_cast<int>(w.width / cell), ny = static_cast<int>(w.height / cell);
  const double need = 2.0 * robot_radius;  // half of a 2x-diameter corridor
  std::vector<std::uint8_t> state(static_cast<std::size_t>(nx * ny), 0);  // 0 unknown, 1 free, 2 blocked, 3 seen
  const auto free = [&](int i, int j) {
    auto& s = state[static_cast<std::size_t>(j * nx + i)];
    if (s == 0) {
      const double x = (i + 0.5) * cell, y = (j + 0.5) * cell;
      s = check_collision(w, Pose{x, y, 0}, need) ? 2 : 1;
    }
    return s == 1;
  };
  const int si = std::clamp(static_cast<int>(w.spawn.x / cell), 0, nx - 1);
  const int sj = std::clamp(static_cast<int>(w.spawn.y / cell), 0, ny - 1);
  if (!free(si, sj)) return false;
  std::vector<std::pair<int, int>> stack{{si, sj}};
  state[static_cast<std::size_t>(sj * nx + si)] = 3;
  while (!stack.empty()) {
    const auto [i, j] = stack.back();
    stack.pop_back();
    if (std::hypot((i + 0.5) * cell - w.spawn.x, (j + 0.5) * cell - w.spawn.y) >= reach) return true;
    static constexpr int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int a = i + di[k], b = j + dj[k];
      if (a < 0 || b < 0 || a >= nx || b >= ny) continue;
      if (free(a, b)) {
        state[static_cast<std::size_t>(b * nx + a)] = 3;
        stack.emplace_back(a, b);
      }
    }
  }
  return false;
}

/// Deterministic world for (env, seed, area_scale). Object density follows
/// the per-type reference figures scaled to the area; walls are not counted.
inline WorldModel generate_world(EnvType env, std::uint64_t seed, double area_scale = 0.1) {
  if (!(area_scale > 0 && area_scale <= 1)) throw RangeError("generate_world: area_scale must be in (0, 1]");
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(env) * 131 + static_cast<std::uint64_t>(attempt)));
    WorldModel w;
    w.env = env;
    w.seed = seed;
    w.area_scale = area_scale;
    bool ok = true;
    switch (env) {
      case EnvType::normal_city: detail::build_normal_city(w, rng); break;
      case EnvType::collapsed_house:
        w.light = rng.uniform(0.6, 0.9);
        w.ground = {110, 95, 80};
        w.ceiling = {200, 195, 185};
        ok = detail::build_scatter(w, rng, 130.0 / 400.0, 400.0, 1.6);
        break;
      case EnvType::collapsed_city:
        w.light = rng.uniform(0.7, 1.0);
        w.ground = {95, 90, 85};
        w.ceiling = {160, 170, 180};
        ok = detail::build_scatter(w, rng, 275.0 / 3000.0, 3000.0, 4.0 / 3.0);
        break;
      case EnvType::cave: ok = detail::build_cave(w, rng); break;
    }
    if (!ok) continue;
    if (check_collision(w, w.spawn, 1.0)) continue;
    if (env != EnvType::normal_city) w.spawn.theta = detail::open_heading(w, w.spawn.x, w.spawn.y);
    const double reach = std::min(3.0, 0.4 * std::max(w.width, w.height));
    if (!traversable(w, reach)) continue;
    return w;
  }
  throw Error("generate_world: no valid " + to_string(env) + " world after 100 attempts (seed " +
              std::to_string(seed) + ")");
}

/// Re-colors obstacles, ground and ceiling and perturbs the light level.
/// Geometry is copied unchanged.
inline WorldModel randomize_appearance(const WorldModel& w, std::uint64_t dr_seed) {
  Rng rng(mix_seed(dr_seed, 0xd0a11ULL));
  const auto color = [&] {
    return Color{static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
                 static_cast<std::uint8_t>(rng.below(256))};
  };
  WorldModel out = w;
  for (auto& o : out.obstacles) o.color = color();
  out.ground = color();
  out.ceiling = color();
  const double cap = w.env == EnvType::cave ? 0.4 : 1.0;
  out.light = std::clamp(w.light * rng.uniform(0.7, 1.3), 0.05, cap);
  out.randomized = true;
  out.dr_seed = dr_seed;
  return out;
}

// ---------------------------------------------------------------- kinematics

/// Twist-like actuation: linear m/s, angular rad/s.
struct DriveCommand {
  double linear = 0.0;
  double angular = 0.0;
  bool operator==(const DriveCommand&) const = default;
};

struct RobotState {
  Pose pose;
  double radius = kRobotRadius;
  double linear = 0.0;
  double angular = 0.0;
  bool collided = false;
};

/// Exact unicycle pose after time s.
inline Pose unicycle(const Pose& p, double v, double w, double s) {
  if (std::abs(w) > 1e-9) {
    const double th = p.theta + w * s;
    return Pose{p.x + v / w * (std::sin(th) - std::sin(p.theta)), p.y - v / w * (std::cos(th) - std::cos(p.theta)),
                normalize_angle(th)};
  }
  return Pose{p.x + v * s * std::cos(p.theta), p.y + v * s * std::sin(p.theta), normalize_angle(p.theta)};
}

/// Integrates the command for dt seconds. If the swept disc would hit an
/// obstacle or leave the bounds, stops at the last collision-free pose.
inline RobotState step_robot(const RobotState& state, const DriveCommand& cmd, double dt, const WorldModel& world) {
  if (!(dt > 0 && dt <= 1.0)) throw RangeError("step_robot: dt must be in (0, 1]");
  RobotState next = state;
  next.linear = cmd.linear;
  next.angular = cmd.angular;
  if (check_collision(world, state.pose, state.radius)) {
    next.collided = true;
    return next;
  }
  const double path = std::abs(cmd.linear) * dt;
  const int steps = std::max(1, static_cast<int>(std::ceil(path / (state.radius / 8))));
  double lo = 0.0;
  for (int k = 1; k <= steps; ++k) {
    const double s = dt * k / steps;
    if (check_collision(world, unicycle(state.pose, cmd.linear, cmd.angular, s), state.radius)) {
      double hi = s;
      for (int it = 0; it < 50; ++it) {
        const double mid = 0.5 * (lo + hi);
        (check_collision(world, unicycle(state.pose, cmd.linear, cmd.angular, mid), state.radius) ? hi : lo) = mid;
      }
      next.pose = unicycle(state.pose, cmd.linear, cmd.angular, lo);
      next.collided = true;
      return next;
    }
    lo = s;
  }
  next.pose = unicycle(state.pose, cmd.linear, cmd.angular, dt);
  return next;
}

// ---------------------------------------------------------------- export

inline nlohmann::json color_json(const Color& c) { return nlohmann::json::array({c.r, c.g, c.b}); }

inline nlohmann::json world_to_json(const WorldModel& w) {
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& o : w.obstacles) {
    nlohmann::json j{{"shape", o.shape == Footprint::box ? "box" : "disc"},
                     {"center", {o.cx, o.cy}},
                     {"height", o.height},
                     {"color", color_json(o.color)},
                     {"class", to_string(o.cls)}};
    if (o.shape == Footprint::box) {
      j["half"] = {o.hx, o.hy};
    } else {
      j["radius"] = o.radius;
    }
    obs.push_back(std::move(j));
  }
  return nlohmann::json{{"env", to_string(w.env)},
                        {"seed", w.seed},
                        {"dr_seed", w.dr_seed},
                        {"randomized", w.randomized},
                        {"area_scale", w.area_scale},
                        {"bounds", {w.width, w.height}},
                        {"ground", color_json(w.ground)},
                        {"ceiling", color_json(w.ceiling)},
                        {"light", w.light},
                        {"spawn", {w.spawn.x, w.spawn.y, w.spawn.theta}},
                        {"obstacles", std::move(obs)}};
}

}  // namespace nmfnav
