#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "nmfnav/error.hpp"
#include "nmfnav/rng.hpp"
#include "nmfnav/world.hpp"

namespace nmfnav {

// ---------------------------------------------------------------- laser

struct LaserConfig {
  std::size_t beams = 181;
  double increment = std::numbers::pi / 180.0;
  double max_range = 16.0;

  void validate() const {
    if (beams < 2) throw RangeError("laser: need at least 2 beams");
    if (std::abs((static_cast<double>(beams) - 1) * increment - std::numbers::pi) > 1e-9)
      throw RangeError("laser: beams must span exactly 180 degrees");
    if (!(max_range > 0)) throw RangeError("laser: max range must be > 0");
  }
};

/// One 180 degree sweep. Beam i points at heading + pi/2 - i * increment, so
/// beam 0 looks left, the middle beam straight ahead, the last beam right.
/// A miss is +inf.
struct LaserScan {
  std::vector<float> ranges;
  double increment = std::numbers::pi / 180.0;
  double max_range = 16.0;

  std::size_t beams() const { return ranges.size(); }
  static bool is_miss(float r) { return !std::isfinite(r); }
};

inline LaserScan simulate_laser(const WorldModel& world, const Pose& pose, const LaserConfig& cfg = {}) {
  cfg.validate();
  LaserScan scan;
  scan.increment = cfg.increment;
  scan.max_range = cfg.max_range;
  scan.ranges.resize(cfg.beams);
  for (std::size_t i = 0; i < cfg.beams; ++i) {
    const double angle = pose.theta + std::numbers::pi / 2 - static_cast<double>(i) * cfg.increment;
    const RayHit hit = raycast(world, pose.x, pose.y, angle, cfg.max_range);
    scan.ranges[i] = hit.hit() ? static_cast<float>(hit.distance) : std::numeric_limits<float>::infinity();
  }
  return scan;
}

// ---------------------------------------------------------------- distance map

/// Binary occupancy raster of laser hits; row 0 is the far edge.
struct DistanceMap {
  std::size_t height = 0, width = 0;
  double scale = 1.0;  // pixels per meter
  double x0 = 0, y0 = 0;
  std::vector<std::uint8_t> cells;

  std::uint8_t at(std::size_t row, std::size_t col) const { return cells[row * width + col]; }
  std::size_t hits() const {
    std::size_t n = 0;
    for (auto c : cells) n += c;
    return n;
  }
};

/// Plots hit i at x = x0 + d cos(pi - phi i), y = y0 - d sin(phi i) with d in
/// pixels and the robot at (W/2, H-1). Points outside the raster are dropped.
/// A scale of 0 fits the full laser range into the raster height, so every
/// hit lands on a cell.
inline DistanceMap scan_to_distance_map(const LaserScan& scan, std::size_t height, std::size_t width,
                                        double scale = 0.0) {
  if (height == 0 || width == 0) throw RangeError("distance map dims must be positive");
  if (scale == 0.0) scale = (static_cast<double>(height) - 1.0) / scan.max_range;
  if (!(scale > 0)) throw RangeError("distance map scale must be > 0");
  DistanceMap m;
  m.height = height;
  m.width = width;
  m.scale = scale;
  m.x0 = static_cast<double>(width) / 2.0;
  m.y0 = static_cast<double>(height) - 1.0;
  m.cells.assign(height * width, 0);
  for (std::size_t i = 0; i < scan.beams(); ++i) {
    const float r = scan.ranges[i];
    if (LaserScan::is_miss(r)) continue;
    const double d = static_cast<double>(r) * scale;
    const double a = scan.increment * static_cast<double>(i);
    const double x = m.x0 + d * std::cos(std::numbers::pi - a);
    const double y = m.y0 - d * std::sin(a);
    const long col = std::lround(x), row = std::lround(y);
    if (col < 0 || row < 0 || col >= static_cast<long>(width) || row >= static_cast<long>(height)) continue;
    m.cells[static_cast<std::size_t>(row) * width + static_cast<std::size_t>(col)] = 1;
  }
  return m;
}

// ---------------------------------------------------------------- camera

struct Intrinsics {
  double fx = 32, fy = 32, cx = 31.5, cy = 23.5;
};

struct CameraConfig {
  std::size_t width = 64, height = 48;
  double hfov = std::numbers::pi / 2;
  double mount_height = 0.3;
  double max_range = 16.0;

  /// Pinhole with square pixels; integer pixel coordinates are pixel centers.
  Intrinsics intrinsics() const {
    const double f = static_cast<double>(width) / 2.0 / std::tan(hfov / 2.0);
    return Intrinsics{f, f, (static_cast<double>(width) - 1) / 2.0, (static_cast<double>(height) - 1) / 2.0};
  }
};

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, interleaved

  const std::uint8_t* pixel(std::size_t row, std::size_t col) const { return &rgb[(row * width + col) * 3]; }
  bool operator==(const Image&) const = default;
};

struct DepthImage {
  std::size_t width = 0, height = 0;
  std::vector<float> depth;  // camera-frame z; +inf where nothing was hit
};

struct CameraFrame {
  Image rgb;
  DepthImage depth;
};

namespace detail {
inline std::uint8_t shade(std::uint8_t c, double f) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(c * f), 0L, 255L));
}
}  // namespace detail

/// Column raycast rendering: each column's nearest obstacle becomes a vertical
/// span whose extent follows from its height and depth; everything else is
/// ground below the horizon and ceiling above. Colors scale with the light level.
inline CameraFrame render_camera(const WorldModel& world, const Pose& pose, const CameraConfig& cfg = {}) {
  const Intrinsics K = cfg.intrinsics();
  CameraFrame f;
  f.rgb.width = f.depth.width = cfg.width;
  f.rgb.height = f.depth.height = cfg.height;
  f.rgb.rgb.assign(cfg.width * cfg.height * 3, 0);
  f.depth.depth.assign(cfg.width * cfg.height, std::numeric_limits<float>::infinity());
  const double h = static_cast<double>(cfg.height);
  for (std::size_t c = 0; c < cfg.width; ++c) {
    const double azimuth = std::atan2(K.cx - static_cast<double>(c), K.fx);
    const RayHit hit = raycast(world, pose.x, pose.y, pose.theta + azimuth, cfg.max_range);
    double top = h, bottom = -1, z = 0;
    Color col{};
    double fade = 0;
    if (hit.hit()) {
      const Obstacle& o = world.obstacles[static_cast<std::size_t>(hit.obstacle)];
      z = hit.distance * std::cos(azimuth);
      top = K.cy - K.fy * (o.height - cfg.mount_height) / z;
      bottom = K.cy + K.fy * cfg.mount_height / z;
      col = o.color;
      fade = world.light * (0.55 + 0.45 * (1.0 - hit.distance / cfg.max_range));
    }
    for (std::size_t r = 0; r < cfg.height; ++r) {
      const double v = static_cast<double>(r);
      std::uint8_t* px = &f.rgb.rgb[(r * cfg.width + c) * 3];
      if (v >= top && v <= bottom) {
        px[0] = detail::shade(col.r, fade);
        px[1] = detail::shade(col.g, fade);
        px[2] = detail::shade(col.b, fade);
        f.depth.depth[r * cfg.width + c] = static_cast<float>(z);
      } else if (v > K.cy) {
        const double g = world.light * (0.6 + 0.4 * (v - K.cy) / (h - K.cy));
        px[0] = detail::shade(world.ground.r, g);
        px[1] = detail::shade(world.ground.g, g);
        px[2] = detail::shade(world.ground.b, g);
      } else {
        const double g = world.light * 0.9;
        px[0] = detail::shade(world.ceiling.r, g);
        px[1] = detail::shade(world.ceiling.g, g);
        px[2] = detail::shade(world.ceiling.b, g);
      }
    }
  }
  return f;
}

// ---------------------------------------------------------------- point clouds

/// Back-projects every finite depth pixel to camera-frame (x right, y down, z forward).
inline std::vector<float> depth_to_pointcloud(const DepthImage& depth, const Intrinsics& K) {
  if (!(K.fx > 0 && K.fy > 0)) throw RangeError("depth_to_pointcloud: focal length must be > 0");
  std::vector<float> cloud;
  for (std::size_t r = 0; r < depth.height; ++r)
    for (std::size_t c = 0; c < depth.width; ++c) {
      const float z = depth.depth[r * depth.width + c];
      if (!std::isfinite(z) || z <= 0) continue;
      cloud.push_back(static_cast<float>((static_cast<double>(c) - K.cx) * z / K.fx));
      cloud.push_back(static_cast<float>((static_cast<double>(r) - K.cy) * z / K.fy));
      cloud.push_back(z);
    }
  return cloud;
}

/// Uniform subsample to n points: without replacement when the cloud has at
/// least n points, with replacement otherwise. Empty input gives n zero points.
inline std::vector<float> sample_pointcloud(const std::vector<float>& cloud, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw RangeError("sample_pointcloud: N_pts must be >= 1");
  if (cloud.size() % 3 != 0) throw ShapeError("sample_pointcloud: cloud length not a multiple of 3");
  const std::size_t m = cloud.size() / 3;
  std::vector<float> out(n * 3, 0.0f);
  if (m == 0) return out;
  Rng rng(seed);
  const auto copy_row = [&](std::size_t dst, std::size_t src) {
    for (std::size_t k = 0; k < 3; ++k) out[dst * 3 + k] = cloud[src * 3 + k];
  };
  if (m >= n) {
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(idx[i], idx[i + rng.below(m - i)]);
      copy_row(i, idx[i]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) copy_row(i, rng.below(m));
  }
  return out;
}

// ---------------------------------------------------------------- triples

struct SensorConfig {
  LaserConfig laser;
  CameraConfig camera;
};

/// One synchronized observation. All modalities share `tick`.
struct SensorTriple {
  Image rgb;
  std::vector<float> cloud;  // M x 3, camera frame, capture resolution
  LaserScan scan;
  float steering = 0.0f;
  std::uint64_t tick = 0;
  EnvType env = EnvType::normal_city;
  bool dr = false;
  std::uint64_t world_seed = 0;
  std::uint64_t sample_seed = 0;

  std::size_t points() const { return cloud.size() / 3; }
};

inline SensorTriple capture(const WorldModel& world, const Pose& pose, std::uint64_t tick, const SensorConfig& cfg = {}) {
  SensorTriple t;
  const CameraFrame frame = render_camera(world, pose, cfg.camera);
  t.rgb = frame.rgb;
  t.cloud = depth_to_pointcloud(frame.depth, cfg.camera.intrinsics());
  t.scan = simulate_laser(world, pose, cfg.laser);
  t.tick = tick;
  t.env = world.env;
  t.dr = world.randomized;
  t.world_seed = world.seed;
  t.sample_seed = mix_seed(world.seed ^ world.dr_seed, tick);
  return t;
}

}  // namespace nmfnav
