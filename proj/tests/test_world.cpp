#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "nmfnav/sensors.hpp"
#include "nmfnav/world.hpp"

using namespace nmfnav;

namespace {

WorldModel empty_world(double w = 20, double h = 20) {
  WorldModel world;
  world.width = w;
  world.height = h;
  return world;
}

// Connected components of obstacle-free grid cells (4-neighborhood).
int free_components(const WorldModel& w, double cell) {
  const int nx = static_cast<int>(w.width / cell), ny = static_cast<int>(w.height / cell);
  std::vector<int> label(static_cast<std::size_t>(nx * ny), -1);
  std::vector<bool> free(static_cast<std::size_t>(nx * ny));
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double x = (i + 0.5) * cell, y = (j + 0.5) * cell;
      bool f = true;
      for (const auto& o : w.obstacles) f = f && footprint_distance(o, x, y) > 0;
      free[static_cast<std::size_t>(j * nx + i)] = f;
    }
  int comps = 0;
  for (int s = 0; s < nx * ny; ++s) {
    if (!free[static_cast<std::size_t>(s)] || label[static_cast<std::size_t>(s)] >= 0) continue;
    std::vector<int> stack{s};
    label[static_cast<std::size_t>(s)] = comps;
    while (!stack.empty()) {
      const int c = stack.back();
      stack.pop_back();
      const int i = c % nx, j = c / nx;
      const int nb[4][2] = {{i + 1, j}, {i - 1, j}, {i, j + 1}, {i, j - 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= nx || n[1] >= ny) continue;
        const auto k = static_cast<std::size_t>(n[1] * nx + n[0]);
        if (free[k] && label[k] < 0) {
          label[k] = comps;
          stack.push_back(n[1] * nx + n[0]);
        }
      }
    }
    ++comps;
  }
  return comps;
}

}  // namespace

TEST(Angles, NormalizedToHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(normalize_angle(std::numbers::pi), std::numbers::pi);
  EXPECT_DOUBLE_EQ(normalize_angle(-std::numbers::pi), std::numbers::pi);
  EXPECT_NEAR(normalize_angle(3 * std::numbers::pi), std::numbers::pi, 1e-12);
  EXPECT_NEAR(normalize_angle(-0.5 + 4 * std::numbers::pi), -0.5, 1e-12);
}

class EnvWorlds : public ::testing::TestWithParam<EnvType> {};

TEST_P(EnvWorlds, DeterministicPerSeed) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto a = generate_world(GetParam(), seed), b = generate_world(GetParam(), seed);
    ASSERT_EQ(a.obstacles.size(), b.obstacles.size());
    for (std::size_t k = 0; k < a.obstacles.size(); ++k) {
      EXPECT_TRUE(a.obstacles[k].same_geometry(b.obstacles[k]));
      EXPECT_EQ(a.obstacles[k].color, b.obstacles[k].color);
    }
    EXPECT_EQ(a.spawn, b.spawn);
    EXPECT_EQ(world_to_json(a).dump(), world_to_json(b).dump());
  }
  EXPECT_NE(world_to_json(generate_world(GetParam(), 1)).dump(), world_to_json(generate_world(GetParam(), 2)).dump());
}

TEST_P(EnvWorlds, SpawnClearObstaclesInBoundsAndTraversable) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = generate_world(GetParam(), seed);
    EXPECT_FALSE(check_collision(w, w.spawn, 1.0)) << seed;
    EXPECT_TRUE(traversable(w, 3.0)) << seed;
    for (const auto& o : w.obstacles) {
      const double ex = o.shape == Footprint::disc ? o.radius : o.hx;
      const double ey = o.shape == Footprint::disc ? o.radius : o.hy;
      EXPECT_GE(o.cx - ex, -1e-9);
      EXPECT_LE(o.cx + ex, w.width + 1e-9);
      EXPECT_GE(o.cy - ey, -1e-9);
      EXPECT_LE(o.cy + ey, w.height + 1e-9);
    }
    EXPECT_GT(w.light, 0.0);
    EXPECT_LE(w.light, 1.0);
  }
}

INSTANTIATE_TEST_SUITE_P(All, EnvWorlds, ::testing::ValuesIn(kAllEnvs),
                         [](const auto& info) { return to_string(info.param); });

TEST(GenerateWorld, CollapsedHouseMatchesReferenceDensity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = generate_world(EnvType::collapsed_house, seed, 0.1);
    EXPECT_NEAR(w.width * w.height, 40.0, 1e-9);
    EXPECT_GE(object_count(w), 10u) << seed;
    EXPECT_LE(object_count(w), 16u) << seed;
  }
}

TEST(GenerateWorld, DensityTargetsWithinQuarter) {
  // 275 objects in 3000 m2 and 60 in 4000 m2, scaled by area.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto city = generate_world(EnvType::collapsed_city, seed, 0.1);
    EXPECT_NEAR(city.width * city.height, 300.0, 1e-9);
    EXPECT_NEAR(static_cast<double>(object_count(city)), 27.5, 27.5 * 0.25);
    const auto cave = generate_world(EnvType::cave, seed, 0.1);
    EXPECT_NEAR(static_cast<double>(object_count(cave)), 6.0, 6.0 * 0.25 + 0.5);
  }
}

TEST(GenerateWorld, CaveIsDarkSingleCorridor) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto w = generate_world(EnvType::cave, seed);
    EXPECT_LE(w.light, 0.4);
    EXPECT_EQ(free_components(w, 0.1), 1) << seed;
  }
}

TEST(GenerateWorld, RejectsBadAreaScale) {
  EXPECT_THROW(generate_world(EnvType::cave, 1, 0.0), RangeError);
  EXPECT_THROW(generate_world(EnvType::cave, 1, 1.5), RangeError);
}

TEST(RandomizeAppearance, GeometryBitIdenticalColorsChange) {
  const auto w = generate_world(EnvType::collapsed_city, 5);
  const auto a = randomize_appearance(w, 11), b = randomize_appearance(w, 12);
  ASSERT_EQ(a.obstacles.size(), w.obstacles.size());
  bool differs = false;
  for (std::size_t k = 0; k < w.obstacles.size(); ++k) {
    EXPECT_TRUE(a.obstacles[k].same_geometry(w.obstacles[k]));
    differs |= !(a.obstacles[k].color == b.obstacles[k].color);
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.width, w.width);
  EXPECT_EQ(a.height, w.height);
  EXPECT_EQ(a.spawn, w.spawn);
  EXPECT_TRUE(a.randomized);
  EXPECT_EQ(simulate_laser(w, w.spawn).ranges, simulate_laser(a, w.spawn).ranges);
}

TEST(RandomizeAppearance, CaveStaysDark) {
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_LE(randomize_appearance(generate_world(EnvType::cave, 3), s).light, 0.4);
}

TEST(CheckCollision, Examples) {
  auto w = empty_world();
  EXPECT_FALSE(check_collision(w, Pose{10, 10, 0}, 0.2));
  w.obstacles.push_back(Obstacle::box(10, 10, 1, 1, 1, ObjectClass::rubble));
  EXPECT_TRUE(check_collision(w, Pose{10.5, 10, 0}, 0.2));
  // Closed-form disc-box distance: face at x = 11, center at 11 + r is tangent.
  EXPECT_FALSE(check_collision(w, Pose{11.25, 10, 0}, 0.25));
  EXPECT_TRUE(check_collision(w, Pose{11.2499, 10, 0}, 0.25));
  // Corner: distance to (11, 11) is sqrt(0.18^2 + 0.24^2) = 0.3.
  EXPECT_FALSE(check_collision(w, Pose{11.18, 11.24, 0}, 0.3));
  EXPECT_TRUE(check_collision(w, Pose{11.18, 11.24, 0}, 0.3001));
  EXPECT_TRUE(check_collision(w, Pose{0.1, 5, 0}, 0.2));
  EXPECT_THROW(check_collision(w, Pose{5, 5, 0}, 0.0), RangeError);
}

TEST(StepRobot, Examples) {
  const auto w = empty_world();
  RobotState s;
  s.pose = Pose{10, 10, 0.3};
  auto n = step_robot(s, DriveCommand{0, 0}, 0.1, w);
  EXPECT_EQ(n.pose, s.pose);
  n = step_robot(s, DriveCommand{1.0, 0}, 0.1, w);
  EXPECT_NEAR(n.pose.x, 10 + 0.1 * std::cos(0.3), 1e-12);
  EXPECT_NEAR(n.pose.y, 10 + 0.1 * std::sin(0.3), 1e-12);
  s.pose.theta = 0;
  n = step_robot(s, DriveCommand{0, std::numbers::pi}, 1.0, w);
  EXPECT_NEAR(n.pose.theta, std::numbers::pi, 1e-12);
  EXPECT_EQ(n.pose.x, 10);
  EXPECT_EQ(n.pose.y, 10);
  EXPECT_FALSE(n.collided);
  EXPECT_THROW(step_robot(s, DriveCommand{}, 0.0, w), RangeError);
  EXPECT_THROW(step_robot(s, DriveCommand{}, 1.5, w), RangeError);
}

TEST(StepRobot, ArcMatchesClosedForm) {
  const auto w = empty_world();
  RobotState s;
  s.pose = Pose{10, 10, 0};
  // Quarter circle of radius v / omega = 1 from heading 0 ends at (11, 11).
  const auto n = step_robot(s, DriveCommand{0.5, 0.5}, 0.5, empty_world());
  const double th = 0.25;
  EXPECT_NEAR(n.pose.x, 10 + std::sin(th), 1e-12);
  EXPECT_NEAR(n.pose.y, 10 + 1 - std::cos(th), 1e-12);
  RobotState q = s;
  for (int k = 0; k < 100; ++k) q = step_robot(q, DriveCommand{0.5, 0.5}, 0.5 * std::numbers::pi / 100 * 2, w);
  EXPECT_NEAR(q.pose.x, 11, 1e-9);
  EXPECT_NEAR(q.pose.y, 11, 1e-9);
}

TEST(StepRobot, StraightDistanceIsExact) {
  const auto w = empty_world(200, 20);
  RobotState s;
  s.pose = Pose{1, 10, 0};
  const int k = 300;
  for (int i = 0; i < k; ++i) s = step_robot(s, DriveCommand{0.5, 0}, 0.1, w);
  EXPECT_NEAR(s.pose.x - 1, k * 0.5 * 0.1, 1e-9);
}

TEST(StepRobot, StopsAtContactWithoutPenetration) {
  auto w = empty_world();
  w.obstacles.push_back(Obstacle::box(15, 10, 1, 5, 1, ObjectClass::wall));
  RobotState s;
  s.pose = Pose{13.5, 10, 0};
  int steps = 0;
  while (!s.collided && steps < 100) {
    s = step_robot(s, DriveCommand{0.5, 0}, 0.1, w);
    ++steps;
    EXPECT_FALSE(check_collision(w, s.pose, s.radius));
  }
  EXPECT_TRUE(s.collided);
  EXPECT_NEAR(s.pose.x, 14 - s.radius, 1e-9);
  const auto again = step_robot(s, DriveCommand{0.5, 0}, 0.1, w);
  EXPECT_TRUE(again.collided);
  EXPECT_NEAR(again.pose.x, s.pose.x, 1e-9);
}

TEST(StepRobot, RandomDrivingNeverPenetrates) {
  const auto w = generate_world(EnvType::collapsed_house, 9);
  Rng rng(4);
  RobotState s;
  s.pose = w.spawn;
  for (int i = 0; i < 2000; ++i) {
    s.collided = false;
    s = step_robot(s, DriveCommand{rng.uniform(-0.5, 0.5), rng.uniform(-1.5, 1.5)}, 0.1, w);
    ASSERT_FALSE(check_collision(w, s.pose, s.radius)) << i;
  }
}

TEST(WorldJson, CarriesGeometryAndSeeds) {
  const auto w = generate_world(EnvType::collapsed_house, 4);
  const auto j = world_to_json(w);
  EXPECT_EQ(j["env"], "collapsed_house");
  EXPECT_EQ(j["seed"], 4u);
  EXPECT_EQ(j["obstacles"].size(), w.obstacles.size());
  EXPECT_EQ(j["obstacles"][0]["center"][0].get<double>(), w.obstacles[0].cx);
  EXPECT_EQ(j["bounds"][0].get<double>(), w.width);
}
