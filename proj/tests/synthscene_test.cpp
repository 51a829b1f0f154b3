#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "support/oracles.hpp"

namespace {

using namespace bevscan;

std::array<oracle::Pt, 4> footprint(const Vehicle& v) {
  return oracle::rectangle(v.x, v.z, v.yaw, v.length, v.width);
}

SceneSpec single(double x, double z, double yaw = 0.0) {
  SceneSpec s;
  s.seed = 77;
  Vehicle v;
  v.x = x;
  v.z = z;
  v.yaw = yaw;
  s.vehicles.push_back(v);
  return s;
}

// ---------------------------------------------------------------------------
// Scene sampling

TEST(Scenes, SameSeedSameScene) {
  for (std::uint64_t seed : {0ULL, 1ULL, 987654321ULL}) {
    const auto a = generate_scene(seed), b = generate_scene(seed);
    EXPECT_EQ(a.vehicles, b.vehicles);
  }
  EXPECT_NE(generate_scene(1).vehicles, generate_scene(2).vehicles);
}

TEST(Scenes, EmptyCountRangeGivesEmptyScene) {
  SceneDistribution d;
  d.min_vehicles = d.max_vehicles = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_TRUE(generate_scene(seed, d).vehicles.empty());
  d.min_vehicles = 3;
  d.max_vehicles = 2;
  EXPECT_THROW(generate_scene(0, d), std::invalid_argument);
}

TEST(Scenes, ThousandScenesHaveNoOverlaps) {
  const SceneDistribution d;
  const auto ego = oracle::rectangle(0, 0, 0, 2 * d.ego_clearance, 2 * d.ego_clearance);
  std::size_t vehicles = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = generate_scene(seed, d);
    ASSERT_GE(s.vehicles.size(), d.min_vehicles) << "seed " << seed;
    ASSERT_LE(s.vehicles.size(), d.max_vehicles);
    vehicles += s.vehicles.size();
    for (std::size_t a = 0; a < s.vehicles.size(); ++a) {
      const auto pa = footprint(s.vehicles[a]);
      ASSERT_FALSE(oracle::rectangles_intersect(pa, ego)) << "seed " << seed << " vehicle " << a;
      for (const auto& c : pa) {
        ASSERT_LE(std::abs(c[0]), d.extent + 1e-9);
        ASSERT_LE(std::abs(c[1]), d.extent + 1e-9);
      }
      for (std::size_t b = a + 1; b < s.vehicles.size(); ++b)
        ASSERT_FALSE(oracle::rectangles_intersect(pa, footprint(s.vehicles[b])))
            << "seed " << seed << " vehicles " << a << ", " << b;
    }
  }
  EXPECT_GT(vehicles, 4000u);
}

TEST(Scenes, SeparatingAxisAgreesWithPolygonOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-6, 6), yaw(-3.2, 3.2), len(1, 5);
  std::size_t hits = 0;
  for (int trial = 0; trial < 5000; ++trial) {
    Vehicle a, b;
    a.x = pos(rng), a.z = pos(rng), a.yaw = yaw(rng), a.length = len(rng), a.width = len(rng);
    b.x = pos(rng), b.z = pos(rng), b.yaw = yaw(rng), b.length = len(rng), b.width = len(rng);
    const bool expect = oracle::rectangles_intersect(footprint(a), footprint(b));
    ASSERT_EQ(footprints_overlap(a, b), expect) << "trial " << trial;
    hits += expect;
  }
  EXPECT_GT(hits, 500u);
  EXPECT_LT(hits, 4500u);
}

// ---------------------------------------------------------------------------
// Rendering

/// Pixels of view k that differ between the two renders.
std::vector<std::size_t> changed_columns(const RenderedSample& a, const RenderedSample& b, std::size_t k) {
  std::vector<std::size_t> cols;
  const std::size_t plane = a.height * a.width;
  for (std::size_t p = 0; p < plane; ++p) {
    bool diff = false;
    for (std::size_t c = 0; c < 3; ++c) diff |= a.images[(k * 3 + c) * plane + p] != b.images[(k * 3 + c) * plane + p];
    if (diff) cols.push_back(p % a.width);
  }
  return cols;
}

TEST(Render, SameSceneRendersBitIdentically) {
  const auto scene = generate_scene(42);
  RenderOptions opt;
  opt.modality = Modality::CameraLidar;
  const auto a = render(scene, BevGrid{}, opt), b = render(scene, BevGrid{}, opt);
  EXPECT_EQ(a.images, b.images);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) ASSERT_EQ(a.points[i], b.points[i]);
  EXPECT_EQ(a.targets.seg, b.targets.seg);
}

TEST(Render, ImagesAreUnitRangeWithExpectedShape) {
  const auto s = render(generate_scene(3), BevGrid{});
  EXPECT_EQ(s.views, 6u);
  EXPECT_EQ(s.height, 64u);
  EXPECT_EQ(s.width, 112u);
  ASSERT_EQ(s.images.size(), 6u * 3u * 64u * 112u);
  for (float v : s.images) {
    ASSERT_GE(v, 0.f);
    ASSERT_LE(v, 1.f);
  }
}

TEST(Render, VehicleAheadLandsNearThePrincipalColumn) {
  const BevGrid g;
  const auto with = render(single(0.0, 10.0), g), without = render(SceneSpec{}, g);
  const auto cols = changed_columns(with, without, 0);
  ASSERT_FALSE(cols.empty());
  double mean = 0;
  for (auto c : cols) mean += double(c);
  mean /= double(cols.size());
  const double cx = 0.5 * double(with.width - 1);
  EXPECT_NEAR(mean, cx, 3.0);
  EXPECT_GE(with.vehicle_pixels[0][0], 10u);
  EXPECT_TRUE(with.targets.visibility[0]);
}

TEST(Render, VehicleBehindIsInvisibleToTheFrontCamera) {
  const BevGrid g;
  const auto with = render(single(0.0, -10.0), g), without = render(SceneSpec{}, g);
  EXPECT_EQ(with.vehicle_pixels[0][0], 0u);
  EXPECT_TRUE(changed_columns(with, without, 0).empty());
  // the rear camera (yaw = pi) sees it
  EXPECT_GT(with.vehicle_pixels[0][3], 10u);
}

TEST(Render, VisibilityMeansTenPixelsInSomeView) {
  std::size_t hidden = 0, shown = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = render(generate_scene(seed), BevGrid{});
    for (std::size_t n = 0; n < s.vehicle_pixels.size(); ++n) {
      const auto best = *std::max_element(s.vehicle_pixels[n].begin(), s.vehicle_pixels[n].end());
      ASSERT_EQ(s.targets.visibility[n], best >= 10u);
      (best >= 10u ? shown : hidden) += 1;
    }
  }
  EXPECT_GT(shown, 0u);
  EXPECT_GT(hidden, 0u);
}

TEST(Render, FarVehicleIsHiddenBehindNearOne) {
  SceneSpec s = single(0.0, 8.0);
  Vehicle far;
  far.z = 30.0;
  s.vehicles.push_back(far);
  const auto r = render(s, BevGrid{});
  EXPECT_GT(r.vehicle_pixels[0][0], r.vehicle_pixels[1][0]);
  const auto alone = render(single(0.0, 30.0), BevGrid{});
  EXPECT_LT(r.vehicle_pixels[1][0], alone.vehicle_pixels[0][0]);
}

TEST(Render, CameraOnlyHasNoPoints) {
  const auto s = render(generate_scene(9), BevGrid{});
  EXPECT_TRUE(s.points.empty());
}

TEST(Render, LidarGroundReturnsHugTheGround) {
  RenderOptions opt;
  opt.modality = Modality::CameraLidar;
  const auto s = render(SceneSpec{}, BevGrid{}, opt);
  ASSERT_GT(s.points.size(), 100000u);
  double mean_abs_y = 0;
  for (const auto& p : s.points) mean_abs_y += std::abs(p.y());
  mean_abs_y /= double(s.points.size());
  EXPECT_LT(mean_abs_y, 3 * opt.lidar_noise);
}

TEST(Render, LidarHeightRasterMatchesVehicleFootprints) {
  RenderOptions opt;
  opt.modality = Modality::CameraLidar;
  const BevGrid g;
  IouCounts c;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = render(generate_scene(seed), g, opt);
    const auto raster = rasterize_points<double>(s.points, g).channels;
    std::vector<float> raised(g.cells());
    for (std::size_t i = 0; i < g.cells(); ++i) raised[i] = raster[g.cells() + i] < -0.25 ? 1.f : 0.f;
    c += iou_counts<float, float>(raised, s.targets.seg, g);
  }
  EXPECT_GE(c.iou(), 0.7) << c.intersection << " / " << c.union_;
}

TEST(Render, RadarKeepsASparseSubset) {
  RenderOptions lidar, radar;
  lidar.modality = Modality::CameraLidar;
  radar.modality = Modality::CameraRadar;
  const auto scene = generate_scene(11);
  const auto l = render(scene, BevGrid{}, lidar), r = render(scene, BevGrid{}, radar);
  ASSERT_GT(r.points.size(), 0u);
  const double ratio = double(r.points.size()) / double(l.points.size());
  EXPECT_NEAR(ratio, radar.radar_keep, 0.005);
}

// ---------------------------------------------------------------------------
// Dataset

TEST(Dataset, SplitsNeverShareSeeds) {
  std::set<std::uint64_t> seen;
  for (auto split : {Split::Train, Split::Val, Split::Test})
    for (std::uint64_t base : {0ULL, 1ULL, 12345ULL})
      for (std::size_t i = 0; i < 2000; ++i) ASSERT_TRUE(seen.insert(sample_seed(split, base, i)).second);
}

TEST(Dataset, IndexAccessIsDeterministic) {
  DatasetSpec spec;
  spec.size = 3;
  spec.seed = 5;
  spec.render.modality = Modality::CameraRadar;
  const Dataset a(spec), b(spec);
  const auto x = a.get<float>(2), y = b.get<float>(2);
  EXPECT_EQ(x.scene.vehicles, y.scene.vehicles);
  ASSERT_EQ(x.images.numel(), y.images.numel());
  for (std::size_t i = 0; i < x.images.numel(); ++i) ASSERT_EQ(x.images[i], y.images[i]);
  for (std::size_t i = 0; i < x.points.numel(); ++i) ASSERT_EQ(x.points[i], y.points[i]);
  EXPECT_EQ(x.images.shape(), (Shape{1, 6, 3, 64, 112}));
  EXPECT_EQ(x.points.shape(), (Shape{1, 2, 200, 200}));
  EXPECT_FALSE(a.get<float>(0).scene.vehicles == x.scene.vehicles);
  EXPECT_THROW(a.get<float>(3), std::out_of_range);
}

TEST(Dataset, NamesRoundTrip) {
  for (auto m : {Modality::Camera, Modality::CameraRadar, Modality::CameraLidar})
    EXPECT_EQ(parse_modality(to_string(m)), m);
  for (auto s : {Split::Train, Split::Val, Split::Test}) EXPECT_EQ(parse_split(to_string(s)), s);
  EXPECT_THROW(parse_modality("sonar"), std::invalid_argument);
  EXPECT_THROW(parse_split("dev"), std::invalid_argument);
}

TEST(Dataset, PgmRoundTripQuantizesToEightBits) {
  const auto path = (std::filesystem::temp_directory_path() / "bevscan_synth_test.pgm").string();
  std::vector<float> v{0.f, 0.25f, 1.f, 0.5f, 2.f, -1.f};
  write_pgm(path, v, 2, 3);
  std::size_t rows = 0, cols = 0;
  const auto back = read_pgm(path, rows, cols);
  EXPECT_EQ(rows, 2u);
  EXPECT_EQ(cols, 3u);
  const float expect[6] = {0.f, 64.f / 255.f, 1.f, 128.f / 255.f, 1.f, 0.f};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_FLOAT_EQ(back[i], expect[i]);
  std::filesystem::remove(path);
}

}  // namespace
