#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "mufasa/cloud.hpp"
#include "mufasa/scene.hpp"
#include "support.hpp"

using namespace mufasa;
using testing_support::random_cloud;
using testing_support::temp_path;

TEST_CASE("csv read keeps file order") {
  const auto p = temp_path("three.csv");
  {
    std::ofstream f(p);
    f << "x,y,z,rcs,v_r\n1,2,3,4,5\n-1.5,0,0.25,-3,0.5\n7,8,9,10,11\n";
  }
  const auto c = read_cloud(p, CloudFormat::Csv);
  REQUIRE(c.size() == 3);
  CHECK(c.points[0] == RadarPoint{1, 2, 3, 4, 5});
  CHECK(c.points[1] == RadarPoint{-1.5, 0, 0.25, -3, 0.5});
  CHECK(c.points[2].v_r == 11.0);
}

TEST_CASE("empty files give empty clouds") {
  const auto csv = temp_path("empty.csv");
  const auto bin = temp_path("empty.bin");
  { std::ofstream f(csv); }
  { std::ofstream f(bin); }
  CHECK(read_cloud(csv, CloudFormat::Csv).empty());
  CHECK(read_cloud(bin, CloudFormat::Binary).empty());
}

TEST_CASE("nan field is rejected with its row") {
  const auto p = temp_path("nan.csv");
  {
    std::ofstream f(p);
    f << "x,y,z,rcs,v_r\n1,2,3,4,5\nnan,0,0,0,0\n";
  }
  try {
    read_cloud(p, CloudFormat::Csv);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
}

TEST_CASE("malformed row is rejected") {
  const auto p = temp_path("short.csv");
  {
    std::ofstream f(p);
    f << "x,y,z,rcs,v_r\n1,2,3,4\n";
  }
  CHECK_THROWS_AS(read_cloud(p, CloudFormat::Csv), std::runtime_error);
  CHECK_THROWS(read_cloud(temp_path("does_not_exist.csv"), CloudFormat::Csv));
}

TEST_CASE("binary round trip is bit exact, csv within 1e-6") {
  const auto c = random_cloud(200, 3);
  const auto bin = temp_path("rt.bin");
  const auto csv = temp_path("rt.csv");
  write_cloud(c, bin, CloudFormat::Binary);
  write_cloud(c, csv, CloudFormat::Csv);
  const auto b = read_cloud(bin, CloudFormat::Binary);
  REQUIRE(b.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::memcmp(&b.points[i], &c.points[i], sizeof(RadarPoint)) == 0);
  const auto t = read_cloud(csv, CloudFormat::Csv);
  REQUIRE(t.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(std::abs(t.points[i].x - c.points[i].x) <= 1e-6);
    CHECK(std::abs(t.points[i].y - c.points[i].y) <= 1e-6);
    CHECK(std::abs(t.points[i].z - c.points[i].z) <= 1e-6);
    CHECK(std::abs(t.points[i].rcs - c.points[i].rcs) <= 1e-6);
    CHECK(std::abs(t.points[i].v_r - c.points[i].v_r) <= 1e-6);
  }
}

TEST_CASE("unwritable path errors") {
  PointCloud c;
  CHECK_THROWS(write_cloud(c, "/nonexistent_dir/x/y.bin", CloudFormat::Binary));
}

TEST_CASE("labels round trip") {
  std::vector<BoundingBox3D> boxes{{1, 2, -1, 4, 1.8, 1.6, 0.5, ObjectClass::Car},
                                   {10, -3, -0.5, 0.6, 0.6, 1.7, -2.0, ObjectClass::Pedestrian}};
  const auto p = temp_path("labels.txt");
  write_labels(boxes, p);
  const auto back = read_labels(p);
  REQUIRE(back.size() == 2);
  CHECK(back[1].class_id == ObjectClass::Pedestrian);
  CHECK(back[0].yaw == doctest::Approx(0.5));
  CHECK_THROWS(parse_label("Bus 1 2 3 4 5 6 7"));
}

TEST_CASE("wrap_angle range") {
  CHECK(wrap_angle(std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
  CHECK(wrap_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
}

TEST_CASE("box containment respects yaw") {
  BoundingBox3D b{0, 0, 0, 4, 1, 2, std::numbers::pi / 2, ObjectClass::Car};
  CHECK(b.contains({0, 1.9, 0}));
  CHECK_FALSE(b.contains({1.9, 0, 0}));
  CHECK(b.contains({0, 2.0, 1.0}));  // boundary is inclusive
}

TEST_CASE("scene generation is deterministic") {
  SceneSpec spec;
  spec.counts = {1, 0, 0, 0};
  CHECK(generate_scene(spec, 7) == generate_scene(spec, 7));
  spec.counts = {0, 0, 0, 0};
  spec.clutter_points = 0;
  const auto f = generate_scene(spec, 1);
  CHECK(f.cloud.empty());
  CHECK(f.gt_boxes.empty());
}

TEST_CASE("noise free pedestrian points lie in its box") {
  SceneSpec spec;
  spec.counts = {0, 1, 0, 0};
  spec.noise_sigma = 0.0;
  spec.clutter_points = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto f = generate_scene(spec, seed);
    REQUIRE(f.gt_boxes.size() == 1);
    for (const auto& p : f.cloud.points) CHECK(f.gt_boxes[0].contains(p.position()));
  }
}

TEST_CASE("every object's points stay within noise of its box") {
  SceneSpec spec;
  spec.counts = {2, 2, 2, 1};
  spec.clutter_points = 0;
  const auto f = generate_scene(spec, 11);
  for (const auto& p : f.cloud.points) {
    bool inside = false;
    for (const auto& b : f.gt_boxes) inside = inside || b.contains(p.position(), 5 * spec.noise_sigma);
    CHECK(inside);
  }
}

TEST_CASE("infeasible placement throws") {
  SceneSpec spec;
  spec.counts = {40, 0, 0, 0};
  spec.x_range = {4.0, 8.0};
  spec.max_retries = 20;
  CHECK_THROWS_AS(generate_scene(spec, 0), std::runtime_error);
}

TEST_CASE("augmentation identity, flip and quarter turn") {
  SceneSpec spec;
  const auto f = generate_scene(spec, 5);
  CHECK(augment(f, AugmentSpec{}, 99) == f);

  AugmentSpec flip;
  flip.flip_y = 1.0;
  const auto g = augment(f, flip, 3);
  for (std::size_t i = 0; i < f.cloud.size(); ++i) {
    CHECK(g.cloud.points[i].y == -f.cloud.points[i].y);
    CHECK(g.cloud.points[i].x == f.cloud.points[i].x);
  }
  for (std::size_t i = 0; i < f.gt_boxes.size(); ++i)
    CHECK(g.gt_boxes[i].yaw == doctest::Approx(wrap_angle(-f.gt_boxes[i].yaw)));

  Frame one;
  one.cloud.points.push_back({1, 0, 2, 0, 0});
  const auto r = transform_frame(one, false, std::numbers::pi / 2, 1.0);
  CHECK(r.cloud.points[0].x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.cloud.points[0].y == doctest::Approx(1.0));
  CHECK(r.cloud.points[0].z == 2.0);
}

TEST_CASE("augmentation preserves point-in-box membership") {
  SceneSpec spec;
  spec.counts = {2, 1, 1, 1};
  spec.noise_sigma = 0.0;
  AugmentSpec aug{std::numbers::pi / 4, 0.5, {0.9, 1.1}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto f = generate_scene(spec, seed);
    const auto g = augment(f, aug, seed + 100);
    for (std::size_t b = 0; b < f.gt_boxes.size(); ++b)
      for (std::size_t i = 0; i < f.cloud.size(); ++i)
        if (f.gt_boxes[b].contains(f.cloud.points[i].position()))
          CHECK(g.gt_boxes[b].contains(g.cloud.points[i].position(), 1e-9));
  }
}

TEST_CASE("augment spec validation") {
  AugmentSpec bad;
  bad.scale_range = {0.0, 1.2};
  CHECK_FALSE(bad.valid());
  CHECK_THROWS(augment(Frame{}, bad, 0));
}
