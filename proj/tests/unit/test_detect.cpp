#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "mufasa/detect.hpp"
#include "nn_support.hpp"
#include "detect_oracles.hpp"
#include "support.hpp"

using namespace mufasa;
using namespace mufasa::detect;
using mufasa::nn::Tape;
using mufasa::nn::Tensor;
using testing_support::random_tensor;

using namespace testing_support;

TEST_CASE("iou fixtures") {
  const auto a = box(0, 0, 0, 2, 1, 1, 0);
  CHECK(iou3d(a, a) == 1.0);
  CHECK(iou3d(a, box(10, 0, 0, 2, 1, 1, 0)) == 0.0);
  CHECK(iou3d(a, box(1, 0, 0, 2, 1, 1, 0)) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // vertical offset halves the overlap volume, BEV-only ignores it
  CHECK(iou3d(a, box(0, 0, 0.5, 2, 1, 1, 0)) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou3d(a, box(0, 0, 0.5, 2, 1, 1, 0), true) == 1.0 - 0.0);
  CHECK(iou3d(a, box(0, 0, 2.0, 2, 1, 1, 0)) == 0.0);
  // a quarter turn of a square is the same square
  CHECK(iou3d(box(0, 0, 0, 1, 1, 1, 0), box(0, 0, 0, 1, 1, 1, std::numbers::pi / 2)) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rotated iou agrees with a Monte-Carlo oracle") {
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int pair = 0; pair < 50; ++pair) {
    const auto a = random_box(rng, 1.0);
    const auto b = random_box(rng, 1.0);
    worst = std::max(worst, std::abs(iou3d(a, b) - monte_carlo_iou(a, b, 100000, rng)));
  }
  MESSAGE("max |iou - mc| = " << worst);
  CHECK(worst < 0.01);
}

TEST_CASE("iou is symmetric, bounded and rotation invariant") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_box(rng, 1.5);
    const auto b = random_box(rng, 1.5);
    const double v = iou3d(a, b);
    CHECK(v == iou3d(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    const double th = ang(rng);
    auto rot = [th](BoundingBox3D x) {
      const double c = std::cos(th), s = std::sin(th);
      const double px = x.cx, py = x.cy;
      x.cx = c * px - s * py;
      x.cy = s * px + c * py;
      x.yaw = wrap_angle(x.yaw + th);
      return x;
    };
    CHECK(std::abs(iou3d(rot(a), rot(b)) - v) < 1e-9);
  }
}

TEST_CASE("nms fixtures") {
  const auto a = box(0, 0, 0, 4, 2, 1.5, 0);
  const std::vector<Detection> same{det(a, 0.9), det(a, 0.8)};
  CHECK(nms(same, 0.1) == std::vector<std::size_t>{0});
  const std::vector<Detection> apart{det(a, 0.2), det(shifted(a, 10), 0.9), det(shifted(a, 20), 0.5)};
  CHECK(nms(apart, 0.1) == std::vector<std::size_t>{1, 2, 0});
  // equal scores keep the lower index
  const std::vector<Detection> tie{det(shifted(a, 0.5), 0.7), det(a, 0.7)};
  CHECK(nms(tie, 0.1) == std::vector<std::size_t>{0});
}

TEST_CASE("nms matches the quadratic reference on random sets") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> score(0, 1);
  std::uniform_int_distribution<int> count(0, 30);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection> dets;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) dets.push_back(det(random_box(rng, 4.0), std::round(score(rng) * 20) / 20));
    const double thresh = 0.05 + 0.1 * (trial % 5);
    const auto kept = nms(dets, thresh);
    CHECK(kept == nms_reference(dets, thresh));
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j)
        CHECK(bev_iou(dets[kept[i]].box, dets[kept[j]].box) <= thresh);
  }
}

TEST_CASE("ap of three detections over two gts") {
  const auto fx = ap_fixtures();
  // PR points (1/2, 1), (1/2, 1/2), (1, 2/3): 20 levels at 1, 20 at 2/3
  const double ap = average_precision(fx[0], ObjectClass::Car, RegionSpec::all_area(), 0.5).ap;
  CHECK(ap == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("ap equals the exhaustive threshold reference") {
  const auto fx = ap_fixtures();
  for (std::size_t i = 0; i < fx.size(); ++i) {
    CAPTURE(i);
    for (ObjectClass c : {ObjectClass::Car, ObjectClass::Pedestrian}) {
      const auto r = average_precision(fx[i], c, RegionSpec::all_area(), c == ObjectClass::Car ? 0.5 : 0.25);
      if (!r.defined()) continue;
      CHECK(r.ap == ap_reference(fx[i], c, RegionSpec::all_area(), c == ObjectClass::Car ? 0.5 : 0.25));
    }
  }
}

TEST_CASE("ap limits") {
  const auto fx = ap_fixtures();
  for (const auto& frames : fx) {
    std::vector<FrameResult> perfect = frames, none = frames;
    for (auto& f : perfect) {
      f.dets.clear();
      for (std::size_t g = 0; g < f.gts.size(); ++g) f.dets.push_back(det(f.gts[g], 0.1 + 0.01 * g));
    }
    for (auto& f : none) f.dets.clear();
    const auto full = evaluate(perfect, std::vector{RegionSpec::all_area()});
    const auto empty = evaluate(none, std::vector{RegionSpec::all_area()});
    for (ObjectClass c : kAllClasses) {
      const auto& p = full.regions[0].per_class[static_cast<int>(c)];
      const auto& z = empty.regions[0].per_class[static_cast<int>(c)];
      if (p.defined()) {
        CHECK(p.ap == 1.0);
        CHECK(z.ap == 0.0);
      } else {
        CHECK(std::isnan(p.ap));
      }
    }
    CHECK(full.regions[0].map == 1.0);
  }
}

TEST_CASE("adding a top-scored true positive never lowers ap") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> score(0, 0.9), pos(-20, 20);
  for (int trial = 0; trial < 50; ++trial) {
    FrameResult f;
    for (int g = 0; g < 6; ++g) f.gts.push_back(box(pos(rng), pos(rng), 0, 4, 2, 1.5, 0));
    for (int d = 0; d < 6; ++d) {
      const bool hit = score(rng) < 0.45;
      f.dets.push_back(det(hit ? shifted(f.gts[d], 0.3) : box(pos(rng), pos(rng), 0, 4, 2, 1.5, 0), score(rng)));
    }
    const std::vector<FrameResult> before{f};
    const double ap0 = average_precision(before, ObjectClass::Car, RegionSpec::all_area(), 0.5).ap;
    // pick a gt not yet covered by a matching detection at IoU >= 0.5
    for (std::size_t g = 0; g < f.gts.size(); ++g) {
      bool covered = false;
      for (const auto& d : f.dets) covered |= iou3d(d.box, f.gts[g]) >= 0.5;
      if (covered) continue;
      f.dets.push_back(det(f.gts[g], 0.95));
      break;
    }
    const std::vector<FrameResult> after{f};
    CHECK(average_precision(after, ObjectClass::Car, RegionSpec::all_area(), 0.5).ap >= ap0);
  }
}

TEST_CASE("regions") {
  const auto fx = ap_fixtures();
  RegionSpec wide = RegionSpec::all_area();
  wide.name = "driving_corridor";
  const std::vector<RegionSpec> both{RegionSpec::all_area(), wide};
  for (const auto& frames : fx) {
    const auto r = evaluate(frames, both);
    for (int c = 0; c < static_cast<int>(kNumClasses); ++c) {
      const double a = r.region("all_area").per_class[c].ap, b = r.region("driving_corridor").per_class[c].ap;
      CHECK(((std::isnan(a) && std::isnan(b)) || a == b));
    }
  }
  // detections only inside the corridor, gts everywhere
  std::vector<FrameResult> frames(1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> x(-30, 30), y(-15, 15);
  for (int i = 0; i < 20; ++i) {
    const auto g = box(x(rng), y(rng), 0, 4, 2, 1.5, 0);
    frames[0].gts.push_back(g);
    if (RegionSpec::driving_corridor().contains(g)) frames[0].dets.push_back(det(g, 0.5 + 0.01 * i));
  }
  frames[0].gts.push_back(box(10, 0, 0, 4, 2, 1.5, 0));
  frames[0].dets.push_back(det(box(10, 0, 0, 4, 2, 1.5, 0), 0.3));
  const auto r = evaluate(frames, std::vector{RegionSpec::all_area(), RegionSpec::driving_corridor()});
  const auto corridor = RegionSpec::driving_corridor();
  CHECK(r.region("driving_corridor").per_class[0].ap >= r.region("all_area").per_class[0].ap);
  CHECK(r.region("driving_corridor").per_class[0].ap == ap_reference(frames, ObjectClass::Car, corridor, 0.5));
  CHECK(r.region("all_area").per_class[0].ap == ap_reference(frames, ObjectClass::Car, RegionSpec::all_area(), 0.5));
  CHECK(corridor.contains(box(0, 4, 0, 1, 1, 1, 0)));
  CHECK(corridor.contains(box(25, -4, 0, 1, 1, 1, 0)));
  CHECK_FALSE(corridor.contains(box(25.01, 0, 0, 1, 1, 1, 0)));
  CHECK_THROWS_AS(r.region("nowhere"), std::out_of_range);
}

TEST_CASE("report and detection files") {
  const auto fx = ap_fixtures();
  const auto r = evaluate(fx[0], std::vector{RegionSpec::all_area()});
  const std::string csv = report_csv(r);
  CHECK(csv.rfind("region,class,ap,num_gt,num_det\n", 0) == 0);
  CHECK(csv.find("all_area,Car,0.833333,2,3\n") != std::string::npos);
  CHECK(csv.find("all_area,Pedestrian,nan,0,0\n") != std::string::npos);
  const auto path = testing_support::temp_path("report.csv");
  write_report_csv(r, path);
  std::ifstream in(path);
  CHECK(std::string(std::istreambuf_iterator<char>(in), {}) == csv);

  std::vector<Detection> dets;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> s(0, 1);
  for (int i = 0; i < 10; ++i) {
    auto b = random_box(rng, 20);
    b.class_id = kAllClasses[i % kNumClasses];
    dets.push_back(det(b, s(rng)));
  }
  const auto dpath = testing_support::temp_path("dets.txt");
  write_detections(dets, dpath);
  const auto back = read_detections(dpath);
  REQUIRE(back.size() == dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    CHECK(back[i].box.class_id == dets[i].box.class_id);
    CHECK(std::abs(back[i].score - dets[i].score) <= 1e-6);
    CHECK(std::abs(back[i].box.cx - dets[i].box.cx) <= 1e-6);
    CHECK(std::abs(back[i].box.yaw - dets[i].box.yaw) <= 1e-6);
  }
}

TEST_CASE("box encoding round trip") {
  const AnchorSet anchors;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> off(-0.5, 0.5), size(0.3, 9.0), yaw(-3.14159, 3.14159);
  for (int i = 0; i < 500; ++i) {
    const double x = 10 + off(rng) * 10, y = off(rng) * 10;
    const auto b = box(x + off(rng), y + off(rng), off(rng), size(rng), size(rng), size(rng), yaw(rng),
                       kAllClasses[i % kNumClasses]);
    const auto enc = encode_box(b, x, y, anchors);
    const auto d = decode_box(enc, x, y, b.class_id, anchors);
    CHECK(std::abs(d.cx - b.cx) < 1e-9);
    CHECK(std::abs(d.cy - b.cy) < 1e-9);
    CHECK(std::abs(d.cz - b.cz) < 1e-9);
    CHECK(std::abs(d.l - b.l) < 1e-9);
    CHECK(std::abs(d.w - b.w) < 1e-9);
    CHECK(std::abs(d.h - b.h) < 1e-9);
    CHECK(std::abs(d.yaw - b.yaw) < 1e-9);
    CHECK(d.class_id == b.class_id);
  }
  CHECK(canonical_yaw(std::numbers::pi) == 0.0);
  CHECK(canonical_yaw(-std::numbers::pi / 2) == doctest::Approx(std::numbers::pi / 2));
  CHECK(canonical_yaw(2.0) == doctest::Approx(2.0 - std::numbers::pi));
}

TEST_CASE("zero head decodes anchors at cell centres") {
  HeadConfig cfg;
  projection::GridSpec grid;
  grid.min0 = 0, grid.max0 = 4, grid.min1 = -2, grid.max1 = 2, grid.cell0 = 1, grid.cell1 = 1;
  nn::Rng rng(1);
  nn::Parameters p;
  init_head(p, cfg, 3, rng);
  for (auto& [name, v] : p) v = Tensor(v.shape());
  Tape t;
  const std::vector<std::int64_t> cells{0, 5, 15};
  std::mt19937_64 r2(2);
  const auto out = head_at_cells(t, p, cfg, t.constant(random_tensor({3, 4, 4}, r2)), cells);
  const auto dets = decode_cells(t.value(out), cells, grid, cfg);
  REQUIRE(dets.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto c = projection::pillar_center(cells[k], grid);
    CHECK(dets[k].box == cfg.anchors.anchor(ObjectClass::Car, c[0], c[1]));
    CHECK(dets[k].score == 0.5 * 0.25);
  }
}

TEST_CASE("head at cells matches the dense head") {
  HeadConfig cfg;
  nn::Rng rng(3);
  nn::Parameters p;
  init_head(p, cfg, 5, rng);
  std::mt19937_64 r2(4);
  const Tensor feat = random_tensor({5, 4, 4}, r2);
  Tape t;
  const auto x = t.constant(feat);
  const auto dense = head_forward(t, p, cfg, x);
  const std::vector<std::int64_t> cells{1, 6, 14};
  const auto sparse = head_at_cells(t, p, cfg, x, cells);
  const Tensor d = t.value(dense), s = t.value(sparse);
  for (std::size_t k = 0; k < cells.size(); ++k)
    for (std::size_t c = 0; c < kHeadChannels; ++c)
      CHECK(s[k * kHeadChannels + c] == doctest::Approx(d[c * 16 + cells[k]]).epsilon(1e-12));
  CHECK_THROWS_AS(head_at_cells(t, p, cfg, t.constant(Tensor({4, 4, 4})), cells), std::invalid_argument);
}

TEST_CASE("targets label cells holding points of a gt box") {
  HeadConfig cfg;
  projection::GridSpec grid;
  grid.min0 = 0, grid.max0 = 4, grid.min1 = -2, grid.max1 = 2, grid.cell0 = 1, grid.cell1 = 1;
  const std::vector<BoundingBox3D> gts{box(0.5, -1.5, 0, 0.6, 0.6, 1.7, std::numbers::pi, ObjectClass::Pedestrian)};
  const std::vector<Vec3> pts{{0.5, -1.5, 0}, {2.5, 1.5, 0}, {0.6, -1.4, 0.2}};
  const std::vector<std::int64_t> pc{0, 15, 0};
  const std::vector<std::int64_t> cells{0, 15};
  const auto tg = assign_targets(pts, pc, cells, gts, grid, cfg);
  CHECK(tg.num_positive == 1);
  CHECK(tg.objectness == std::vector<double>{1, 0});
  CHECK(tg.label[0] == static_cast<int>(ObjectClass::Pedestrian));
  CHECK(tg.matched_box == std::vector<int>{0, -1});
  // yaw pi is folded to 0 before encoding
  CHECK(tg.reg[6] == 0.0);
  CHECK(tg.reg[7] == 1.0);
  CHECK_THROWS_AS(assign_targets(pts, std::vector<std::int64_t>{0}, cells, gts, grid, cfg), std::invalid_argument);
}

TEST_CASE("head loss gradients on a 4x4 map") {
  HeadConfig cfg;
  projection::GridSpec grid;
  grid.min0 = 0, grid.max0 = 4, grid.min1 = -2, grid.max1 = 2, grid.cell0 = 1, grid.cell1 = 1;
  nn::Rng rng(21);
  nn::Parameters p;
  init_head(p, cfg, 3, rng);
  std::mt19937_64 r2(22);
  p["feat"] = random_tensor({3, 4, 4}, r2);
  std::vector<std::int64_t> cells(16);
  for (int i = 0; i < 16; ++i) cells[i] = i;
  const std::vector<BoundingBox3D> gts{box(1.5, 0.5, -0.7, 4, 1.8, 1.6, 0.4),
                                       box(3.5, -1.5, -0.6, 1.8, 0.6, 1.7, -1.0, ObjectClass::Cyclist)};
  std::vector<Vec3> pts;
  std::vector<std::int64_t> pc;
  for (int i = 0; i < 16; ++i) {
    const auto c = projection::pillar_center(i, grid);
    pts.push_back({c[0], c[1], -0.7});
    pc.push_back(i);
  }
  const auto tg = assign_targets(pts, pc, cells, gts, grid, cfg);
  REQUIRE(tg.num_positive >= 2);
  const auto report = testing_support::check_graph(p, [&](Tape& t, const nn::Parameters& q) {
    const auto out = head_at_cells(t, q, cfg, t.parameter("feat", q.at("feat")), cells);
    return head_loss(t, out, tg, cfg).total;
  });
  MESSAGE("max rel error " << report.max_rel_error);
  CHECK(report.passed());
}
