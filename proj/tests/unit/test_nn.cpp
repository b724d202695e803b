#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "doctest.h"
#include "mufasa/nn/adam.hpp"
#include "mufasa/nn/checkpoint.hpp"
#include "mufasa/nn/gradcheck.hpp"
#include "mufasa/nn/mlp.hpp"
#include "nn_support.hpp"
#include "support.hpp"

using namespace mufasa::nn;
using testing_support::check_graph;
using testing_support::random_tensor;
using testing_support::weighted_sum;

namespace {

Var P(Tape& t, const Parameters& p, const std::string& name) { return t.parameter(name, p.at(name)); }

void require_pass(const GradCheckReport& r) {
  INFO("max rel error " << r.max_rel_error << ", failures " << r.failures.size());
  CHECK(r.passed());
  CHECK(r.max_rel_error < 1e-4);
}

}  // namespace

TEST_CASE("tensor construction validates sizes") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), std::invalid_argument);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5);
  CHECK(Tensor::scalar(4).item() == 4);
}

TEST_CASE("tape is single use") {
  Tape t;
  const Var x = t.parameter("x", Tensor::scalar(2));
  const Var y = mul(t, x, x);
  t.backward(y);
  CHECK(t.gradients().at("x").item() == 4.0);
  CHECK_THROWS(t.backward(y));
}

TEST_CASE("mlp zero and identity") {
  Rng rng(1);
  Parameters p;
  MlpSpec spec{{4, 6, 3}};
  init_mlp(p, "m", spec, rng, Init::Zero);
  std::mt19937_64 r2(2);
  Tape t;
  const Var x = t.constant(random_tensor({5, 4}, r2));
  const Var y = mlp_forward(t, p, "m", spec, x);
  for (double v : t.value(y).values()) CHECK(v == 0.0);

  Parameters q;
  MlpSpec id{{4, 4}};
  init_mlp(q, "id", id, rng, Init::Identity);
  Tape t2;
  const Tensor xin = random_tensor({3, 4}, r2);
  const Var y2 = mlp_forward(t2, q, "id", id, t2.constant(xin));
  CHECK(t2.value(y2) == xin);

  Tape t3;
  CHECK_THROWS_AS(mlp_forward(t3, q, "id", id, t3.constant(Tensor({3, 5}))), std::invalid_argument);
}

TEST_CASE("mlp rows are independent") {
  Rng rng(3);
  Parameters p;
  MlpSpec spec{{3, 8, 2}};
  init_mlp(p, "m", spec, rng);
  std::mt19937_64 r2(4);
  const Tensor x = random_tensor({4, 3}, r2);
  Tape t;
  const Tensor full = t.value(mlp_forward(t, p, "m", spec, t.constant(x)));
  for (std::size_t r = 0; r < 4; ++r) {
    Tape s;
    Tensor row({1, 3}, std::vector<double>(x.data() + 3 * r, x.data() + 3 * r + 3));
    const Tensor one = s.value(mlp_forward(s, p, "m", spec, s.constant(row)));
    CHECK(one[0] == full.at(r, 0));
    CHECK(one[1] == full.at(r, 1));
  }
}

TEST_CASE("mlp gradient check") {
  Rng rng(5);
  Parameters p;
  MlpSpec spec{{3, 7, 5, 2}};
  init_mlp(p, "m", spec, rng);
  std::mt19937_64 r2(6);
  for (auto& [n, v] : p)
    if (n.ends_with("bias")) v = random_tensor(v.shape(), r2, -0.3, 0.3);
  p["x"] = random_tensor({6, 3}, r2);
  require_pass(check_graph(p, [&](Tape& t, const Parameters& q) {
    return weighted_sum(t, mlp_forward(t, q, "m", spec, P(t, q, "x")));
  }));
}

TEST_CASE("elementwise and structural ops gradient check") {
  std::mt19937_64 rng(7);
  Parameters p;
  p["a"] = random_tensor({3, 4}, rng);
  p["b"] = random_tensor({3, 4}, rng);
  p["c"] = random_tensor({4, 5}, rng);
  p["d"] = random_tensor({6, 4}, rng);
  require_pass(check_graph(p, [](Tape& t, const Parameters& q) {
    const Var a = P(t, q, "a"), b = P(t, q, "b");
    const Var e = add(t, mul(t, a, b), scale(t, relu(t, a), 0.7));
    const Var m = matmul(t, e, P(t, q, "c"));
    const Var nt = matmul_nt(t, transpose(t, transpose(t, e)), P(t, q, "d"));
    const std::array<Var, 2> parts{m, reshape(t, nt, {3, 6})};
    const Var cat = concat_cols(t, parts);
    const Var sl = slice_cols(t, cat, 2, 9);
    const std::vector<std::size_t> rows{2, 0, 2, 1};
    return weighted_sum(t, gather_rows(t, sl, rows));
  }));
}

TEST_CASE("maxpool rows") {
  Tape t;
  const Tensor x({3, 2}, std::vector<double>{1, 5, 4, 2, 4, 0});
  const Var y = maxpool_rows(t, t.constant(x));
  CHECK(t.value(y) == Tensor({2}, std::vector<double>{4, 5}));
  Tape t1;
  const Tensor row({1, 3}, std::vector<double>{1, -2, 3});
  CHECK(t1.value(maxpool_rows(t1, t1.constant(row))).values()[1] == -2);
  Tape t2;
  CHECK_THROWS(maxpool_rows(t2, t2.constant(Tensor({0, 3}))));

  // Ties: only the lowest argmax row receives the gradient.
  Tape t3;
  const Var xp = t3.parameter("x", x);
  t3.backward(sum(t3, maxpool_rows(t3, xp)));
  const auto g = t3.gradients().at("x");
  CHECK(g == Tensor({3, 2}, std::vector<double>{0, 1, 1, 0, 0, 0}));

  std::mt19937_64 rng(8);
  Parameters p;
  p["x"] = random_tensor({7, 5}, rng);
  require_pass(check_graph(p, [](Tape& t, const Parameters& q) { return weighted_sum(t, maxpool_rows(t, P(t, q, "x"))); }));

  // permuted rows pool identically
  Tensor perm({7, 5});
  const std::size_t order[] = {3, 6, 0, 1, 5, 2, 4};
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 5; ++c) perm.at(r, c) = p["x"].at(order[r], c);
  Tape a, b;
  CHECK(a.value(maxpool_rows(a, a.constant(p["x"]))) == b.value(maxpool_rows(b, b.constant(perm))));
}

TEST_CASE("segment max") {
  std::mt19937_64 rng(9);
  Parameters p;
  p["x"] = random_tensor({8, 3}, rng);
  const std::vector<std::size_t> seg{0, 2, 2, 0, 3, 2, 0, 3};
  Tape t;
  const Tensor y = t.value(segment_max(t, t.constant(p["x"]), seg, 5));
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(y.at(1, c) == 0.0);
    CHECK(y.at(4, c) == 0.0);
    CHECK(y.at(0, c) == std::max({p["x"].at(0, c), p["x"].at(3, c), p["x"].at(6, c)}));
  }
  require_pass(check_graph(p, [&](Tape& t, const Parameters& q) { return weighted_sum(t, segment_max(t, P(t, q, "x"), seg, 5)); }));
}

TEST_CASE("softmax") {
  Tape t;
  const Var y = softmax(t, t.constant(Tensor({4}, std::vector<double>{1, 1, 1, 1})), 0);
  for (double v : t.value(y).values()) CHECK(v == 0.25);

  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({3, 5}, rng, -3, 3);
  Tensor shifted = x;
  for (double& v : shifted.values()) v += 17.25;
  for (std::size_t axis : {0u, 1u}) {
    Tape a, b;
    const Tensor ya = a.value(softmax(a, a.constant(x), axis));
    const Tensor yb = b.value(softmax(b, b.constant(shifted), axis));
    for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == doctest::Approx(yb[i]).epsilon(1e-12));
  }
  Tape s;
  const Tensor rows = s.value(softmax(s, s.constant(x), 1));
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 5; ++c) total += rows.at(r, c);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  Parameters p;
  p["x"] = x;
  for (std::size_t axis : {0u, 1u})
    require_pass(check_graph(p, [axis](Tape& t, const Parameters& q) { return weighted_sum(t, softmax(t, P(t, q, "x"), axis)); }));
}

TEST_CASE("normalize_sum gradient check") {
  std::mt19937_64 rng(11);
  Parameters p;
  p["x"] = random_tensor({4, 3}, rng, 0.2, 2.0);
  for (std::size_t axis : {0u, 1u})
    require_pass(check_graph(p, [axis](Tape& t, const Parameters& q) { return weighted_sum(t, normalize_sum(t, P(t, q, "x"), axis)); }));
}

TEST_CASE("conv2d fixtures") {
  std::mt19937_64 rng(12);
  const Tensor img = random_tensor({2, 4, 5}, rng);
  Tensor w({2, 2, 1, 1});
  w[0] = 1, w[3] = 1;
  Tape t;
  CHECK(t.value(conv2d(t, t.constant(img), t.constant(w), t.constant(Tensor({2})))) == img);

  Tensor impulse({1, 5, 5});
  impulse[12] = 1.0;
  Tape t2;
  const Tensor out = t2.value(conv2d(t2, t2.constant(impulse), t2.constant(Tensor({1, 1, 3, 3}, 1.0)), t2.constant(Tensor({1}))));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      const bool plateau = r >= 1 && r <= 3 && c >= 1 && c <= 3;
      CHECK(out[r * 5 + c] == (plateau ? 1.0 : 0.0));
    }

  Tape t3;
  CHECK_THROWS(conv2d(t3, t3.constant(img), t3.constant(Tensor({2, 3, 3, 3})), t3.constant(Tensor({2}))));
  Tape t4;
  CHECK_THROWS(conv2d(t4, t4.constant(img), t4.constant(Tensor({2, 2, 2, 2})), t4.constant(Tensor({2}))));
}

TEST_CASE("conv2d gradient check") {
  std::mt19937_64 rng(13);
  Parameters p;
  p["img"] = random_tensor({1, 4, 4}, rng);
  p["w"] = random_tensor({3, 1, 3, 3}, rng);
  p["b"] = random_tensor({3}, rng);
  require_pass(check_graph(p, [](Tape& t, const Parameters& q) {
    return weighted_sum(t, conv2d(t, P(t, q, "img"), P(t, q, "w"), P(t, q, "b")));
  }));
  Parameters p2;
  p2["img"] = random_tensor({2, 3, 5}, rng);
  p2["w"] = random_tensor({2, 2, 3, 3}, rng);
  p2["b"] = random_tensor({2}, rng);
  require_pass(check_graph(p2, [](Tape& t, const Parameters& q) {
    return weighted_sum(t, relu(t, conv2d(t, P(t, q, "img"), P(t, q, "w"), P(t, q, "b"))));
  }));
}

TEST_CASE("scatter and gather") {
  std::mt19937_64 rng(14);
  Parameters p;
  p["rows"] = random_tensor({5, 3}, rng);
  p["img"] = random_tensor({3, 2, 3}, rng);
  const std::vector<std::int64_t> cells{4, -1, 0, 4, 5};
  Tape t;
  const Tensor grid = t.value(scatter_to_grid(t, t.constant(p["rows"]), cells, 2, 3));
  CHECK(grid[0 * 6 + 4] == doctest::Approx(p["rows"].at(0, 0) + p["rows"].at(3, 0)));
  CHECK(grid[1 * 6 + 1] == 0.0);
  const Tensor back = t.value(gather_from_grid(t, t.constant(p["img"]), cells));
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(back.at(1, c) == 0.0);
    CHECK(back.at(0, c) == back.at(3, c));
    CHECK(back.at(4, c) == p["img"][c * 6 + 5]);
  }
  require_pass(check_graph(p, [&](Tape& t, const Parameters& q) {
    const Var s = scatter_to_grid(t, P(t, q, "rows"), cells, 2, 3);
    const Var g = gather_from_grid(t, add(t, P(t, q, "img"), s), cells);
    return weighted_sum(t, g);
  }));
}

TEST_CASE("losses gradient check") {
  std::mt19937_64 rng(15);
  Parameters p;
  p["logit"] = random_tensor({6}, rng, -3, 3);
  p["cls"] = random_tensor({6, 4}, rng, -2, 2);
  p["reg"] = random_tensor({6, 3}, rng, -2, 2);
  const std::vector<double> y01{1, 0, 0, 1, 0, 1}, soft{0.2, 0.9, 0.5, 0.0, 1.0, 0.7};
  const std::vector<double> w{1, 0.5, 2, 1, 0, 1};
  const std::vector<int> labels{0, 3, 1, 2, 2, 0};
  const Tensor target = random_tensor({6, 3}, rng, -2, 2);
  require_pass(check_graph(p, [&](Tape& t, const Parameters& q) {
    const Var f = sigmoid_focal_loss(t, P(t, q, "logit"), y01, w, 0.25, 2.0);
    const Var c = softmax_cross_entropy(t, P(t, q, "cls"), labels, w);
    const Var r = smooth_l1(t, P(t, q, "reg"), target, w, 1.0 / 9.0);
    const Var b = bce_with_logits(t, P(t, q, "logit"), soft, w);
    return add(t, add(t, f, c), add(t, r, b));
  }));
}

TEST_CASE("loss values") {
  Tape t;
  const Var x = t.constant(Tensor({2}, std::vector<double>{0.0, 0.0}));
  const std::vector<double> y{1, 0}, w{1, 1};
  // focal at p = 0.5: alpha (1-p)^2 (-log p) + (1-alpha) p^2 (-log(1-p))
  const double expect = 0.25 * 0.25 * std::log(2.0) + 0.75 * 0.25 * std::log(2.0);
  CHECK(t.value(sigmoid_focal_loss(t, x, y, w, 0.25, 2.0)).item() == doctest::Approx(expect));
  CHECK(t.value(bce_with_logits(t, x, y, w)).item() == doctest::Approx(2 * std::log(2.0)));
  const Var l = t.constant(Tensor({1, 3}, std::vector<double>{1, 1, 1}));
  const std::vector<int> lab{2};
  const std::vector<double> one{1};
  CHECK(t.value(softmax_cross_entropy(t, l, lab, one)).item() == doctest::Approx(std::log(3.0)));
  const Var pr = t.constant(Tensor({1, 2}, std::vector<double>{0.0, 3.0}));
  const Tensor tg({1, 2}, std::vector<double>{0.05, 0.0});
  // 0.5 d^2 / beta below beta, |d| - beta / 2 above
  CHECK(t.value(smooth_l1(t, pr, tg, one, 0.1)).item() == doctest::Approx(0.5 * 0.0025 / 0.1 + 3.0 - 0.05));
}

TEST_CASE("adam") {
  Parameters p{{"w", Tensor({3}, std::vector<double>{1, -2, 3})}};
  const Parameters before = p;
  AdamState st;
  st.config.lr = 0.1;
  adam_step(st, p, {{"w", Tensor({3})}});
  CHECK(p == before);
  CHECK(st.step == 1);

  Parameters s{{"s", Tensor::scalar(0.0)}};
  AdamState one;
  one.config.lr = 0.01;
  adam_step(one, s, {{"s", Tensor::scalar(1.0)}});
  CHECK(s.at("s").item() == doctest::Approx(-0.01).epsilon(1e-6));

  Parameters bad{{"q", Tensor::scalar(1.0)}};
  AdamState bs;
  try {
    adam_step(bs, bad, {{"q", Tensor::scalar(std::nan(""))}});
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("'q'") != std::string::npos);
  }
  CHECK(bad.at("q").item() == 1.0);
}

TEST_CASE("adam on a scalar quadratic") {
  // Reference: the textbook recurrence, simulated separately.
  double w_ref = 0, m = 0, v = 0;
  Parameters p{{"w", Tensor::scalar(0.0)}};
  AdamState st;
  st.config.lr = 0.1;
  std::vector<double> dist;
  for (int k = 1; k <= 50; ++k) {
    const double g = 2 * (w_ref - 3);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w_ref -= 0.1 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
    adam_step(st, p, {{"w", Tensor::scalar(2 * (p.at("w").item() - 3))}});
    CHECK(p.at("w").item() == doctest::Approx(w_ref).epsilon(1e-12));
    dist.push_back(std::abs(p.at("w").item() - 3));
  }
  for (std::size_t i = 10; i + 1 < 30; ++i) CHECK(dist[i + 1] < dist[i]);
  CHECK(dist.back() < 0.5);
}

TEST_CASE("adam weight decay modes") {
  Parameters p{{"w", Tensor::scalar(2.0)}};
  AdamState st;
  st.config.lr = 0.1;
  st.config.weight_decay = 0.5;
  adam_step(st, p, {{"w", Tensor::scalar(0.0)}});
  CHECK(p.at("w").item() == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  Parameters q{{"w", Tensor::scalar(2.0)}};
  AdamState cs;
  cs.config.lr = 0.1;
  cs.config.weight_decay = 0.5;
  cs.config.decoupled = false;
  adam_step(cs, q, {{"w", Tensor::scalar(0.0)}});
  CHECK(q.at("w").item() == doctest::Approx(2.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("grad_check harness") {
  Parameters p{{"x", Tensor({3}, std::vector<double>{0.5, -1.0, 2.0})}};
  // f = x^T A x with A symmetric
  const double A[3][3] = {{2, 0.5, 0}, {0.5, 1, -0.3}, {0, -0.3, 3}};
  auto quad = [&](bool corrupt) {
    return [&, corrupt](const Parameters& q, Parameters* g) {
      const auto& x = q.at("x");
      double f = 0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) f += x[i] * A[i][j] * x[j];
      if (g) {
        Tensor gx({3});
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) gx[i] += 2 * A[i][j] * x[j];
        if (corrupt) gx[1] += 0.1;
        (*g)["x"] = gx;
      }
      return f;
    };
  };
  GradCheckOptions opt;
  opt.tol = 1e-6;
  CHECK(grad_check(quad(false), p, opt).passed());
  const auto bad = grad_check(quad(true), p, opt);
  CHECK_FALSE(bad.passed());
  REQUIRE(bad.failures.size() == 1);
  CHECK(bad.failures[0].index == 1);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(16);
  Parameters p;
  init_mlp(p, "enc", {{10, 16, 4}}, rng);
  init_conv(p, "conv0", 4, 4, 3, rng);
  p["odd"] = Tensor({2}, std::vector<double>{-0.0, 1e-310});
  const auto path = testing_support::temp_path("ckpt.bin");
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  REQUIRE(q.size() == p.size());
  for (const auto& [name, t] : p) {
    REQUIRE(q.count(name));
    CHECK(q.at(name).shape() == t.shape());
    CHECK(std::memcmp(q.at(name).data(), t.data(), t.size() * sizeof(double)) == 0);
  }
  const auto junk = testing_support::temp_path("junk.bin");
  { std::ofstream(junk) << "not a checkpoint"; }
  CHECK_THROWS(load_checkpoint(junk));
}

TEST_CASE("forward determinism") {
  Rng a(17), b(17);
  Parameters p, q;
  MlpSpec spec{{5, 9, 3}};
  init_mlp(p, "m", spec, a);
  init_mlp(q, "m", spec, b);
  CHECK(p == q);
}
