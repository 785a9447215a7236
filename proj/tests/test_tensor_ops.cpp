#include <doctest.h>

#include <cmath>
#include <vector>

#include "faithcam/ops.hpp"
#include "support/gradcheck.hpp"

using namespace faithcam;
using faithcam::testing::CheckedOp;

namespace {

Tensor<float> leaf(Shape s, std::vector<float> v) {
  Tensor<float> t(std::move(s), std::move(v));
  t.set_requires_grad(true);
  return t;
}

std::vector<float> to_vec(std::span<const float> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("shape and tensor invariants") {
  CHECK_THROWS_AS(Shape({}), ShapeError);
  CHECK_THROWS_AS(Shape({1, 2, 3, 4, 5}), ShapeError);
  CHECK_THROWS_AS(Shape({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);

  Tensor<float> t(Shape{2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.shape().str() == "2x3");
  CHECK_FALSE(t.has_grad());
  CHECK(t.mutable_grad().size() == t.numel());

  Tensor<float> alias = t;
  alias.data()[0] = 7.0f;
  CHECK(t.data()[0] == 7.0f);
  Tensor<float> copy = t.clone();
  copy.data()[0] = 0.0f;
  CHECK(t.data()[0] == 7.0f);
  CHECK_FALSE(copy.has_grad());
}

TEST_CASE("conv2d examples") {
  Tape<float> tape;
  SUBCASE("identity kernel") {
    Tensor<float> x(Shape{1, 1, 3, 3}, 1.0f);
    Tensor<float> w(Shape{1, 1, 1, 1}, 1.0f);
    Tensor<float> b(Shape{1}, 0.0f);
    auto y = conv2d(tape, x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (float v : y.data()) CHECK(v == 1.0f);
  }
  SUBCASE("full-window sum") {
    Tensor<float> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor<float> w(Shape{1, 1, 2, 2}, 1.0f);
    Tensor<float> b(Shape{1}, 0.0f);
    auto y = conv2d(tape, x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.data()[0] == 10.0f);
  }
  SUBCASE("output extent and bias") {
    Tensor<float> x(Shape{2, 3, 7, 5}, 0.0f);
    Tensor<float> w(Shape{4, 3, 3, 3}, 0.0f);
    Tensor<float> b(Shape{4}, {1, 2, 3, 4});
    auto y = conv2d(tape, x, w, b, 2, 1);
    CHECK(y.shape() == Shape{2, 4, 4, 3});
    CHECK(y.data()[1 * 4 * 3] == 2.0f);
  }
  SUBCASE("hand-computed padded stride-2 output") {
    // 1x1x3x3 input 1..9, kernel [[1,0],[0,-1]], pad 1, stride 2.
    Tensor<float> x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor<float> w(Shape{1, 1, 2, 2}, {1, 0, 0, -1});
    Tensor<float> b(Shape{1}, 0.5f);
    auto y = conv2d(tape, x, w, b, 2, 1);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    // Output (0,0): window rows -1..0, cols -1..0 -> 0*1 + 1*(-1) = -1.
    // (0,1): rows -1..0, cols 1..2 -> 0 - 3; (1,0): rows 1..2, cols -1..0 -> 0 - 7;
    // (1,1): rows 1..2, cols 1..2 -> 5 - 9.
    CHECK(to_vec(y.data()) == std::vector<float>{-0.5f, -2.5f, -6.5f, -3.5f});
  }
  SUBCASE("shape errors name the dimensions") {
    Tensor<float> x(Shape{1, 2, 4, 4});
    Tensor<float> w(Shape{1, 3, 3, 3});
    Tensor<float> b(Shape{1});
    CHECK_THROWS_WITH_AS(conv2d(tape, x, w, b, 1, 0), doctest::Contains("2 channels"), ShapeError);
    Tensor<float> w5(Shape{1, 2, 5, 5});
    CHECK_THROWS_AS(conv2d(tape, x, w5, b, 1, 0), ShapeError);
    Tensor<float> w2(Shape{1, 2, 3, 3});
    Tensor<float> b2(Shape{2});
    CHECK_THROWS_AS(conv2d(tape, x, w2, b2, 1, 0), ShapeError);
    CHECK_THROWS_AS(conv2d(tape, x, w2, b, 0, 0), ShapeError);
  }
}

TEST_CASE("conv2d finite differences on the 1x2x5x5 / 3x2x3x3 case") {
  Rng rng(11);
  using faithcam::testing::Leaf;
  std::vector<Leaf> leaves = {faithcam::testing::random_leaf(rng, Shape{1, 2, 5, 5}),
                              faithcam::testing::random_leaf(rng, Shape{3, 2, 3, 3}),
                              faithcam::testing::random_leaf(rng, Shape{3})};
  for (std::size_t pad : {0, 1}) {
    auto build = [pad](auto& tape, auto& x) { return conv2d(tape, x[0], x[1], x[2], 1, pad); };
    const auto fopt = faithcam::testing::default_options<float>();
    const auto f = faithcam::testing::check_gradients<float>(leaves, build, fopt);
    CHECK_MESSAGE(f.passed(fopt), f.worst);
    CHECK(f.checked == 50 + 54 + 3);
    const auto dopt = faithcam::testing::default_options<double>();
    const auto d = faithcam::testing::check_gradients<double>(leaves, build, dopt);
    CHECK_MESSAGE(d.passed(dopt), d.worst);
  }
}

TEST_CASE("relu examples") {
  Tape<float> tape;
  auto x = leaf(Shape{3}, {-1, 0, 2});
  auto y = relu(tape, x);
  CHECK(to_vec(y.data()) == std::vector<float>{0, 0, 2});
  tape.backward(sum(tape, y));
  CHECK(to_vec(x.grad()) == std::vector<float>{0, 0, 1});

  Tape<float> tape2;
  auto neg = leaf(Shape{2, 2}, {-1, -2, -0.5f, -3});
  auto z = relu(tape2, neg);
  tape2.backward(sum(tape2, z));
  for (float v : z.data()) CHECK(v == 0.0f);
  for (float g : neg.grad()) CHECK(g == 0.0f);
}

TEST_CASE("max_pool2d examples") {
  Tape<float> tape;
  auto x = leaf(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = max_pool2d(tape, x, 2, 2);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.data()[0] == 4.0f);

  Tape<float> tape2;
  auto c = leaf(Shape{1, 1, 4, 4}, std::vector<float>(16, 3.0f));
  auto p = max_pool2d(tape2, c, 2, 2);
  for (float v : p.data()) CHECK(v == 3.0f);
  tape2.backward(sum(tape2, p));
  const std::vector<float> expected = {1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
  CHECK(to_vec(c.grad()) == expected);

  Tape<float> tape3;
  CHECK_THROWS_AS(max_pool2d(tape3, Tensor<float>(Shape{1, 1, 2, 2}), 3, 1), ShapeError);
}

TEST_CASE("global_avg_pool examples") {
  Tape<float> tape;
  auto x = leaf(Shape{1, 1, 2, 2}, {1, 3, 5, 7});
  auto y = global_avg_pool(tape, x);
  CHECK(y.shape() == Shape{1, 1});
  CHECK(y.data()[0] == 4.0f);
  tape.backward(sum(tape, y));
  for (float g : x.grad()) CHECK(g == 0.25f);

  Tape<float> tape2;
  auto one = leaf(Shape{2, 3, 1, 1}, {1, 2, 3, 4, 5, 6});
  CHECK(to_vec(global_avg_pool(tape2, one).data()) == to_vec(one.data()));
}

TEST_CASE("affine examples") {
  Tape<float> tape;
  auto x = leaf(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<float> eye(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<float> zero_bias(Shape{3}, 0.0f);
  CHECK(to_vec(affine(tape, x, eye, zero_bias).data()) == to_vec(x.data()));

  Tensor<float> zeros(Shape{2, 3}, 0.0f);
  Tensor<float> w(Shape{2, 3}, 0.7f);
  Tensor<float> b(Shape{2}, {5, -1});
  CHECK(to_vec(affine(tape, zeros, w, b).data()) == std::vector<float>{5, -1, 5, -1});

  CHECK_THROWS_AS(affine(tape, x, Tensor<float>(Shape{2, 4}), b), ShapeError);
  CHECK_THROWS_AS(affine(tape, x, w, Tensor<float>(Shape{3})), ShapeError);
}

TEST_CASE("softmax cross-entropy examples") {
  Tape<float> tape;
  Tensor<float> big(Shape{1, 3}, {1000, 0, 0});
  const std::vector<std::size_t> label0 = {0};
  auto out = softmax_cross_entropy(tape, big, label0);
  CHECK(std::isfinite(out.loss.item()));
  CHECK(out.loss.item() == doctest::Approx(0.0).epsilon(1e-6));

  Tensor<float> uniform(Shape{2, 11}, 0.25f);
  const std::vector<std::size_t> labels = {3, 10};
  CHECK(softmax_cross_entropy(tape, uniform, labels).loss.item() == doctest::Approx(std::log(11.0)).epsilon(1e-6));
  CHECK(std::log(11.0) == doctest::Approx(2.3979).epsilon(1e-4));

  const std::vector<std::size_t> bad = {0, 11};
  CHECK_THROWS_AS(softmax_cross_entropy(tape, uniform, bad), ValueError);
  const std::vector<std::size_t> short_labels = {0};
  CHECK_THROWS(softmax_cross_entropy(tape, uniform, short_labels));

  // Backward is (softmax - onehot) / N.
  Tape<double> t2;
  Tensor<double> logits(Shape{2, 3}, {0.5, -1.0, 2.0, 0.0, 0.0, 0.0});
  logits.set_requires_grad(true);
  const std::vector<std::size_t> l2 = {2, 1};
  auto r = softmax_cross_entropy(t2, logits, l2);
  t2.backward(r.loss);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double expected = (r.probabilities.data()[i * 3 + c] - (c == l2[i] ? 1.0 : 0.0)) / 2.0;
      CHECK(logits.grad()[i * 3 + c] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax rows sum to one and stay in [0, 1]") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(6), c = 1 + rng.below(12);
    Tensor<float> logits(Shape{n, c});
    const double spread = trial < 25 ? 5.0 : 500.0;
    for (float& v : logits.data()) v = static_cast<float>(rng.uniform(-spread, spread));
    const auto p = softmax(logits);
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const float v = p.data()[i * c + j];
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        total += v;
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("backward examples and tape rules") {
  SUBCASE("sum gives ones") {
    Tape<float> tape;
    auto x = leaf(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    tape.backward(sum(tape, x));
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
  SUBCASE("two paths accumulate") {
    Tape<float> tape;
    auto x = leaf(Shape{3}, {1, -2, 3});
    tape.backward(sum(tape, add(tape, x, x)));
    for (float g : x.grad()) CHECK(g == 2.0f);
  }
  SUBCASE("non-scalar root") {
    Tape<float> tape;
    auto x = leaf(Shape{3}, {1, 2, 3});
    auto y = relu(tape, x);
    CHECK_THROWS_AS(tape.backward(y), TapeError);
  }
  SUBCASE("double backward needs reset") {
    Tape<float> tape;
    auto x = leaf(Shape{2}, {1, 2});
    auto s = sum(tape, scale(tape, x, 3.0f));
    tape.backward(s);
    CHECK(tape.backward_done());
    CHECK_THROWS_AS(tape.backward(s), TapeError);
    tape.reset();
    for (float g : x.grad()) CHECK(g == 0.0f);
    tape.backward(s);
    for (float g : x.grad()) CHECK(g == 3.0f);
  }
  SUBCASE("leaf gradients accumulate across tapes until zeroed") {
    auto x = leaf(Shape{2}, {1, 2});
    for (int i = 0; i < 2; ++i) {
      Tape<float> tape;
      tape.backward(sum(tape, x));
    }
    for (float g : x.grad()) CHECK(g == 2.0f);
    x.zero_grad();
    for (float g : x.grad()) CHECK(g == 0.0f);
  }
  SUBCASE("tensors from another tape are rejected") {
    Tape<float> a, b;
    auto x = leaf(Shape{2}, {1, 2});
    auto y = relu(a, x);
    CHECK_THROWS_AS(relu(b, y), TapeError);
    CHECK_THROWS_AS(b.backward(sum(a, y)), TapeError);
  }
  SUBCASE("topological order and one visit per node") {
    Tape<float> tape;
    auto x = leaf(Shape{1, 1, 4, 4}, std::vector<float>(16, 0.5f));
    Tensor<float> w(Shape{2, 1, 3, 3}, 0.1f);
    Tensor<float> b(Shape{2}, 0.0f);
    auto y = sum(tape, global_avg_pool(tape, max_pool2d(tape, relu(tape, conv2d(tape, x, w, b, 1, 1)), 2, 2)));
    REQUIRE(tape.size() == 5);
    CHECK(tape.kind(0) == OpKind::conv2d);
    CHECK(tape.kind(4) == OpKind::sum);
    tape.backward(y);
    CHECK(tape.last_visit_count() == 5);
  }
}

TEST_CASE("gradient accumulation is linear") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng.below(3), c = 2 + rng.below(4), in = 1 + rng.below(5);
    Tensor<double> x(Shape{n, in}), w(Shape{c, in}), b(Shape{c});
    for (auto* t : {&x, &w, &b}) {
      for (double& v : t->data()) v = rng.uniform(-1, 1);
    }
    w.set_requires_grad(true);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.below(c);
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);

    auto grad_of = [&](double a, double bb) {
      w.zero_grad();
      Tape<double> tape;
      auto logits = affine(tape, x, w, b);
      auto f = softmax_cross_entropy(tape, logits, labels).loss;
      auto g = sum(tape, relu(tape, logits));
      tape.backward(add(tape, scale(tape, f, a), scale(tape, g, bb)));
      return std::vector<double>(w.grad().begin(), w.grad().end());
    };
    const auto gf = grad_of(1.0, 0.0);
    const auto gg = grad_of(0.0, 1.0);
    const auto both = grad_of(alpha, beta);
    for (std::size_t i = 0; i < both.size(); ++i) {
      CHECK(both[i] == doctest::Approx(alpha * gf[i] + beta * gg[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward results are bit-identical across runs") {
  Rng rng(8);
  Tensor<float> x(Shape{2, 3, 9, 9}), w(Shape{4, 3, 3, 3}), b(Shape{4});
  for (auto* t : {&x, &w, &b}) {
    for (float& v : t->data()) v = static_cast<float>(rng.uniform(-1, 1));
  }
  auto run = [&] {
    Tape<float> tape;
    auto y = global_avg_pool(tape, max_pool2d(tape, relu(tape, conv2d(tape, x, w, b, 1, 1)), 2, 2));
    return to_vec(y.data());
  };
  const auto first = run();
  for (int i = 0; i < 3; ++i) CHECK(run() == first);
}

TEST_CASE("randomized finite-difference checks for every operation") {
  for (CheckedOp op : faithcam::testing::all_checked_ops) {
    CAPTURE(faithcam::testing::checked_op_name(op));
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      CAPTURE(seed);
      const auto fopt = faithcam::testing::default_options<float>();
      const auto f = faithcam::testing::check_random_case<float>(op, seed, fopt);
      CHECK_MESSAGE(f.check.passed(fopt), f.shape, ": ", f.check.worst, " excluded ", f.check.excluded);
      const auto dopt = faithcam::testing::default_options<double>();
      const auto d = faithcam::testing::check_random_case<double>(op, seed, dopt);
      CHECK_MESSAGE(d.check.passed(dopt), d.shape, ": ", d.check.worst, " excluded ", d.check.excluded);
    }
  }
}

TEST_CASE("the checker fails when analytic and numeric sides disagree") {
  // The analytic side runs in float and the numeric side in double, so a
  // build that scales by 2 in float and by 2.01 in double has a wrong
  // gradient as far as the oracle is concerned.
  Rng rng(2);
  std::vector<faithcam::testing::Leaf> leaves = {faithcam::testing::random_leaf(rng, Shape{4})};
  const auto opt = faithcam::testing::default_options<float>();
  auto skewed = [](auto& tape, auto& x) {
    using U = typename std::decay_t<decltype(x[0])>::value_type;
    return scale(tape, x[0], std::is_same_v<U, float> ? U(2) : U(2.01));
  };
  CHECK_FALSE(faithcam::testing::check_gradients<float>(leaves, skewed, opt).passed(opt));
  auto honest = [](auto& tape, auto& x) {
    using U = typename std::decay_t<decltype(x[0])>::value_type;
    return scale(tape, x[0], U(2));
  };
  CHECK(faithcam::testing::check_gradients<float>(leaves, honest, opt).passed(opt));
}
