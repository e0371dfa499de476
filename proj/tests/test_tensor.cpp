#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "relstm/tensor.hpp"

using namespace relstm;

TEST_CASE("tensor construction and invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);

  Shape3 ok{2, 3, 4};
  CHECK_NOTHROW(ok.validate());
  CHECK_THROWS_AS((Shape3{0, 3, 4}.validate()), ShapeError);
  CHECK_THROWS_AS((Shape3{2, 3, 3}.validate()), ShapeError);
  CHECK_THROWS_AS((Shape3{2, 3, 0}.validate()), ShapeError);
}

TEST_CASE("matmul identity and zero") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor zero_col({2, 1}, {0, 0});

  CHECK(oracle::max_abs_diff(matmul(eye, eye), eye) == 0.0);
  Tensor az = matmul(a, zero_col);
  for (std::int64_t i = 0; i < az.size(); ++i) CHECK(az[i] == 0.0);
  CHECK_THROWS_AS(matmul(a, Tensor({3, 2})), ShapeError);
}

TEST_CASE("matmul matches the triple-loop reference on random instances") {
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 100; ++rep) {
    const std::int64_t m = 1 + rng() % 6, k = 1 + rng() % 6, n = 1 + rng() % 6;
    Tensor a = oracle::uniform({m, k}, -1.0, 1.0, rng);
    Tensor b = oracle::uniform({k, n}, -1.0, 1.0, rng);
    CHECK(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-12);
  }
}

TEST_CASE("softmax rows: symmetry, stability, reference") {
  Tensor flat({1, 3}, {0, 0, 0});
  Tensor s = softmax_rows(flat);
  for (std::int64_t j = 0; j < 3; ++j) CHECK(s[j] == doctest::Approx(1.0 / 3).epsilon(1e-14));

  Tensor spiked({1, 2}, {1000.0, 0.0});
  Tensor sp = softmax_rows(spiked);
  CHECK(sp[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sp[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sp.all_finite());

  Tensor row({1, 3}, {1, 2, 3});
  CHECK(oracle::max_abs_diff(softmax_rows(row), oracle::softmax_rows(row)) < 1e-14);
}

TEST_CASE("softmax rows sum to one for magnitudes up to 1e3") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor a = oracle::uniform({4, 5}, -1000.0, 1000.0, rng);
    Tensor s = softmax_rows(a);
    for (std::int64_t i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (std::int64_t j = 0; j < 5; ++j) {
        sum += s.at(i, j);
        CHECK(s.at(i, j) >= 0.0);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("position_linear is a per-position map") {
  std::mt19937_64 rng(9);
  Tensor x = oracle::uniform({4, 3}, -1, 1, rng);
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(oracle::max_abs_diff(position_linear(x, eye), x) == 0.0);

  Tensor zero({3, 2});
  Tensor pz = position_linear(x, zero);
  for (std::int64_t i = 0; i < pz.size(); ++i) CHECK(pz[i] == 0.0);

  Tensor w = oracle::uniform({3, 2}, -1, 1, rng);
  CHECK(oracle::max_abs_diff(position_linear(x, w), oracle::matmul(x, w)) < 1e-12);
}

TEST_CASE("elementwise family") {
  Tensor z({1, 1}, {0.0});
  CHECK(sigmoid(z)[0] == 0.5);
  CHECK(tanh(z)[0] == 0.0);

  std::mt19937_64 rng(3);
  Tensor a = oracle::uniform({2, 3}, -1, 1, rng);
  Tensor b = oracle::uniform({2, 3}, -1, 1, rng);
  Tensor sum = add(a, b);
  Tensor prod = hadamard(a, b);
  for (std::int64_t i = 0; i < a.size(); ++i) {
    CHECK(sum[i] == a[i] + b[i]);
    CHECK(prod[i] == a[i] * b[i]);
  }
  CHECK_THROWS_AS(add(a, Tensor({3, 2})), ShapeError);
  CHECK_THROWS_AS(hadamard(a, Tensor({2, 2})), ShapeError);

  Tensor sc = scale(a, -2.0);
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(sc[i] == -2.0 * a[i]);

  Tensor tr = transpose(a);
  CHECK(tr.rows() == 3);
  for (std::int64_t i = 0; i < 2; ++i)
    for (std::int64_t j = 0; j < 3; ++j) CHECK(tr.at(j, i) == a.at(i, j));
}

TEST_CASE("reshape round-trip is bitwise identity") {
  std::mt19937_64 rng(11);
  Tensor a = oracle::uniform({3, 4}, -1, 1, rng);
  Tensor r = reshape(reshape(a, {2, 6}), {3, 4});
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(r[i] == a[i]);
  CHECK_THROWS_AS(reshape(a, {5, 2}), ShapeError);
}

TEST_CASE("reduce_mean over an axis of equal rows returns that row") {
  Tensor a({3, 2}, {1.5, -2.0, 1.5, -2.0, 1.5, -2.0});
  Tensor m = reduce_mean(a, 0);
  CHECK(m.shape() == std::vector<std::int64_t>{2});
  CHECK(m[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(m[1] == doctest::Approx(-2.0).epsilon(1e-15));

  Tensor col = reduce_mean(a, 1);
  CHECK(col.shape() == std::vector<std::int64_t>{3});
  CHECK(col[0] == doctest::Approx(-0.25));
  CHECK_THROWS_AS(reduce_mean(a, 2), ShapeError);
}

TEST_CASE("concat stacks along the requested axis") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({1, 2}, {5, 6});
  Tensor c = concat(a, b, 0);
  CHECK(c.shape() == std::vector<std::int64_t>{3, 2});
  CHECK(c.at(2, 1) == 6);

  Tensor d = concat(a, transpose(b), 1);
  CHECK(d.shape() == std::vector<std::int64_t>{2, 3});
  CHECK(d.at(0, 2) == 5);
  CHECK(d.at(1, 2) == 6);
  CHECK_THROWS_AS(concat(a, b, 1), ShapeError);
}

TEST_CASE("ops are pure: inputs unmodified, outputs repeatable") {
  std::mt19937_64 rng(13);
  Tensor a = oracle::uniform({3, 3}, -1, 1, rng);
  Tensor b = oracle::uniform({3, 3}, -1, 1, rng);
  Tensor a_copy = a, b_copy = b;
  Tensor r1 = matmul(a, b);
  Tensor r2 = matmul(a, b);
  for (std::int64_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == a_copy[i]);
    CHECK(b[i] == b_copy[i]);
  }
  for (std::int64_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
  Tensor s1 = softmax_rows(a), s2 = softmax_rows(a);
  for (std::int64_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
}

TEST_CASE("batch norm: momentum zero freezes the running stats") {
  std::mt19937_64 rng(17);
  Tensor x = oracle::uniform({6, 3}, -2, 2, rng);
  Tensor gamma = Tensor::full({3}, 1.0), beta({3});
  BatchNormState stats = BatchNormState::init(3);
  const Tensor mean_before = stats.running_mean, var_before = stats.running_var;
  batch_norm(x, gamma, beta, stats, BatchNormMode::kTrain, 0.0);
  for (std::int64_t j = 0; j < 3; ++j) {
    CHECK(stats.running_mean[j] == mean_before[j]);
    CHECK(stats.running_var[j] == var_before[j]);
  }
}

TEST_CASE("batch norm: constant channel yields the learned shift") {
  Tensor x = Tensor::full({5, 2}, 3.0);
  Tensor gamma({2}, {2.0, 2.0});
  Tensor beta({2}, {0.7, -0.3});
  BatchNormState stats = BatchNormState::init(2);
  Tensor y = batch_norm(x, gamma, beta, stats, BatchNormMode::kTrain, 0.1);
  for (std::int64_t i = 0; i < 5; ++i) {
    CHECK(y.at(i, 0) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(y.at(i, 1) == doctest::Approx(-0.3).epsilon(1e-12));
  }
  CHECK(y.all_finite());
}

TEST_CASE("batch norm: two-batch running update matches the scalar recurrence") {
  // Hand-rolled exponential moving average on one channel.
  const double momentum = 0.25;
  Tensor x1({4, 1}, {1.0, 2.0, 3.0, 4.0});   // mean 2.5, var 1.25
  Tensor x2({4, 1}, {0.0, 0.0, 2.0, 2.0});   // mean 1.0, var 1.0
  Tensor gamma = Tensor::full({1}, 1.0), beta({1});
  BatchNormState stats = BatchNormState::init(1);

  double rm = 0.0, rv = 1.0;
  rm = (1 - momentum) * rm + momentum * 2.5;
  rv = (1 - momentum) * rv + momentum * 1.25;
  rm = (1 - momentum) * rm + momentum * 1.0;
  rv = (1 - momentum) * rv + momentum * 1.0;

  batch_norm(x1, gamma, beta, stats, BatchNormMode::kTrain, momentum);
  batch_norm(x2, gamma, beta, stats, BatchNormMode::kTrain, momentum);
  CHECK(stats.running_mean[0] == doctest::Approx(rm).epsilon(1e-14));
  CHECK(stats.running_var[0] == doctest::Approx(rv).epsilon(1e-14));

  // Infer mode normalizes with the running stats.
  Tensor y = batch_norm(x1, gamma, beta, stats, BatchNormMode::kInfer, momentum);
  const double inv = 1.0 / std::sqrt(rv + kBatchNormEps);
  CHECK(y.at(0, 0) == doctest::Approx((1.0 - rm) * inv).epsilon(1e-12));
  CHECK_THROWS_AS(batch_norm(x1, gamma, beta, stats, BatchNormMode::kTrain, 1.5), DataError);
}

TEST_CASE("sum_all returns a scalar tensor") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor s = sum_all(a);
  CHECK(s.size() == 1);
  CHECK(s[0] == 10.0);
}
