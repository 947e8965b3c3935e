#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "dpe/core.hpp"

namespace {

using dpe::Vector;

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

TEST(Normalize, ThreeFourFive) {
  const Vector u = dpe::l2_normalize(vec({3, 4}));
  EXPECT_DOUBLE_EQ(u[0], 0.6);
  EXPECT_DOUBLE_EQ(u[1], 0.8);
}

TEST(Normalize, AlreadyUnit) {
  EXPECT_EQ(dpe::l2_normalize(vec({1, 0, 0})), vec({1, 0, 0}));
}

TEST(Normalize, ZeroVectorThrows) {
  try {
    dpe::l2_normalize(vec({0, 0}));
    FAIL() << "expected ZeroVector";
  } catch (const dpe::Error& e) {
    EXPECT_EQ(e.kind(), dpe::ErrorKind::ZeroVector);
  }
}

TEST(Normalize, Idempotent) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 500; ++trial) {
    Vector v(1 + trial % 40);
    for (auto& x : v) x = normal(rng) * std::pow(10.0, trial % 7 - 3);
    const Vector once = dpe::l2_normalize(v);
    EXPECT_NEAR(once.norm(), 1.0, 1e-12);
    EXPECT_LE((dpe::l2_normalize(once) - once).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Softmax, UniformLogits) {
  const Vector p = dpe::softmax(vec({1, 1, 1}), dpe::Temperature(1.0));
  for (double x : p) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, TwoClassClosedForm) {
  const Vector p = dpe::softmax(vec({1, 0}), dpe::Temperature(1.0));
  const double e = std::exp(1.0);
  EXPECT_NEAR(p[0], e / (e + 1), 1e-15);
  EXPECT_NEAR(p[0], 0.73106, 1e-5);
  EXPECT_NEAR(p[1], 0.26894, 1e-5);
}

TEST(Softmax, ShiftInvariant) {
  const Vector a = dpe::softmax(vec({1, 0}), dpe::Temperature(1.0));
  const Vector b = dpe::softmax(vec({101, 100}), dpe::Temperature(1.0));
  EXPECT_EQ(a, b);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> shift(-1e3, 1e3);
  for (int trial = 0; trial < 500; ++trial) {
    Vector z(2 + trial % 30);
    for (auto& x : z) x = normal(rng);
    const double s = shift(rng);
    const dpe::Temperature t(0.05 + trial % 5);
    const Vector p = dpe::softmax(z, t);
    const Vector q = dpe::softmax((z.array() + s).matrix(), t);
    for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12 * std::max(1.0, p[i]) + 1e-12);
  }
}

TEST(Softmax, RejectsNonFinite) {
  EXPECT_THROW(dpe::softmax(vec({1, std::numeric_limits<double>::quiet_NaN()}), dpe::Temperature(1)), dpe::Error);
  EXPECT_THROW(dpe::softmax(vec({std::numeric_limits<double>::infinity(), 0}), dpe::Temperature(1)), dpe::Error);
}

TEST(Softmax, RankPreservedAcrossTemperatures) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 300; ++trial) {
    Vector z(2 + trial % 20);
    for (auto& x : z) x = normal(rng);
    for (double t : {1e-3, 0.01, 0.1, 1.0, 10.0, 1e3}) {
      EXPECT_EQ(dpe::argmax(dpe::softmax(z, dpe::Temperature(t))), dpe::argmax(z));
    }
  }
}

TEST(Temperature, MustBePositive) {
  EXPECT_THROW(dpe::Temperature(0.0), dpe::Error);
  EXPECT_THROW(dpe::Temperature(-1.0), dpe::Error);
}

TEST(Entropy, NamedCases) {
  EXPECT_NEAR(dpe::entropy(vec({0.25, 0.25, 0.25, 0.25})), std::log(4.0), 1e-15);
  EXPECT_NEAR(dpe::entropy(vec({0.25, 0.25, 0.25, 0.25})), 1.38629, 1e-5);
  EXPECT_EQ(dpe::entropy(vec({0, 1, 0})), 0.0);
  EXPECT_NEAR(dpe::entropy(vec({0.5, 0.5, 0, 0})), 0.69315, 1e-5);
}

TEST(Entropy, BoundedByLogC) {
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> expo(1.0);
  for (int C : {2, 10, 100}) {
    for (int trial = 0; trial < 1000; ++trial) {
      Vector p(C);
      for (auto& x : p) x = expo(rng);
      p /= p.sum();
      const double h = dpe::entropy(p);
      EXPECT_GE(h, 0.0);
      EXPECT_LE(h, std::log(static_cast<double>(C)) + 1e-9);
    }
  }
}

TEST(NormalizedEntropy, NamedCases) {
  for (int C : {2, 5, 64}) EXPECT_NEAR(dpe::normalized_entropy(Vector::Constant(C, 1.0 / C)), 1.0, 1e-12);
  EXPECT_EQ(dpe::normalized_entropy(vec({1, 0, 0})), 0.0);
  EXPECT_NEAR(dpe::normalized_entropy(vec({0.5, 0.5, 0, 0})), 0.5, 1e-15);
}

TEST(NormalizedEntropy, NeedsTwoClasses) { EXPECT_THROW(dpe::normalized_entropy(vec({1.0})), dpe::Error); }

}  // namespace
