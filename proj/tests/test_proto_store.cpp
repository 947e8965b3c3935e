#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dpe/proto_store.hpp"
#include "test_helpers.hpp"

namespace {

using dpe::Matrix;
using dpe::UpdateRule;
using dpe::UpdateRuleKind;
using dpe::Vector;

Matrix rows(std::initializer_list<std::initializer_list<double>> xs) {
  Matrix m(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(xs.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : xs) {
    Eigen::Index c = 0;
    for (double x : row) m(r, c++) = x;
    ++r;
  }
  return m;
}

dpe::ClassTextSet two_class(Matrix a, Matrix b) {
  dpe::ClassTextSet set;
  set.class_names = {"a", "b"};
  set.prompts = {std::move(a), std::move(b)};
  return set;
}

TEST(InitTextual, SinglePromptIsIdentity) {
  const auto set = two_class(rows({{0.6, 0.8}}), rows({{1, 0}}));
  const auto store = dpe::TextualStore::from_classtext(set, {});
  EXPECT_EQ(store.prototypes(), rows({{0.6, 0.8}, {1, 0}}));
  EXPECT_EQ(store.count(), 0u);
}

TEST(InitTextual, MeanOfPrompts) {
  const auto set = two_class(rows({{1, 0}, {0, 1}}), rows({{1, 0}}));
  const auto store = dpe::TextualStore::from_classtext(set, {});
  EXPECT_NEAR(store.prototypes()(0, 0), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(store.prototypes()(0, 1), 1 / std::sqrt(2.0), 1e-15);
}

TEST(InitTextual, OpposingPromptsDegenerate) {
  const auto set = two_class(rows({{1, 0}, {-1, 0}}), rows({{1, 0}}));
  try {
    dpe::TextualStore::from_classtext(set, {});
    FAIL();
  } catch (const dpe::Error& e) {
    EXPECT_EQ(e.kind(), dpe::ErrorKind::ZeroVector);
  }
}

TEST(EvolveTextual, CumulativeFirstAcceptanceTakesOptimized) {
  dpe::TextualStore store(rows({{1, 0}, {0, 1}}), {UpdateRuleKind::CumulativeAvg});
  const Matrix u = rows({{0.6, 0.8}, {0.8, -0.6}});
  EXPECT_TRUE(store.evolve(u, 0.05, 0.1));
  EXPECT_EQ(store.prototypes(), u);
  EXPECT_EQ(store.count(), 1u);
}

TEST(EvolveTextual, CumulativeSecondAcceptanceAverages) {
  dpe::TextualStore store(rows({{1, 0}}), {UpdateRuleKind::CumulativeAvg});
  store.restore(rows({{1, 0}}), 1);
  EXPECT_TRUE(store.evolve(rows({{0, 1}}), 0.0, 0.1));
  EXPECT_NEAR(store.prototypes()(0, 0), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(store.prototypes()(0, 1), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(store.count(), 2u);
}

TEST(EvolveTextual, GateRejectsForEveryRule) {
  for (auto kind : {UpdateRuleKind::NoUpdate, UpdateRuleKind::FullUpdate, UpdateRuleKind::ExponentialAvg,
                    UpdateRuleKind::CumulativeAvg}) {
    dpe::TextualStore store(rows({{1, 0}}), {kind, 0.9});
    EXPECT_FALSE(store.evolve(rows({{0, 1}}), 0.5, 0.1));
    EXPECT_EQ(store.prototypes(), rows({{1, 0}}));
    EXPECT_EQ(store.count(), 0u);
  }
}

TEST(EvolveTextual, GateBoundaryAccepts) {
  dpe::TextualStore store(rows({{1, 0}}), {UpdateRuleKind::FullUpdate});
  EXPECT_TRUE(store.evolve(rows({{0, 1}}), 0.1, 0.1));
  dpe::TextualStore zero(rows({{1, 0}}), {UpdateRuleKind::CumulativeAvg});
  EXPECT_FALSE(zero.evolve(rows({{0, 1}}), 1e-12, 0.0));
}

TEST(EvolveTextual, FullUpdateIsExact) {
  dpe::TextualStore store(rows({{1, 0}}), {UpdateRuleKind::FullUpdate});
  const Matrix t = rows({{0.28, 0.96}});
  store.evolve(t, 0.0, 0.1);
  EXPECT_EQ(store.prototypes(), t);
  EXPECT_EQ(store.count(), 0u);
}

TEST(EvolveTextual, CumulativeConvergesToFixedTarget) {
  std::mt19937_64 rng(5);
  const Matrix start = testing_util::random_unit_rows(rng, 4, 6);
  const Matrix u = testing_util::random_unit_rows(rng, 4, 6);
  dpe::TextualStore store(start, {UpdateRuleKind::CumulativeAvg});
  for (int i = 0; i < 50; ++i) {
    store.evolve(u, 0.0, 0.1);
    EXPECT_LE((store.prototypes() - u).cwiseAbs().maxCoeff(), 1e-15) << "after " << i + 1;
  }
  EXPECT_EQ(store.count(), 50u);
}

TEST(EvolveTextual, RuleFormulasMatchDirectEvaluation) {
  std::mt19937_64 rng(6);
  auto direct_unit = [](const Vector& v) { return Vector(v / std::sqrt(v.squaredNorm())); };
  for (int trial = 0; trial < 400; ++trial) {
    const Eigen::Index C = 2 + trial % 5, d = 3 + trial % 7;
    const Matrix t = testing_util::random_unit_rows(rng, C, d);
    const Matrix ts = testing_util::random_unit_rows(rng, C, d);
    const std::uint64_t k = trial % 9;
    const double gamma = 0.5 + 0.49 * ((trial * 37) % 100) / 100.0;
    const auto kind = static_cast<UpdateRuleKind>(trial % 4);
    dpe::TextualStore store(t, {kind, gamma});
    store.restore(t, k);
    store.evolve(ts, 0.01, 0.1);
    for (Eigen::Index c = 0; c < C; ++c) {
      Vector expected;
      const Vector tc = t.row(c).transpose(), sc = ts.row(c).transpose();
      switch (kind) {
        case UpdateRuleKind::NoUpdate: expected = tc; break;
        case UpdateRuleKind::FullUpdate: expected = sc; break;
        case UpdateRuleKind::ExponentialAvg: expected = direct_unit(gamma * tc + (1 - gamma) * sc); break;
        case UpdateRuleKind::CumulativeAvg: expected = direct_unit(static_cast<double>(k) * tc + sc); break;
      }
      for (Eigen::Index j = 0; j < d; ++j) {
        EXPECT_LE(std::abs(store.prototypes()(c, j) - expected[j]), 1e-12 * std::max(1.0, std::abs(expected[j])));
      }
    }
    EXPECT_EQ(store.count(), kind == UpdateRuleKind::CumulativeAvg ? k + 1 : k);
  }
}

TEST(EvolveTextual, ShapeMismatch) {
  dpe::TextualStore store(rows({{1, 0}}), {});
  EXPECT_THROW(store.evolve(rows({{1, 0, 0}}), 0.0, 0.1), dpe::Error);
}

TEST(EvolveTextual, BadGamma) { EXPECT_THROW(dpe::TextualStore(rows({{1, 0}}), {UpdateRuleKind::ExponentialAvg, 1.5}), dpe::Error); }

std::vector<double> entropies(const dpe::VisualStore& s, std::size_t c) {
  std::vector<double> out;
  for (const auto& e : s.queue(c)) out.push_back(e.self_entropy);
  return out;
}

TEST(VisualStore, InsertIntoEmpty) {
  dpe::VisualStore store(2, 2, 3);
  EXPECT_TRUE(store.all_empty());
  const Vector f = dpe::l2_normalize(Vector::Constant(2, 1.0));
  EXPECT_TRUE(store.update(0, f, 0.7));
  EXPECT_EQ(entropies(store, 0), std::vector<double>{0.7});
  EXPECT_LE((store.prototypes().row(0).transpose() - f).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_FALSE(store.empty_mask()[0]);
  EXPECT_TRUE(store.empty_mask()[1]);
  EXPECT_EQ(store.prototypes().row(1).norm(), 0.0);
}

TEST(VisualStore, ReplaceMax) {
  dpe::VisualStore store(1, 2, 3);
  const Vector e1 = Vector::Unit(2, 0);
  for (double h : {0.1, 0.5, 0.9}) store.update(0, e1, h);
  EXPECT_TRUE(store.update(0, e1, 0.4));
  EXPECT_EQ(entropies(store, 0), (std::vector<double>{0.1, 0.4, 0.5}));
}

TEST(VisualStore, DiscardWhenNotBetter) {
  dpe::VisualStore store(1, 2, 3);
  const Vector e1 = Vector::Unit(2, 0);
  for (double h : {0.1, 0.5, 0.9}) store.update(0, e1, h);
  const Matrix before = store.prototypes();
  EXPECT_FALSE(store.update(0, Vector::Unit(2, 1), 1.2));
  EXPECT_FALSE(store.update(0, Vector::Unit(2, 1), 0.9));
  EXPECT_EQ(entropies(store, 0), (std::vector<double>{0.1, 0.5, 0.9}));
  EXPECT_EQ(store.prototypes(), before);
}

TEST(VisualStore, PrototypeIsNormalizedMean) {
  dpe::VisualStore store(1, 2, 3);
  store.update(0, Vector::Unit(2, 0), 0.2);
  store.update(0, Vector::Unit(2, 1), 0.3);
  EXPECT_NEAR(store.prototypes()(0, 0), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(store.prototypes()(0, 1), 1 / std::sqrt(2.0), 1e-15);

  dpe::VisualStore raw(1, 2, 3, false);
  raw.update(0, Vector::Unit(2, 0), 0.2);
  raw.update(0, Vector::Unit(2, 1), 0.3);
  EXPECT_DOUBLE_EQ(raw.prototypes()(0, 0), 0.5);
}

TEST(VisualStore, FifoTies) {
  dpe::VisualStore store(1, 2, 2);
  store.update(0, Vector::Unit(2, 0), 0.3);
  store.update(0, Vector::Unit(2, 1), 0.3);
  EXPECT_EQ(store.queue(0)[0].feature, Vector::Unit(2, 0));
  EXPECT_EQ(store.queue(0)[1].feature, Vector::Unit(2, 1));
}

TEST(VisualStore, ClassOutOfRange) {
  dpe::VisualStore store(2, 2, 3);
  try {
    store.update(2, Vector::Unit(2, 0), 0.1);
    FAIL();
  } catch (const dpe::Error& e) {
    EXPECT_EQ(e.kind(), dpe::ErrorKind::ClassOutOfRange);
  }
}

TEST(VisualStore, MatchesMinMOracle) {
  std::mt19937_64 rng(9);
  const std::size_t C = 7, M = 3, d = 4;
  dpe::VisualStore store(C, d, M);
  oracle::MinMQueues brute(C, M);
  std::uniform_int_distribution<std::size_t> cls(0, C - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int op = 0; op < 2000; ++op) {
    const std::size_t c = cls(rng);
    // Decaying offers keep replacements frequent; repeated earlier values force ties.
    double h = std::exp(-op / 40.0) * (0.9 + 0.1 * unit(rng));
    if (!brute.offers[c].empty() && unit(rng) < 0.3) {
      h = brute.offers[c][static_cast<std::size_t>(unit(rng) * brute.offers[c].size())].first;
    }
    store.update(c, testing_util::random_unit(rng, d), h);
    brute.offer(c, h);
    for (std::size_t q = 0; q < C; ++q) {
      const auto& queue = store.queue(q);
      ASSERT_LE(queue.size(), M);
      for (std::size_t i = 1; i < queue.size(); ++i) {
        ASSERT_TRUE(queue[i - 1].self_entropy < queue[i].self_entropy ||
                    (queue[i - 1].self_entropy == queue[i].self_entropy && queue[i - 1].arrival < queue[i].arrival));
      }
    }
    ASSERT_EQ(entropies(store, c), brute.kept(c)) << "op " << op;
  }
}

TEST(Stores, RowsStayUnitUnderInterleavings) {
  std::mt19937_64 rng(10);
  const Eigen::Index C = 5, d = 6;
  dpe::TextualStore textual(testing_util::random_unit_rows(rng, C, d), {UpdateRuleKind::CumulativeAvg});
  dpe::VisualStore visual(C, d, 3);
  std::uniform_real_distribution<double> u;
  for (int op = 0; op < 1000; ++op) {
    if (op % 2 == 0) {
      textual.evolve(testing_util::random_unit_rows(rng, C, d), u(rng) * 0.2, 0.1);
    } else {
      visual.update(static_cast<std::size_t>(op) % C, testing_util::random_unit(rng, d), u(rng));
    }
    for (Eigen::Index c = 0; c < C; ++c) {
      ASSERT_NEAR(textual.prototypes().row(c).norm(), 1.0, 1e-5);
      if (!visual.empty_mask()[c]) ASSERT_NEAR(visual.prototypes().row(c).norm(), 1.0, 1e-5);
    }
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(11);
  dpe::TextualStore textual(testing_util::random_unit_rows(rng, 3, 4), {UpdateRuleKind::ExponentialAvg, 0.95});
  textual.evolve(testing_util::random_unit_rows(rng, 3, 4), 0.0, 0.1);
  dpe::VisualStore visual(3, 4, 2);
  for (int i = 0; i < 7; ++i) visual.update(i % 3, testing_util::random_unit(rng, 4), 0.1 * i);

  std::stringstream buf;
  dpe::write_checkpoint(buf, textual, visual, 42);
  const auto ck = dpe::read_checkpoint(buf);
  EXPECT_EQ(ck.samples_seen, 42u);
  EXPECT_EQ(ck.textual.prototypes(), textual.prototypes());
  EXPECT_EQ(ck.textual.initial(), textual.initial());
  EXPECT_EQ(ck.textual.rule(), textual.rule());
  EXPECT_EQ(ck.textual.count(), textual.count());
  EXPECT_EQ(ck.visual.prototypes(), visual.prototypes());
  EXPECT_EQ(ck.visual.empty_mask(), visual.empty_mask());
  EXPECT_EQ(ck.visual.next_arrival(), visual.next_arrival());
  for (std::size_t c = 0; c < 3; ++c) {
    ASSERT_EQ(ck.visual.queue(c).size(), visual.queue(c).size());
    for (std::size_t i = 0; i < visual.queue(c).size(); ++i) {
      EXPECT_EQ(ck.visual.queue(c)[i].feature, visual.queue(c)[i].feature);
      EXPECT_EQ(ck.visual.queue(c)[i].arrival, visual.queue(c)[i].arrival);
    }
  }

  std::string bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(dpe::read_checkpoint(truncated), dpe::Error);
}

}  // namespace
