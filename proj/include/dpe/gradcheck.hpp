#ifndef DPE_GRADCHECK_HPP
#define DPE_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "dpe/residual_opt.hpp"

namespace dpe {

struct GradcheckInstance {
  Matrix views;
  Matrix base_t;
  Matrix base_v;
  EmptyMask mask;
  ResidualPair residual;
  ObjectiveConfig cfg;
  std::vector<std::size_t> selection;
};

/// Random objective instance: C in {3, 10}, d in {8, 32}, N in {4, 8}, random
/// masks, non-zero residuals, views clustered near random prototypes.
inline GradcheckInstance random_gradcheck_instance(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto pick = [&](std::initializer_list<Eigen::Index> xs) {
    return *(xs.begin() + static_cast<std::ptrdiff_t>(rng() % xs.size()));
  };
  const Eigen::Index C = pick({3, 10});
  const Eigen::Index d = pick({8, 32});
  const Eigen::Index N = pick({4, 8});
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };

  GradcheckInstance inst;
  inst.base_t = gaussian(C, d);
  normalize_rows(inst.base_t);
  inst.base_v = inst.base_t + 0.7 * gaussian(C, d) / std::sqrt(static_cast<double>(d));
  normalize_rows(inst.base_v);
  inst.mask.resize(static_cast<std::size_t>(C));
  for (auto&& m : inst.mask) m = uniform(rng) < 0.3;
  inst.residual = {0.05 * gaussian(C, d) / std::sqrt(static_cast<double>(d)),
                   0.05 * gaussian(C, d) / std::sqrt(static_cast<double>(d))};
  inst.views = Matrix(N, d);
  for (Eigen::Index n = 0; n < N; ++n) {
    const Eigen::Index c = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(C));
    inst.views.row(n) = inst.base_t.row(c) + 0.8 * gaussian(1, d) / std::sqrt(static_cast<double>(d));
  }
  normalize_rows(inst.views);
  // A spread of temperatures keeps the softmax away from full saturation.
  const double temps[] = {0.01, 0.05, 0.2, 1.0};
  inst.cfg.temperature = Temperature(temps[rng() % 4]);
  const double rhos[] = {0.25, 0.5, 1.0};
  inst.cfg.rho = rhos[rng() % 3];
  inst.cfg.lambda = 0.5;
  inst.selection = current_selection(inst.views, inst.base_t, inst.base_v, inst.mask, inst.residual, inst.cfg);
  return inst;
}

struct GradcheckSummary {
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  std::size_t worst_trial = 0;
  double tolerance = 1e-3;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|, floor): the floor keeps entries far below the
/// finite-difference noise level from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Max entrywise relative error between grad_total and central differences.
/// `perturb`, when set, is applied to the analytic gradients first (detector test hook).
inline double gradcheck_instance(const GradcheckInstance& inst, double h = 1e-5,
                                 const std::function<void(GradResult&)>& perturb = {}) {
  GradResult g = grad_total(inst.views, inst.selection, inst.base_t, inst.base_v, inst.mask, inst.residual, inst.cfg);
  if (perturb) perturb(g);
  auto loss_at = [&](const ResidualPair& r) {
    return total_loss(inst.views, inst.selection, inst.base_t, inst.base_v, inst.mask, r, inst.cfg);
  };
  double worst = 0.0;
  for (int which = 0; which < 2; ++which) {
    const Matrix& analytic = which == 0 ? g.grad_t_hat : g.grad_v_hat;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
      ResidualPair plus = inst.residual;
      ResidualPair minus = inst.residual;
      (which == 0 ? plus.t_hat : plus.v_hat).data()[i] += h;
      (which == 0 ? minus.t_hat : minus.v_hat).data()[i] -= h;
      const double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic.data()[i], numeric));
    }
  }
  return worst;
}

inline GradcheckSummary gradcheck(std::size_t trials, std::uint64_t seed, double tolerance = 1e-3,
                                  const std::function<void(GradResult&)>& perturb = {}) {
  std::mt19937_64 rng(seed);
  GradcheckSummary s;
  s.trials = trials;
  s.tolerance = tolerance;
  for (std::size_t t = 0; t < trials; ++t) {
    const GradcheckInstance inst = random_gradcheck_instance(rng);
    const double err = gradcheck_instance(inst, 1e-5, perturb);
    if (err > s.max_rel_error || t == 0) {
      s.max_rel_error = err;
      s.worst_trial = t;
    }
  }
  s.passed = s.max_rel_error < tolerance;
  return s;
}

}  // namespace dpe

#endif  // DPE_GRADCHECK_HPP
