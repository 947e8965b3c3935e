#ifndef DPE_RESIDUAL_OPT_HPP
#define DPE_RESIDUAL_OPT_HPP

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "dpe/core.hpp"
#include "dpe/inference.hpp"

namespace dpe {

struct AdamWParams {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct ObjectiveConfig {
  AffinityParams affinity;
  Temperature temperature{0.01};
  double rho = 0.1;
  double lambda = 0.5;            // weight of the alignment loss
  double align_temperature = 1.0; // divides the t^T v similarities in the alignment loss
  bool use_aug_loss = true;       // false drops the entropy term (loss ablation)
  std::size_t n_steps = 1;
  AdamWParams adam;
};

/// Per-sample learnable residuals; zero at the start of every sample.
struct ResidualPair {
  Matrix t_hat;
  Matrix v_hat;

  static ResidualPair zeros(Eigen::Index classes, Eigen::Index dim) {
    return {Matrix::Zero(classes, dim), Matrix::Zero(classes, dim)};
  }
};

struct OptimizerState {
  ResidualPair first;
  ResidualPair second;
  std::size_t step = 0;

  static OptimizerState zeros(Eigen::Index classes, Eigen::Index dim) {
    return {ResidualPair::zeros(classes, dim), ResidualPair::zeros(classes, dim), 0};
  }
};

struct LossBreakdown {
  double l_aug = 0.0;
  double l_align = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

inline Matrix add_and_normalize(const Matrix& base, const Matrix& residual, const char* which) {
  if (base.rows() != residual.rows() || base.cols() != residual.cols()) {
    throw Error(ErrorKind::DimMismatch, std::string(which) + " residual shape does not match its base");
  }
  Matrix out = base + residual;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    // Untouched rows keep the (already unit) base row bit-for-bit.
    if (residual.row(r).isZero(0.0)) {
      if (!(base.row(r).norm() > kMinNorm)) {
        throw Error(ErrorKind::DegenerateRow, std::string(which) + " row " + std::to_string(r) + " is zero");
      }
      continue;
    }
    const double norm = out.row(r).norm();
    if (!(norm > kMinNorm)) {
      throw Error(ErrorKind::DegenerateRow, std::string(which) + " row " + std::to_string(r) + " cancels out");
    }
    out.row(r) /= norm;
  }
  return out;
}

inline std::pair<Matrix, Matrix> apply_residuals(const Matrix& base_t, const Matrix& base_v, const ResidualPair& r) {
  return {add_and_normalize(base_t, r.t_hat, "textual"), add_and_normalize(base_v, r.v_hat, "visual")};
}

/// Entropy of the mean prediction over the views listed in `selection`.
inline double loss_aug(const Matrix& views, const std::vector<std::size_t>& selection, const Matrix& t,
                       const Matrix& v, const EmptyMask& mask, const AffinityParams& p, Temperature temperature) {
  if (selection.empty()) throw Error(ErrorKind::DimMismatch, "loss_aug needs at least one selected view");
  Vector mean = Vector::Zero(t.rows());
  for (std::size_t n : selection) {
    mean += predict(views.row(static_cast<Eigen::Index>(n)).transpose(), t, v, mask, p, temperature);
  }
  mean /= static_cast<double>(selection.size());
  return entropy(mean);
}

/// Entropy of the confident-view aggregate, selecting views from the given prototypes.
inline double loss_aug(const Matrix& views, const Matrix& t, const Matrix& v, const EmptyMask& mask,
                       const AffinityParams& p, Temperature temperature, double rho) {
  return entropy(aggregate_predictions(views, t, v, mask, p, temperature, rho).mean_probs);
}

namespace detail {

inline Vector row_logsumexp(const Matrix& s) {
  Vector out(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double top = s.row(i).maxCoeff();
    out[i] = top + std::log((s.row(i).array() - top).exp().sum());
  }
  return out;
}

}  // namespace detail

/// Symmetric InfoNCE between textual and visual prototypes, averaged over classes.
inline double loss_align(const Matrix& t, const Matrix& v, double align_temperature = 1.0) {
  if (t.rows() != v.rows() || t.cols() != v.cols()) {
    throw Error(ErrorKind::DimMismatch, "alignment loss needs equally shaped prototype sets");
  }
  const Matrix s = (t * v.transpose()) / align_temperature;
  const Vector rows = detail::row_logsumexp(s);
  const Vector cols = detail::row_logsumexp(s.transpose());
  double total = 0.0;
  for (Eigen::Index c = 0; c < s.rows(); ++c) total += rows[c] + cols[c] - 2.0 * s(c, c);
  return total / static_cast<double>(s.rows());
}

struct GradResult {
  LossBreakdown loss;
  Matrix grad_t_hat;
  Matrix grad_v_hat;
};

namespace detail {

// Backpropagates through u = x / |x| for every row: dx = (I - u u^T) du / |x|.
inline Matrix normalize_backward(const Matrix& unit, const Matrix& raw, const Matrix& grad_unit) {
  Matrix out(unit.rows(), unit.cols());
  for (Eigen::Index r = 0; r < unit.rows(); ++r) {
    const double norm = raw.row(r).norm();
    const double along = unit.row(r).dot(grad_unit.row(r));
    out.row(r) = (grad_unit.row(r) - along * unit.row(r)) / norm;
  }
  return out;
}

}  // namespace detail

/// Loss and exact gradients with respect to both residual sets, with the view
/// selection held fixed.
inline GradResult grad_total(const Matrix& views, const std::vector<std::size_t>& selection, const Matrix& base_t,
                             const Matrix& base_v, const EmptyMask& mask, const ResidualPair& r,
                             const ObjectiveConfig& cfg) {
  const auto [t, v] = apply_residuals(base_t, base_v, r);
  const Eigen::Index C = t.rows();
  const Eigen::Index d = t.cols();
  if (views.cols() != d) throw Error(ErrorKind::DimMismatch, "view dim does not match prototypes");
  if (mask.size() != static_cast<std::size_t>(C)) throw Error(ErrorKind::DimMismatch, "mask size mismatch");
  const double temp = cfg.temperature.value();

  GradResult out;
  out.loss.lambda = cfg.lambda;
  Matrix grad_t = Matrix::Zero(C, d);
  Matrix grad_v = Matrix::Zero(C, d);

  if (cfg.use_aug_loss) {
    if (selection.empty()) throw Error(ErrorKind::DimMismatch, "gradient needs at least one selected view");
    const double K = static_cast<double>(selection.size());
    std::vector<Vector> probs;
    std::vector<Vector> visual_sims;
    probs.reserve(selection.size());
    visual_sims.reserve(selection.size());
    Vector mean = Vector::Zero(C);
    for (std::size_t n : selection) {
      const Vector f = views.row(static_cast<Eigen::Index>(n)).transpose();
      Vector logits = t * f;
      Vector x = v * f;
      for (Eigen::Index c = 0; c < C; ++c) {
        if (!mask[static_cast<std::size_t>(c)]) logits[c] += affinity(x[c], cfg.affinity);
      }
      probs.push_back(softmax(logits, cfg.temperature));
      visual_sims.push_back(std::move(x));
      mean += probs.back();
    }
    mean /= K;
    out.loss.l_aug = entropy(mean);

    // dH/dP_c = -(log P_c + 1); classes with P_c == 0 carry p_{n,c} == 0 in every view.
    Vector dmean(C);
    for (Eigen::Index c = 0; c < C; ++c) dmean[c] = mean[c] > 0.0 ? -(std::log(mean[c]) + 1.0) / K : 0.0;

    for (std::size_t i = 0; i < selection.size(); ++i) {
      const auto f = views.row(static_cast<Eigen::Index>(selection[i]));
      const Vector& p = probs[i];
      const double centered = p.dot(dmean);
      for (Eigen::Index c = 0; c < C; ++c) {
        const double dz = p[c] * (dmean[c] - centered) / temp;
        if (dz == 0.0) continue;
        grad_t.row(c) += dz * f;
        if (!mask[static_cast<std::size_t>(c)]) {
          grad_v.row(c) += dz * affinity_derivative(visual_sims[i][c], cfg.affinity) * f;
        }
      }
    }
  }

  out.loss.l_align = loss_align(t, v, cfg.align_temperature);
  if (cfg.lambda != 0.0 && C > 1) {
    const double at = cfg.align_temperature;
    const Matrix s = (t * v.transpose()) / at;
    const Vector row_lse = detail::row_logsumexp(s);
    const Vector col_lse = detail::row_logsumexp(s.transpose());
    Matrix ds(C, C);
    for (Eigen::Index i = 0; i < C; ++i) {
      for (Eigen::Index j = 0; j < C; ++j) {
        ds(i, j) = std::exp(s(i, j) - row_lse[i]) + std::exp(s(i, j) - col_lse[j]) - (i == j ? 2.0 : 0.0);
      }
    }
    ds *= cfg.lambda / (static_cast<double>(C) * at);
    grad_t += ds * v;
    grad_v += ds.transpose() * t;
  }

  out.loss.total = (cfg.use_aug_loss ? out.loss.l_aug : 0.0) + cfg.lambda * out.loss.l_align;
  out.grad_t_hat = detail::normalize_backward(t, base_t + r.t_hat, grad_t);
  out.grad_v_hat = detail::normalize_backward(v, base_v + r.v_hat, grad_v);
  return out;
}

/// Objective value only, with the same frozen selection.
inline double total_loss(const Matrix& views, const std::vector<std::size_t>& selection, const Matrix& base_t,
                         const Matrix& base_v, const EmptyMask& mask, const ResidualPair& r,
                         const ObjectiveConfig& cfg) {
  const auto [t, v] = apply_residuals(base_t, base_v, r);
  double total = cfg.lambda * loss_align(t, v, cfg.align_temperature);
  if (cfg.use_aug_loss) total += loss_aug(views, selection, t, v, mask, cfg.affinity, cfg.temperature);
  return total;
}

/// View selection induced by the current residual state.
inline std::vector<std::size_t> current_selection(const Matrix& views, const Matrix& base_t, const Matrix& base_v,
                                                  const EmptyMask& mask, const ResidualPair& r,
                                                  const ObjectiveConfig& cfg) {
  const auto [t, v] = apply_residuals(base_t, base_v, r);
  return aggregate_predictions(views, t, v, mask, cfg.affinity, cfg.temperature, cfg.rho).selected;
}

namespace detail {
inline void adamw_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& s, const AdamWParams& p,
                         std::size_t step) {
  const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(step));
  param *= (1.0 - p.lr * p.weight_decay);
  m = p.beta1 * m + (1.0 - p.beta1) * grad;
  s = p.beta2 * s + (1.0 - p.beta2) * grad.cwiseAbs2();
  const auto m_hat = m.array() / bc1;
  const auto s_hat = s.array() / bc2;
  param.array() -= p.lr * m_hat / (s_hat.sqrt() + p.eps);
}
}  // namespace detail

/// Decoupled-weight-decay Adam step with bias correction.
inline void adamw_step(ResidualPair& r, const Matrix& grad_t_hat, const Matrix& grad_v_hat, OptimizerState& state,
                       const AdamWParams& p) {
  ++state.step;
  detail::adamw_update(r.t_hat, grad_t_hat, state.first.t_hat, state.second.t_hat, p, state.step);
  detail::adamw_update(r.v_hat, grad_v_hat, state.first.v_hat, state.second.v_hat, p, state.step);
}

struct OptimizeResult {
  Matrix t_star;
  Matrix v_star;
  ViewAggregate prediction;  // aggregate under t_star / v_star with a fresh selection
  LossBreakdown loss;        // objective at the zero residual
};

/// Fresh zero residuals, `n_steps` AdamW steps, then the optimized prototypes.
/// `base_v` rows must be non-zero even for masked classes.
inline OptimizeResult optimize_sample(const Matrix& views, const Matrix& base_t, const Matrix& base_v,
                                      const EmptyMask& mask, const ObjectiveConfig& cfg) {
  ResidualPair r = ResidualPair::zeros(base_t.rows(), base_t.cols());
  OptimizerState state = OptimizerState::zeros(base_t.rows(), base_t.cols());
  OptimizeResult out;
  for (std::size_t step = 0; step < cfg.n_steps; ++step) {
    const auto selection = current_selection(views, base_t, base_v, mask, r, cfg);
    GradResult g = grad_total(views, selection, base_t, base_v, mask, r, cfg);
    if (step == 0) out.loss = g.loss;
    adamw_step(r, g.grad_t_hat, g.grad_v_hat, state, cfg.adam);
  }
  std::tie(out.t_star, out.v_star) = apply_residuals(base_t, base_v, r);
  out.prediction = aggregate_predictions(views, out.t_star, out.v_star, mask, cfg.affinity, cfg.temperature, cfg.rho);
  if (cfg.n_steps == 0) {
    out.loss.lambda = cfg.lambda;
    out.loss.l_aug = entropy(out.prediction.mean_probs);
    out.loss.l_align = loss_align(out.t_star, out.v_star, cfg.align_temperature);
    out.loss.total = (cfg.use_aug_loss ? out.loss.l_aug : 0.0) + cfg.lambda * out.loss.l_align;
  }
  return out;
}

}  // namespace dpe

#endif  // DPE_RESIDUAL_OPT_HPP
