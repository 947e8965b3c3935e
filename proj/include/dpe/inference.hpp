#ifndef DPE_INFERENCE_HPP
#define DPE_INFERENCE_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dpe/core.hpp"

namespace dpe {

struct AffinityParams {
  double alpha = 6.0;  // balance weight
  double beta = 5.0;   // sharpness
};

/// A(x) = alpha * exp(-beta * (1 - x))
inline double affinity(double x, const AffinityParams& p) { return p.alpha * std::exp(-p.beta * (1.0 - x)); }

/// dA/dx
inline double affinity_derivative(double x, const AffinityParams& p) { return p.beta * affinity(x, p); }

/// `empty_mask[c]` true means class c has no visual prototype (textual score only).
using EmptyMask = std::vector<bool>;

inline void check_shapes(const Vector& f, const Matrix& textual, const Matrix& visual, const EmptyMask& mask) {
  if (textual.cols() != f.size() || visual.cols() != f.size()) {
    throw Error(ErrorKind::DimMismatch, "feature dim " + std::to_string(f.size()) +
                                            " does not match prototype dim " + std::to_string(textual.cols()));
  }
  if (visual.rows() != textual.rows() || mask.size() != static_cast<std::size_t>(textual.rows())) {
    throw Error(ErrorKind::DimMismatch, "textual, visual and mask disagree on class count");
  }
}

inline Vector proto_logits(const Vector& f, const Matrix& textual, const Matrix& visual, const EmptyMask& mask,
                           const AffinityParams& p) {
  check_shapes(f, textual, visual, mask);
  Vector logits = textual * f;
  for (Eigen::Index c = 0; c < logits.size(); ++c) {
    if (!mask[static_cast<std::size_t>(c)]) logits[c] += affinity(visual.row(c).dot(f), p);
  }
  return logits;
}

inline Vector predict(const Vector& f, const Matrix& textual, const Matrix& visual, const EmptyMask& mask,
                      const AffinityParams& p, Temperature temperature) {
  return softmax(proto_logits(f, textual, visual, mask, p), temperature);
}

struct ViewAggregate {
  Vector mean_probs;
  std::vector<std::size_t> selected;  // ascending by (entropy, index)
  double threshold = 0.0;             // entropy of the last selected view
};

inline std::size_t selection_count(std::size_t views, double rho) {
  // The epsilon absorbs representation error in products like 0.29 * 100.
  const auto k = static_cast<std::size_t>(std::floor(rho * static_cast<double>(views) + 1e-9));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(views, 1));
}

/// Ranks views by entropy (index breaks ties) and keeps the lowest-entropy ones.
inline std::vector<std::size_t> select_confident(const std::vector<double>& entropies, double rho) {
  std::vector<std::size_t> order(entropies.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return entropies[a] < entropies[b]; });
  order.resize(selection_count(entropies.size(), rho));
  return order;
}

inline ViewAggregate aggregate_views(const std::vector<Vector>& per_view_probs, double rho) {
  if (per_view_probs.empty()) throw Error(ErrorKind::DimMismatch, "aggregate_views needs at least one view");
  if (!(rho > 0.0 && rho <= 1.0)) throw Error(ErrorKind::ConfigInvalid, "rho must lie in (0, 1]");
  std::vector<double> entropies;
  entropies.reserve(per_view_probs.size());
  for (const auto& p : per_view_probs) entropies.push_back(entropy(p));

  ViewAggregate agg;
  agg.selected = select_confident(entropies, rho);
  agg.mean_probs = Vector::Zero(per_view_probs.front().size());
  for (std::size_t idx : agg.selected) agg.mean_probs += per_view_probs[idx];
  agg.mean_probs /= static_cast<double>(agg.selected.size());
  agg.threshold = entropies[agg.selected.back()];
  if (std::abs(agg.mean_probs.sum() - 1.0) > 1e-9) {
    throw Error(ErrorKind::NonFinite, "aggregated probabilities do not sum to one");
  }
  return agg;
}

/// Per-view predictions for all rows of `views`, then confident-view aggregation.
inline ViewAggregate aggregate_predictions(const Matrix& views, const Matrix& textual, const Matrix& visual,
                                           const EmptyMask& mask, const AffinityParams& p, Temperature temperature,
                                           double rho) {
  std::vector<Vector> probs;
  probs.reserve(static_cast<std::size_t>(views.rows()));
  for (Eigen::Index n = 0; n < views.rows(); ++n) {
    probs.push_back(predict(views.row(n).transpose(), textual, visual, mask, p, temperature));
  }
  return aggregate_views(probs, rho);
}

}  // namespace dpe

#endif  // DPE_INFERENCE_HPP
