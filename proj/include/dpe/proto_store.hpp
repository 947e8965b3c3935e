#ifndef DPE_PROTO_STORE_HPP
#define DPE_PROTO_STORE_HPP

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dpe/core.hpp"
#include "dpe/stream_io.hpp"

namespace dpe {

enum class UpdateRuleKind : std::uint8_t { NoUpdate = 0, FullUpdate = 1, ExponentialAvg = 2, CumulativeAvg = 3 };

struct UpdateRule {
  UpdateRuleKind kind = UpdateRuleKind::CumulativeAvg;
  double gamma = 0.99;  // ExponentialAvg only: weight on the running prototype

  friend bool operator==(const UpdateRule&, const UpdateRule&) = default;
};

inline std::string to_string(const UpdateRule& rule) {
  switch (rule.kind) {
    case UpdateRuleKind::NoUpdate: return "none";
    case UpdateRuleKind::FullUpdate: return "full";
    case UpdateRuleKind::ExponentialAvg: return "ema:" + std::to_string(rule.gamma);
    case UpdateRuleKind::CumulativeAvg: return "cumulative";
  }
  return "unknown";
}

/// Row-wise mean of each class's prompt embeddings, renormalized.
inline Matrix class_prompt_means(const ClassTextSet& classtext) {
  validate(classtext);
  Matrix protos(static_cast<Eigen::Index>(classtext.num_classes()), static_cast<Eigen::Index>(classtext.dim()));
  for (std::size_t c = 0; c < classtext.num_classes(); ++c) {
    const Vector mean = classtext.prompts[c].colwise().mean().transpose();
    protos.row(static_cast<Eigen::Index>(c)) = l2_normalize(mean).transpose();
  }
  return protos;
}

class TextualStore {
 public:
  TextualStore() = default;
  TextualStore(Matrix initial, UpdateRule rule)
      : initial_(std::move(initial)), prototypes_(initial_), rule_(rule) {
    if (rule_.kind == UpdateRuleKind::ExponentialAvg && !(rule_.gamma >= 0.0 && rule_.gamma <= 1.0)) {
      throw Error(ErrorKind::ConfigInvalid, "exponential-average gamma must lie in [0, 1]");
    }
  }

  static TextualStore from_classtext(const ClassTextSet& classtext, UpdateRule rule) {
    return TextualStore(class_prompt_means(classtext), rule);
  }

  const Matrix& prototypes() const { return prototypes_; }
  const Matrix& initial() const { return initial_; }
  std::uint64_t count() const { return k_; }
  const UpdateRule& rule() const { return rule_; }

  /// Applies the update rule when `gate_entropy <= threshold`. Returns true
  /// when the sample was accepted by the gate.
  bool evolve(const Matrix& optimized, double gate_entropy, double threshold) {
    if (optimized.rows() != prototypes_.rows() || optimized.cols() != prototypes_.cols()) {
      throw Error(ErrorKind::DimMismatch, "optimized textual prototypes have the wrong shape");
    }
    if (!(gate_entropy <= threshold)) return false;
    switch (rule_.kind) {
      case UpdateRuleKind::NoUpdate:
        break;
      case UpdateRuleKind::FullUpdate:
        prototypes_ = optimized;
        break;
      case UpdateRuleKind::ExponentialAvg:
        prototypes_ = rule_.gamma * prototypes_ + (1.0 - rule_.gamma) * optimized;
        normalize_rows(prototypes_);
        break;
      case UpdateRuleKind::CumulativeAvg:
        // Weight on the running prototype is the number of earlier acceptances.
        prototypes_ = static_cast<double>(k_) * prototypes_ + optimized;
        normalize_rows(prototypes_);
        ++k_;
        break;
    }
    return true;
  }

  // Checkpoint restore only.
  void restore(Matrix current, std::uint64_t k) {
    prototypes_ = std::move(current);
    k_ = k;
  }

 private:
  Matrix initial_;
  Matrix prototypes_;
  std::uint64_t k_ = 0;
  UpdateRule rule_;
};

struct QueueEntry {
  Vector feature;
  double self_entropy = 0.0;
  std::uint64_t arrival = 0;  // FIFO tie-break: earlier arrival sorts first
};

/// Per-class bounded priority queues of low-entropy features and the visual
/// prototypes derived from them.
class VisualStore {
 public:
  VisualStore() = default;
  VisualStore(std::size_t classes, std::size_t dim, std::size_t capacity, bool normalize_prototypes = true)
      : queues_(classes),
        capacity_(capacity),
        normalize_(normalize_prototypes),
        prototypes_(Matrix::Zero(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim))),
        empty_(classes, true) {
    if (capacity == 0) throw Error(ErrorKind::ConfigInvalid, "queue capacity must be >= 1");
  }

  std::size_t num_classes() const { return queues_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool normalizes() const { return normalize_; }
  const std::vector<QueueEntry>& queue(std::size_t c) const { return queues_.at(c); }
  std::uint64_t next_arrival() const { return next_arrival_; }

  /// Cached prototypes; rows of empty classes are zero and flagged in `empty_mask`.
  const Matrix& prototypes() const { return prototypes_; }
  const std::vector<bool>& empty_mask() const { return empty_; }
  bool all_empty() const { return std::all_of(empty_.begin(), empty_.end(), [](bool e) { return e; }); }

  /// Offers a feature to class `label`'s queue. Returns true if the queue changed.
  bool update(std::size_t label, const Vector& feature, double self_entropy) {
    if (label >= queues_.size()) {
      throw Error(ErrorKind::ClassOutOfRange, "class " + std::to_string(label) + " out of range");
    }
    if (feature.size() != prototypes_.cols()) throw Error(ErrorKind::DimMismatch, "queue feature has wrong dim");
    auto& q = queues_[label];
    QueueEntry entry{feature, self_entropy, next_arrival_++};
    if (q.size() < capacity_) {
      q.push_back(std::move(entry));
    } else if (self_entropy < q.back().self_entropy) {
      q.back() = std::move(entry);
    } else {
      return false;
    }
    std::sort(q.begin(), q.end(), [](const QueueEntry& a, const QueueEntry& b) {
      return a.self_entropy < b.self_entropy || (a.self_entropy == b.self_entropy && a.arrival < b.arrival);
    });
    recompute(label);
    return true;
  }

  // Checkpoint restore only.
  void restore(std::vector<std::vector<QueueEntry>> queues, std::uint64_t next_arrival) {
    queues_ = std::move(queues);
    next_arrival_ = next_arrival;
    for (std::size_t c = 0; c < queues_.size(); ++c) recompute(c);
  }

 private:
  void recompute(std::size_t c) {
    const auto row = static_cast<Eigen::Index>(c);
    const auto& q = queues_[c];
    if (q.empty()) {
      prototypes_.row(row).setZero();
      empty_[c] = true;
      return;
    }
    Vector mean = Vector::Zero(prototypes_.cols());
    for (const auto& e : q) mean += e.feature;
    mean /= static_cast<double>(q.size());
    prototypes_.row(row) = (normalize_ ? l2_normalize(mean) : mean).transpose();
    empty_[c] = false;
  }

  std::vector<std::vector<QueueEntry>> queues_;
  std::size_t capacity_ = 0;
  bool normalize_ = true;
  Matrix prototypes_;
  std::vector<bool> empty_;
  std::uint64_t next_arrival_ = 0;
};

// ---------------------------------------------------------------------------
// "DPEK" checkpoint: u16 version, u32 d, u32 C, u64 samples_seen,
// textual {u8 rule, f64 gamma, u64 k, C*d f64 initial, C*d f64 current},
// visual {u32 M, u8 normalize, u64 next_arrival,
//         per class: u16 len, len * (f64 entropy, u64 arrival, d f64)}.
// Payloads are f64 so a resumed run continues bit-exactly.

inline constexpr std::array<char, 4> kCheckpointMagic{'D', 'P', 'E', 'K'};

struct Checkpoint {
  TextualStore textual;
  VisualStore visual;
  std::uint64_t samples_seen = 0;
};

namespace detail {
inline void put_matrix_f64(std::ostream& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_le<double>(out, m(r, j));
}
inline Matrix get_matrix_f64(std::istream& in, std::uint32_t rows, std::uint32_t cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(r, j) = get_le<double>(in, "checkpoint matrix");
  return m;
}
}  // namespace detail

inline void write_checkpoint(std::ostream& out, const TextualStore& textual, const VisualStore& visual,
                             std::uint64_t samples_seen) {
  const auto d = static_cast<std::uint32_t>(textual.prototypes().cols());
  const auto C = static_cast<std::uint32_t>(textual.prototypes().rows());
  detail::put_magic(out, kCheckpointMagic);
  detail::put_le<std::uint16_t>(out, kFormatVersion);
  detail::put_le<std::uint32_t>(out, d);
  detail::put_le<std::uint32_t>(out, C);
  detail::put_le<std::uint64_t>(out, samples_seen);
  out.put(static_cast<char>(textual.rule().kind));
  detail::put_le<double>(out, textual.rule().gamma);
  detail::put_le<std::uint64_t>(out, textual.count());
  detail::put_matrix_f64(out, textual.initial());
  detail::put_matrix_f64(out, textual.prototypes());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(visual.capacity()));
  out.put(visual.normalizes() ? 1 : 0);
  detail::put_le<std::uint64_t>(out, visual.next_arrival());
  for (std::size_t c = 0; c < visual.num_classes(); ++c) {
    const auto& q = visual.queue(c);
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(q.size()));
    for (const auto& e : q) {
      detail::put_le<double>(out, e.self_entropy);
      detail::put_le<std::uint64_t>(out, e.arrival);
      for (Eigen::Index j = 0; j < e.feature.size(); ++j) detail::put_le<double>(out, e.feature[j]);
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  detail::expect_magic(in, kCheckpointMagic);
  detail::expect_version(in);
  const auto d = detail::get_le<std::uint32_t>(in, "dim");
  const auto C = detail::get_le<std::uint32_t>(in, "class count");
  Checkpoint ck;
  ck.samples_seen = detail::get_le<std::uint64_t>(in, "samples seen");
  const int kind = in.get();
  if (kind < 0 || kind > 3) throw Error(ErrorKind::Truncated, "bad update-rule tag in checkpoint");
  UpdateRule rule{static_cast<UpdateRuleKind>(kind), detail::get_le<double>(in, "gamma")};
  const auto k = detail::get_le<std::uint64_t>(in, "counter");
  Matrix initial = detail::get_matrix_f64(in, C, d);
  Matrix current = detail::get_matrix_f64(in, C, d);
  ck.textual = TextualStore(std::move(initial), rule);
  ck.textual.restore(std::move(current), k);
  const auto capacity = detail::get_le<std::uint32_t>(in, "capacity");
  const int normalize = in.get();
  if (normalize < 0) throw Error(ErrorKind::Truncated, "unexpected end of checkpoint");
  const auto next_arrival = detail::get_le<std::uint64_t>(in, "arrival counter");
  ck.visual = VisualStore(C, d, capacity, normalize != 0);
  std::vector<std::vector<QueueEntry>> queues(C);
  for (auto& q : queues) {
    const auto len = detail::get_le<std::uint16_t>(in, "queue length");
    if (len > capacity) throw Error(ErrorKind::ConfigInvalid, "queue longer than its capacity");
    for (std::uint16_t i = 0; i < len; ++i) {
      QueueEntry e;
      e.self_entropy = detail::get_le<double>(in, "entropy");
      e.arrival = detail::get_le<std::uint64_t>(in, "arrival");
      e.feature.resize(d);
      for (std::uint32_t j = 0; j < d; ++j) e.feature[j] = detail::get_le<double>(in, "feature");
      q.push_back(std::move(e));
    }
  }
  ck.visual.restore(std::move(queues), next_arrival);
  return ck;
}

}  // namespace dpe

#endif  // DPE_PROTO_STORE_HPP
