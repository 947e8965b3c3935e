#ifndef DPE_CORE_HPP
#define DPE_CORE_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dpe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorKind {
  ZeroVector,
  NonFinite,
  DimMismatch,
  BadMagic,
  VersionMismatch,
  Truncated,
  NonUnitVector,
  ConfigInvalid,
  ClassOutOfRange,
  DegenerateRow,
  LabelMissing,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::Truncated: return "Truncated";
    case ErrorKind::NonUnitVector: return "NonUnitVector";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::ClassOutOfRange: return "ClassOutOfRange";
    case ErrorKind::DegenerateRow: return "DegenerateRow";
    case ErrorKind::LabelMissing: return "LabelMissing";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline constexpr double kMinNorm = 1e-12;

/// Softmax temperature; always strictly positive.
class Temperature {
 public:
  explicit Temperature(double t = 0.01) : t_(t) {
    if (!(t > 0.0) || !std::isfinite(t)) {
      throw Error(ErrorKind::ConfigInvalid, "temperature must be positive and finite");
    }
  }
  double value() const noexcept { return t_; }

 private:
  double t_;
};

inline Vector l2_normalize(const Vector& v) {
  const double norm = v.norm();
  if (!(norm >= kMinNorm)) {
    throw Error(ErrorKind::ZeroVector, "cannot normalize a vector with norm " + std::to_string(norm));
  }
  return v / norm;
}

/// Normalizes every row in place. Throws ZeroVector on a degenerate row.
inline void normalize_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (!(norm >= kMinNorm)) {
      throw Error(ErrorKind::ZeroVector, "row " + std::to_string(r) + " has zero norm");
    }
    m.row(r) /= norm;
  }
}

inline bool all_finite(const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) return false;
  }
  return true;
}

inline Vector softmax(const Vector& logits, Temperature temperature) {
  if (logits.size() == 0) {
    throw Error(ErrorKind::DimMismatch, "softmax of an empty vector");
  }
  if (!all_finite(logits)) {
    throw Error(ErrorKind::NonFinite, "softmax input contains NaN or Inf");
  }
  const double t = temperature.value();
  const double top = logits.maxCoeff();
  Vector out = ((logits.array() - top) / t).exp().matrix();
  out /= out.sum();
  return out;
}

/// Shannon entropy in nats, with 0 log 0 = 0.
inline double entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

inline double normalized_entropy(const Vector& p) {
  if (p.size() < 2) {
    throw Error(ErrorKind::DimMismatch, "normalized entropy needs at least two classes");
  }
  return entropy(p) / std::log(static_cast<double>(p.size()));
}

/// Index of the largest entry; the lowest index wins ties.
inline std::size_t argmax(const Vector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

}  // namespace dpe

#endif  // DPE_CORE_HPP
