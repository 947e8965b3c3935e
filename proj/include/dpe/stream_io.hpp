#ifndef DPE_STREAM_IO_HPP
#define DPE_STREAM_IO_HPP

// Binary interchange formats (little-endian, float32 payloads):
//
//   class-text  "DPEC" u16 version=1, u32 d, u32 C,
//               then per class: u16 name_len, name bytes, u16 S, S*d f32
//   stream      "DPES" u16 version=1, u16 flags (bit0 = labels), u32 d,
//               u32 n_samples, then per sample: u16 n_views,
//               u32 label (0xFFFFFFFF = none), n_views*d f32

#include <array>
#include <bit>
#include <type_traits>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dpe/core.hpp"

namespace dpe {

inline constexpr std::array<char, 4> kClassTextMagic{'D', 'P', 'E', 'C'};
inline constexpr std::array<char, 4> kStreamMagic{'D', 'P', 'E', 'S'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::uint32_t kNoLabel = 0xFFFFFFFFu;
inline constexpr double kUnitTolerance = 1e-4;

struct ClassTextSet {
  std::vector<std::string> class_names;
  // One S_c x d matrix of prompt embeddings per class.
  std::vector<Matrix> prompts;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t dim() const { return prompts.empty() ? 0 : static_cast<std::size_t>(prompts.front().cols()); }

  friend bool operator==(const ClassTextSet&, const ClassTextSet&) = default;
};

struct TestSample {
  Matrix views;  // n_views x d, row 0 is the original image
  std::optional<std::uint32_t> label;

  friend bool operator==(const TestSample&, const TestSample&) = default;
};

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  U bits = std::bit_cast<U>(value);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(ErrorKind::Truncated, std::string("unexpected end of file reading ") + what);
  }
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(bytes[i]) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

inline void put_magic(std::ostream& out, const std::array<char, 4>& magic) {
  out.write(magic.data(), magic.size());
}

inline void expect_magic(std::istream& in, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  in.read(got.data(), got.size());
  if (in.gcount() != 4) throw Error(ErrorKind::Truncated, "file shorter than its magic");
  if (got != magic) {
    throw Error(ErrorKind::BadMagic, "expected '" + std::string(magic.data(), 4) + "', found '" +
                                         std::string(got.data(), 4) + "'");
  }
}

inline void expect_version(std::istream& in) {
  const auto version = get_le<std::uint16_t>(in, "version");
  if (version != kFormatVersion) {
    throw Error(ErrorKind::VersionMismatch, "unsupported format version " + std::to_string(version));
  }
}

inline void write_row(std::ostream& out, const auto& row) {
  for (Eigen::Index j = 0; j < row.size(); ++j) put_le<float>(out, static_cast<float>(row[j]));
}

// Reads `rows` x `dim` floats; every row must be unit norm within kUnitTolerance.
inline Matrix read_unit_rows(std::istream& in, std::size_t rows, std::size_t dim, const char* what) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(r, j) = get_le<float>(in, what);
    const double norm = m.row(r).norm();
    if (!std::isfinite(norm) || std::abs(norm - 1.0) > kUnitTolerance) {
      throw Error(ErrorKind::NonUnitVector,
                  std::string(what) + " row " + std::to_string(r) + " has norm " + std::to_string(norm));
    }
  }
  return m;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "' for reading");
  return in;
}

}  // namespace detail

inline void validate(const ClassTextSet& set) {
  if (set.class_names.size() < 2) throw Error(ErrorKind::ConfigInvalid, "class-text set needs C >= 2");
  if (set.prompts.size() != set.class_names.size()) {
    throw Error(ErrorKind::DimMismatch, "class names and prompt lists differ in length");
  }
  const auto d = set.prompts.front().cols();
  if (d <= 0) throw Error(ErrorKind::DimMismatch, "embedding dimension must be positive");
  for (std::size_t c = 0; c < set.prompts.size(); ++c) {
    const Matrix& p = set.prompts[c];
    if (p.rows() < 1) throw Error(ErrorKind::ConfigInvalid, "class " + std::to_string(c) + " has no prompts");
    if (p.cols() != d) throw Error(ErrorKind::DimMismatch, "class " + std::to_string(c) + " has wrong dim");
    if (set.class_names[c].size() > 0xFFFF) throw Error(ErrorKind::ConfigInvalid, "class name too long");
    if (p.rows() > 0xFFFF) throw Error(ErrorKind::ConfigInvalid, "too many prompts for class");
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      if (std::abs(p.row(r).norm() - 1.0) > kUnitTolerance) {
        throw Error(ErrorKind::NonUnitVector, "prompt embedding is not unit norm");
      }
    }
  }
}

inline void write_classtext(std::ostream& out, const ClassTextSet& set) {
  validate(set);
  detail::put_magic(out, kClassTextMagic);
  detail::put_le<std::uint16_t>(out, kFormatVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.dim()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.num_classes()));
  for (std::size_t c = 0; c < set.num_classes(); ++c) {
    const std::string& name = set.class_names[c];
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(set.prompts[c].rows()));
    for (Eigen::Index r = 0; r < set.prompts[c].rows(); ++r) detail::write_row(out, set.prompts[c].row(r));
  }
}

inline void write_classtext(const std::string& path, const ClassTextSet& set) {
  auto out = detail::open_out(path);
  write_classtext(out, set);
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path + "'");
}

// Vectors are kept exactly as stored (float32 upcast); consumers normalize in f64.
inline ClassTextSet read_classtext(std::istream& in) {
  detail::expect_magic(in, kClassTextMagic);
  detail::expect_version(in);
  const auto d = detail::get_le<std::uint32_t>(in, "dim");
  const auto classes = detail::get_le<std::uint32_t>(in, "class count");
  if (d == 0) throw Error(ErrorKind::DimMismatch, "class-text file declares d = 0");
  ClassTextSet set;
  for (std::uint32_t c = 0; c < classes; ++c) {
    const auto name_len = detail::get_le<std::uint16_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (in.gcount() != name_len) throw Error(ErrorKind::Truncated, "unexpected end of file in class name");
    const auto s = detail::get_le<std::uint16_t>(in, "prompt count");
    set.class_names.push_back(std::move(name));
    set.prompts.push_back(detail::read_unit_rows(in, s, d, "prompt embedding"));
  }
  validate(set);
  return set;
}

inline ClassTextSet read_classtext(const std::string& path) {
  auto in = detail::open_in(path);
  return read_classtext(in);
}

struct StreamHeader {
  bool has_labels = false;
  std::uint32_t dim = 0;
  std::uint32_t num_samples = 0;
};

class StreamWriter {
 public:
  StreamWriter(std::ostream& out, std::uint32_t dim, std::uint32_t num_samples, bool with_labels)
      : out_(out), header_{with_labels, dim, num_samples} {
    if (dim == 0) throw Error(ErrorKind::DimMismatch, "stream dimension must be positive");
    detail::put_magic(out_, kStreamMagic);
    detail::put_le<std::uint16_t>(out_, kFormatVersion);
    detail::put_le<std::uint16_t>(out_, with_labels ? 1 : 0);
    detail::put_le<std::uint32_t>(out_, dim);
    detail::put_le<std::uint32_t>(out_, num_samples);
  }

  void write(const TestSample& sample) {
    if (written_ >= header_.num_samples) {
      throw Error(ErrorKind::ConfigInvalid, "more samples written than declared in the header");
    }
    if (sample.views.cols() != static_cast<Eigen::Index>(header_.dim)) {
      throw Error(ErrorKind::DimMismatch, "sample has d=" + std::to_string(sample.views.cols()) +
                                              " in a d=" + std::to_string(header_.dim) + " stream");
    }
    if (sample.views.rows() < 1 || sample.views.rows() > 0xFFFF) {
      throw Error(ErrorKind::ConfigInvalid, "sample must have between 1 and 65535 views");
    }
    if (header_.has_labels != sample.label.has_value()) {
      throw Error(ErrorKind::LabelMissing, "label presence does not match the stream header");
    }
    detail::put_le<std::uint16_t>(out_, static_cast<std::uint16_t>(sample.views.rows()));
    detail::put_le<std::uint32_t>(out_, sample.label.value_or(kNoLabel));
    for (Eigen::Index r = 0; r < sample.views.rows(); ++r) detail::write_row(out_, sample.views.row(r));
    ++written_;
  }

  std::uint32_t written() const { return written_; }

 private:
  std::ostream& out_;
  StreamHeader header_;
  std::uint32_t written_ = 0;
};

/// One-pass sequential reader; holds at most one sample in memory.
class StreamReader {
 public:
  explicit StreamReader(std::istream& in) : in_(in) {
    detail::expect_magic(in_, kStreamMagic);
    detail::expect_version(in_);
    const auto flags = detail::get_le<std::uint16_t>(in_, "flags");
    header_.has_labels = (flags & 1u) != 0;
    header_.dim = detail::get_le<std::uint32_t>(in_, "dim");
    header_.num_samples = detail::get_le<std::uint32_t>(in_, "sample count");
    if (header_.dim == 0) throw Error(ErrorKind::DimMismatch, "stream declares d = 0");
  }

  const StreamHeader& header() const { return header_; }
  std::uint32_t position() const { return read_; }

  std::optional<TestSample> next() {
    if (read_ >= header_.num_samples) return std::nullopt;
    const std::string where = "sample " + std::to_string(read_);
    const auto views = detail::get_le<std::uint16_t>(in_, where.c_str());
    const auto label = detail::get_le<std::uint32_t>(in_, where.c_str());
    if (views == 0) throw Error(ErrorKind::ConfigInvalid, where + " has no views");
    TestSample sample;
    if (label != kNoLabel) {
      if (!header_.has_labels) throw Error(ErrorKind::LabelMissing, where + " carries a label in an unlabeled stream");
      sample.label = label;
    } else if (header_.has_labels) {
      throw Error(ErrorKind::LabelMissing, where + " lacks a label in a labeled stream");
    }
    sample.views = detail::read_unit_rows(in_, views, header_.dim, where.c_str());
    ++read_;
    return sample;
  }

 private:
  std::istream& in_;
  StreamHeader header_;
  std::uint32_t read_ = 0;
};

inline void write_stream(std::ostream& out, const std::vector<TestSample>& samples) {
  if (samples.empty()) throw Error(ErrorKind::DimMismatch, "cannot infer d from an empty sample list");
  const auto d = static_cast<std::uint32_t>(samples.front().views.cols());
  StreamWriter writer(out, d, static_cast<std::uint32_t>(samples.size()), samples.front().label.has_value());
  for (const auto& s : samples) writer.write(s);
}

inline void write_stream(const std::string& path, const std::vector<TestSample>& samples) {
  auto out = detail::open_out(path);
  write_stream(out, samples);
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path + "'");
}

inline std::vector<TestSample> read_stream(std::istream& in) {
  StreamReader reader(in);
  std::vector<TestSample> samples;
  samples.reserve(reader.header().num_samples);
  while (auto s = reader.next()) samples.push_back(std::move(*s));
  return samples;
}

inline std::vector<TestSample> read_stream(const std::string& path) {
  auto in = detail::open_in(path);
  return read_stream(in);
}

// ---------------------------------------------------------------------------
// Synthetic distribution-shift generator.

struct SynthConfig {
  std::size_t classes = 20;
  std::size_t dim = 64;
  std::size_t samples = 2000;
  std::size_t views = 8;
  double shift_angle = 0.6;
  double sample_noise = 0.25;
  double view_noise = 0.02;
  std::size_t prompts_per_class = 4;
  double prompt_noise = 0.1;
  std::uint64_t seed = 7;
};

inline void validate(const SynthConfig& cfg) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::ConfigInvalid, what); };
  if (cfg.classes < 2) fail("classes must be >= 2");
  if (cfg.dim < 2) fail("dim must be >= 2");
  if (cfg.samples < 1) fail("samples must be >= 1");
  if (cfg.views < 1 || cfg.views > 0xFFFF) fail("views must be in [1, 65535]");
  if (cfg.prompts_per_class < 1 || cfg.prompts_per_class > 0xFFFF) fail("prompts must be in [1, 65535]");
  if (!(cfg.shift_angle >= 0.0 && cfg.shift_angle <= std::numbers::pi / 2)) fail("shift must be in [0, pi/2]");
  if (!(cfg.sample_noise >= 0.0) || !(cfg.view_noise >= 0.0) || !(cfg.prompt_noise >= 0.0)) {
    fail("noise levels must be >= 0");
  }
}

struct SyntheticData {
  ClassTextSet classtext;
  std::vector<TestSample> samples;  // labels attached
  std::vector<std::uint32_t> labels;
  Matrix class_means;               // C x d, before the shift
};

namespace detail {

// Float32-rounded and renormalized so stored vectors pass the unit check exactly as written.
inline Vector unit_f32(const Vector& v) {
  Vector u = l2_normalize(v);
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = static_cast<double>(static_cast<float>(u[i]));
  return u;
}

}  // namespace detail

/// Class means are random unit vectors. The shift is a rotation by `shift_angle`
/// in each of the d/2 planes of a seeded random orthonormal basis, so every
/// class mean moves by exactly that angle while pairwise class geometry is kept.
inline SyntheticData generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto C = static_cast<Eigen::Index>(cfg.classes);
  auto gaussian = [&](Eigen::Index n) {
    Vector g(n);
    for (Eigen::Index i = 0; i < n; ++i) g[i] = normal(rng);
    return g;
  };

  SyntheticData data;
  data.class_means.resize(C, d);
  for (Eigen::Index c = 0; c < C; ++c) data.class_means.row(c) = l2_normalize(gaussian(d)).transpose();

  Matrix basis_seed(d, d);
  for (Eigen::Index r = 0; r < d; ++r) basis_seed.row(r) = gaussian(d).transpose();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis_seed);
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd block = Eigen::MatrixXd::Identity(d, d);
  const double cs = std::cos(cfg.shift_angle);
  const double sn = std::sin(cfg.shift_angle);
  for (Eigen::Index i = 0; i + 1 < d; i += 2) {
    block(i, i) = cs;
    block(i, i + 1) = -sn;
    block(i + 1, i) = sn;
    block(i + 1, i + 1) = cs;
  }
  const Eigen::MatrixXd rotation = q * block * q.transpose();

  data.classtext.class_names.reserve(cfg.classes);
  for (Eigen::Index c = 0; c < C; ++c) {
    data.classtext.class_names.push_back("class_" + std::to_string(c));
    Matrix prompts(static_cast<Eigen::Index>(cfg.prompts_per_class), d);
    for (Eigen::Index s = 0; s < prompts.rows(); ++s) {
      const Vector mean = data.class_means.row(c).transpose();
      prompts.row(s) = detail::unit_f32(mean + cfg.prompt_noise * gaussian(d)).transpose();
    }
    data.classtext.prompts.push_back(std::move(prompts));
  }

  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(cfg.classes - 1));
  data.samples.reserve(cfg.samples);
  data.labels.reserve(cfg.samples);
  for (std::size_t n = 0; n < cfg.samples; ++n) {
    const std::uint32_t label = pick(rng);
    const Vector shifted = rotation * data.class_means.row(label).transpose();
    const Vector original = l2_normalize(shifted + cfg.sample_noise * gaussian(d));
    TestSample sample;
    sample.views.resize(static_cast<Eigen::Index>(cfg.views), d);
    sample.views.row(0) = detail::unit_f32(original).transpose();
    for (Eigen::Index v = 1; v < sample.views.rows(); ++v) {
      sample.views.row(v) = detail::unit_f32(original + cfg.view_noise * gaussian(d)).transpose();
    }
    sample.label = label;
    data.samples.push_back(std::move(sample));
    data.labels.push_back(label);
  }
  return data;
}

}  // namespace dpe

#endif  // DPE_STREAM_IO_HPP
