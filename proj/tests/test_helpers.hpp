#ifndef DPE_TESTS_HELPERS_HPP
#define DPE_TESTS_HELPERS_HPP

#include <filesystem>
#include <random>
#include <sstream>
#include <string>

#include "dpe/dpe.hpp"
#include "oracles.hpp"

namespace testing_util {

inline dpe::Matrix random_unit_rows(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal;
  dpe::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  dpe::normalize_rows(m);
  return m;
}

inline dpe::Vector random_unit(std::mt19937_64& rng, Eigen::Index d) {
  return random_unit_rows(rng, 1, d).row(0).transpose();
}

inline oracle::Mat to_rows(const dpe::Matrix& m) {
  oracle::Mat out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out.emplace_back(m.row(r).data(), m.row(r).data() + m.cols());
  }
  return out;
}

inline std::vector<oracle::Mat> to_prompts(const dpe::ClassTextSet& set) {
  std::vector<oracle::Mat> out;
  for (const auto& p : set.prompts) out.push_back(to_rows(p));
  return out;
}

// The benchmark fixture: 20 classes, d=64, 2000 samples of 8 views, shift 0.6, noise 0.25, seed 7.
inline const dpe::SyntheticData& fixture() {
  static const dpe::SyntheticData data = dpe::generate_synthetic(dpe::SynthConfig{});
  return data;
}

inline std::string stream_bytes(const std::vector<dpe::TestSample>& samples) {
  std::ostringstream out;
  dpe::write_stream(out, samples);
  return out.str();
}

inline std::string classtext_bytes(const dpe::ClassTextSet& set) {
  std::ostringstream out;
  dpe::write_classtext(out, set);
  return out.str();
}

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dpe_test_" + name)).string();
}

}  // namespace testing_util

#endif  // DPE_TESTS_HELPERS_HPP
