#ifndef DPE_CONFIG_IO_HPP
#define DPE_CONFIG_IO_HPP

// Flat `key = value` config documents for EngineConfig. Lines starting with
// '#' are comments. Unknown keys are errors.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dpe/engine.hpp"

namespace dpe {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double x = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return x;
  } catch (const std::exception&) {
    throw Error(ErrorKind::ConfigInvalid, "'" + key + "' expects a number, got '" + value + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), x);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw Error(ErrorKind::ConfigInvalid, "'" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw Error(ErrorKind::ConfigInvalid, "'" + key + "' expects true/false, got '" + value + "'");
}

inline PredictionSource parse_source(const std::string& key, const std::string& value) {
  if (value == "zeroshot") return PredictionSource::ZeroShot;
  if (value == "proto") return PredictionSource::Proto;
  if (value == "dpe") return PredictionSource::Dpe;
  throw Error(ErrorKind::ConfigInvalid, "'" + key + "' expects zeroshot|proto|dpe, got '" + value + "'");
}

inline UpdateRuleKind parse_rule(const std::string& value) {
  if (value == "none") return UpdateRuleKind::NoUpdate;
  if (value == "full") return UpdateRuleKind::FullUpdate;
  if (value == "ema") return UpdateRuleKind::ExponentialAvg;
  if (value == "cumulative") return UpdateRuleKind::CumulativeAvg;
  throw Error(ErrorKind::ConfigInvalid, "update_rule expects none|full|ema|cumulative, got '" + value + "'");
}

inline const char* rule_name(UpdateRuleKind kind) {
  switch (kind) {
    case UpdateRuleKind::NoUpdate: return "none";
    case UpdateRuleKind::FullUpdate: return "full";
    case UpdateRuleKind::ExponentialAvg: return "ema";
    case UpdateRuleKind::CumulativeAvg: return "cumulative";
  }
  return "cumulative";
}

// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline void apply_setting(EngineConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "temperature") cfg.temperature = parse_double(key, value);
  else if (key == "alpha") cfg.affinity.alpha = parse_double(key, value);
  else if (key == "beta") cfg.affinity.beta = parse_double(key, value);
  else if (key == "lambda") cfg.lambda = parse_double(key, value);
  else if (key == "tau_t") cfg.tau_t = parse_double(key, value);
  else if (key == "queue_size") cfg.queue_size = parse_uint(key, value);
  else if (key == "rho") cfg.rho = parse_double(key, value);
  else if (key == "n_steps") cfg.n_steps = parse_uint(key, value);
  else if (key == "lr") cfg.adam.lr = parse_double(key, value);
  else if (key == "adam_beta1") cfg.adam.beta1 = parse_double(key, value);
  else if (key == "adam_beta2") cfg.adam.beta2 = parse_double(key, value);
  else if (key == "adam_eps") cfg.adam.eps = parse_double(key, value);
  else if (key == "weight_decay") cfg.adam.weight_decay = parse_double(key, value);
  else if (key == "align_temperature") cfg.align_temperature = parse_double(key, value);
  else if (key == "update_rule") cfg.rule.kind = parse_rule(value);
  else if (key == "ema_gamma") cfg.rule.gamma = parse_double(key, value);
  else if (key == "enable_vpe") cfg.enable_vpe = parse_bool(key, value);
  else if (key == "enable_tpe") cfg.enable_tpe = parse_bool(key, value);
  else if (key == "enable_prl") cfg.enable_prl = parse_bool(key, value);
  else if (key == "use_aug_loss") cfg.use_aug_loss = parse_bool(key, value);
  else if (key == "pseudo_label_source") cfg.pseudo_label_source = parse_source(key, value);
  else if (key == "gate_source") cfg.gate_source = parse_source(key, value);
  else if (key == "normalize_visual_proto") cfg.normalize_visual_proto = parse_bool(key, value);
  else if (key == "seed") cfg.seed = parse_uint(key, value);
  else throw Error(ErrorKind::ConfigInvalid, "unknown config key '" + key + "'");
}

/// Every field as (key, value) text, in a stable order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const EngineConfig& cfg) {
  using detail::format_double;
  auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  return {
      {"temperature", format_double(cfg.temperature)},
      {"alpha", format_double(cfg.affinity.alpha)},
      {"beta", format_double(cfg.affinity.beta)},
      {"lambda", format_double(cfg.lambda)},
      {"tau_t", format_double(cfg.tau_t)},
      {"queue_size", std::to_string(cfg.queue_size)},
      {"rho", format_double(cfg.rho)},
      {"n_steps", std::to_string(cfg.n_steps)},
      {"lr", format_double(cfg.adam.lr)},
      {"adam_beta1", format_double(cfg.adam.beta1)},
      {"adam_beta2", format_double(cfg.adam.beta2)},
      {"adam_eps", format_double(cfg.adam.eps)},
      {"weight_decay", format_double(cfg.adam.weight_decay)},
      {"align_temperature", format_double(cfg.align_temperature)},
      {"update_rule", detail::rule_name(cfg.rule.kind)},
      {"ema_gamma", format_double(cfg.rule.gamma)},
      {"enable_vpe", flag(cfg.enable_vpe)},
      {"enable_tpe", flag(cfg.enable_tpe)},
      {"enable_prl", flag(cfg.enable_prl)},
      {"use_aug_loss", flag(cfg.use_aug_loss)},
      {"pseudo_label_source", to_string(cfg.pseudo_label_source)},
      {"gate_source", to_string(cfg.gate_source)},
      {"normalize_visual_proto", flag(cfg.normalize_visual_proto)},
      {"seed", std::to_string(cfg.seed)},
  };
}

inline EngineConfig parse_config(std::istream& in, EngineConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::ConfigInvalid, "line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    apply_setting(cfg, detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

inline EngineConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline EngineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open config '" + path + "'");
  return parse_config(in);
}

inline std::string format_config(const EngineConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace dpe

#endif  // DPE_CONFIG_IO_HPP
