#ifndef DPE_HARNESS_HPP
#define DPE_HARNESS_HPP

#include <algorithm>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dpe/config_io.hpp"
#include "dpe/digest.hpp"
#include "dpe/engine.hpp"
#include "dpe/stream_io.hpp"

namespace dpe {

using Json = nlohmann::ordered_json;

// Report keys that carry wall-clock measurements; everything else is deterministic.
inline const std::vector<std::string> kTimingKeys = {"mean_wall_time_us", "total_wall_time_s"};

struct WindowStats {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::optional<double> accuracy;
  double mean_l_aug = 0.0;
  double mean_l_align = 0.0;
};

struct RunReport {
  EngineConfig config;
  std::string stream_digest;
  std::string classtext_digest;
  std::size_t n_samples = 0;
  bool labeled = false;
  std::size_t correct = 0;
  std::optional<double> accuracy;
  std::optional<double> first_half_accuracy;
  std::optional<double> second_half_accuracy;
  std::size_t window_size = 250;
  std::vector<WindowStats> windows;
  std::vector<std::optional<double>> per_class_accuracy;
  double mean_wall_time_us = 0.0;
  double total_wall_time_s = 0.0;
  std::size_t textual_updates = 0;
  std::size_t queue_mutations = 0;
  std::uint64_t final_k = 0;
  std::vector<std::size_t> predictions;
  std::vector<std::optional<std::uint32_t>> labels;
  std::optional<std::size_t> failed_at;
  std::optional<ErrorKind> failure_kind;
  std::string failure;
};

namespace detail {
inline std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

/// Builds the report from per-sample outcomes. Accuracy is recounted from the
/// stored predictions and the two tallies must agree.
inline RunReport make_report(const StreamRun& run, const EngineConfig& cfg, std::size_t num_classes,
                             std::uint64_t final_k, std::size_t window_size = 250) {
  if (window_size == 0) throw Error(ErrorKind::ConfigInvalid, "window size must be >= 1");
  RunReport rep;
  rep.config = cfg;
  rep.window_size = window_size;
  rep.n_samples = run.outcomes.size();
  rep.labels = run.labels;
  rep.failed_at = run.failed_at;
  rep.failure_kind = run.failure_kind;
  rep.failure = run.failure;
  rep.final_k = final_k;
  rep.labeled = rep.n_samples > 0 && std::all_of(run.labels.begin(), run.labels.end(),
                                                 [](const auto& l) { return l.has_value(); });

  std::vector<std::size_t> class_total(num_classes, 0);
  std::vector<std::size_t> class_correct(num_classes, 0);
  std::size_t half_correct[2] = {0, 0};
  const std::size_t half = rep.n_samples / 2;
  double wall = 0.0;
  for (std::size_t i = 0; i < rep.n_samples; ++i) {
    const SampleOutcome& o = run.outcomes[i];
    rep.predictions.push_back(o.predicted);
    rep.textual_updates += o.textual_updated ? 1 : 0;
    rep.queue_mutations += o.queue_mutated ? 1 : 0;
    wall += o.wall_time_us;
    if (!rep.labeled) continue;
    const std::uint32_t label = *run.labels[i];
    if (label >= num_classes) {
      throw Error(ErrorKind::ClassOutOfRange, "label " + std::to_string(label) + " at sample " + std::to_string(i));
    }
    const bool hit = o.predicted == label;
    rep.correct += hit ? 1 : 0;
    half_correct[i < half ? 0 : 1] += hit ? 1 : 0;
    ++class_total[label];
    class_correct[label] += hit ? 1 : 0;
  }
  rep.mean_wall_time_us = rep.n_samples ? wall / static_cast<double>(rep.n_samples) : 0.0;
  rep.total_wall_time_s = wall * 1e-6;

  for (std::size_t start = 0; start < rep.n_samples; start += window_size) {
    WindowStats w;
    w.start = start;
    w.end = std::min(rep.n_samples, start + window_size);
    std::size_t hits = 0;
    for (std::size_t i = w.start; i < w.end; ++i) {
      w.mean_l_aug += run.outcomes[i].loss.l_aug;
      w.mean_l_align += run.outcomes[i].loss.l_align;
      if (rep.labeled) hits += run.outcomes[i].predicted == *run.labels[i] ? 1 : 0;
    }
    const auto n = static_cast<double>(w.end - w.start);
    w.mean_l_aug /= n;
    w.mean_l_align /= n;
    if (rep.labeled) w.accuracy = static_cast<double>(hits) / n;
    rep.windows.push_back(w);
  }

  if (rep.labeled) {
    rep.accuracy = detail::ratio(rep.correct, rep.n_samples);
    rep.first_half_accuracy = detail::ratio(half_correct[0], half);
    rep.second_half_accuracy = detail::ratio(half_correct[1], rep.n_samples - half);
    for (std::size_t c = 0; c < num_classes; ++c) {
      rep.per_class_accuracy.push_back(detail::ratio(class_correct[c], class_total[c]));
    }
    std::size_t recount = 0;
    for (std::size_t i = 0; i < rep.predictions.size(); ++i) recount += rep.predictions[i] == *rep.labels[i] ? 1 : 0;
    if (recount != rep.correct) throw Error(ErrorKind::NonFinite, "accuracy recount disagrees with the tally");
  }
  return rep;
}

inline Json to_json(const RunReport& rep) {
  auto opt = [](const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); };
  Json config = Json::object();
  for (const auto& [k, v] : config_entries(rep.config)) config[k] = v;
  Json windows = Json::array();
  for (const auto& w : rep.windows) {
    windows.push_back(Json{{"start", w.start},
                           {"end", w.end},
                           {"accuracy", opt(w.accuracy)},
                           {"mean_l_aug", w.mean_l_aug},
                           {"mean_l_align", w.mean_l_align}});
  }
  Json per_class = Json::array();
  for (const auto& a : rep.per_class_accuracy) per_class.push_back(opt(a));
  Json labels = Json::array();
  for (const auto& l : rep.labels) labels.push_back(l ? Json(*l) : Json(nullptr));

  Json j;
  j["engine_version"] = kEngineVersion;
  j["config"] = config;
  j["stream_digest"] = rep.stream_digest;
  j["classtext_digest"] = rep.classtext_digest;
  j["n_samples"] = rep.n_samples;
  j["labeled"] = rep.labeled;
  j["correct"] = rep.correct;
  j["accuracy"] = opt(rep.accuracy);
  j["first_half_accuracy"] = opt(rep.first_half_accuracy);
  j["second_half_accuracy"] = opt(rep.second_half_accuracy);
  j["window_size"] = rep.window_size;
  j["windows"] = windows;
  j["per_class_accuracy"] = per_class;
  j["textual_updates"] = rep.textual_updates;
  j["queue_mutations"] = rep.queue_mutations;
  j["final_k"] = rep.final_k;
  j["mean_wall_time_us"] = rep.mean_wall_time_us;
  j["total_wall_time_s"] = rep.total_wall_time_s;
  j["aborted"] = rep.failed_at ? Json{{"index", *rep.failed_at},
                                      {"kind", to_string(*rep.failure_kind)},
                                      {"message", rep.failure}}
                               : Json(nullptr);
  j["predictions"] = rep.predictions;
  j["labels"] = labels;
  return j;
}

/// Report JSON with the wall-clock fields removed, for reproducibility comparisons.
inline Json without_timing(Json j) {
  for (const auto& key : kTimingKeys) j.erase(key);
  return j;
}

struct EvaluateOptions {
  std::size_t window_size = 250;
  bool require_labels = true;
  std::size_t checkpoint_every = 0;  // 0 disables
  std::string checkpoint_path;
  std::string resume_path;  // when set, state is restored and already-seen samples are skipped
};

/// Runs one config over an in-memory stream file image.
inline RunReport evaluate_bytes(const std::string& stream_bytes, const ClassTextSet& classtext,
                                const std::string& classtext_digest, const EngineConfig& cfg,
                                const EvaluateOptions& opts = {}) {
  std::istringstream in(stream_bytes);
  StreamReader reader(in);
  if (opts.require_labels && !reader.header().has_labels) {
    throw Error(ErrorKind::LabelMissing, "accuracy requested on an unlabeled stream");
  }
  if (reader.header().dim != classtext.dim()) {
    throw Error(ErrorKind::DimMismatch, "stream d=" + std::to_string(reader.header().dim) +
                                            " but class-text d=" + std::to_string(classtext.dim()));
  }
  Engine engine(classtext, cfg);
  if (!opts.resume_path.empty()) {
    engine.load_checkpoint(opts.resume_path);
    for (std::uint64_t i = 0; i < engine.samples_seen(); ++i) {
      if (!reader.next()) throw Error(ErrorKind::Truncated, "checkpoint is ahead of the stream");
    }
  }
  std::function<void(const Engine&, std::size_t)> on_step;
  if (opts.checkpoint_every > 0 && !opts.checkpoint_path.empty()) {
    on_step = [&](const Engine& e, std::size_t) {
      if (e.samples_seen() % opts.checkpoint_every == 0) e.save_checkpoint(opts.checkpoint_path);
    };
  }
  StreamRun run = run_stream(engine, [&] { return reader.next(); }, on_step);
  RunReport rep = make_report(run, cfg, classtext.num_classes(), engine.textual().count(), opts.window_size);
  rep.stream_digest = sha256_hex(stream_bytes);
  rep.classtext_digest = classtext_digest;
  return rep;
}

inline RunReport evaluate(const std::string& stream_path, const std::string& classtext_path,
                          const EngineConfig& cfg, const EvaluateOptions& opts = {}) {
  const std::string classtext_bytes = read_file_bytes(classtext_path);
  std::istringstream ct(classtext_bytes);
  const ClassTextSet classtext = read_classtext(ct);
  return evaluate_bytes(read_file_bytes(stream_path), classtext, sha256_hex(classtext_bytes), cfg, opts);
}

// ---------------------------------------------------------------------------
// Ablation grids.

struct AblationArm {
  std::string name;
  std::vector<std::pair<std::string, std::string>> delta;
};

using AblationGrid = std::vector<AblationArm>;

inline AblationGrid ablation_preset(const std::string& name) {
  if (name == "components") {
    return {{"full", {}},
            {"no-vpe", {{"enable_vpe", "false"}}},
            {"no-tpe", {{"enable_tpe", "false"}}},
            {"no-prl", {{"enable_prl", "false"}}},
            {"zero-shot", {{"enable_vpe", "false"}, {"enable_tpe", "false"}, {"enable_prl", "false"}}}};
  }
  if (name == "update-rules") {
    return {{"cumulative", {{"update_rule", "cumulative"}}},
            {"no-update", {{"update_rule", "none"}}},
            {"full-update", {{"update_rule", "full"}}},
            {"ema-0.99", {{"update_rule", "ema"}, {"ema_gamma", "0.99"}}},
            {"ema-0.95", {{"update_rule", "ema"}, {"ema_gamma", "0.95"}}}};
  }
  if (name == "losses") {
    return {{"aug+align", {}},
            {"aug-only", {{"lambda", "0"}}},
            {"align-only", {{"use_aug_loss", "false"}}},
            {"neither", {{"lambda", "0"}, {"use_aug_loss", "false"}}}};
  }
  AblationGrid grid;
  auto sweep = [&](const std::string& key, const std::vector<std::string>& values) {
    for (const auto& v : values) grid.push_back({key + "=" + v, {{key, v}}});
  };
  if (name == "lambda") sweep("lambda", {"0", "0.25", "0.5", "1", "2"});
  else if (name == "queue-size") sweep("queue_size", {"1", "2", "3", "4", "5", "6", "7"});
  else if (name == "steps") sweep("n_steps", {"1", "2", "3", "4", "5"});
  else if (name == "affinity") {
    sweep("alpha", {"2.5", "4", "5", "6", "7.5", "10"});
    sweep("beta", {"2", "3", "4", "5", "6", "7"});
  } else if (name == "tau") sweep("tau_t", {"0", "0.05", "0.1", "0.2", "0.5"});
  else throw Error(ErrorKind::ConfigInvalid, "unknown ablation preset '" + name + "'");
  return grid;
}

/// Grid file: one arm per line, `name: key=value, key=value`; '#' starts a comment.
inline AblationGrid parse_grid(std::istream& in) {
  AblationGrid grid;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto colon = text.find(':');
    if (colon == std::string::npos || colon == 0) {
      throw Error(ErrorKind::ConfigInvalid, "grid line " + std::to_string(lineno) + ": expected 'name: key=value, ...'");
    }
    AblationArm arm{detail::trim(text.substr(0, colon)), {}};
    std::istringstream items(text.substr(colon + 1));
    std::string item;
    while (std::getline(items, item, ',')) {
      const std::string kv = detail::trim(item);
      if (kv.empty()) continue;
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorKind::ConfigInvalid, "grid line " + std::to_string(lineno) + ": bad setting '" + kv + "'");
      }
      arm.delta.emplace_back(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    grid.push_back(std::move(arm));
  }
  if (grid.empty()) throw Error(ErrorKind::ConfigInvalid, "grid has no arms");
  return grid;
}

struct ArmResult {
  std::string name;
  std::optional<RunReport> report;
  std::string error;
};

struct AblationReport {
  std::vector<ArmResult> arms;
  std::vector<std::size_t> ranking;  // arm indices, best accuracy first; failed arms last
  bool streams_identical = true;

  const RunReport& arm(const std::string& name) const {
    for (const auto& a : arms) {
      if (a.name == name) {
        if (!a.report) throw Error(ErrorKind::ConfigInvalid, "arm '" + name + "' failed: " + a.error);
        return *a.report;
      }
    }
    throw Error(ErrorKind::ConfigInvalid, "no arm named '" + name + "'");
  }
};

/// Runs every arm on the same stream bytes with an independent engine. A failing
/// arm records its error and does not stop the others.
inline AblationReport ablate_bytes(const std::string& stream_bytes, const ClassTextSet& classtext,
                                   const std::string& classtext_digest, const EngineConfig& base,
                                   const AblationGrid& grid, bool parallel = true, std::size_t window_size = 250) {
  auto run_arm = [&](const AblationArm& arm) {
    ArmResult result{arm.name, std::nullopt, {}};
    try {
      EngineConfig cfg = base;
      for (const auto& [k, v] : arm.delta) apply_setting(cfg, k, v);
      cfg.validate();
      EvaluateOptions opts;
      opts.window_size = window_size;
      result.report = evaluate_bytes(stream_bytes, classtext, classtext_digest, cfg, opts);
    } catch (const std::exception& e) {
      result.error = e.what();
    }
    return result;
  };

  AblationReport out;
  if (parallel && std::thread::hardware_concurrency() > 1) {
    std::vector<std::future<ArmResult>> futures;
    for (const auto& arm : grid) futures.push_back(std::async(std::launch::async, run_arm, std::cref(arm)));
    for (auto& f : futures) out.arms.push_back(f.get());
  } else {
    for (const auto& arm : grid) out.arms.push_back(run_arm(arm));
  }

  std::optional<std::string> digest;
  for (const auto& a : out.arms) {
    if (!a.report) continue;
    if (!digest) digest = a.report->stream_digest;
    out.streams_identical = out.streams_identical && *digest == a.report->stream_digest;
  }
  out.ranking.resize(out.arms.size());
  std::iota(out.ranking.begin(), out.ranking.end(), std::size_t{0});
  auto score = [&](std::size_t i) {
    const auto& r = out.arms[i].report;
    return r && r->accuracy ? *r->accuracy : -1.0;
  };
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
  return out;
}

inline Json to_json(const AblationReport& rep) {
  Json arms = Json::array();
  for (const auto& a : rep.arms) {
    arms.push_back(a.report ? Json{{"name", a.name}, {"report", to_json(*a.report)}}
                            : Json{{"name", a.name}, {"error", a.error}});
  }
  Json ranking = Json::array();
  for (std::size_t rank = 0; rank < rep.ranking.size(); ++rank) {
    const auto& a = rep.arms[rep.ranking[rank]];
    ranking.push_back(Json{{"rank", rank + 1},
                           {"name", a.name},
                           {"accuracy", a.report && a.report->accuracy ? Json(*a.report->accuracy) : Json(nullptr)}});
  }
  return Json{{"engine_version", kEngineVersion},
              {"streams_identical", rep.streams_identical},
              {"ranking", ranking},
              {"arms", arms}};
}

}  // namespace dpe

#endif  // DPE_HARNESS_HPP
