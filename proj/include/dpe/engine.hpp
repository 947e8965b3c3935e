#ifndef DPE_ENGINE_HPP
#define DPE_ENGINE_HPP

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dpe/core.hpp"
#include "dpe/inference.hpp"
#include "dpe/proto_store.hpp"
#include "dpe/residual_opt.hpp"
#include "dpe/stream_io.hpp"

namespace dpe {

inline constexpr const char* kEngineVersion = "1.0.0";

/// Which single-view distribution feeds the pseudo-label / entropy or the textual gate.
enum class PredictionSource { ZeroShot, Proto, Dpe };

inline const char* to_string(PredictionSource s) {
  switch (s) {
    case PredictionSource::ZeroShot: return "zeroshot";
    case PredictionSource::Proto: return "proto";
    case PredictionSource::Dpe: return "dpe";
  }
  return "unknown";
}

struct EngineConfig {
  double temperature = 0.01;
  AffinityParams affinity;
  double lambda = 0.5;
  double tau_t = 0.1;
  std::size_t queue_size = 3;
  double rho = 0.1;
  std::size_t n_steps = 1;
  AdamWParams adam;
  double align_temperature = 1.0;
  UpdateRule rule;
  bool enable_vpe = true;
  bool enable_tpe = true;
  bool enable_prl = true;
  bool use_aug_loss = true;
  PredictionSource pseudo_label_source = PredictionSource::Dpe;
  PredictionSource gate_source = PredictionSource::Dpe;
  bool normalize_visual_proto = true;
  std::uint64_t seed = 0;

  ObjectiveConfig objective() const {
    ObjectiveConfig o;
    o.affinity = affinity;
    o.temperature = Temperature(temperature);
    o.rho = rho;
    o.lambda = lambda;
    o.align_temperature = align_temperature;
    o.use_aug_loss = use_aug_loss;
    o.n_steps = n_steps;
    o.adam = adam;
    return o;
  }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::ConfigInvalid, what); };
    if (!(temperature > 0.0)) fail("temperature must be > 0");
    if (!(affinity.alpha >= 0.0)) fail("alpha must be >= 0");
    if (!(affinity.beta > 0.0)) fail("beta must be > 0");
    if (!(lambda >= 0.0)) fail("lambda must be >= 0");
    if (!(tau_t >= 0.0)) fail("tau_t must be >= 0");
    if (queue_size < 1) fail("queue_size must be >= 1");
    if (!(rho > 0.0 && rho <= 1.0)) fail("rho must lie in (0, 1]");
    if (!(adam.lr >= 0.0)) fail("lr must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
      fail("adam betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0)) fail("eps must be > 0");
    if (!(align_temperature > 0.0)) fail("align_temperature must be > 0");
  }
};

struct SampleOutcome {
  std::size_t predicted = 0;
  Vector probabilities;
  std::size_t pseudo_label = 0;
  double entropy = 0.0;       // raw nats of the pseudo-label distribution
  double gate_entropy = 0.0;  // normalized entropy used by the textual gate
  bool textual_updated = false;
  bool queue_mutated = false;
  LossBreakdown loss;
  double wall_time_us = 0.0;
};

/// Online adaptation state for one stream. Samples are processed strictly in
/// order; the engine never sees labels.
class Engine {
 public:
  Engine(const ClassTextSet& classtext, EngineConfig cfg)
      : cfg_(std::move(cfg)),
        textual_(TextualStore::from_classtext(classtext, cfg_.rule)),
        visual_(classtext.num_classes(), classtext.dim(), cfg_.queue_size, cfg_.normalize_visual_proto) {
    cfg_.validate();
  }

  const EngineConfig& config() const { return cfg_; }
  const TextualStore& textual() const { return textual_; }
  const VisualStore& visual() const { return visual_; }
  std::size_t num_classes() const { return static_cast<std::size_t>(textual_.prototypes().rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(textual_.prototypes().cols()); }
  std::uint64_t samples_seen() const { return samples_seen_; }

  SampleOutcome step(const Matrix& raw_views) {
    const auto started = std::chrono::steady_clock::now();
    if (raw_views.rows() < 1) throw Error(ErrorKind::DimMismatch, "sample has no views");
    if (raw_views.cols() != static_cast<Eigen::Index>(dim())) {
      throw Error(ErrorKind::DimMismatch, "sample dim " + std::to_string(raw_views.cols()) +
                                              " does not match engine dim " + std::to_string(dim()));
    }
    Matrix views = raw_views;
    normalize_rows(views);

    const ObjectiveConfig objective = cfg_.objective();
    const Temperature temperature(cfg_.temperature);
    const Matrix base_t = textual_.prototypes();
    const EmptyMask mask = visual_.empty_mask();
    const Matrix base_v = filled_visual(base_t);

    SampleOutcome out;
    Matrix t_star = base_t;
    Matrix v_star = base_v;
    ViewAggregate final_prediction;
    if (cfg_.enable_prl) {
      OptimizeResult opt = optimize_sample(views, base_t, base_v, mask, objective);
      t_star = std::move(opt.t_star);
      v_star = std::move(opt.v_star);
      final_prediction = std::move(opt.prediction);
      out.loss = opt.loss;
    } else {
      final_prediction =
          aggregate_predictions(views, t_star, v_star, mask, cfg_.affinity, temperature, cfg_.rho);
      out.loss.lambda = cfg_.lambda;
      out.loss.l_aug = entropy(final_prediction.mean_probs);
      out.loss.l_align = loss_align(t_star, v_star, cfg_.align_temperature);
      out.loss.total = (cfg_.use_aug_loss ? out.loss.l_aug : 0.0) + cfg_.lambda * out.loss.l_align;
    }
    out.probabilities = final_prediction.mean_probs;
    out.predicted = argmax(out.probabilities);

    const Vector original = views.row(0).transpose();
    auto single_view = [&](PredictionSource source) -> Vector {
      switch (source) {
        case PredictionSource::ZeroShot: return softmax(textual_.initial() * original, temperature);
        case PredictionSource::Proto: return predict(original, base_t, base_v, mask, cfg_.affinity, temperature);
        case PredictionSource::Dpe: break;
      }
      return predict(original, t_star, v_star, mask, cfg_.affinity, temperature);
    };
    const Vector pseudo = single_view(cfg_.pseudo_label_source);
    out.pseudo_label = argmax(pseudo);
    out.entropy = entropy(pseudo);
    out.gate_entropy = cfg_.gate_source == cfg_.pseudo_label_source
                           ? normalized_entropy(pseudo)
                           : normalized_entropy(single_view(cfg_.gate_source));

    if (cfg_.enable_vpe) out.queue_mutated = visual_.update(out.pseudo_label, original, out.entropy);
    if (cfg_.enable_tpe) out.textual_updated = textual_.evolve(t_star, out.gate_entropy, cfg_.tau_t);

    ++samples_seen_;
    out.wall_time_us =
        std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - started).count();
    return out;
  }

  void save_checkpoint(std::ostream& out) const { write_checkpoint(out, textual_, visual_, samples_seen_); }

  void save_checkpoint(const std::string& path) const {
    auto out = detail::open_out(path);
    save_checkpoint(out);
    if (!out) throw Error(ErrorKind::Io, "write failed for '" + path + "'");
  }

  /// Restores adaptation state; the checkpoint must match this engine's shape and store settings.
  void load_checkpoint(std::istream& in) {
    Checkpoint ck = read_checkpoint(in);
    if (ck.textual.prototypes().rows() != textual_.prototypes().rows() ||
        ck.textual.prototypes().cols() != textual_.prototypes().cols()) {
      throw Error(ErrorKind::DimMismatch, "checkpoint shape does not match the engine");
    }
    if (!(ck.textual.rule() == textual_.rule()) || ck.visual.capacity() != visual_.capacity() ||
        ck.visual.normalizes() != visual_.normalizes()) {
      throw Error(ErrorKind::ConfigInvalid, "checkpoint store settings do not match the engine config");
    }
    textual_ = std::move(ck.textual);
    visual_ = std::move(ck.visual);
    samples_seen_ = ck.samples_seen;
  }

  void load_checkpoint(const std::string& path) {
    auto in = detail::open_in(path);
    load_checkpoint(in);
  }

 private:
  // Empty-queue classes borrow their textual prototype so residuals and the
  // alignment loss stay defined; the mask keeps them out of the affinity term.
  Matrix filled_visual(const Matrix& textual) const {
    Matrix v = visual_.prototypes();
    const auto& mask = visual_.empty_mask();
    for (std::size_t c = 0; c < mask.size(); ++c) {
      if (mask[c]) v.row(static_cast<Eigen::Index>(c)) = textual.row(static_cast<Eigen::Index>(c));
    }
    return v;
  }

  EngineConfig cfg_;
  TextualStore textual_;
  VisualStore visual_;
  std::uint64_t samples_seen_ = 0;
};

struct StreamRun {
  std::vector<SampleOutcome> outcomes;
  std::vector<std::optional<std::uint32_t>> labels;  // harness-side only
  std::optional<std::size_t> failed_at;
  std::optional<ErrorKind> failure_kind;
  std::string failure;
};

/// Sequential pass. `next` yields samples until exhausted; labels are split off
/// before the engine sees a sample. Numeric errors stop the run and are recorded.
/// `on_step`, if set, is called after every processed sample.
inline StreamRun run_stream(Engine& engine, const std::function<std::optional<TestSample>()>& next,
                            const std::function<void(const Engine&, std::size_t)>& on_step = {}) {
  StreamRun run;
  std::size_t index = 0;
  try {
    while (auto sample = next()) {
      run.labels.push_back(sample->label);
      run.outcomes.push_back(engine.step(sample->views));
      if (on_step) on_step(engine, index);
      ++index;
    }
  } catch (const Error& e) {
    run.failed_at = index;
    run.failure_kind = e.kind();
    run.failure = e.what();
    if (run.labels.size() > run.outcomes.size()) run.labels.pop_back();
  }
  return run;
}

inline StreamRun run_stream(Engine& engine, const std::vector<TestSample>& samples) {
  std::size_t i = 0;
  return run_stream(engine, [&]() -> std::optional<TestSample> {
    if (i >= samples.size()) return std::nullopt;
    return samples[i++];
  });
}

}  // namespace dpe

#endif  // DPE_ENGINE_HPP
