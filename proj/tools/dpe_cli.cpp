// Command-line front end: synth, run, ablate, gradcheck, inspect, plot.
//
// Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numeric abort,
// 4 gradcheck failure.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpe/dpe.hpp"

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3, kGradcheck = 4 };

int exit_code_for(dpe::ErrorKind kind) {
  using dpe::ErrorKind;
  switch (kind) {
    case ErrorKind::ConfigInvalid: return kUsage;
    case ErrorKind::ZeroVector:
    case ErrorKind::NonFinite:
    case ErrorKind::DegenerateRow: return kNumeric;
    default: return kData;
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw dpe::Error(dpe::ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << text;
}

dpe::EngineConfig load_engine_config(const std::string& path, const std::vector<std::string>& overrides) {
  dpe::EngineConfig cfg = path.empty() ? dpe::EngineConfig{} : dpe::load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw dpe::Error(dpe::ErrorKind::ConfigInvalid, "--set expects key=value");
    dpe::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void print_classtext_header(const std::string& path, const std::string& bytes) {
  std::istringstream in(bytes);
  const dpe::ClassTextSet set = dpe::read_classtext(in);
  std::size_t prompts = 0;
  for (const auto& p : set.prompts) prompts += static_cast<std::size_t>(p.rows());
  std::cout << path << ": class-text v" << dpe::kFormatVersion << " d=" << set.dim() << " C=" << set.num_classes()
            << " prompts=" << prompts << "\n";
  for (std::size_t c = 0; c < set.num_classes(); ++c) {
    std::cout << "  [" << c << "] " << set.class_names[c] << " S=" << set.prompts[c].rows() << "\n";
  }
}

void print_stream_header(const std::string& path, const std::string& bytes) {
  std::istringstream in(bytes);
  dpe::StreamReader reader(in);
  const auto& h = reader.header();
  std::size_t views = 0;
  std::size_t count = 0;
  while (auto s = reader.next()) {
    views += static_cast<std::size_t>(s->views.rows());
    ++count;
  }
  std::cout << path << ": stream v" << dpe::kFormatVersion << " d=" << h.dim << " n_samples=" << h.num_samples
            << " labels=" << (h.has_labels ? "yes" : "no") << " total_views=" << views << "\n";
}

void print_checkpoint_header(const std::string& path, const std::string& bytes) {
  std::istringstream in(bytes);
  const dpe::Checkpoint ck = dpe::read_checkpoint(in);
  std::size_t stored = 0;
  for (std::size_t c = 0; c < ck.visual.num_classes(); ++c) stored += ck.visual.queue(c).size();
  std::cout << path << ": checkpoint v" << dpe::kFormatVersion << " d=" << ck.textual.prototypes().cols()
            << " C=" << ck.textual.prototypes().rows() << " samples_seen=" << ck.samples_seen
            << " k=" << ck.textual.count() << " rule=" << dpe::to_string(ck.textual.rule())
            << " M=" << ck.visual.capacity() << " stored_features=" << stored << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-prototype test-time adaptation engine"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic class-text + stream pair");
  dpe::SynthConfig synth_cfg;
  std::string out_prefix = "synthetic";
  synth->add_option("--classes", synth_cfg.classes, "Number of classes")->capture_default_str();
  synth->add_option("--dim", synth_cfg.dim, "Embedding dimension")->capture_default_str();
  synth->add_option("--samples", synth_cfg.samples, "Number of test samples")->capture_default_str();
  synth->add_option("--views", synth_cfg.views, "Views per sample (view 0 = original)")->capture_default_str();
  synth->add_option("--shift", synth_cfg.shift_angle, "Shift angle in radians")->capture_default_str();
  synth->add_option("--noise", synth_cfg.sample_noise, "Per-coordinate sample noise")->capture_default_str();
  synth->add_option("--view-noise", synth_cfg.view_noise, "Per-coordinate view noise")->capture_default_str();
  synth->add_option("--prompts", synth_cfg.prompts_per_class, "Prompts per class")->capture_default_str();
  synth->add_option("--prompt-noise", synth_cfg.prompt_noise, "Per-coordinate prompt noise")->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed, "RNG seed")->capture_default_str();
  synth->add_option("--out-prefix", out_prefix, "Writes <prefix>.dpec and <prefix>.dpes")->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "Evaluate one config over a stream");
  std::string stream_path, classtext_path, config_path, report_path;
  std::vector<std::string> overrides;
  dpe::EvaluateOptions eval_opts;
  bool unlabeled = false;
  run->add_option("--stream", stream_path, "Stream file (.dpes)")->required();
  run->add_option("--classtext", classtext_path, "Class-text file (.dpec)")->required();
  run->add_option("--config", config_path, "Config file (key = value)");
  run->add_option("--set", overrides, "Config override key=value (repeatable)");
  run->add_option("--report", report_path, "Report output path (default stdout)");
  run->add_option("--window", eval_opts.window_size, "Accuracy window size")->capture_default_str();
  run->add_option("--checkpoint-every", eval_opts.checkpoint_every, "Save state every N samples");
  run->add_option("--checkpoint", eval_opts.checkpoint_path, "Checkpoint path (.dpek)");
  run->add_option("--resume", eval_opts.resume_path, "Resume from a checkpoint");
  run->add_flag("--unlabeled", unlabeled, "Allow streams without labels (no accuracy)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid on one stream");
  std::string grid_path, preset;
  bool sequential = false;
  ablate->add_option("--stream", stream_path, "Stream file (.dpes)")->required();
  ablate->add_option("--classtext", classtext_path, "Class-text file (.dpec)")->required();
  ablate->add_option("--config", config_path, "Base config file");
  ablate->add_option("--set", overrides, "Base config override key=value (repeatable)");
  auto* grid_opt = ablate->add_option("--grid", grid_path, "Grid file: 'name: key=value, ...' per line");
  ablate->add_option("--preset", preset, "components|update-rules|losses|lambda|queue-size|steps|affinity|tau")
      ->excludes(grid_opt);
  ablate->add_option("--report", report_path, "Report output path (default stdout)");
  ablate->add_option("--window", eval_opts.window_size, "Accuracy window size")->capture_default_str();
  ablate->add_flag("--sequential", sequential, "Run arms one after another");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference validation of the analytic gradient");
  std::size_t trials = 100;
  std::uint64_t grad_seed = 0;
  double tolerance = 1e-3;
  bool perturb = false;
  grad->add_option("--trials", trials, "Random instances")->capture_default_str()->check(CLI::PositiveNumber);
  grad->add_option("--seed", grad_seed, "RNG seed")->capture_default_str();
  grad->add_option("--tolerance", tolerance, "Max relative error")->capture_default_str();
  grad->add_flag("--perturb-gradient", perturb, "Corrupt the analytic gradient (detector self-test)");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Print file headers and SHA-256 digests");
  std::vector<std::string> inspect_paths;
  inspect->add_option("files", inspect_paths, ".dpec / .dpes / .dpek files")->required();

  // plot
  auto* plot = app.add_subcommand("plot", "Render a run report as SVG");
  std::string plot_out = "report.svg";
  plot->add_option("--report", report_path, "Run report (JSON)")->required();
  plot->add_option("--out", plot_out, "SVG output path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) {
      const dpe::SyntheticData data = dpe::generate_synthetic(synth_cfg);
      dpe::write_classtext(out_prefix + ".dpec", data.classtext);
      dpe::write_stream(out_prefix + ".dpes", data.samples);
      std::cout << "wrote " << out_prefix << ".dpec and " << out_prefix << ".dpes\n";
      return kOk;
    }
    if (*run) {
      const dpe::EngineConfig cfg = load_engine_config(config_path, overrides);
      eval_opts.require_labels = !unlabeled;
      const dpe::RunReport rep = dpe::evaluate(stream_path, classtext_path, cfg, eval_opts);
      write_text(report_path, dpe::to_json(rep).dump(2) + "\n");
      if (rep.failed_at) {
        std::cerr << "run aborted at sample " << *rep.failed_at << ": " << rep.failure << "\n";
        return exit_code_for(*rep.failure_kind);
      }
      if (rep.accuracy) std::cerr << "accuracy " << std::fixed << std::setprecision(4) << *rep.accuracy << "\n";
      return kOk;
    }
    if (*ablate) {
      const dpe::EngineConfig cfg = load_engine_config(config_path, overrides);
      dpe::AblationGrid grid;
      if (!grid_path.empty()) {
        std::ifstream in(grid_path);
        if (!in) throw dpe::Error(dpe::ErrorKind::Io, "cannot open grid '" + grid_path + "'");
        grid = dpe::parse_grid(in);
      } else if (!preset.empty()) {
        grid = dpe::ablation_preset(preset);
      } else {
        throw dpe::Error(dpe::ErrorKind::ConfigInvalid, "ablate needs --grid or --preset");
      }
      const std::string classtext_bytes = dpe::read_file_bytes(classtext_path);
      std::istringstream ct(classtext_bytes);
      const dpe::ClassTextSet classtext = dpe::read_classtext(ct);
      const dpe::AblationReport rep = dpe::ablate_bytes(dpe::read_file_bytes(stream_path), classtext,
                                                        dpe::sha256_hex(classtext_bytes), cfg, grid, !sequential,
                                                        eval_opts.window_size);
      write_text(report_path, dpe::to_json(rep).dump(2) + "\n");
      for (std::size_t rank = 0; rank < rep.ranking.size(); ++rank) {
        const auto& arm = rep.arms[rep.ranking[rank]];
        std::cerr << std::setw(3) << rank + 1 << "  " << std::left << std::setw(18) << arm.name << std::right;
        if (arm.report && arm.report->accuracy) {
          std::cerr << std::fixed << std::setprecision(4) << *arm.report->accuracy << "\n";
        } else {
          std::cerr << "failed: " << arm.error << "\n";
        }
      }
      return kOk;
    }
    if (*grad) {
      std::function<void(dpe::GradResult&)> hook;
      if (perturb) hook = [](dpe::GradResult& g) { g.grad_t_hat *= 1.01; };
      const dpe::GradcheckSummary s = dpe::gradcheck(trials, grad_seed, tolerance, hook);
      std::cout << "gradcheck trials=" << s.trials << " seed=" << grad_seed << " max_rel_error=" << std::scientific
                << std::setprecision(6) << s.max_rel_error << " worst_trial=" << s.worst_trial
                << " tolerance=" << s.tolerance << " -> " << (s.passed ? "PASS" : "FAIL") << "\n";
      return s.passed ? kOk : kGradcheck;
    }
    if (*inspect) {
      for (const auto& path : inspect_paths) {
        const std::string bytes = dpe::read_file_bytes(path);
        const std::string magic = bytes.substr(0, 4);
        if (magic == "DPEC") print_classtext_header(path, bytes);
        else if (magic == "DPES") print_stream_header(path, bytes);
        else if (magic == "DPEK") print_checkpoint_header(path, bytes);
        else throw dpe::Error(dpe::ErrorKind::BadMagic, path + ": unrecognized magic '" + magic + "'");
        std::cout << "  sha256 " << dpe::sha256_hex(bytes) << "  bytes " << bytes.size() << "\n";
      }
      return kOk;
    }
    if (*plot) {
      std::ifstream in(report_path);
      if (!in) throw dpe::Error(dpe::ErrorKind::Io, "cannot open report '" + report_path + "'");
      const auto report = nlohmann::ordered_json::parse(in);
      write_text(plot_out, dpe::render_report_svg(report));
      return kOk;
    }
  } catch (const dpe::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed report: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
