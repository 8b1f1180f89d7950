// Command-line front end: pretrain, finetune, sample, eval, suite, verify, plot.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dogfit/domains.hpp"
#include "dogfit/harness/config.hpp"
#include "dogfit/harness/experiment.hpp"
#include "dogfit/harness/plot.hpp"
#include "dogfit/metrics.hpp"
#include "dogfit/neural.hpp"

namespace fs = std::filesystem;
using namespace dogfit;
using namespace dogfit::harness;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) cfg.finetune.seeds = {*g.seed};
  if (!g.out.empty()) cfg.output_dir = g.out;
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::vector<ResultRow> load_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_rows(in);
}

SampleBatch load_samples(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_csv(in);
}

void print_metrics(const MetricsReport& m) {
  nlohmann::json j{{"frechet", m.frechet},           {"mmd2", m.mmd2},
                   {"precision", m.precision},       {"recall", m.recall},
                   {"support_frac", m.support_frac}, {"n_gen", m.n_gen},
                   {"n_real", m.n_real},             {"frechet_regularized", m.frechet_regularized},
                   {"knn_excluded", m.knn_excluded}};
  std::cout << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dogfit: guided fine-tuning of 2D diffusion models"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "TOML experiment config (defaults when omitted)");
  auto* seed_opt = app.add_option("--seed", seed_value, "Run seed (replaces the seed list)");
  app.add_option("--out", g.out, "Output directory (overrides output.dir)");

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Train the source model and run the oracle gate");

  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune on the target domain");
  std::string ft_method = "dogfit";
  finetune_cmd->add_option("--method", ft_method, "none|cfg|dog|mg|dogfit|dogfit_control");

  auto* sample_cmd = app.add_subcommand("sample", "Generate points with a fine-tuned model");
  std::string sm_method = "dogfit";
  std::optional<double> sm_w;
  std::optional<int> sm_steps;
  std::string sm_output;
  sample_cmd->add_option("--method", sm_method, "Guidance method");
  sample_cmd->add_option("--w", sm_w, "Guidance strength (default from config)");
  sample_cmd->add_option("--steps", sm_steps, "Sampling steps (default from config)");
  sample_cmd->add_option("--output", sm_output, "Samples CSV (default <out>/samples/<run_id>.csv)");

  auto* eval_cmd = app.add_subcommand("eval", "Score a samples CSV against fresh target draws");
  std::string ev_samples;
  eval_cmd->add_option("--samples", ev_samples, "CSV with header x,y,label")->required();

  auto* suite_cmd = app.add_subcommand("suite", "Run every configured method and seed");
  std::string replay_id;
  suite_cmd->add_option("--replay", replay_id,
                        "Instead of running, replay one stored run id from <out> and compare");

  auto* verify_cmd = app.add_subcommand("verify", "Run the verification checks");

  auto* plot_cmd = app.add_subcommand("plot", "Render an SVG");
  std::string pl_kind = "scatter_overlay";
  std::string pl_input;
  std::string pl_output;
  std::string pl_metric = "recall";
  plot_cmd->add_option("--kind", pl_kind, "scatter_overlay|tradeoff_curve|ablation_grid");
  plot_cmd->add_option("--input", pl_input,
                       "Samples CSV (scatter_overlay) or results CSV (other kinds)")
      ->required();
  plot_cmd->add_option("--output", pl_output, "SVG path (default <input>.svg)");
  plot_cmd->add_option("--metric", pl_metric, "Metric for ablation_grid");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count()) g.seed = seed_value;

  try {
    ExperimentConfig cfg = resolve_config(g);
    if (*pretrain_cmd) {
      if (g.seed) cfg.pretrain.seed = *g.seed;
      Experiment exp(cfg, cfg.output_dir, &std::cerr);
      const PretrainResult& src = exp.source();
      nn::save_checkpoint(cfg.output_dir / "source.dgf", *src.model);
      std::cout << "source checkpoint " << (cfg.output_dir / "source.dgf").string()
                << " checksum " << hex64(src.checksum) << " oracle_gap " << src.oracle_gap
                << (src.gate_passed ? " PASS" : " FAIL") << '\n';
      return src.gate_passed ? 0 : 1;
    }
    if (*finetune_cmd) {
      const Method m = method_from_string(ft_method);
      Experiment exp(cfg, cfg.output_dir, &std::cerr);
      for (std::uint64_t seed : cfg.finetune.seeds) {
        const FinetuneResult& ft = exp.finetuned(m, seed);
        const fs::path path =
            cfg.output_dir / ("finetune-" + to_string(m) + "-s" + std::to_string(seed) + ".dgf");
        nn::save_checkpoint(path, *ft.model);
        std::cout << path.string() << " checksum " << hex64(ft.checksum) << " loss "
                  << ft.final_loss;
        if (m == Method::kDogfitControl) {
          std::cout << " w_in_[1,2] " << ft.w_hist.fraction_below(2.0);
        }
        std::cout << '\n';
      }
      return 0;
    }
    if (*sample_cmd) {
      const Method m = method_from_string(sm_method);
      Experiment exp(cfg, cfg.output_dir, &std::cerr);
      const double w = sm_w.value_or(cfg.guidance_for(m).w);
      const int steps = sm_steps.value_or(cfg.sampling.steps);
      for (std::uint64_t seed : cfg.finetune.seeds) {
        SampleBatch samples;
        const ResultRow row = exp.run(m, seed, w, steps, &samples);
        const fs::path path = sm_output.empty()
                                  ? cfg.output_dir / "samples" / (row.run_id + ".csv")
                                  : fs::path(sm_output);
        std::ostringstream os;
        write_csv(os, samples);
        write_file(path, os.str());
        std::cout << path.string() << " n=" << samples.size() << " fwd_passes=" << row.fwd_passes
                  << '\n';
      }
      return 0;
    }
    if (*eval_cmd) {
      const Testbed bed = make_testbed(cfg);
      const SampleBatch gen = load_samples(ev_samples);
      const std::uint64_t seed = cfg.finetune.seeds.front();
      const SampleBatch real = reference_set(cfg, bed, seed);
      print_metrics(evaluate(real.points, gen.points, bed.pair.target.mixture, eval_settings(cfg),
                             derive_seed(seed, "eval")));
      return 0;
    }
    if (*suite_cmd) {
      if (!replay_id.empty()) {
        const ReplayOutcome r = replay(cfg.output_dir, replay_id);
        std::cout << "replay " << replay_id << ": max |diff| " << r.max_abs_diff
                  << (r.matches ? " MATCH" : " MISMATCH") << '\n';
        return r.matches ? 0 : 1;
      }
      Experiment exp(cfg, cfg.output_dir, &std::cerr);
      const SuiteResult res = exp.run_suite();
      write_summary(std::cout, res.summary);
      return res.invalid.empty() ? 0 : 1;
    }
    if (*verify_cmd) {
      Experiment exp(cfg, cfg.output_dir, &std::cerr);
      const VerificationReport report = exp.verify();
      write_report(std::cout, report);
      return report.all_passed() ? 0 : 1;
    }
    if (*plot_cmd) {
      const PlotKind kind = plot_kind_from_string(pl_kind);
      const fs::path out = pl_output.empty() ? fs::path(pl_input).replace_extension(".svg")
                                             : fs::path(pl_output);
      std::string svg;
      if (kind == PlotKind::kScatterOverlay) {
        const Testbed bed = make_testbed(cfg);
        const SampleBatch samples = load_samples(pl_input);
        svg = scatter_overlay_svg({ScatterLayer{fs::path(pl_input).stem().string(),
                                                samples.points, ""}},
                                  &bed.pair.target.mixture, "generated vs target density");
      } else {
        svg = export_plot(kind, load_rows(pl_input), pl_metric);
      }
      write_file(out, svg);
      std::cout << out.string() << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
