#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "dogfit/harness/config.hpp"
#include "dogfit/harness/experiment.hpp"
#include "dogfit/harness/plot.hpp"

namespace dogfit::harness {
namespace {

namespace fs = std::filesystem;

// Small enough to train in a couple of seconds on one core.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.domain.n_source = 3000;
  cfg.domain.n_target = 300;
  cfg.schedule.T = 100;
  cfg.model.hidden = {32, 32};
  cfg.model.embed_dim = 16;
  cfg.pretrain.steps = 300;
  cfg.pretrain.batch_size = 64;
  cfg.pretrain.gate_threshold = 10.0;
  cfg.pretrain.gate_probes = 100;
  cfg.finetune.steps = 60;
  cfg.finetune.batch_size = 32;
  cfg.finetune.seeds = {0, 1};
  cfg.sampling.n = 200;
  cfg.sampling.steps = 10;
  cfg.sampling.w_sweep = {1.0, 1.5, 2.0};
  cfg.eval.n_real = 200;
  cfg.eval.support_reference_n = 1000;
  cfg.verify.probes = 50;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dogfit_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Config, DefaultsAreDeskScale) {
  const ExperimentConfig cfg;
  EXPECT_EQ(cfg.finetune.steps, 8000);
  EXPECT_EQ(cfg.finetune.batch_size, 64);
  EXPECT_EQ(cfg.pretrain.steps, 30000);
  EXPECT_EQ(cfg.sampling.n, 5000);
  EXPECT_EQ(cfg.sampling.steps, 50);
  EXPECT_EQ(cfg.sampling.sampler, "ddim");
  EXPECT_EQ(cfg.eval.k, 5);
  EXPECT_DOUBLE_EQ(cfg.eval.quantile, 0.05);
  EXPECT_EQ(cfg.model.hidden, (std::vector<int>{128, 128, 128, 128}));
  EXPECT_EQ(cfg.model.embed_dim, 64);
  EXPECT_EQ(cfg.finetune.seeds.size(), 3u);
  const GuidanceConfig g = cfg.guidance_for(Method::kDogfit);
  EXPECT_DOUBLE_EQ(g.w, 1.5);
  EXPECT_EQ(g.tau_s, 4000);
  EXPECT_DOUBLE_EQ(g.tau_c, 0.5);
  EXPECT_DOUBLE_EQ(g.lambda, 3.0);
  EXPECT_DOUBLE_EQ(g.label_dropout, 0.0);
  EXPECT_DOUBLE_EQ(cfg.guidance_for(Method::kCfg).label_dropout, 0.1);
  EXPECT_DOUBLE_EQ(cfg.guidance_for(Method::kMg).label_dropout, 0.1);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, ParsesOverridesAndKeepsDefaults) {
  const ExperimentConfig cfg = parse_config(R"(
[domain]
kind = "subset_only"
shift = [0.1, -0.2]
seed = 7

[finetune]
steps = 100
seeds = [4, 5]

[guidance]
methods = ["none", "dogfit"]
w = 2.0
tau_s = 10

[guidance.overrides.dogfit]
w = 1.25
tau_c = 1.0

[sampling]
step_sweep = [10, 25]

[output]
dir = "somewhere"
)");
  EXPECT_EQ(cfg.domain.kind, DomainKind::kSubsetOnly);
  EXPECT_EQ(cfg.domain.shift, Point(0.1, -0.2));
  EXPECT_EQ(cfg.data_seed, 7u);
  EXPECT_EQ(cfg.finetune.steps, 100);
  EXPECT_EQ(cfg.finetune.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(cfg.methods, (std::vector<Method>{Method::kNone, Method::kDogfit}));
  EXPECT_DOUBLE_EQ(cfg.guidance_for(Method::kNone).w, 2.0);
  EXPECT_DOUBLE_EQ(cfg.guidance_for(Method::kDogfit).w, 1.25);
  EXPECT_DOUBLE_EQ(cfg.guidance_for(Method::kDogfit).tau_c, 1.0);
  EXPECT_EQ(cfg.sampling.step_sweep, (std::vector<int>{10, 25}));
  EXPECT_EQ(cfg.output_dir, fs::path("somewhere"));
  EXPECT_EQ(cfg.pretrain.steps, 30000);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_ANY_THROW(parse_config("[domain]\nkinds = \"ring_shift\"\n"));
  EXPECT_ANY_THROW(parse_config("[domains]\nkind = \"ring_shift\"\n"));
  EXPECT_ANY_THROW(parse_config("[finetune]\nsteps = \"many\"\n"));
  EXPECT_ANY_THROW(parse_config("[finetune]\nseeds = []\n"));
  EXPECT_ANY_THROW(parse_config("[guidance]\nw = 0.5\n"));
  EXPECT_ANY_THROW(parse_config("[guidance]\nmethods = [\"cfg\", \"magic\"]\n"));
  EXPECT_ANY_THROW(parse_config("[sampling]\nsampler = \"euler\"\n"));
  EXPECT_ANY_THROW(parse_config("[domain\n"));
}

TEST(Config, CanonicalHashIsStable) {
  const ExperimentConfig a = tiny_config();
  const std::string text = canonical_text(a);
  const ExperimentConfig b = parse_config(text);
  EXPECT_EQ(canonical_text(b), text);
  EXPECT_EQ(config_hash(a), config_hash(b));
  ExperimentConfig moved = a;
  moved.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(a));
  ExperimentConfig changed = a;
  changed.guidance.w = 1.75;
  EXPECT_NE(config_hash(changed), config_hash(a));
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Config, ShippedDefaultFileMatchesBuiltInDefaults) {
  const ExperimentConfig shipped = load_config(DOGFIT_CONFIG_DIR "/default.toml");
  EXPECT_EQ(canonical_text(shipped), canonical_text(ExperimentConfig{}));
  EXPECT_NO_THROW(load_config(DOGFIT_CONFIG_DIR "/smoke.toml"));
}

ResultRow sample_row(Method m, std::uint64_t seed, double frechet) {
  ResultRow r;
  r.method = m;
  r.seed = seed;
  r.w = 1.5;
  r.lambda = 3.0;
  r.tau_s = 4000;
  r.tau_c = 0.5;
  r.sampler = "ddim";
  r.steps = 50;
  r.run_id = make_run_id(m, seed, r.w, r.sampler, r.steps);
  r.n_gen = 5000;
  r.frechet = frechet;
  r.mmd2 = frechet / 7.0;
  r.precision = 0.1 + frechet;
  r.recall = 1.0 / 3.0;
  r.support_frac = 0.95;
  r.fwd_passes = 250000;
  r.wall_ms = 12.5;
  return r;
}

TEST(Results, CsvRoundTripAndHeader) {
  const std::vector<ResultRow> rows = {sample_row(Method::kDogfit, 0, 0.123456789012345678),
                                       sample_row(Method::kCfg, 2, 1e-9)};
  std::stringstream ss;
  write_rows(ss, rows);
  std::string header;
  std::getline(std::stringstream(ss.str()), header);
  EXPECT_EQ(header,
            "run_id,method,seed,w,lambda,tau_s,tau_c,sampler,steps,n_gen,frechet,mmd2,precision,"
            "recall,support_frac,fwd_passes,wall_ms");
  const auto back = read_rows(ss);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].run_id, rows[i].run_id);
    EXPECT_EQ(back[i].method, rows[i].method);
    EXPECT_EQ(back[i].frechet, rows[i].frechet);
    EXPECT_EQ(back[i].recall, rows[i].recall);
    EXPECT_EQ(back[i].fwd_passes, rows[i].fwd_passes);
    EXPECT_EQ(back[i].tau_s, rows[i].tau_s);
  }
  std::stringstream bad("run_id,method\nx,none\n");
  EXPECT_ANY_THROW(read_rows(bad));
}

TEST(Results, SummaryUsesSampleStandardDeviation) {
  const std::vector<ResultRow> rows = {sample_row(Method::kDog, 0, 1.0), sample_row(Method::kDog, 1, 2.0),
                                       sample_row(Method::kDog, 2, 4.0), sample_row(Method::kNone, 0, 5.0)};
  const auto s = summarize(rows);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].method, Method::kDog);
  EXPECT_EQ(s[0].n_seeds, 3);
  EXPECT_NEAR(s[0].frechet_mean, 7.0 / 3.0, 1e-12);
  const double var = ((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) +
                      (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2.0;
  EXPECT_NEAR(s[0].frechet_sd, std::sqrt(var), 1e-12);
  EXPECT_EQ(s[1].n_seeds, 1);
  EXPECT_EQ(s[1].frechet_sd, 0.0);
}

TEST(Results, RunIdFormat) {
  EXPECT_EQ(make_run_id(Method::kDogfitControl, 2, 1.25, "ddim", 50), "dogfit_control-s2-w1.25-ddim50");
  EXPECT_EQ(make_run_id(Method::kNone, 0, 1.0, "ddpm", 100), "none-s0-w1-ddpm100");
}

TEST(Report, FatalFailuresOnly) {
  VerificationReport r;
  r.checks.push_back({"a", true, true, false, 0, 0, ""});
  r.checks.push_back({"b", false, false, false, 0.2, 0.1, ""});
  Check skipped;
  skipped.name = "c";
  skipped.skipped = true;
  r.checks.push_back(skipped);
  EXPECT_TRUE(r.all_passed());
  r.checks.push_back({"d", false, true, false, 0, 0, ""});
  EXPECT_FALSE(r.all_passed());
  std::stringstream ss;
  write_report(ss, r);
  const std::string text = ss.str();
  EXPECT_NE(text.find("PASS"), std::string::npos);
  EXPECT_NE(text.find("WARN"), std::string::npos);
  EXPECT_NE(text.find("SKIP"), std::string::npos);
  EXPECT_NE(text.find("FAIL"), std::string::npos);
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

TEST(Plot, EmptyScatterIsAxesOnlySvg) {
  const std::string svg = scatter_overlay_svg({}, nullptr, "empty");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(count_of(svg, "<circle"), 0u);
  EXPECT_NE(svg.find("<line"), std::string::npos);
  const std::string panels = panels_svg({});
  EXPECT_NE(panels.find("<svg"), std::string::npos);
}

TEST(Plot, ScatterDeterministicWithOneCirclePerPoint) {
  const ExperimentConfig cfg = tiny_config();
  const Testbed bed = make_testbed(cfg);
  const SampleBatch b = sample_mixture(bed.pair.target.mixture, 137, 3);
  const ScatterLayer layer{"gen", b.points, ""};
  const std::string a = scatter_overlay_svg({layer}, &bed.pair.target.mixture, "t");
  const std::string again = scatter_overlay_svg({layer}, &bed.pair.target.mixture, "t");
  EXPECT_EQ(a, again);
  EXPECT_EQ(count_of(a, "<circle"), 137u);
  EXPECT_NE(a.find("<path"), std::string::npos);
}

TEST(Plot, TradeoffAndAblationRender) {
  std::vector<ResultRow> rows;
  for (double w : {1.0, 1.5, 2.0}) {
    ResultRow r = sample_row(Method::kDogfitControl, 0, 0.1 * w);
    r.w = w;
    rows.push_back(r);
  }
  const std::string t = export_plot(PlotKind::kTradeoffCurve, rows);
  EXPECT_EQ(t, tradeoff_curve_svg(rows));
  EXPECT_NE(t.find("precision"), std::string::npos);
  for (std::int64_t ts : {0, 2000, 4000}) {
    ResultRow r = sample_row(Method::kDogfit, 0, 0.01 * static_cast<double>(ts + 1));
    r.tau_s = ts;
    rows.push_back(r);
  }
  const std::string g = export_plot(PlotKind::kAblationGrid, rows, "frechet");
  EXPECT_EQ(g, ablation_grid_svg(rows, "frechet"));
  EXPECT_NE(g.find("tau_s"), std::string::npos);
  EXPECT_EQ(plot_kind_from_string(to_string(PlotKind::kAblationGrid)), PlotKind::kAblationGrid);
  EXPECT_ANY_THROW(plot_kind_from_string("pie"));
}

TEST(Pipeline, LabelMethodsRejectedOnUnlabeledTarget) {
  ExperimentConfig cfg = tiny_config();
  cfg.domain.labeled = false;
  EXPECT_THROW(check_method_supported(cfg.domain, Method::kCfg), UnsupportedPairing);
  EXPECT_THROW(check_method_supported(cfg.domain, Method::kMg), UnsupportedPairing);
  EXPECT_NO_THROW(check_method_supported(cfg.domain, Method::kDog));
  EXPECT_NO_THROW(check_method_supported(cfg.domain, Method::kDogfit));
  cfg.pretrain.steps = 20;
  Experiment exp(cfg, std::nullopt);
  EXPECT_THROW(exp.finetuned(Method::kCfg, 0), UnsupportedPairing);
}

TEST(Pipeline, ZeroStepPretrainEqualsInitialization) {
  ExperimentConfig cfg = tiny_config();
  cfg.pretrain.steps = 0;
  const Testbed bed = make_testbed(cfg);
  const PretrainResult r = pretrain(cfg, bed);
  const nn::Denoiser init(source_architecture(cfg), derive_seed(cfg.pretrain.seed, "init"));
  EXPECT_EQ(r.model->params(), init.params());
  EXPECT_TRUE(r.model->frozen());
}

TEST(Pipeline, SameSeedSameCheckpointHash) {
  ExperimentConfig cfg = tiny_config();
  cfg.pretrain.steps = 50;
  const Testbed bed = make_testbed(cfg);
  const PretrainResult a = pretrain(cfg, bed);
  const PretrainResult b = pretrain(cfg, bed);
  EXPECT_EQ(a.checksum, b.checksum);
  EXPECT_EQ(nn::encode_checkpoint(*a.model), nn::encode_checkpoint(*b.model));
  cfg.pretrain.seed = 1;
  EXPECT_NE(pretrain(cfg, bed).checksum, a.checksum);
}

TEST(Pipeline, PretrainLearnsAndGateIsRecorded) {
  ExperimentConfig cfg = tiny_config();
  cfg.pretrain.gate_threshold = 0.0;
  const Testbed bed = make_testbed(cfg);
  const PretrainResult trained = pretrain(cfg, bed);
  EXPECT_FALSE(trained.gate_passed);
  cfg.pretrain.steps = 0;
  const PretrainResult untrained = pretrain(cfg, bed);
  EXPECT_LT(trained.oracle_gap, untrained.oracle_gap);
}

TEST(Pipeline, ControlHistogramMassInUnitInterval) {
  ExperimentConfig cfg = tiny_config();
  cfg.finetune.steps = 200;
  cfg.finetune.batch_size = 64;
  Experiment exp(cfg, std::nullopt);
  const FinetuneResult& ft = exp.finetuned(Method::kDogfitControl, 0);
  EXPECT_EQ(ft.w_hist.total, 200 * 64);
  EXPECT_GE(ft.w_hist.fraction_below(2.0), 0.94);
  EXPECT_TRUE(ft.model->arch().w_conditioning);
  EXPECT_EQ(ft.model->arch().num_classes, 3);
}

TEST(Pipeline, FullLateStartReproducesPlainFinetune) {
  ExperimentConfig cfg = tiny_config();
  Experiment exp(cfg, std::nullopt);
  GuidanceConfig never = cfg.guidance_for(Method::kDogfit);
  never.tau_s = cfg.finetune.steps;
  const FinetuneResult& plain = exp.finetuned(Method::kNone, 0);
  const FinetuneResult& late = exp.finetuned(Method::kDogfit, 0, never);
  EXPECT_EQ(plain.checksum, late.checksum);
  EXPECT_NE(exp.finetuned(Method::kDogfit, 0).checksum, plain.checksum);
}

TEST(Pipeline, SuiteWithStepSweepAndReplay) {
  ExperimentConfig cfg = tiny_config();
  cfg.sampling.step_sweep = {5, 10};
  const fs::path dir = fresh_dir("suite");
  cfg.output_dir = dir;
  SuiteResult res;
  {
    Experiment exp(cfg, dir);
    res = exp.run_suite();
  }
  EXPECT_TRUE(res.invalid.empty());
  ASSERT_EQ(res.rows.size(), 6u * 2u * 2u);
  for (Method m : cfg.methods) {
    for (int steps : {5, 10}) {
      const auto n = std::count_if(res.rows.begin(), res.rows.end(), [&](const ResultRow& r) {
        return r.method == m && r.steps == steps;
      });
      EXPECT_EQ(n, 2) << to_string(m) << " steps " << steps;
    }
  }
  for (const ResultRow& r : res.rows) {
    EXPECT_EQ(r.fwd_passes, static_cast<std::int64_t>(passes_per_step(r.method)) * r.steps * cfg.sampling.n);
    EXPECT_EQ(r.n_gen, cfg.sampling.n);
    EXPECT_TRUE(fs::exists(dir / "runs" / r.run_id / "samples.csv")) << r.run_id;
    EXPECT_TRUE(fs::exists(dir / "runs" / r.run_id / "run.json")) << r.run_id;
  }
  ASSERT_EQ(res.summary.size(), 6u * 2u);
  for (const SummaryRow& s : res.summary) {
    EXPECT_EQ(s.n_seeds, 2);
    EXPECT_GT(s.frechet_sd, 0.0);
  }
  EXPECT_TRUE(fs::exists(dir / "results.csv"));
  EXPECT_TRUE(fs::exists(dir / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_EQ(load_config(dir / "config.toml").sampling.step_sweep, cfg.sampling.step_sweep);

  std::ifstream in(dir / "results.csv");
  const auto stored = read_rows(in);
  ASSERT_EQ(stored.size(), res.rows.size());
  for (const std::string id : {stored.front().run_id, stored.back().run_id}) {
    const ReplayOutcome r = replay(dir, id);
    EXPECT_TRUE(r.matches) << id << " diff " << r.max_abs_diff;
  }
  EXPECT_ANY_THROW(replay(dir, "no-such-run"));
}

TEST(Pipeline, CheckpointCacheReusedAcrossExperiments) {
  ExperimentConfig cfg = tiny_config();
  cfg.finetune.seeds = {0};
  const fs::path dir = fresh_dir("cache");
  std::uint64_t first = 0;
  {
    Experiment exp(cfg, dir);
    first = exp.finetuned(Method::kDogfit, 0).checksum;
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "checkpoints")) files += e.path().extension() == ".dgf";
  EXPECT_EQ(files, 2u);
  Experiment again(cfg, dir);
  EXPECT_EQ(again.finetuned(Method::kDogfit, 0).checksum, first);
  EXPECT_EQ(again.source().checksum, Experiment(cfg, std::nullopt).source().checksum);
}

TEST(Pipeline, VerifyReportsEveryCheck) {
  ExperimentConfig cfg = tiny_config();
  cfg.verify.ablation = true;
  const fs::path dir = fresh_dir("verify");
  Experiment exp(cfg, dir);
  const VerificationReport rep = exp.verify();
  std::vector<std::string> names;
  for (const Check& c : rep.checks) names.push_back(c.name);
  for (const char* expected : {"domain_alignment_identity", "source_oracle_gate",
                               "internalization_dog_closer_than_cfg", "linearity_in_w",
                               "w_tradeoff_monotone", "pass_ledger_two_to_one",
                               "ablation_tau_s_eq_S_matches_none",
                               "ablation_tau_c_half_recall_ge_full"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), expected), names.end()) << expected;
  }
  for (const Check& c : rep.checks) {
    if (c.name == "domain_alignment_identity" || c.name == "pass_ledger_two_to_one" ||
        c.name == "ablation_tau_s_eq_S_matches_none") {
      EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
    }
  }
  EXPECT_TRUE(fs::exists(dir / "verify.txt"));
  EXPECT_TRUE(fs::exists(dir / "tradeoff.csv"));
  EXPECT_TRUE(fs::exists(dir / "ablation.csv"));
  std::ifstream in(dir / "tradeoff.csv");
  EXPECT_EQ(read_rows(in).size(), cfg.sampling.w_sweep.size() * cfg.finetune.seeds.size());
}

TEST(Pipeline, RunLogCollectsLines) {
  const fs::path dir = fresh_dir("log");
  fs::create_directories(dir);
  std::stringstream echo;
  {
    RunLog log(dir / "log.txt", &echo);
    log.line("alpha");
    log.line("beta");
    EXPECT_EQ(log.lines().size(), 2u);
  }
  EXPECT_NE(slurp(dir / "log.txt").find("beta"), std::string::npos);
  EXPECT_NE(echo.str().find("alpha"), std::string::npos);
}

TEST(Pipeline, DerivedSeedsDifferByTag) {
  EXPECT_NE(derive_seed(0, "init"), derive_seed(0, "train"));
  EXPECT_NE(derive_seed(0, "init"), derive_seed(1, "init"));
  EXPECT_EQ(derive_seed(5, "x"), derive_seed(5, "x"));
}

}  // namespace
}  // namespace dogfit::harness
