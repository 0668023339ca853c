// seqdg — train and analyze sequential domain-generalization methods on
// synthetic multi-domain data.
//
// Subcommands:
//   gen     write a rotated-Gaussian dataset to disk
//   train   run one leave-one-out fold (all configured seeds)
//   sweep   run every leave-one-out fold x seed cell
//   verify  fast numerical identity checks, exit 1 on any failure
//   bench   per-iteration runtime comparison across methods
//   probe   domain-distinguishability probe (two-phase classifier test)

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seqdg/analysis.hpp"
#include "seqdg/harness.hpp"

namespace {

using namespace seqdg;

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    const std::string tok = s.substr(start, comma - start);
    if (!tok.empty()) out.push_back(std::stod(tok));
    start = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("empty number list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (double v : parse_double_list(s)) {
    if (v < 0 || v != static_cast<std::uint64_t>(v))
      throw std::invalid_argument("seeds must be non-negative integers");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

// Flags shared by train/sweep/bench/probe; every flag mirrors a config key
// and overrides the file value.
struct CommonFlags {
  std::string config_path;
  std::string preset;
  std::string method;
  std::string held_out;  // integer or "all"
  std::string alpha;     // comma list
  std::optional<double> beta, gamma, lambda;
  std::optional<int> iters, batch_size, eval_every;
  std::string seeds;  // comma list
  std::string dataset_path;
  std::string out_dir = ".";
  int jobs = 1;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "TOML config file");
    app->add_option("--preset", preset, "named hyperparameter bundle");
    app->add_option("--method", method, "agg|mldg|s_mldg|fo_s_mldg|ffo_s_mldg|undo|s_undo");
    app->add_option("--held-out", held_out, "held-out domain id, or 'all'");
    app->add_option("--alpha", alpha, "inner step sizes, comma-separated");
    app->add_option("--beta", beta, "downstream loss weight");
    app->add_option("--gamma", gamma, "meta step size");
    app->add_option("--lambda", lambda, "parameter-coherence strength");
    app->add_option("--iters", iters, "training iterations per run");
    app->add_option("--batch-size", batch_size, "per-domain minibatch size");
    app->add_option("--eval-every", eval_every, "metric logging period");
    app->add_option("--seed", seeds, "seeds, comma-separated");
    app->add_option("--dataset", dataset_path, "saved dataset file (else generator)");
    app->add_option("--out", out_dir, "output directory");
    app->add_option("--jobs", jobs, "parallel (fold, seed) workers");
  }

  ExperimentConfig build() const {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = config_from_toml_file(config_path);
    if (!preset.empty()) apply_preset(cfg, preset);
    if (!method.empty()) cfg.method = parse_method(method);
    if (!held_out.empty()) {
      if (held_out == "all" || held_out == "ALL") cfg.held_out = kAllFolds;
      else cfg.held_out = std::stoi(held_out);
    }
    if (!alpha.empty()) cfg.hp.alpha = parse_double_list(alpha);
    if (beta) cfg.hp.beta = *beta;
    if (gamma) cfg.hp.gamma = *gamma;
    if (lambda) cfg.hp.lambda = *lambda;
    if (iters) cfg.iters = *iters;
    if (batch_size) cfg.batch_size = *batch_size;
    if (eval_every) cfg.eval_every = *eval_every;
    if (!seeds.empty()) cfg.seeds = parse_seed_list(seeds);
    if (!dataset_path.empty()) cfg.dataset.path = dataset_path;
    return cfg;
  }
};

void write_experiment_outputs(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_report_json(report, dir / "report.json");
  write_timing_json(report, dir / "timing.json");
  write_metrics_csv(report, dir / "metrics.csv");
  std::cout << "mean holdout accuracy " << report.overall_mean << " (stderr "
            << report.overall_std_error << ") over " << report.runs.size() << " runs\n"
            << "wrote " << (dir / "report.json").string() << ", timing.json, metrics.csv\n";
}

int cmd_gen(int domains, int classes, int n, double angle, double noise,
            std::uint64_t seed, const std::string& out) {
  const DomainSet data = synth_rotated(domains, classes, n, angle, noise, seed);
  save_domains(data, out);
  std::cout << "wrote " << out << ": " << domains << " domains x " << n << " samples, "
            << classes << " classes\n";
  return 0;
}

int cmd_train(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.build();
  if (cfg.held_out == kAllFolds)
    throw std::invalid_argument("train needs a concrete --held-out id; use sweep for all");
  const DomainSet data = cfg.dataset.realize();
  const RunReport report = run_experiment(cfg, data, flags.jobs);
  const std::filesystem::path dir = flags.out_dir;
  write_experiment_outputs(report, dir);
  export_embeddings(cfg.model_spec(), report.runs.front().params, data,
                    dir / "embeddings.csv");
  std::cout << "wrote " << (dir / "embeddings.csv").string() << "\n";
  return 0;
}

int cmd_sweep(const CommonFlags& flags) {
  ExperimentConfig cfg = flags.build();
  cfg.held_out = kAllFolds;
  const RunReport report = run_experiment(cfg, flags.jobs);
  const std::filesystem::path dir = flags.out_dir;
  write_experiment_outputs(report, dir);
  emit_plot_data(report, dir / "plots");
  std::cout << "wrote " << (dir / "plots").string() << "/\n";
  return 0;
}

// Fast numerical identity checks; prints one line per check.
int cmd_verify(std::uint64_t seed) {
  int failures = 0;
  const auto line = [&](const char* name, bool pass, double value) {
    std::printf("%-28s %-4s (%.3e)\n", name, pass ? "PASS" : "FAIL", value);
    if (!pass) ++failures;
  };

  const DomainSet data = synth_rotated(3, 3, 40, 30.0, 0.3, seed);
  const ModelSpec spec{{2, 8, 3}, false, 0};
  const ParamVector theta = init_params(spec, seed);
  const Batch b1 = full_batch(data.domains[0]);
  const Batch b2 = full_batch(data.domains[1]);
  const Batch b3 = full_batch(data.domains[2]);

  {  // reverse-mode gradient against central differences
    const ad::ScalarFn loss = class_loss_fn(spec, b1);
    const ParamVector g = ad::gradient(loss, theta);
    const ParamVector fd = ad::fd_gradient(loss, theta, 1e-5);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      worst = std::max(worst,
                       std::abs(g[i] - fd[i]) / std::max(1e-8, std::abs(fd[i])));
    line("gradient_vs_fd", worst <= 1e-4, worst);
  }
  {  // first-order sequential gradient identity
    HyperParams hp;
    hp.alpha = {0.05};
    hp.beta = 1.3;
    hp.second_order = false;
    std::vector<ad::ScalarFn> fns = {class_loss_fn(spec, b1), class_loss_fn(spec, b2),
                                     class_loss_fn(spec, b3)};
    GradientRecord rec;
    const ParamVector g = sequential_meta_gradient(fns, theta, hp, &rec);
    ParamVector expect = rec.per_step_grads[0];
    expect.axpy(hp.beta, rec.per_step_grads[1]);
    expect.axpy(hp.beta, rec.per_step_grads[2]);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      worst = std::max(worst,
                       std::abs(g[i] - expect[i]) / std::max(1e-12, std::abs(expect[i])));
    line("first_order_identity", worst <= 1e-10, worst);
  }
  {  // update-difference telescoping
    HyperParams hp;
    hp.alpha = {0.1, 0.2, 0.05};
    hp.beta = 1.1;
    hp.gamma = 1.0;
    std::vector<ad::ScalarFn> fns = {class_loss_fn(spec, b1), class_loss_fn(spec, b2),
                                     class_loss_fn(spec, b3)};
    GradientRecord rec;
    const FfoResult r = ffo_trajectory(fns, theta, hp, &rec);
    ParamVector expect = theta;
    const std::vector<double> alphas = hp.alphas_for(3);
    for (std::size_t i = 0; i < 3; ++i) expect.axpy(-alphas[i], rec.per_step_grads[i]);
    double worst = 0.0;
    for (std::size_t i = 0; i < expect.size(); ++i)
      worst = std::max(worst, std::abs(expect[i] - r.theta_tilde[i]));
    line("update_telescoping", worst <= 1e-14, worst);
  }
  {  // permutation-averaged gradient matches the curvature expansion
    const LayoutPtr layout = make_layout({{"x", 2}});
    ParamVector q(layout);
    q[0] = 0.4;
    q[1] = -0.6;
    const auto quad = [](std::vector<double> a, std::vector<double> c) -> ad::ScalarFn {
      return [a = std::move(a), c = std::move(c)](ad::Tape& t,
                                                  std::span<const ad::NodeId> x) {
        ad::NodeId total = t.constant(0.0);
        for (std::size_t j = 0; j < x.size(); ++j) {
          const ad::NodeId d = t.add_const(x[j], -c[j]);
          total = t.axpy(total, 0.5 * a[j], t.mul(d, d));
        }
        return total;
      };
    };
    const double gap =
        ffo_expectation_check(quad({2.0, 1.0}, {1.0, 0.0}), quad({0.5, 3.0}, {-1.0, 1.0}),
                              q, 0.05)
            .gap;
    line("expectation_quadratic", gap <= 1e-10, gap);
  }
  {  // quadratic shrinkage of the expansion residual
    const double r1 = taylor_residual(spec, theta, b1, b2, 1e-2);
    const double r2 = taylor_residual(spec, theta, b1, b2, 5e-3);
    const double ratio = r1 / r2;
    line("taylor_two_scale", ratio >= 3.6 && ratio <= 4.4, ratio);
  }

  std::printf("%d check(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}

int cmd_bench(const CommonFlags& flags, const std::string& methods_csv, int warmup,
              int measured) {
  ExperimentConfig cfg = flags.build();
  std::vector<Method> methods;
  std::size_t start = 0;
  while (start <= methods_csv.size()) {
    std::size_t comma = methods_csv.find(',', start);
    if (comma == std::string::npos) comma = methods_csv.size();
    const std::string tok = methods_csv.substr(start, comma - start);
    if (!tok.empty()) methods.push_back(parse_method(tok));
    start = comma + 1;
  }
  const DomainSet data = cfg.dataset.realize();
  const auto table = benchmark_runtime(methods, cfg, data, warmup, measured);
  std::printf("%-12s %14s %14s %10s\n", "method", "mean_sec/iter", "stddev", "vs_agg");
  for (const BenchRow& row : table)
    std::printf("%-12s %14.6e %14.6e %10.3f\n", std::string(method_name(row.method)).c_str(),
                row.mean_seconds, row.stddev_seconds, row.ratio_to_agg);

  const std::filesystem::path dir = flags.out_dir;
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "bench.csv");
  if (!out) throw std::runtime_error("cannot open bench.csv");
  out << "method,mean_seconds,stddev_seconds,ratio_to_agg\n";
  for (const BenchRow& row : table)
    out << method_name(row.method) << ',' << row.mean_seconds << ',' << row.stddev_seconds
        << ',' << row.ratio_to_agg << '\n';
  std::cout << "wrote " << (dir / "bench.csv").string() << "\n";
  return 0;
}

int cmd_probe(const CommonFlags& flags, int phase1, int phase2, int log_every) {
  ExperimentConfig cfg = flags.build();
  const DomainSet data = cfg.dataset.realize();
  ModelSpec spec = cfg.model_spec();
  spec.aux_domain_head = static_cast<int>(data.num_domains());
  ProbeSchedule sched;
  sched.phase1_iters = phase1;
  sched.phase2_iters = phase2;
  sched.log_every = log_every;
  const ProbeResult result = domain_probe(data, spec, sched, cfg.method, cfg.hp,
                                          cfg.batch_size, cfg.seeds.front());
  const std::filesystem::path dir = flags.out_dir;
  std::filesystem::create_directories(dir);
  write_probe_csv(result, dir / "probe.csv");
  double final_domain_loss = 0.0;
  for (const ProbePoint& p : result.log)
    if (p.phase == 2) final_domain_loss = p.domain_loss;
  std::cout << "final phase-2 domain loss " << final_domain_loss << "\nwrote "
            << (dir / "probe.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential-learning domain generalization toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a rotated-Gaussian dataset");
  int g_domains = 4, g_classes = 3, g_n = 200;
  double g_angle = 25.0, g_noise = 0.35;
  std::uint64_t g_seed = 7;
  std::string g_out = "domains.bin";
  gen->add_option("--domains", g_domains, "number of domains");
  gen->add_option("--classes", g_classes, "number of classes");
  gen->add_option("--n", g_n, "samples per domain");
  gen->add_option("--angle", g_angle, "rotation step between domains, degrees");
  gen->add_option("--noise", g_noise, "within-class noise standard deviation");
  gen->add_option("--seed", g_seed, "generator seed");
  gen->add_option("--out", g_out, "output file");

  // train / sweep
  auto* train_cmd = app.add_subcommand("train", "run one leave-one-out fold");
  CommonFlags train_flags;
  train_flags.attach(train_cmd);
  auto* sweep_cmd = app.add_subcommand("sweep", "run every fold x seed cell");
  CommonFlags sweep_flags;
  sweep_flags.attach(sweep_cmd);

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "fast numerical identity checks");
  std::uint64_t v_seed = 0;
  verify_cmd->add_option("--seed", v_seed, "fixture seed");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "per-iteration runtime comparison");
  CommonFlags bench_flags;
  bench_flags.attach(bench_cmd);
  std::string b_methods = "s_mldg,fo_s_mldg,ffo_s_mldg";
  int b_warmup = 100, b_measured = 1000;
  bench_cmd->add_option("--methods", b_methods, "methods to time, comma-separated");
  bench_cmd->add_option("--warmup", b_warmup, "untimed iterations");
  bench_cmd->add_option("--measured", b_measured, "timed iterations");

  // probe
  auto* probe_cmd = app.add_subcommand("probe", "domain-distinguishability probe");
  CommonFlags probe_flags;
  probe_flags.attach(probe_cmd);
  int p_phase1 = 600, p_phase2 = 600, p_log_every = 1;
  probe_cmd->add_option("--phase1", p_phase1, "domain-head pre-training iterations");
  probe_cmd->add_option("--phase2", p_phase2, "co-training iterations");
  probe_cmd->add_option("--log-every", p_log_every, "probe logging period");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(g_domains, g_classes, g_n, g_angle, g_noise, g_seed, g_out);
    if (train_cmd->parsed()) return cmd_train(train_flags);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags);
    if (verify_cmd->parsed()) return cmd_verify(v_seed);
    if (bench_cmd->parsed()) return cmd_bench(bench_flags, b_methods, b_warmup, b_measured);
    if (probe_cmd->parsed()) return cmd_probe(probe_flags, p_phase1, p_phase2, p_log_every);
  } catch (const std::exception& e) {
    std::cerr << "seqdg: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
