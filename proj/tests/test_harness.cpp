#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "seqdg/harness.hpp"

using namespace seqdg;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small fast experiment: 3 domains, tiny model, a handful of iterations.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.method = Method::Agg;
  cfg.dataset.domains = 3;
  cfg.dataset.classes = 3;
  cfg.dataset.samples_per_domain = 30;
  cfg.dataset.angle_step = 20.0;
  cfg.dataset.noise = 0.3;
  cfg.dataset.seed = 5;
  cfg.layers = {2, 6, 3};
  cfg.iters = 6;
  cfg.batch_size = 8;
  cfg.eval_every = 3;
  cfg.seeds = {0, 1};
  cfg.hp.gamma = 0.05;
  return cfg;
}

}  // namespace

TEST_CASE("toml subset parser") {
  SUBCASE("values, sections, comments") {
    const toml::Table t = toml::parse(
        "# header comment\n"
        "name = \"hello # not a comment\"  # trailing\n"
        "count = 42\n"
        "rate = 1.5e-3\n"
        "neg = -7\n"
        "flag = true\n"
        "items = [1, 2, 3,]\n"
        "mixed = [0.5, 2]\n"
        "\n"
        "[section]\n"
        "key = \"a\\\"b\\\\c\"\n");
    CHECK(t.at("name").as_string() == "hello # not a comment");
    CHECK(t.at("count").as_int() == 42);
    CHECK(t.at("count").as_double() == 42.0);
    CHECK(t.at("rate").as_double() == doctest::Approx(1.5e-3));
    CHECK(t.at("neg").as_int() == -7);
    CHECK(t.at("flag").as_bool() == true);
    REQUIRE(t.at("items").as_array().size() == 3);
    CHECK(t.at("items").as_array()[2].as_int() == 3);
    CHECK(t.at("mixed").as_array()[0].as_double() == 0.5);
    CHECK(t.at("section.key").as_string() == "a\"b\\c");
  }

  SUBCASE("malformed input is rejected with the line number") {
    CHECK_THROWS_AS((void)toml::parse("a = 1\na = 2\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)toml::parse("x = \"unterminated\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)toml::parse("x = [1, 2\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)toml::parse("[section\nx = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)toml::parse("x = 1 2\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)toml::parse("just words\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)toml::parse("x = nonsense\n"), std::invalid_argument);
    try {
      (void)toml::parse("ok = 1\nbad =\n");
      FAIL("expected a parse error");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  SUBCASE("accessor kind mismatches throw") {
    const toml::Table t = toml::parse("x = 3\ny = 2.5\n");
    CHECK_THROWS_AS((void)t.at("x").as_string(), std::invalid_argument);
    CHECK_THROWS_AS((void)t.at("x").as_bool(), std::invalid_argument);
    CHECK_THROWS_AS((void)t.at("y").as_int(), std::invalid_argument);  // float, not int
    CHECK(t.at("y").as_double() == 2.5);
  }
}

TEST_CASE("experiment config from toml") {
  SUBCASE("empty text keeps defaults") {
    const ExperimentConfig cfg = config_from_toml_text("");
    CHECK(cfg.method == Method::Agg);
    CHECK(cfg.held_out == kAllFolds);
    CHECK(cfg.iters == 1000);
    CHECK(cfg.layers == std::vector<int>{2, 16, 3});
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0});
  }

  SUBCASE("explicit keys set every field") {
    const ExperimentConfig cfg = config_from_toml_text(
        "method = \"ffo_s_mldg\"\n"
        "held_out = 2\n"
        "iters = 50\n"
        "batch_size = 4\n"
        "eval_every = 10\n"
        "seeds = [3, 4]\n"
        "train_frac = 0.8\n"
        "aggregate_mtrain = true\n"
        "undo_squared_penalty = true\n"
        "[dataset]\n"
        "domains = 5\n"
        "classes = 4\n"
        "samples_per_domain = 17\n"
        "angle_step = 11.0\n"
        "noise = 0.2\n"
        "seed = 9\n"
        "[model]\n"
        "layers = [2, 7, 4]\n"
        "batchnorm = true\n"
        "[hp]\n"
        "alpha = [0.3, 0.4]\n"
        "beta = 1.25\n"
        "gamma = 0.02\n"
        "lambda = 3.0\n"
        "momentum = 0.8\n"
        "weight_decay = 0.001\n"
        "second_order = false\n"
        "eq3_strict = true\n");
    CHECK(cfg.method == Method::FfoSMldg);
    CHECK(cfg.held_out == 2);
    CHECK(cfg.iters == 50);
    CHECK(cfg.batch_size == 4);
    CHECK(cfg.eval_every == 10);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
    CHECK(cfg.train_frac == 0.8);
    CHECK(cfg.aggregate_mtrain);
    CHECK(cfg.undo_squared_penalty);
    CHECK(cfg.dataset.domains == 5);
    CHECK(cfg.dataset.classes == 4);
    CHECK(cfg.dataset.samples_per_domain == 17);
    CHECK(cfg.dataset.angle_step == 11.0);
    CHECK(cfg.dataset.seed == 9);
    CHECK(cfg.layers == std::vector<int>{2, 7, 4});
    CHECK(cfg.batchnorm);
    CHECK(cfg.hp.alpha == std::vector<double>{0.3, 0.4});
    CHECK(cfg.hp.beta == 1.25);
    CHECK(cfg.hp.gamma == 0.02);
    CHECK(cfg.hp.lambda == 3.0);
    CHECK(cfg.hp.momentum == 0.8);
    CHECK(cfg.hp.weight_decay == 0.001);
    CHECK_FALSE(cfg.hp.second_order);
    CHECK(cfg.hp.eq3_strict);
  }

  SUBCASE("scalar alpha becomes a one-entry list") {
    const ExperimentConfig cfg = config_from_toml_text("[hp]\nalpha = 0.7\n");
    CHECK(cfg.hp.alpha == std::vector<double>{0.7});
  }

  SUBCASE("presets load the published hyperparameters") {
    const ExperimentConfig cfg = config_from_toml_text("preset = \"vlcs_smldg\"\n");
    CHECK(cfg.method == Method::SMldg);
    CHECK(cfg.hp.alpha == std::vector<double>{0.05, 0.6});
    CHECK(cfg.hp.gamma == 0.001);
    CHECK(cfg.hp.beta == 1.2);
    CHECK(cfg.preset == "vlcs_smldg");
    CHECK_FALSE(cfg.batchnorm);

    const ExperimentConfig ix = config_from_toml_text("preset = \"ixmas_smldg\"\n");
    CHECK(ix.hp.alpha == std::vector<double>{0.9});
    CHECK(ix.hp.beta == 2.0);
    CHECK(ix.batchnorm);  // the ixmas family normalizes hidden embeddings

    const ExperimentConfig su = config_from_toml_text("preset = \"pacs_sundo\"\n");
    CHECK(su.method == Method::SUndo);
    CHECK(su.hp.gamma == 0.001);
    CHECK(su.hp.lambda == 100.0);
  }

  SUBCASE("explicit keys override the preset") {
    const ExperimentConfig cfg = config_from_toml_text(
        "preset = \"vlcs_smldg\"\n"
        "[hp]\n"
        "beta = 9.0\n");
    CHECK(cfg.hp.beta == 9.0);
    CHECK(cfg.hp.gamma == 0.001);  // untouched preset value survives
  }

  SUBCASE("unknown keys and presets are rejected") {
    CHECK_THROWS_AS((void)config_from_toml_text("mystery = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_toml_text("preset = \"nope\"\n"), std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_toml_text("held_out = \"some\"\n"),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)config_from_toml_text("seeds = [-1]\n"), std::invalid_argument);
  }

  SUBCASE("checked-in example configs stay parseable") {
    const std::filesystem::path root = SEQDG_REPO_ROOT;
    const ExperimentConfig sweep = config_from_toml_file(root / "configs/sweep_smldg.toml");
    CHECK(sweep.method == Method::SMldg);
    CHECK(sweep.held_out == kAllFolds);
    sweep.validate();
    const ExperimentConfig preset = config_from_toml_file(root / "configs/vlcs_preset.toml");
    CHECK(preset.hp.alpha == std::vector<double>{0.05, 0.6});
    preset.validate();
    config_from_toml_file(root / "configs/bench.toml").validate();
  }

  SUBCASE("validation catches structural mistakes") {
    ExperimentConfig cfg = tiny_config();
    cfg.seeds.clear();
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.train_frac = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.eval_every = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

TEST_CASE("config hashing") {
  const ExperimentConfig a = tiny_config();
  ExperimentConfig b = tiny_config();
  CHECK(a.config_hash() == b.config_hash());
  CHECK(a.config_hash().size() == 16);
  for (char c : a.config_hash()) CHECK(std::isxdigit(static_cast<unsigned char>(c)));

  b.hp.gamma = 0.051;
  CHECK(a.config_hash() != b.config_hash());
  b = tiny_config();
  b.seeds.push_back(2);
  CHECK(a.config_hash() != b.config_hash());
  b = tiny_config();
  b.held_out = 1;
  CHECK(a.config_hash() != b.config_hash());
}

TEST_CASE("leave-one-out experiment sweep") {
  SUBCASE("fold x seed grid is fully enumerated") {
    ExperimentConfig cfg = tiny_config();
    cfg.dataset.domains = 4;
    cfg.seeds = {0, 1, 2};
    const RunReport rep = run_experiment(cfg, 1);
    CHECK(rep.runs.size() == 12);  // 4 folds x 3 seeds
    CHECK(rep.folds.size() == 4);
    CHECK(rep.seed_count == 3);
    CHECK(rep.method == Method::Agg);
    CHECK(rep.config_hash == cfg.config_hash());
    // fold-major, seed-minor order
    CHECK(rep.runs[0].held_out == 0);
    CHECK(rep.runs[0].seed == 0);
    CHECK(rep.runs[2].seed == 2);
    CHECK(rep.runs[3].held_out == 1);
    for (const FoldSeedRun& r : rep.runs) {
      CHECK(r.holdout_accuracy >= 0.0);
      CHECK(r.holdout_accuracy <= 1.0);
      CHECK(std::isfinite(r.final_train_loss));
      CHECK(r.metrics.size() == 3);  // iters 0, 3, 6
      CHECK(r.params.all_finite());
    }
    // fold summary means agree with a direct recomputation
    double f0 = 0.0;
    for (std::size_t s = 0; s < 3; ++s) f0 += rep.runs[s].holdout_accuracy;
    CHECK(rep.folds[0].mean_accuracy == doctest::Approx(f0 / 3.0).epsilon(1e-15));
    CHECK(rep.folds[0].held_out == 0);
  }

  SUBCASE("single named fold runs only that fold") {
    ExperimentConfig cfg = tiny_config();
    cfg.held_out = 2;
    const RunReport rep = run_experiment(cfg, 1);
    CHECK(rep.runs.size() == 2);  // 2 seeds
    CHECK(rep.folds.size() == 1);
    CHECK(rep.folds[0].held_out == 2);
    for (const FoldSeedRun& r : rep.runs) CHECK(r.held_out == 2);
  }

  SUBCASE("reports are byte-identical across reruns and job counts") {
    ExperimentConfig cfg = tiny_config();
    cfg.method = Method::SMldg;
    cfg.hp.alpha = {0.1};
    const std::string a = report_to_json(run_experiment(cfg, 1)).dump(2);
    const std::string b = report_to_json(run_experiment(cfg, 1)).dump(2);
    const std::string c = report_to_json(run_experiment(cfg, 4)).dump(2);
    CHECK(a == b);
    CHECK(a == c);
  }

  SUBCASE("a failing fold aborts and names the fold") {
    ExperimentConfig cfg = tiny_config();
    cfg.dataset.domains = 2;  // one source per fold: mldg cannot split it
    cfg.method = Method::Mldg;
    try {
      (void)run_experiment(cfg, 1);
      FAIL("expected the sweep to abort");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("fold held_out=0") != std::string::npos);
      CHECK(msg.find("seed=0") != std::string::npos);
    }
  }

  SUBCASE("mismatched model and dataset are rejected") {
    ExperimentConfig cfg = tiny_config();
    cfg.layers = {2, 6, 4};  // dataset has 3 classes
    CHECK_THROWS_AS((void)run_experiment(cfg, 1), std::invalid_argument);
    cfg = tiny_config();
    cfg.held_out = 7;
    CHECK_THROWS_AS((void)run_experiment(cfg, 1), std::invalid_argument);
  }
}

TEST_CASE("report serialization") {
  ExperimentConfig cfg = tiny_config();
  const RunReport rep = run_experiment(cfg, 1);

  SUBCASE("json body validates against the checked-in schema") {
    const nlohmann::json schema = nlohmann::json::parse(
        slurp(std::filesystem::path(SEQDG_REPO_ROOT) / "schemas/report.schema.json"));
    const nlohmann::json body = report_to_json(rep);
    validate_report_schema(body, schema);  // must not throw

    nlohmann::json broken = body;
    broken.erase("config_hash");
    CHECK_THROWS_AS(validate_report_schema(broken, schema), std::runtime_error);
    broken = body;
    broken["seed_count"] = "two";
    CHECK_THROWS_AS(validate_report_schema(broken, schema), std::runtime_error);
    broken = body;
    broken["surprise"] = 1;
    CHECK_THROWS_AS(validate_report_schema(broken, schema), std::runtime_error);
    broken = body;
    broken["folds"][0]["runs"][0]["metrics"][0]["train_loss"] = nullptr;
    CHECK_THROWS_AS(validate_report_schema(broken, schema), std::runtime_error);
  }

  SUBCASE("metrics csv round-trips the in-memory log exactly") {
    const auto path = temp_path("seqdg_metrics_test.csv");
    write_metrics_csv(rep, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "held_out,seed,iter,train_loss,holdout_accuracy,alignment_mean");
    std::size_t idx = 0;
    std::vector<std::pair<const FoldSeedRun*, const MetricsRow*>> flat;
    for (const FoldSeedRun& r : rep.runs)
      for (const MetricsRow& m : r.metrics) flat.push_back({&r, &m});
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      REQUIRE(idx < flat.size());
      std::istringstream ss(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      REQUIRE(cells.size() == 6);
      CHECK(std::stoi(cells[0]) == flat[idx].first->held_out);
      CHECK(std::stoull(cells[1]) == flat[idx].first->seed);
      CHECK(std::stoi(cells[2]) == flat[idx].second->iter);
      CHECK(std::stod(cells[3]) == flat[idx].second->train_loss);
      CHECK(std::stod(cells[4]) == flat[idx].second->holdout_accuracy);
      CHECK(std::stod(cells[5]) == flat[idx].second->alignment_mean);
      ++idx;
    }
    CHECK(idx == flat.size());
    std::filesystem::remove(path);
  }

  SUBCASE("plot data covers every fold and seed") {
    const auto dir = temp_path("seqdg_plots_test");
    emit_plot_data(rep, dir);
    std::ifstream bars(dir / "accuracy_bars.csv");
    REQUIRE(bars.good());
    std::string line;
    std::getline(bars, line);
    CHECK(line == "held_out,seed,accuracy");
    std::size_t rows = 0;
    while (std::getline(bars, line))
      if (!line.empty()) ++rows;
    CHECK(rows == rep.runs.size());  // folds x seeds
    for (const char* f : {"loss_curves.csv", "alignment_traces.csv"})
      CHECK(std::filesystem::exists(dir / f));
    std::filesystem::remove_all(dir);
  }

  SUBCASE("report and timing files are written") {
    const auto rp = temp_path("seqdg_report_test.json");
    const auto tp = temp_path("seqdg_timing_test.json");
    write_report_json(rep, rp);
    write_timing_json(rep, tp);
    const nlohmann::json body = nlohmann::json::parse(slurp(rp));
    CHECK(body["schema"] == "seqdg-report-v1");
    CHECK(body["folds"].size() == rep.folds.size());
    const nlohmann::json timing = nlohmann::json::parse(slurp(tp));
    CHECK(timing["runs"].size() == rep.runs.size());
    CHECK(timing["mean_seconds_per_iter"].get<double>() > 0.0);
    std::filesystem::remove(rp);
    std::filesystem::remove(tp);
  }
}

TEST_CASE("runtime benchmarking") {
  ExperimentConfig cfg = tiny_config();
  const DomainSet data = cfg.dataset.realize();

  SUBCASE("baseline row comes first and ratios are relative to it") {
    const std::vector<Method> methods = {Method::FfoSMldg, Method::SMldg};
    const auto table = benchmark_runtime(methods, cfg, data, 2, 5);
    REQUIRE(table.size() == 3);
    CHECK(table[0].method == Method::Agg);
    CHECK(table[0].ratio_to_agg == 1.0);
    CHECK(table[1].method == Method::FfoSMldg);
    CHECK(table[2].method == Method::SMldg);
    for (const BenchRow& row : table) {
      CHECK(row.mean_seconds > 0.0);
      CHECK(row.stddev_seconds >= 0.0);
      CHECK(row.ratio_to_agg > 0.0);
    }
  }

  SUBCASE("duplicates collapse and agg alone is not a comparison") {
    const std::vector<Method> dup = {Method::Agg, Method::FfoSMldg, Method::FfoSMldg};
    CHECK(benchmark_runtime(dup, cfg, data, 0, 2).size() == 2);
    const std::vector<Method> only_agg = {Method::Agg};
    CHECK_THROWS_AS((void)benchmark_runtime(only_agg, cfg, data, 0, 2),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)benchmark_runtime(dup, cfg, data, -1, 2), std::invalid_argument);
    CHECK_THROWS_AS((void)benchmark_runtime(dup, cfg, data, 0, 0), std::invalid_argument);
  }
}

TEST_CASE("job resolution respects the environment cap") {
  unsetenv("SEQDG_THREADS");
  CHECK(resolve_jobs(3) == 3);
  CHECK(resolve_jobs(1) == 1);
  CHECK(resolve_jobs(0) >= 1);  // auto: hardware concurrency
  setenv("SEQDG_THREADS", "2", 1);
  CHECK(resolve_jobs(8) == 2);
  CHECK(resolve_jobs(1) == 1);
  setenv("SEQDG_THREADS", "garbage", 1);
  CHECK(resolve_jobs(5) == 5);  // unparseable cap is ignored
  unsetenv("SEQDG_THREADS");
}
