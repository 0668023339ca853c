#include "seqdg/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "seqdg/model.hpp"

namespace seqdg {
namespace {

// Shortest exact decimal rendering; 17 significant digits round-trip any
// double bit pattern.
std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string join_doubles(std::span<const double> xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt17(xs[i]);
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct MeanStdErr {
  double mean = 0.0;
  double std_error = 0.0;
};

MeanStdErr mean_std_error(std::span<const double> xs) {
  MeanStdErr r;
  if (xs.empty()) return r;
  double sum = 0.0;
  for (double x : xs) sum += x;
  r.mean = sum / static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  const double var = ss / static_cast<double>(xs.size() - 1);
  r.std_error = std::sqrt(var / static_cast<double>(xs.size()));
  return r;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path.string());
  return out;
}

}  // namespace

DomainSet DatasetSpec::realize() const {
  if (!path.empty()) return load_domains(path);
  return synth_rotated(domains, classes, samples_per_domain, angle_step, noise, seed);
}

void ExperimentConfig::validate() const {
  hp.validate();
  if (iters < 0) throw std::invalid_argument("iters must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw std::invalid_argument("train_frac must lie in (0, 1)");
  if (held_out < kAllFolds) throw std::invalid_argument("held_out must be a domain id or all");
  model_spec().validate();
}

std::string ExperimentConfig::canonical_string() const {
  std::string s;
  s += "method=" + std::string(method_name(method));
  s += "|preset=" + preset;
  s += "|dataset.path=" + dataset.path.string();
  s += "|dataset.domains=" + std::to_string(dataset.domains);
  s += "|dataset.classes=" + std::to_string(dataset.classes);
  s += "|dataset.n=" + std::to_string(dataset.samples_per_domain);
  s += "|dataset.angle=" + fmt17(dataset.angle_step);
  s += "|dataset.noise=" + fmt17(dataset.noise);
  s += "|dataset.seed=" + std::to_string(dataset.seed);
  s += "|layers=";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(layers[i]);
  }
  s += "|batchnorm=" + std::to_string(batchnorm ? 1 : 0);
  s += "|held_out=" + (held_out == kAllFolds ? std::string("all") : std::to_string(held_out));
  s += "|iters=" + std::to_string(iters);
  s += "|batch_size=" + std::to_string(batch_size);
  s += "|eval_every=" + std::to_string(eval_every);
  s += "|seeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(seeds[i]);
  }
  s += "|train_frac=" + fmt17(train_frac);
  s += "|aggregate_mtrain=" + std::to_string(aggregate_mtrain ? 1 : 0);
  s += "|undo_squared_penalty=" + std::to_string(undo_squared_penalty ? 1 : 0);
  s += "|alpha=" + join_doubles(hp.alpha);
  s += "|beta=" + fmt17(hp.beta);
  s += "|gamma=" + fmt17(hp.gamma);
  s += "|lambda=" + fmt17(hp.lambda);
  s += "|lambda1=" + fmt17(hp.lambda1);
  s += "|lambda2=" + fmt17(hp.lambda2);
  s += "|momentum=" + fmt17(hp.momentum);
  s += "|weight_decay=" + fmt17(hp.weight_decay);
  s += "|second_order=" + std::to_string(hp.second_order ? 1 : 0);
  s += "|eq3_strict=" + std::to_string(hp.eq3_strict ? 1 : 0);
  return s;
}

std::string ExperimentConfig::config_hash() const {
  const std::uint64_t h = fnv1a64(canonical_string());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelSpec ExperimentConfig::model_spec() const {
  ModelSpec spec;
  spec.layer_sizes = layers;
  spec.batchnorm = batchnorm;
  spec.aux_domain_head = 0;
  return spec;
}

TrainConfig ExperimentConfig::to_train_config(std::uint64_t seed) const {
  TrainConfig tc;
  tc.method = method;
  tc.model = model_spec();
  tc.hp = hp;
  tc.iters = iters;
  tc.batch_size = batch_size;
  tc.eval_every = eval_every;
  tc.seed = seed;
  tc.train_frac = train_frac;
  tc.aggregate_mtrain = aggregate_mtrain;
  tc.undo_squared_penalty = undo_squared_penalty;
  return tc;
}

namespace {

struct Preset {
  const char* name;
  void (*apply)(ExperimentConfig&);
};

constexpr Preset kPresets[] = {
    {"ixmas_smldg",
     [](ExperimentConfig& c) {
       c.method = Method::SMldg;
       c.hp.alpha = {0.9};
       c.hp.gamma = 0.001;
       c.hp.beta = 2.0;
       c.batchnorm = true;
     }},
    {"ixmas_ffo",
     [](ExperimentConfig& c) {
       c.method = Method::FfoSMldg;
       c.hp.alpha = {1.0};
       c.hp.gamma = 0.9;
       c.hp.beta = 1.1;
       c.batchnorm = true;
     }},
    {"ixmas_sundo",
     [](ExperimentConfig& c) {
       c.method = Method::SUndo;
       c.hp.gamma = 0.005;
       c.hp.lambda = 1000.0;
       c.batchnorm = true;
     }},
    {"vlcs_smldg",
     [](ExperimentConfig& c) {
       c.method = Method::SMldg;
       c.hp.alpha = {0.05, 0.6};
       c.hp.gamma = 0.001;
       c.hp.beta = 1.2;
     }},
    {"vlcs_ffo",
     [](ExperimentConfig& c) {
       c.method = Method::FfoSMldg;
       c.hp.alpha = {0.3};
       c.hp.gamma = 0.01;
       c.hp.beta = 1.5;
     }},
    {"vlcs_sundo",
     [](ExperimentConfig& c) {
       c.method = Method::SUndo;
       c.hp.gamma = 0.01;
       c.hp.lambda = 50.0;
     }},
    {"pacs_smldg",
     [](ExperimentConfig& c) {
       c.method = Method::SMldg;
       c.hp.alpha = {0.002};
       c.hp.gamma = 0.001;
       c.hp.beta = 1.85;
     }},
    {"pacs_ffo",
     [](ExperimentConfig& c) {
       c.method = Method::FfoSMldg;
       c.hp.alpha = {0.01};
       c.hp.gamma = 0.9;
       c.hp.beta = 1.75;
     }},
    {"pacs_sundo",
     [](ExperimentConfig& c) {
       c.method = Method::SUndo;
       c.hp.gamma = 0.001;
       c.hp.lambda = 100.0;
     }},
};

}  // namespace

void apply_preset(ExperimentConfig& cfg, std::string_view name) {
  for (const Preset& p : kPresets)
    if (name == p.name) {
      p.apply(cfg);
      cfg.preset = std::string(name);
      return;
    }
  std::string msg = "unknown preset '" + std::string(name) + "'; valid presets:";
  for (const Preset& p : kPresets) msg += std::string(" ") + p.name;
  throw std::invalid_argument(msg);
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const Preset& p : kPresets) out.emplace_back(p.name);
  return out;
}

namespace {

int to_int(const toml::Value& v, const std::string& key) {
  try {
    const std::int64_t i = v.as_int();
    if (i < INT32_MIN || i > INT32_MAX) throw std::invalid_argument("out of range");
    return static_cast<int>(i);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("config key '" + key + "': " + e.what());
  }
}

std::uint64_t to_seed(const toml::Value& v, const std::string& key) {
  try {
    const std::int64_t i = v.as_int();
    if (i < 0) throw std::invalid_argument("seed must be >= 0");
    return static_cast<std::uint64_t>(i);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("config key '" + key + "': " + e.what());
  }
}

}  // namespace

ExperimentConfig config_from_toml(const toml::Table& table) {
  ExperimentConfig cfg;
  if (const auto it = table.find("preset"); it != table.end())
    apply_preset(cfg, it->second.as_string());

  for (const auto& [key, v] : table) {
    if (key == "preset") continue;  // already applied
    if (key == "method") cfg.method = parse_method(v.as_string());
    else if (key == "held_out") {
      if (v.kind == toml::Value::Kind::String) {
        std::string s = v.as_string();
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (s != "all") throw std::invalid_argument("held_out must be a domain id or \"all\"");
        cfg.held_out = kAllFolds;
      } else {
        cfg.held_out = to_int(v, key);
      }
    } else if (key == "iters") cfg.iters = to_int(v, key);
    else if (key == "batch_size") cfg.batch_size = to_int(v, key);
    else if (key == "eval_every") cfg.eval_every = to_int(v, key);
    else if (key == "seeds") {
      cfg.seeds.clear();
      for (const toml::Value& e : v.as_array()) cfg.seeds.push_back(to_seed(e, key));
    } else if (key == "train_frac") cfg.train_frac = v.as_double();
    else if (key == "aggregate_mtrain") cfg.aggregate_mtrain = v.as_bool();
    else if (key == "undo_squared_penalty") cfg.undo_squared_penalty = v.as_bool();
    else if (key == "dataset.path") cfg.dataset.path = v.as_string();
    else if (key == "dataset.domains") cfg.dataset.domains = to_int(v, key);
    else if (key == "dataset.classes") cfg.dataset.classes = to_int(v, key);
    else if (key == "dataset.samples_per_domain")
      cfg.dataset.samples_per_domain = to_int(v, key);
    else if (key == "dataset.angle_step") cfg.dataset.angle_step = v.as_double();
    else if (key == "dataset.noise") cfg.dataset.noise = v.as_double();
    else if (key == "dataset.seed") cfg.dataset.seed = to_seed(v, key);
    else if (key == "model.layers") {
      cfg.layers.clear();
      for (const toml::Value& e : v.as_array()) cfg.layers.push_back(to_int(e, key));
    } else if (key == "model.batchnorm") cfg.batchnorm = v.as_bool();
    else if (key == "hp.alpha") {
      cfg.hp.alpha.clear();
      if (v.kind == toml::Value::Kind::Array)
        for (const toml::Value& e : v.as_array()) cfg.hp.alpha.push_back(e.as_double());
      else
        cfg.hp.alpha.push_back(v.as_double());
    } else if (key == "hp.beta") cfg.hp.beta = v.as_double();
    else if (key == "hp.gamma") cfg.hp.gamma = v.as_double();
    else if (key == "hp.lambda") cfg.hp.lambda = v.as_double();
    else if (key == "hp.lambda1") cfg.hp.lambda1 = v.as_double();
    else if (key == "hp.lambda2") cfg.hp.lambda2 = v.as_double();
    else if (key == "hp.momentum") cfg.hp.momentum = v.as_double();
    else if (key == "hp.weight_decay") cfg.hp.weight_decay = v.as_double();
    else if (key == "hp.second_order") cfg.hp.second_order = v.as_bool();
    else if (key == "hp.eq3_strict") cfg.hp.eq3_strict = v.as_bool();
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  return cfg;
}

ExperimentConfig config_from_toml_text(const std::string& text) {
  return config_from_toml(toml::parse(text));
}

ExperimentConfig config_from_toml_file(const std::filesystem::path& path) {
  return config_from_toml(toml::parse_file(path));
}

int resolve_jobs(int requested) {
  int jobs = requested;
  if (jobs < 1) jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("SEQDG_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) jobs = std::min<long>(jobs, cap);
  }
  return jobs;
}

RunReport run_experiment(const ExperimentConfig& cfg, const DomainSet& data, int jobs) {
  cfg.validate();
  const std::size_t n_domains = data.num_domains();
  if (n_domains < 2)
    throw std::invalid_argument("run_experiment: need at least 2 domains");
  const ModelSpec spec = cfg.model_spec();
  if (spec.num_classes() != data.num_classes)
    throw std::invalid_argument("model output size does not match the dataset class count");
  if (!data.domains.empty() &&
      static_cast<std::size_t>(spec.input_dim()) != data.domains.front().features.cols())
    throw std::invalid_argument("model input size does not match the dataset feature size");
  if (cfg.held_out != kAllFolds && static_cast<std::size_t>(cfg.held_out) >= n_domains)
    throw std::invalid_argument("held_out domain id is outside the dataset");

  std::vector<int> folds;
  if (cfg.held_out == kAllFolds) {
    folds.resize(n_domains);
    for (std::size_t i = 0; i < n_domains; ++i) folds[i] = static_cast<int>(i);
  } else {
    folds.push_back(cfg.held_out);
  }

  struct Task {
    int fold;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  tasks.reserve(folds.size() * cfg.seeds.size());
  for (int f : folds)
    for (std::uint64_t s : cfg.seeds) tasks.push_back({f, s});

  RunReport report;
  report.config_hash = cfg.config_hash();
  report.method = cfg.method;
  report.seed_count = cfg.seeds.size();
  report.runs.resize(tasks.size());
  std::vector<std::string> errors(tasks.size());

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      try {
        const TrainConfig tc = cfg.to_train_config(t.seed);
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult tr = train(tc, data, t.fold);
        const auto t1 = std::chrono::steady_clock::now();
        FoldSeedRun& r = report.runs[i];
        r.held_out = t.fold;
        r.seed = t.seed;
        r.holdout_accuracy = tr.metrics.back().holdout_accuracy;
        r.final_train_loss = tr.metrics.back().train_loss;
        r.seconds_per_iter = std::chrono::duration<double>(t1 - t0).count() /
                             std::max(1, cfg.iters);
        r.metrics = std::move(tr.metrics);
        r.params = std::move(tr.params);
      } catch (const std::exception& e) {
        errors[i] = "fold held_out=" + std::to_string(t.fold) +
                    " seed=" + std::to_string(t.seed) + ": " + e.what();
      }
    }
  };

  const int n_workers =
      std::max(1, std::min(resolve_jobs(jobs), static_cast<int>(tasks.size())));
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }

  std::string all_errors;
  for (const std::string& e : errors)
    if (!e.empty()) {
      if (!all_errors.empty()) all_errors += "; ";
      all_errors += e;
    }
  if (!all_errors.empty()) throw std::runtime_error("experiment aborted: " + all_errors);

  std::vector<double> all_acc;
  all_acc.reserve(report.runs.size());
  for (int f : folds) {
    std::vector<double> fold_acc;
    for (const FoldSeedRun& r : report.runs)
      if (r.held_out == f) fold_acc.push_back(r.holdout_accuracy);
    const MeanStdErr m = mean_std_error(fold_acc);
    report.folds.push_back(FoldSummary{f, m.mean, m.std_error});
    all_acc.insert(all_acc.end(), fold_acc.begin(), fold_acc.end());
  }
  const MeanStdErr overall = mean_std_error(all_acc);
  report.overall_mean = overall.mean;
  report.overall_std_error = overall.std_error;
  return report;
}

RunReport run_experiment(const ExperimentConfig& cfg, int jobs) {
  const DomainSet data = cfg.dataset.realize();
  return run_experiment(cfg, data, jobs);
}

nlohmann::ordered_json report_to_json(const RunReport& report) {
  nlohmann::ordered_json j;
  j["schema"] = "seqdg-report-v1";
  j["config_hash"] = report.config_hash;
  j["method"] = std::string(method_name(report.method));
  j["seed_count"] = report.seed_count;
  j["overall"] = {{"mean_accuracy", report.overall_mean},
                  {"std_error", report.overall_std_error}};
  j["folds"] = nlohmann::ordered_json::array();
  for (const FoldSummary& f : report.folds) {
    nlohmann::ordered_json jf;
    jf["held_out"] = f.held_out;
    jf["mean_accuracy"] = f.mean_accuracy;
    jf["std_error"] = f.std_error;
    jf["runs"] = nlohmann::ordered_json::array();
    for (const FoldSeedRun& r : report.runs) {
      if (r.held_out != f.held_out) continue;
      nlohmann::ordered_json jr;
      jr["seed"] = r.seed;
      jr["holdout_accuracy"] = r.holdout_accuracy;
      jr["final_train_loss"] = r.final_train_loss;
      jr["metrics"] = nlohmann::ordered_json::array();
      for (const MetricsRow& m : r.metrics) {
        jr["metrics"].push_back({{"iter", m.iter},
                                 {"train_loss", m.train_loss},
                                 {"holdout_accuracy", m.holdout_accuracy},
                                 {"alignment_mean", m.alignment_mean}});
      }
      jf["runs"].push_back(std::move(jr));
    }
    j["folds"].push_back(std::move(jf));
  }
  return j;
}

void write_report_json(const RunReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << report_to_json(report).dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_timing_json(const RunReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["runs"] = nlohmann::ordered_json::array();
  double sum = 0.0;
  for (const FoldSeedRun& r : report.runs) {
    j["runs"].push_back({{"held_out", r.held_out},
                         {"seed", r.seed},
                         {"seconds_per_iter", r.seconds_per_iter}});
    sum += r.seconds_per_iter;
  }
  j["mean_seconds_per_iter"] =
      report.runs.empty() ? 0.0 : sum / static_cast<double>(report.runs.size());
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_metrics_csv(const RunReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "held_out,seed,iter,train_loss,holdout_accuracy,alignment_mean\n";
  for (const FoldSeedRun& r : report.runs)
    for (const MetricsRow& m : r.metrics)
      out << r.held_out << ',' << r.seed << ',' << m.iter << ',' << fmt17(m.train_loss)
          << ',' << fmt17(m.holdout_accuracy) << ',' << fmt17(m.alignment_mean) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void emit_plot_data(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out = open_out(dir / "accuracy_bars.csv");
    out << "held_out,seed,accuracy\n";
    for (const FoldSeedRun& r : report.runs)
      out << r.held_out << ',' << r.seed << ',' << fmt17(r.holdout_accuracy) << '\n';
    if (!out) throw std::runtime_error("failed writing accuracy_bars.csv");
  }
  {
    std::ofstream out = open_out(dir / "loss_curves.csv");
    out << "held_out,seed,iter,train_loss,holdout_accuracy\n";
    for (const FoldSeedRun& r : report.runs)
      for (const MetricsRow& m : r.metrics)
        out << r.held_out << ',' << r.seed << ',' << m.iter << ',' << fmt17(m.train_loss)
            << ',' << fmt17(m.holdout_accuracy) << '\n';
    if (!out) throw std::runtime_error("failed writing loss_curves.csv");
  }
  {
    std::ofstream out = open_out(dir / "alignment_traces.csv");
    out << "held_out,seed,iter,alignment_mean\n";
    for (const FoldSeedRun& r : report.runs)
      for (const MetricsRow& m : r.metrics)
        out << r.held_out << ',' << r.seed << ',' << m.iter << ','
            << fmt17(m.alignment_mean) << '\n';
    if (!out) throw std::runtime_error("failed writing alignment_traces.csv");
  }
}

namespace {

void check_schema(const nlohmann::json& value, const nlohmann::json& schema,
                  const std::string& path) {
  const auto violation = [&](const std::string& msg) {
    throw std::runtime_error("report schema violation at '" + (path.empty() ? "/" : path) +
                             "': " + msg);
  };

  if (const auto it = schema.find("type"); it != schema.end()) {
    const std::string type = it->get<std::string>();
    const bool ok = (type == "object" && value.is_object()) ||
                    (type == "array" && value.is_array()) ||
                    (type == "string" && value.is_string()) ||
                    (type == "number" && value.is_number()) ||
                    (type == "integer" && value.is_number_integer()) ||
                    (type == "boolean" && value.is_boolean());
    if (!ok) violation("expected type " + type);
  }
  if (const auto it = schema.find("enum"); it != schema.end()) {
    bool found = false;
    for (const auto& candidate : *it)
      if (candidate == value) {
        found = true;
        break;
      }
    if (!found) violation("value not in enum");
  }
  if (const auto it = schema.find("required"); it != schema.end())
    for (const auto& req : *it)
      if (!value.contains(req.get<std::string>()))
        violation("missing required key '" + req.get<std::string>() + "'");
  if (const auto props = schema.find("properties"); props != schema.end()) {
    for (auto it = props->begin(); it != props->end(); ++it)
      if (value.contains(it.key()))
        check_schema(value.at(it.key()), it.value(), path + "/" + it.key());
    if (const auto ap = schema.find("additionalProperties");
        ap != schema.end() && ap->is_boolean() && !ap->get<bool>())
      for (auto it = value.begin(); it != value.end(); ++it)
        if (!props->contains(it.key())) violation("unexpected key '" + it.key() + "'");
  }
  if (const auto items = schema.find("items"); items != schema.end() && value.is_array()) {
    std::size_t i = 0;
    for (const auto& elem : value) check_schema(elem, *items, path + "/" + std::to_string(i++));
  }
}

}  // namespace

void validate_report_schema(const nlohmann::json& report, const nlohmann::json& schema) {
  check_schema(report, schema, "");
}

std::vector<BenchRow> benchmark_runtime(std::span<const Method> methods,
                                        const ExperimentConfig& cfg, const DomainSet& data,
                                        int warmup_iters, int measured_iters) {
  if (warmup_iters < 0) throw std::invalid_argument("warmup_iters must be >= 0");
  if (measured_iters < 1) throw std::invalid_argument("measured_iters must be >= 1");
  if (data.num_domains() < 2)
    throw std::invalid_argument("benchmark_runtime: need at least 2 domains");

  // AGG is always the first row; requested methods follow in order.
  std::vector<Method> order{Method::Agg};
  for (Method m : methods) {
    bool seen = false;
    for (Method o : order) seen = seen || o == m;
    if (!seen) order.push_back(m);
  }
  if (order.size() < 2)
    throw std::invalid_argument("benchmark_runtime: need at least one method besides agg");

  const std::size_t n_src = data.num_domains();
  const std::uint64_t seed = cfg.seeds.front();
  const ModelSpec spec = cfg.model_spec();
  const ParamVector theta0 = init_params(spec, seed);
  std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);
  for (const Domain& d : data.domains) batch_size = std::min(batch_size, d.size());

  std::vector<BenchRow> table;
  for (Method m : order) {
    TrainConfig tc = cfg.to_train_config(seed);
    tc.method = m;
    tc.hp.validate();

    // Identical batch streams for every method: sampler seeds depend only
    // on the shared experiment seed and the domain index.
    Rng master(mix64(seed ^ 0x62656e6368ull));
    std::vector<MinibatchSampler> samplers;
    samplers.reserve(n_src);
    for (std::size_t d = 0; d < n_src; ++d)
      samplers.emplace_back(data.domains[d], batch_size, master.fork(d));
    MethodRunner runner(tc, theta0, n_src, master.fork(0x72756e));

    std::vector<Batch> batches(n_src);
    auto one_iter = [&] {
      for (std::size_t k = 0; k < n_src; ++k) batches[k] = samplers[k].next();
      runner.step(batches);
    };
    for (int it = 0; it < warmup_iters; ++it) one_iter();

    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(measured_iters));
    for (int it = 0; it < measured_iters; ++it) {
      const auto t0 = std::chrono::steady_clock::now();
      one_iter();
      const auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    double mean = 0.0;
    for (double s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    double ss = 0.0;
    for (double s : samples) ss += (s - mean) * (s - mean);
    const double stddev = samples.size() < 2
                              ? 0.0
                              : std::sqrt(ss / static_cast<double>(samples.size() - 1));
    table.push_back(BenchRow{m, mean, stddev, 1.0});
  }
  for (std::size_t i = 1; i < table.size(); ++i)
    table[i].ratio_to_agg = table[i].mean_seconds / table[0].mean_seconds;
  return table;
}

}  // namespace seqdg
