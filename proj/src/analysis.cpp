// analysis.cpp — expansion residuals, alignment matrices, the domain probe,
// and embedding export.

#include "seqdg/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <stdexcept>
#include <utility>

namespace seqdg {

double taylor_residual(const ad::ScalarFn& l1, const ad::ScalarFn& l2,
                       const ParamVector& theta, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("taylor_residual: alpha must be > 0");
  const ParamVector g1 = ad::gradient(l1, theta);
  const ParamVector g2 = ad::gradient(l2, theta);
  ParamVector shifted = theta;
  shifted.axpy(-alpha, g1);
  return ad::eval(l2, shifted) - (ad::eval(l2, theta) - alpha * g1.dot(g2));
}

double taylor_residual(const ModelSpec& spec, const ParamVector& theta, const Batch& batch1,
                       const Batch& batch2, double alpha) {
  return taylor_residual(class_loss_fn(spec, batch1), class_loss_fn(spec, batch2), theta,
                         alpha);
}

Matrix grad_alignment(std::span<const ad::ScalarFn> losses, const ParamVector& theta) {
  if (losses.size() < 2)
    throw std::invalid_argument("grad_alignment: need at least two objectives");
  std::vector<ParamVector> grads;
  grads.reserve(losses.size());
  for (const ad::ScalarFn& l : losses) grads.push_back(ad::gradient(l, theta));
  return pairwise_products(grads);
}

Matrix grad_alignment(const ModelSpec& spec, const ParamVector& theta,
                      std::span<const Batch> batches) {
  std::vector<ad::ScalarFn> fns;
  fns.reserve(batches.size());
  for (const Batch& b : batches) fns.push_back(class_loss_fn(spec, b));
  return grad_alignment(fns, theta);
}

ExpectationCheck ffo_expectation_check(const ad::ScalarFn& l1, const ad::ScalarFn& l2,
                                       const ParamVector& theta, double alpha) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("ffo_expectation_check: alpha must be >= 0");
  HyperParams hp;
  hp.alpha = {alpha};
  hp.beta = 1.0;
  hp.gamma = 1.0;

  auto inner_gradient_sum = [&](const ad::ScalarFn& a, const ad::ScalarFn& b) {
    const std::vector<ad::ScalarFn> fns = {a, b};
    GradientRecord rec;
    (void)ffo_trajectory(fns, theta, hp, &rec);
    ParamVector sum = rec.per_step_grads[0];
    sum += rec.per_step_grads[1];
    return sum;
  };

  ExpectationCheck out;
  out.lhs = inner_gradient_sum(l1, l2);
  out.lhs += inner_gradient_sum(l2, l1);
  out.lhs *= 0.5;

  const ParamVector g1 = ad::gradient(l1, theta);
  const ParamVector g2 = ad::gradient(l2, theta);
  out.rhs = g1;
  out.rhs += g2;
  out.rhs.axpy(-0.5 * alpha, ad::hvp(l1, theta, g2));
  out.rhs.axpy(-0.5 * alpha, ad::hvp(l2, theta, g1));

  ParamVector diff = out.lhs;
  diff -= out.rhs;
  out.gap = diff.norm() / out.rhs.norm();
  return out;
}

ExpectationCheck ffo_expectation_check(const ModelSpec& spec, const ParamVector& theta,
                                       const Batch& batch1, const Batch& batch2,
                                       double alpha) {
  return ffo_expectation_check(class_loss_fn(spec, batch1), class_loss_fn(spec, batch2),
                               theta, alpha);
}

// --- domain-distinguishability probe ------------------------------------------

void ProbeSchedule::validate() const {
  if (phase1_iters < 1 || phase2_iters < 1)
    throw std::invalid_argument("ProbeSchedule: both phases need at least one iteration");
  if (log_every < 1) throw std::invalid_argument("ProbeSchedule: log_every must be >= 1");
}

namespace {

// Gradient restricted to the auxiliary head's segments; everything else zero.
ParamVector head_only(const ParamVector& g) {
  ParamVector masked(g.layout());
  const auto copy_segment = [&](std::string_view name) {
    const auto src = g.segment(name);
    std::copy(src.begin(), src.end(), masked.segment(name).begin());
  };
  copy_segment("hw");
  copy_segment("hb");
  return masked;
}

}  // namespace

ProbeResult domain_probe(const DomainSet& data, const ModelSpec& spec,
                         const ProbeSchedule& schedule, Method method,
                         const HyperParams& hp, int batch_size, std::uint64_t seed) {
  schedule.validate();
  spec.validate();
  hp.validate();
  if (batch_size < 1) throw std::invalid_argument("domain_probe: batch_size must be >= 1");
  if (data.num_domains() < 2)
    throw std::invalid_argument("domain_probe: need at least two domains");
  if (spec.aux_domain_head != static_cast<int>(data.num_domains()))
    throw std::invalid_argument(
        "domain_probe: the auxiliary head must predict exactly the set's domains");
  if (spec.input_dim() != data.feature_dim() || spec.num_classes() != data.num_classes)
    throw std::invalid_argument("domain_probe: model does not fit the dataset");
  if (is_undo_family(method))
    throw std::invalid_argument(
        "domain_probe: undo-family methods keep per-domain parameters; the probe needs one "
        "shared vector");

  const std::size_t n = data.num_domains();
  std::size_t bs = static_cast<std::size_t>(batch_size);
  for (const Domain& d : data.domains) bs = std::min(bs, d.size());

  const std::uint64_t probe_seed = mix64(seed ^ 0x70726f6265ull);
  Rng master(probe_seed);
  std::vector<MinibatchSampler> samplers;
  samplers.reserve(n);
  for (std::size_t d = 0; d < n; ++d)
    samplers.emplace_back(data.domains[d], bs, master.fork(d));

  TrainConfig runner_cfg;
  runner_cfg.method = method;
  runner_cfg.model = spec;
  runner_cfg.hp = hp;
  MethodRunner runner(runner_cfg, init_params(spec, probe_seed), n, master.fork(0x72756e));

  // Head co-training must not decay the frozen trunk coordinates.
  HyperParams head_hp = hp;
  head_hp.weight_decay = 0.0;
  OptimState phase1_state;
  OptimState head_state;

  ProbeResult result;
  auto run_phase = [&](int phase, int iters, int iter_base) {
    for (int it = 0; it < iters; ++it) {
      std::vector<Batch> batches(n);
      for (std::size_t d = 0; d < n; ++d) batches[d] = samplers[d].next();
      const Batch pooled = concat_batches(batches);

      const int global = iter_base + it;
      if (global % schedule.log_every == 0) {
        ad::Tape tape;
        const std::vector<ad::NodeId> leaves = ad::make_leaves(tape, runner.params());
        const double dom = tape.val(build_domain_head_loss(tape, leaves, spec, pooled));
        const double cls = tape.val(build_class_loss(tape, leaves, spec, pooled));
        result.log.push_back(ProbePoint{global, phase, dom, cls});
      }

      if (phase == 1) {
        const ParamVector g =
            ad::gradient(domain_head_loss_fn(spec, pooled), runner.params());
        msgd_update(runner.params(), g, phase1_state, hp);
      } else {
        runner.step(batches);
        const ParamVector g =
            ad::gradient(domain_head_loss_fn(spec, pooled), runner.params());
        msgd_update(runner.params(), head_only(g), head_state, head_hp);
      }
    }
  };
  run_phase(1, schedule.phase1_iters, 0);
  run_phase(2, schedule.phase2_iters, schedule.phase1_iters);

  result.params = runner.params();
  return result;
}

void write_probe_csv(const ProbeResult& probe, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_probe_csv: cannot open " + path.string());
  out << std::setprecision(17);
  out << "iter,domain_loss,class_loss,phase\n";
  for (const ProbePoint& p : probe.log)
    out << p.iter << ',' << p.domain_loss << ',' << p.class_loss << ',' << p.phase << '\n';
  if (!out) throw std::runtime_error("write_probe_csv: write failed for " + path.string());
}

void export_embeddings(const ModelSpec& spec, const ParamVector& theta,
                       const DomainSet& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_embeddings: cannot open " + path.string());
  out << std::setprecision(17);
  const int k = spec.penultimate_dim();
  for (int j = 1; j <= k; ++j) out << 'f' << j << (j < k ? "," : "");
  out << ",class,domain\n";
  for (const Domain& d : data.domains) {
    const Matrix z = penultimate_activations(spec, theta, d.features);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t c = 0; c < z.cols(); ++c) out << z(r, c) << ',';
      out << d.labels[r] << ',' << d.id << '\n';
    }
  }
  if (!out) throw std::runtime_error("export_embeddings: write failed for " + path.string());
}

}  // namespace seqdg
