// algorithms.cpp — sequential meta-gradient trajectories, the undo-bias
// family, M-SGD, and the leave-one-out training driver.

#include "seqdg/algorithms.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>

namespace seqdg {

namespace {

void fill_pairwise(GradientRecord* rec) {
  if (rec != nullptr) rec->pairwise_inner_products = pairwise_products(rec->per_step_grads);
}

void reset(GradientRecord* rec) {
  if (rec == nullptr) return;
  rec->losses.clear();
  rec->per_step_grads.clear();
  rec->pairwise_inner_products = Matrix();
}

}  // namespace

Method parse_method(std::string_view name) {
  std::string s;
  s.reserve(name.size());
  for (char c : name)
    s.push_back(c == '-' ? '_'
                         : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "agg") return Method::Agg;
  if (s == "mldg") return Method::Mldg;
  if (s == "s_mldg") return Method::SMldg;
  if (s == "fo_s_mldg") return Method::FoSMldg;
  if (s == "ffo_s_mldg") return Method::FfoSMldg;
  if (s == "undo") return Method::Undo;
  if (s == "s_undo") return Method::SUndo;
  throw std::invalid_argument("unknown method: " + std::string(name));
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Agg: return "agg";
    case Method::Mldg: return "mldg";
    case Method::SMldg: return "s_mldg";
    case Method::FoSMldg: return "fo_s_mldg";
    case Method::FfoSMldg: return "ffo_s_mldg";
    case Method::Undo: return "undo";
    case Method::SUndo: return "s_undo";
  }
  throw std::logic_error("method_name: bad enum value");
}

bool is_undo_family(Method m) { return m == Method::Undo || m == Method::SUndo; }

std::vector<double> HyperParams::alphas_for(std::size_t needed) const {
  if (alpha.size() == needed) return alpha;
  if (alpha.size() == 1) return std::vector<double>(needed, alpha[0]);
  throw std::invalid_argument("alpha list has " + std::to_string(alpha.size()) +
                              " entries; this trajectory needs 1 or " +
                              std::to_string(needed));
}

void HyperParams::validate() const {
  auto bad = [](const char* what) {
    throw std::invalid_argument(std::string("HyperParams: ") + what);
  };
  if (alpha.empty()) bad("alpha list is empty");
  for (double a : alpha)
    if (!std::isfinite(a) || a < 0.0) bad("alpha entries must be finite and >= 0");
  if (!std::isfinite(beta) || beta < 0.0) bad("beta must be finite and >= 0");
  if (!std::isfinite(gamma) || gamma < 0.0) bad("gamma must be finite and >= 0");
  if (!std::isfinite(lambda) || lambda < 0.0) bad("lambda must be finite and >= 0");
  if (!std::isfinite(lambda1) || lambda1 < 0.0) bad("lambda1 must be finite and >= 0");
  if (!std::isfinite(lambda2) || lambda2 < 0.0) bad("lambda2 must be finite and >= 0");
  if (!std::isfinite(momentum) || momentum < 0.0 || momentum >= 1.0)
    bad("momentum must lie in [0, 1)");
  if (!std::isfinite(weight_decay) || weight_decay < 0.0)
    bad("weight_decay must be finite and >= 0");
}

void msgd_update(ParamVector& theta, const ParamVector& g, OptimState& state,
                 const HyperParams& hp) {
  hp.validate();
  if (!theta.same_layout(g)) throw std::invalid_argument("msgd_update: layout mismatch");
  if (!g.all_finite()) throw std::runtime_error("msgd_update: non-finite gradient");
  if (state.velocity.size() == 0) state.velocity = ParamVector(theta.layout());
  if (!state.velocity.same_layout(theta))
    throw std::invalid_argument("msgd_update: velocity layout mismatch");
  state.velocity *= hp.momentum;
  state.velocity += g;
  state.velocity.axpy(hp.weight_decay, theta);
  theta.axpy(-hp.gamma, state.velocity);
}

ParamVector sequential_meta_gradient(std::span<const ad::ScalarFn> losses,
                                     const ParamVector& theta, const HyperParams& hp,
                                     GradientRecord* rec) {
  hp.validate();
  if (losses.empty())
    throw std::invalid_argument("sequential_meta_gradient: empty loss sequence");
  const std::size_t n_steps = losses.size();
  const std::vector<double> alphas = hp.alphas_for(n_steps - 1);

  ad::Tape tape;
  const std::vector<ad::NodeId> leaves = ad::make_leaves(tape, theta);
  const std::span<const ad::NodeId> at_theta(leaves);

  reset(rec);
  auto record = [&](ad::NodeId loss, std::span<const ad::NodeId> point) {
    if (rec == nullptr) return;
    rec->losses.push_back(tape.val(loss));
    ParamVector g(theta.layout());
    tape.gradient(loss, point, g.values());
    rec->per_step_grads.push_back(std::move(g));
  };

  // Gradient of `node` w.r.t. the original leaves: kept on the tape so later
  // backward passes differentiate through it, or frozen to constants in
  // first-order mode.
  auto inner_grad = [&](ad::NodeId node) {
    if (hp.second_order) return tape.gradient_nodes(node, at_theta);
    const std::vector<double> g = tape.gradient(node, at_theta);
    std::vector<ad::NodeId> out(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) out[j] = tape.constant(g[j]);
    return out;
  };

  const ad::NodeId first = losses[0](tape, at_theta);
  record(first, at_theta);

  ad::NodeId objective = first;
  std::vector<ad::NodeId> shifted(leaves.size());

  if (!hp.eq3_strict) {
    // Accumulated recursion: each inner step restarts from theta along the
    // gradient of everything accumulated so far.
    for (std::size_t i = 1; i < n_steps; ++i) {
      const std::vector<ad::NodeId> g = inner_grad(objective);
      for (std::size_t j = 0; j < leaves.size(); ++j)
        shifted[j] = tape.axpy(leaves[j], -alphas[i - 1], g[j]);
      const ad::NodeId li = losses[i](tape, shifted);
      record(li, shifted);
      objective = tape.axpy(objective, hp.beta, li);
    }
  } else {
    // Literal form: every inner gradient is taken at theta itself, and step i
    // shifts by the weighted sum of the gradients of all previous losses.
    std::vector<ad::NodeId> grad_sum;
    ad::NodeId last_at_theta = first;
    for (std::size_t i = 1; i < n_steps; ++i) {
      std::vector<ad::NodeId> g = inner_grad(last_at_theta);
      const double w = (i == 1) ? 1.0 : hp.beta;
      if (w != 1.0)
        for (ad::NodeId& gj : g) gj = tape.scale(gj, w);
      if (grad_sum.empty()) {
        grad_sum = std::move(g);
      } else {
        for (std::size_t j = 0; j < grad_sum.size(); ++j)
          grad_sum[j] = tape.add(grad_sum[j], g[j]);
      }
      for (std::size_t j = 0; j < leaves.size(); ++j)
        shifted[j] = tape.axpy(leaves[j], -alphas[i - 1], grad_sum[j]);
      const ad::NodeId li = losses[i](tape, shifted);
      record(li, shifted);
      objective = tape.axpy(objective, hp.beta, li);
      if (i + 1 < n_steps) last_at_theta = losses[i](tape, at_theta);
    }
  }

  ParamVector meta_grad(theta.layout());
  tape.gradient(objective, at_theta, meta_grad.values());
  fill_pairwise(rec);
  return meta_grad;
}

FfoResult ffo_trajectory(std::span<const ad::ScalarFn> losses, const ParamVector& theta,
                         const HyperParams& hp, GradientRecord* rec) {
  hp.validate();
  if (losses.empty()) throw std::invalid_argument("ffo_trajectory: empty loss sequence");
  const std::vector<double> alphas = hp.alphas_for(losses.size());

  reset(rec);
  ParamVector tilde = theta;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    ad::Tape tape;
    const std::vector<ad::NodeId> leaves = ad::make_leaves(tape, tilde);
    const ad::NodeId scaled = tape.scale(losses[i](tape, leaves), hp.beta);
    ParamVector g(theta.layout());
    tape.gradient(scaled, leaves, g.values());
    if (rec != nullptr) {
      rec->losses.push_back(tape.val(scaled));
      rec->per_step_grads.push_back(g);
    }
    tilde.axpy(-alphas[i], g);
  }

  FfoResult out{theta, std::move(tilde)};
  ParamVector offset = out.theta_tilde;
  offset -= theta;
  out.theta_next.axpy(hp.gamma, offset);
  fill_pairwise(rec);
  return out;
}

// --- batch-level steps -------------------------------------------------------

namespace {

ad::ScalarFn mean_of_domain_losses(const ModelSpec& spec, std::vector<Batch> batches) {
  return [spec, batches = std::move(batches)](ad::Tape& tape,
                                              std::span<const ad::NodeId> th) {
    std::vector<ad::NodeId> per;
    per.reserve(batches.size());
    for (const Batch& b : batches) per.push_back(build_class_loss(tape, th, spec, b));
    return tape.mean(per);
  };
}

std::vector<int> unique_domain_ids(const Batch& b) {
  std::vector<int> ids(b.domain_ids);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<ad::ScalarFn> class_losses_per_batch(const ModelSpec& spec,
                                                 std::span<const Batch> batches) {
  std::vector<ad::ScalarFn> fns;
  fns.reserve(batches.size());
  for (const Batch& b : batches) fns.push_back(class_loss_fn(spec, b));
  return fns;
}

}  // namespace

ParamVector agg_step(const ModelSpec& spec, std::span<const Batch> batches,
                     const ParamVector& theta) {
  if (batches.empty()) throw std::invalid_argument("agg_step: no batches");
  return ad::gradient(class_loss_fn(spec, concat_batches(batches)), theta);
}

ParamVector mldg_step(const ModelSpec& spec, std::span<const Batch> mtrn_batches,
                      const Batch& mtst_batch, const ParamVector& theta,
                      const HyperParams& hp, GradientRecord* rec) {
  if (mtrn_batches.empty()) throw std::invalid_argument("mldg_step: no meta-train batches");
  if (!mtst_batch.domain_ids.empty()) {
    const std::vector<int> held = unique_domain_ids(mtst_batch);
    for (const Batch& b : mtrn_batches) {
      for (int id : unique_domain_ids(b)) {
        if (std::binary_search(held.begin(), held.end(), id))
          throw std::invalid_argument(
              "mldg_step: meta-test domain also appears among the meta-train batches");
      }
    }
  }
  std::vector<Batch> mtrn(mtrn_batches.begin(), mtrn_batches.end());
  const std::vector<ad::ScalarFn> fns = {mean_of_domain_losses(spec, std::move(mtrn)),
                                         class_loss_fn(spec, mtst_batch)};
  return sequential_meta_gradient(fns, theta, hp, rec);
}

ParamVector s_mldg_step(const ModelSpec& spec, std::span<const Batch> ordered_batches,
                        const ParamVector& theta, const HyperParams& hp,
                        GradientRecord* rec) {
  if (ordered_batches.empty()) throw std::invalid_argument("s_mldg_step: no batches");
  return sequential_meta_gradient(class_losses_per_batch(spec, ordered_batches), theta, hp,
                                  rec);
}

FfoResult ffo_s_mldg_step(const ModelSpec& spec, std::span<const Batch> ordered_batches,
                          const ParamVector& theta, const HyperParams& hp,
                          GradientRecord* rec) {
  if (ordered_batches.empty()) throw std::invalid_argument("ffo_s_mldg_step: no batches");
  return ffo_trajectory(class_losses_per_batch(spec, ordered_batches), theta, hp, rec);
}

// --- undo-bias family --------------------------------------------------------

void UndoBiasModel::validate() const {
  if (per_domain_params.empty())
    throw std::invalid_argument("UndoBiasModel: no per-domain parameters");
  for (const ParamVector& p : per_domain_params)
    if (!p.same_layout(per_domain_params[0]))
      throw std::invalid_argument("UndoBiasModel: parameter layouts differ");
}

double undo_bias_loss(const UndoBiasModel& model,
                      std::span<const ad::ScalarFn> domain_losses, double lambda,
                      PenaltyMode mode, std::vector<ParamVector>* grads) {
  model.validate();
  const std::size_t n = model.num_domains();
  if (domain_losses.size() != n)
    throw std::invalid_argument("undo_bias_loss: need one objective per domain");
  const std::size_t p = model.per_domain_params[0].size();

  ad::Tape tape;
  std::vector<std::vector<ad::NodeId>> leaves(n);
  for (std::size_t i = 0; i < n; ++i)
    leaves[i] = ad::make_leaves(tape, model.per_domain_params[i]);

  std::vector<ad::NodeId> mu(p);
  std::vector<ad::NodeId> column(n);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = leaves[i][j];
    mu[j] = tape.mean(column);
  }

  ad::NodeId total = ad::kNoNode;
  for (std::size_t i = 0; i < n; ++i) {
    const ad::NodeId li = domain_losses[i](tape, leaves[i]);
    total = (total == ad::kNoNode) ? li : tape.add(total, li);
  }
  std::vector<ad::NodeId> diff(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) diff[j] = tape.sub(leaves[i][j], mu[j]);
    const ad::NodeId pen =
        mode == PenaltyMode::SquaredNorm ? tape.squared_norm(diff) : tape.norm(diff);
    total = tape.axpy(total, lambda, pen);
  }

  if (grads != nullptr) {
    std::vector<ad::NodeId> all;
    all.reserve(n * p);
    for (const std::vector<ad::NodeId>& l : leaves) all.insert(all.end(), l.begin(), l.end());
    std::vector<double> flat(n * p);
    tape.gradient(total, all, flat);
    grads->clear();
    grads->reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      ParamVector g(model.per_domain_params[i].layout());
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(i * p),
                flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * p),
                g.values().begin());
      grads->push_back(std::move(g));
    }
  }
  return tape.val(total);
}

void s_undo_bias_step(UndoBiasModel& model, const Permutation& perm,
                      std::span<const ad::ScalarFn> domain_losses, const HyperParams& hp,
                      std::span<OptimState> states) {
  model.validate();
  hp.validate();
  const std::size_t n = model.num_domains();
  if (domain_losses.size() != n)
    throw std::invalid_argument("s_undo_bias_step: need one objective per domain");
  if (states.size() != n)
    throw std::invalid_argument("s_undo_bias_step: need one optimizer state per domain");
  if (perm.size() != n)
    throw std::invalid_argument("s_undo_bias_step: permutation length mismatch");
  std::vector<bool> seen(n, false);
  for (int d : perm) {
    if (d < 0 || static_cast<std::size_t>(d) >= n || seen[static_cast<std::size_t>(d)])
      throw std::invalid_argument("s_undo_bias_step: not a permutation of the domains");
    seen[static_cast<std::size_t>(d)] = true;
  }
  const std::size_t p = model.per_domain_params[0].size();

  ad::Tape tape;
  std::vector<std::vector<ad::NodeId>> leaves(n);
  for (std::size_t i = 0; i < n; ++i)
    leaves[i] = ad::make_leaves(tape, model.per_domain_params[i]);

  const std::size_t d0 = static_cast<std::size_t>(perm[0]);
  ad::NodeId objective = domain_losses[d0](tape, leaves[d0]);
  std::vector<ad::NodeId> path_sum = leaves[d0];
  std::vector<ad::NodeId> diff(p);
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t d = static_cast<std::size_t>(perm[i]);
    objective = tape.add(objective, domain_losses[d](tape, leaves[d]));
    const double inv = 1.0 / static_cast<double>(i);
    for (std::size_t j = 0; j < p; ++j)
      diff[j] = tape.sub(leaves[d][j], tape.scale(path_sum[j], inv));
    objective = tape.axpy(objective, hp.lambda, tape.squared_norm(diff));
    for (std::size_t j = 0; j < p; ++j) path_sum[j] = tape.add(path_sum[j], leaves[d][j]);
  }

  // All gradients are taken at the pre-update parameters; updates then apply
  // simultaneously.
  std::vector<ad::NodeId> all;
  all.reserve(n * p);
  for (const std::vector<ad::NodeId>& l : leaves) all.insert(all.end(), l.begin(), l.end());
  std::vector<double> flat(n * p);
  tape.gradient(objective, all, flat);
  for (std::size_t i = 0; i < n; ++i) {
    ParamVector g(model.per_domain_params[i].layout());
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(i * p),
              flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * p), g.values().begin());
    msgd_update(model.per_domain_params[i], g, states[i], hp);
  }
}

ParamVector undo_inference(const UndoBiasModel& model) {
  model.validate();
  return mean(model.per_domain_params);
}

double undo_bias_loss(const ModelSpec& spec, const UndoBiasModel& model,
                      std::span<const Batch> batches, double lambda, PenaltyMode mode,
                      std::vector<ParamVector>* grads) {
  return undo_bias_loss(model, class_losses_per_batch(spec, batches), lambda, mode, grads);
}

void s_undo_bias_step(const ModelSpec& spec, UndoBiasModel& model, const Permutation& perm,
                      std::span<const Batch> batches, const HyperParams& hp,
                      std::span<OptimState> states) {
  s_undo_bias_step(model, perm, class_losses_per_batch(spec, batches), hp, states);
}

// --- training driver -----------------------------------------------------------

namespace {

void warn_ignored_hyperparams(const TrainConfig& cfg) {
  const HyperParams defaults;
  auto warn = [&](const char* field) {
    std::cerr << "seqdg: warning: " << field << " is ignored by method '"
              << method_name(cfg.method) << "'\n";
  };
  const HyperParams& hp = cfg.hp;
  const bool sequential = cfg.method == Method::Mldg || cfg.method == Method::SMldg ||
                          cfg.method == Method::FoSMldg || cfg.method == Method::FfoSMldg;
  if (!sequential) {
    if (hp.alpha != defaults.alpha) warn("alpha");
    if (hp.beta != defaults.beta) warn("beta");
    if (hp.second_order != defaults.second_order) warn("second_order");
  }
  if (!is_undo_family(cfg.method) && hp.lambda != defaults.lambda) warn("lambda");
}

}  // namespace

MethodRunner::MethodRunner(const TrainConfig& cfg, const ParamVector& theta0,
                           std::size_t num_sources, Rng rng)
    : method_(cfg.method),
      spec_(cfg.model),
      hp_(cfg.hp),
      aggregate_mtrain_(cfg.aggregate_mtrain),
      undo_mode_(cfg.undo_squared_penalty ? PenaltyMode::SquaredNorm : PenaltyMode::Norm),
      n_src_(num_sources),
      perm_rng_(rng.fork(0x7065726d)),
      meta_rng_(rng.fork(0x6d747374)),
      theta_(theta0) {
  spec_.validate();
  hp_.validate();
  if (n_src_ < 1) throw std::invalid_argument("MethodRunner: no source domains");
  if (method_ == Method::Mldg && n_src_ < 2)
    throw std::invalid_argument(
        "MethodRunner: mldg needs at least two source domains for a disjoint meta-test");
  if (is_undo_family(method_)) {
    undo_.per_domain_params.assign(n_src_, theta0);
    undo_states_.resize(n_src_);
  }
}

void MethodRunner::step(std::span<const Batch> batches) {
  if (batches.size() != n_src_)
    throw std::invalid_argument("MethodRunner::step: need one batch per source domain");
  switch (method_) {
    case Method::Agg: {
      const ParamVector g = agg_step(spec_, batches, theta_);
      msgd_update(theta_, g, state_, hp_);
      break;
    }
    case Method::Mldg: {
      const std::size_t t = static_cast<std::size_t>(meta_rng_.index(n_src_));
      std::vector<Batch> mtrn;
      mtrn.reserve(n_src_ - 1);
      for (std::size_t k = 0; k < n_src_; ++k)
        if (k != t) mtrn.push_back(batches[k]);
      if (aggregate_mtrain_) {
        Batch pooled = concat_batches(mtrn);
        mtrn.assign(1, std::move(pooled));
      }
      const ParamVector g = mldg_step(spec_, mtrn, batches[t], theta_, hp_);
      msgd_update(theta_, g, state_, hp_);
      break;
    }
    case Method::SMldg:
    case Method::FoSMldg: {
      const Permutation perm = sample_permutation(static_cast<int>(n_src_), perm_rng_);
      std::vector<Batch> ordered;
      ordered.reserve(n_src_);
      for (int d : perm) ordered.push_back(batches[static_cast<std::size_t>(d)]);
      HyperParams step_hp = hp_;
      step_hp.second_order = method_ == Method::SMldg && hp_.second_order;
      const ParamVector g = s_mldg_step(spec_, ordered, theta_, step_hp);
      msgd_update(theta_, g, state_, hp_);
      break;
    }
    case Method::FfoSMldg: {
      const Permutation perm = sample_permutation(static_cast<int>(n_src_), perm_rng_);
      std::vector<Batch> ordered;
      ordered.reserve(n_src_);
      for (int d : perm) ordered.push_back(batches[static_cast<std::size_t>(d)]);
      FfoResult r = ffo_s_mldg_step(spec_, ordered, theta_, hp_);
      theta_ = std::move(r.theta_next);
      break;
    }
    case Method::Undo: {
      std::vector<ParamVector> grads;
      undo_bias_loss(spec_, undo_, batches, hp_.lambda, undo_mode_, &grads);
      for (std::size_t k = 0; k < n_src_; ++k)
        msgd_update(undo_.per_domain_params[k], grads[k], undo_states_[k], hp_);
      break;
    }
    case Method::SUndo: {
      const Permutation perm = sample_permutation(static_cast<int>(n_src_), perm_rng_);
      s_undo_bias_step(spec_, undo_, perm, batches, hp_, undo_states_);
      break;
    }
  }
}

ParamVector MethodRunner::inference_params() const {
  return is_undo_family(method_) ? undo_inference(undo_) : theta_;
}

const UndoBiasModel* MethodRunner::undo() const {
  return is_undo_family(method_) ? &undo_ : nullptr;
}

ParamVector& MethodRunner::params() {
  if (is_undo_family(method_))
    throw std::logic_error("MethodRunner::params: undo-family runners keep per-domain vectors");
  return theta_;
}

TrainResult train(const TrainConfig& cfg, const DomainSet& data, int held_out) {
  cfg.model.validate();
  cfg.hp.validate();
  if (cfg.iters < 0) throw std::invalid_argument("train: negative iteration count");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
  if (data.num_domains() < 2) throw std::invalid_argument("train: need at least two domains");
  if (held_out < 0 || static_cast<std::size_t>(held_out) >= data.num_domains())
    throw std::invalid_argument("train: held-out id outside the domain set");
  if (cfg.model.input_dim() != data.feature_dim())
    throw std::invalid_argument("train: model input width does not match the dataset");
  if (cfg.model.num_classes() != data.num_classes)
    throw std::invalid_argument("train: model class count does not match the dataset");
  warn_ignored_hyperparams(cfg);

  // One stream per (seed, fold): splits, init, and batch order all derive
  // from fold_seed so folds are independent and reproducible.
  const std::uint64_t fold_seed =
      mix64(cfg.seed ^ mix64(0x666f6c64ull + static_cast<std::uint64_t>(held_out)));

  std::vector<int> sources;
  for (std::size_t i = 0; i < data.num_domains(); ++i)
    if (static_cast<int>(i) != held_out) sources.push_back(static_cast<int>(i));
  const std::size_t n_src = sources.size();

  std::vector<Domain> train_side(data.num_domains());
  std::vector<Domain> test_side(data.num_domains());
  for (std::size_t i = 0; i < data.num_domains(); ++i) {
    auto [tr, te] = split_domain(data.domains[i], cfg.train_frac,
                                 mix64(fold_seed ^ (0x73706c6974ull + i)));
    train_side[i] = std::move(tr);
    test_side[i] = std::move(te);
  }

  // Equal batch sizes across sources keep the uniform domain weighting exact.
  std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);
  for (int s : sources)
    batch_size = std::min(batch_size, train_side[static_cast<std::size_t>(s)].size());

  Rng master(fold_seed);
  std::vector<MinibatchSampler> samplers;
  samplers.reserve(n_src);
  for (int s : sources)
    samplers.emplace_back(train_side[static_cast<std::size_t>(s)], batch_size,
                          master.fork(static_cast<std::uint64_t>(s)));

  const ParamVector theta0 = init_params(cfg.model, fold_seed);
  MethodRunner runner(cfg, theta0, n_src, master.fork(0x72756e));

  auto draw_batches = [&]() {
    std::vector<Batch> batches(n_src);
    for (std::size_t k = 0; k < n_src; ++k) batches[k] = samplers[k].next();
    // Leave-one-out hygiene: no training batch may carry the held-out id.
    for (const Batch& b : batches)
      for (int id : b.domain_ids)
        if (id == held_out)
          throw std::logic_error("held-out domain leaked into a training batch");
    return batches;
  };

  TrainResult result;
  auto log_row = [&](int done, std::span<const Batch> batches) {
    const ParamVector pi = runner.inference_params();
    double train_loss = 0.0;
    for (const Batch& b : batches) train_loss += class_loss_value(cfg.model, pi, b);
    train_loss /= static_cast<double>(batches.size());
    const Domain& eval = test_side[static_cast<std::size_t>(held_out)];
    const double acc = accuracy(cfg.model, pi, eval.features, eval.labels);
    double align = 0.0;
    if (n_src >= 2) {
      std::vector<ParamVector> gs;
      gs.reserve(n_src);
      for (const Batch& b : batches)
        gs.push_back(ad::gradient(class_loss_fn(cfg.model, b), pi));
      const Matrix m = pairwise_products(gs);
      double sum = 0.0;
      int pairs = 0;
      for (std::size_t i = 0; i < n_src; ++i)
        for (std::size_t j = i + 1; j < n_src; ++j) {
          sum += m(i, j);
          ++pairs;
        }
      align = sum / pairs;
    }
    result.metrics.push_back(MetricsRow{done, train_loss, acc, align});
  };

  for (int it = 0; it < cfg.iters; ++it) {
    const std::vector<Batch> batches = draw_batches();
    if (it % cfg.eval_every == 0) log_row(it, batches);
    runner.step(batches);
  }
  const std::vector<Batch> final_batches = draw_batches();
  log_row(cfg.iters, final_batches);

  result.params = runner.inference_params();
  if (const UndoBiasModel* u = runner.undo()) result.undo_model = *u;
  return result;
}

}  // namespace seqdg
