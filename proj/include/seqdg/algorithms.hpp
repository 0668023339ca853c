#pragma once
// algorithms.hpp — the sequential domain-generalization training rules.
//
// Every *_step function is pure in (parameters, losses, hyperparameters):
// it consumes a set of per-domain objectives and returns either a
// meta-gradient (fed to msgd_update by the caller) or updated parameters,
// plus an optional GradientRecord describing the inner trajectory.
//
// Objectives are passed as ScalarFns so the same machinery drives MLP
// losses, quadratic surrogates, and the toy problems in the verification
// suite. Batch-level wrappers over a ModelSpec are provided alongside.

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "seqdg/autodiff.hpp"
#include "seqdg/domains.hpp"
#include "seqdg/model.hpp"
#include "seqdg/param_vector.hpp"

namespace seqdg {

enum class Method { Agg, Mldg, SMldg, FoSMldg, FfoSMldg, Undo, SUndo };

Method parse_method(std::string_view name);  // "agg", "mldg", "s_mldg", ...
std::string_view method_name(Method m);
bool is_undo_family(Method m);

struct HyperParams {
  // Inner step sizes, one per inner update; a single entry replicates to
  // whatever length the trajectory needs.
  std::vector<double> alpha{0.1};
  double beta = 1.0;    // weight of downstream (meta-test) losses
  double gamma = 0.01;  // meta step size
  double lambda = 1.0;  // parameter-coherence strength (undo family)
  // Coefficients of the original two-term undo objective; only the
  // equivalence analysis consumes them.
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double momentum = 0.9;
  double weight_decay = 0.00005;
  // Full meta-gradient (backpropagate through inner updates) vs first-order
  // (inner gradients frozen with stop_gradient semantics).
  bool second_order = true;
  // Literal sequential objective: every inner step restarts from theta with
  // the gradients of all previous losses taken at theta. The default follows
  // the accumulated-loss recursion instead; see s_mldg_step.
  bool eq3_strict = false;

  // Exactly `needed` step sizes: pass-through when the list already has that
  // many, replication when it has one, error otherwise.
  std::vector<double> alphas_for(std::size_t needed) const;
  void validate() const;
};

struct GradientRecord {
  std::vector<double> losses;                // loss value at each trajectory step
  std::vector<ParamVector> per_step_grads;   // direct gradient of each step's loss
  Matrix pairwise_inner_products;            // g_i . g_j, symmetric
};

struct OptimState {
  ParamVector velocity;  // zero-initialized on first use
};

// v' = momentum * v + g + weight_decay * theta;  theta' = theta - gamma * v'.
void msgd_update(ParamVector& theta, const ParamVector& g, OptimState& state,
                 const HyperParams& hp);

// --- generic trajectory cores ---------------------------------------------

// Accumulated-loss recursion: L <- loss[0](theta); then for i = 1..N-1,
// theta_i = theta - alpha_i * dL/dtheta and L += beta * loss[i](theta_i).
// Returns dL/dtheta. With second_order the inner gradients stay on the tape
// and are differentiated through; without it they are frozen constants.
// eq3_strict instead sets theta_i = theta - alpha_i * sum_{j<i} grad
// loss[j](theta), every gradient taken at the original theta.
ParamVector sequential_meta_gradient(std::span<const ad::ScalarFn> losses,
                                     const ParamVector& theta, const HyperParams& hp,
                                     GradientRecord* record = nullptr);

struct FfoResult {
  ParamVector theta_next;   // theta + gamma * (theta_tilde - theta)
  ParamVector theta_tilde;  // end of the inner sequential pass
};

// Plain sequential SGD through the losses: for each i, g_i = grad of
// (beta * loss[i]) at theta_tilde, theta_tilde -= alpha_i * g_i. The offset
// theta_tilde - theta acts as the meta-gradient.
FfoResult ffo_trajectory(std::span<const ad::ScalarFn> losses, const ParamVector& theta,
                         const HyperParams& hp, GradientRecord* record = nullptr);

// --- batch-level steps ------------------------------------------------------

// Gradient of the mean class loss over the union of the batches.
ParamVector agg_step(const ModelSpec& spec, std::span<const Batch> batches,
                     const ParamVector& theta);

// Meta-train on the union of mtrn batches, meta-test on mtst after one inner
// step. mtst's domain must not appear among the meta-train batches.
ParamVector mldg_step(const ModelSpec& spec, std::span<const Batch> mtrn_batches,
                      const Batch& mtst_batch, const ParamVector& theta,
                      const HyperParams& hp, GradientRecord* record = nullptr);

// Sequential meta-gradient over the batches in the given order.
ParamVector s_mldg_step(const ModelSpec& spec, std::span<const Batch> ordered_batches,
                        const ParamVector& theta, const HyperParams& hp,
                        GradientRecord* record = nullptr);

FfoResult ffo_s_mldg_step(const ModelSpec& spec, std::span<const Batch> ordered_batches,
                          const ParamVector& theta, const HyperParams& hp,
                          GradientRecord* record = nullptr);

// --- undo-bias family -------------------------------------------------------

struct UndoBiasModel {
  std::vector<ParamVector> per_domain_params;

  std::size_t num_domains() const { return per_domain_params.size(); }
  void validate() const;  // non-empty, shared layout
};

enum class PenaltyMode { Norm, SquaredNorm };

// sum_i loss[i](theta_i) + lambda * sum_i penalty(theta_i - mean_j theta_j).
// Returns the value; when grads is non-null it receives d total / d theta_i.
double undo_bias_loss(const UndoBiasModel& model, std::span<const ad::ScalarFn> domain_losses,
                      double lambda, PenaltyMode mode,
                      std::vector<ParamVector>* grads = nullptr);

// Sequential variant: walks the permutation, penalizing each parameter's
// squared distance to the running mean of the parameters visited before it,
// then applies one M-SGD step per domain (gradients reach earlier-path
// parameters through the running means). states must have one entry per
// domain.
void s_undo_bias_step(UndoBiasModel& model, const Permutation& perm,
                      std::span<const ad::ScalarFn> domain_losses, const HyperParams& hp,
                      std::span<OptimState> states);

// Element-wise mean of the per-domain parameters.
ParamVector undo_inference(const UndoBiasModel& model);

// Batch-level conveniences: one class-loss objective per batch, one batch per
// domain, in domain order.
double undo_bias_loss(const ModelSpec& spec, const UndoBiasModel& model,
                      std::span<const Batch> batches, double lambda, PenaltyMode mode,
                      std::vector<ParamVector>* grads = nullptr);
void s_undo_bias_step(const ModelSpec& spec, UndoBiasModel& model, const Permutation& perm,
                      std::span<const Batch> batches, const HyperParams& hp,
                      std::span<OptimState> states);

// --- training driver --------------------------------------------------------

struct TrainConfig {
  Method method = Method::Agg;
  ModelSpec model;
  HyperParams hp;
  int iters = 1000;
  int batch_size = 32;
  int eval_every = 100;
  std::uint64_t seed = 0;
  double train_frac = 0.7;  // per-domain train/test split
  // Meta-train minibatching for mldg: one pooled union batch instead of one
  // batch per meta-train domain.
  bool aggregate_mtrain = false;
  bool undo_squared_penalty = false;
};

struct MetricsRow {
  int iter;                 // completed iterations at logging time
  double train_loss;        // mean class loss over this iteration's batches
  double holdout_accuracy;  // on the held-out domain's test split
  double alignment_mean;    // mean off-diagonal pairwise gradient product
};

struct TrainResult {
  ParamVector params;  // inference parameters (mean over domains for undo)
  std::optional<UndoBiasModel> undo_model;
  std::vector<MetricsRow> metrics;
};

// Stateful per-method update engine shared by the training driver and the
// domain probe: owns the parameters, optimizer state, and permutation stream,
// and applies one update per call given one batch per source domain (in a
// fixed source order).
class MethodRunner {
 public:
  // Uses cfg's method, model, hp, aggregate_mtrain, and undo_squared_penalty.
  MethodRunner(const TrainConfig& cfg, const ParamVector& theta0, std::size_t num_sources,
               Rng rng);

  void step(std::span<const Batch> batches);
  ParamVector inference_params() const;  // mean over domains for the undo family
  const UndoBiasModel* undo() const;     // null outside the undo family
  // Direct handle on the shared parameter vector, for callers that co-train
  // an auxiliary objective between steps. Undo-family runners have no single
  // vector and refuse.
  ParamVector& params();

 private:
  Method method_;
  ModelSpec spec_;
  HyperParams hp_;
  bool aggregate_mtrain_;
  PenaltyMode undo_mode_;
  std::size_t n_src_;
  Rng perm_rng_;
  Rng meta_rng_;
  ParamVector theta_;
  OptimState state_;
  UndoBiasModel undo_;
  std::vector<OptimState> undo_states_;
};

// Leave-one-out training: sources are every domain except held_out, each
// split train/test by train_frac; held-out accuracy is measured on the
// held-out domain's test split, which never contributes a training batch.
TrainResult train(const TrainConfig& cfg, const DomainSet& data, int held_out);

}  // namespace seqdg
