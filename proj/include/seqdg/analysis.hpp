#pragma once
// analysis.hpp — numerical verification and instrumentation.
//
// These are the observers that check the library's update rules against
// their expansions: the quadratic remainder of the inner-update objective,
// the permutation-averaged fast-first-order gradient against its curvature
// expansion, pairwise gradient alignment, a domain-distinguishability probe,
// and penultimate-feature export. Everything here treats parameters as
// read-only; the probe owns its own copy.

#include <filesystem>
#include <vector>

#include "seqdg/algorithms.hpp"

namespace seqdg {

// l2(theta - alpha * grad l1) - [l2(theta) - alpha * grad l1 . grad l2]:
// what remains of the shifted loss after removing its first-order expansion.
// O(alpha^2) on smooth objectives; exactly the curvature term on quadratics.
double taylor_residual(const ad::ScalarFn& l1, const ad::ScalarFn& l2,
                       const ParamVector& theta, double alpha);
double taylor_residual(const ModelSpec& spec, const ParamVector& theta, const Batch& batch1,
                       const Batch& batch2, double alpha);

// Symmetric matrix of grad l_i . grad l_j; each pair computed once and
// mirrored, diagonal = squared gradient norms.
Matrix grad_alignment(std::span<const ad::ScalarFn> losses, const ParamVector& theta);
Matrix grad_alignment(const ModelSpec& spec, const ParamVector& theta,
                      std::span<const Batch> batches);

struct ExpectationCheck {
  ParamVector lhs;  // permutation-averaged sum of inner-loop gradients
  ParamVector rhs;  // g1 + g2 - (alpha/2) * (H1 g2 + H2 g1), all at theta
  double gap;       // ||lhs - rhs|| / ||rhs||
};

// Averages the actual two-loss inner sequential pass over both orderings
// (batches held fixed, so the permutation is the only averaged variable) and
// compares against the second-order expansion around theta.
ExpectationCheck ffo_expectation_check(const ad::ScalarFn& l1, const ad::ScalarFn& l2,
                                       const ParamVector& theta, double alpha);
ExpectationCheck ffo_expectation_check(const ModelSpec& spec, const ParamVector& theta,
                                       const Batch& batch1, const Batch& batch2,
                                       double alpha);

// --- domain-distinguishability probe ----------------------------------------

struct ProbeSchedule {
  int phase1_iters = 600;  // domain-classifier warm-up
  int phase2_iters = 600;  // category training with the probed method
  int log_every = 1;

  void validate() const;
};

struct ProbePoint {
  int iter;   // global iteration index, 0-based
  int phase;  // 1 or 2
  double domain_loss;
  double class_loss;
};

struct ProbeResult {
  std::vector<ProbePoint> log;
  ParamVector params;
};

// Phase 1 trains the domain-prediction objective (all parameters move, so the
// trunk becomes maximally domain-informative). Phase 2 switches the trunk to
// the configured method on the category objective while the domain head alone
// keeps co-training, so its loss tracks how much domain information survives
// in the features. Uses every domain of the set; spec.aux_domain_head must
// equal the domain count. Undo-family methods are rejected (the probe needs a
// single shared parameter vector).
ProbeResult domain_probe(const DomainSet& data, const ModelSpec& spec,
                         const ProbeSchedule& schedule, Method method,
                         const HyperParams& hp, int batch_size, std::uint64_t seed);

void write_probe_csv(const ProbeResult& probe, const std::filesystem::path& path);

// Penultimate-layer features of every sample, CSV `f1,...,fk,class,domain`.
void export_embeddings(const ModelSpec& spec, const ParamVector& theta,
                       const DomainSet& data, const std::filesystem::path& path);

}  // namespace seqdg
