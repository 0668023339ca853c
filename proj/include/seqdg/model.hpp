#pragma once
// model.hpp — small MLP classifiers expressed as tape graphs.
//
// The same network is used three ways: as a differentiable graph (training,
// meta-gradients), as a plain numeric forward pass (accuracy, embeddings),
// and through an optional auxiliary head that predicts which domain a sample
// came from. Parameters live in a ParamVector whose layout is derived from
// the ModelSpec, so optimizer code never needs to know the architecture.

#include <optional>
#include <span>
#include <vector>

#include "seqdg/autodiff.hpp"
#include "seqdg/matrix.hpp"
#include "seqdg/param_vector.hpp"

namespace seqdg {

struct ModelSpec {
  // layer_sizes = [input_dim, hidden..., num_classes]; at least two entries.
  std::vector<int> layer_sizes;
  // Normalize each hidden layer's pre-activations with the statistics of the
  // current batch (no running averages; evaluation uses the evaluated
  // batch's own statistics too).
  bool batchnorm = false;
  // When > 0, adds a linear head on the penultimate activations predicting
  // one of this many domain ids.
  int aux_domain_head = 0;

  int input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
  // Width the auxiliary head reads: the last hidden layer, or the raw input
  // when the network is linear.
  int penultimate_dim() const {
    return layer_sizes.size() >= 3 ? layer_sizes[layer_sizes.size() - 2] : layer_sizes[0];
  }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

  void validate() const;
};

// One minibatch (or a whole split). domain_ids may be empty when no
// domain-prediction loss will be asked of it.
struct Batch {
  Matrix features;              // n x input_dim
  std::vector<int> labels;      // class ids in [0, num_classes)
  std::vector<int> domain_ids;  // optional, one per sample

  std::size_t size() const { return labels.size(); }
};

Batch concat_batches(std::span<const Batch> parts);

// Segment layout: per layer l, "w{l}" (in*out, row-major by input) and
// "b{l}" (out); hidden layers additionally get "bn_g{l}" / "bn_b{l}" when
// batchnorm is on; the auxiliary head contributes "hw" / "hb" at the end.
LayoutPtr model_layout(const ModelSpec& spec);

// Weights uniform on +/- sqrt(6 / (fan_in + fan_out)), biases zero, batchnorm
// gains one and shifts zero. Deterministic in (spec, seed).
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

// --- differentiable graphs ----------------------------------------------
// Mean softmax cross-entropy of the class logits over the batch.
ad::NodeId build_class_loss(ad::Tape& tape, std::span<const ad::NodeId> theta,
                            const ModelSpec& spec, const Batch& batch);

// Mean cross-entropy of the auxiliary head against batch.domain_ids.
// Requires spec.aux_domain_head > 0 and per-sample domain ids.
ad::NodeId build_domain_head_loss(ad::Tape& tape, std::span<const ad::NodeId> theta,
                                  const ModelSpec& spec, const Batch& batch);

// Value-capturing closures over the builders, for APIs that take ScalarFns.
ad::ScalarFn class_loss_fn(const ModelSpec& spec, Batch batch);
ad::ScalarFn domain_head_loss_fn(const ModelSpec& spec, Batch batch);

// --- numeric forward ------------------------------------------------------
Matrix class_logits(const ModelSpec& spec, const ParamVector& theta, const Matrix& x);
Matrix penultimate_activations(const ModelSpec& spec, const ParamVector& theta,
                               const Matrix& x);
// Argmax accuracy; ties resolve to the lowest class index.
double accuracy(const ModelSpec& spec, const ParamVector& theta, const Matrix& x,
                std::span<const int> labels);
double class_loss_value(const ModelSpec& spec, const ParamVector& theta, const Batch& batch);

}  // namespace seqdg
