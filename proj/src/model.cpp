#include "seqdg/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "seqdg/rng.hpp"

namespace seqdg {

namespace {

// Batch-statistics epsilon inside sqrt(var + eps); keeps a constant batch
// (variance 0) finite without visibly distorting unit variance.
constexpr double kBnEps = 1e-8;

void check_batch(const ModelSpec& spec, const Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("model: empty batch");
  if (batch.features.rows() != batch.size())
    throw std::invalid_argument("model: feature row count does not match labels");
  if (batch.features.cols() != static_cast<std::size_t>(spec.input_dim()))
    throw std::invalid_argument("model: feature dimension does not match input layer");
  for (int y : batch.labels)
    if (y < 0 || y >= spec.num_classes())
      throw std::invalid_argument("model: class label out of range");
}

std::span<const ad::NodeId> seg_nodes(std::span<const ad::NodeId> theta, const Layout& layout,
                                      const std::string& name) {
  const Segment& s = layout.segment(name);
  return theta.subspan(s.offset, s.size);
}

// Mean softmax cross-entropy from per-sample logit nodes. The log-sum-exp is
// shifted by the (constant) max logit, which is exact at every derivative
// order since the shift cancels.
ad::NodeId ce_mean(ad::Tape& t, const std::vector<std::vector<ad::NodeId>>& logits,
                   std::span<const int> labels) {
  std::vector<ad::NodeId> per_sample(logits.size());
  std::vector<ad::NodeId> expd;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const auto& z = logits[j];
    double m = t.val(z[0]);
    for (ad::NodeId id : z) m = std::max(m, t.val(id));
    expd.clear();
    for (ad::NodeId id : z) expd.push_back(t.exp(t.add_const(id, -m)));
    ad::NodeId lse = t.add_const(t.log(t.sum(expd)), m);
    per_sample[j] = t.sub(lse, z[static_cast<std::size_t>(labels[j])]);
  }
  return t.mean(per_sample);
}

// Activations layer by layer. Returns the logits (last layer, no
// activation); penult_out, when non-null, receives the inputs of the last
// layer (post-activation, post-batchnorm).
std::vector<std::vector<ad::NodeId>> forward_trunk(
    ad::Tape& t, std::span<const ad::NodeId> theta, const Layout& layout,
    const ModelSpec& spec, const Matrix& x,
    std::vector<std::vector<ad::NodeId>>* penult_out) {
  const std::size_t n = x.rows();
  std::vector<std::vector<ad::NodeId>> h;  // empty while inputs are constants

  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    const bool hidden = l + 1 < spec.num_layers();
    auto w = seg_nodes(theta, layout, "w" + std::to_string(l));
    auto b = seg_nodes(theta, layout, "b" + std::to_string(l));

    if (penult_out && !hidden) {
      if (l == 0) {
        // Linear model: the head reads the raw features.
        penult_out->assign(n, {});
        for (std::size_t j = 0; j < n; ++j)
          for (int i = 0; i < in; ++i) (*penult_out)[j].push_back(t.constant(x(j, i)));
      } else {
        *penult_out = h;
      }
    }

    std::vector<std::vector<ad::NodeId>> z(n, std::vector<ad::NodeId>(out));
    for (std::size_t j = 0; j < n; ++j) {
      for (int k = 0; k < out; ++k) {
        ad::NodeId acc = b[k];
        if (l == 0) {
          for (int i = 0; i < in; ++i) acc = t.axpy(acc, x(j, i), w[i * out + k]);
        } else {
          for (int i = 0; i < in; ++i) acc = t.add(acc, t.mul(h[j][i], w[i * out + k]));
        }
        z[j][k] = acc;
      }
    }

    if (hidden) {
      if (spec.batchnorm) {
        auto g = seg_nodes(theta, layout, "bn_g" + std::to_string(l));
        auto be = seg_nodes(theta, layout, "bn_b" + std::to_string(l));
        std::vector<ad::NodeId> col(n), dev(n);
        for (int k = 0; k < out; ++k) {
          for (std::size_t j = 0; j < n; ++j) col[j] = z[j][k];
          ad::NodeId mu = t.mean(col);
          for (std::size_t j = 0; j < n; ++j) dev[j] = t.sub(col[j], mu);
          std::vector<ad::NodeId> sq(n);
          for (std::size_t j = 0; j < n; ++j) sq[j] = t.mul(dev[j], dev[j]);
          ad::NodeId sd = t.sqrt(t.add_const(t.mean(sq), kBnEps));
          for (std::size_t j = 0; j < n; ++j)
            z[j][k] = t.add(t.mul(t.div(dev[j], sd), g[k]), be[k]);
        }
      }
      for (std::size_t j = 0; j < n; ++j)
        for (int k = 0; k < out; ++k) z[j][k] = t.relu(z[j][k]);
    }
    h = std::move(z);
  }
  return h;
}

}  // namespace

void ModelSpec::validate() const {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("ModelSpec: need at least input and output layers");
  for (int s : layer_sizes)
    if (s < 1) throw std::invalid_argument("ModelSpec: layer sizes must be positive");
  if (num_classes() < 2) throw std::invalid_argument("ModelSpec: need at least two classes");
  if (aux_domain_head < 0)
    throw std::invalid_argument("ModelSpec: domain head size cannot be negative");
  if (aux_domain_head == 1)
    throw std::invalid_argument("ModelSpec: a one-domain head cannot discriminate anything");
}

Batch concat_batches(std::span<const Batch> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_batches: no batches");
  std::size_t total = 0;
  const std::size_t cols = parts[0].features.cols();
  bool have_domains = true;
  for (const Batch& p : parts) {
    if (p.features.cols() != cols)
      throw std::invalid_argument("concat_batches: feature dimensions differ");
    total += p.size();
    have_domains = have_domains && p.domain_ids.size() == p.size();
  }
  Batch out;
  out.features = Matrix(total, cols);
  out.labels.reserve(total);
  std::size_t r = 0;
  for (const Batch& p : parts) {
    for (std::size_t j = 0; j < p.size(); ++j, ++r)
      std::copy(p.features.row(j).begin(), p.features.row(j).end(), out.features.row(r).begin());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    if (have_domains)
      out.domain_ids.insert(out.domain_ids.end(), p.domain_ids.begin(), p.domain_ids.end());
  }
  return out;
}

LayoutPtr model_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, std::size_t>> sizes;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const auto in = static_cast<std::size_t>(spec.layer_sizes[l]);
    const auto out = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
    sizes.emplace_back("w" + std::to_string(l), in * out);
    sizes.emplace_back("b" + std::to_string(l), out);
    if (spec.batchnorm && l + 1 < spec.num_layers()) {
      sizes.emplace_back("bn_g" + std::to_string(l), out);
      sizes.emplace_back("bn_b" + std::to_string(l), out);
    }
  }
  if (spec.aux_domain_head > 0) {
    sizes.emplace_back("hw", static_cast<std::size_t>(spec.penultimate_dim()) *
                                 static_cast<std::size_t>(spec.aux_domain_head));
    sizes.emplace_back("hb", static_cast<std::size_t>(spec.aux_domain_head));
  }
  return make_layout(std::move(sizes));
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector p(model_layout(spec));
  Rng rng(seed, /*stream=*/0x696e6974);
  auto fill_uniform = [&](std::span<double> w, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : w) v = rng.uniform(-bound, bound);
  };
  for (int l = 0; l < spec.num_layers(); ++l) {
    fill_uniform(p.segment("w" + std::to_string(l)), spec.layer_sizes[l],
                 spec.layer_sizes[l + 1]);
    if (spec.batchnorm && l + 1 < spec.num_layers()) {
      auto g = p.segment("bn_g" + std::to_string(l));
      std::fill(g.begin(), g.end(), 1.0);
    }
  }
  if (spec.aux_domain_head > 0)
    fill_uniform(p.segment("hw"), spec.penultimate_dim(), spec.aux_domain_head);
  return p;
}

ad::NodeId build_class_loss(ad::Tape& tape, std::span<const ad::NodeId> theta,
                            const ModelSpec& spec, const Batch& batch) {
  check_batch(spec, batch);
  LayoutPtr layout = model_layout(spec);
  if (theta.size() != layout->size())
    throw std::invalid_argument("build_class_loss: parameter count does not match spec");
  auto logits = forward_trunk(tape, theta, *layout, spec, batch.features, nullptr);
  return ce_mean(tape, logits, batch.labels);
}

ad::NodeId build_domain_head_loss(ad::Tape& tape, std::span<const ad::NodeId> theta,
                                  const ModelSpec& spec, const Batch& batch) {
  check_batch(spec, batch);
  if (spec.aux_domain_head <= 0)
    throw std::invalid_argument("build_domain_head_loss: model has no domain head");
  if (batch.domain_ids.size() != batch.size())
    throw std::invalid_argument("build_domain_head_loss: batch lacks per-sample domain ids");
  for (int d : batch.domain_ids)
    if (d < 0 || d >= spec.aux_domain_head)
      throw std::invalid_argument("build_domain_head_loss: domain id out of range");

  LayoutPtr layout = model_layout(spec);
  if (theta.size() != layout->size())
    throw std::invalid_argument("build_domain_head_loss: parameter count does not match spec");

  std::vector<std::vector<ad::NodeId>> penult;
  forward_trunk(tape, theta, *layout, spec, batch.features, &penult);

  auto hw = seg_nodes(theta, *layout, "hw");
  auto hb = seg_nodes(theta, *layout, "hb");
  const int pd = spec.penultimate_dim();
  const int nd = spec.aux_domain_head;
  std::vector<std::vector<ad::NodeId>> logits(batch.size(), std::vector<ad::NodeId>(nd));
  for (std::size_t j = 0; j < batch.size(); ++j)
    for (int k = 0; k < nd; ++k) {
      ad::NodeId acc = hb[k];
      for (int i = 0; i < pd; ++i) acc = tape.add(acc, tape.mul(penult[j][i], hw[i * nd + k]));
      logits[j][k] = acc;
    }
  return ce_mean(tape, logits, batch.domain_ids);
}

ad::ScalarFn class_loss_fn(const ModelSpec& spec, Batch batch) {
  return [spec, batch = std::move(batch)](ad::Tape& t, std::span<const ad::NodeId> theta) {
    return build_class_loss(t, theta, spec, batch);
  };
}

ad::ScalarFn domain_head_loss_fn(const ModelSpec& spec, Batch batch) {
  return [spec, batch = std::move(batch)](ad::Tape& t, std::span<const ad::NodeId> theta) {
    return build_domain_head_loss(t, theta, spec, batch);
  };
}

// Numeric twin of forward_trunk; same arithmetic, no tape.
static Matrix forward_numeric(const ModelSpec& spec, const ParamVector& theta, const Matrix& x,
                              bool stop_at_penultimate) {
  spec.validate();
  if (x.cols() != static_cast<std::size_t>(spec.input_dim()))
    throw std::invalid_argument("model: feature dimension does not match input layer");
  if (!theta.layout() || *theta.layout() != *model_layout(spec))
    throw std::invalid_argument("model: parameter layout does not match spec");

  const std::size_t n = x.rows();
  Matrix h = x;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    const bool hidden = l + 1 < spec.num_layers();
    if (stop_at_penultimate && !hidden) return h;

    auto w = theta.segment("w" + std::to_string(l));
    auto b = theta.segment("b" + std::to_string(l));
    Matrix z(n, static_cast<std::size_t>(out));
    for (std::size_t j = 0; j < n; ++j)
      for (int k = 0; k < out; ++k) {
        double acc = b[k];
        for (int i = 0; i < in; ++i) acc += h(j, static_cast<std::size_t>(i)) * w[i * out + k];
        z(j, static_cast<std::size_t>(k)) = acc;
      }

    if (hidden) {
      if (spec.batchnorm) {
        auto g = theta.segment("bn_g" + std::to_string(l));
        auto be = theta.segment("bn_b" + std::to_string(l));
        for (int k = 0; k < out; ++k) {
          double mu = 0.0;
          for (std::size_t j = 0; j < n; ++j) mu += z(j, k);
          mu /= static_cast<double>(n);
          double var = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = z(j, k) - mu;
            var += d * d;
          }
          var /= static_cast<double>(n);
          const double sd = std::sqrt(var + kBnEps);
          for (std::size_t j = 0; j < n; ++j)
            z(j, k) = (z(j, k) - mu) / sd * g[k] + be[k];
        }
      }
      for (std::size_t j = 0; j < n; ++j)
        for (int k = 0; k < out; ++k) z(j, k) = std::max(z(j, k), 0.0);
    }
    h = std::move(z);
  }
  return h;
}

Matrix class_logits(const ModelSpec& spec, const ParamVector& theta, const Matrix& x) {
  return forward_numeric(spec, theta, x, false);
}

Matrix penultimate_activations(const ModelSpec& spec, const ParamVector& theta,
                               const Matrix& x) {
  return forward_numeric(spec, theta, x, true);
}

double accuracy(const ModelSpec& spec, const ParamVector& theta, const Matrix& x,
                std::span<const int> labels) {
  if (x.rows() != labels.size())
    throw std::invalid_argument("accuracy: label count does not match rows");
  if (labels.empty()) throw std::invalid_argument("accuracy: empty evaluation set");
  Matrix logits = class_logits(spec, theta, x);
  std::size_t hits = 0;
  for (std::size_t j = 0; j < x.rows(); ++j) {
    int best = 0;
    for (int k = 1; k < spec.num_classes(); ++k)
      if (logits(j, static_cast<std::size_t>(k)) > logits(j, static_cast<std::size_t>(best)))
        best = k;
    if (best == labels[j]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double class_loss_value(const ModelSpec& spec, const ParamVector& theta, const Batch& batch) {
  ad::Tape tape;
  auto leaves = ad::make_leaves(tape, theta);
  return tape.val(build_class_loss(tape, leaves, spec, batch));
}

}  // namespace seqdg
