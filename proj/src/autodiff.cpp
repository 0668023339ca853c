#include "seqdg/autodiff.hpp"

#include <stdexcept>

namespace seqdg::ad {

std::vector<NodeId> make_leaves(Tape& tape, const ParamVector& theta) {
  std::vector<NodeId> leaves;
  leaves.reserve(theta.size());
  for (double v : theta.values()) leaves.push_back(tape.leaf(v));
  return leaves;
}

double eval(const ScalarFn& f, const ParamVector& theta) {
  Tape tape;
  auto leaves = make_leaves(tape, theta);
  return tape.val(f(tape, leaves));
}

ParamVector gradient(const ScalarFn& f, const ParamVector& theta) {
  Tape tape;
  auto leaves = make_leaves(tape, theta);
  NodeId out = f(tape, leaves);
  ParamVector g(theta.layout());
  tape.gradient(out, leaves, g.values());
  return g;
}

ParamVector hvp(const ScalarFn& f, const ParamVector& theta, const ParamVector& v) {
  if (!theta.same_layout(v))
    throw std::invalid_argument("hvp: direction does not match parameter layout");
  Tape tape;
  auto leaves = make_leaves(tape, theta);
  NodeId out = f(tape, leaves);
  auto grad_nodes = tape.gradient_nodes(out, leaves);
  NodeId gv = tape.weighted_sum(grad_nodes, v.values());
  ParamVector h(theta.layout());
  tape.gradient(gv, leaves, h.values());
  return h;
}

ParamVector fd_gradient(const ScalarFn& f, const ParamVector& theta, double eps) {
  ParamVector g(theta.layout());
  ParamVector probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double fp = eval(f, probe);
    probe[i] = saved - eps;
    const double fm = eval(f, probe);
    probe[i] = saved;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

ParamVector fd_hvp(const ScalarFn& f, const ParamVector& theta, const ParamVector& v,
                   double eps) {
  ParamVector plus = theta;
  plus.axpy(eps, v);
  ParamVector minus = theta;
  minus.axpy(-eps, v);
  ParamVector h = gradient(f, plus);
  h -= gradient(f, minus);
  h *= 1.0 / (2.0 * eps);
  return h;
}

}  // namespace seqdg::ad
