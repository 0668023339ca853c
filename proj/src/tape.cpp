#include "seqdg/tape.hpp"

#include <cmath>
#include <string>

namespace seqdg::ad {

namespace {

const char* op_name(Op op) {
  switch (op) {
    case Op::Const: return "const";
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Relu: return "relu";
    case Op::Scale: return "scale";
    case Op::AddC: return "add_const";
    case Op::Axpy: return "axpy";
    case Op::StopGrad: return "stop_gradient";
  }
  return "?";
}

}  // namespace

NonFiniteError::NonFiniteError(Op op, NodeId id)
    : std::runtime_error("non-finite value produced by '" + std::string(op_name(op)) +
                         "' at node " + std::to_string(id)),
      node_(id) {}

NodeId Tape::push(Op op, double v, NodeId a, NodeId b, double aux) {
  if (!std::isfinite(v)) throw NonFiniteError(op, static_cast<NodeId>(nodes_.size()));
  nodes_.push_back(Node{v, aux, a, b, op});
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::exp(NodeId a) { return push(Op::Exp, std::exp(val(a)), a, kNoNode); }
NodeId Tape::log(NodeId a) { return push(Op::Log, std::log(val(a)), a, kNoNode); }
NodeId Tape::sqrt(NodeId a) { return push(Op::Sqrt, std::sqrt(val(a)), a, kNoNode); }

NodeId Tape::sum(std::span<const NodeId> xs) {
  if (xs.empty()) return constant(0.0);
  NodeId acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

NodeId Tape::mean(std::span<const NodeId> xs) {
  if (xs.empty()) return constant(0.0);
  return scale(sum(xs), 1.0 / static_cast<double>(xs.size()));
}

NodeId Tape::dot(std::span<const NodeId> xs, std::span<const NodeId> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("Tape::dot: size mismatch");
  if (xs.empty()) return constant(0.0);
  NodeId acc = mul(xs[0], ys[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, mul(xs[i], ys[i]));
  return acc;
}

NodeId Tape::weighted_sum(std::span<const NodeId> xs, std::span<const double> cs) {
  if (xs.size() != cs.size()) throw std::invalid_argument("Tape::weighted_sum: size mismatch");
  if (xs.empty()) return constant(0.0);
  NodeId acc = scale(xs[0], cs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) acc = axpy(acc, cs[i], xs[i]);
  return acc;
}

NodeId Tape::squared_norm(std::span<const NodeId> xs) {
  if (xs.empty()) return constant(0.0);
  NodeId acc = mul(xs[0], xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, mul(xs[i], xs[i]));
  return acc;
}

NodeId Tape::norm(std::span<const NodeId> xs) { return sqrt(squared_norm(xs)); }

void Tape::gradient(NodeId out, std::span<const NodeId> wrt, std::span<double> dst) const {
  if (dst.size() != wrt.size())
    throw std::invalid_argument("Tape::gradient: dst/wrt size mismatch");
  adj_.assign(nodes_.size(), 0.0);
  adj_[static_cast<std::size_t>(out)] = 1.0;
  for (NodeId i = out; i >= 0; --i) {
    const double g = adj_[static_cast<std::size_t>(i)];
    if (g == 0.0) continue;
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    switch (n.op) {
      case Op::Const:
      case Op::Leaf:
      case Op::StopGrad:
        break;
      case Op::Add:
        adj_[n.a] += g;
        adj_[n.b] += g;
        break;
      case Op::Sub:
        adj_[n.a] += g;
        adj_[n.b] -= g;
        break;
      case Op::Mul:
        adj_[n.a] += g * nodes_[n.b].val;
        adj_[n.b] += g * nodes_[n.a].val;
        break;
      case Op::Div:
        adj_[n.a] += g / nodes_[n.b].val;
        adj_[n.b] -= g * n.val / nodes_[n.b].val;
        break;
      case Op::Neg:
        adj_[n.a] -= g;
        break;
      case Op::Exp:
        adj_[n.a] += g * n.val;
        break;
      case Op::Log:
        adj_[n.a] += g / nodes_[n.a].val;
        break;
      case Op::Sqrt:
        // d sqrt(x)/dx = 1/(2 sqrt(x)); defined as 0 at x == 0 so that norm
        // penalties have a usable gradient at their minimum.
        if (n.val != 0.0) adj_[n.a] += g * 0.5 / n.val;
        break;
      case Op::Relu:
        if (nodes_[n.a].val > 0.0) adj_[n.a] += g;
        break;
      case Op::Scale:
        adj_[n.a] += g * n.aux;
        break;
      case Op::AddC:
        adj_[n.a] += g;
        break;
      case Op::Axpy:
        adj_[n.a] += g;
        adj_[n.b] += g * n.aux;
        break;
    }
  }
  for (std::size_t k = 0; k < wrt.size(); ++k)
    dst[k] = adj_[static_cast<std::size_t>(wrt[k])];
}

std::vector<double> Tape::gradient(NodeId out, std::span<const NodeId> wrt) const {
  std::vector<double> dst(wrt.size());
  gradient(out, wrt, dst);
  return dst;
}

std::vector<NodeId> Tape::gradient_nodes(NodeId out, std::span<const NodeId> wrt) {
  // Adjoints as node ids; kNoNode means "symbolically zero". New nodes are
  // appended above `out`, so the downward scan never revisits them.
  std::vector<NodeId> adj(static_cast<std::size_t>(out) + 1, kNoNode);
  adj[static_cast<std::size_t>(out)] = constant(1.0);

  auto acc = [&](NodeId target, NodeId contrib) {
    NodeId& slot = adj[static_cast<std::size_t>(target)];
    slot = (slot == kNoNode) ? contrib : add(slot, contrib);
  };

  for (NodeId i = out; i >= 0; --i) {
    const NodeId g = adj[static_cast<std::size_t>(i)];
    if (g == kNoNode) continue;
    // Copy fields: emitting contribution nodes may reallocate nodes_.
    const Node n = nodes_[static_cast<std::size_t>(i)];
    switch (n.op) {
      case Op::Const:
      case Op::Leaf:
      case Op::StopGrad:
        break;
      case Op::Add:
        acc(n.a, g);
        acc(n.b, g);
        break;
      case Op::Sub:
        acc(n.a, g);
        acc(n.b, neg(g));
        break;
      case Op::Mul:
        acc(n.a, mul(g, n.b));
        acc(n.b, mul(g, n.a));
        break;
      case Op::Div:
        acc(n.a, div(g, n.b));
        acc(n.b, neg(div(mul(g, i), n.b)));
        break;
      case Op::Neg:
        acc(n.a, neg(g));
        break;
      case Op::Exp:
        acc(n.a, mul(g, i));
        break;
      case Op::Log:
        acc(n.a, div(g, n.a));
        break;
      case Op::Sqrt:
        if (n.val != 0.0) acc(n.a, scale(div(g, i), 0.5));
        break;
      case Op::Relu:
        // Activation mask is frozen at the current primal values; it is
        // treated as locally constant by all higher-order passes.
        if (nodes_[static_cast<std::size_t>(n.a)].val > 0.0) acc(n.a, g);
        break;
      case Op::Scale:
        acc(n.a, scale(g, n.aux));
        break;
      case Op::AddC:
        acc(n.a, g);
        break;
      case Op::Axpy:
        acc(n.a, g);
        acc(n.b, scale(g, n.aux));
        break;
    }
  }

  std::vector<NodeId> result(wrt.size());
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    const NodeId slot = (wrt[k] <= out) ? adj[static_cast<std::size_t>(wrt[k])] : kNoNode;
    result[k] = (slot == kNoNode) ? constant(0.0) : slot;
  }
  return result;
}

}  // namespace seqdg::ad
