#pragma once
// tape.hpp — reverse-mode automatic differentiation on a scalar tape.
//
// Every arithmetic operation appends one node; node ids are indices into the
// tape, so the graph is always topologically ordered and a reverse pass is a
// single backward scan.
//
// Two backward passes are provided:
//   * gradient()       — numeric adjoints (fast, terminal use)
//   * gradient_nodes() — adjoints built as *new tape nodes*, so the returned
//                        gradient entries are themselves differentiable.
// The symbolic pass is what makes nested constructions possible: an inner
// update theta' = theta - alpha * grad can be recorded on the tape and a later
// backward pass through theta' picks up the curvature terms. Hessian-vector
// products fall out the same way (backward through dot(grad, v)).
//
// A Tape is single-threaded; concurrent use requires one Tape per thread.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace seqdg::ad {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class Op : std::uint8_t {
  Const,     // value fixed; no parents
  Leaf,      // differentiation variable
  Add,       // a + b
  Sub,       // a - b
  Mul,       // a * b
  Div,       // a / b
  Neg,       // -a
  Exp,       // exp(a)
  Log,       // log(a)
  Sqrt,      // sqrt(a); derivative defined 0 at a == 0
  Relu,      // max(a, 0); derivative defined 0 at a == 0
  Scale,     // c * a           (c stored, not differentiated)
  AddC,      // a + c
  Axpy,      // a + c * b
  StopGrad,  // value of a; gradient does not flow through
};

struct Node {
  double val;
  double aux;  // coefficient for Scale / AddC / Axpy
  NodeId a;
  NodeId b;
  Op op;
};

// Thrown when an operation produces NaN or +/-inf. Carries the id of the
// offending node so callers can report where the graph blew up.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(Op op, NodeId id);
  NodeId node() const noexcept { return node_; }

 private:
  NodeId node_;
};

class Tape {
 public:
  NodeId constant(double v) { return push(Op::Const, v, kNoNode, kNoNode); }
  NodeId leaf(double v) { return push(Op::Leaf, v, kNoNode, kNoNode); }

  NodeId add(NodeId a, NodeId b) { return push(Op::Add, val(a) + val(b), a, b); }
  NodeId sub(NodeId a, NodeId b) { return push(Op::Sub, val(a) - val(b), a, b); }
  NodeId mul(NodeId a, NodeId b) { return push(Op::Mul, val(a) * val(b), a, b); }
  NodeId div(NodeId a, NodeId b) { return push(Op::Div, val(a) / val(b), a, b); }
  NodeId neg(NodeId a) { return push(Op::Neg, -val(a), a, kNoNode); }
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId relu(NodeId a) { return push(Op::Relu, val(a) > 0.0 ? val(a) : 0.0, a, kNoNode); }
  NodeId scale(NodeId a, double c) { return push(Op::Scale, c * val(a), a, kNoNode, c); }
  NodeId add_const(NodeId a, double c) { return push(Op::AddC, val(a) + c, a, kNoNode, c); }
  // a + c * b
  NodeId axpy(NodeId a, double c, NodeId b) {
    return push(Op::Axpy, val(a) + c * val(b), a, b, c);
  }
  NodeId stop_gradient(NodeId a) { return push(Op::StopGrad, val(a), a, kNoNode); }

  double val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // --- aggregate helpers -------------------------------------------------
  NodeId sum(std::span<const NodeId> xs);
  NodeId mean(std::span<const NodeId> xs);
  NodeId dot(std::span<const NodeId> xs, std::span<const NodeId> ys);
  // sum_i c_i * x_i with constant coefficients.
  NodeId weighted_sum(std::span<const NodeId> xs, std::span<const double> cs);
  NodeId squared_norm(std::span<const NodeId> xs);
  NodeId norm(std::span<const NodeId> xs);  // sqrt(squared_norm); 0-safe gradient

  // --- backward passes ---------------------------------------------------
  // d out / d wrt[i] into dst (dst.size() == wrt.size()). wrt entries are
  // usually leaves but any node works; the adjoint of an interior node is the
  // total derivative of out with respect to that node's value.
  void gradient(NodeId out, std::span<const NodeId> wrt, std::span<double> dst) const;
  std::vector<double> gradient(NodeId out, std::span<const NodeId> wrt) const;

  // Same reverse pass, but adjoints are emitted as new tape nodes, so the
  // result can be differentiated again.
  std::vector<NodeId> gradient_nodes(NodeId out, std::span<const NodeId> wrt);

 private:
  NodeId push(Op op, double v, NodeId a, NodeId b, double aux = 0.0);

  std::vector<Node> nodes_;
  mutable std::vector<double> adj_;  // numeric-pass scratch
};

}  // namespace seqdg::ad
