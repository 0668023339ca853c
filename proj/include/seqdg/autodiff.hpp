#pragma once
// autodiff.hpp — parameter-level wrappers around the scalar tape.
//
// A ScalarFn builds a scalar objective on a tape given one node per
// parameter. The same callable works for evaluation, gradients, and exact
// Hessian-vector products, so verification code and training code share one
// definition of each objective.

#include <functional>
#include <span>

#include "seqdg/param_vector.hpp"
#include "seqdg/tape.hpp"

namespace seqdg::ad {

using ScalarFn = std::function<NodeId(Tape&, std::span<const NodeId>)>;

// Fresh leaves holding theta's values, in parameter order.
std::vector<NodeId> make_leaves(Tape& tape, const ParamVector& theta);

double eval(const ScalarFn& f, const ParamVector& theta);

ParamVector gradient(const ScalarFn& f, const ParamVector& theta);

// Exact H(theta) * v via double backward: build the gradient symbolically,
// dot it with v, and differentiate that scalar. No finite differencing.
ParamVector hvp(const ScalarFn& f, const ParamVector& theta, const ParamVector& v);

// Central-difference approximations; the independent checks used by tests
// and the verification suite.
ParamVector fd_gradient(const ScalarFn& f, const ParamVector& theta, double eps);
ParamVector fd_hvp(const ScalarFn& f, const ParamVector& theta, const ParamVector& v,
                   double eps);

}  // namespace seqdg::ad
