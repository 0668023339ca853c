#pragma once
// param_vector.hpp — flat parameter vector with a named-segment layout.
//
// A Layout maps segment names ("w0", "b0", ...) to contiguous ranges of the
// flat vector. ParamVectors sharing a layout support elementwise arithmetic;
// mixing layouts is an error, not UB.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqdg/matrix.hpp"

namespace seqdg {

struct Segment {
  std::string name;
  std::size_t offset;
  std::size_t size;
};

class Layout {
 public:
  explicit Layout(std::vector<Segment> segments);

  std::size_t size() const { return total_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(std::string_view name) const;  // throws if unknown
  bool has_segment(std::string_view name) const;

  friend bool operator==(const Layout& a, const Layout& b);

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

using LayoutPtr = std::shared_ptr<const Layout>;

// Convenience: build a layout from (name, size) pairs laid out in order.
LayoutPtr make_layout(std::vector<std::pair<std::string, std::size_t>> sizes);

class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(LayoutPtr layout);  // zero-filled
  ParamVector(LayoutPtr layout, std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  const LayoutPtr& layout() const { return layout_; }
  bool same_layout(const ParamVector& other) const;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;

  ParamVector& operator+=(const ParamVector& o);
  ParamVector& operator-=(const ParamVector& o);
  ParamVector& operator*=(double c);
  // this += c * o
  ParamVector& axpy(double c, const ParamVector& o);

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(ParamVector a, double c) { return a *= c; }
  friend ParamVector operator*(double c, ParamVector a) { return a *= c; }

  double dot(const ParamVector& o) const;
  double squared_norm() const;
  double norm() const;
  double max_abs() const;
  bool all_finite() const;

  void fill(double v);

 private:
  void check_same(const ParamVector& o) const;

  LayoutPtr layout_;
  std::vector<double> values_;
};

// Mean of a set of vectors sharing a layout; errors on empty input.
ParamVector mean(std::span<const ParamVector> xs);

// Symmetric matrix of pairwise dot products x_i . x_j (each pair computed
// once and mirrored).
Matrix pairwise_products(std::span<const ParamVector> xs);

}  // namespace seqdg
