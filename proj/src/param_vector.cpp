#include "seqdg/param_vector.hpp"

#include <cmath>
#include <stdexcept>

namespace seqdg {

Layout::Layout(std::vector<Segment> segments) : segments_(std::move(segments)) {
  std::size_t expected = 0;
  for (const Segment& s : segments_) {
    if (s.offset != expected)
      throw std::invalid_argument("Layout: segment '" + s.name + "' is not contiguous");
    if (s.size == 0) throw std::invalid_argument("Layout: segment '" + s.name + "' is empty");
    expected += s.size;
  }
  total_ = expected;
}

const Segment& Layout::segment(std::string_view name) const {
  for (const Segment& s : segments_)
    if (s.name == name) return s;
  throw std::out_of_range("Layout: no segment named '" + std::string(name) + "'");
}

bool Layout::has_segment(std::string_view name) const {
  for (const Segment& s : segments_)
    if (s.name == name) return true;
  return false;
}

bool operator==(const Layout& a, const Layout& b) {
  if (a.segments_.size() != b.segments_.size()) return false;
  for (std::size_t i = 0; i < a.segments_.size(); ++i) {
    const Segment& x = a.segments_[i];
    const Segment& y = b.segments_[i];
    if (x.name != y.name || x.offset != y.offset || x.size != y.size) return false;
  }
  return true;
}

LayoutPtr make_layout(std::vector<std::pair<std::string, std::size_t>> sizes) {
  std::vector<Segment> segs;
  segs.reserve(sizes.size());
  std::size_t offset = 0;
  for (auto& [name, size] : sizes) {
    segs.push_back(Segment{std::move(name), offset, size});
    offset += size;
  }
  return std::make_shared<const Layout>(std::move(segs));
}

ParamVector::ParamVector(LayoutPtr layout)
    : layout_(std::move(layout)), values_(layout_ ? layout_->size() : 0, 0.0) {}

ParamVector::ParamVector(LayoutPtr layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_ || layout_->size() != values_.size())
    throw std::invalid_argument("ParamVector: value count does not match layout");
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (layout_ == other.layout_) return layout_ != nullptr;
  return layout_ && other.layout_ && *layout_ == *other.layout_;
}

void ParamVector::check_same(const ParamVector& o) const {
  if (!same_layout(o))
    throw std::invalid_argument("ParamVector: operands have different layouts");
}

std::span<double> ParamVector::segment(std::string_view name) {
  const Segment& s = layout_->segment(name);
  return {values_.data() + s.offset, s.size};
}

std::span<const double> ParamVector::segment(std::string_view name) const {
  const Segment& s = layout_->segment(name);
  return {values_.data() + s.offset, s.size};
}

ParamVector& ParamVector::operator+=(const ParamVector& o) {
  check_same(o);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& o) {
  check_same(o);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double c) {
  for (double& v : values_) v *= c;
  return *this;
}

ParamVector& ParamVector::axpy(double c, const ParamVector& o) {
  check_same(o);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += c * o.values_[i];
  return *this;
}

double ParamVector::dot(const ParamVector& o) const {
  check_same(o);
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * o.values_[i];
  return acc;
}

double ParamVector::squared_norm() const {
  double acc = 0.0;
  for (double v : values_) acc += v * v;
  return acc;
}

double ParamVector::norm() const { return std::sqrt(squared_norm()); }

double ParamVector::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

bool ParamVector::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

void ParamVector::fill(double v) {
  for (double& x : values_) x = v;
}

ParamVector mean(std::span<const ParamVector> xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty parameter list");
  ParamVector acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc += xs[i];
  acc *= 1.0 / static_cast<double>(xs.size());
  return acc;
}

Matrix pairwise_products(std::span<const ParamVector> xs) {
  Matrix m(xs.size(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = i; j < xs.size(); ++j) {
      const double p = xs[i].dot(xs[j]);
      m(i, j) = p;
      m(j, i) = p;
    }
  }
  return m;
}

}  // namespace seqdg
