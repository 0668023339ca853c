#include <doctest.h>

#include <stdexcept>

#include "seqdg/param_vector.hpp"
#include "seqdg/rng.hpp"

using namespace seqdg;

TEST_CASE("layout assigns contiguous named segments") {
  auto layout = make_layout({{"w0", 6}, {"b0", 2}, {"w1", 4}});
  CHECK(layout->size() == 12);
  CHECK(layout->segment("b0").offset == 6);
  CHECK(layout->segment("w1").size == 4);
  CHECK(layout->has_segment("w0"));
  CHECK_FALSE(layout->has_segment("nope"));
  CHECK_THROWS_AS(layout->segment("nope"), std::out_of_range);
}

TEST_CASE("segment spans alias the flat storage") {
  auto layout = make_layout({{"a", 2}, {"b", 3}});
  ParamVector p(layout);
  p.segment("b")[0] = 7.0;
  CHECK(p[2] == 7.0);
  const ParamVector& cp = p;
  CHECK(cp.segment("b")[0] == 7.0);
}

TEST_CASE("arithmetic requires matching layouts") {
  ParamVector a(make_layout({{"x", 3}}));
  ParamVector b(make_layout({{"x", 3}}));
  ParamVector c(make_layout({{"y", 3}}));
  CHECK(a.same_layout(b));  // structural equality, not pointer identity
  CHECK_FALSE(a.same_layout(c));
  CHECK_THROWS_AS(a += c, std::invalid_argument);
  CHECK_THROWS_AS((void)a.dot(c), std::invalid_argument);
}

TEST_CASE("elementwise operations behave like vectors") {
  auto layout = make_layout({{"x", 4}});
  ParamVector a(layout, {1, 2, 3, 4});
  ParamVector b(layout, {4, 3, 2, 1});
  ParamVector s = a + b;
  for (std::size_t i = 0; i < 4; ++i) CHECK(s[i] == 5.0);
  ParamVector d = a - b;
  CHECK(d[0] == -3.0);
  CHECK(d[3] == 3.0);
  a.axpy(2.0, b);
  CHECK(a[0] == 9.0);
  CHECK(a.dot(b) == doctest::Approx(9 * 4 + 8 * 3 + 7 * 2 + 6 * 1));
  CHECK(ParamVector(layout, {3, 4, 0, 0}).norm() == doctest::Approx(5.0));
  CHECK(ParamVector(layout, {3, 4, 0, 0}).squared_norm() == doctest::Approx(25.0));
}

TEST_CASE("mean of parameter vectors") {
  auto layout = make_layout({{"x", 2}});
  std::vector<ParamVector> xs = {ParamVector(layout, {1, 10}), ParamVector(layout, {3, 20})};
  ParamVector m = mean(xs);
  CHECK(m[0] == doctest::Approx(2.0));
  CHECK(m[1] == doctest::Approx(15.0));
  std::vector<ParamVector> empty;
  CHECK_THROWS_AS(mean(empty), std::invalid_argument);
}

TEST_CASE("value count must match the layout") {
  auto layout = make_layout({{"x", 3}});
  CHECK_THROWS_AS(ParamVector(layout, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("rng streams are deterministic and decorrelated") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 10; ++i) differs = differs || (a2.next_u64() != c.next_u64());
  CHECK(differs);

  Rng s1(7, 1), s2(7, 2);
  bool stream_differs = false;
  for (int i = 0; i < 10; ++i) stream_differs = stream_differs || (s1.next_u64() != s2.next_u64());
  CHECK(stream_differs);
}

TEST_CASE("uniform01 stays in range with a sane mean") {
  Rng rng(123);
  double acc = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    acc += u;
  }
  CHECK(acc / 20000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("normal draws have roughly standard moments") {
  Rng rng(321);
  double m = 0.0, m2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    m += x;
    m2 += x * x;
  }
  m /= n;
  m2 /= n;
  CHECK(std::abs(m) < 0.03);
  CHECK(m2 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("below covers every residue without bias") {
  Rng rng(77);
  int counts[5] = {0, 0, 0, 0, 0};
  for (int i = 0; i < 5000; ++i) ++counts[rng.below(5)];
  for (int k = 0; k < 5; ++k) CHECK(counts[k] > 800);  // expect 1000 each
  CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(9);
  std::vector<int> xs = {0, 1, 2, 3, 4, 5, 6, 7};
  auto sorted = xs;
  rng.shuffle(xs);
  auto copy = xs;
  std::sort(copy.begin(), copy.end());
  CHECK(copy == sorted);
}
