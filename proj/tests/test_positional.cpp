#include <doctest.h>

#include <cmath>
#include <complex>

#include "grela/error.hpp"
#include "grela/ops.hpp"
#include "grela/positional.hpp"
#include "grela/tape.hpp"

using namespace grela;
using namespace grela::positional;
using doctest::Approx;

namespace {

Tensor randn(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& x : t.data()) x = rng.normal();
  return t;
}

double dot_rows(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) s += a[ra * d + i] * b[rb * d + i];
  return s;
}

}  // namespace

TEST_CASE("rope table frequencies and angles") {
  const RopeTable t(16, 8);
  CHECK(t.pairs() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(t.theta(i) == Approx(std::pow(10000.0, -2.0 * i / 8.0)).epsilon(1e-15));
  for (std::size_t m = 0; m < 16; ++m)
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(t.angle(m, i) == Approx(m * t.theta(i)).epsilon(1e-15));
      CHECK(t.cos_row(m)[i] == Approx(std::cos(m * t.theta(i))).epsilon(1e-15));
    }
  CHECK_THROWS_AS(RopeTable(4, 3), ContractError);
  CHECK_THROWS_AS(RopeTable(4, 0), ContractError);
}

TEST_CASE("rope examples") {
  Rng rng(1);
  const RopeTable t(8, 4);
  const Tensor x = randn({1, 4}, rng);
  const Tensor y = rope_apply(x, t);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == x[i]);

  const RopeTable one = RopeTable::from_thetas(4, {1.0});
  const Tensor e(Shape{2, 2}, {0, 0, 1, 0});  // row 1 sits at position 1
  const Tensor r = rope_apply(e, one);
  CHECK(r[2] == Approx(std::cos(1.0)).epsilon(1e-15));
  CHECK(r[3] == Approx(std::sin(1.0)).epsilon(1e-15));

  // <R_2 q, R_5 k> for q = k = (1, 0), theta = 0.5, against Re(q conj(k) e^{i(m-n)theta})
  const RopeTable half = RopeTable::from_thetas(8, {0.5});
  Tensor qs(Shape{8, 2}), ks(Shape{8, 2});
  qs[4] = 1.0;   // position 2
  ks[10] = 1.0;  // position 5
  const Tensor rq = rope_apply(qs, half), rk = rope_apply(ks, half);
  const double got = dot_rows(rq, 2, rk, 5, 2);
  const double oracle = (std::complex<double>(1, 0) * std::conj(std::complex<double>(1, 0)) *
                         std::exp(std::complex<double>(0, (2.0 - 5.0) * 0.5)))
                            .real();
  CHECK(got == Approx(oracle).epsilon(1e-14));
  CHECK(got == Approx(std::cos(1.5)).epsilon(1e-14));
}

TEST_CASE("rope agrees with the complex-multiplication route") {
  Rng rng(2);
  for (std::size_t d : {2, 8, 64}) {
    const RopeTable t(40, d);
    const Tensor x = randn({3, 20, d}, rng);
    for (std::size_t off : {0, 7, 20}) {
      const Tensor y = rope_apply(x, t, off);
      for (std::size_t b = 0; b < 3; ++b) {
        std::span<const double> slab(x.ptr() + b * 20 * d, 20 * d);
        const auto ref = rope_apply_complex(slab, 20, d, t, off);
        for (std::size_t i = 0; i < 20 * d; ++i) REQUIRE(std::abs(y[b * 20 * d + i] - ref[i]) < 1e-13);
      }
    }
  }
}

TEST_CASE("rotation preserves norms and depends only on relative offset") {
  Rng rng(3);
  const RopeTable t(64, 16);
  const Tensor q = randn({1, 16}, rng), k = randn({1, 16}, rng);
  for (std::size_t m : {0, 3, 17})
    for (std::size_t n : {0, 5, 11})
      for (std::size_t s : {1, 5, 30}) {
        const double a = dot_rows(rope_apply(q, t, m), 0, rope_apply(k, t, n), 0, 16);
        const double b = dot_rows(rope_apply(q, t, m + s), 0, rope_apply(k, t, n + s), 0, 16);
        CHECK(std::abs(a - b) < 1e-9);
      }
  const Tensor r = rope_apply(q, t, 33);
  CHECK(dot_rows(r, 0, r, 0, 16) == Approx(dot_rows(q, 0, q, 0, 16)).epsilon(1e-13));
}

TEST_CASE("rope contract errors") {
  const RopeTable t(4, 4);
  CHECK_THROWS_AS(rope_apply(Tensor(Shape{2, 3}), t), ContractError);
  CHECK_THROWS_AS(rope_apply(Tensor(Shape{2, 6}), t), DimensionError);
  CHECK_THROWS_AS(rope_apply(Tensor(Shape{3, 4}), t, 2), BoundsError);
  CHECK_NOTHROW(rope_apply(Tensor(Shape{3, 4}), t, 1));
}

TEST_CASE("rope backward is the inverse rotation") {
  Rng rng(4);
  const RopeTable t(10, 6);
  Tensor x = randn({10, 6}, rng);
  x.set_requires_grad();
  const Tensor w = randn({10, 6}, rng);
  Tape tape;
  Tape::Scope scope(tape);
  tape.backward(ops::sum(ops::mul(rope_apply(x, t), w)));
  // d/dx <R x, w> = R^T w = R(-theta) w
  std::vector<double> neg;
  for (std::size_t i = 0; i < 3; ++i) neg.push_back(-t.theta(i));
  const RopeTable inv = RopeTable::from_thetas(10, neg);
  const Tensor expect = rope_apply(w, inv);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("absolute sinusoidal encoding") {
  CHECK(ape_encode(0, 0, 8) == 0.0);
  CHECK(ape_encode(0, 1, 8) == 1.0);
  CHECK(ape_encode(1, 0, 8) == Approx(0.8414709848).epsilon(1e-10));
  CHECK(ape_encode(3, 5, 8) == Approx(std::cos(3.0 / std::pow(10000.0, 4.0 / 4.0))).epsilon(1e-14));
  CHECK_THROWS_AS(ape_encode(0, 8, 8), BoundsError);
  const Tensor tab = ape_table(5, 8);
  const Tensor x(Shape{2, 5, 8}, 1.0);
  const Tensor y = ape_add(x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 40; ++i) CHECK(y[b * 40 + i] == 1.0 + tab[i]);
}

TEST_CASE("learnable positions") {
  const LearnablePositionTable zero(6, 4);
  Rng rng(5);
  const Tensor x = randn({2, 3, 4}, rng);
  const Tensor same = lpe_add(x, zero);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);
  LearnablePositionTable p = LearnablePositionTable::random(6, 4, 0.5, rng);
  const Tensor only = lpe_add(Tensor(Shape{3, 4}), p);
  for (std::size_t i = 0; i < 12; ++i) CHECK(only[i] == p.weights[i]);
  CHECK_THROWS_AS(lpe_add(Tensor(Shape{7, 4}), p), BoundsError);

  p.weights.set_requires_grad();
  Tape tape;
  Tape::Scope scope(tape);
  tape.backward(ops::sum(lpe_add(x, p)));
  for (std::size_t m = 0; m < 6; ++m)
    for (std::size_t c = 0; c < 4; ++c) CHECK(p.weights.grad()[m * 4 + c] == (m < 3 ? 2.0 : 0.0));
}
