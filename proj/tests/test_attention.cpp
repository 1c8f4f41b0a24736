#include <doctest.h>

#include <cmath>

#include "grela/attention.hpp"
#include "grela/error.hpp"
#include "grela/gradcheck.hpp"
#include "grela/linalg.hpp"
#include "grela/memory.hpp"
#include "grela/ops.hpp"
#include "oracles.hpp"

using namespace grela;
using namespace grela::attention;
using doctest::Approx;

namespace {

Tensor randn(Shape s, Rng& rng, double std = 1.0) {
  Tensor t(std::move(s));
  for (auto& x : t.data()) x = std * rng.normal();
  return t;
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_diff(const Tensor& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("kernel feature map") {
  const Tensor p = kernel_phi(Tensor(Shape{3}, {0.0, 3.0, -20.0}));
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 4.0);
  CHECK(p[2] == Approx(std::exp(-20.0)).epsilon(1e-12));
  CHECK(p[2] > 0.0);
}

TEST_CASE("variant names") {
  CHECK(parse_variant("rela") == Variant::RELA);
  CHECK(parse_variant("linear") == Variant::Linear);
  CHECK(parse_variant("dot") == Variant::DotProduct);
  CHECK(variant_name(Variant::RELA) == "rela");
  CHECK_THROWS_AS(parse_variant("flash"), ContractError);
}

TEST_CASE("dot-product attention examples") {
  Rng rng(1);
  const Tensor v1 = randn({1, 4}, rng);
  const auto one = dot_product_attention(randn({1, 4}, rng), randn({1, 4}, rng), v1, false);
  CHECK(max_diff(one.output, vec(v1)) < 1e-15);

  const Tensor v = randn({5, 3}, rng);
  const auto uni = dot_product_attention(Tensor(Shape{5, 3}, 0.0), Tensor(Shape{5, 3}, 0.0), v, false);
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (std::size_t j = 0; j < 5; ++j) mean += v[j * 3 + c] / 5;
      CHECK(uni.output[m * 3 + c] == Approx(mean).epsilon(1e-14));
    }

  const Tensor q = randn({5, 3}, rng), k = randn({5, 3}, rng);
  const auto c = dot_product_attention(q, k, v, true);
  CHECK(max_diff(c.output, oracle::dot_product(vec(q), vec(k), vec(v), 5, 3, 1, true)) < 1e-13);
  const Tensor q2 = randn({7, 8}, rng), k2 = randn({7, 8}, rng), v2 = randn({7, 8}, rng);
  for (bool causal : {false, true}) {
    const auto r = dot_product_attention(q2, k2, v2, causal, 2);
    CHECK(max_diff(r.output, oracle::dot_product(vec(q2), vec(k2), vec(v2), 7, 8, 2, causal)) < 1e-13);
  }
}

TEST_CASE("linear attention examples") {
  Rng rng(2);
  const Tensor v1 = randn({1, 4}, rng);
  CHECK(max_diff(linear_attention(randn({1, 4}, rng), randn({1, 4}, rng), v1, true).output, vec(v1)) < 1e-15);

  const Tensor q = randn({6, 4}, rng), v = randn({6, 4}, rng);
  Tensor k(Shape{6, 4});
  const Tensor krow = randn({4}, rng);
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t c = 0; c < 4; ++c) k[j * 4 + c] = krow[c];
  const auto full = linear_attention(q, k, v, false);
  const auto causal = linear_attention(q, k, v, true);
  for (std::size_t m = 0; m < 6; ++m)
    for (std::size_t c = 0; c < 4; ++c) {
      double all = 0, prefix = 0;
      for (std::size_t j = 0; j < 6; ++j) all += v[j * 4 + c] / 6;
      for (std::size_t j = 0; j <= m; ++j) prefix += v[j * 4 + c] / static_cast<double>(m + 1);
      CHECK(full.output[m * 4 + c] == Approx(all).epsilon(1e-13));
      CHECK(causal.output[m * 4 + c] == Approx(prefix).epsilon(1e-13));
    }

  const Tensor q8 = randn({8, 4}, rng), k8 = randn({8, 4}, rng), v8 = randn({8, 4}, rng);
  for (bool c : {false, true})
    CHECK(max_diff(linear_attention(q8, k8, v8, c).output, oracle::linear_attention(vec(q8), vec(k8), vec(v8), 8, 4, 1, c)) <
          1e-10);
}

TEST_CASE("rela examples") {
  Rng rng(3);
  const positional::RopeTable rope(16, 4);
  AttentionConfig cfg;
  cfg.head_dim = 4;
  cfg.eps = 1e-300;
  const Tensor v1 = randn({1, 4}, rng);
  CHECK(max_diff(rela(randn({1, 4}, rng), randn({1, 4}, rng), v1, rope, cfg).output, vec(v1)) < 1e-14);

  // zero angles, no scaling, eps -> 0: plain linear attention
  const auto flat = positional::RopeTable::from_thetas(16, {0.0, 0.0});
  cfg.scale_n = false;
  cfg.eps = 1e-300;
  const Tensor q = randn({8, 4}, rng), k = randn({8, 4}, rng), v = randn({8, 4}, rng);
  for (bool c : {false, true}) {
    cfg.causal = c;
    const auto a = rela(q, k, v, flat, cfg).output;
    const auto b = linear_attention(q, k, v, c).output;
    CHECK(max_diff(a, vec(b)) < 1e-10);
  }

  cfg.scale_n = true;
  cfg.eps = 1e-6;
  for (bool c : {false, true}) {
    cfg.causal = c;
    const auto got = rela(q, k, v, rope, cfg).output;
    CHECK(max_diff(got, oracle::rela(vec(q), vec(k), vec(v), 8, 4, 1, c, oracle::rope_thetas(4), 1.0 / 8, 1e-6)) < 1e-10);
  }
}

TEST_CASE("rela with heads, batches, masks, offsets and a fixed scale length") {
  Rng rng(4);
  const std::size_t B = 3, N = 6, D = 8, H = 2;
  const positional::RopeTable rope(20, D);
  AttentionConfig cfg;
  cfg.heads = H;
  cfg.head_dim = D / H;
  cfg.scale_len = 20;
  const Tensor q = randn({B, N, D}, rng), k = randn({B, N, D}, rng), v = randn({B, N, D}, rng);
  std::vector<double> mask(B * N, 1.0);
  mask[0] = mask[1] = 0.0;  // left padding on row 0
  mask[N + 0] = 0.0;
  for (bool c : {false, true}) {
    cfg.causal = c;
    const auto got = rela(q, k, v, rope, cfg, mask, 3).output;
    for (std::size_t b = 0; b < B; ++b) {
      auto slab = [&](const Tensor& t) {
        return std::vector<double>(t.ptr() + b * N * D, t.ptr() + (b + 1) * N * D);
      };
      const std::vector<double> m(mask.begin() + b * N, mask.begin() + (b + 1) * N);
      const auto ref = oracle::rela(slab(q), slab(k), slab(v), N, D, H, c, oracle::rope_thetas(D), 1.0 / 20, cfg.eps, m, 3);
      for (std::size_t i = 0; i < N * D; ++i) REQUIRE(std::abs(got[b * N * D + i] - ref[i]) < 1e-10);
    }
  }
}

TEST_CASE("masked keys leave the support") {
  Rng rng(5);
  const Tensor q = randn({2, 4, 4}, rng), k = randn({2, 4, 4}, rng), v = randn({2, 4, 4}, rng);
  std::vector<double> mask{0, 1, 1, 1, 1, 1, 0, 1};
  for (bool c : {false, true}) {
    const auto lin = linear_attention(q, k, v, c, 2, mask).output;
    const auto dot = dot_product_attention(q, k, v, c, 2, mask).output;
    for (std::size_t b = 0; b < 2; ++b) {
      auto slab = [&](const Tensor& t) { return std::vector<double>(t.ptr() + b * 16, t.ptr() + (b + 1) * 16); };
      const std::vector<double> m(mask.begin() + b * 4, mask.begin() + (b + 1) * 4);
      const auto rl = oracle::linear_attention(slab(q), slab(k), slab(v), 4, 4, 2, c, m);
      const auto rd = oracle::dot_product(slab(q), slab(k), slab(v), 4, 4, 2, c, m);
      for (std::size_t i = 0; i < 16; ++i) {
        CHECK(std::abs(lin[b * 16 + i] - rl[i]) < 1e-12);
        CHECK(std::abs(dot[b * 16 + i] - rd[i]) < 1e-12);
      }
    }
  }
  // a row with no visible key produces zeros and counts as floored
  const std::vector<double> none(8, 0.0);
  const auto z = linear_attention(q, k, v, true, 1, none);
  for (double x : z.output.data()) CHECK(x == 0.0);
  CHECK(z.floor_hits == 8);
  const auto zd = dot_product_attention(q, k, v, true, 1, none);
  for (double x : zd.output.data()) CHECK(x == 0.0);
}

TEST_CASE("materialized mixing matrix reproduces the output") {
  Rng rng(6);
  const Tensor q = randn({7, 8}, rng), k = randn({7, 8}, rng), v = randn({7, 8}, rng);
  const positional::RopeTable rope(7, 8);
  AttentionConfig cfg;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.materialize = true;
  for (bool c : {false, true}) {
    cfg.causal = c;
    for (int which = 0; which < 3; ++which) {
      AttentionOutput r = which == 0   ? rela(q, k, v, rope, cfg)
                          : which == 1 ? linear_attention(q, k, v, c, 2, {}, true)
                                       : dot_product_attention(q, k, v, c, 2, {}, true);
      REQUIRE(r.mixing_matrix.shape() == Shape{2, 7, 7});
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t m = 0; m < 7; ++m)
          for (std::size_t col = 0; col < 4; ++col) {
            double s = 0;
            for (std::size_t j = 0; j < 7; ++j) s += r.mixing_matrix[(h * 7 + m) * 7 + j] * v[j * 8 + h * 4 + col];
            CHECK(r.output[m * 8 + h * 4 + col] == Approx(s).epsilon(1e-12));
          }
    }
  }
}

TEST_CASE("mixing-matrix rank") {
  Rng rng(7);
  const auto a = materialize_mixing_matrix(randn({200, 64}, rng), randn({200, 64}, rng), Variant::Linear);
  CHECK(linalg::numerical_rank(a).rank <= 64);
  const positional::RopeTable rope(200, 8);
  const auto r = materialize_mixing_matrix(randn({200, 8}, rng), randn({200, 8}, rng), Variant::RELA, false, &rope);
  CHECK(linalg::numerical_rank(r).rank <= 8);
  const auto ones = materialize_mixing_matrix(Tensor::ones({50, 16}), Tensor::ones({50, 16}), Variant::Linear);
  CHECK(linalg::numerical_rank(ones).rank == 1);
  const auto d1 = materialize_mixing_matrix(randn({30, 1}, rng), randn({30, 1}, rng), Variant::Linear);
  CHECK(linalg::numerical_rank(d1).rank <= 1);
  const auto sm = materialize_mixing_matrix(randn({5, 3}, rng), randn({5, 3}, rng), Variant::DotProduct);
  for (std::size_t m = 0; m < 5; ++m) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += sm[m * 5 + j];
    CHECK(s == Approx(1.0));
  }
  CHECK_THROWS_AS(materialize_mixing_matrix(Tensor(Shape{4097, 2}), Tensor(Shape{4097, 2}), Variant::Linear),
                  ResourceError);
}

TEST_CASE("attention gradients against finite differences") {
  Rng rng(8);
  const std::size_t B = 2, N = 5, D = 4;
  Tensor q = randn({B, N, D}, rng), k = randn({B, N, D}, rng), v = randn({B, N, D}, rng);
  const Tensor w = randn({B, N, D}, rng);
  q.set_requires_grad();
  k.set_requires_grad();
  v.set_requires_grad();
  const std::vector<std::pair<std::string, Tensor>> params{{"q", q}, {"k", k}, {"v", v}};
  const positional::RopeTable rope(N, D);
  const std::vector<double> mask{0, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  for (bool c : {false, true}) {
    AttentionConfig cfg;
    cfg.heads = 2;
    cfg.head_dim = 2;
    cfg.causal = c;
    auto check = [&](const std::function<Tensor()>& f) {
      const auto rep = check_gradients([&] { return ops::sum(ops::mul(f(), w)); }, params, 3e-5, 1e-6);
      CHECK_MESSAGE(rep.max_rel_error < 1e-5, rep.worst);
    };
    check([&] { return rela(q, k, v, rope, cfg, mask).output; });
    check([&] { return linear_attention(q, k, v, c, 2, mask).output; });
    check([&] { return dot_product_attention(q, k, v, c, 2, mask).output; });
  }
}

TEST_CASE("streaming kernels agree with the differentiable forms") {
  Rng rng(9);
  const std::size_t N = 33, D = 16, H = 2;
  const Tensor q = randn({N, D}, rng), k = randn({N, D}, rng), v = randn({N, D}, rng);
  const positional::RopeTable rope(N, D);
  for (bool c : {false, true}) {
    std::vector<double> out(N * D);
    AttentionConfig cfg;
    cfg.heads = H;
    cfg.head_dim = D / H;
    cfg.causal = c;
    rela_forward<double>(q.ptr(), k.ptr(), v.ptr(), out.data(), N, H, D / H, c, rope, 1.0 / N, cfg.eps);
    CHECK(max_diff(rela(q, k, v, rope, cfg).output, out) < 1e-12);
    linear_forward<double>(q.ptr(), k.ptr(), v.ptr(), out.data(), N, H, D / H, c);
    CHECK(max_diff(linear_attention(q, k, v, c, H).output, out) < 1e-12);
    dot_product_forward<double>(q.ptr(), k.ptr(), v.ptr(), out.data(), N, H, D / H, c);
    CHECK(max_diff(dot_product_attention(q, k, v, c, H).output, out) < 1e-12);

    std::vector<float> qf(q.data().begin(), q.data().end()), kf(k.data().begin(), k.data().end()),
        vf(v.data().begin(), v.data().end()), of(N * D);
    rela_forward<float>(qf.data(), kf.data(), vf.data(), of.data(), N, H, D / H, c, rope, 1.0 / N, cfg.eps);
    const auto ref = rela(q, k, v, rope, cfg).output;
    for (std::size_t i = 0; i < N * D; ++i) CHECK(std::abs(of[i] - ref[i]) < 1e-4);
  }
}

TEST_CASE("linear kernel scratch does not grow with N") {
  Rng rng(10);
  const positional::RopeTable rope(512, 16);
  std::size_t peaks[2];
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t n = 256 << i;
    std::vector<double> q(n * 16), k(n * 16), v(n * 16), out(n * 16);
    for (auto* b : {&q, &k, &v})
      for (auto& x : *b) x = rng.normal();
    memory::PeakScope scope;
    rela_forward<double>(q.data(), k.data(), v.data(), out.data(), n, 1, 16, true, rope, 1.0 / n, 1e-6);
    peaks[i] = scope.delta();
  }
  CHECK(peaks[1] <= peaks[0] + 64);
}

TEST_CASE("attention config validation") {
  AttentionConfig cfg;
  cfg.heads = 3;
  cfg.head_dim = 4;
  CHECK_THROWS_AS(cfg.validate(12 + 1), ContractError);
  cfg.head_dim = 3;
  CHECK_THROWS_AS(cfg.validate(9), ContractError);  // odd head width cannot be paired
  const positional::RopeTable rope(4, 4);
  AttentionConfig ok;
  ok.head_dim = 4;
  CHECK_THROWS_AS(rela(Tensor(Shape{5, 4}), Tensor(Shape{5, 4}), Tensor(Shape{5, 4}), rope, ok), BoundsError);
  CHECK_THROWS_AS(linear_attention(Tensor(Shape{5, 4}), Tensor(Shape{5, 3}), Tensor(Shape{5, 4}), true), DimensionError);
}
