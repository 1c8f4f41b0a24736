#pragma once

// Differentiable tensor operations. Every op computes its forward value
// eagerly; when a Tape is active and an input requires gradients, the op also
// records its backward rule.
//
// Broadcasting is trailing-aligned only: for binary elementwise ops the
// smaller operand's shape must equal a suffix of the larger one's shape
// (e.g. [D] against [B, N, D]). Anything else is a DimensionError.

#include <cstdint>
#include <span>
#include <string_view>

#include "grela/rng.hpp"
#include "grela/tensor.hpp"

namespace grela::ops {

enum class Elementwise { Add, Sub, Mul, Div, Exp, Neg };
enum class Activation { ELU, SiLU, GELU, ReLU, Sigmoid };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a) noexcept;

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = {});
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor activation(Activation kind, const Tensor& x);
// ELU with alpha = 1.
Tensor elu(const Tensor& x);
Tensor silu(const Tensor& x);
// Exact (erf) form.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis = -1);

// a: [..., K] (leading axes flattened into rows), b: [K, P] -> [..., P].
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [..., K], b: [P, K] -> [..., P]; i.e. a * b^T without materializing b^T.
Tensor matmul_transposed(const Tensor& a, const Tensor& b);

// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gain + bias,
// with the population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Inverted dropout. In eval mode, or with rate == 0, returns `x` itself.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);
// Stochastic depth: drops whole samples along axis 0. Same identity rules.
Tensor drop_path(const Tensor& x, double rate, bool training, Rng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Row lookup: ids index rows of table [V, D]; result shape is prefix + [D].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, Shape prefix);
// x: [B, N, D] -> [B, D], the rows at sequence position `position`.
Tensor take_position(const Tensor& x, std::size_t position);
// Multiplies each last-axis row r of x by factors[r] (a constant, no grad).
Tensor row_scale(const Tensor& x, std::span<const double> factors);

}  // namespace grela::ops
