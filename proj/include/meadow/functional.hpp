#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "meadow/tensor.hpp"

namespace meadow {

// Exponent lookup table over [input_min, 0]; entry k holds
// exp(input_min + k*step) with step = |input_min| / (num_entries - 1).
// Lookups use nearest-entry indexing, no interpolation, and inputs are
// clamped to the table domain the way a hardware table read would be.
struct ExpLut {
    u64 num_entries = 0;
    double input_min = 0.0;
    std::vector<double> table;

    static ExpLut make(u64 num_entries = 1024, double input_min = -16.0);
    double step() const { return -input_min / static_cast<double>(num_entries - 1); }
    double lookup(double x) const;
};

// exp(x_i - max) / sum_j exp(x_j - max); exact exp by default, table exp when
// lut is given.
std::vector<double> softmax_stable(std::span<const double> x, const ExpLut* lut = nullptr);

// Row i of the result is softmax(q_i . K^T) . V.
Tensor2D attention_head(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v,
                        const ExpLut* lut = nullptr);

// Per-head attention operands: the Q projection weights plus precomputed
// K and V tensors for each head.
struct DecoderWeights {
    std::vector<Tensor2D> wq; // each d_model x head_dim
    std::vector<Tensor2D> k;  // each seq_len x head_dim
    std::vector<Tensor2D> v;  // each seq_len x head_dim
};

// Evaluates the attention block twice over the same operands: head-major all
// tokens at once (GEMM order) and head-sequential with `lanes` tokens at a
// time (TPHS order). Outputs are tokens x (heads*head_dim), heads concatenated.
std::pair<Tensor2D, Tensor2D> decoder_forward_two_orders(const DecoderWeights& w,
                                                         const Tensor2D& inputs, u64 lanes,
                                                         const ExpLut* lut = nullptr);

} // namespace meadow
