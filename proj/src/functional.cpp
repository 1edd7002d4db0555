#include "meadow/functional.hpp"

#include <cmath>
#include <stdexcept>

namespace meadow {

ExpLut ExpLut::make(u64 num_entries, double input_min) {
    if (num_entries < 2 || (num_entries & (num_entries - 1)) != 0)
        throw std::invalid_argument("ExpLut entries must be a power of two >= 2");
    if (input_min >= 0.0) throw std::invalid_argument("ExpLut input_min must be negative");

    ExpLut lut;
    lut.num_entries = num_entries;
    lut.input_min = input_min;
    lut.table.resize(num_entries);
    const double step = -input_min / static_cast<double>(num_entries - 1);
    for (u64 k = 0; k < num_entries; ++k)
        lut.table[k] = std::exp(input_min + static_cast<double>(k) * step);
    return lut;
}

double ExpLut::lookup(double x) const {
    if (x <= input_min) return table.front();
    if (x >= 0.0) return table.back();
    const double idx = (x - input_min) / step();
    u64 k = static_cast<u64>(std::llround(idx));
    if (k >= num_entries) k = num_entries - 1;
    return table[k];
}

std::vector<double> softmax_stable(std::span<const double> x, const ExpLut* lut) {
    if (x.empty()) throw std::invalid_argument("softmax of an empty vector");

    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);

    std::vector<double> out(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = lut ? lut->lookup(x[i] - mx) : std::exp(x[i] - mx);
        out[i] = e;
        sum += e;
    }
    for (double& v : out) v /= sum;
    return out;
}

Tensor2D attention_head(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v,
                        const ExpLut* lut) {
    if (q.cols != k.cols || k.cols != v.cols || k.rows != v.rows)
        throw std::invalid_argument("attention_head operand shapes do not agree");

    Tensor2D out(q.rows, v.cols);
    std::vector<double> scores(k.rows);
    for (u64 i = 0; i < q.rows; ++i) {
        for (u64 j = 0; j < k.rows; ++j) {
            double acc = 0.0;
            for (u64 d = 0; d < q.cols; ++d) acc += q.at(i, d) * k.at(j, d);
            scores[j] = acc;
        }
        const auto probs = softmax_stable(scores, lut);
        for (u64 d = 0; d < v.cols; ++d) {
            double acc = 0.0;
            for (u64 j = 0; j < k.rows; ++j) acc += probs[j] * v.at(j, d);
            out.at(i, d) = acc;
        }
    }
    return out;
}

namespace {

// One token through one head; shared by both traversal orders so the
// arithmetic and accumulation order are identical.
void attend_token(const Tensor2D& inputs, const Tensor2D& wq, const Tensor2D& k,
                  const Tensor2D& v, const ExpLut* lut, u64 token, u64 head, u64 head_dim,
                  Tensor2D& out) {
    std::vector<double> qrow(wq.cols);
    for (u64 c = 0; c < wq.cols; ++c) {
        double acc = 0.0;
        for (u64 d = 0; d < inputs.cols; ++d) acc += inputs.at(token, d) * wq.at(d, c);
        qrow[c] = acc;
    }

    std::vector<double> scores(k.rows);
    for (u64 j = 0; j < k.rows; ++j) {
        double acc = 0.0;
        for (u64 d = 0; d < k.cols; ++d) acc += qrow[d] * k.at(j, d);
        scores[j] = acc;
    }
    const auto probs = softmax_stable(scores, lut);

    for (u64 d = 0; d < v.cols; ++d) {
        double acc = 0.0;
        for (u64 j = 0; j < k.rows; ++j) acc += probs[j] * v.at(j, d);
        out.at(token, head * head_dim + d) = acc;
    }
}

} // namespace

std::pair<Tensor2D, Tensor2D> decoder_forward_two_orders(const DecoderWeights& w,
                                                         const Tensor2D& inputs, u64 lanes,
                                                         const ExpLut* lut) {
    const u64 heads = w.wq.size();
    if (heads == 0 || w.k.size() != heads || w.v.size() != heads)
        throw std::invalid_argument("per-head operand lists must have equal non-zero size");
    if (lanes == 0) throw std::invalid_argument("lanes must be >= 1");
    const u64 head_dim = w.wq[0].cols;
    for (u64 h = 0; h < heads; ++h) {
        if (w.wq[h].rows != inputs.cols || w.wq[h].cols != head_dim ||
            w.k[h].cols != head_dim || w.v[h].cols != head_dim || w.k[h].rows != w.v[h].rows)
            throw std::invalid_argument("per-head operand shapes do not agree");
    }

    const u64 tokens = inputs.rows;
    Tensor2D gemm_order(tokens, heads * head_dim);
    Tensor2D tphs_order(tokens, heads * head_dim);

    // head-major, all tokens per head at once
    for (u64 h = 0; h < heads; ++h)
        for (u64 t = 0; t < tokens; ++t)
            attend_token(inputs, w.wq[h], w.k[h], w.v[h], lut, t, h, head_dim, gemm_order);

    // head-sequential, lanes tokens at a time
    for (u64 h = 0; h < heads; ++h)
        for (u64 g = 0; g < tokens; g += lanes)
            for (u64 t = g; t < std::min(tokens, g + lanes); ++t)
                attend_token(inputs, w.wq[h], w.k[h], w.v[h], lut, t, h, head_dim, tphs_order);

    return {std::move(gemm_order), std::move(tphs_order)};
}

} // namespace meadow
