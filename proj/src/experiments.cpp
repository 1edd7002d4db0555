#include "meadow/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

namespace meadow {

const char* to_string(ReportLayer r) {
    switch (r) {
        case ReportLayer::Q: return "Q";
        case ReportLayer::K: return "K";
        case ReportLayer::V: return "V";
        case ReportLayer::QKT: return "QKT";
        case ReportLayer::SM: return "SM";
        case ReportLayer::SMV: return "SMV";
        case ReportLayer::Proj: return "Proj";
        case ReportLayer::MLP1: return "MLP1";
        case ReportLayer::MLP2: return "MLP2";
        case ReportLayer::AttnTphs: return "ATTN_TPHS";
    }
    return "?";
}

namespace {

ReportLayer report_layer(LayerKind k) {
    switch (k) {
        case LayerKind::Q: return ReportLayer::Q;
        case LayerKind::K: return ReportLayer::K;
        case LayerKind::V: return ReportLayer::V;
        case LayerKind::QKT: return ReportLayer::QKT;
        case LayerKind::SM: return ReportLayer::SM;
        case LayerKind::SMV: return ReportLayer::SMV;
        case LayerKind::Proj: return ReportLayer::Proj;
        case LayerKind::MLP1: return ReportLayer::MLP1;
        case LayerKind::MLP2: return ReportLayer::MLP2;
    }
    return ReportLayer::Q;
}

u64 rng_below(std::mt19937_64& rng, u64 n) { return rng() % n; }

double rng_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Ids drawn from the configured distribution over [0, unique_count).
struct IdSampler {
    std::vector<double> cumulative; // empty for uniform
    u64 unique_count;

    IdSampler(const SyntheticWeightSpec& spec) : unique_count(spec.target_unique_chunks) {
        if (spec.dist == IdDist::Zipf) {
            cumulative.resize(unique_count);
            double acc = 0.0;
            for (u64 k = 0; k < unique_count; ++k) {
                acc += std::pow(static_cast<double>(k + 1), -spec.zipf_s);
                cumulative[k] = acc;
            }
        }
    }

    u64 draw(std::mt19937_64& rng) const {
        if (cumulative.empty()) return rng_below(rng, unique_count);
        const double u = rng_unit(rng) * cumulative.back();
        auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
        return static_cast<u64>(it - cumulative.begin());
    }
};

} // namespace

WeightMatrix gen_synthetic_weights(const SyntheticWeightSpec& spec) {
    if (spec.rows == 0 || spec.cols == 0 || spec.chunk_size == 0)
        throw std::invalid_argument("synthetic weight dims must be >= 1");
    if (spec.cols % spec.chunk_size != 0)
        throw std::invalid_argument("synthetic generator needs cols divisible by chunk_size");
    const u64 total_chunks = spec.rows * spec.cols / spec.chunk_size;
    if (spec.target_unique_chunks == 0 || spec.target_unique_chunks > total_chunks)
        throw std::invalid_argument("target_unique_chunks must be in [1, rows*cols/chunk_size]");
    const double space_bits = static_cast<double>(spec.weight_bits) *
                              static_cast<double>(spec.chunk_size);
    if (space_bits < 63 &&
        spec.target_unique_chunks > (u64{1} << static_cast<u32>(space_bits)))
        throw std::invalid_argument("target_unique_chunks exceeds the distinct-chunk space");

    std::mt19937_64 rng(spec.seed);
    const u64 unique = spec.target_unique_chunks;
    const i32 lo = -(i32(1) << (spec.weight_bits - 1));

    // Dictionary of distinct chunks.
    std::set<std::vector<i32>> seen;
    std::vector<i32> dict;
    dict.reserve(unique * spec.chunk_size);
    std::vector<i32> chunk(spec.chunk_size);
    while (seen.size() < unique) {
        for (auto& v : chunk)
            v = lo + static_cast<i32>(rng_below(rng, u64{1} << spec.weight_bits));
        if (seen.insert(chunk).second) dict.insert(dict.end(), chunk.begin(), chunk.end());
    }

    // Chunk ID sequence: the first `unique` slots hold a random permutation so
    // every chunk occurs and first-occurrence order is independent of
    // frequency; the rest are drawn from the distribution.
    std::vector<u32> ids(total_chunks);
    for (u64 i = 0; i < unique; ++i) ids[i] = static_cast<u32>(i);
    for (u64 i = unique; i > 1; --i)
        std::swap(ids[i - 1], ids[rng_below(rng, i)]);
    const IdSampler sampler(spec);
    for (u64 i = unique; i < total_chunks; ++i)
        ids[i] = static_cast<u32>(sampler.draw(rng));

    WeightMatrix w;
    w.rows = spec.rows;
    w.cols = spec.cols;
    w.elem_bits = spec.weight_bits;
    w.elems.resize(spec.rows * spec.cols);
    const u64 cpr = spec.cols / spec.chunk_size;
    for (u64 r = 0; r < spec.rows; ++r) {
        for (u64 c0 = 0; c0 < cpr; ++c0) {
            const u32 id = ids[r * cpr + c0];
            const i32* src = dict.data() + u64(id) * spec.chunk_size;
            std::copy(src, src + spec.chunk_size,
                      w.elems.begin() + r * spec.cols + c0 * spec.chunk_size);
        }
    }
    return w;
}

namespace {

struct KindShape {
    LayerKind kind;
    u64 rows; // output dimension N
    u64 cols; // inner dimension M
};

std::vector<KindShape> weight_kind_shapes(const ModelConfig& m) {
    return {
        {LayerKind::Q, m.d_model, m.d_model},
        {LayerKind::K, m.d_model, m.d_model},
        {LayerKind::V, m.d_model, m.d_model},
        {LayerKind::Proj, m.d_model, m.d_model},
        {LayerKind::MLP1, m.mlp_hidden, m.d_model},
        {LayerKind::MLP2, m.d_model, m.mlp_hidden},
    };
}

} // namespace

WeightStreamSet build_weight_streams(const ModelConfig& m, const RunOptions& opts,
                                     const HardwareConfig& hw) {
    WeightStreamSet set;
    u64 kind_idx = 0;
    for (const auto& ks : weight_kind_shapes(m)) {
        SyntheticWeightSpec spec;
        spec.rows = ks.rows;
        spec.cols = ks.cols;
        spec.chunk_size = opts.chunk_size;
        spec.weight_bits = m.weight_bits;
        spec.dist = opts.synth.dist;
        spec.zipf_s = opts.synth.zipf_s;
        spec.seed = opts.synth.seed * 1000003ull + kind_idx;
        const u64 total_chunks = ks.rows * ks.cols / opts.chunk_size;
        spec.target_unique_chunks = std::min(opts.synth.target_unique, total_chunks);

        const WeightMatrix w = gen_synthetic_weights(spec);
        set.streams.emplace(ks.kind, encode_weights(w, opts.chunk_size, hw.dram_word_bits));
        ++kind_idx;
    }
    return set;
}

namespace {

// GEMM-mode timing of one layer kind across the whole decoder block: per-head
// kinds aggregate traffic and matmul cycles over the heads, softmax rows pool
// across the SM modules, and a packed stream counts once per weight matrix.
LayerTiming gemm_kind_timing(const LayerSpec& spec, const HardwareConfig& hw,
                             const ModelConfig& m, const RunOptions& opts,
                             const PackedWeightStream* packed) {
    const u64 heads = spec.per_head ? m.num_heads : 1;
    // The Q projection's first operand is the shared token matrix, fetched
    // once per layer; the other per-head kinds consume per-head intermediates.
    const u64 input_mult = spec.kind == LayerKind::Q ? 1 : heads;

    TrafficReport traffic;
    traffic.input_fetch_bits = spec.rows * spec.inner * m.activation_bits * input_mult;
    traffic.output_store_bits = spec.rows * spec.cols * m.activation_bits * heads;

    u64 compute = 0;
    switch (spec.kind) {
        case LayerKind::Q:
        case LayerKind::K:
        case LayerKind::V:
        case LayerKind::Proj:
        case LayerKind::MLP1:
        case LayerKind::MLP2:
            traffic.weight_fetch_bits =
                packed ? packed_bit_count(*packed, opts.include_unique)
                       : spec.inner * spec.cols * m.weight_bits * heads;
            compute = matmul_cycles(spec, hw) * heads;
            break;
        case LayerKind::QKT:
        case LayerKind::SMV:
            traffic.input_fetch_bits += spec.inner * spec.cols * m.activation_bits * heads;
            compute = matmul_cycles(spec, hw) * heads;
            break;
        case LayerKind::SM:
            compute = sm_pipeline_timing(ceil_div(heads * spec.rows, hw.num_sm_modules),
                                         spec.inner);
            break;
    }

    LayerTiming t;
    t.layer = report_layer(spec.kind);
    t.dataflow = Dataflow::Gemm;
    t.traffic = traffic;
    t.latency.clock_hz = hw.clock_hz;
    t.latency.model = opts.latency_model;
    t.latency.fetch_cycles =
        transfer_cycles(traffic.total_fetch_bits(), hw.dram_bandwidth_bps, hw.clock_hz);
    t.latency.compute_cycles = compute;
    t.latency.store_cycles =
        transfer_cycles(traffic.output_store_bits, hw.dram_bandwidth_bps, hw.clock_hz);
    return t;
}

const LayerSpec& shapes_kind(const std::vector<LayerSpec>& layers, LayerKind k) {
    for (const auto& l : layers)
        if (l.kind == k) return l;
    throw std::invalid_argument("layer sequence lacks the requested kind");
}

Dataflow resolve_attention_dataflow(const ModelConfig& m, const HardwareConfig& hw,
                                    const WorkloadSpec& w, DataflowPolicy policy) {
    switch (policy) {
        case DataflowPolicy::ForceGemm: return Dataflow::Gemm;
        case DataflowPolicy::ForceTphs: return Dataflow::Tphs;
        case DataflowPolicy::Auto: return select_dataflow(hw, m, w).choice;
    }
    return Dataflow::Gemm;
}

// One decoder block in execution order. K and V run first (TPHS consumes
// their precomputed outputs), then the attention group, then Proj and MLP.
std::vector<LayerTiming> block_timings(const ModelConfig& m, const HardwareConfig& hw,
                                       const WorkloadSpec& w, const RunOptions& opts,
                                       Stage stage, Dataflow attn,
                                       const WeightStreamSet* streams) {
    const auto layers = derive_layer_shapes(m, w, stage);
    const AttentionShapes shapes = attention_shapes(layers);
    auto packed = [&](LayerKind k) -> const PackedWeightStream* {
        return (opts.packing && streams) ? streams->find(k) : nullptr;
    };

    std::vector<LayerTiming> out;
    if (attn == Dataflow::Tphs) {
        out.push_back(gemm_kind_timing(shapes_kind(layers, LayerKind::K), hw, m, opts,
                                       packed(LayerKind::K)));
        out.push_back(gemm_kind_timing(shapes_kind(layers, LayerKind::V), hw, m, opts,
                                       packed(LayerKind::V)));
        const u64 tokens = shapes.q.rows;
        const TphsPipelineSpec p =
            build_tphs_spec(shapes, hw, tokens, w.token_lanes, m.num_heads);
        const TphsTimingResult r =
            tphs_attention_timing(p, shapes, hw, m.activation_bits, m.weight_bits,
                                  packed(LayerKind::Q), opts.include_unique,
                                  opts.latency_model);
        LayerTiming t;
        t.layer = ReportLayer::AttnTphs;
        t.dataflow = Dataflow::Tphs;
        t.traffic = r.traffic;
        t.latency = r.latency;
        out.push_back(t);
    } else {
        for (LayerKind k : {LayerKind::Q, LayerKind::K, LayerKind::V, LayerKind::QKT,
                            LayerKind::SM, LayerKind::SMV}) {
            out.push_back(gemm_kind_timing(shapes_kind(layers, k), hw, m, opts, packed(k)));
        }
    }
    for (LayerKind k : {LayerKind::Proj, LayerKind::MLP1, LayerKind::MLP2})
        out.push_back(gemm_kind_timing(shapes_kind(layers, k), hw, m, opts, packed(k)));
    return out;
}

double sum_seconds(const std::vector<LayerTiming>& layers) {
    double s = 0.0;
    for (const auto& l : layers) s += l.latency.total_seconds();
    return s;
}

} // namespace

TtftReport run_prefill(const ModelConfig& m, const HardwareConfig& hw, const WorkloadSpec& w,
                       const RunOptions& opts, const WeightStreamSet* cached) {
    m.validate();
    hw.validate();
    w.validate();

    WeightStreamSet local;
    const WeightStreamSet* streams = cached;
    if (opts.packing && !streams) {
        local = build_weight_streams(m, opts, hw);
        streams = &local;
    }

    TtftReport rep;
    rep.attention_dataflow = resolve_attention_dataflow(m, hw, w, opts.dataflow);
    const auto block = block_timings(m, hw, w, opts, Stage::Prefill, rep.attention_dataflow,
                                     streams);
    rep.layers.reserve(block.size() * m.num_layers);
    for (u64 l = 0; l < m.num_layers; ++l)
        rep.layers.insert(rep.layers.end(), block.begin(), block.end());
    rep.total_seconds = sum_seconds(rep.layers);
    return rep;
}

TbtReport run_decode(const ModelConfig& m, const HardwareConfig& hw, const WorkloadSpec& w,
                     const RunOptions& opts, const WeightStreamSet* cached) {
    m.validate();
    hw.validate();
    w.validate();

    WeightStreamSet local;
    const WeightStreamSet* streams = cached;
    if (opts.packing && !streams) {
        local = build_weight_streams(m, opts, hw);
        streams = &local;
    }

    TbtReport rep;
    rep.step_index = w.decode_step_index;
    rep.attention_dataflow = resolve_attention_dataflow(m, hw, w, opts.dataflow);
    const auto block = block_timings(m, hw, w, opts, Stage::Decode, rep.attention_dataflow,
                                     streams);
    rep.layers.reserve(block.size() * m.num_layers);
    for (u64 l = 0; l < m.num_layers; ++l)
        rep.layers.insert(rep.layers.end(), block.begin(), block.end());
    rep.total_seconds = sum_seconds(rep.layers);
    return rep;
}

std::vector<AblationRow> packing_ablation(const WeightMatrix& w, const HardwareConfig& hw,
                                          u64 chunk_size, const PacketFormat* custom_format) {
    auto seconds = [&](u64 bits) {
        return static_cast<double>(transfer_cycles(bits, hw.dram_bandwidth_bps, hw.clock_hz)) /
               static_cast<double>(hw.clock_hz);
    };

    const u64 raw_bits = w.rows * w.cols * w.elem_bits;
    std::vector<AblationRow> rows;
    rows.push_back({"unpacked", raw_bits, raw_bits, seconds(raw_bits), 1.0});

    auto [u, e] = build_unique_matrix(w, chunk_size);
    const PacketFormat f = custom_format
                               ? *custom_format
                               : PacketFormat::for_unique_count(u.num_chunks(),
                                                                hw.dram_word_bits);

    auto add = [&](const char* name, const PackedWeightStream& s) {
        AblationRow r;
        r.variant = name;
        r.transfer_bits = packed_bit_count(s, false);
        r.transfer_bits_with_unique = packed_bit_count(s, true);
        r.latency_seconds = seconds(r.transfer_bits_with_unique);
        r.ratio_vs_unpacked = rows.front().latency_seconds / r.latency_seconds;
        rows.push_back(std::move(r));
    };

    add("naive", pack_packets_uniform(e, u, f));
    add("packet_specific", pack_packets(e, u, f));
    auto [u2, e2] = reindex_by_frequency(u, e);
    add("freq_aware", pack_packets(e2, u2, f));
    return rows;
}

u64 config_hash(const ModelConfig& m, const HardwareConfig& hw, const WorkloadSpec& w,
                const RunOptions& opts, Stage stage) {
    std::ostringstream os;
    os << m.name << '|' << m.num_layers << '|' << m.d_model << '|' << m.num_heads << '|'
       << m.head_dim << '|' << m.mlp_hidden << '|' << m.weight_bits << '|'
       << m.activation_bits << '|' << hw.num_parallel_pes << '|' << hw.num_broadcast_pes << '|'
       << hw.mults_per_pe << '|' << hw.num_sm_modules << '|' << hw.weight_bram_bytes << '|'
       << hw.input_bram_bytes << '|' << hw.output_bram_bytes << '|' << hw.rf_bytes << '|'
       << hw.clock_hz << '|' << hw.dram_bandwidth_bps << '|' << hw.dram_word_bits << '|'
       << w.prefill_tokens << '|' << w.decode_step_index << '|' << w.token_lanes << '|'
       << opts.packing << '|' << static_cast<int>(opts.dataflow) << '|' << opts.chunk_size
       << '|' << opts.include_unique << '|' << static_cast<int>(opts.latency_model) << '|'
       << opts.synth.seed << '|' << opts.synth.target_unique << '|'
       << static_cast<int>(opts.synth.dist) << '|' << opts.synth.zipf_s << '|'
       << to_string(stage);

    u64 h = 1469598103934665603ull;
    for (char c : os.str()) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

std::string hex16(u64 v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fmt_seconds(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12e", s);
    return buf;
}

// Sums block-repeated entries by report label, preserving first appearance
// order.
struct KindTotals {
    std::vector<LayerTiming> rows;

    void add(const LayerTiming& t) {
        for (auto& r : rows) {
            if (r.layer == t.layer) {
                r.traffic.weight_fetch_bits += t.traffic.weight_fetch_bits;
                r.traffic.input_fetch_bits += t.traffic.input_fetch_bits;
                r.traffic.output_store_bits += t.traffic.output_store_bits;
                r.latency.fetch_cycles += t.latency.fetch_cycles;
                r.latency.compute_cycles += t.latency.compute_cycles;
                r.latency.store_cycles += t.latency.store_cycles;
                return;
            }
        }
        rows.push_back(t);
    }
};

} // namespace

std::string report_csv_rows(u64 hash, Stage stage, const std::vector<LayerTiming>& layers) {
    KindTotals totals;
    for (const auto& l : layers) totals.add(l);

    std::ostringstream os;
    u64 fetch = 0, compute = 0, store = 0;
    double seconds = 0.0;
    Dataflow attn = Dataflow::Gemm;
    for (const auto& r : totals.rows) {
        os << hex16(hash) << ',' << to_string(stage) << ',' << to_string(r.layer) << ','
           << to_string(r.dataflow) << ',' << r.latency.fetch_cycles << ','
           << r.latency.compute_cycles << ',' << r.latency.store_cycles << ','
           << fmt_seconds(r.latency.total_seconds()) << '\n';
        fetch += r.latency.fetch_cycles;
        compute += r.latency.compute_cycles;
        store += r.latency.store_cycles;
        seconds += r.latency.total_seconds();
        if (r.dataflow == Dataflow::Tphs) attn = Dataflow::Tphs;
    }
    os << hex16(hash) << ',' << to_string(stage) << ",TOTAL," << to_string(attn) << ',' << fetch
       << ',' << compute << ',' << store << ',' << fmt_seconds(seconds) << '\n';
    return os.str();
}

std::string sweep_csv(const ModelConfig& m, const HardwareConfig& hw_base,
                      const std::vector<u64>& bandwidths_bps,
                      const std::vector<u64>& token_counts, const WorkloadSpec& w_base,
                      const RunOptions& meadow_opts) {
    if (bandwidths_bps.empty() || token_counts.empty())
        throw std::invalid_argument("sweep needs at least one bandwidth and one token count");

    std::vector<u64> bws = bandwidths_bps;
    std::vector<u64> toks = token_counts;
    std::sort(bws.begin(), bws.end());
    bws.erase(std::unique(bws.begin(), bws.end()), bws.end());
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());

    // Weight streams do not depend on bandwidth or token count; build them
    // once for all meadow cells.
    WeightStreamSet streams;
    if (meadow_opts.packing) streams = build_weight_streams(m, meadow_opts, hw_base);

    std::ostringstream os;
    os << "# schema: " << kSweepCsvSchema << '\n' << kCsvHeader << '\n';
    for (u64 bw : bws) {
        for (u64 tok : toks) {
            HardwareConfig hw = hw_base;
            hw.dram_bandwidth_bps = bw;
            WorkloadSpec w = w_base;
            w.prefill_tokens = tok;

            auto emit_cell = [&](const RunOptions& opts, const WeightStreamSet* set) {
                const auto ttft = run_prefill(m, hw, w, opts, set);
                os << report_csv_rows(config_hash(m, hw, w, opts, Stage::Prefill),
                                      Stage::Prefill, ttft.layers);
                const auto tbt = run_decode(m, hw, w, opts, set);
                os << report_csv_rows(config_hash(m, hw, w, opts, Stage::Decode), Stage::Decode,
                                      tbt.layers);
            };
            emit_cell(baseline_options(), nullptr);
            emit_cell(meadow_opts, meadow_opts.packing ? &streams : nullptr);
        }
    }
    return os.str();
}

} // namespace meadow
