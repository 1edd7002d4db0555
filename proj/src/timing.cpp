#include "meadow/timing.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <queue>

namespace meadow {

const char* to_string(Dataflow d) { return d == Dataflow::Gemm ? "gemm" : "tphs"; }

const char* to_string(TphsStage s) {
    switch (s) {
        case TphsStage::Q: return "Q";
        case TphsStage::QKT: return "QKT";
        case TphsStage::Max: return "MAX";
        case TphsStage::Exp: return "EXP";
        case TphsStage::Div: return "DIV";
        case TphsStage::Smv: return "SMV";
    }
    return "?";
}

u64 transfer_cycles(u64 bits, u64 bandwidth_bps, u64 clock_hz) {
    if (bits == 0) return 0;
    const unsigned __int128 num =
        static_cast<unsigned __int128>(bits) * clock_hz + (bandwidth_bps - 1);
    return static_cast<u64>(num / bandwidth_bps);
}

u64 matmul_cycles(const LayerSpec& spec, const HardwareConfig& hw) {
    const u64 passes = ceil_div(spec.inner, hw.mults_per_pe);
    return ceil_div(spec.rows * spec.cols * passes, hw.num_parallel_pes);
}

u64 sm_pipeline_timing(u64 tokens, u64 features) {
    return (tokens + kSmStages.size() - 1) * features;
}

u64 ScheduleTrace::makespan() const {
    u64 m = 0;
    for (const auto& ev : events) m = std::max(m, ev.end_cycle);
    return m;
}

u64 closed_form_tphs_cycles(const TphsPipelineSpec& p) {
    return p.heads * (p.lane_groups() + kTphsStageCount - 1) * p.stage_interval_cycles;
}

ScheduleTrace event_sim_tphs(const TphsPipelineSpec& p) {
    const u64 groups = p.lane_groups();
    const u64 interval = p.stage_interval_cycles;

    // Discrete-event engine: each stage is an exclusive resource with a FIFO
    // of waiting lane groups; a group requests stage s+1 the moment it leaves
    // stage s. Heads run back to back with a full pipeline drain between them.
    struct Completion {
        u64 time;
        u64 seq;
        u64 group;
        std::size_t stage;
        bool operator>(const Completion& o) const {
            return std::tie(time, seq) > std::tie(o.time, o.seq);
        }
    };

    ScheduleTrace trace;
    trace.events.reserve(p.heads * groups * kTphsStageCount);

    u64 head_start = 0;
    for (u64 h = 0; h < p.heads; ++h) {
        std::array<bool, kTphsStageCount> busy{};
        std::array<std::deque<u64>, kTphsStageCount> waiting;
        std::priority_queue<Completion, std::vector<Completion>, std::greater<>> pending;
        u64 seq = 0;
        u64 head_end = head_start;

        auto try_start = [&](std::size_t stage, u64 now) {
            if (busy[stage] || waiting[stage].empty()) return;
            const u64 g = waiting[stage].front();
            waiting[stage].pop_front();
            busy[stage] = true;
            trace.events.push_back({h, g, kTphsStages[stage], now, now + interval});
            pending.push({now + interval, seq++, g, stage});
        };

        for (u64 g = 0; g < groups; ++g) waiting[0].push_back(g);
        try_start(0, head_start);

        while (!pending.empty()) {
            const Completion done = pending.top();
            pending.pop();
            busy[done.stage] = false;
            head_end = std::max(head_end, done.time);
            if (done.stage + 1 < kTphsStageCount) waiting[done.stage + 1].push_back(done.group);
            try_start(done.stage, done.time);
            if (done.stage + 1 < kTphsStageCount) try_start(done.stage + 1, done.time);
        }
        head_start = head_end;
    }
    return trace;
}

void write_trace_csv(const std::filesystem::path& path, const ScheduleTrace& t) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "head,group,stage,start_cycle,end_cycle\n";
    for (const auto& ev : t.events)
        out << ev.head << ',' << ev.group << ',' << to_string(ev.stage) << ',' << ev.start_cycle
            << ',' << ev.end_cycle << '\n';
}

AttentionShapes attention_shapes(const std::vector<LayerSpec>& layers) {
    AttentionShapes s{};
    bool q = false, qkt = false, sm = false, smv = false;
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerKind::Q: if (!q) { s.q = l; q = true; } break;
            case LayerKind::QKT: if (!qkt) { s.qkt = l; qkt = true; } break;
            case LayerKind::SM: if (!sm) { s.sm = l; sm = true; } break;
            case LayerKind::SMV: if (!smv) { s.smv = l; smv = true; } break;
            default: break;
        }
    }
    if (!(q && qkt && sm && smv))
        throw std::invalid_argument("layer sequence lacks a complete attention block");
    return s;
}

u64 max_tphs_lanes(const HardwareConfig& hw) {
    const u64 by_parallel = hw.num_parallel_pes / 2; // one Q PE plus one QKT PE per lane
    return std::min({hw.num_broadcast_pes, hw.num_sm_modules, by_parallel});
}

TphsPipelineSpec build_tphs_spec(const AttentionShapes& s, const HardwareConfig& hw,
                                 u64 tokens, u64 lanes, u64 heads) {
    if (lanes == 0) throw std::invalid_argument("lanes must be >= 1");
    lanes = std::min(lanes, tokens);
    const u64 supply = max_tphs_lanes(hw);
    if (lanes > supply) {
        throw CapacityError("token_lanes " + std::to_string(lanes) +
                            " exceeds the PE supply for " + std::to_string(supply) + " lanes");
    }

    // Intrinsic per-stage work for one lane. Attention stages stream over the
    // key/value span, which is what makes every stage take T cycles in the
    // nominal prefill case.
    const u64 parallel_per_lane = hw.num_parallel_pes / lanes;
    const u64 q_pes = parallel_per_lane - 1; // one parallel PE reserved for QKT
    const u64 q_cycles = ceil_div(s.q.cols * ceil_div(s.q.inner, hw.mults_per_pe), q_pes);
    const u64 qkt_cycles = s.qkt.cols * ceil_div(s.qkt.inner, hw.mults_per_pe);
    const u64 sm_stage_cycles = s.sm.inner; // feature-by-feature
    const u64 smv_cycles = s.smv.inner * ceil_div(s.smv.cols, hw.mults_per_pe);

    const u64 intrinsic =
        std::max({q_cycles, qkt_cycles, sm_stage_cycles, smv_cycles, u64{1}});

    TphsPipelineSpec p;
    p.lanes = lanes;
    p.tokens = tokens;
    p.heads = heads;
    p.stage_interval_cycles = std::max(tokens, intrinsic);
    p.interval_stretched = intrinsic > tokens;
    return p;
}

std::pair<TrafficReport, LatencyBreakdown> gemm_layer_timing(
    const LayerSpec& spec, const HardwareConfig& hw, u32 activation_bits, u32 weight_bits,
    const PackedWeightStream* packed, bool include_unique, LatencyModel model) {
    TrafficReport traffic;
    traffic.input_fetch_bits = spec.rows * spec.inner * activation_bits;
    traffic.output_store_bits = spec.rows * spec.cols * activation_bits;

    u64 compute = 0;
    switch (spec.kind) {
        case LayerKind::Q:
        case LayerKind::K:
        case LayerKind::V:
        case LayerKind::Proj:
        case LayerKind::MLP1:
        case LayerKind::MLP2:
            traffic.weight_fetch_bits = packed ? packed_bit_count(*packed, include_unique)
                                               : spec.inner * spec.cols * weight_bits;
            compute = matmul_cycles(spec, hw);
            break;
        case LayerKind::QKT:
        case LayerKind::SMV:
            // second operand is an activation tensor, never packed
            traffic.input_fetch_bits += spec.inner * spec.cols * activation_bits;
            compute = matmul_cycles(spec, hw);
            break;
        case LayerKind::SM:
            compute = sm_pipeline_timing(spec.rows, spec.inner);
            break;
    }

    LatencyBreakdown lat;
    lat.clock_hz = hw.clock_hz;
    lat.model = model;
    lat.fetch_cycles = transfer_cycles(traffic.total_fetch_bits(), hw.dram_bandwidth_bps,
                                       hw.clock_hz);
    lat.compute_cycles = compute;
    lat.store_cycles = transfer_cycles(traffic.output_store_bits, hw.dram_bandwidth_bps,
                                       hw.clock_hz);
    return {traffic, lat};
}

TphsTimingResult tphs_attention_timing(const TphsPipelineSpec& p, const AttentionShapes& s,
                                       const HardwareConfig& hw, u32 activation_bits,
                                       u32 weight_bits, const PackedWeightStream* packed_wq,
                                       bool include_unique, LatencyModel model) {
    TphsTimingResult r;
    r.spec = p;

    const u64 heads = p.heads;
    const u64 kv_span = s.qkt.cols;

    r.traffic.input_fetch_bits = p.tokens * s.q.inner * activation_bits; // tokens, once
    r.traffic.input_fetch_bits += heads * kv_span * s.qkt.inner * activation_bits; // K per head
    r.traffic.input_fetch_bits += heads * s.smv.inner * s.smv.cols * activation_bits; // V per head
    r.traffic.weight_fetch_bits = packed_wq
                                      ? packed_bit_count(*packed_wq, include_unique)
                                      : heads * s.q.inner * s.q.cols * weight_bits;
    r.traffic.output_store_bits = heads * p.tokens * s.smv.cols * activation_bits;
    // Q, QKT and SM intermediates stay on chip: no off-chip bits.

    r.trace = event_sim_tphs(p);

    r.latency.clock_hz = hw.clock_hz;
    r.latency.model = model;
    r.latency.fetch_cycles =
        transfer_cycles(r.traffic.total_fetch_bits(), hw.dram_bandwidth_bps, hw.clock_hz);
    r.latency.compute_cycles = r.trace.makespan();
    r.latency.store_cycles =
        transfer_cycles(r.traffic.output_store_bits, hw.dram_bandwidth_bps, hw.clock_hz);
    return r;
}

namespace {

// GEMM-mode cost of the whole attention block of one decoder layer: per-head
// traffic and matmul cycles scaled by the head count, softmax rows pooled
// across the SM modules.
std::pair<TrafficReport, LatencyBreakdown> gemm_attention_block(const AttentionShapes& s,
                                                                const HardwareConfig& hw,
                                                                const ModelConfig& m) {
    TrafficReport traffic;
    u64 compute = 0;
    for (const LayerSpec* spec : {&s.q, &s.qkt, &s.sm, &s.smv}) {
        auto [t, l] = gemm_layer_timing(*spec, hw, m.activation_bits, m.weight_bits);
        // Q's first operand is the shared token matrix, fetched once per layer.
        const u64 input_mult = spec->kind == LayerKind::Q ? 1 : m.num_heads;
        traffic.weight_fetch_bits += t.weight_fetch_bits * m.num_heads;
        traffic.input_fetch_bits += t.input_fetch_bits * input_mult;
        traffic.output_store_bits += t.output_store_bits * m.num_heads;
        if (spec->kind == LayerKind::SM) {
            compute += sm_pipeline_timing(ceil_div(m.num_heads * spec->rows, hw.num_sm_modules),
                                          spec->inner);
        } else {
            compute += l.compute_cycles * m.num_heads;
        }
    }

    LatencyBreakdown lat;
    lat.clock_hz = hw.clock_hz;
    lat.fetch_cycles =
        transfer_cycles(traffic.total_fetch_bits(), hw.dram_bandwidth_bps, hw.clock_hz);
    lat.compute_cycles = compute;
    lat.store_cycles =
        transfer_cycles(traffic.output_store_bits, hw.dram_bandwidth_bps, hw.clock_hz);
    return {traffic, lat};
}

double flops(const AttentionShapes& s, u64 heads) {
    double macs = 0.0;
    for (const LayerSpec* spec : {&s.q, &s.qkt, &s.smv})
        macs += static_cast<double>(spec->rows) * static_cast<double>(spec->inner) *
                static_cast<double>(spec->cols) * static_cast<double>(heads);
    return 2.0 * macs;
}

} // namespace

DataflowDecision select_dataflow(const HardwareConfig& hw, const ModelConfig& m,
                                 const WorkloadSpec& w) {
    const auto layers = derive_layer_shapes(m, w, Stage::Prefill);
    const AttentionShapes shapes = attention_shapes(layers);
    const u64 tokens = shapes.q.rows;

    DataflowDecision d;
    d.lanes_used = std::min({w.token_lanes, max_tphs_lanes(hw), tokens});

    auto [gt, gl] = gemm_attention_block(shapes, hw, m);
    d.gemm_seconds = gl.total_seconds();

    const TphsPipelineSpec p = build_tphs_spec(shapes, hw, tokens, d.lanes_used, m.num_heads);
    const TphsTimingResult tr =
        tphs_attention_timing(p, shapes, hw, m.activation_bits, m.weight_bits);
    d.tphs_seconds = tr.latency.total_seconds();

    const double ops = flops(shapes, m.num_heads);
    d.gemm_intensity_flops_per_byte = ops / (static_cast<double>(gt.total_bits()) / 8.0);
    d.tphs_intensity_flops_per_byte = ops / (static_cast<double>(tr.traffic.total_bits()) / 8.0);
    d.peak_flops = 2.0 * static_cast<double>(hw.num_parallel_pes) *
                   static_cast<double>(hw.mults_per_pe) * static_cast<double>(hw.clock_hz);
    d.bandwidth_bytes_per_s = static_cast<double>(hw.dram_bandwidth_bps) / 8.0;

    d.choice = pick_dataflow(d.gemm_seconds, d.tphs_seconds);
    return d;
}

} // namespace meadow
