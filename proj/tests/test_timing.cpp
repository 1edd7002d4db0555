#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "meadow/timing.hpp"

using namespace meadow;

namespace {

HardwareConfig table_hw() {
    HardwareConfig hw;
    hw.num_parallel_pes = 84;
    hw.num_broadcast_pes = 12;
    hw.mults_per_pe = 64;
    hw.num_sm_modules = 84;
    hw.weight_bram_bytes = hw.input_bram_bytes = hw.output_bram_bytes = 1 << 20;
    hw.rf_bytes = 4096;
    hw.clock_hz = 100000000;
    hw.dram_bandwidth_bps = 1000000000;
    hw.dram_word_bits = 64;
    return hw;
}

ModelConfig opt125m() {
    ModelConfig m;
    m.name = "opt-125m";
    m.num_layers = 12;
    m.d_model = 768;
    m.num_heads = 12;
    m.head_dim = 64;
    m.mlp_hidden = 3072;
    m.weight_bits = 8;
    m.activation_bits = 8;
    return m;
}

} // namespace

TEST_CASE("transfer cycles follow bits over bits-per-cycle, rounded up") {
    // 1 MB at 1 Gbps under a 100 MHz clock: 8388608 bits / 10 bits-per-cycle
    CHECK(transfer_cycles(8388608, 1000000000, 100000000) == 838861);
    CHECK(transfer_cycles(0, 1000000000, 100000000) == 0);
    CHECK(transfer_cycles(10, 1000000000, 100000000) == 1);
    // no overflow on large products
    CHECK(transfer_cycles(u64{1} << 40, 1000000000, u64{1} << 30) > 0);
}

TEST_CASE("unit matmul costs one cycle and eight bits per tensor") {
    HardwareConfig hw = table_hw();
    LayerSpec spec{LayerKind::Proj, 1, 1, 1, false};
    auto [t, l] = gemm_layer_timing(spec, hw, 8, 8);
    CHECK(t.input_fetch_bits == 8);
    CHECK(t.weight_fetch_bits == 8);
    CHECK(t.output_store_bits == 8);
    CHECK(l.compute_cycles == 1);
}

TEST_CASE("full-width projection compute matches the arithmetic oracle") {
    HardwareConfig hw = table_hw();
    LayerSpec spec{LayerKind::Proj, 512, 768, 768, false};
    auto [t, l] = gemm_layer_timing(spec, hw, 8, 8);
    // oracle: ceil(512*768*ceil(768/64) / 84)
    const u64 passes = (768 + 63) / 64;
    const u64 oracle = (512ull * 768 * passes + 83) / 84;
    CHECK(oracle == 56174);
    CHECK(l.compute_cycles == oracle);
    CHECK(t.weight_fetch_bits == 768ull * 768 * 8);
}

TEST_CASE("softmax pipeline timing is (tokens + 2) * features") {
    CHECK(sm_pipeline_timing(1, 4) == 12);
    CHECK(sm_pipeline_timing(4, 4) == 24);
    CHECK(sm_pipeline_timing(10, 7) == 84);
}

TEST_CASE("the softmax pipeline is exactly MAX, EXP, DIV") {
    REQUIRE(kSmStages.size() == 3);
    CHECK(kSmStages[0] == TphsStage::Max);
    CHECK(kSmStages[1] == TphsStage::Exp);
    CHECK(kSmStages[2] == TphsStage::Div);
    // and the full pipeline interleaves them between QKT and SMV
    CHECK(kTphsStages[2] == TphsStage::Max);
    CHECK(kTphsStages[5] == TphsStage::Smv);
}

TEST_CASE("closed-form pipeline cycles") {
    TphsPipelineSpec p;
    p.heads = 3;
    p.tokens = 4;
    p.lanes = 2;
    p.stage_interval_cycles = 4;
    CHECK(closed_form_tphs_cycles(p) == 84); // 3 * (2 + 5) * 4

    p.heads = 1;
    p.tokens = 1;
    p.lanes = 1;
    p.stage_interval_cycles = 1;
    CHECK(closed_form_tphs_cycles(p) == 6);

    p.heads = 12;
    p.tokens = 512;
    p.lanes = 2;
    p.stage_interval_cycles = 512;
    CHECK(closed_form_tphs_cycles(p) == 1603584);
}

TEST_CASE("event simulation reproduces the documented three-head schedule") {
    TphsPipelineSpec p;
    p.heads = 3;
    p.tokens = 4;
    p.lanes = 2;
    p.stage_interval_cycles = 4;
    const auto trace = event_sim_tphs(p);

    CHECK(trace.makespan() == 84);
    CHECK(trace.events.size() == 3 * 2 * 6); // heads * groups * stages

    // first head's first group walks the stages back to back
    std::map<std::pair<u64, u64>, std::vector<ScheduleEvent>> by_group;
    for (const auto& ev : trace.events) by_group[{ev.head, ev.group}].push_back(ev);
    const auto& g00 = by_group[{0, 0}];
    REQUIRE(g00.size() == 6);
    for (std::size_t s = 0; s < 6; ++s) {
        CHECK(g00[s].stage == kTphsStages[s]);
        CHECK(g00[s].start_cycle == 4 * s);
        CHECK(g00[s].end_cycle == 4 * (s + 1));
    }
    // second group trails one interval behind
    const auto& g01 = by_group[{0, 1}];
    for (std::size_t s = 0; s < 6; ++s) CHECK(g01[s].start_cycle == 4 * (s + 1));
    // second head starts only after the first fully drains
    CHECK(by_group[{1, 0}].front().start_cycle == 28);
}

TEST_CASE("single-lane execution serializes lane groups") {
    TphsPipelineSpec p;
    p.heads = 2;
    p.tokens = 5;
    p.lanes = 1;
    p.stage_interval_cycles = 7;
    const auto trace = event_sim_tphs(p);
    CHECK(trace.makespan() == closed_form_tphs_cycles(p));
    CHECK(trace.makespan() == 2 * (5 + 5) * 7);
}

TEST_CASE("event simulation equals the closed form over random configs") {
    std::mt19937_64 rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        TphsPipelineSpec p;
        p.heads = 1 + rng() % 64;
        p.tokens = 1 + rng() % 64;
        p.lanes = 1 + rng() % 64;
        p.stage_interval_cycles = p.tokens + rng() % 100;
        CHECK(event_sim_tphs(p).makespan() == closed_form_tphs_cycles(p));
    }
}

TEST_CASE("trace invariants: stage exclusivity and in-order progression") {
    std::mt19937_64 rng(505);
    for (int trial = 0; trial < 10; ++trial) {
        TphsPipelineSpec p;
        p.heads = 1 + rng() % 8;
        p.tokens = 1 + rng() % 32;
        p.lanes = 1 + rng() % 8;
        p.stage_interval_cycles = p.tokens + rng() % 16;
        const auto trace = event_sim_tphs(p);

        std::map<TphsStage, std::vector<std::pair<u64, u64>>> occupancy;
        std::map<std::pair<u64, u64>, u64> last_start;
        std::map<std::pair<u64, u64>, std::size_t> stage_count;
        for (const auto& ev : trace.events) {
            for (const auto& [s0, e0] : occupancy[ev.stage])
                CHECK((ev.end_cycle <= s0 || ev.start_cycle >= e0)); // no overlap
            occupancy[ev.stage].emplace_back(ev.start_cycle, ev.end_cycle);

            const auto key = std::make_pair(ev.head, ev.group);
            if (stage_count[key] > 0) CHECK(ev.start_cycle > last_start[key]);
            last_start[key] = ev.start_cycle;
            ++stage_count[key];
        }
        for (const auto& [key, n] : stage_count) CHECK(n == kTphsStageCount);
    }
}

TEST_CASE("pipeline spec derives the nominal token interval for prefill") {
    const auto m = opt125m();
    WorkloadSpec w;
    w.prefill_tokens = 512;
    w.token_lanes = 8;
    const auto shapes = attention_shapes(derive_layer_shapes(m, w, Stage::Prefill));
    const auto p = build_tphs_spec(shapes, table_hw(), 512, 8, m.num_heads);
    CHECK(p.stage_interval_cycles == 512); // every stage streams over T positions
    CHECK_FALSE(p.interval_stretched);
    CHECK(p.lane_groups() == 64);
}

TEST_CASE("decode stretches the interval to the attention span") {
    const auto m = opt125m();
    WorkloadSpec w;
    w.prefill_tokens = 512;
    w.decode_step_index = 64;
    w.token_lanes = 8;
    const auto shapes = attention_shapes(derive_layer_shapes(m, w, Stage::Decode));
    const auto p = build_tphs_spec(shapes, table_hw(), 1, 8, m.num_heads);
    CHECK(p.lanes == 1); // one token in flight
    CHECK(p.stage_interval_cycles == 576);
    CHECK(p.interval_stretched);
    CHECK(closed_form_tphs_cycles(p) == 12 * 6 * 576);
}

TEST_CASE("lane demand beyond the PE supply is a capacity error") {
    const auto m = opt125m();
    WorkloadSpec w;
    w.prefill_tokens = 512;
    w.token_lanes = 8;
    HardwareConfig hw = table_hw();
    hw.num_broadcast_pes = 2; // at most two lanes
    const auto shapes = attention_shapes(derive_layer_shapes(m, w, Stage::Prefill));
    CHECK(max_tphs_lanes(hw) == 2);
    CHECK_THROWS_AS(build_tphs_spec(shapes, hw, 512, 8, m.num_heads), CapacityError);
}

TEST_CASE("tphs keeps intermediates on chip while gemm round-trips them") {
    const auto m = opt125m();
    const auto hw = table_hw();
    WorkloadSpec w;
    w.prefill_tokens = 512;
    w.token_lanes = 8;
    const auto shapes = attention_shapes(derive_layer_shapes(m, w, Stage::Prefill));

    const auto p = build_tphs_spec(shapes, hw, 512, 8, m.num_heads);
    const auto r = tphs_attention_timing(p, shapes, hw, m.activation_bits, m.weight_bits);

    const u64 T = 512, H = 12, A = 8, D = 768, HD = 64;
    CHECK(r.traffic.input_fetch_bits == T * D * A + 2 * H * T * HD * A); // tokens + K + V
    CHECK(r.traffic.weight_fetch_bits == H * D * HD * A);
    CHECK(r.traffic.output_store_bits == T * D * A);

    // gemm stores the QKT and SM intermediates off chip: 2*H*T*T*A bits
    auto [qkt_t, qkt_l] = gemm_layer_timing(shapes.qkt, hw, m.activation_bits, m.weight_bits);
    auto [sm_t, sm_l] = gemm_layer_timing(shapes.sm, hw, m.activation_bits, m.weight_bits);
    CHECK((qkt_t.output_store_bits + sm_t.output_store_bits) * H == 2 * H * T * T * A);
}

TEST_CASE("tphs traffic advantage grows with tokens and heads") {
    const auto hw = table_hw();
    auto attention_bits = [&](u64 tokens, u64 heads, Dataflow df) {
        ModelConfig m = opt125m();
        m.num_heads = heads;
        m.d_model = heads * m.head_dim;
        m.mlp_hidden = 4 * m.d_model;
        WorkloadSpec w;
        w.prefill_tokens = tokens;
        w.token_lanes = 1;
        const auto shapes = attention_shapes(derive_layer_shapes(m, w, Stage::Prefill));
        if (df == Dataflow::Tphs) {
            const auto p = build_tphs_spec(shapes, hw, tokens, 1, heads);
            return tphs_attention_timing(p, shapes, hw, m.activation_bits, m.weight_bits)
                .traffic.total_bits();
        }
        u64 bits = 0;
        for (const LayerSpec* s : {&shapes.q, &shapes.qkt, &shapes.sm, &shapes.smv}) {
            auto [t, l] = gemm_layer_timing(*s, hw, m.activation_bits, m.weight_bits);
            const u64 input_mult = s->kind == LayerKind::Q ? 1 : heads;
            bits += t.weight_fetch_bits * heads + t.input_fetch_bits * input_mult +
                    t.output_store_bits * heads;
        }
        return bits;
    };

    u64 prev_gap = 0;
    for (u64 tokens : {2ull, 8ull, 32ull, 128ull}) {
        const u64 gemm = attention_bits(tokens, 4, Dataflow::Gemm);
        const u64 tphs = attention_bits(tokens, 4, Dataflow::Tphs);
        CHECK(tphs < gemm);
        CHECK(gemm - tphs > prev_gap);
        prev_gap = gemm - tphs;
    }
    prev_gap = 0;
    for (u64 heads : {1ull, 2ull, 4ull, 8ull}) {
        const u64 gemm = attention_bits(64, heads, Dataflow::Gemm);
        const u64 tphs = attention_bits(64, heads, Dataflow::Tphs);
        CHECK(tphs < gemm);
        CHECK(gemm - tphs > prev_gap);
        prev_gap = gemm - tphs;
    }
}

TEST_CASE("latency never increases with bandwidth") {
    const auto m = opt125m();
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        LayerSpec spec{LayerKind::MLP1, 1 + rng() % 512, 768, 3072, false};
        u64 prev = ~0ull;
        HardwareConfig hw = table_hw();
        for (u64 bw : {1ull, 3ull, 6ull, 12ull, 51ull}) {
            hw.dram_bandwidth_bps = bw * 1000000000ull;
            auto [t, l] = gemm_layer_timing(spec, hw, m.activation_bits, m.weight_bits);
            CHECK(l.total_cycles() <= prev);
            prev = l.total_cycles();
        }
    }
}

TEST_CASE("a packed stream feeds exactly its bit count into the weight fetch") {
    std::mt19937_64 rng(71);
    WeightMatrix wm;
    wm.rows = 64;
    wm.cols = 64;
    wm.elem_bits = 8;
    wm.elems.resize(64 * 64);
    for (auto& v : wm.elems) v = static_cast<i32>(rng() % 16) - 8;
    const auto stream = encode_weights(wm, 8, 64);

    const auto hw = table_hw();
    LayerSpec spec{LayerKind::Proj, 4, 64, 64, false};
    for (bool include : {true, false}) {
        auto [t, l] = gemm_layer_timing(spec, hw, 8, 8, &stream, include);
        CHECK(t.weight_fetch_bits == packed_bit_count(stream, include));
    }
}

TEST_CASE("breakdown totals follow the latency model") {
    LatencyBreakdown b;
    b.fetch_cycles = 100;
    b.compute_cycles = 60;
    b.store_cycles = 10;
    b.clock_hz = 1000;
    CHECK(b.total_cycles() == 170);
    CHECK(b.total_seconds() == doctest::Approx(0.170));
    b.model = LatencyModel::Overlap;
    CHECK(b.total_cycles() == 110); // max(fetch, compute) + store
}

TEST_CASE("dataflow ties prefer gemm") {
    CHECK(pick_dataflow(1.0, 1.0) == Dataflow::Gemm);
    CHECK(pick_dataflow(1.0, 0.999) == Dataflow::Tphs);
    CHECK(pick_dataflow(0.999, 1.0) == Dataflow::Gemm);
}

TEST_CASE("dataflow selection flips between bandwidth corners") {
    const auto m = opt125m();
    WorkloadSpec w;
    w.prefill_tokens = 512;
    w.decode_step_index = 64;
    w.token_lanes = 8;

    HardwareConfig low = table_hw(); // 14 PEs total, 1 Gbps
    low.num_parallel_pes = 12;
    low.num_broadcast_pes = 2;
    low.num_sm_modules = 12;
    low.dram_bandwidth_bps = 1000000000;
    const auto a = select_dataflow(low, m, w);
    CHECK(a.choice == Dataflow::Tphs);
    CHECK(a.lanes_used == 2);
    CHECK(a.tphs_seconds < a.gemm_seconds);

    HardwareConfig high = table_hw(); // 96 PEs total, 51 Gbps
    high.dram_bandwidth_bps = 51000000000ull;
    const auto b = select_dataflow(high, m, w);
    CHECK(b.choice == Dataflow::Gemm);
    CHECK(b.gemm_seconds <= b.tphs_seconds);
    // roofline coordinates round out the rationale record
    CHECK(b.gemm_intensity_flops_per_byte > 0);
    CHECK(b.tphs_intensity_flops_per_byte > b.gemm_intensity_flops_per_byte);
    CHECK(b.peak_flops > 0);
}
