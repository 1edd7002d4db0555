#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "meadow/config.hpp"
#include "meadow/packing.hpp"

namespace meadow {

enum class Dataflow { Gemm, Tphs };
enum class LatencyModel { NoOverlap, Overlap };

const char* to_string(Dataflow d);

inline constexpr u64 ceil_div(u64 a, u64 b) { return (a + b - 1) / b; }

// DRAM transfer time for `bits` through a flat bits/second pipe, in cycles.
u64 transfer_cycles(u64 bits, u64 bandwidth_bps, u64 clock_hz);

struct TrafficReport {
    u64 weight_fetch_bits = 0;
    u64 input_fetch_bits = 0;
    u64 output_store_bits = 0;

    u64 total_fetch_bits() const { return weight_fetch_bits + input_fetch_bits; }
    u64 total_bits() const { return total_fetch_bits() + output_store_bits; }
};

struct LatencyBreakdown {
    u64 fetch_cycles = 0;
    u64 compute_cycles = 0;
    u64 store_cycles = 0;
    u64 clock_hz = 1;
    LatencyModel model = LatencyModel::NoOverlap;

    u64 total_cycles() const {
        if (model == LatencyModel::Overlap)
            return std::max(fetch_cycles, compute_cycles) + store_cycles;
        return fetch_cycles + compute_cycles + store_cycles;
    }
    double total_seconds() const {
        return static_cast<double>(total_cycles()) / static_cast<double>(clock_hz);
    }
};

// PE-array cycles for one matmul-shaped layer instance:
// rows*cols outputs, each needing ceil(inner/mults_per_pe) multiplier passes,
// spread over the parallel PEs.
u64 matmul_cycles(const LayerSpec& spec, const HardwareConfig& hw);

// Three-stage MAX/EXP/DIV pipeline over a token stream, each stage working
// feature-by-feature: (tokens + 3 - 1) * features cycles.
u64 sm_pipeline_timing(u64 tokens, u64 features);

enum class TphsStage { Q, QKT, Max, Exp, Div, Smv };
inline constexpr std::array<TphsStage, 6> kTphsStages = {
    TphsStage::Q, TphsStage::QKT, TphsStage::Max,
    TphsStage::Exp, TphsStage::Div, TphsStage::Smv};
inline constexpr std::array<TphsStage, 3> kSmStages = {
    TphsStage::Max, TphsStage::Exp, TphsStage::Div};
constexpr std::size_t kTphsStageCount = 6;

const char* to_string(TphsStage s);

struct TphsPipelineSpec {
    u64 lanes = 1;  // P, tokens per lane group
    u64 tokens = 1; // T, tokens flowing through the pipeline
    u64 heads = 1;
    u64 stage_interval_cycles = 1; // uniform stage occupancy, >= tokens
    bool interval_stretched = false; // true when intrinsic stage work exceeded T

    u64 lane_groups() const { return ceil_div(tokens, lanes); }
};

struct ScheduleEvent {
    u64 head = 0;
    u64 group = 0;
    TphsStage stage = TphsStage::Q;
    u64 start_cycle = 0;
    u64 end_cycle = 0;
};

struct ScheduleTrace {
    std::vector<ScheduleEvent> events;
    u64 makespan() const;
};

// H * (ceil(T/P) + S - 1) * interval with S = 6 pipeline stages.
u64 closed_form_tphs_cycles(const TphsPipelineSpec& p);

// Discrete-event schedule honoring stage exclusivity, in-order lane-group
// progression, and full pipeline drain between heads.
ScheduleTrace event_sim_tphs(const TphsPipelineSpec& p);

void write_trace_csv(const std::filesystem::path& path, const ScheduleTrace& t);

// Attention sub-layer shapes of one decoder block (per-head).
struct AttentionShapes {
    LayerSpec q, qkt, sm, smv;
};

AttentionShapes attention_shapes(const std::vector<LayerSpec>& block);

// Largest lane count the PE array can feed: one broadcasting PE and one SM
// module per lane, and at least two parallel PEs per lane (Q plus QKT).
u64 max_tphs_lanes(const HardwareConfig& hw);

// Builds the pipeline spec for an attention block; throws CapacityError when
// the lane request cannot be supplied. The stage interval is max(T, slowest
// intrinsic stage work) and interval_stretched flags the generalized case.
TphsPipelineSpec build_tphs_spec(const AttentionShapes& s, const HardwareConfig& hw,
                                 u64 tokens, u64 lanes, u64 heads);

// Per-layer GEMM-mode cost for a single layer instance. Weight-bearing kinds
// fetch inner*cols*weight_bits (or the packed stream size); QKT/SMV fetch
// their second operand at activation precision; SM has no second operand and
// uses the pipelined softmax timing.
std::pair<TrafficReport, LatencyBreakdown> gemm_layer_timing(
    const LayerSpec& spec, const HardwareConfig& hw, u32 activation_bits, u32 weight_bits,
    const PackedWeightStream* packed = nullptr, bool include_unique = true,
    LatencyModel model = LatencyModel::NoOverlap);

struct TphsTimingResult {
    TrafficReport traffic;
    LatencyBreakdown latency;
    ScheduleTrace trace;
    TphsPipelineSpec spec;
};

// Whole attention block under TPHS: inputs once, per-head W_Q / K / V fetches,
// per-head output stores, zero intermediate traffic, compute from the event
// simulator.
TphsTimingResult tphs_attention_timing(const TphsPipelineSpec& p, const AttentionShapes& s,
                                       const HardwareConfig& hw, u32 activation_bits,
                                       u32 weight_bits,
                                       const PackedWeightStream* packed_wq = nullptr,
                                       bool include_unique = true,
                                       LatencyModel model = LatencyModel::NoOverlap);

struct DataflowDecision {
    Dataflow choice = Dataflow::Gemm;
    double gemm_seconds = 0.0;
    double tphs_seconds = 0.0;
    double gemm_intensity_flops_per_byte = 0.0; // roofline x-coordinate
    double tphs_intensity_flops_per_byte = 0.0;
    double peak_flops = 0.0;
    double bandwidth_bytes_per_s = 0.0;
    u64 lanes_used = 1;
};

// Ties prefer GEMM (simpler control).
inline Dataflow pick_dataflow(double gemm_seconds, double tphs_seconds) {
    return tphs_seconds < gemm_seconds ? Dataflow::Tphs : Dataflow::Gemm;
}

// Attention-block latency under both dataflows for the given workload; the
// lane count is clamped to hardware capacity so both options are evaluable.
DataflowDecision select_dataflow(const HardwareConfig& hw, const ModelConfig& m,
                                 const WorkloadSpec& w);

} // namespace meadow
