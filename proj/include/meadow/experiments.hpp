#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "meadow/config.hpp"
#include "meadow/packing.hpp"
#include "meadow/timing.hpp"

namespace meadow {

enum class IdDist { Uniform, Zipf };

// Synthetic stand-in for real checkpoint weights: a dictionary of
// target_unique_chunks distinct chunks sampled under the chosen ID
// distribution. Every chunk occurs at least once, so the achieved unique
// count equals the target exactly.
struct SyntheticWeightSpec {
    u64 rows = 0;
    u64 cols = 0;
    u64 chunk_size = 8;
    u64 target_unique_chunks = 1;
    IdDist dist = IdDist::Uniform;
    double zipf_s = 1.0;
    u64 seed = 1;
    u32 weight_bits = 8;
};

WeightMatrix gen_synthetic_weights(const SyntheticWeightSpec& spec);

// Redundancy profile applied to every weight matrix the runner fabricates.
struct SynthProfile {
    u64 seed = 1;
    u64 target_unique = 2500;
    IdDist dist = IdDist::Zipf;
    double zipf_s = 1.45;
};

enum class DataflowPolicy { Auto, ForceGemm, ForceTphs };

struct RunOptions {
    bool packing = true;
    DataflowPolicy dataflow = DataflowPolicy::Auto;
    u64 chunk_size = 8;
    bool include_unique = true;
    LatencyModel latency_model = LatencyModel::NoOverlap;
    SynthProfile synth;
};

inline RunOptions baseline_options() {
    RunOptions o;
    o.packing = false;
    o.dataflow = DataflowPolicy::ForceGemm;
    return o;
}

// Report row label: the nine decoder sub-layers, plus the fused attention
// block when it runs under TPHS.
enum class ReportLayer { Q, K, V, QKT, SM, SMV, Proj, MLP1, MLP2, AttnTphs };
const char* to_string(ReportLayer r);

struct LayerTiming {
    ReportLayer layer;
    Dataflow dataflow = Dataflow::Gemm;
    TrafficReport traffic;
    LatencyBreakdown latency;
};

struct TtftReport {
    double total_seconds = 0.0;
    Dataflow attention_dataflow = Dataflow::Gemm;
    std::vector<LayerTiming> layers; // one entry per decoder block per row label
};

struct TbtReport {
    u64 step_index = 0;
    double total_seconds = 0.0;
    Dataflow attention_dataflow = Dataflow::Gemm;
    std::vector<LayerTiming> layers;
};

// Packed streams for the six weight-bearing layer kinds, keyed by kind.
struct WeightStreamSet {
    std::map<LayerKind, PackedWeightStream> streams;
    const PackedWeightStream* find(LayerKind k) const {
        auto it = streams.find(k);
        return it == streams.end() ? nullptr : &it->second;
    }
};

WeightStreamSet build_weight_streams(const ModelConfig& m, const RunOptions& opts,
                                     const HardwareConfig& hw);

TtftReport run_prefill(const ModelConfig& m, const HardwareConfig& hw, const WorkloadSpec& w,
                       const RunOptions& opts, const WeightStreamSet* cached = nullptr);
TbtReport run_decode(const ModelConfig& m, const HardwareConfig& hw, const WorkloadSpec& w,
                     const RunOptions& opts, const WeightStreamSet* cached = nullptr);

struct AblationRow {
    std::string variant; // unpacked | naive | packet_specific | freq_aware
    u64 transfer_bits = 0;             // packets only
    u64 transfer_bits_with_unique = 0; // packets plus dictionary
    double latency_seconds = 0.0;      // dictionary included
    double ratio_vs_unpacked = 0.0;
};

// Transfer cost of one weight matrix under the packing variants of the codec.
// A custom packet format may be supplied; by default the power-of-two ladder
// for the dictionary size is used.
std::vector<AblationRow> packing_ablation(const WeightMatrix& w, const HardwareConfig& hw,
                                          u64 chunk_size,
                                          const PacketFormat* custom_format = nullptr);

u64 config_hash(const ModelConfig& m, const HardwareConfig& hw, const WorkloadSpec& w,
                const RunOptions& opts, Stage stage);

std::string report_csv_rows(u64 hash, Stage stage, const std::vector<LayerTiming>& layers);

// Cartesian sweep over bandwidths x token counts x {baseline, meadow} x
// {prefill, decode}. Rows are ordered by cell key so output is deterministic.
std::string sweep_csv(const ModelConfig& m, const HardwareConfig& hw_base,
                      const std::vector<u64>& bandwidths_bps,
                      const std::vector<u64>& token_counts, const WorkloadSpec& w_base,
                      const RunOptions& meadow_opts);

inline constexpr const char* kSweepCsvSchema = "meadow-sweep-v1";
inline constexpr const char* kCsvHeader =
    "config_hash,stage,layer_kind,dataflow,fetch_cycles,compute_cycles,store_cycles,"
    "total_seconds";

} // namespace meadow
