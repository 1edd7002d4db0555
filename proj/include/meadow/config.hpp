#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "meadow/errors.hpp"

namespace meadow {

using u32 = std::uint32_t;
using u64 = std::uint64_t;

// Decoder-stack shape. head_dim * num_heads must equal d_model.
struct ModelConfig {
    std::string name;
    u64 num_layers = 0;
    u64 d_model = 0;
    u64 num_heads = 0;
    u64 head_dim = 0;
    u64 mlp_hidden = 0;
    u32 weight_bits = 8;
    u32 activation_bits = 8;

    void validate() const;
};

struct HardwareConfig {
    u64 num_parallel_pes = 0;
    u64 num_broadcast_pes = 0;
    u64 mults_per_pe = 0;
    u64 num_sm_modules = 0;
    u64 weight_bram_bytes = 0;
    u64 input_bram_bytes = 0;
    u64 output_bram_bytes = 0;
    u64 rf_bytes = 0;
    u64 clock_hz = 0;
    u64 dram_bandwidth_bps = 0;
    u32 dram_word_bits = 64;

    void validate() const;
};

struct WorkloadSpec {
    u64 prefill_tokens = 1;
    u64 decode_step_index = 0; // the N of "Nth generated token"
    u64 token_lanes = 1;       // tokens processed in parallel under TPHS

    void validate() const;
};

enum class LayerKind { Q, K, V, QKT, SM, SMV, Proj, MLP1, MLP2 };
enum class Stage { Prefill, Decode };

const char* to_string(LayerKind k);
const char* to_string(Stage s);

// One matmul-shaped sub-layer. For per_head kinds the shape describes a single
// head; aggregate over num_heads for whole-layer totals.
struct LayerSpec {
    LayerKind kind;
    u64 rows = 1;  // token dimension (T during prefill, 1 during decode)
    u64 inner = 1; // multiplication dimension
    u64 cols = 1;  // output dimension
    bool per_head = false;
};

struct FullConfig {
    ModelConfig model;
    HardwareConfig hardware;
    WorkloadSpec workload;
};

// Parses a JSON document with the three sections "model", "hardware" and
// "workload". Unknown keys are rejected so sweep configs fail fast.
FullConfig parse_config(const nlohmann::json& doc);
FullConfig load_config(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

// The per-block sub-layer sequence, repeated num_layers times, in execution
// order Q, K, V, QKT, SM, SMV, Proj, MLP1, MLP2. During decode the attention
// span covers prefill_tokens + decode_step_index positions.
std::vector<LayerSpec> derive_layer_shapes(const ModelConfig& m, const WorkloadSpec& w, Stage stage);

// Sub-layers of a single decoder block (the first num-sub-layers entries).
constexpr std::size_t kSubLayersPerBlock = 9;

inline u64 kv_length(const WorkloadSpec& w, Stage stage) {
    return stage == Stage::Decode ? w.prefill_tokens + w.decode_step_index : w.prefill_tokens;
}

} // namespace meadow
