#include "meadow/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace meadow {

namespace {

bool is_power_of_two(u64 v) { return v != 0 && (v & (v - 1)) == 0; }

void require_positive(u64 v, const char* field) {
    if (v == 0) {
        throw ValidationError(std::string(field) + ": must be >= 1");
    }
}

// Pulls a required field and tracks which keys were consumed so leftovers can
// be reported as schema errors.
class SectionReader {
public:
    SectionReader(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw SchemaError("section '" + name_ + "' must be an object");
    }

    u64 get_count(const char* key) {
        const auto& v = fetch(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            throw SchemaError(name_ + "." + key + ": expected a non-negative integer");
        return v.get<u64>();
    }

    std::string get_string(const char* key) {
        const auto& v = fetch(key);
        if (!v.is_string()) throw SchemaError(name_ + "." + key + ": expected a string");
        return v.get<std::string>();
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key()))
                throw SchemaError("unknown key '" + name_ + "." + it.key() + "'");
        }
    }

private:
    const nlohmann::json& fetch(const char* key) {
        auto it = j_.find(key);
        if (it == j_.end()) throw SchemaError("missing key '" + name_ + "." + key + "'");
        seen_.insert(key);
        return *it;
    }

    const nlohmann::json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

} // namespace

void ModelConfig::validate() const {
    require_positive(num_layers, "model.num_layers");
    require_positive(d_model, "model.d_model");
    require_positive(num_heads, "model.num_heads");
    require_positive(head_dim, "model.head_dim");
    require_positive(mlp_hidden, "model.mlp_hidden");
    if (num_heads * head_dim != d_model) {
        std::ostringstream os;
        os << "model.head_dim: num_heads * head_dim must equal d_model (got " << num_heads
           << " * " << head_dim << " != " << d_model << ")";
        throw ValidationError(os.str());
    }
    for (auto [bits, field] : {std::pair<u32, const char*>{weight_bits, "model.weight_bits"},
                               {activation_bits, "model.activation_bits"}}) {
        if (bits != 4 && bits != 8 && bits != 16)
            throw ValidationError(std::string(field) + ": must be one of {4, 8, 16}");
    }
}

void HardwareConfig::validate() const {
    require_positive(num_parallel_pes, "hardware.num_parallel_pes");
    require_positive(num_broadcast_pes, "hardware.num_broadcast_pes");
    require_positive(mults_per_pe, "hardware.mults_per_pe");
    require_positive(num_sm_modules, "hardware.num_sm_modules");
    require_positive(weight_bram_bytes, "hardware.weight_bram_bytes");
    require_positive(input_bram_bytes, "hardware.input_bram_bytes");
    require_positive(output_bram_bytes, "hardware.output_bram_bytes");
    require_positive(rf_bytes, "hardware.rf_bytes");
    require_positive(clock_hz, "hardware.clock_hz");
    require_positive(dram_bandwidth_bps, "hardware.dram_bandwidth_bps");
    if (dram_word_bits < 8 || !is_power_of_two(dram_word_bits))
        throw ValidationError("hardware.dram_word_bits: must be a power of two >= 8");
}

void WorkloadSpec::validate() const {
    require_positive(prefill_tokens, "workload.prefill_tokens");
    require_positive(token_lanes, "workload.token_lanes");
}

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Q: return "Q";
        case LayerKind::K: return "K";
        case LayerKind::V: return "V";
        case LayerKind::QKT: return "QKT";
        case LayerKind::SM: return "SM";
        case LayerKind::SMV: return "SMV";
        case LayerKind::Proj: return "Proj";
        case LayerKind::MLP1: return "MLP1";
        case LayerKind::MLP2: return "MLP2";
    }
    return "?";
}

const char* to_string(Stage s) { return s == Stage::Prefill ? "prefill" : "decode"; }

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open config file: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("parse error in " + path.string() + ": " + e.what());
    }
    return doc;
}

FullConfig parse_config(const nlohmann::json& doc) {
    if (!doc.is_object()) throw SchemaError("config root must be an object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (it.key() != "model" && it.key() != "hardware" && it.key() != "workload")
            throw SchemaError("unknown key '" + it.key() + "'");
    }
    for (const char* section : {"model", "hardware", "workload"}) {
        if (!doc.contains(section)) throw SchemaError(std::string("missing section '") + section + "'");
    }

    FullConfig cfg;
    {
        SectionReader r(doc.at("model"), "model");
        cfg.model.name = r.get_string("name");
        cfg.model.num_layers = r.get_count("num_layers");
        cfg.model.d_model = r.get_count("d_model");
        cfg.model.num_heads = r.get_count("num_heads");
        cfg.model.head_dim = r.get_count("head_dim");
        cfg.model.mlp_hidden = r.get_count("mlp_hidden");
        cfg.model.weight_bits = static_cast<u32>(r.get_count("weight_bits"));
        cfg.model.activation_bits = static_cast<u32>(r.get_count("activation_bits"));
        r.finish();
    }
    {
        SectionReader r(doc.at("hardware"), "hardware");
        cfg.hardware.num_parallel_pes = r.get_count("num_parallel_pes");
        cfg.hardware.num_broadcast_pes = r.get_count("num_broadcast_pes");
        cfg.hardware.mults_per_pe = r.get_count("mults_per_pe");
        cfg.hardware.num_sm_modules = r.get_count("num_sm_modules");
        cfg.hardware.weight_bram_bytes = r.get_count("weight_bram_bytes");
        cfg.hardware.input_bram_bytes = r.get_count("input_bram_bytes");
        cfg.hardware.output_bram_bytes = r.get_count("output_bram_bytes");
        cfg.hardware.rf_bytes = r.get_count("rf_bytes");
        cfg.hardware.clock_hz = r.get_count("clock_hz");
        cfg.hardware.dram_bandwidth_bps = r.get_count("dram_bandwidth_bps");
        cfg.hardware.dram_word_bits = static_cast<u32>(r.get_count("dram_word_bits"));
        r.finish();
    }
    {
        SectionReader r(doc.at("workload"), "workload");
        cfg.workload.prefill_tokens = r.get_count("prefill_tokens");
        cfg.workload.decode_step_index = r.get_count("decode_step_index");
        cfg.workload.token_lanes = r.get_count("token_lanes");
        r.finish();
    }

    cfg.model.validate();
    cfg.hardware.validate();
    cfg.workload.validate();
    return cfg;
}

FullConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_json_file(path));
}

std::vector<LayerSpec> derive_layer_shapes(const ModelConfig& m, const WorkloadSpec& w,
                                           Stage stage) {
    m.validate();
    w.validate();

    const u64 rows = stage == Stage::Decode ? 1 : w.prefill_tokens;
    const u64 span = kv_length(w, stage); // attention positions visible to a query
    const u64 d = m.d_model;
    const u64 hd = m.head_dim;

    const std::array<LayerSpec, kSubLayersPerBlock> block = {{
        {LayerKind::Q, rows, d, hd, true},
        {LayerKind::K, rows, d, d, false},
        {LayerKind::V, rows, d, d, false},
        {LayerKind::QKT, rows, hd, span, true},
        {LayerKind::SM, rows, span, span, true},
        {LayerKind::SMV, rows, span, hd, true},
        {LayerKind::Proj, rows, d, d, false},
        {LayerKind::MLP1, rows, d, m.mlp_hidden, false},
        {LayerKind::MLP2, rows, m.mlp_hidden, d, false},
    }};

    std::vector<LayerSpec> out;
    out.reserve(block.size() * m.num_layers);
    for (u64 layer = 0; layer < m.num_layers; ++layer)
        out.insert(out.end(), block.begin(), block.end());
    return out;
}

} // namespace meadow
