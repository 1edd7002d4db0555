// meadow: decoder latency model and lossless weight-packing codec for a tiled
// bandwidth-constrained accelerator.

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "meadow/experiments.hpp"
#include "meadow/tensor.hpp"

namespace {

using namespace meadow;

struct CommonArgs {
    std::string model_file;
    std::string hw_file;
    std::optional<u64> bandwidth;
    std::optional<u64> tokens;
    std::optional<u64> step;
    u64 chunk_size = 8;
    std::string packing = "on";
    std::string dataflow = "auto";
    u64 seed = 1;
    u64 target_unique = 2500;
    std::string dist = "zipf";
    double zipf_s = 1.45;
    std::string include_unique = "on";
    std::string latency_model = "no-overlap";
    std::string out;
    std::string trace_out;
};

void add_config_flags(CLI::App* cmd, CommonArgs& a, bool scalar_overrides = true) {
    cmd->add_option("--model", a.model_file, "config file providing the model section");
    cmd->add_option("--hw", a.hw_file, "config file providing the hardware section");
    if (scalar_overrides) {
        cmd->add_option("--bandwidth", a.bandwidth, "override DRAM bandwidth, bits/second");
        cmd->add_option("--tokens", a.tokens, "override prefill token count");
    }
    cmd->add_option("--step", a.step, "override decode step index");
}

void add_run_flags(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--chunk-size", a.chunk_size, "packing chunk size C");
    cmd->add_option("--packing", a.packing, "weight packing on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--dataflow", a.dataflow, "attention dataflow auto|gemm|tphs")
        ->check(CLI::IsMember({"auto", "gemm", "tphs"}));
    cmd->add_option("--seed", a.seed, "synthetic weight seed");
    cmd->add_option("--target-unique", a.target_unique, "synthetic unique chunks per matrix");
    cmd->add_option("--dist", a.dist, "synthetic chunk-ID distribution")
        ->check(CLI::IsMember({"uniform", "zipf"}));
    cmd->add_option("--zipf-s", a.zipf_s, "zipf skew exponent");
    cmd->add_option("--include-unique", a.include_unique,
                    "count dictionary transfer in packed size, on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--latency-model", a.latency_model,
                    "no-overlap (fetch+compute+store) or overlap (double-buffered fetch)")
        ->check(CLI::IsMember({"no-overlap", "overlap"}));
}

FullConfig load_merged_config(const CommonArgs& a) {
    nlohmann::json doc = nlohmann::json::object();
    auto merge = [&](const std::string& file) {
        if (file.empty()) return;
        const nlohmann::json part = read_json_file(file);
        if (!part.is_object()) throw SchemaError("config root must be an object: " + file);
        for (auto it = part.begin(); it != part.end(); ++it) {
            if (doc.contains(it.key()))
                throw SchemaError("section '" + it.key() + "' given in more than one file");
            doc[it.key()] = it.value();
        }
    };
    merge(a.model_file);
    merge(a.hw_file);

    FullConfig cfg = parse_config(doc);
    if (a.bandwidth) cfg.hardware.dram_bandwidth_bps = *a.bandwidth;
    if (a.tokens) cfg.workload.prefill_tokens = *a.tokens;
    if (a.step) cfg.workload.decode_step_index = *a.step;
    cfg.hardware.validate();
    cfg.workload.validate();
    return cfg;
}

RunOptions run_options(const CommonArgs& a) {
    RunOptions o;
    o.packing = a.packing == "on";
    o.dataflow = a.dataflow == "gemm"   ? DataflowPolicy::ForceGemm
                 : a.dataflow == "tphs" ? DataflowPolicy::ForceTphs
                                        : DataflowPolicy::Auto;
    o.chunk_size = a.chunk_size;
    o.include_unique = a.include_unique == "on";
    o.latency_model =
        a.latency_model == "overlap" ? LatencyModel::Overlap : LatencyModel::NoOverlap;
    o.synth.seed = a.seed;
    o.synth.target_unique = a.target_unique;
    o.synth.dist = a.dist == "zipf" ? IdDist::Zipf : IdDist::Uniform;
    o.synth.zipf_s = a.zipf_s;
    return o;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << text;
}

void print_report(const char* label, Stage stage, double seconds, Dataflow attn,
                  const std::vector<LayerTiming>& layers) {
    u64 fetch = 0, compute = 0, store = 0;
    for (const auto& l : layers) {
        fetch += l.latency.fetch_cycles;
        compute += l.latency.compute_cycles;
        store += l.latency.store_cycles;
    }
    std::printf("%s: %.6e s  (attention dataflow: %s)\n", label, seconds, to_string(attn));
    std::printf("  fetch %" PRIu64 " cycles, compute %" PRIu64 " cycles, store %" PRIu64
                " cycles\n",
                fetch, compute, store);
    (void)stage;
}

void maybe_write_trace(const CommonArgs& a, const ModelConfig& m, const HardwareConfig& hw,
                       const WorkloadSpec& w, Stage stage) {
    if (a.trace_out.empty()) return;
    const auto layers = derive_layer_shapes(m, w, stage);
    const AttentionShapes shapes = attention_shapes(layers);
    const u64 tokens = shapes.q.rows;
    const auto spec = build_tphs_spec(shapes, hw, tokens, w.token_lanes, m.num_heads);
    write_trace_csv(a.trace_out, event_sim_tphs(spec));
    std::printf("wrote schedule trace to %s\n", a.trace_out.c_str());
}

int cmd_prefill(const CommonArgs& a) {
    const FullConfig cfg = load_merged_config(a);
    const RunOptions opts = run_options(a);
    const TtftReport rep = run_prefill(cfg.model, cfg.hardware, cfg.workload, opts);
    print_report("TTFT", Stage::Prefill, rep.total_seconds, rep.attention_dataflow, rep.layers);
    if (!a.out.empty()) {
        std::string csv = std::string("# schema: ") + kSweepCsvSchema + "\n" + kCsvHeader + "\n";
        csv += report_csv_rows(config_hash(cfg.model, cfg.hardware, cfg.workload, opts,
                                           Stage::Prefill),
                               Stage::Prefill, rep.layers);
        write_file(a.out, csv);
        std::printf("wrote %s\n", a.out.c_str());
    }
    if (rep.attention_dataflow == Dataflow::Tphs)
        maybe_write_trace(a, cfg.model, cfg.hardware, cfg.workload, Stage::Prefill);
    return 0;
}

int cmd_decode(const CommonArgs& a) {
    const FullConfig cfg = load_merged_config(a);
    const RunOptions opts = run_options(a);
    const TbtReport rep = run_decode(cfg.model, cfg.hardware, cfg.workload, opts);
    std::printf("TBT for generated token %" PRIu64 ":\n", rep.step_index);
    print_report("TBT", Stage::Decode, rep.total_seconds, rep.attention_dataflow, rep.layers);
    if (!a.out.empty()) {
        std::string csv = std::string("# schema: ") + kSweepCsvSchema + "\n" + kCsvHeader + "\n";
        csv += report_csv_rows(config_hash(cfg.model, cfg.hardware, cfg.workload, opts,
                                           Stage::Decode),
                               Stage::Decode, rep.layers);
        write_file(a.out, csv);
        std::printf("wrote %s\n", a.out.c_str());
    }
    if (rep.attention_dataflow == Dataflow::Tphs)
        maybe_write_trace(a, cfg.model, cfg.hardware, cfg.workload, Stage::Decode);
    return 0;
}

int cmd_sweep(const CommonArgs& a, const std::vector<u64>& bandwidths,
              const std::vector<u64>& token_counts) {
    const FullConfig cfg = load_merged_config(a);
    const RunOptions opts = run_options(a);
    const std::vector<u64> bws =
        bandwidths.empty() ? std::vector<u64>{cfg.hardware.dram_bandwidth_bps} : bandwidths;
    const std::vector<u64> toks =
        token_counts.empty() ? std::vector<u64>{cfg.workload.prefill_tokens} : token_counts;
    const std::string csv =
        sweep_csv(cfg.model, cfg.hardware, bws, toks, cfg.workload, opts);
    if (a.out.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        write_file(a.out, csv);
        std::printf("wrote %s\n", a.out.c_str());
    }
    return 0;
}

int cmd_select(const CommonArgs& a) {
    const FullConfig cfg = load_merged_config(a);
    const DataflowDecision d = select_dataflow(cfg.hardware, cfg.model, cfg.workload);
    std::printf("choice: %s\n", to_string(d.choice));
    std::printf("  gemm attention latency: %.6e s\n", d.gemm_seconds);
    std::printf("  tphs attention latency: %.6e s (lanes=%" PRIu64 ")\n", d.tphs_seconds,
                d.lanes_used);
    std::printf("  roofline: intensity gemm %.3f, tphs %.3f flop/byte; peak %.3e flop/s; "
                "bandwidth %.3e B/s\n",
                d.gemm_intensity_flops_per_byte, d.tphs_intensity_flops_per_byte, d.peak_flops,
                d.bandwidth_bytes_per_s);
    return 0;
}

int cmd_gen_weights(const CommonArgs& a, u64 rows, u64 cols, const std::string& out) {
    SyntheticWeightSpec spec;
    spec.rows = rows;
    spec.cols = cols;
    spec.chunk_size = a.chunk_size;
    spec.target_unique_chunks = a.target_unique;
    spec.dist = a.dist == "zipf" ? IdDist::Zipf : IdDist::Uniform;
    spec.zipf_s = a.zipf_s;
    spec.seed = a.seed;
    const WeightMatrix w = gen_synthetic_weights(spec);
    write_tensor_i8(out, w);
    std::printf("wrote %" PRIu64 "x%" PRIu64 " int8 weights to %s\n", rows, cols, out.c_str());
    return 0;
}

int cmd_pack(const CommonArgs& a, const std::string& in, const std::string& out,
             u32 word_bits) {
    const WeightMatrix w = read_tensor(in).as_weights();
    const PackedWeightStream s = encode_weights(w, a.chunk_size, word_bits);
    write_packed_stream(out, s);
    const u64 raw = w.rows * w.cols * w.elem_bits;
    const u64 packed = packed_bit_count(s, true);
    std::printf("%" PRIu64 "x%" PRIu64 " weights, chunk size %" PRIu64 ": %" PRIu64
                " unique chunks, reduction ratio %.2f\n",
                w.rows, w.cols, a.chunk_size, s.unique.num_chunks(),
                static_cast<double>(s.value_count) / static_cast<double>(s.unique.num_chunks()));
    std::printf("raw %" PRIu64 " bits -> packed %" PRIu64 " bits (%.2fx, dictionary included)\n",
                raw, packed, static_cast<double>(raw) / static_cast<double>(packed));
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_unpack(const std::string& in, const std::string& out) {
    const PackedWeightStream s = read_packed_stream(in);
    const WeightMatrix w = decode_weights(s);
    write_tensor_i8(out, w);
    std::printf("decoded %" PRIu64 "x%" PRIu64 " weights to %s\n", w.rows, w.cols, out.c_str());
    return 0;
}

int cmd_ablate(const CommonArgs& a, const std::string& weights_file, u64 rows, u64 cols,
               bool exact_top) {
    const FullConfig cfg = load_merged_config(a);
    WeightMatrix w;
    if (!weights_file.empty()) {
        w = read_tensor(weights_file).as_weights();
    } else {
        SyntheticWeightSpec spec;
        spec.rows = rows;
        spec.cols = cols;
        spec.chunk_size = a.chunk_size;
        spec.target_unique_chunks = a.target_unique;
        spec.dist = a.dist == "zipf" ? IdDist::Zipf : IdDist::Uniform;
        spec.zipf_s = a.zipf_s;
        spec.seed = a.seed;
        spec.weight_bits = cfg.model.weight_bits;
        w = gen_synthetic_weights(spec);
    }

    std::optional<PacketFormat> fmt;
    if (exact_top) {
        auto [u, e] = build_unique_matrix(w, a.chunk_size);
        fmt = PacketFormat::with_exact_top(u.num_chunks(), cfg.hardware.dram_word_bits);
    }
    const auto rows_out =
        packing_ablation(w, cfg.hardware, a.chunk_size, fmt ? &*fmt : nullptr);

    std::ostringstream os;
    os << "variant,transfer_bits,transfer_bits_with_unique,latency_seconds,ratio_vs_unpacked\n";
    for (const auto& r : rows_out) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%" PRIu64 ",%" PRIu64 ",%.12e,%.4f\n",
                      r.variant.c_str(), r.transfer_bits, r.transfer_bits_with_unique,
                      r.latency_seconds, r.ratio_vs_unpacked);
        os << buf;
    }
    if (a.out.empty()) {
        std::fputs(os.str().c_str(), stdout);
    } else {
        write_file(a.out, os.str());
        std::printf("wrote %s\n", a.out.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"decoder latency model and weight-packing codec for a tiled accelerator"};
    app.require_subcommand(1);

    CommonArgs a;
    std::vector<u64> sweep_bws;
    std::vector<u64> sweep_tokens;
    std::string file_in, file_out, weights_file;
    u64 gen_rows = 3072, gen_cols = 768;
    bool exact_top = false;

    auto* prefill = app.add_subcommand("prefill", "prefill latency (TTFT) for one config");
    add_config_flags(prefill, a);
    add_run_flags(prefill, a);
    prefill->add_option("--out", a.out, "write per-layer CSV here");
    prefill->add_option("--trace", a.trace_out, "write the TPHS schedule trace CSV here");

    auto* decode = app.add_subcommand("decode", "decode latency (TBT) for one config");
    add_config_flags(decode, a);
    add_run_flags(decode, a);
    decode->add_option("--out", a.out, "write per-layer CSV here");
    decode->add_option("--trace", a.trace_out, "write the TPHS schedule trace CSV here");

    auto* sweep = app.add_subcommand("sweep", "bandwidth x token grid, baseline vs meadow");
    add_config_flags(sweep, a, /*scalar_overrides=*/false);
    add_run_flags(sweep, a);
    sweep->add_option("--bandwidth", sweep_bws, "bandwidth list, bits/second (repeatable)");
    sweep->add_option("--tokens", sweep_tokens, "prefill token list (repeatable)");
    sweep->add_option("--out", a.out, "write the sweep CSV here");

    auto* select = app.add_subcommand("select-dataflow", "pick GEMM or TPHS for attention");
    add_config_flags(select, a);

    auto* gen = app.add_subcommand("gen-weights", "generate synthetic int8 weights (MDWT)");
    gen->add_option("--rows", gen_rows, "output dimension");
    gen->add_option("--cols", gen_cols, "inner dimension");
    add_run_flags(gen, a);
    gen->add_option("--out", file_out, "output MDWT file")->required();

    auto* pack = app.add_subcommand("pack", "pack an MDWT weight file into an MDWP stream");
    std::uint32_t pack_word_bits = 64;
    pack->add_option("input", file_in, "MDWT weight file")->required();
    pack->add_option("output", file_out, "MDWP stream file")->required();
    pack->add_option("--chunk-size", a.chunk_size, "packing chunk size C");
    pack->add_option("--word-bits", pack_word_bits, "DRAM word width for the packet layout");

    auto* unpack = app.add_subcommand("unpack", "decode an MDWP stream back to MDWT weights");
    unpack->add_option("input", file_in, "MDWP stream file")->required();
    unpack->add_option("output", file_out, "MDWT weight file")->required();

    auto* ablate = app.add_subcommand("ablate", "transfer cost per packing variant");
    add_config_flags(ablate, a);
    add_run_flags(ablate, a);
    ablate->add_option("--weights", weights_file, "MDWT weight file (synthetic when absent)");
    ablate->add_option("--rows", gen_rows, "synthetic output dimension");
    ablate->add_option("--cols", gen_cols, "synthetic inner dimension");
    ablate->add_flag("--exact-top", exact_top,
                     "size the top packet precision exactly to the dictionary");
    ablate->add_option("--out", a.out, "write the ablation CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prefill->parsed()) return cmd_prefill(a);
        if (decode->parsed()) return cmd_decode(a);
        if (sweep->parsed()) return cmd_sweep(a, sweep_bws, sweep_tokens);
        if (select->parsed()) return cmd_select(a);
        if (gen->parsed()) return cmd_gen_weights(a, gen_rows, gen_cols, file_out);
        if (pack->parsed()) return cmd_pack(a, file_in, file_out, pack_word_bits);
        if (unpack->parsed()) return cmd_unpack(file_in, file_out);
        if (ablate->parsed()) return cmd_ablate(a, weights_file, gen_rows, gen_cols, exact_top);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
