#include "meadow/packing.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

namespace meadow {

namespace {

u64 ceil_div_u64(u64 a, u64 b) { return (a + b - 1) / b; }

bool fits_bits(i32 v, u32 bits) {
    if (bits >= 32) return true;
    const i32 lo = -(i32(1) << (bits - 1));
    const i32 hi = (i32(1) << (bits - 1)) - 1;
    return v >= lo && v <= hi;
}

u32 mask_elem(i32 v, u32 bits) {
    return static_cast<u32>(v) & (bits >= 32 ? 0xffffffffu : ((1u << bits) - 1u));
}

i32 sign_extend(u32 v, u32 bits) {
    if (bits >= 32) return static_cast<i32>(v);
    const u32 sign = 1u << (bits - 1);
    const u32 masked = v & ((1u << bits) - 1u);
    return (masked & sign) ? static_cast<i32>(masked | ~((1u << bits) - 1u))
                           : static_cast<i32>(masked);
}

struct ChunkHash {
    std::size_t operator()(const std::vector<i32>& v) const {
        std::size_t h = 1469598103934665603ull;
        for (i32 x : v) {
            h ^= static_cast<std::size_t>(static_cast<u32>(x));
            h *= 1099511628211ull;
        }
        return h;
    }
};

void write_u32(std::ostream& out, u32 v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, u64 v) {
    write_u32(out, static_cast<u32>(v));
    write_u32(out, static_cast<u32>(v >> 32));
}

u32 read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CodecError("truncated stream file");
    return u32(b[0]) | (u32(b[1]) << 8) | (u32(b[2]) << 16) | (u32(b[3]) << 24);
}

u64 read_u64(std::istream& in) {
    u64 lo = read_u32(in);
    u64 hi = read_u32(in);
    return lo | (hi << 32);
}

enum class PackPolicy { Greedy, UniformMax };

PackedWeightStream pack_with_policy(const EncodedMatrix& e, const UniqueMatrix& u,
                                    const PacketFormat& f, PackPolicy policy) {
    f.validate();
    const u64 n = e.ids.size();
    const u32 pmax = f.max_precision();
    const u64 id_limit = pmax >= 64 ? ~0ull : (1ull << pmax);
    for (u32 id : e.ids) {
        if (id >= id_limit) throw CodecError("chunk ID exceeds the maximum packet precision");
    }

    BitWriter bw;
    u64 packets = 0;
    u64 i = 0;
    while (i < n) {
        u32 mode = static_cast<u32>(f.precisions.size() - 1);
        if (policy == PackPolicy::Greedy) {
            for (u32 m = 0; m < f.precisions.size(); ++m) {
                const u32 p = f.precisions[m];
                const u64 hi = std::min(n, i + f.values_per_packet(m));
                bool ok = true;
                for (u64 j = i; j < hi; ++j) {
                    if (p < 32 && e.ids[j] >= (1u << p)) { ok = false; break; }
                }
                if (ok) { mode = m; break; }
            }
        }
        const u32 p = f.precisions[mode];
        const u64 k = f.values_per_packet(mode);
        bw.append(mode, f.mode_bits);
        for (u64 j = 0; j < k; ++j) {
            const u64 v = (i + j < n) ? e.ids[i + j] : 0u; // zero-ID padding
            bw.append(v, p);
        }
        i += k;
        ++packets;
    }

    PackedWeightStream s;
    s.format = f;
    s.unique = u;
    s.rows = e.rows;
    s.cols = e.true_cols;
    s.value_count = n;
    s.num_packets = packets;
    s.packet_bit_len = bw.bit_size();
    s.packet_bytes = bw.take_bytes();
    return s;
}

} // namespace

void WeightMatrix::validate() const {
    if (elems.size() != rows * cols) throw std::invalid_argument("weight element count mismatch");
    if (elem_bits == 0 || elem_bits > 32) throw std::invalid_argument("weight elem_bits out of range");
    for (i32 v : elems) {
        if (!fits_bits(v, elem_bits))
            throw std::invalid_argument("weight element not representable in declared bit width");
    }
}

void PacketFormat::validate() const {
    if (precisions.empty()) throw CodecError("packet format needs at least one precision");
    if (payload_bits == 0) throw CodecError("packet payload must be non-empty");
    u32 prev = 0;
    for (u32 p : precisions) {
        if (p == 0 || p <= prev) throw CodecError("precisions must be ascending and positive");
        if (payload_bits % p != 0) throw CodecError("every precision must divide payload_bits");
        prev = p;
    }
    const u32 expected =
        precisions.size() <= 1 ? 0 : static_cast<u32>(std::bit_width(precisions.size() - 1));
    if (mode_bits != expected) throw CodecError("mode_bits does not match precision count");
}

u32 naive_precision_bits(u64 unique_count) {
    if (unique_count <= 1) return 1;
    return static_cast<u32>(std::bit_width(unique_count - 1));
}

PacketFormat PacketFormat::for_unique_count(u64 unique_count, u32 dram_word_bits) {
    const u32 need = naive_precision_bits(unique_count);
    u32 cap = 1;
    while (cap < need) cap <<= 1;

    PacketFormat f;
    for (u32 p = 1; p <= cap; p <<= 1) f.precisions.push_back(p);
    f.mode_bits =
        f.precisions.size() <= 1 ? 0 : static_cast<u32>(std::bit_width(f.precisions.size() - 1));
    if (dram_word_bits <= f.mode_bits + cap)
        throw CodecError("dram_word_bits too small for the required packet precision");
    f.payload_bits = ((dram_word_bits - f.mode_bits) / cap) * cap;
    f.validate();
    return f;
}

PacketFormat PacketFormat::with_exact_top(u64 unique_count, u32 dram_word_bits) {
    const u32 top = naive_precision_bits(unique_count);

    PacketFormat f;
    for (u32 p = 1; p < top && p <= 4; p <<= 1) f.precisions.push_back(p);
    f.precisions.push_back(top);
    f.mode_bits =
        f.precisions.size() <= 1 ? 0 : static_cast<u32>(std::bit_width(f.precisions.size() - 1));
    const u32 grid = std::lcm(top, f.precisions.front() == top ? top : 4u);
    if (dram_word_bits <= f.mode_bits + grid)
        throw CodecError("dram_word_bits too small for the required packet precision");
    f.payload_bits = ((dram_word_bits - f.mode_bits) / grid) * grid;
    f.validate();
    return f;
}

u64 PackedWeightStream::chunks_per_row() const {
    return ceil_div_u64(cols, unique.chunk_size);
}

std::pair<UniqueMatrix, EncodedMatrix> build_unique_matrix(const WeightMatrix& w,
                                                           u64 chunk_size) {
    if (chunk_size == 0) throw std::invalid_argument("chunk_size must be >= 1");
    w.validate();

    const u64 cpr = ceil_div_u64(w.cols, chunk_size);

    UniqueMatrix u;
    u.chunk_size = chunk_size;
    u.elem_bits = w.elem_bits;

    EncodedMatrix e;
    e.rows = w.rows;
    e.chunks_per_row = cpr;
    e.true_cols = w.cols;
    e.ids.reserve(w.rows * cpr);

    std::unordered_map<std::vector<i32>, u32, ChunkHash> seen;
    std::vector<i32> chunk(chunk_size);
    for (u64 r = 0; r < w.rows; ++r) {
        for (u64 c0 = 0; c0 < cpr; ++c0) {
            for (u64 j = 0; j < chunk_size; ++j) {
                const u64 col = c0 * chunk_size + j;
                chunk[j] = col < w.cols ? w.at(r, col) : 0; // zero-pad the row tail
            }
            auto [it, inserted] = seen.emplace(chunk, static_cast<u32>(seen.size()));
            if (inserted) u.data.insert(u.data.end(), chunk.begin(), chunk.end());
            e.ids.push_back(it->second);
        }
    }
    return {std::move(u), std::move(e)};
}

double reduction_ratio(const EncodedMatrix& e, const UniqueMatrix& u) {
    return static_cast<double>(e.ids.size()) / static_cast<double>(u.num_chunks());
}

std::pair<UniqueMatrix, EncodedMatrix> reindex_by_frequency(const UniqueMatrix& u,
                                                            const EncodedMatrix& e) {
    const u64 n = u.num_chunks();
    std::vector<u64> freq(n, 0);
    for (u32 id : e.ids) ++freq.at(id);

    std::vector<u32> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](u32 a, u32 b) {
        if (freq[a] != freq[b]) return freq[a] > freq[b];
        return a < b;
    });

    std::vector<u32> new_id(n);
    for (u32 pos = 0; pos < n; ++pos) new_id[order[pos]] = pos;

    UniqueMatrix u2;
    u2.chunk_size = u.chunk_size;
    u2.elem_bits = u.elem_bits;
    u2.data.resize(u.data.size());
    for (u64 old = 0; old < n; ++old) {
        auto src = u.chunk(old);
        std::copy(src.begin(), src.end(), u2.data.begin() + new_id[old] * u.chunk_size);
    }

    EncodedMatrix e2 = e;
    for (u32& id : e2.ids) id = new_id[id];
    return {std::move(u2), std::move(e2)};
}

PackedWeightStream pack_packets(const EncodedMatrix& e, const UniqueMatrix& u,
                                const PacketFormat& f) {
    return pack_with_policy(e, u, f, PackPolicy::Greedy);
}

PackedWeightStream pack_packets_uniform(const EncodedMatrix& e, const UniqueMatrix& u,
                                        const PacketFormat& f) {
    return pack_with_policy(e, u, f, PackPolicy::UniformMax);
}

EncodedMatrix unpack_packets(const PackedWeightStream& s) {
    s.format.validate();
    EncodedMatrix e;
    e.rows = s.rows;
    e.true_cols = s.cols;
    e.chunks_per_row = s.chunks_per_row();
    e.ids.reserve(s.value_count);

    BitReader br(s.packet_bytes, s.packet_bit_len);
    while (e.ids.size() < s.value_count) {
        if (br.bits_left() == 0) throw CodecError("packet stream ended before value_count values");
        const u64 mode = br.read(s.format.mode_bits);
        if (mode >= s.format.precisions.size())
            throw CodecError("malformed packet mode field");
        const u32 p = s.format.precisions[static_cast<u32>(mode)];
        const u64 k = s.format.values_per_packet(static_cast<u32>(mode));
        for (u64 j = 0; j < k; ++j) {
            const u64 v = br.read(p);
            if (e.ids.size() < s.value_count) e.ids.push_back(static_cast<u32>(v));
            // padding values beyond value_count are consumed and dropped
        }
    }
    return e;
}

WeightMatrix decode_weights(const PackedWeightStream& s) {
    const EncodedMatrix e = unpack_packets(s);
    const u64 c = s.unique.chunk_size;
    const u64 num_unique = s.unique.num_chunks();

    WeightMatrix w;
    w.rows = s.rows;
    w.cols = s.cols;
    w.elem_bits = s.unique.elem_bits;
    w.elems.resize(w.rows * w.cols);

    for (u64 r = 0; r < e.rows; ++r) {
        for (u64 c0 = 0; c0 < e.chunks_per_row; ++c0) {
            const u32 id = e.ids[r * e.chunks_per_row + c0];
            if (id >= num_unique) throw CodecError("chunk ID out of dictionary range");
            auto chunk = s.unique.chunk(id);
            for (u64 j = 0; j < c; ++j) {
                const u64 col = c0 * c + j;
                if (col < w.cols) w.elems[r * w.cols + col] = chunk[j];
            }
        }
    }
    return w;
}

u64 packed_bit_count(const PackedWeightStream& s, bool include_unique) {
    u64 bits = s.num_packets * (u64(s.format.mode_bits) + s.format.payload_bits);
    if (include_unique)
        bits += s.unique.num_chunks() * s.unique.chunk_size * s.unique.elem_bits;
    return bits;
}

PackedWeightStream encode_weights(const WeightMatrix& w, u64 chunk_size, u32 dram_word_bits) {
    auto [u, e] = build_unique_matrix(w, chunk_size);
    auto [u2, e2] = reindex_by_frequency(u, e);
    const PacketFormat f = PacketFormat::for_unique_count(u2.num_chunks(), dram_word_bits);
    return pack_packets(e2, u2, f);
}

void write_packed_stream(const std::filesystem::path& path, const PackedWeightStream& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CodecError("cannot open for writing: " + path.string());

    out.write("MDWP", 4);
    out.put(1); // version
    write_u32(out, static_cast<u32>(s.rows));
    write_u32(out, static_cast<u32>(s.cols));
    write_u32(out, static_cast<u32>(s.unique.chunk_size));
    write_u32(out, s.unique.elem_bits);
    write_u32(out, static_cast<u32>(s.unique.num_chunks()));
    write_u32(out, s.format.payload_bits);
    write_u32(out, s.format.mode_bits);
    write_u32(out, static_cast<u32>(s.format.precisions.size()));
    for (u32 p : s.format.precisions) write_u32(out, p);
    write_u64(out, s.value_count);
    write_u64(out, s.num_packets);
    write_u64(out, s.packet_bit_len);

    BitWriter uw;
    for (i32 v : s.unique.data) uw.append(mask_elem(v, s.unique.elem_bits), s.unique.elem_bits);
    const auto& ub = uw.bytes();
    out.write(reinterpret_cast<const char*>(ub.data()), static_cast<std::streamsize>(ub.size()));

    out.write(reinterpret_cast<const char*>(s.packet_bytes.data()),
              static_cast<std::streamsize>(s.packet_bytes.size()));
    if (!out) throw CodecError("write failure: " + path.string());
}

PackedWeightStream read_packed_stream(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CodecError("cannot open: " + path.string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MDWP", 4) != 0) throw CodecError("bad magic, not an MDWP file");
    const int version = in.get();
    if (version != 1) throw CodecError("unsupported MDWP version");

    PackedWeightStream s;
    s.rows = read_u32(in);
    s.cols = read_u32(in);
    s.unique.chunk_size = read_u32(in);
    s.unique.elem_bits = read_u32(in);
    const u64 num_unique = read_u32(in);
    s.format.payload_bits = read_u32(in);
    s.format.mode_bits = read_u32(in);
    const u32 num_prec = read_u32(in);
    if (num_prec == 0 || num_prec > 64) throw CodecError("implausible precision count");
    s.format.precisions.resize(num_prec);
    for (u32& p : s.format.precisions) p = read_u32(in);
    s.value_count = read_u64(in);
    s.num_packets = read_u64(in);
    s.packet_bit_len = read_u64(in);
    s.format.validate();
    if (s.unique.elem_bits == 0 || s.unique.elem_bits > 32)
        throw CodecError("implausible element width");

    const u64 unique_bits = num_unique * s.unique.chunk_size * s.unique.elem_bits;
    std::vector<std::uint8_t> ubytes((unique_bits + 7) / 8);
    in.read(reinterpret_cast<char*>(ubytes.data()), static_cast<std::streamsize>(ubytes.size()));
    if (!in) throw CodecError("truncated dictionary section");
    BitReader ur(ubytes, unique_bits);
    s.unique.data.reserve(num_unique * s.unique.chunk_size);
    for (u64 i = 0; i < num_unique * s.unique.chunk_size; ++i)
        s.unique.data.push_back(sign_extend(static_cast<u32>(ur.read(s.unique.elem_bits)),
                                            s.unique.elem_bits));

    s.packet_bytes.resize((s.packet_bit_len + 7) / 8);
    in.read(reinterpret_cast<char*>(s.packet_bytes.data()),
            static_cast<std::streamsize>(s.packet_bytes.size()));
    if (!in) throw CodecError("truncated packet section");
    return s;
}

} // namespace meadow
