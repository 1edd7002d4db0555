#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "meadow/bitstream.hpp"
#include "meadow/errors.hpp"

namespace meadow {

using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i32 = std::int32_t;

// Quantized weight matrix, rows x cols row-major. cols is the inner-product
// dimension along which chunking happens. Elements are signed values
// representable in elem_bits two's-complement.
struct WeightMatrix {
    u64 rows = 0;
    u64 cols = 0;
    u32 elem_bits = 8;
    std::vector<i32> elems;

    i32 at(u64 r, u64 c) const { return elems[r * cols + c]; }
    void validate() const;
};

// Dictionary of distinct chunk_size-element vectors, indexed by chunk ID.
struct UniqueMatrix {
    u64 chunk_size = 0;
    u32 elem_bits = 8;
    std::vector<i32> data; // num_chunks x chunk_size row-major

    u64 num_chunks() const { return chunk_size ? data.size() / chunk_size : 0; }
    std::span<const i32> chunk(u64 id) const {
        return {data.data() + id * chunk_size, chunk_size};
    }
};

// Weight matrix re-expressed as chunk IDs. When cols is not a multiple of the
// chunk size, the final chunk of each row is zero-padded and true_cols records
// the unpadded width.
struct EncodedMatrix {
    u64 rows = 0;
    u64 chunks_per_row = 0;
    u64 true_cols = 0;
    std::vector<u32> ids;
};

// Fixed-payload packet layout: every packet is mode_bits of mode tag followed
// by payload_bits of values, all at the per-packet precision precisions[mode].
struct PacketFormat {
    u32 payload_bits = 0;
    std::vector<u32> precisions; // ascending, each divides payload_bits
    u32 mode_bits = 0;

    u32 values_per_packet(u32 mode) const { return payload_bits / precisions[mode]; }
    u32 max_precision() const { return precisions.back(); }
    void validate() const;

    // Power-of-two precision ladder {1,2,4,...} truncated at the smallest
    // power of two covering unique_count-1, payload sized to one DRAM word.
    static PacketFormat for_unique_count(u64 unique_count, u32 dram_word_bits);

    // Ladder {1,2,4,...,p} where p is the exact bit width of unique_count-1
    // (not rounded to a power of two). Payload is the largest multiple of
    // lcm(4,p) that fits a DRAM word after the mode tag.
    static PacketFormat with_exact_top(u64 unique_count, u32 dram_word_bits);
};

// Bit-exact packed representation of one weight matrix.
struct PackedWeightStream {
    PacketFormat format;
    UniqueMatrix unique;
    u64 rows = 0; // original N
    u64 cols = 0; // original M
    u64 value_count = 0;
    u64 num_packets = 0;
    std::vector<std::uint8_t> packet_bytes;
    u64 packet_bit_len = 0;

    u64 chunks_per_row() const;
};

u32 naive_precision_bits(u64 unique_count); // ceil(log2 U), minimum 1

std::pair<UniqueMatrix, EncodedMatrix> build_unique_matrix(const WeightMatrix& w, u64 chunk_size);

// (total chunk count) / (unique chunk count)
double reduction_ratio(const EncodedMatrix& e, const UniqueMatrix& u);

// Permutes chunk IDs so occurrence frequency is non-increasing in the new ID,
// ties broken by ascending old ID. Decoded weights are unchanged.
std::pair<UniqueMatrix, EncodedMatrix> reindex_by_frequency(const UniqueMatrix& u,
                                                            const EncodedMatrix& e);

// Greedy left-to-right packing: each packet uses the smallest precision that
// fits its full complement of IDs, falling back to the largest. The final
// partial packet is zero-padded; value_count records the true ID count.
PackedWeightStream pack_packets(const EncodedMatrix& e, const UniqueMatrix& u,
                                const PacketFormat& f);

// Same packet layout with every packet forced to the largest precision.
PackedWeightStream pack_packets_uniform(const EncodedMatrix& e, const UniqueMatrix& u,
                                        const PacketFormat& f);

// Exact inverse of pack_packets (the mode-aware unpacking path).
EncodedMatrix unpack_packets(const PackedWeightStream& s);

// Unpack plus dictionary lookup; returns the original weights bit-exactly.
WeightMatrix decode_weights(const PackedWeightStream& s);

// Sum over packets of mode_bits + payload_bits, plus the dictionary bits
// (U * C * elem_bits) when include_unique.
u64 packed_bit_count(const PackedWeightStream& s, bool include_unique);

// encode -> reindex -> pack with the default format for the resulting
// dictionary size.
PackedWeightStream encode_weights(const WeightMatrix& w, u64 chunk_size, u32 dram_word_bits);

// Stream file format, magic "MDWP".
void write_packed_stream(const std::filesystem::path& path, const PackedWeightStream& s);
PackedWeightStream read_packed_stream(const std::filesystem::path& path);

} // namespace meadow
