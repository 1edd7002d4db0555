#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "meadow/errors.hpp"

namespace meadow {

// MSB-first bit buffer: the first value written occupies the highest bits of
// the first byte. An 8-bit payload 0b10110100 read as two 4-bit values yields
// [11, 4].
class BitWriter {
public:
    void append(std::uint64_t value, std::uint32_t width) {
        if (width > 64) throw CodecError("bit width > 64");
        while (width > 0) {
            if (fill_ == 0) buf_.push_back(0);
            std::uint32_t take = std::min(8u - fill_, width);
            std::uint64_t chunk = (value >> (width - take)) & ((1ull << take) - 1u);
            buf_.back() |= static_cast<std::uint8_t>(chunk << (8u - fill_ - take));
            fill_ = (fill_ + take) & 7u;
            width -= take;
        }
    }

    void pad_to_byte() { fill_ = 0; }

    std::uint64_t bit_size() const {
        if (buf_.empty()) return 0;
        return 8ull * (buf_.size() - 1) + (fill_ == 0 ? 8u : fill_);
    }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }
    std::vector<std::uint8_t> take_bytes() { fill_ = 0; return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
    std::uint32_t fill_ = 0; // bits occupied in the last byte, 0 means full/empty
};

class BitReader {
public:
    BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_len)
        : bytes_(bytes), bit_len_(bit_len) {
        if (bit_len_ > 8ull * bytes_.size()) throw CodecError("bit length exceeds buffer");
    }

    std::uint64_t read(std::uint32_t width) {
        if (width > 64) throw CodecError("bit width > 64");
        if (pos_ + width > bit_len_) throw CodecError("bitstream underrun");
        std::uint64_t v = 0;
        std::uint32_t left = width;
        while (left > 0) {
            std::uint64_t byte = bytes_[pos_ >> 3];
            std::uint32_t off = pos_ & 7u;
            std::uint32_t take = std::min(8u - off, left);
            std::uint64_t chunk = (byte >> (8u - off - take)) & ((1ull << take) - 1u);
            v = (v << take) | chunk;
            pos_ += take;
            left -= take;
        }
        return v;
    }

    void align_to_byte() { pos_ = (pos_ + 7ull) & ~7ull; }
    std::uint64_t bits_left() const { return bit_len_ - pos_; }
    std::uint64_t position() const { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::uint64_t bit_len_ = 0;
    std::uint64_t pos_ = 0;
};

} // namespace meadow
