#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "meadow/packing.hpp"

namespace meadow {

struct Tensor2D {
    u64 rows = 0;
    u64 cols = 0;
    std::vector<double> data; // row-major

    Tensor2D() = default;
    Tensor2D(u64 r, u64 c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(u64 r, u64 c) { return data[r * cols + c]; }
    double at(u64 r, u64 c) const { return data[r * cols + c]; }
};

// Tensor file format, magic "MDWT": version byte, little-endian
// {rows u32, cols u32, dtype u8}, row-major payload. dtype 0 = int8,
// dtype 1 = float32.
enum class TensorDType : std::uint8_t { Int8 = 0, Float32 = 1 };

void write_tensor_f32(const std::filesystem::path& path, const Tensor2D& t);
void write_tensor_i8(const std::filesystem::path& path, const WeightMatrix& w);

struct TensorFile {
    u64 rows = 0;
    u64 cols = 0;
    TensorDType dtype = TensorDType::Int8;
    std::vector<std::int8_t> i8_data;
    std::vector<float> f32_data;

    WeightMatrix as_weights() const; // requires dtype int8
    Tensor2D as_tensor() const;
};

TensorFile read_tensor(const std::filesystem::path& path);

} // namespace meadow
