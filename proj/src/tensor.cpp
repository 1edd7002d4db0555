#include "meadow/tensor.hpp"

#include <cstring>
#include <fstream>

namespace meadow {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'W', 'T'};

void write_u32(std::ostream& out, u32 v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

u32 read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CodecError("truncated tensor file");
    return u32(b[0]) | (u32(b[1]) << 8) | (u32(b[2]) << 16) | (u32(b[3]) << 24);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CodecError("cannot open for writing: " + path.string());
    return out;
}

void write_header(std::ostream& out, u64 rows, u64 cols, TensorDType dtype) {
    out.write(kMagic, 4);
    out.put(1); // version
    write_u32(out, static_cast<u32>(rows));
    write_u32(out, static_cast<u32>(cols));
    out.put(static_cast<char>(dtype));
}

} // namespace

void write_tensor_f32(const std::filesystem::path& path, const Tensor2D& t) {
    auto out = open_out(path);
    write_header(out, t.rows, t.cols, TensorDType::Float32);
    for (double v : t.data) {
        float f = static_cast<float>(v);
        static_assert(sizeof(float) == 4);
        char buf[4];
        std::memcpy(buf, &f, 4);
        out.write(buf, 4);
    }
    if (!out) throw CodecError("write failure: " + path.string());
}

void write_tensor_i8(const std::filesystem::path& path, const WeightMatrix& w) {
    if (w.elem_bits > 8) throw std::invalid_argument("int8 tensor files hold at most 8-bit values");
    auto out = open_out(path);
    write_header(out, w.rows, w.cols, TensorDType::Int8);
    for (i32 v : w.elems) out.put(static_cast<char>(static_cast<std::int8_t>(v)));
    if (!out) throw CodecError("write failure: " + path.string());
}

TensorFile read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CodecError("cannot open: " + path.string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw CodecError("bad magic, not an MDWT file");
    if (in.get() != 1) throw CodecError("unsupported MDWT version");

    TensorFile t;
    t.rows = read_u32(in);
    t.cols = read_u32(in);
    const int dtype = in.get();
    if (dtype != 0 && dtype != 1) throw CodecError("unknown MDWT dtype tag");
    t.dtype = static_cast<TensorDType>(dtype);

    const u64 n = t.rows * t.cols;
    if (t.dtype == TensorDType::Int8) {
        t.i8_data.resize(n);
        in.read(reinterpret_cast<char*>(t.i8_data.data()), static_cast<std::streamsize>(n));
    } else {
        t.f32_data.resize(n);
        in.read(reinterpret_cast<char*>(t.f32_data.data()),
                static_cast<std::streamsize>(n * 4));
    }
    if (!in) throw CodecError("truncated tensor payload");
    return t;
}

WeightMatrix TensorFile::as_weights() const {
    if (dtype != TensorDType::Int8) throw std::invalid_argument("weights require an int8 tensor");
    WeightMatrix w;
    w.rows = rows;
    w.cols = cols;
    w.elem_bits = 8;
    w.elems.assign(i8_data.begin(), i8_data.end());
    return w;
}

Tensor2D TensorFile::as_tensor() const {
    Tensor2D t(rows, cols);
    if (dtype == TensorDType::Int8) {
        for (u64 i = 0; i < rows * cols; ++i) t.data[i] = static_cast<double>(i8_data[i]);
    } else {
        for (u64 i = 0; i < rows * cols; ++i) t.data[i] = static_cast<double>(f32_data[i]);
    }
    return t;
}

} // namespace meadow
