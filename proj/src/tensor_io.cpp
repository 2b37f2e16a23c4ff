#include "patchspn/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <vector>

#include "patchspn/errors.hpp"

namespace patchspn {

namespace {

constexpr char kMagic[4] = {'A', 'E', 'T', 'N'};
constexpr std::uint8_t kVersion = 0x01;

void put_u32_le(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(bytes, 4);
}

std::uint32_t get_u32_le(std::istream& is) {
    unsigned char bytes[4];
    is.read(reinterpret_cast<char*>(bytes), 4);
    if (!is) throw IoError("unexpected end of tensor stream");
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void put_u64_le(std::ostream& os, std::uint64_t v) {
    put_u32_le(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
    put_u32_le(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t get_u64_le(std::istream& is) {
    const std::uint64_t lo = get_u32_le(is);
    const std::uint64_t hi = get_u32_le(is);
    return lo | (hi << 32);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t, DType dtype) {
    if (t.rank() == 0) throw IoError("cannot serialize a rank-0 tensor");
    if (t.rank() > 255) throw IoError("tensor rank exceeds format limit");
    os.write(kMagic, 4);
    const char header[4] = {static_cast<char>(kVersion), static_cast<char>(dtype),
                            static_cast<char>(t.rank()), 0};
    os.write(header, 4);
    for (std::size_t i = 0; i < t.rank(); ++i) {
        if (t.dim(i) > std::numeric_limits<std::uint32_t>::max()) throw IoError("dimension exceeds u32");
        put_u32_le(os, static_cast<std::uint32_t>(t.dim(i)));
    }
    if (dtype == DType::f32) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t[i]));
            put_u32_le(os, bits);
        }
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) {
            put_u64_le(os, std::bit_cast<std::uint64_t>(t[i]));
        }
    }
    if (!os) throw IoError("failed to write tensor stream");
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad tensor magic (expected AETN)");
    unsigned char header[4];
    is.read(reinterpret_cast<char*>(header), 4);
    if (!is) throw IoError("truncated tensor header");
    if (header[0] != kVersion) throw IoError("unsupported tensor format version " + std::to_string(header[0]));
    const auto dtype = static_cast<DType>(header[1]);
    if (dtype != DType::f32 && dtype != DType::f64) {
        throw IoError("unsupported tensor dtype " + std::to_string(header[1]));
    }
    const std::size_t rank = header[2];
    if (rank == 0) throw IoError("rank-0 tensor record");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = get_u32_le(is);
    const std::size_t n = Tensor::shape_size(shape);
    std::vector<double> data(n);
    if (dtype == DType::f32) {
        for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(get_u32_le(is)));
    } else {
        for (auto& v : data) v = std::bit_cast<double>(get_u64_le(is));
    }
    return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    write_tensor(os, t, dtype);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    return read_tensor(is);
}

void write_named_tensor(std::ostream& os, const std::string& name, const Tensor& t, DType dtype) {
    put_u32_le(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t, dtype);
}

std::pair<std::string, Tensor> read_named_tensor(std::istream& is) {
    const std::uint32_t len = get_u32_le(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw IoError("truncated tensor record name");
    Tensor t = read_tensor(is);
    return {std::move(name), std::move(t)};
}

}  // namespace patchspn
