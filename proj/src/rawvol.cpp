#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "jmfuse/errors.hpp"
#include "jmfuse/volume.hpp"

namespace jmfuse {

namespace {

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

void put_f32(std::vector<unsigned char>& out, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

float get_f32(const unsigned char* p) {
    const uint32_t v = get_u32(p);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

constexpr size_t kHeaderBytes = 40; // magic + 6 u32 + 3 f32

} // namespace

std::vector<unsigned char> write_rawvol(const Volume& v, uint32_t dtype) {
    if (dtype != kRawvolDtypeF32 && dtype != kRawvolDtypeF64) {
        throw ValidationError("rawvol: dtype must be 0 (f32) or 1 (f64), got " + std::to_string(dtype));
    }
    if (v.numel() != static_cast<int64_t>(v.data.size())) {
        throw ValidationError("rawvol: volume data length does not match its extents");
    }
    std::vector<unsigned char> out;
    out.reserve(kHeaderBytes + static_cast<size_t>(v.numel()) * (dtype == kRawvolDtypeF32 ? 4 : 8));
    for (char c : {'R', 'V', 'O', 'L'}) out.push_back(static_cast<unsigned char>(c));
    put_u32(out, 1);
    put_u32(out, dtype);
    put_u32(out, static_cast<uint32_t>(v.channels));
    put_u32(out, static_cast<uint32_t>(v.nx));
    put_u32(out, static_cast<uint32_t>(v.ny));
    put_u32(out, static_cast<uint32_t>(v.nz));
    put_f32(out, static_cast<float>(v.sx));
    put_f32(out, static_cast<float>(v.sy));
    put_f32(out, static_cast<float>(v.sz));
    if (dtype == kRawvolDtypeF32) {
        for (double d : v.data) put_f32(out, static_cast<float>(d));
    } else {
        for (double d : v.data) {
            uint64_t bits;
            std::memcpy(&bits, &d, 8);
            put_u32(out, static_cast<uint32_t>(bits & 0xffffffffu));
            put_u32(out, static_cast<uint32_t>(bits >> 32));
        }
    }
    return out;
}

void save_rawvol(const Volume& v, const std::string& path, uint32_t dtype) {
    const std::vector<unsigned char> bytes = write_rawvol(v, dtype);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed on " + path);
}

Volume read_rawvol(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < kHeaderBytes) {
        throw IoError("rawvol: " + std::to_string(bytes.size()) + " bytes is shorter than the 40-byte header");
    }
    const unsigned char* p = bytes.data();
    if (std::memcmp(p, "RVOL", 4) != 0) {
        throw FormatError("rawvol: bad magic, expected \"RVOL\"");
    }
    const uint32_t version = get_u32(p + 4);
    if (version != 1) throw FormatError("rawvol: unsupported version " + std::to_string(version));
    const uint32_t dtype = get_u32(p + 8);
    if (dtype != kRawvolDtypeF32 && dtype != kRawvolDtypeF64) {
        throw FormatError("rawvol: unknown dtype " + std::to_string(dtype));
    }
    const uint32_t channels = get_u32(p + 12);
    const uint32_t nx = get_u32(p + 16);
    const uint32_t ny = get_u32(p + 20);
    const uint32_t nz = get_u32(p + 24);
    if (channels == 0 || nx == 0 || ny == 0 || nz == 0) {
        throw FormatError("rawvol: zero extent in header");
    }
    const float sx = get_f32(p + 28), sy = get_f32(p + 32), sz = get_f32(p + 36);
    if (!(sx > 0.0f) || !(sy > 0.0f) || !(sz > 0.0f)) {
        throw FormatError("rawvol: non-positive spacing in header");
    }
    Volume v = make_volume(channels, nx, ny, nz, sx, sy, sz);
    const size_t elem = dtype == kRawvolDtypeF32 ? 4 : 8;
    const size_t need = kHeaderBytes + static_cast<size_t>(v.numel()) * elem;
    if (bytes.size() != need) {
        throw IoError("rawvol: payload length mismatch, header wants " + std::to_string(need) +
                      " bytes total, stream has " + std::to_string(bytes.size()));
    }
    const unsigned char* body = p + kHeaderBytes;
    const int64_t n = v.numel();
    if (dtype == kRawvolDtypeF32) {
        for (int64_t i = 0; i < n; ++i)
            v.data[static_cast<size_t>(i)] = static_cast<double>(get_f32(body + i * 4));
    } else {
        for (int64_t i = 0; i < n; ++i) {
            const uint64_t bits = static_cast<uint64_t>(get_u32(body + i * 8)) |
                                  static_cast<uint64_t>(get_u32(body + i * 8 + 4)) << 32;
            double d;
            std::memcpy(&d, &bits, 8);
            v.data[static_cast<size_t>(i)] = d;
        }
    }
    return v;
}

Volume load_rawvol(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on " + path);
    return read_rawvol(bytes);
}

} // namespace jmfuse
