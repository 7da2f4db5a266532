#include <cstdint>
#include <cstring>
#include <fstream>

#include "jmfuse/errors.hpp"
#include "jmfuse/volume.hpp"

namespace jmfuse {

namespace {

// little-endian field readers; the parser rejects big-endian files up front
int32_t rd_i32(const unsigned char* p) {
    int32_t v;
    std::memcpy(&v, p, 4);
    return v;
}
int16_t rd_i16(const unsigned char* p) {
    int16_t v;
    std::memcpy(&v, p, 2);
    return v;
}
float rd_f32(const unsigned char* p) {
    float v;
    std::memcpy(&v, p, 4);
    return v;
}

constexpr int64_t kHeaderSize = 348;
constexpr int kDtFloat32 = 16;
constexpr int kDtFloat64 = 64;

} // namespace

Volume read_nifti(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 352) {
        throw IoError("nifti: stream of " + std::to_string(bytes.size()) +
                      " bytes is shorter than header + extension flags (352)");
    }
    const unsigned char* p = bytes.data();
    const int32_t sizeof_hdr = rd_i32(p);
    if (sizeof_hdr != kHeaderSize) {
        // 348 byte-swapped = 0x5c010000: a big-endian file, which we refuse explicitly
        if (sizeof_hdr == 0x5c010000) {
            throw UnsupportedError("nifti: big-endian file rejected (only little-endian supported)");
        }
        throw FormatError("nifti: sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348");
    }
    if (std::memcmp(p + 344, "n+1\0", 4) != 0) {
        char magic[4];
        std::memcpy(magic, p + 344, 4);
        throw FormatError(std::string("nifti: magic \"") + std::string(magic, magic + 3) +
                          "\" is not the single-file form \"n+1\"");
    }
    const int16_t ndim = rd_i16(p + 40);
    if (ndim != 3 && ndim != 4) {
        throw UnsupportedError("nifti: dim[0] = " + std::to_string(ndim) + ", only 3 or 4 supported");
    }
    const int64_t nx = rd_i16(p + 42);
    const int64_t ny = rd_i16(p + 44);
    const int64_t nz = rd_i16(p + 46);
    const int64_t nc = ndim == 4 ? rd_i16(p + 48) : 1;
    if (nx < 1 || ny < 1 || nz < 1 || nc < 1) {
        throw FormatError("nifti: non-positive extent in dim = [" + std::to_string(nx) + "," +
                          std::to_string(ny) + "," + std::to_string(nz) + "," + std::to_string(nc) + "]");
    }
    const int16_t datatype = rd_i16(p + 70);
    if (datatype != kDtFloat32 && datatype != kDtFloat64) {
        throw UnsupportedError("nifti: datatype " + std::to_string(datatype) +
                               " unsupported (need 16 = float32 or 64 = float64)");
    }
    const int64_t elem = datatype == kDtFloat32 ? 4 : 8;

    float px = rd_f32(p + 80), py = rd_f32(p + 84), pz = rd_f32(p + 88);
    if (!(px > 0.0f)) px = 1.0f;
    if (!(py > 0.0f)) py = 1.0f;
    if (!(pz > 0.0f)) pz = 1.0f;

    const float vox_offset_f = rd_f32(p + 108);
    const int64_t vox_offset = static_cast<int64_t>(vox_offset_f);
    if (vox_offset < kHeaderSize || static_cast<float>(vox_offset) != vox_offset_f) {
        throw FormatError("nifti: vox_offset " + std::to_string(vox_offset_f) + " invalid");
    }
    const float scl_slope = rd_f32(p + 112);
    const float scl_inter = rd_f32(p + 116);

    Volume v = make_volume(nc, nx, ny, nz, px, py, pz);
    const int64_t nvox = v.numel();
    const int64_t need = vox_offset + nvox * elem;
    if (static_cast<int64_t>(bytes.size()) < need) {
        throw IoError("nifti: body truncated, need " + std::to_string(need) + " bytes, have " +
                      std::to_string(bytes.size()));
    }
    // NIfTI stores x fastest, then y, z, t — t maps onto our channel axis, so the
    // file order matches the [c][z][y][x] layout element for element.
    const unsigned char* body = p + vox_offset;
    if (datatype == kDtFloat32) {
        for (int64_t i = 0; i < nvox; ++i)
            v.data[static_cast<size_t>(i)] = static_cast<double>(rd_f32(body + i * 4));
    } else {
        for (int64_t i = 0; i < nvox; ++i) {
            double d;
            std::memcpy(&d, body + i * 8, 8);
            v.data[static_cast<size_t>(i)] = d;
        }
    }
    if (scl_slope != 0.0f) {
        const double s = scl_slope, t = scl_inter;
        for (double& d : v.data) d = s * d + t;
    }
    return v;
}

Volume load_nifti(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on " + path);
    return read_nifti(bytes);
}

} // namespace jmfuse
