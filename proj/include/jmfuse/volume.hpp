#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace jmfuse {

// Dense scalar grid with a channel axis. Data layout is [c][z][y][x], x fastest.
// Spacing is mm per voxel along x/y/z.
struct Volume {
    int64_t channels = 0;
    int64_t nx = 0, ny = 0, nz = 0;
    double sx = 1.0, sy = 1.0, sz = 1.0;
    std::vector<double> data;

    int64_t voxels() const { return nx * ny * nz; }
    int64_t numel() const { return channels * voxels(); }
    int64_t index(int64_t c, int64_t z, int64_t y, int64_t x) const {
        return ((c * nz + z) * ny + y) * nx + x;
    }
    double at(int64_t c, int64_t z, int64_t y, int64_t x) const {
        return data[static_cast<size_t>(index(c, z, y, x))];
    }
    double& at(int64_t c, int64_t z, int64_t y, int64_t x) {
        return data[static_cast<size_t>(index(c, z, y, x))];
    }
    bool same_grid(const Volume& o) const {
        return nx == o.nx && ny == o.ny && nz == o.nz;
    }
};

Volume make_volume(int64_t channels, int64_t nx, int64_t ny, int64_t nz,
                   double sx = 1.0, double sy = 1.0, double sz = 1.0);

// Throws ValidationError unless v is a 3-channel displacement field with finite entries.
void require_deformation_field(const Volume& v);

// Clamped trilinear interpolation of channel c at continuous voxel position (x,y,z).
double trilinear_sample(const Volume& v, int64_t c, double x, double y, double z);

// Resample every channel to the target grid (voxel-center aligned), trilinear.
Volume resample_trilinear(const Volume& v, int64_t tx, int64_t ty, int64_t tz);

// --- NIfTI-1 (little-endian single-file subset) ---
Volume read_nifti(const std::vector<unsigned char>& bytes);
Volume load_nifti(const std::string& path);

// --- RAWVOL interchange format ---
// magic "RVOL", u32 version=1, u32 dtype (0 = f32, 1 = f64), u32 channels,
// u32 nx, ny, nz, f32 sx, sy, sz, all little-endian (40-byte header), then the
// payload in [c][z][y][x] order.
inline constexpr uint32_t kRawvolDtypeF32 = 0;
inline constexpr uint32_t kRawvolDtypeF64 = 1;

std::vector<unsigned char> write_rawvol(const Volume& v, uint32_t dtype);
void save_rawvol(const Volume& v, const std::string& path, uint32_t dtype = kRawvolDtypeF64);
Volume read_rawvol(const std::vector<unsigned char>& bytes);
Volume load_rawvol(const std::string& path);

// --- manifest CSV: header `subject_id,label,smri,field`, paths relative to the csv ---
struct SubjectRecord {
    std::string subject_id;
    int label = 0;
    std::string smri_path;
    std::string field_path;
};

std::vector<SubjectRecord> load_manifest(const std::string& path);

} // namespace jmfuse
