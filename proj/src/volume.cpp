#include "jmfuse/volume.hpp"

#include <algorithm>
#include <cmath>

#include "jmfuse/errors.hpp"

namespace jmfuse {

Volume make_volume(int64_t channels, int64_t nx, int64_t ny, int64_t nz,
                   double sx, double sy, double sz) {
    if (channels < 1 || nx < 1 || ny < 1 || nz < 1) {
        throw ValidationError("volume extents must be positive, got channels=" +
                              std::to_string(channels) + " dims=(" + std::to_string(nx) + "," +
                              std::to_string(ny) + "," + std::to_string(nz) + ")");
    }
    if (sx <= 0.0 || sy <= 0.0 || sz <= 0.0) {
        throw ValidationError("voxel spacing must be positive");
    }
    Volume v;
    v.channels = channels;
    v.nx = nx; v.ny = ny; v.nz = nz;
    v.sx = sx; v.sy = sy; v.sz = sz;
    v.data.assign(static_cast<size_t>(v.numel()), 0.0);
    return v;
}

void require_deformation_field(const Volume& v) {
    if (v.channels != 3) {
        throw ValidationError("deformation field must have 3 channels, got " +
                              std::to_string(v.channels));
    }
    for (double x : v.data) {
        if (!std::isfinite(x)) throw NumericError("deformation field contains non-finite entries");
    }
}

double trilinear_sample(const Volume& v, int64_t c, double x, double y, double z) {
    // clamp to the valid cube so edge samples repeat the border voxel
    x = std::clamp(x, 0.0, static_cast<double>(v.nx - 1));
    y = std::clamp(y, 0.0, static_cast<double>(v.ny - 1));
    z = std::clamp(z, 0.0, static_cast<double>(v.nz - 1));
    const int64_t x0 = std::min(static_cast<int64_t>(x), v.nx - 2 >= 0 ? v.nx - 2 : 0);
    const int64_t y0 = std::min(static_cast<int64_t>(y), v.ny - 2 >= 0 ? v.ny - 2 : 0);
    const int64_t z0 = std::min(static_cast<int64_t>(z), v.nz - 2 >= 0 ? v.nz - 2 : 0);
    const int64_t x1 = std::min(x0 + 1, v.nx - 1);
    const int64_t y1 = std::min(y0 + 1, v.ny - 1);
    const int64_t z1 = std::min(z0 + 1, v.nz - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const double fz = z - static_cast<double>(z0);
    const double c000 = v.at(c, z0, y0, x0), c001 = v.at(c, z0, y0, x1);
    const double c010 = v.at(c, z0, y1, x0), c011 = v.at(c, z0, y1, x1);
    const double c100 = v.at(c, z1, y0, x0), c101 = v.at(c, z1, y0, x1);
    const double c110 = v.at(c, z1, y1, x0), c111 = v.at(c, z1, y1, x1);
    const double c00 = c000 + (c001 - c000) * fx;
    const double c01 = c010 + (c011 - c010) * fx;
    const double c10 = c100 + (c101 - c100) * fx;
    const double c11 = c110 + (c111 - c110) * fx;
    const double c0 = c00 + (c01 - c00) * fy;
    const double c1 = c10 + (c11 - c10) * fy;
    return c0 + (c1 - c0) * fz;
}

Volume resample_trilinear(const Volume& v, int64_t tx, int64_t ty, int64_t tz) {
    if (tx < 1 || ty < 1 || tz < 1) throw ValidationError("resample target extents must be positive");
    Volume out = make_volume(v.channels, tx, ty, tz,
                             v.sx * static_cast<double>(v.nx) / static_cast<double>(tx),
                             v.sy * static_cast<double>(v.ny) / static_cast<double>(ty),
                             v.sz * static_cast<double>(v.nz) / static_cast<double>(tz));
    const double rx = static_cast<double>(v.nx) / static_cast<double>(tx);
    const double ry = static_cast<double>(v.ny) / static_cast<double>(ty);
    const double rz = static_cast<double>(v.nz) / static_cast<double>(tz);
    for (int64_t c = 0; c < v.channels; ++c) {
        for (int64_t z = 0; z < tz; ++z) {
            const double szp = (static_cast<double>(z) + 0.5) * rz - 0.5;
            for (int64_t y = 0; y < ty; ++y) {
                const double syp = (static_cast<double>(y) + 0.5) * ry - 0.5;
                for (int64_t x = 0; x < tx; ++x) {
                    const double sxp = (static_cast<double>(x) + 0.5) * rx - 0.5;
                    out.at(c, z, y, x) = trilinear_sample(v, c, sxp, syp, szp);
                }
            }
        }
    }
    return out;
}

} // namespace jmfuse
