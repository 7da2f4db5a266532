#include "jmfuse/jacobian.hpp"

#include <cmath>

#include "jmfuse/errors.hpp"

namespace jmfuse {

Volume jacobian_matrix_field(const Volume& field, FieldConvention convention) {
    require_deformation_field(field);
    if (field.nx < 3 || field.ny < 3 || field.nz < 3) {
        throw DimensionError("jacobian: every axis must span >= 3 voxels, got (" +
                             std::to_string(field.nx) + "," + std::to_string(field.ny) + "," +
                             std::to_string(field.nz) + ")");
    }
    Volume jac = make_volume(9, field.nx, field.ny, field.nz, field.sx, field.sy, field.sz);
    const double identity = convention == FieldConvention::displacement ? 1.0 : 0.0;

    for (int64_t comp = 0; comp < 3; ++comp) {
        for (int64_t z = 0; z < field.nz; ++z) {
            for (int64_t y = 0; y < field.ny; ++y) {
                for (int64_t x = 0; x < field.nx; ++x) {
                    // d/dx: axis 0, then d/dy, d/dz — one-sided at the ends
                    double dx, dy, dz;
                    if (x == 0) {
                        dx = field.at(comp, z, y, 1) - field.at(comp, z, y, 0);
                    } else if (x == field.nx - 1) {
                        dx = field.at(comp, z, y, x) - field.at(comp, z, y, x - 1);
                    } else {
                        dx = 0.5 * (field.at(comp, z, y, x + 1) - field.at(comp, z, y, x - 1));
                    }
                    if (y == 0) {
                        dy = field.at(comp, z, 1, x) - field.at(comp, z, 0, x);
                    } else if (y == field.ny - 1) {
                        dy = field.at(comp, z, y, x) - field.at(comp, z, y - 1, x);
                    } else {
                        dy = 0.5 * (field.at(comp, z, y + 1, x) - field.at(comp, z, y - 1, x));
                    }
                    if (z == 0) {
                        dz = field.at(comp, 1, y, x) - field.at(comp, 0, y, x);
                    } else if (z == field.nz - 1) {
                        dz = field.at(comp, z, y, x) - field.at(comp, z - 1, y, x);
                    } else {
                        dz = 0.5 * (field.at(comp, z + 1, y, x) - field.at(comp, z - 1, y, x));
                    }
                    jac.at(comp * 3 + 0, z, y, x) = dx + (comp == 0 ? identity : 0.0);
                    jac.at(comp * 3 + 1, z, y, x) = dy + (comp == 1 ? identity : 0.0);
                    jac.at(comp * 3 + 2, z, y, x) = dz + (comp == 2 ? identity : 0.0);
                }
            }
        }
    }
    return jac;
}

Volume determinant_map(const Volume& jac) {
    if (jac.channels != 9) {
        throw ValidationError("determinant_map: expected a 9-channel Jacobian volume, got " +
                              std::to_string(jac.channels) + " channels");
    }
    Volume det = make_volume(1, jac.nx, jac.ny, jac.nz, jac.sx, jac.sy, jac.sz);
    const int64_t n = jac.voxels();
    const double* J = jac.data.data();
    double* D = det.data.data();
    for (int64_t i = 0; i < n; ++i) {
        const double a = J[0 * n + i], b = J[1 * n + i], c = J[2 * n + i];
        const double d = J[3 * n + i], e = J[4 * n + i], f = J[5 * n + i];
        const double g = J[6 * n + i], h = J[7 * n + i], k = J[8 * n + i];
        D[i] = a * (e * k - f * h) - b * (d * k - f * g) + c * (d * h - e * g);
    }
    return det;
}

Volume log_jacobian_map(const Volume& detmap, const LogMapOptions& opts, ClampStats* stats) {
    if (detmap.channels != 1) {
        throw ValidationError("log_jacobian_map: expected a 1-channel determinant volume, got " +
                              std::to_string(detmap.channels) + " channels");
    }
    if (!(opts.eps > 0.0)) throw ValidationError("log_jacobian_map: eps must be > 0");
    Volume out = make_volume(1, detmap.nx, detmap.ny, detmap.nz, detmap.sx, detmap.sy, detmap.sz);
    int64_t clamped = 0;
    const int64_t n = detmap.voxels();
    for (int64_t i = 0; i < n; ++i) {
        double d = detmap.data[static_cast<size_t>(i)];
        if (d < opts.eps) {
            d = opts.eps;
            ++clamped;
        }
        const double l = std::log(d);
        out.data[static_cast<size_t>(i)] = opts.signed_log ? l : (d >= 1.0 ? l : -l);
    }
    if (stats) stats->clamped = clamped;
    return out;
}

Volume jsm_pipeline(const Volume& field, const JsmOptions& opts, ClampStats* stats) {
    const Volume jac = jacobian_matrix_field(field, opts.convention);
    const Volume det = determinant_map(jac);
    LogMapOptions lopts;
    lopts.eps = opts.eps;
    lopts.signed_log = opts.signed_log;
    return log_jacobian_map(det, lopts, stats);
}

} // namespace jmfuse
