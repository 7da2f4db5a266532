#pragma once

#include <cstdint>

#include "jmfuse/volume.hpp"

namespace jmfuse {

// Interpretation of the 3-channel input field:
//  - displacement: field holds u(x); the deformation gradient is I + grad(u)
//    (the usual convention for registration toolchain output)
//  - total_map: field holds the map v itself; the gradient is grad(v) as is
enum class FieldConvention { displacement, total_map };

struct LogMapOptions {
    double eps = 1e-6;       // clamp floor for non-positive determinants
    bool signed_log = false; // plain ln(d) instead of the folded |ln(d)| form
};

struct ClampStats {
    int64_t clamped = 0; // voxels whose determinant was raised to eps
};

struct JsmOptions {
    FieldConvention convention = FieldConvention::displacement;
    double eps = 1e-6;
    bool signed_log = false;
};

// 9-channel volume of per-voxel 3x3 matrices, row-major: channel 3r+c holds
// d(field_r)/d(axis_c). Central differences in the interior, one-sided
// first-order at the boundary; derivatives are taken in voxel units.
Volume jacobian_matrix_field(const Volume& field, FieldConvention convention);

// 1-channel volume of 3x3 determinants (cofactor expansion).
Volume determinant_map(const Volume& jac);

// Folds expansion and contraction onto the same non-negative scale:
// ln(d) when d >= 1, ln(1/d) when d < 1, after clamping d to at least eps.
Volume log_jacobian_map(const Volume& detmap, const LogMapOptions& opts, ClampStats* stats = nullptr);

// gradient -> determinant -> log map, as one call.
Volume jsm_pipeline(const Volume& field, const JsmOptions& opts, ClampStats* stats = nullptr);

} // namespace jmfuse
