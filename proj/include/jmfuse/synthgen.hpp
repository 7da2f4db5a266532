#pragma once

#include <cstdint>
#include <string>

#include "jmfuse/rng.hpp"
#include "jmfuse/volume.hpp"

namespace jmfuse {

// Paired phantom generator: an ellipsoid "brain" with fixed internal
// structures, plus a localized radial contraction whose strength carries the
// class signal (full alpha for class 1, a small draw from [0, alpha/4] for
// class 0).
struct SynthConfig {
    int n_subjects = 200;
    int64_t dim = 32;
    double atrophy_alpha = 0.25;
    double atrophy_sigma = 4.0;
    double noise_sigma = 0.05;
    uint64_t seed = 42;
};

struct SynthSubject {
    std::string id;
    int label = 0;
    Volume smri;  // warped intensity volume
    Volume field; // displacement, voxel units
    double alpha = 0.0;
};

// Voxel coordinates of the contraction center for this grid size.
void atrophy_center(const SynthConfig& cfg, double c[3]);

SynthSubject generate_subject(const SynthConfig& cfg, int label, uint64_t subject_index);

// Writes <id>_smri.rvol / <id>_field.rvol per subject plus manifest.csv;
// returns the manifest path. Classes split half and half.
std::string generate_dataset(const SynthConfig& cfg, const std::string& out_dir);

} // namespace jmfuse
