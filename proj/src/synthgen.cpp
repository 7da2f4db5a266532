#include "jmfuse/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "jmfuse/errors.hpp"

namespace jmfuse {

namespace {

struct Blob {
    double cx, cy, cz; // relative to (dim-1)
    double radius;     // relative to dim
    double intensity;
};

// fixed anatomy: a dark central "ventricle" pair and one bright off-center mass
constexpr Blob kBlobs[] = {
    {0.44, 0.52, 0.50, 0.085, -0.35},
    {0.56, 0.52, 0.50, 0.085, -0.35},
    {0.38, 0.36, 0.42, 0.070, 0.22},
};

double smoothstep(double edge, double width, double v) {
    // 1 inside (v << edge), 0 outside, smooth over `width`
    const double t = std::clamp((edge - v) / width + 0.5, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

} // namespace

void atrophy_center(const SynthConfig& cfg, double c[3]) {
    const double last = static_cast<double>(cfg.dim - 1);
    c[0] = std::round(0.55 * last);
    c[1] = std::round(0.45 * last);
    c[2] = std::round(0.50 * last);
}

SynthSubject generate_subject(const SynthConfig& cfg, int label, uint64_t subject_index) {
    if (cfg.dim < 8) throw ValidationError("synthgen: dim must be >= 8");
    if (cfg.atrophy_alpha < 0.0 || cfg.atrophy_alpha > 0.5) {
        throw ValidationError("synthgen: atrophy_alpha must lie in [0, 0.5]");
    }
    if (label != 0 && label != 1) throw ValidationError("synthgen: label outside {0,1}");

    SplitMix64 rng(mix_seed(cfg.seed, 0x73756273 + subject_index));
    const double alpha =
        label == 1 ? cfg.atrophy_alpha : rng.uniform(0.0, cfg.atrophy_alpha / 4.0);

    const int64_t n = cfg.dim;
    const double last = static_cast<double>(n - 1);
    const double cx = 0.5 * last, cy = 0.5 * last, cz = 0.5 * last;
    const double rx = 0.45 * static_cast<double>(n), ry = 0.40 * static_cast<double>(n),
                 rz = 0.42 * static_cast<double>(n);
    double ac[3];
    atrophy_center(cfg, ac);
    const double tex_radius = 0.16 * static_cast<double>(n);
    const double sigma2 = 2.0 * cfg.atrophy_sigma * cfg.atrophy_sigma;

    // base anatomy before warping; noise belongs to the base so it warps too
    Volume base = make_volume(1, n, n, n);
    for (int64_t z = 0; z < n; ++z) {
        for (int64_t y = 0; y < n; ++y) {
            for (int64_t x = 0; x < n; ++x) {
                const double dx = (static_cast<double>(x) - cx) / rx;
                const double dy = (static_cast<double>(y) - cy) / ry;
                const double dz = (static_cast<double>(z) - cz) / rz;
                const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
                double v = 0.6 * smoothstep(1.0, 0.08, r);
                for (const Blob& blob : kBlobs) {
                    const double bx = static_cast<double>(x) - blob.cx * last;
                    const double by = static_cast<double>(y) - blob.cy * last;
                    const double bz = static_cast<double>(z) - blob.cz * last;
                    const double br =
                        std::sqrt(bx * bx + by * by + bz * bz) / (blob.radius * static_cast<double>(n));
                    v += blob.intensity * smoothstep(1.0, 0.25, br);
                }
                // textured "hippocampal" structure at the atrophy site: bright mass with
                // a ~3-voxel intensity grating so local compression shifts the pattern
                const double hx = static_cast<double>(x) - ac[0];
                const double hy = static_cast<double>(y) - ac[1];
                const double hz = static_cast<double>(z) - ac[2];
                const double hr2 = hx * hx + hy * hy + hz * hz;
                const double envelope = std::exp(-hr2 / (2.0 * tex_radius * tex_radius * 0.25));
                if (hr2 < tex_radius * tex_radius * 4.0) {
                    v += envelope * (0.30 + 0.18 * std::cos(2.1 * hx) * std::cos(1.9 * hy) *
                                                std::cos(2.3 * hz));
                }
                v += rng.gaussian() * cfg.noise_sigma;
                base.at(0, z, y, x) = v;
            }
        }
    }

    // radial Gaussian contraction toward the atrophy center
    Volume field = make_volume(3, n, n, n);
    for (int64_t z = 0; z < n; ++z) {
        for (int64_t y = 0; y < n; ++y) {
            for (int64_t x = 0; x < n; ++x) {
                const double dx = static_cast<double>(x) - ac[0];
                const double dy = static_cast<double>(y) - ac[1];
                const double dz = static_cast<double>(z) - ac[2];
                const double g = std::exp(-(dx * dx + dy * dy + dz * dz) / sigma2);
                field.at(0, z, y, x) = -alpha * g * dx;
                field.at(1, z, y, x) = -alpha * g * dy;
                field.at(2, z, y, x) = -alpha * g * dz;
            }
        }
    }

    // pull the base image back through x + u(x)
    SynthSubject s;
    s.label = label;
    s.alpha = alpha;
    s.smri = make_volume(1, n, n, n);
    for (int64_t z = 0; z < n; ++z) {
        for (int64_t y = 0; y < n; ++y) {
            for (int64_t x = 0; x < n; ++x) {
                const double px = static_cast<double>(x) + field.at(0, z, y, x);
                const double py = static_cast<double>(y) + field.at(1, z, y, x);
                const double pz = static_cast<double>(z) + field.at(2, z, y, x);
                s.smri.at(0, z, y, x) = trilinear_sample(base, 0, px, py, pz);
            }
        }
    }
    s.field = std::move(field);

    char id[16];
    std::snprintf(id, sizeof id, "s%04llu", static_cast<unsigned long long>(subject_index));
    s.id = id;
    return s;
}

std::string generate_dataset(const SynthConfig& cfg, const std::string& out_dir) {
    if (cfg.n_subjects < 2) throw ValidationError("synthgen: need at least 2 subjects");
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    const std::filesystem::path manifest_path = dir / "manifest.csv";
    std::ofstream manifest(manifest_path, std::ios::trunc);
    if (!manifest) throw IoError("cannot open " + manifest_path.string() + " for writing");
    manifest << "subject_id,label,smri,field\n";

    const int n0 = cfg.n_subjects / 2; // class 0 count; class 1 takes the remainder
    for (int i = 0; i < cfg.n_subjects; ++i) {
        const int label = i < n0 ? 0 : 1;
        const SynthSubject s = generate_subject(cfg, label, static_cast<uint64_t>(i));
        const std::string smri_name = s.id + "_smri.rvol";
        const std::string field_name = s.id + "_field.rvol";
        save_rawvol(s.smri, (dir / smri_name).string(), kRawvolDtypeF32);
        save_rawvol(s.field, (dir / field_name).string(), kRawvolDtypeF32);
        manifest << s.id << "," << label << "," << smri_name << "," << field_name << "\n";
    }
    if (!manifest) throw IoError("write failed on " + manifest_path.string());
    return manifest_path.string();
}

} // namespace jmfuse
