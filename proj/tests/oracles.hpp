#pragma once

// Brute-force reference implementations for the test suite. These deliberately
// share no code with the library: plain loops over plain vectors.

#include <cstdint>
#include <vector>

namespace oracles {

// direct 7-loop cross-correlation, accumulation order bias, then (ic,kz,ky,kx)
std::vector<double> conv3d(const std::vector<double>& x, int64_t cin, int64_t dd, int64_t hh,
                           int64_t ww, const std::vector<double>& w, int64_t cout, int64_t k,
                           const std::vector<double>& bias, int stride, int pad);

std::vector<double> matmul(const std::vector<double>& a, int64_t m, int64_t kk,
                           const std::vector<double>& b, int64_t n);

// O(n^2) pair counting with 0.5 credit for ties
double auc_pair_count(const std::vector<double>& scores, const std::vector<int>& labels);

// row-major token matrices [n][d]
struct DenseAttn {
    std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo; // [d][d] and [d]
    int64_t d = 0;
    int heads = 1;
};

std::vector<double> dense_mha(const std::vector<double>& q_in, int64_t nq,
                              const std::vector<double>& kv_in, int64_t nk, const DenseAttn& p);

std::vector<double> dense_self_fuse(const std::vector<double>& fs, const std::vector<double>& fj,
                                    int64_t n, const DenseAttn& p);

std::vector<double> dense_bottleneck_fuse(const std::vector<double>& fs,
                                          const std::vector<double>& fj, int64_t n,
                                          const std::vector<double>& tokens, int64_t nb,
                                          const DenseAttn& p_smri, const DenseAttn& p_jsm);

std::vector<double> dense_cross_fuse(const std::vector<double>& fs, int64_t n_s,
                                     const std::vector<double>& fj, int64_t n_j,
                                     const DenseAttn& p);

// minimal single-file little-endian writer for parser fixtures
struct NiftiFixture {
    int16_t ndim = 3;
    int16_t nx = 0, ny = 0, nz = 0, nt = 1;
    float px = 1.0f, py = 1.0f, pz = 1.0f;
    int16_t datatype = 16; // float32
    float vox_offset = 352.0f;
    float scl_slope = 0.0f, scl_inter = 0.0f;
    const char* magic = "n+1";
    int32_t sizeof_hdr = 348;
};

std::vector<unsigned char> nifti_bytes(const NiftiFixture& fx, const std::vector<float>& body);

} // namespace oracles
