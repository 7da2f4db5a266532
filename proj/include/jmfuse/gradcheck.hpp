#pragma once

#include <functional>
#include <string>
#include <vector>

#include "jmfuse/tensor.hpp"

namespace jmfuse {

// Central finite differences (h = 1e-6 * (1 + |x|)) against the autodiff
// gradient; relative error |a - fd| / max(1, |a|, |fd|). build_loss must
// construct a fresh scalar graph over the given leaf parameters each call.
double max_grad_error(const std::function<Tensor()>& build_loss, const std::vector<Tensor>& params);

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int64_t elements = 0;
};

// Fixed-seed checks for the core ops, the three fusion heads, and a small
// end-to-end model (8^3 input, 8-dim embedding).
std::vector<GradCheckEntry> run_gradcheck_suite();

} // namespace jmfuse
