#pragma once

#include <cstdint>
#include <vector>

#include "jmfuse/tensor.hpp"

namespace jmfuse {

// Mann-Whitney ROC-AUC with midrank tie handling, O(n log n).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

int64_t count_parameters(const std::vector<Tensor>& params);

} // namespace jmfuse
