#include "jmfuse/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "jmfuse/errors.hpp"

namespace jmfuse {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw ValidationError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                              std::to_string(labels.size()) + " labels");
    }
    const size_t n = scores.size();
    int64_t n_pos = 0, n_neg = 0;
    for (int y : labels) {
        if (y == 1) {
            ++n_pos;
        } else if (y == 0) {
            ++n_neg;
        } else {
            throw ValidationError("roc_auc: label " + std::to_string(y) + " outside {0,1}");
        }
    }
    if (n_pos == 0 || n_neg == 0) {
        throw ValidationError("roc_auc: undefined, need both classes present (" +
                              std::to_string(n_pos) + " positives, " + std::to_string(n_neg) +
                              " negatives)");
    }

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });

    // ranks are 1-based; tied scores share the mean rank of their block
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t t = i; t <= j; ++t) {
            if (labels[order[t]] == 1) rank_sum_pos += midrank;
        }
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

int64_t count_parameters(const std::vector<Tensor>& params) {
    int64_t total = 0;
    for (const Tensor& t : params) total += t.numel();
    return total;
}

} // namespace jmfuse
