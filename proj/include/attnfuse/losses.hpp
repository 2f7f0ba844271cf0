#ifndef ATTNFUSE_LOSSES_HPP
#define ATTNFUSE_LOSSES_HPP

#include <vector>

#include "attnfuse/tensor.hpp"

namespace attnfuse {

struct ClsLossResult {
    double value = 0.0;
    std::vector<double> grad_logits; // (sigmoid(x) - y) / K
};

/// Multi-label sigmoid cross-entropy averaged over the K classes, in the
/// numerically stable log-sum-exp form.
ClsLossResult classification_loss(const std::vector<double>& logits, const LabelVector& y);

struct MacLossResult {
    double value = 0.0;
    Tensor3 grad_attn; // 2 (M - F) / ((K+1) H W), gradient w.r.t. the student maps
};

/// Mean squared consistency loss between a fixed target map stack and the
/// student's attention maps, averaged over channels and pixels.
MacLossResult mac_loss(const Tensor3& target, const Tensor3& student_attn);

/// cls + alpha * mac.
double total_loss(double cls, double mac, double alpha);

} // namespace attnfuse

#endif
