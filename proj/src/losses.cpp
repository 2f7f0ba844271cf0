#include "attnfuse/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace attnfuse {

ClsLossResult classification_loss(const std::vector<double>& logits, const LabelVector& y) {
    const int k = static_cast<int>(logits.size());
    if (k != y.k()) {
        throw std::invalid_argument("classification_loss: " + std::to_string(k) + " logits vs " +
                                    std::to_string(y.k()) + " labels");
    }
    ClsLossResult out;
    out.grad_logits.resize(k);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        const double x = logits[i];
        const double t = y.present[i] ? 1.0 : 0.0;
        // BCE with logits: max(x,0) - x*t + log(1 + exp(-|x|))
        sum += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
        const double sig = 1.0 / (1.0 + std::exp(-x));
        out.grad_logits[i] = (sig - t) / k;
    }
    out.value = sum / k;
    return out;
}

MacLossResult mac_loss(const Tensor3& target, const Tensor3& student_attn) {
    if (!target.same_shape(student_attn)) {
        throw std::invalid_argument("mac_loss: shape mismatch " + target.shape_str() + " vs " +
                                    student_attn.shape_str());
    }
    MacLossResult out;
    out.grad_attn = Tensor3(target.channels, target.height, target.width);
    const double n = static_cast<double>(target.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = target.data[i] - student_attn.data[i];
        sum += d * d;
        out.grad_attn.data[i] = -2.0 * d / n;
    }
    out.value = sum / n;
    return out;
}

double total_loss(double cls, double mac, double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("total_loss: alpha must be >= 0");
    return cls + alpha * mac;
}

} // namespace attnfuse
