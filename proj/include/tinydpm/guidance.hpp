#pragma once

// Input-gradient of the guidance classifier's log-probability, the quantity
// that shifts the reverse-step mean during guided sampling.

#include <vector>

#include "tinydpm/classifier.hpp"
#include "tinydpm/ops.hpp"

namespace tinydpm {

// d/dx_t of sum_i log p(y_i | x_t_i, t_i). Samples are independent through
// the network, so the batched sum yields each row's own gradient. Classifier
// parameters accumulate nothing (they are left non-trainable).
template <class T>
TensorT<T> grad_log_prob(const GuidanceClassifier<T>& c, const TensorT<T>& x_t,
                         const std::vector<int>& ts, const std::vector<int>& ys) {
    if (static_cast<int>(ys.size()) != x_t.dim(0))
        throw ShapeError("grad_log_prob: one label per sample required");
    for (int y : ys)
        if (y < 0 || y >= c.cfg.num_classes)
            throw DataError("grad_log_prob: label " + std::to_string(y) + " out of range");
    TensorT<T> x = x_t.detach();
    x.set_requires_grad(true);
    TensorT<T> score = pick_label_sum(log_softmax_rows(c.logits(x, ts)), ys);
    backward(score);
    return x.grad_tensor();
}

template <class T>
TensorT<T> grad_log_prob(const GuidanceClassifier<T>& c, const TensorT<T>& x_t, int t, int y) {
    auto n = static_cast<size_t>(x_t.dim(0));
    return grad_log_prob(c, x_t, std::vector<int>(n, t), std::vector<int>(n, y));
}

}  // namespace tinydpm
