#pragma once

#include <cstdint>
#include <vector>

#include "mrgr/tensor.hpp"

namespace mrgr {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment state aligned with a fixed parameter order.
struct AdamState {
    AdamConfig cfg;
    int64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    void init(const std::vector<Tensor*>& params, AdamConfig cfg_in);
};

// One update with bias correction:
//   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
//   p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Throws if params/grads do not match the state layout.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state);

} // namespace mrgr
