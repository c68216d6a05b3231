#pragma once

#include <cstdint>
#include <vector>

#include "poisonlab/net.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {

// AdamW with decoupled weight decay. Moment tensors mirror the parameter
// tensors of the net the state was built for.
struct OptimizerState {
    std::vector<Tensor4> m;
    std::vector<Tensor4> v;
    int64_t step = 0;
    float base_lr = 1e-3f;
    float weight_decay = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    static OptimizerState for_net(const SmallConvNet& net, float base_lr = 1e-3f,
                                  float weight_decay = 1e-4f);
};

// Cosine annealing: 0.5 * base_lr * (1 + cos(pi * epoch / total_epochs)).
// Exactly base_lr at epoch 0 and exactly 0 at epoch == total_epochs.
double lr_at(int epoch, int total_epochs, double base_lr);

// One AdamW step on a labeled batch at the given learning rate. Returns the
// mean batch loss. Gradients live only inside the call.
double backward_step(SmallConvNet& net, OptimizerState& opt, const Tensor4& batch,
                     const std::vector<int>& labels, double lr);

// Applies precomputed gradients; split out so tests can drive it directly.
void adamw_apply(SmallConvNet& net, OptimizerState& opt,
                 const std::vector<Tensor4>& grads, double lr);

}  // namespace poisonlab
