#pragma once

#include <cstdint>
#include <vector>

#include "poisonlab/tensor.hpp"

namespace poisonlab {

// Row-major (rows x cols) float matrix; penultimate features, trajectories.
struct FeatureMatrix {
    int rows = 0, cols = 0;
    std::vector<float> data;
    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

// Minimal deterministic convolutional classifier: three conv3x3+ReLU+maxpool
// blocks (16 -> 32 -> 64 channels) and a final dense layer. Input height and
// width must survive three halvings, so both must be >= 8.
class SmallConvNet {
public:
    static constexpr int kBlockChannels[3] = {16, 32, 64};

    SmallConvNet(int in_channels, int in_h, int in_w, int num_classes);

    // He-uniform weights, zero biases, from a named SplitMix64 stream.
    void init_he_uniform(uint64_t seed);

    int num_classes() const { return num_classes_; }
    int in_channels() const { return in_c_; }
    int in_h() const { return in_h_; }
    int in_w() const { return in_w_; }
    int feature_dim() const { return fc_in_dim_; }

    // Parameter tensors in checkpoint order: (convW, convB) x3, fcW, fcB.
    std::vector<Tensor4*> parameters();
    std::vector<const Tensor4*> parameters() const;

    // Intermediate activations for one batch, reused between forward and
    // backward. Sized lazily for the current batch size.
    struct Cache {
        Tensor4 conv_out[3];                 // post-ReLU
        Tensor4 pool_out[3];
        std::vector<uint8_t> pool_arg[3];
        Tensor4 logits;                      // (n,1,1,num_classes)
    };

    // Logits for a batch; cache is filled for a subsequent backward().
    void forward(const Tensor4& batch, Cache& cache) const;

    // Gradients of the mean batch loss wrt every parameter, accumulated into
    // grads (same order/shape as parameters()).
    void backward(const Tensor4& batch, const Cache& cache, const Tensor4& d_logits,
                  std::vector<Tensor4>& grads) const;

    std::vector<Tensor4> make_grad_buffers() const;

    Tensor4 conv_w_[3], conv_b_[3];
    Tensor4 fc_w_, fc_b_;

private:
    int in_c_, in_h_, in_w_, num_classes_;
    int fc_in_dim_;
};

struct LossResult {
    double mean_loss = 0.0;
    std::vector<float> per_example;
    Tensor4 logits;
};

// Softmax cross-entropy over a labeled batch. Throws RejectedInputError on
// size/label mismatches and NumericOverflowError on non-finite activations.
LossResult forward_loss(const SmallConvNet& net, const Tensor4& batch,
                        const std::vector<int>& labels);

// Loss of every (image, label) pair at fixed parameters, in input order.
// No gradients, batched internally.
std::vector<float> per_example_losses(const SmallConvNet& net, const Tensor4& images,
                                      const std::vector<int>& labels);

// Input of the final dense layer, one row per batch example.
FeatureMatrix penultimate_features(const SmallConvNet& net, const Tensor4& batch);

// Argmax class per example; ties resolved to the lowest class index.
std::vector<int> predict_classes(const SmallConvNet& net, const Tensor4& images);

}  // namespace poisonlab
