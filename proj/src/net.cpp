#include "poisonlab/net.hpp"

#include <cmath>

#include "poisonlab/errors.hpp"
#include "poisonlab/kernels.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

SmallConvNet::SmallConvNet(int in_channels, int in_h, int in_w, int num_classes)
    : in_c_(in_channels), in_h_(in_h), in_w_(in_w), num_classes_(num_classes) {
    if (in_channels <= 0 || num_classes <= 0)
        throw RejectedInputError("SmallConvNet: channels and num_classes must be positive");
    if (in_h < 8 || in_w < 8)
        throw RejectedInputError("SmallConvNet: input must be at least 8x8");
    int c = in_channels, h = in_h, w = in_w;
    for (int b = 0; b < 3; ++b) {
        const int oc = kBlockChannels[b];
        conv_w_[b] = Tensor4(oc, c, 3, 3);
        conv_b_[b] = Tensor4::vec(oc);
        c = oc;
        h /= 2;
        w /= 2;
    }
    fc_in_dim_ = c * h * w;
    fc_w_ = Tensor4(1, 1, num_classes, fc_in_dim_);
    fc_b_ = Tensor4::vec(num_classes);
}

void SmallConvNet::init_he_uniform(uint64_t seed) {
    SplitMix64 rng(seed);
    for (int b = 0; b < 3; ++b) {
        const int fan_in = conv_w_[b].c * 9;
        const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
        for (float& v : conv_w_[b].data) v = rng.uniform(-limit, limit);
        std::fill(conv_b_[b].data.begin(), conv_b_[b].data.end(), 0.0f);
    }
    const float limit = std::sqrt(6.0f / static_cast<float>(fc_in_dim_));
    for (float& v : fc_w_.data) v = rng.uniform(-limit, limit);
    std::fill(fc_b_.data.begin(), fc_b_.data.end(), 0.0f);
}

std::vector<Tensor4*> SmallConvNet::parameters() {
    return {&conv_w_[0], &conv_b_[0], &conv_w_[1], &conv_b_[1],
            &conv_w_[2], &conv_b_[2], &fc_w_,      &fc_b_};
}

std::vector<const Tensor4*> SmallConvNet::parameters() const {
    return {&conv_w_[0], &conv_b_[0], &conv_w_[1], &conv_b_[1],
            &conv_w_[2], &conv_b_[2], &fc_w_,      &fc_b_};
}

std::vector<Tensor4> SmallConvNet::make_grad_buffers() const {
    std::vector<Tensor4> grads;
    for (const Tensor4* p : parameters()) grads.emplace_back(p->n, p->c, p->h, p->w);
    return grads;
}

void SmallConvNet::forward(const Tensor4& batch, Cache& cache) const {
    if (batch.c != in_c_ || batch.h != in_h_ || batch.w != in_w_)
        throw RejectedInputError("forward: batch shape does not match network input");
    const int n = batch.n;
    const Tensor4* cur = &batch;
    int h = in_h_, w = in_w_;
    for (int b = 0; b < 3; ++b) {
        const int oc = kBlockChannels[b];
        if (!(cache.conv_out[b].n == n && cache.conv_out[b].c == oc &&
              cache.conv_out[b].h == h && cache.conv_out[b].w == w))
            cache.conv_out[b] = Tensor4(n, oc, h, w);
        kernels::conv3x3_forward(cur->data.data(), n, cur->c, h, w,
                                 conv_w_[b].data.data(), conv_b_[b].data.data(), oc,
                                 cache.conv_out[b].data.data());
        kernels::relu_forward(cache.conv_out[b].data.data(), cache.conv_out[b].size());
        const int oh = h / 2, ow = w / 2;
        if (!(cache.pool_out[b].n == n && cache.pool_out[b].c == oc &&
              cache.pool_out[b].h == oh && cache.pool_out[b].w == ow)) {
            cache.pool_out[b] = Tensor4(n, oc, oh, ow);
            cache.pool_arg[b].assign(cache.pool_out[b].size(), 0);
        }
        kernels::maxpool2x2_forward(cache.conv_out[b].data.data(), n, oc, h, w,
                                    cache.pool_out[b].data.data(), cache.pool_arg[b].data());
        cur = &cache.pool_out[b];
        h = oh;
        w = ow;
    }
    if (!(cache.logits.n == n && cache.logits.w == num_classes_))
        cache.logits = Tensor4(n, 1, 1, num_classes_);
    kernels::dense_forward(cur->data.data(), n, fc_in_dim_, fc_w_.data.data(),
                           fc_b_.data.data(), num_classes_, cache.logits.data.data());
}

void SmallConvNet::backward(const Tensor4& batch, const Cache& cache,
                            const Tensor4& d_logits, std::vector<Tensor4>& grads) const {
    const int n = batch.n;
    // dense
    Tensor4 d_feat(n, cache.pool_out[2].c, cache.pool_out[2].h, cache.pool_out[2].w);
    kernels::dense_backward(cache.pool_out[2].data.data(), n, fc_in_dim_,
                            fc_w_.data.data(), num_classes_, d_logits.data.data(),
                            d_feat.data.data(), grads[6].data.data(), grads[7].data.data());
    // blocks in reverse
    Tensor4 d_pool = std::move(d_feat);
    for (int b = 2; b >= 0; --b) {
        const Tensor4& conv_out = cache.conv_out[b];
        Tensor4 d_conv(conv_out.n, conv_out.c, conv_out.h, conv_out.w);
        kernels::maxpool2x2_backward(cache.pool_arg[b].data(), n, conv_out.c, conv_out.h,
                                     conv_out.w, d_pool.data.data(), d_conv.data.data());
        kernels::relu_backward(conv_out.data.data(), d_conv.data.data(),
                               d_conv.data.data(), d_conv.size());
        const Tensor4& block_in = b == 0 ? batch : cache.pool_out[b - 1];
        Tensor4 d_in;
        float* d_in_ptr = nullptr;
        if (b > 0) {
            d_in = Tensor4(block_in.n, block_in.c, block_in.h, block_in.w);
            d_in_ptr = d_in.data.data();
        }
        kernels::conv3x3_backward(block_in.data.data(), n, block_in.c, block_in.h,
                                  block_in.w, conv_w_[b].data.data(), conv_out.c,
                                  d_conv.data.data(), d_in_ptr,
                                  grads[2 * b].data.data(), grads[2 * b + 1].data.data());
        d_pool = std::move(d_in);
    }
}

LossResult forward_loss(const SmallConvNet& net, const Tensor4& batch,
                        const std::vector<int>& labels) {
    if (batch.n != static_cast<int>(labels.size()))
        throw RejectedInputError("forward_loss: batch size does not match label count");
    if (batch.n == 0) throw RejectedInputError("forward_loss: empty batch");
    for (const int y : labels)
        if (y < 0 || y >= net.num_classes())
            throw RejectedInputError("forward_loss: label out of range");

    SmallConvNet::Cache cache;
    net.forward(batch, cache);
    if (!cache.logits.all_finite())
        throw NumericOverflowError("forward_loss: non-finite activation");

    LossResult res;
    res.per_example.resize(labels.size());
    double acc = 0.0;
    for (int i = 0; i < batch.n; ++i) {
        const float li = kernels::cross_entropy_row(
            cache.logits.data.data() + static_cast<size_t>(i) * net.num_classes(),
            net.num_classes(), labels[i]);
        if (!std::isfinite(li)) throw NumericOverflowError("forward_loss: non-finite loss");
        res.per_example[i] = li;
        acc += li;
    }
    res.mean_loss = acc / batch.n;
    res.logits = std::move(cache.logits);
    return res;
}

std::vector<float> per_example_losses(const SmallConvNet& net, const Tensor4& images,
                                      const std::vector<int>& labels) {
    if (images.n == 0) throw RejectedInputError("per_example_losses: empty dataset");
    if (images.n != static_cast<int>(labels.size()))
        throw RejectedInputError("per_example_losses: image/label count mismatch");
    constexpr int kChunk = 256;
    std::vector<float> out(labels.size());
    SmallConvNet::Cache cache;
    const size_t img_len = static_cast<size_t>(images.c) * images.h * images.w;
    for (int start = 0; start < images.n; start += kChunk) {
        const int n = std::min(kChunk, images.n - start);
        Tensor4 batch(n, images.c, images.h, images.w);
        std::copy(images.data.begin() + start * img_len,
                  images.data.begin() + (start + n) * img_len, batch.data.begin());
        net.forward(batch, cache);
        for (int i = 0; i < n; ++i) {
            const float li = kernels::cross_entropy_row(
                cache.logits.data.data() + static_cast<size_t>(i) * net.num_classes(),
                net.num_classes(), labels[start + i]);
            if (!std::isfinite(li))
                throw NumericOverflowError("per_example_losses: non-finite loss");
            out[start + i] = li;
        }
    }
    return out;
}

FeatureMatrix penultimate_features(const SmallConvNet& net, const Tensor4& batch) {
    if (batch.c != net.in_channels() || batch.h != net.in_h() || batch.w != net.in_w())
        throw RejectedInputError("penultimate_features: batch shape mismatch");
    SmallConvNet::Cache cache;
    net.forward(batch, cache);
    FeatureMatrix f;
    f.rows = batch.n;
    f.cols = net.feature_dim();
    f.data = cache.pool_out[2].data;
    return f;
}

std::vector<int> predict_classes(const SmallConvNet& net, const Tensor4& images) {
    constexpr int kChunk = 256;
    std::vector<int> out(images.n);
    SmallConvNet::Cache cache;
    const size_t img_len = static_cast<size_t>(images.c) * images.h * images.w;
    const int nc = net.num_classes();
    for (int start = 0; start < images.n; start += kChunk) {
        const int n = std::min(kChunk, images.n - start);
        Tensor4 batch(n, images.c, images.h, images.w);
        std::copy(images.data.begin() + start * img_len,
                  images.data.begin() + (start + n) * img_len, batch.data.begin());
        net.forward(batch, cache);
        for (int i = 0; i < n; ++i) {
            const float* z = cache.logits.data.data() + static_cast<size_t>(i) * nc;
            int best = 0;
            for (int j = 1; j < nc; ++j)
                if (z[j] > z[best]) best = j;
            out[start + i] = best;
        }
    }
    return out;
}

}  // namespace poisonlab
