#include "poisonlab/optim.hpp"

#include <cmath>

#include "poisonlab/errors.hpp"
#include "poisonlab/kernels.hpp"

namespace poisonlab {

OptimizerState OptimizerState::for_net(const SmallConvNet& net, float base_lr,
                                       float weight_decay) {
    OptimizerState s;
    s.base_lr = base_lr;
    s.weight_decay = weight_decay;
    for (const Tensor4* p : net.parameters()) {
        s.m.emplace_back(p->n, p->c, p->h, p->w);
        s.v.emplace_back(p->n, p->c, p->h, p->w);
    }
    return s;
}

double lr_at(int epoch, int total_epochs, double base_lr) {
    if (total_epochs <= 0) throw RejectedInputError("lr_at: total_epochs must be positive");
    if (epoch < 0 || epoch > total_epochs)
        throw RejectedInputError("lr_at: epoch outside [0, total_epochs]");
    if (epoch == 0) return base_lr;
    if (epoch == total_epochs) return 0.0;
    const double x = 3.14159265358979323846 * epoch / total_epochs;
    return 0.5 * base_lr * (1.0 + std::cos(x));
}

void adamw_apply(SmallConvNet& net, OptimizerState& opt,
                 const std::vector<Tensor4>& grads, double lr) {
    auto params = net.parameters();
    if (params.size() != grads.size() || params.size() != opt.m.size())
        throw RejectedInputError("adamw_apply: optimizer state does not match net");
    opt.step += 1;
    const double b1t = 1.0 - std::pow(static_cast<double>(opt.beta1), static_cast<double>(opt.step));
    const double b2t = 1.0 - std::pow(static_cast<double>(opt.beta2), static_cast<double>(opt.step));
    const float lrf = static_cast<float>(lr);
    const float decay_scale = 1.0f - lrf * opt.weight_decay;
    for (size_t t = 0; t < params.size(); ++t) {
        float* p = params[t]->data.data();
        const float* g = grads[t].data.data();
        float* m = opt.m[t].data.data();
        float* v = opt.v[t].data.data();
        const size_t len = params[t]->size();
        if (grads[t].size() != len || opt.m[t].size() != len)
            throw RejectedInputError("adamw_apply: gradient shape mismatch");
        for (size_t i = 0; i < len; ++i) {
            m[i] = opt.beta1 * m[i] + (1.0f - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0f - opt.beta2) * g[i] * g[i];
            const float mhat = m[i] / static_cast<float>(b1t);
            const float vhat = v[i] / static_cast<float>(b2t);
            p[i] = p[i] * decay_scale - lrf * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

double backward_step(SmallConvNet& net, OptimizerState& opt, const Tensor4& batch,
                     const std::vector<int>& labels, double lr) {
    if (batch.n != static_cast<int>(labels.size()))
        throw RejectedInputError("backward_step: batch size does not match label count");
    SmallConvNet::Cache cache;
    net.forward(batch, cache);
    if (!cache.logits.all_finite())
        throw NumericOverflowError("backward_step: non-finite activation");

    double loss_acc = 0.0;
    for (int i = 0; i < batch.n; ++i)
        loss_acc += kernels::cross_entropy_row(
            cache.logits.data.data() + static_cast<size_t>(i) * net.num_classes(),
            net.num_classes(), labels[i]);
    const double mean_loss = loss_acc / batch.n;

    Tensor4 d_logits(batch.n, 1, 1, net.num_classes());
    kernels::cross_entropy_backward(cache.logits.data.data(), batch.n, net.num_classes(),
                                    labels.data(), d_logits.data.data());

    std::vector<Tensor4> grads = net.make_grad_buffers();
    net.backward(batch, cache, d_logits, grads);
    for (const Tensor4& g : grads)
        if (!g.all_finite()) throw NumericOverflowError("backward_step: non-finite gradient");

    adamw_apply(net, opt, grads, lr);
    return mean_loss;
}

}  // namespace poisonlab
