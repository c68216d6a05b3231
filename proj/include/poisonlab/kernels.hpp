#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace poisonlab::kernels {

// Layer math templated on the scalar type. The trainer instantiates float;
// gradient-check tests instantiate double so finite differences are not
// drowned by f32 round-off. Both instantiations share this code path.

// 3x3 convolution, stride 1, zero padding 1. in: (n,cin,h,w) planes,
// weight: (cout,cin,3,3), bias: cout. out: (n,cout,h,w).
template <typename T>
void conv3x3_forward(const T* in, int n, int cin, int h, int w,
                     const T* weight, const T* bias, int cout, T* out) {
    const size_t plane = static_cast<size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        for (int oc = 0; oc < cout; ++oc) {
            T* op = out + (static_cast<size_t>(i) * cout + oc) * plane;
            std::fill(op, op + plane, bias[oc]);
            for (int ic = 0; ic < cin; ++ic) {
                const T* ip = in + (static_cast<size_t>(i) * cin + ic) * plane;
                const T* wp = weight + (static_cast<size_t>(oc) * cin + ic) * 9;
                for (int kr = 0; kr < 3; ++kr) {
                    const int r0 = std::max(0, 1 - kr), r1 = std::min(h, h + 1 - kr);
                    for (int kc = 0; kc < 3; ++kc) {
                        const T wv = wp[kr * 3 + kc];
                        const int c0 = std::max(0, 1 - kc), c1 = std::min(w, w + 1 - kc);
                        for (int r = r0; r < r1; ++r) {
                            const T* src = ip + (r + kr - 1) * w + (c0 + kc - 1);
                            T* dst = op + r * w + c0;
                            for (int c = 0; c < c1 - c0; ++c) dst[c] += wv * src[c];
                        }
                    }
                }
            }
        }
    }
}

// Accumulates into d_in / d_weight / d_bias (callers zero them first).
template <typename T>
void conv3x3_backward(const T* in, int n, int cin, int h, int w,
                      const T* weight, int cout, const T* d_out,
                      T* d_in, T* d_weight, T* d_bias) {
    const size_t plane = static_cast<size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        for (int oc = 0; oc < cout; ++oc) {
            const T* gp = d_out + (static_cast<size_t>(i) * cout + oc) * plane;
            T bsum = T(0);
            for (size_t p = 0; p < plane; ++p) bsum += gp[p];
            d_bias[oc] += bsum;
            for (int ic = 0; ic < cin; ++ic) {
                const T* ip = in + (static_cast<size_t>(i) * cin + ic) * plane;
                T* dip = d_in ? d_in + (static_cast<size_t>(i) * cin + ic) * plane : nullptr;
                const T* wp = weight + (static_cast<size_t>(oc) * cin + ic) * 9;
                T* dwp = d_weight + (static_cast<size_t>(oc) * cin + ic) * 9;
                for (int kr = 0; kr < 3; ++kr) {
                    const int r0 = std::max(0, 1 - kr), r1 = std::min(h, h + 1 - kr);
                    for (int kc = 0; kc < 3; ++kc) {
                        const int c0 = std::max(0, 1 - kc), c1 = std::min(w, w + 1 - kc);
                        const T wv = wp[kr * 3 + kc];
                        T wsum = T(0);
                        for (int r = r0; r < r1; ++r) {
                            const T* src = ip + (r + kr - 1) * w + (c0 + kc - 1);
                            const T* g = gp + r * w + c0;
                            T acc = T(0);
                            for (int c = 0; c < c1 - c0; ++c) acc += g[c] * src[c];
                            wsum += acc;
                            if (dip) {
                                T* di = dip + (r + kr - 1) * w + (c0 + kc - 1);
                                for (int c = 0; c < c1 - c0; ++c) di[c] += wv * g[c];
                            }
                        }
                        dwp[kr * 3 + kc] += wsum;
                    }
                }
            }
        }
    }
}

template <typename T>
void relu_forward(T* x, size_t len) {
    for (size_t i = 0; i < len; ++i)
        if (x[i] < T(0)) x[i] = T(0);
}

// d_in = d_out where post-activation > 0. Safe to alias d_in == d_out.
template <typename T>
void relu_backward(const T* post, const T* d_out, T* d_in, size_t len) {
    for (size_t i = 0; i < len; ++i) d_in[i] = post[i] > T(0) ? d_out[i] : T(0);
}

// 2x2 max pool, stride 2, floor division on odd dims. argmax holds the
// winning offset (0..3 = 2*dr+dc) per output cell for the backward pass.
template <typename T>
void maxpool2x2_forward(const T* in, int n, int c, int h, int w,
                        T* out, uint8_t* argmax) {
    const int oh = h / 2, ow = w / 2;
    const size_t iplane = static_cast<size_t>(h) * w;
    const size_t oplane = static_cast<size_t>(oh) * ow;
    for (int i = 0; i < n * c; ++i) {
        const T* ip = in + i * iplane;
        T* op = out + i * oplane;
        uint8_t* ap = argmax + i * oplane;
        for (int r = 0; r < oh; ++r) {
            for (int col = 0; col < ow; ++col) {
                const T* cell = ip + (2 * r) * w + 2 * col;
                T best = cell[0];
                uint8_t arg = 0;
                if (cell[1] > best) { best = cell[1]; arg = 1; }
                if (cell[w] > best) { best = cell[w]; arg = 2; }
                if (cell[w + 1] > best) { best = cell[w + 1]; arg = 3; }
                op[r * ow + col] = best;
                ap[r * ow + col] = arg;
            }
        }
    }
}

template <typename T>
void maxpool2x2_backward(const uint8_t* argmax, int n, int c, int h, int w,
                         const T* d_out, T* d_in) {
    const int oh = h / 2, ow = w / 2;
    const size_t iplane = static_cast<size_t>(h) * w;
    const size_t oplane = static_cast<size_t>(oh) * ow;
    std::fill(d_in, d_in + static_cast<size_t>(n) * c * iplane, T(0));
    for (int i = 0; i < n * c; ++i) {
        const T* gp = d_out + i * oplane;
        T* dip = d_in + i * iplane;
        const uint8_t* ap = argmax + i * oplane;
        for (int r = 0; r < oh; ++r) {
            for (int col = 0; col < ow; ++col) {
                const uint8_t a = ap[r * ow + col];
                dip[(2 * r + a / 2) * w + 2 * col + a % 2] += gp[r * ow + col];
            }
        }
    }
}

// out[i][o] = bias[o] + sum_d weight[o][d] * in[i][d]; weight row-major (od).
template <typename T>
void dense_forward(const T* in, int n, int in_dim, const T* weight,
                   const T* bias, int out_dim, T* out) {
    for (int i = 0; i < n; ++i) {
        const T* x = in + static_cast<size_t>(i) * in_dim;
        T* y = out + static_cast<size_t>(i) * out_dim;
        for (int o = 0; o < out_dim; ++o) {
            const T* wr = weight + static_cast<size_t>(o) * in_dim;
            T acc = bias[o];
            for (int d = 0; d < in_dim; ++d) acc += wr[d] * x[d];
            y[o] = acc;
        }
    }
}

template <typename T>
void dense_backward(const T* in, int n, int in_dim, const T* weight,
                    int out_dim, const T* d_out, T* d_in, T* d_weight, T* d_bias) {
    for (int i = 0; i < n; ++i) {
        const T* x = in + static_cast<size_t>(i) * in_dim;
        const T* g = d_out + static_cast<size_t>(i) * out_dim;
        if (d_in) {
            T* dx = d_in + static_cast<size_t>(i) * in_dim;
            std::fill(dx, dx + in_dim, T(0));
            for (int o = 0; o < out_dim; ++o) {
                const T* wr = weight + static_cast<size_t>(o) * in_dim;
                const T gv = g[o];
                for (int d = 0; d < in_dim; ++d) dx[d] += gv * wr[d];
            }
        }
        for (int o = 0; o < out_dim; ++o) {
            T* dwr = d_weight + static_cast<size_t>(o) * in_dim;
            const T gv = g[o];
            for (int d = 0; d < in_dim; ++d) dwr[d] += gv * x[d];
            d_bias[o] += gv;
        }
    }
}

// Numerically stable row softmax.
template <typename T>
void softmax_row(const T* logits, int num_classes, T* probs) {
    T zmax = logits[0];
    for (int j = 1; j < num_classes; ++j) zmax = std::max(zmax, logits[j]);
    T sum = T(0);
    for (int j = 0; j < num_classes; ++j) {
        probs[j] = std::exp(logits[j] - zmax);
        sum += probs[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < num_classes; ++j) probs[j] *= inv;
}

// Per-example softmax cross-entropy: zmax + log(sum exp(z - zmax)) - z_y.
template <typename T>
T cross_entropy_row(const T* logits, int num_classes, int label) {
    T zmax = logits[0];
    for (int j = 1; j < num_classes; ++j) zmax = std::max(zmax, logits[j]);
    T sum = T(0);
    for (int j = 0; j < num_classes; ++j) sum += std::exp(logits[j] - zmax);
    return zmax + std::log(sum) - logits[label];
}

// d_logits for the MEAN loss over the batch: (softmax - onehot) / n.
template <typename T>
void cross_entropy_backward(const T* logits, int n, int num_classes,
                            const int* labels, T* d_logits) {
    std::vector<T> probs(static_cast<size_t>(num_classes));
    const T inv_n = T(1) / static_cast<T>(n);
    for (int i = 0; i < n; ++i) {
        const T* z = logits + static_cast<size_t>(i) * num_classes;
        softmax_row(z, num_classes, probs.data());
        T* g = d_logits + static_cast<size_t>(i) * num_classes;
        for (int j = 0; j < num_classes; ++j) g[j] = probs[j] * inv_n;
        g[labels[i]] -= inv_n;
    }
}

}  // namespace poisonlab::kernels
