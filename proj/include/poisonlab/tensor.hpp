#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "poisonlab/errors.hpp"

namespace poisonlab {

// Dense 4-D float array, row-major (n, c, h, w). Images, activations and
// gradients all use this shape; 1-D parameters are stored as (1,1,1,len).
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor4() = default;

    Tensor4(int n_, int c_, int h_, int w_, float fill = 0.0f)
        : n(n_), c(c_), h(h_), w(w_) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw RejectedInputError("Tensor4: negative dimension");
        data.assign(static_cast<size_t>(n_) * c_ * h_ * w_, fill);
    }

    static Tensor4 vec(int len, float fill = 0.0f) { return Tensor4(1, 1, 1, len, fill); }

    size_t size() const { return data.size(); }

    float& at(int i, int j, int k, int l) {
        return data[((static_cast<size_t>(i) * c + j) * h + k) * w + l];
    }
    float at(int i, int j, int k, int l) const {
        return data[((static_cast<size_t>(i) * c + j) * h + k) * w + l];
    }

    float* plane(int i, int j) { return data.data() + (static_cast<size_t>(i) * c + j) * h * w; }
    const float* plane(int i, int j) const {
        return data.data() + (static_cast<size_t>(i) * c + j) * h * w;
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    bool all_finite() const {
        for (const float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_invariants() const {
        if (data.size() != static_cast<size_t>(n) * c * h * w)
            throw RejectedInputError("Tensor4: data length does not match dims");
        if (!all_finite()) throw NumericOverflowError("Tensor4: non-finite value");
    }
};

}  // namespace poisonlab
