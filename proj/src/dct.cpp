#include "poisonlab/dct.hpp"

#include <cmath>

#include "poisonlab/errors.hpp"

namespace poisonlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Orthonormal DCT-II basis matrix A (n x n): A[u][i] = a(u) cos(pi (2i+1) u / 2n),
// a(0) = sqrt(1/n), a(u>0) = sqrt(2/n). Rows are orthonormal.
std::vector<double> basis(int n) {
    std::vector<double> a(static_cast<size_t>(n) * n);
    for (int u = 0; u < n; ++u) {
        const double scale = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (int i = 0; i < n; ++i)
            a[static_cast<size_t>(u) * n + i] =
                scale * std::cos(kPi * (2 * i + 1) * u / (2.0 * n));
    }
    return a;
}

// out = A * X * B^T for h x w X, with A (h x h) and B (w x w).
std::vector<float> sandwich(const std::vector<float>& x, int h, int w,
                            const std::vector<double>& a, bool transpose_a,
                            const std::vector<double>& b, bool transpose_b) {
    std::vector<double> tmp(static_cast<size_t>(h) * w, 0.0);
    for (int u = 0; u < h; ++u)
        for (int i = 0; i < h; ++i) {
            const double av = transpose_a ? a[static_cast<size_t>(i) * h + u]
                                          : a[static_cast<size_t>(u) * h + i];
            if (av == 0.0) continue;
            const float* row = x.data() + static_cast<size_t>(i) * w;
            double* out = tmp.data() + static_cast<size_t>(u) * w;
            for (int j = 0; j < w; ++j) out[j] += av * row[j];
        }
    std::vector<float> res(static_cast<size_t>(h) * w, 0.0f);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            double acc = 0.0;
            const double* row = tmp.data() + static_cast<size_t>(u) * w;
            for (int j = 0; j < w; ++j) {
                const double bv = transpose_b ? b[static_cast<size_t>(j) * w + v]
                                              : b[static_cast<size_t>(v) * w + j];
                acc += row[j] * bv;
            }
            res[static_cast<size_t>(u) * w + v] = static_cast<float>(acc);
        }
    return res;
}

}  // namespace

std::vector<float> dct2(const std::vector<float>& channel, int h, int w) {
    if (h <= 0 || w <= 0 || channel.size() != static_cast<size_t>(h) * w)
        throw RejectedInputError("dct2: bad channel dimensions");
    return sandwich(channel, h, w, basis(h), false, basis(w), false);
}

std::vector<float> idct2(const std::vector<float>& coeffs, int h, int w) {
    if (h <= 0 || w <= 0 || coeffs.size() != static_cast<size_t>(h) * w)
        throw RejectedInputError("idct2: bad channel dimensions");
    return sandwich(coeffs, h, w, basis(h), true, basis(w), true);
}

}  // namespace poisonlab
