#pragma once

#include <vector>

namespace poisonlab {

// Orthonormal 2-D DCT-II of a single h x w channel (row-major), and its
// inverse. idct2(dct2(x)) == x up to float round-off; energy is preserved.
std::vector<float> dct2(const std::vector<float>& channel, int h, int w);
std::vector<float> idct2(const std::vector<float>& coeffs, int h, int w);

}  // namespace poisonlab
