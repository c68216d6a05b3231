#pragma once

#include <string>

#include "poisonlab/net.hpp"

namespace poisonlab {

// Checkpoint file layout, little-endian throughout:
//   magic "BDL1" | epoch u32 | tensor_count u32 | per tensor: dims u32 x4, f32 payload
// The epoch doubles as the schedule position. Round-trips are bit-exact.

void save_checkpoint(const SmallConvNet& net, int epoch, const std::string& path);

// Restores parameters into an architecture-compatible net and returns the
// stored epoch. Loads into a staging buffer first: a corrupt or truncated
// file leaves the net untouched.
int load_checkpoint(SmallConvNet& net, const std::string& path);

}  // namespace poisonlab
