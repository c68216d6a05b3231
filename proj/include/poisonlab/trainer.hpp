#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "poisonlab/dataset.hpp"
#include "poisonlab/net.hpp"
#include "poisonlab/optim.hpp"
#include "poisonlab/trajectory.hpp"

namespace poisonlab {

struct TrainOptions {
    int epochs = 30;
    int batch_size = 128;
    float base_lr = 1e-3f;
    float weight_decay = 1e-4f;
    uint64_t shuffle_seed = 0;
    // When set, a checkpoint is written after every epoch (spike-rejected
    // epochs included: test-time detection replays the full sequence).
    std::string checkpoint_dir;
    // When true, end-of-epoch per-example losses feed the spike filter and
    // the returned trajectory matrix.
    bool record_trajectories = false;
};

struct TrainResult {
    TrajectoryMatrix trajectories;  // empty unless record_trajectories
    EpochFilterState filter;
    std::vector<std::string> checkpoint_paths;
    std::vector<double> epoch_avg_losses;  // every epoch, training loss
};

// Observes each training batch's example ids before the update step.
using BatchHook = std::function<void(int epoch, const std::vector<int>& example_ids)>;

// Cosine-annealed AdamW epoch loop over shuffled minibatches. Batch order is
// drawn per epoch from shuffle_seed; everything is single-threaded and
// deterministic for a fixed seed.
TrainResult train_model(SmallConvNet& net, const ImageDataset& train, const TrainOptions& opts,
                        const BatchHook& on_batch = nullptr);

}  // namespace poisonlab
