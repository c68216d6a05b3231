#include "poisonlab/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "poisonlab/checkpoint.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

TrainResult train_model(SmallConvNet& net, const ImageDataset& train, const TrainOptions& opts,
                        const BatchHook& on_batch) {
    if (train.size() == 0) throw RejectedInputError("train_model: empty training set");
    if (opts.epochs <= 0) throw RejectedInputError("train_model: epochs must be positive");
    if (opts.batch_size <= 0)
        throw RejectedInputError("train_model: batch size must be positive");

    OptimizerState opt = OptimizerState::for_net(net);
    opt.base_lr = opts.base_lr;
    opt.weight_decay = opts.weight_decay;

    TrainResult result;
    TrajectoryRecorder recorder(train.example_ids);
    std::vector<float> discarded(train.example_ids.size(), 0.0f);

    const size_t img_len = train.image_len();
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Tensor4 batch;
    std::vector<int> batch_labels;
    std::vector<int> batch_ids;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        SplitMix64 rng(derive_seed(opts.shuffle_seed, "batch_order", static_cast<uint64_t>(epoch)));
        rng.shuffle(order);
        const double lr = lr_at(epoch, opts.epochs, opts.base_lr);

        double loss_sum = 0.0;
        for (int start = 0; start < train.size(); start += opts.batch_size) {
            const int n = std::min(opts.batch_size, train.size() - start);
            batch = Tensor4(n, train.images.c, train.images.h, train.images.w);
            batch_labels.resize(n);
            batch_ids.resize(n);
            for (int i = 0; i < n; ++i) {
                const int row = order[start + i];
                std::copy(train.image(row), train.image(row) + img_len,
                          batch.data.begin() + i * img_len);
                batch_labels[i] = train.labels[row];
                batch_ids[i] = train.example_ids[row];
            }
            if (on_batch) on_batch(epoch, batch_ids);
            const double mean_loss = backward_step(net, opt, batch, batch_labels, lr);
            loss_sum += mean_loss * n;
        }
        const double avg_loss = loss_sum / static_cast<double>(train.size());
        result.epoch_avg_losses.push_back(avg_loss);

        if (opts.record_trajectories) {
            if (recorder.would_keep(avg_loss)) {
                recorder.record_epoch(epoch, avg_loss,
                                      per_example_losses(net, train.images, train.labels));
            } else {
                recorder.record_epoch(epoch, avg_loss, discarded);
            }
        }

        if (!opts.checkpoint_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "/ckpt_%04d.bin", epoch);
            const std::string path = opts.checkpoint_dir + name;
            save_checkpoint(net, epoch, path);
            result.checkpoint_paths.push_back(path);
        }
    }

    if (opts.record_trajectories) {
        result.trajectories = recorder.finalize();
        result.filter = recorder.state();
    }
    return result;
}

}  // namespace poisonlab
