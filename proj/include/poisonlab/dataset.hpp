#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poisonlab/tensor.hpp"

namespace poisonlab {

// Immutable-after-construction image classification dataset. Pixel values in
// [0,1]; example ids are stable across shuffles, splits and poisoning.
struct ImageDataset {
    Tensor4 images;                // (n, c, h, w)
    std::vector<int> labels;
    std::vector<int> example_ids;  // unique, parallel to images/labels
    int num_classes = 0;

    int size() const { return images.n; }
    size_t image_len() const { return static_cast<size_t>(images.c) * images.h * images.w; }
    const float* image(int index) const { return images.data.data() + index * image_len(); }
    float* image(int index) { return images.data.data() + index * image_len(); }

    void check_invariants() const;

    // New dataset holding the given row indices, ids preserved.
    ImageDataset subset(const std::vector<int>& indices) const;

    // Row index for an example id (ids are not required to be dense).
    int index_of(int example_id) const;
};

// Which attack, if any, touched each example. Tags index into attack_names;
// tag 0 is always "clean". original/target labels are -1 for clean rows.
struct PoisonMask {
    std::vector<std::string> attack_names;  // [0] == "clean"
    std::vector<int> tags;                  // per example, parallel to dataset
    std::vector<int> original_labels;
    std::vector<int> target_labels;

    static PoisonMask all_clean(int n);
    const std::string& tag_name(int index) const { return attack_names[tags[index]]; }
};

struct PoisonedDataset {
    ImageDataset data;
    PoisonMask mask;
};

// Train / test / probe membership by example id. Probes are bona fide clean
// train examples that anchor the trajectory detector.
struct SplitSpec {
    std::vector<int> train_ids;
    std::vector<int> test_ids;
    std::vector<int> probe_ids;  // subset of train_ids
    uint64_t seed = 0;

    void check_invariants() const;
};

// CIFAR-10 binary batch: records of 3073 bytes, 1 label byte then 3072 pixel
// bytes (1024 R, 1024 G, 1024 B, row-major 32x32). Pixel byte v -> v/255.
ImageDataset load_cifar10_binary(const std::string& path);

// Same record layout generalized to (c,h,w): 1 label byte + c*h*w pixel
// bytes per record, channel-planar. For 3x32x32 this is bit-compatible with
// the CIFAR-10 batch format. Pixels are quantized with round(v*255).
void save_dataset_binary(const ImageDataset& ds, const std::string& path);
ImageDataset load_dataset_binary(const std::string& path, int num_classes, int c, int h, int w);

// Deterministic synthetic dataset: each class is a noisy rendering of a
// class-distinct geometric template (stripes, disks, gradients, ...), with
// per-image brightness/contrast jitter, translation, and pixel noise. Easy
// enough for SmallConvNet to fit well within a few epochs.
ImageDataset make_synthetic(int num_classes, int per_class, int h, int w, uint64_t seed,
                            int channels = 3);

// Draws a test set of round(test_fraction * n) ids and n_probe probe ids
// uniformly from the remaining train ids. stratified_probes samples probes
// per class instead (round-robin over a class-shuffled order).
SplitSpec split(const ImageDataset& ds, double test_fraction, int n_probe, uint64_t seed,
                bool stratified_probes = false);

}  // namespace poisonlab
