#include "poisonlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

void ImageDataset::check_invariants() const {
    if (images.n != static_cast<int>(labels.size()) ||
        images.n != static_cast<int>(example_ids.size()))
        throw RejectedInputError("ImageDataset: images/labels/ids length mismatch");
    for (const int y : labels)
        if (y < 0 || y >= num_classes)
            throw RejectedInputError("ImageDataset: label out of range");
    std::unordered_set<int> seen;
    for (const int id : example_ids)
        if (!seen.insert(id).second)
            throw RejectedInputError("ImageDataset: duplicate example id");
    for (const float v : images.data)
        if (!(v >= 0.0f && v <= 1.0f))
            throw RejectedInputError("ImageDataset: pixel outside [0,1]");
}

ImageDataset ImageDataset::subset(const std::vector<int>& indices) const {
    ImageDataset out;
    out.num_classes = num_classes;
    out.images = Tensor4(static_cast<int>(indices.size()), images.c, images.h, images.w);
    out.labels.reserve(indices.size());
    out.example_ids.reserve(indices.size());
    const size_t len = image_len();
    for (size_t r = 0; r < indices.size(); ++r) {
        const int i = indices[r];
        std::copy(image(i), image(i) + len, out.images.data.begin() + r * len);
        out.labels.push_back(labels[i]);
        out.example_ids.push_back(example_ids[i]);
    }
    return out;
}

int ImageDataset::index_of(int example_id) const {
    for (size_t i = 0; i < example_ids.size(); ++i)
        if (example_ids[i] == example_id) return static_cast<int>(i);
    throw RejectedInputError("ImageDataset: unknown example id");
}

PoisonMask PoisonMask::all_clean(int n) {
    PoisonMask m;
    m.attack_names = {"clean"};
    m.tags.assign(n, 0);
    m.original_labels.assign(n, -1);
    m.target_labels.assign(n, -1);
    return m;
}

void SplitSpec::check_invariants() const {
    std::unordered_set<int> train(train_ids.begin(), train_ids.end());
    for (const int id : test_ids)
        if (train.count(id)) throw RejectedInputError("SplitSpec: train/test overlap");
    for (const int id : probe_ids)
        if (!train.count(id)) throw RejectedInputError("SplitSpec: probe id not in train");
}

// ---------------------------------------------------------------------------
// Binary dataset IO
// ---------------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_all_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open dataset file: " + path);
    const std::streamsize len = in.tellg();
    in.seekg(0);
    std::vector<unsigned char> bytes(static_cast<size_t>(len));
    in.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!in) throw IoError("failed reading dataset file: " + path);
    return bytes;
}

ImageDataset decode_records(const std::vector<unsigned char>& bytes, const std::string& path,
                            int num_classes, int c, int h, int w) {
    const size_t record = 1 + static_cast<size_t>(c) * h * w;
    if (bytes.empty() || bytes.size() % record != 0) {
        const size_t offset = bytes.size() - bytes.size() % record;
        char msg[160];
        std::snprintf(msg, sizeof msg,
                      "%s: file length %zu is not a multiple of record size %zu "
                      "(trailing partial record at offset %zu)",
                      path.c_str(), bytes.size(), record, offset);
        throw FormatError(msg);
    }
    const int n = static_cast<int>(bytes.size() / record);
    ImageDataset ds;
    ds.num_classes = num_classes;
    ds.images = Tensor4(n, c, h, w);
    ds.labels.resize(n);
    ds.example_ids.resize(n);
    const size_t pix = static_cast<size_t>(c) * h * w;
    for (int i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + static_cast<size_t>(i) * record;
        if (rec[0] >= num_classes) {
            char msg[128];
            std::snprintf(msg, sizeof msg, "%s: label byte %d out of range at record %d",
                          path.c_str(), rec[0], i);
            throw FormatError(msg);
        }
        ds.labels[i] = rec[0];
        ds.example_ids[i] = i;
        float* dst = ds.images.data.data() + static_cast<size_t>(i) * pix;
        for (size_t p = 0; p < pix; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
    }
    return ds;
}

}  // namespace

ImageDataset load_cifar10_binary(const std::string& path) {
    return decode_records(read_all_bytes(path), path, 10, 3, 32, 32);
}

ImageDataset load_dataset_binary(const std::string& path, int num_classes, int c, int h,
                                 int w) {
    return decode_records(read_all_bytes(path), path, num_classes, c, h, w);
}

void save_dataset_binary(const ImageDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open dataset file for writing: " + path);
    const size_t pix = ds.image_len();
    std::vector<unsigned char> rec(1 + pix);
    for (int i = 0; i < ds.size(); ++i) {
        rec[0] = static_cast<unsigned char>(ds.labels[i]);
        const float* src = ds.image(i);
        for (size_t p = 0; p < pix; ++p) {
            const float v = std::min(1.0f, std::max(0.0f, src[p]));
            rec[1 + p] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
        out.write(reinterpret_cast<const char*>(rec.data()),
                  static_cast<std::streamsize>(rec.size()));
    }
    if (!out) throw IoError("dataset write failed: " + path);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace {

// Class-distinct base pattern in [0,1]. Coordinates are pre-jitter.
float template_value(int cls, int r, int c, int h, int w) {
    const float hi = 0.85f, lo = 0.15f;
    const float cy = (h - 1) * 0.5f, cx = (w - 1) * 0.5f;
    const float rad = std::min(h, w) * 0.5f;
    switch (cls % 10) {
        case 0:  // horizontal stripes, period 4
            return (r / 2) % 2 == 0 ? hi : lo;
        case 1:  // vertical stripes, period 4
            return (c / 2) % 2 == 0 ? hi : lo;
        case 2: {  // filled disk
            const float d = std::sqrt((r - cy) * (r - cy) + (c - cx) * (c - cx));
            return d < rad * 0.55f ? hi : lo;
        }
        case 3: {  // diagonal gradient
            const float t = static_cast<float>(r + c) / static_cast<float>(h + w - 2);
            return lo + (hi - lo) * t;
        }
        case 4:  // checkerboard blocks, period 8
            return ((r / 4) + (c / 4)) % 2 == 0 ? hi : lo;
        case 5: {  // ring
            const float d = std::sqrt((r - cy) * (r - cy) + (c - cx) * (c - cx));
            return (d > rad * 0.4f && d < rad * 0.8f) ? hi : lo;
        }
        case 6:  // diagonal stripes
            return ((r + c) / 2) % 2 == 0 ? hi : lo;
        case 7: {  // vertical gradient
            const float t = static_cast<float>(r) / static_cast<float>(h - 1);
            return hi - (hi - lo) * t;
        }
        case 8: {  // bright radial falloff
            const float d = std::sqrt((r - cy) * (r - cy) + (c - cx) * (c - cx));
            return hi - (hi - lo) * std::min(1.0f, d / rad);
        }
        default: {  // X cross
            const bool on = std::abs(r - c) <= 1 || std::abs(r + c - (h - 1)) <= 1;
            return on ? hi : lo;
        }
    }
}

int wrap(int v, int n) {
    v %= n;
    return v < 0 ? v + n : v;
}

}  // namespace

ImageDataset make_synthetic(int num_classes, int per_class, int h, int w, uint64_t seed,
                            int channels) {
    if (num_classes <= 0 || per_class <= 0 || h <= 0 || w <= 0 || channels <= 0)
        throw RejectedInputError("make_synthetic: all arguments must be positive");
    const int n = num_classes * per_class;
    ImageDataset ds;
    ds.num_classes = num_classes;
    ds.images = Tensor4(n, channels, h, w);
    ds.labels.resize(n);
    ds.example_ids.resize(n);
    SplitMix64 rng(derive_seed(seed, "synthetic"));
    for (int i = 0; i < n; ++i) {
        const int cls = i % num_classes;  // interleaved, so any prefix is near-balanced
        ds.labels[i] = cls;
        ds.example_ids[i] = i;
        const int dr = static_cast<int>(rng.next_below(5)) - 2;
        const int dc = static_cast<int>(rng.next_below(5)) - 2;
        const float contrast = rng.uniform(0.75f, 1.25f);
        const float brightness = rng.uniform(-0.12f, 0.12f);
        for (int ch = 0; ch < channels; ++ch) {
            float* plane = ds.images.plane(i, ch);
            for (int r = 0; r < h; ++r) {
                for (int c = 0; c < w; ++c) {
                    const float base =
                        template_value(cls, wrap(r + dr, h), wrap(c + dc, w), h, w);
                    const float noisy = 0.5f + contrast * (base - 0.5f) + brightness +
                                        0.08f * rng.next_gaussian();
                    plane[r * w + c] = std::min(1.0f, std::max(0.0f, noisy));
                }
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

SplitSpec split(const ImageDataset& ds, double test_fraction, int n_probe, uint64_t seed,
                bool stratified_probes) {
    if (test_fraction < 0.0 || test_fraction >= 1.0)
        throw RejectedInputError("split: test_fraction must be in [0,1)");
    if (n_probe < 0) throw RejectedInputError("split: n_probe must be non-negative");

    std::vector<int> ids = ds.example_ids;
    SplitMix64 rng(derive_seed(seed, "split"));
    rng.shuffle(ids);
    const int n_test = static_cast<int>(std::lround(test_fraction * ds.size()));

    SplitSpec s;
    s.seed = seed;
    s.test_ids.assign(ids.begin(), ids.begin() + n_test);
    s.train_ids.assign(ids.begin() + n_test, ids.end());
    if (n_probe > static_cast<int>(s.train_ids.size()))
        throw RejectedInputError("split: n_probe exceeds train size");

    if (stratified_probes) {
        // Round-robin over class buckets of the shuffled train order.
        std::unordered_map<int, std::vector<int>> by_class;
        for (const int id : s.train_ids) by_class[ds.labels[ds.index_of(id)]].push_back(id);
        std::vector<int> classes;
        for (const auto& [cls, bucket] : by_class) classes.push_back(cls);
        std::sort(classes.begin(), classes.end());
        size_t taken = 0, round = 0;
        while (taken < static_cast<size_t>(n_probe)) {
            bool any = false;
            for (const int cls : classes) {
                auto& bucket = by_class[cls];
                if (round < bucket.size() && taken < static_cast<size_t>(n_probe)) {
                    s.probe_ids.push_back(bucket[round]);
                    ++taken;
                    any = true;
                }
            }
            if (!any) break;
            ++round;
        }
    } else {
        std::vector<int> pool = s.train_ids;
        rng.shuffle(pool);
        s.probe_ids.assign(pool.begin(), pool.begin() + n_probe);
    }

    std::sort(s.train_ids.begin(), s.train_ids.end());
    std::sort(s.test_ids.begin(), s.test_ids.end());
    std::sort(s.probe_ids.begin(), s.probe_ids.end());
    return s;
}

}  // namespace poisonlab
