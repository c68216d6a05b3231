#include "poisonlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "poisonlab/dct.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

namespace {
constexpr double kPi = 3.14159265358979323846;

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }
}  // namespace

const char* attack_kind_name(AttackKind kind) {
    switch (kind) {
        case AttackKind::Patch: return "patch";
        case AttackKind::SinglePix: return "single_pix";
        case AttackKind::BlendRandom: return "blend_random";
        case AttackKind::BlendPattern: return "blend_pattern";
        case AttackKind::Sinusoid: return "sinusoid";
        case AttackKind::Frequency: return "frequency";
    }
    return "unknown";
}

std::string attack_instance_name(const AttackSpec& spec) {
    return std::string(attack_kind_name(spec.kind)) + ":" + std::to_string(spec.target_class);
}

AttackKind attack_kind_from_name(const std::string& name) {
    if (name == "patch") return AttackKind::Patch;
    if (name == "single_pix") return AttackKind::SinglePix;
    if (name == "blend_random") return AttackKind::BlendRandom;
    if (name == "blend_pattern") return AttackKind::BlendPattern;
    if (name == "sinusoid") return AttackKind::Sinusoid;
    if (name == "frequency") return AttackKind::Frequency;
    throw RejectedInputError("unknown attack kind: " + name);
}

void AttackSpec::validate() const {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw RejectedInputError("AttackSpec: ratio must be in (0,1)");
    if (alpha < 0.0 || alpha > 1.0)
        throw RejectedInputError("AttackSpec: alpha must be in [0,1]");
    if (m < 0.0) throw RejectedInputError("AttackSpec: m must be non-negative");
    if (target_class < 0) throw RejectedInputError("AttackSpec: negative target class");
}

Tensor4 make_trigger(AttackKind kind, int h, int w, int c, uint64_t seed, double frequency) {
    if (h <= 0 || w <= 0 || c <= 0) throw RejectedInputError("make_trigger: bad dims");
    Tensor4 t(1, c, h, w);
    switch (kind) {
        case AttackKind::BlendRandom: {
            SplitMix64 rng(derive_seed(seed, "blend_random_trigger"));
            for (float& v : t.data) v = rng.next_float();
            break;
        }
        case AttackKind::BlendPattern: {
            // Dimple field: cosine of the distance to the nearest of an 8x8
            // grid of centers, same in every channel.
            const double step_r = static_cast<double>(h) / 8.0;
            const double step_c = static_cast<double>(w) / 8.0;
            for (int r = 0; r < h; ++r) {
                for (int col = 0; col < w; ++col) {
                    double best = 1e30;
                    for (int gr = 0; gr < 8; ++gr) {
                        for (int gc = 0; gc < 8; ++gc) {
                            const double cy = (gr + 0.5) * step_r;
                            const double cx = (gc + 0.5) * step_c;
                            const double d =
                                std::hypot(r + 0.5 - cy, col + 0.5 - cx);
                            best = std::min(best, d);
                        }
                    }
                    const float v = static_cast<float>(0.5 * (1.0 + std::cos(2.0 * kPi * best / 8.0)));
                    for (int ch = 0; ch < c; ++ch) t.at(0, ch, r, col) = v;
                }
            }
            break;
        }
        case AttackKind::Sinusoid: {
            for (int col = 0; col < w; ++col) {
                const float v = static_cast<float>(
                    0.5 * (1.0 + std::sin(2.0 * kPi * frequency * col / w)));
                for (int ch = 0; ch < c; ++ch)
                    for (int r = 0; r < h; ++r) t.at(0, ch, r, col) = v;
            }
            break;
        }
        default:
            throw RejectedInputError("make_trigger: kind has no trigger image");
    }
    return t;
}

void apply_blend(Tensor4& image, const Tensor4& trigger, double alpha) {
    if (!image.same_shape(trigger))
        throw RejectedInputError("apply_blend: image/trigger shape mismatch");
    if (alpha < 0.0 || alpha > 1.0)
        throw RejectedInputError("apply_blend: alpha outside [0,1]");
    const float a = static_cast<float>(alpha);
    for (size_t i = 0; i < image.data.size(); ++i)
        image.data[i] = clamp01(a * trigger.data[i] + (1.0f - a) * image.data[i]);
}

void apply_patch(Tensor4& image, AttackKind kind) {
    const int h = image.h, w = image.w;
    if (kind == AttackKind::Patch) {
        if (h < 3 || w < 3) throw RejectedInputError("apply_patch: image too small for patch");
        for (int n = 0; n < image.n; ++n) {
            for (int c = 0; c < image.c; ++c) {
                image.at(n, c, h - 3, w - 3) = 1.0f;
                image.at(n, c, h - 3, w - 2) = 0.0f;
                image.at(n, c, h - 2, w - 3) = 0.0f;
                image.at(n, c, h - 2, w - 2) = 1.0f;
            }
        }
    } else if (kind == AttackKind::SinglePix) {
        if (h < 2 || w < 2)
            throw RejectedInputError("apply_patch: image too small for single pixel");
        for (int n = 0; n < image.n; ++n)
            for (int c = 0; c < image.c; ++c) image.at(n, c, h - 2, w - 2) = 1.0f;
    } else {
        throw RejectedInputError("apply_patch: kind is not a patch attack");
    }
}

void apply_frequency(Tensor4& image, double m) {
    if (m < 0.0) throw RejectedInputError("apply_frequency: m must be non-negative");
    const int h = image.h, w = image.w;
    const float delta = static_cast<float>(m / 255.0);
    std::vector<float> chan(static_cast<size_t>(h) * w);
    for (int n = 0; n < image.n; ++n) {
        for (int c = 0; c < image.c; ++c) {
            const float* src = image.plane(n, c);
            std::copy(src, src + chan.size(), chan.begin());
            std::vector<float> coeffs = dct2(chan, h, w);
            coeffs[static_cast<size_t>(h - 2) * w + (w - 2)] += delta;
            coeffs[static_cast<size_t>(h / 2) * w + (w / 2)] += delta;
            std::vector<float> back = idct2(coeffs, h, w);
            float* dst = image.plane(n, c);
            for (size_t i = 0; i < back.size(); ++i) dst[i] = clamp01(back[i]);
        }
    }
}

void apply_attack(Tensor4& image, const AttackSpec& spec, const Tensor4& trigger) {
    switch (spec.kind) {
        case AttackKind::Patch:
        case AttackKind::SinglePix:
            apply_patch(image, spec.kind);
            break;
        case AttackKind::BlendRandom:
        case AttackKind::BlendPattern:
        case AttackKind::Sinusoid:
            apply_blend(image, trigger, spec.alpha);
            break;
        case AttackKind::Frequency:
            apply_frequency(image, spec.m);
            break;
    }
}

PoisonPlan build_poison_plan(const ImageDataset& ds, const std::vector<AttackSpec>& specs,
                             const SplitSpec& split, uint64_t seed) {
    double total_ratio = 0.0;
    std::unordered_set<int> targets;
    for (const AttackSpec& s : specs) {
        s.validate();
        total_ratio += s.ratio;
        if (!targets.insert(s.target_class).second)
            throw RejectedInputError("build_poison_plan: duplicate target class " +
                                     std::to_string(s.target_class));
    }
    if (total_ratio > 0.5)
        throw RejectedInputError("build_poison_plan: total poisoning ratio exceeds 0.5");

    const std::unordered_set<int> probe(split.probe_ids.begin(), split.probe_ids.end());
    std::unordered_set<int> claimed;
    std::unordered_map<int, int> label_of;
    for (size_t i = 0; i < ds.example_ids.size(); ++i)
        label_of[ds.example_ids[i]] = ds.labels[i];

    PoisonPlan plan;
    SplitMix64 rng(derive_seed(seed, "poison_plan"));
    for (size_t a = 0; a < specs.size(); ++a) {
        const AttackSpec& spec = specs[a];
        const size_t count =
            static_cast<size_t>(std::floor(spec.ratio * split.train_ids.size()));
        std::vector<int> eligible;
        for (const int id : split.train_ids) {
            if (probe.count(id) || claimed.count(id)) continue;
            if (spec.is_clean_label() && label_of.at(id) != spec.target_class) continue;
            eligible.push_back(id);
        }
        if (eligible.size() < count)
            throw RejectedInputError(std::string("build_poison_plan: not enough eligible ") +
                                     "examples for attack '" + attack_kind_name(spec.kind) +
                                     "' (need " + std::to_string(count) + ", have " +
                                     std::to_string(eligible.size()) + ")");
        rng.shuffle(eligible);
        PoisonPlan::Entry entry;
        entry.spec = spec;
        entry.example_ids.assign(eligible.begin(), eligible.begin() + count);
        std::sort(entry.example_ids.begin(), entry.example_ids.end());
        for (const int id : entry.example_ids) claimed.insert(id);
        if (spec.uses_trigger_image())
            entry.trigger = make_trigger(spec.kind, ds.images.h, ds.images.w, ds.images.c,
                                         spec.seed, spec.frequency);
        plan.entries.push_back(std::move(entry));
    }
    return plan;
}

PoisonedDataset poison_dataset(const ImageDataset& ds, const PoisonPlan& plan) {
    PoisonedDataset out;
    out.data = ds;
    out.mask = PoisonMask::all_clean(ds.size());
    for (const auto& entry : plan.entries)
        out.mask.attack_names.push_back(attack_instance_name(entry.spec));

    Tensor4 img(1, ds.images.c, ds.images.h, ds.images.w);
    const size_t len = ds.image_len();
    for (size_t a = 0; a < plan.entries.size(); ++a) {
        const auto& entry = plan.entries[a];
        for (const int id : entry.example_ids) {
            const int row = out.data.index_of(id);
            std::copy(out.data.image(row), out.data.image(row) + len, img.data.begin());
            apply_attack(img, entry.spec, entry.trigger);
            std::copy(img.data.begin(), img.data.end(), out.data.image(row));
            out.mask.tags[row] = static_cast<int>(a) + 1;
            out.mask.original_labels[row] = out.data.labels[row];
            out.mask.target_labels[row] = entry.spec.target_class;
            if (!entry.spec.is_clean_label())
                out.data.labels[row] = entry.spec.target_class;
        }
    }
    return out;
}

ImageDataset trigger_test_set(const ImageDataset& test, const AttackSpec& spec) {
    ImageDataset out = test;
    Tensor4 trigger;
    if (spec.uses_trigger_image())
        trigger = make_trigger(spec.kind, test.images.h, test.images.w, test.images.c,
                               spec.seed, spec.frequency);
    Tensor4 img(1, test.images.c, test.images.h, test.images.w);
    const size_t len = test.image_len();
    for (int i = 0; i < out.size(); ++i) {
        std::copy(out.image(i), out.image(i) + len, img.data.begin());
        apply_attack(img, spec, trigger);
        std::copy(img.data.begin(), img.data.end(), out.image(i));
    }
    return out;
}

}  // namespace poisonlab
