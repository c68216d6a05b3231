#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poisonlab/dataset.hpp"
#include "poisonlab/tensor.hpp"

namespace poisonlab {

enum class AttackKind { Patch, SinglePix, BlendRandom, BlendPattern, Sinusoid, Frequency };

const char* attack_kind_name(AttackKind kind);
AttackKind attack_kind_from_name(const std::string& name);

struct AttackSpec;

// Unique display name for one configured attack: "<kind>:<target>", e.g.
// "patch:0". Target classes are distinct per plan, so names are too.
std::string attack_instance_name(const AttackSpec& spec);

// One attack: what it injects, where it points, how much of the train set it
// touches. Sinusoid is clean-label: it only draws from (and keeps) its target
// class. alpha applies to the blend family, m to Frequency, frequency to the
// Sinusoid stripe count per image width.
struct AttackSpec {
    AttackKind kind = AttackKind::Patch;
    int target_class = 0;
    double ratio = 0.01;       // poisoning ratio p, fraction of the train set
    double alpha = 0.075;      // blend strength
    double m = 30.0;           // frequency-attack magnitude on the 0-255 scale
    double frequency = 6.0;    // sinusoid cycles per image width
    uint64_t seed = 0;

    void validate() const;
    bool is_clean_label() const { return kind == AttackKind::Sinusoid; }
    bool uses_trigger_image() const {
        return kind == AttackKind::BlendRandom || kind == AttackKind::BlendPattern ||
               kind == AttackKind::Sinusoid;
    }
};

// Per-attack id assignments plus the trigger images used, for audit.
struct PoisonPlan {
    struct Entry {
        AttackSpec spec;
        std::vector<int> example_ids;  // sorted, pairwise disjoint across entries
        Tensor4 trigger;               // (1,c,h,w) for blend-family attacks, else empty
    };
    std::vector<Entry> entries;
};

// Full-image trigger in [0,1] for the blend family:
//   BlendRandom  - i.i.d. uniform [0,1] per scalar from the seed
//   BlendPattern - radial dimple field 0.5*(1+cos(2*pi*r/8)), r = distance to
//                  the nearest center of an 8x8 grid
//   Sinusoid     - 0.5*(1+sin(2*pi*f*j/w)), constant across rows and channels
Tensor4 make_trigger(AttackKind kind, int h, int w, int c, uint64_t seed,
                     double frequency = 6.0);

// x' = alpha * trigger + (1 - alpha) * x, clamped to [0,1].
void apply_blend(Tensor4& image, const Tensor4& trigger, double alpha);

// Patch: 2x2 checkerboard inset one pixel from the bottom-right corner
// (rows h-3..h-2, cols w-3..w-2; corners 1.0, anti-diagonal 0.0, all
// channels). SinglePix: pixel (h-2, w-2) set to 1.0 in all channels.
void apply_patch(Tensor4& image, AttackKind kind);

// Adds m/255 to the orthonormal DCT coefficients at (h-2, w-2) and
// (h/2, w/2) of every channel, inverts, clamps to [0,1].
void apply_frequency(Tensor4& image, double m);

// Applies the spec's trigger to one (1,c,h,w) image in place.
void apply_attack(Tensor4& image, const AttackSpec& spec, const Tensor4& trigger);

// Assigns floor(p * |train|) train ids to every attack, sampled without
// replacement from ids that are not probes and not already claimed; the
// Sinusoid only draws from its own class. Deterministic per seed.
PoisonPlan build_poison_plan(const ImageDataset& ds, const std::vector<AttackSpec>& specs,
                             const SplitSpec& split, uint64_t seed);

// Applies a plan: images transformed per attack, labels of non-clean-label
// victims set to the target class. Untouched examples stay bit-identical.
PoisonedDataset poison_dataset(const ImageDataset& ds, const PoisonPlan& plan);

// Copy of the test set with the trigger injected into every image. Labels
// are untouched; target-class rows stay in and are excluded downstream.
ImageDataset trigger_test_set(const ImageDataset& test, const AttackSpec& spec);

}  // namespace poisonlab
