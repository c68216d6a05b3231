#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/attacks.hpp"

namespace poisonlab {

enum class DetectorKind { BadLoss, KnnVote, Spectral, LossRank, None };

const char* detector_kind_name(DetectorKind kind);
DetectorKind detector_kind_from_name(const std::string& name);

struct DatasetConfig {
    std::string type = "synthetic";  // "synthetic" | "cifar10"
    int num_classes = 4;
    int per_class = 650;
    int height = 16;
    int width = 16;
    int channels = 3;
    std::string path;  // cifar10 batch file
};

struct SplitConfig {
    double test_fraction = 0.2;
    bool stratified_probes = false;
};

struct TrainingConfig {
    int epochs = 30;
    int batch_size = 128;
    double base_lr = 1e-3;
    double weight_decay = 1e-4;
};

struct DetectionConfig {
    DetectorKind method = DetectorKind::BadLoss;
    int n_clean = 50;   // clean probe budget (drawn at split time)
    int k = 10;         // neighbors for the distance score
    int n_epochs = 30;  // detection-phase training budget
    double r = 0.4;     // rejection fraction
    int vote_k = 15;    // neighbors for the probe-set vote
    double t = 0.5;     // vote threshold
    int cut_epoch = 5;          // loss-rank filter epoch
    double filter_fraction = 0.15;  // spectral / loss-rank rejection share
    AttackSpec reference_attack;    // backdoor applied to the P2 probes
};

// Every named stream an experiment consumes. Any stream not pinned in the
// config is derived from the master seed, so a config echo always shows the
// concrete value each stage used.
struct Seeds {
    uint64_t master = 1;
    uint64_t data = 0;
    uint64_t split = 0;
    uint64_t plan = 0;
    uint64_t init_detect = 0;
    uint64_t init_final = 0;
    uint64_t init_retrain = 0;
    uint64_t shuffle = 0;
    uint64_t probes = 0;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    SplitConfig split;
    std::vector<AttackSpec> attacks;
    TrainingConfig training;
    int retrain_epochs = 0;  // 0 -> same budget as training.epochs
    DetectionConfig detection;
    Seeds seeds;

    int effective_retrain_epochs() const {
        return retrain_epochs > 0 ? retrain_epochs : training.epochs;
    }

    // Cross-field checks (detection budget within the training budget,
    // fractions in range, attack list admissible). Throws RejectedInputError.
    void validate() const;

    // Strict parse: unknown keys are config errors. master_seed_override
    // replaces the seeds block when >= 0 (the CLI --seed flag).
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);

    // Full echo with resolved seeds; no output paths, so identical runs
    // echo identical bytes.
    nlohmann::json to_json() const;
};

nlohmann::json attack_spec_to_json(const AttackSpec& spec);
AttackSpec attack_spec_from_json(const nlohmann::json& j);

}  // namespace poisonlab
