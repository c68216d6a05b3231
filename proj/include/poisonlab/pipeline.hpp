#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/config.hpp"
#include "poisonlab/dataset.hpp"
#include "poisonlab/detectors.hpp"
#include "poisonlab/metrics.hpp"
#include "poisonlab/trainer.hpp"

namespace poisonlab {

// Fixed file layout of one run directory. Every stage reads and writes
// through these names, so the stage subcommands compose across processes.
struct RunPaths {
    std::string dir;

    explicit RunPaths(std::string d) : dir(std::move(d)) {}

    std::string train_bin() const { return dir + "/train_poisoned.bin"; }
    std::string baseline_train_bin() const { return dir + "/train_delivered.bin"; }
    std::string test_bin() const { return dir + "/test_clean.bin"; }
    std::string state_json() const { return dir + "/state.json"; }
    std::string status_json() const { return dir + "/status.json"; }
    std::string checkpoints_dir() const { return dir + "/checkpoints"; }
    std::string trajectories_csv() const { return dir + "/trajectories.csv"; }
    std::string epoch_filter_json() const { return dir + "/epoch_filter.json"; }
    std::string detection_json() const { return dir + "/detection.json"; }
    std::string detect_model() const { return dir + "/detect_model.bin"; }
    std::string undefended_model() const { return dir + "/undefended_model.bin"; }
    std::string retrained_model() const { return dir + "/retrained_model.bin"; }
    std::string report_json() const { return dir + "/report.json"; }
    std::string group_means_csv() const { return dir + "/group_means.csv"; }
};

// Everything the pipeline accumulates while stages run. Stage subcommands
// re-hydrate this from the run directory instead.
struct RunState {
    ExperimentConfig cfg;
    ImageDataset test;            // clean test set
    PoisonedDataset train;        // what the detector trains on (instrumented
                                  // with probe modifications in variant mode)
    ImageDataset baseline_train;  // exactly what the attacker delivered
    SplitSpec split;
    PoisonPlan plan;
    ProbeSet probes;

    TrainResult detect_train;
    bool has_trajectories = false;

    bool has_scores = false;
    AnomalyScores scores;
    std::vector<int> rejected_ids;
    DetectionQuality quality;
    bool detection_done = false;

    Metrics undefended;
    Metrics retrained;
    nlohmann::json report;

    // Train ids eligible for rejection (everything that is not a probe).
    std::vector<int> candidate_ids() const;
};

// Stage bodies, in pipeline order. Each assumes its predecessors ran (in
// this process or a previous one via load_run_state) and writes its
// artifacts into the run directory.
void stage_poison(RunState& state, const RunPaths& paths);
void stage_train(RunState& state, const RunPaths& paths);
void stage_detect(RunState& state, const RunPaths& paths);
void stage_retrain(RunState& state, const RunPaths& paths);
void stage_evaluate(RunState& state, const RunPaths& paths);

// Rebuilds a RunState from a run directory written by earlier stages.
// Optional artifacts (trajectories, detection results) load when present.
RunState load_run_state(const RunPaths& paths);

// Names of stages completed in the directory, from status.json.
std::vector<std::string> stages_done(const RunPaths& paths);

// Whole pipeline: poison -> train -> detect -> retrain -> evaluate, with
// status.json tracking progress. Any failure aborts with a StageError naming
// the stage; the status file is left flagged incomplete.
RunState run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace poisonlab
