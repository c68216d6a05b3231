#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "poisonlab/attacks.hpp"
#include "poisonlab/dataset.hpp"
#include "poisonlab/net.hpp"
#include "poisonlab/trajectory.hpp"

namespace poisonlab {

// Probe examples the detector trusts. Distance mode uses clean_ids (the
// known-clean anchor set); variant mode uses the p1/p2/p3 triple built by
// build_probe_sets around a reference backdoor.
struct ProbeSet {
    std::vector<int> clean_ids;  // distance mode anchors
    std::vector<int> p1;         // clean
    std::vector<int> p2;         // reference-backdoored
    std::vector<int> p3;         // label-randomized
    AttackSpec reference_spec;   // the backdoor applied to p2
    bool variant_mode = false;

    std::vector<int> all_probe_ids() const;
    void check_invariants() const;
};

// Mean distance to the k nearest clean-probe trajectories, per example.
// log_score = log(score + 1e-12) is carried for reporting; the ranking is
// identical either way.
struct AnomalyScores {
    std::vector<int> example_ids;
    std::vector<float> score;      // mean k-NN distance
    std::vector<float> log_score;  // log(score + 1e-12)
    int k = 0;
    std::vector<int> probe_ids;
};

// What the detection stage decided, plus the knobs that produced it.
struct DetectionReport {
    std::vector<int> rejected_ids;
    double rejection_fraction = 0.0;
    std::map<std::string, double> per_attack_recall;
    double clean_false_positive_rate = 0.0;
    int n_clean = 0;
    int k = 0;
    int n_epochs = 0;
    double t = 0.0;
};

// score(i) = mean Euclidean distance from trajectory i to its k nearest
// clean-probe trajectories. Probe rows are scored against the other probes
// (self excluded). Throws RejectedInputError if k exceeds the probe count or
// a probe id is missing from the matrix.
AnomalyScores badloss_scores(const TrajectoryMatrix& matrix, const ProbeSet& probes, int k);

// The ceil(r * n) highest-score non-probe ids, n counting non-probe rows.
// Ties break toward keeping lower ids; probes are never rejected. Returned
// sorted ascending.
std::vector<int> select_rejections(const AnomalyScores& scores, double r);

// Variant-mode probe construction: clean_ids (even size 2n) split into P1
// (untouched) and P2 (reference backdoor applied: image always, label unless
// the attack is clean-label); P3 = n further non-probe ids with labels
// re-drawn uniformly from the wrong labels. The dataset is updated in place.
ProbeSet build_probe_sets(ImageDataset& ds, const std::vector<int>& clean_ids,
                          const AttackSpec& reference, uint64_t seed);

// Variant-mode decision rule: an example is rejected iff more than fraction
// t of its k nearest probe trajectories come from P2 or P3. Returns the
// sorted rejected ids.
std::vector<int> knn_vote_classify(const TrajectoryMatrix& matrix, const ProbeSet& probes,
                                   int k, double t);

// Probe trajectories measured on the SAME checkpoint sequence used at test
// time, flagged clean (0) or poisoned (1).
struct TestProbeBank {
    std::vector<std::vector<float>> trajectories;
    std::vector<uint8_t> poisoned;

    void check_invariants() const;
};

// Loss of one (image, label) pair at every checkpoint, in file order.
std::vector<float> checkpoint_loss_trajectory(SmallConvNet& net,
                                              const std::vector<std::string>& checkpoint_paths,
                                              const Tensor4& image, int label);

// Test-time detection: the example's checkpoint-loss trajectory gets the
// same kNN vote as knn_vote_classify against the probe bank. True means
// backdoored.
bool test_time_classify(SmallConvNet& net, const std::vector<std::string>& checkpoint_paths,
                        const TestProbeBank& bank, const Tensor4& image, int label, int k,
                        double t);

// Unit top eigenvector of rows^T rows for already-centered row-major data,
// via deterministic power iteration. This is the direction the spectral
// filter projects onto; exposed so tests can cross-check it against an
// independent eigensolver.
std::vector<double> dominant_scatter_direction(const std::vector<double>& centered_rows,
                                               int n_rows, int dim);

// Per class: center the feature rows, take the top right-singular direction
// of the centered matrix (power iteration), score each row by its squared
// projection, and reject the top `fraction` per class. probe_ids are exempt.
// Returns sorted rejected ids.
std::vector<int> spectral_signatures_filter(const FeatureMatrix& features,
                                            const std::vector<int>& example_ids,
                                            const std::vector<int>& labels, int num_classes,
                                            double fraction = 0.15,
                                            const std::vector<int>& probe_ids = {});

// Rank examples by loss at cut_epoch ascending and reject the lowest
// `fraction` (fast learners). cut_epoch must be a kept epoch. probe_ids are
// exempt. Returns sorted rejected ids.
std::vector<int> loss_rank_filter(const TrajectoryMatrix& matrix, int cut_epoch,
                                  double fraction = 0.15,
                                  const std::vector<int>& probe_ids = {});

}  // namespace poisonlab
