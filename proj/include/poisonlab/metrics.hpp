#pragma once

#include <map>
#include <string>
#include <vector>

#include "poisonlab/attacks.hpp"
#include "poisonlab/dataset.hpp"
#include "poisonlab/net.hpp"

namespace poisonlab {

// Headline numbers for one trained model.
struct Metrics {
    double clean_accuracy = 0.0;
    std::map<std::string, double> asr;  // attack name -> attack success rate
};

// How well the detector's rejected set matches the poison ground truth.
struct DetectionQuality {
    std::map<std::string, double> per_attack_recall;
    double clean_false_positive_rate = 0.0;
};

// Fraction of argmax-correct predictions; argmax ties go to the lowest
// class index. Throws RejectedInputError on an empty test set.
double evaluate_clean_accuracy(const SmallConvNet& net, const ImageDataset& test);

// Injects the attack's trigger into every test image, drops examples whose
// true label already equals the target class, and returns the fraction of
// the rest predicted as the target. Throws RejectedInputError if no
// non-target example exists.
double evaluate_asr(const SmallConvNet& net, const ImageDataset& test, const AttackSpec& spec);

// recall(a) = |rejected ∩ tagged a| / |tagged a| over the candidate ids;
// FPR = |rejected ∩ clean candidates| / |clean candidates|. Attacks with no
// tagged candidate are omitted from the map.
DetectionQuality detection_metrics(const std::vector<int>& rejected_ids,
                                   const PoisonedDataset& poisoned,
                                   const std::vector<int>& candidate_ids);

}  // namespace poisonlab
