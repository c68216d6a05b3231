#include "poisonlab/metrics.hpp"

#include <unordered_map>
#include <unordered_set>

#include "poisonlab/errors.hpp"

namespace poisonlab {

double evaluate_clean_accuracy(const SmallConvNet& net, const ImageDataset& test) {
    if (test.size() == 0)
        throw RejectedInputError("evaluate_clean_accuracy: empty test set");
    const std::vector<int> preds = predict_classes(net, test.images);
    int correct = 0;
    for (int i = 0; i < test.size(); ++i)
        if (preds[i] == test.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

double evaluate_asr(const SmallConvNet& net, const ImageDataset& test, const AttackSpec& spec) {
    if (test.size() == 0) throw RejectedInputError("evaluate_asr: empty test set");
    const ImageDataset triggered = trigger_test_set(test, spec);
    const std::vector<int> preds = predict_classes(net, triggered.images);
    int hits = 0, denom = 0;
    for (int i = 0; i < test.size(); ++i) {
        if (test.labels[i] == spec.target_class) continue;  // never counted
        ++denom;
        if (preds[i] == spec.target_class) ++hits;
    }
    if (denom == 0)
        throw RejectedInputError("evaluate_asr: every test example has the target label");
    return static_cast<double>(hits) / static_cast<double>(denom);
}

DetectionQuality detection_metrics(const std::vector<int>& rejected_ids,
                                   const PoisonedDataset& poisoned,
                                   const std::vector<int>& candidate_ids) {
    const std::unordered_set<int> rejected(rejected_ids.begin(), rejected_ids.end());
    std::unordered_map<int, int> tag_of;
    for (int r = 0; r < poisoned.data.size(); ++r)
        tag_of[poisoned.data.example_ids[r]] = poisoned.mask.tags[r];

    const size_t n_tags = poisoned.mask.attack_names.size();
    std::vector<int> total(n_tags, 0), caught(n_tags, 0);
    for (const int id : candidate_ids) {
        const auto it = tag_of.find(id);
        if (it == tag_of.end())
            throw RejectedInputError("detection_metrics: candidate id " + std::to_string(id) +
                                     " not covered by the poison mask");
        ++total[it->second];
        if (rejected.count(id)) ++caught[it->second];
    }

    DetectionQuality q;
    for (size_t tag = 1; tag < n_tags; ++tag) {
        if (total[tag] == 0) continue;  // nothing to recall; leave absent
        q.per_attack_recall[poisoned.mask.attack_names[tag]] =
            static_cast<double>(caught[tag]) / static_cast<double>(total[tag]);
    }
    q.clean_false_positive_rate =
        total[0] == 0 ? 0.0
                      : static_cast<double>(caught[0]) / static_cast<double>(total[0]);
    return q;
}

}  // namespace poisonlab
