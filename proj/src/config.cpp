#include "poisonlab/config.hpp"

#include <fstream>
#include <set>
#include <unordered_set>

#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

namespace {

using nlohmann::json;

void require_keys(const json& j, const char* where,
                  const std::set<std::string>& allowed) {
    if (!j.is_object())
        throw RejectedInputError(std::string("config: ") + where + " must be an object");
    for (const auto& item : j.items())
        if (!allowed.count(item.key()))
            throw RejectedInputError(std::string("config: unknown key '") + item.key() +
                                     "' in " + where);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw RejectedInputError(std::string("config: bad value for '") + key + "'");
    }
}

}  // namespace

const char* detector_kind_name(DetectorKind kind) {
    switch (kind) {
        case DetectorKind::BadLoss: return "badloss";
        case DetectorKind::KnnVote: return "knn_vote";
        case DetectorKind::Spectral: return "spectral";
        case DetectorKind::LossRank: return "loss_rank";
        case DetectorKind::None: return "none";
    }
    return "unknown";
}

DetectorKind detector_kind_from_name(const std::string& name) {
    if (name == "badloss") return DetectorKind::BadLoss;
    if (name == "knn_vote") return DetectorKind::KnnVote;
    if (name == "spectral") return DetectorKind::Spectral;
    if (name == "loss_rank") return DetectorKind::LossRank;
    if (name == "none") return DetectorKind::None;
    throw RejectedInputError("config: unknown detector '" + name + "'");
}

nlohmann::json attack_spec_to_json(const AttackSpec& spec) {
    json j;
    j["kind"] = attack_kind_name(spec.kind);
    j["target_class"] = spec.target_class;
    j["ratio"] = spec.ratio;
    j["alpha"] = spec.alpha;
    j["m"] = spec.m;
    j["frequency"] = spec.frequency;
    j["seed"] = spec.seed;
    return j;
}

AttackSpec attack_spec_from_json(const nlohmann::json& j) {
    require_keys(j, "attack",
                 {"kind", "target_class", "ratio", "alpha", "m", "frequency", "seed"});
    if (!j.contains("kind"))
        throw RejectedInputError("config: attack entry is missing 'kind'");
    AttackSpec spec;
    spec.kind = attack_kind_from_name(j.at("kind").get<std::string>());
    spec.target_class = get_or(j, "target_class", spec.target_class);
    spec.ratio = get_or(j, "ratio", spec.ratio);
    spec.alpha = get_or(j, "alpha", spec.alpha);
    spec.m = get_or(j, "m", spec.m);
    spec.frequency = get_or(j, "frequency", spec.frequency);
    spec.seed = get_or(j, "seed", spec.seed);
    return spec;
}

void ExperimentConfig::validate() const {
    if (dataset.type != "synthetic" && dataset.type != "cifar10")
        throw RejectedInputError("config: dataset.type must be 'synthetic' or 'cifar10'");
    if (dataset.type == "synthetic") {
        if (dataset.num_classes < 2 || dataset.num_classes > 10)
            throw RejectedInputError("config: synthetic num_classes must be in [2,10]");
        if (dataset.per_class < 1)
            throw RejectedInputError("config: synthetic per_class must be positive");
        if (dataset.height < 8 || dataset.width < 8 || dataset.channels < 1)
            throw RejectedInputError("config: synthetic images must be at least 8x8x1");
    } else if (dataset.path.empty()) {
        throw RejectedInputError("config: cifar10 dataset needs a path");
    }
    if (split.test_fraction <= 0.0 || split.test_fraction >= 1.0)
        throw RejectedInputError("config: test_fraction must be in (0,1)");

    if (training.epochs < 1 || training.batch_size < 1)
        throw RejectedInputError("config: training epochs and batch_size must be positive");
    if (training.base_lr <= 0.0 || training.weight_decay < 0.0)
        throw RejectedInputError("config: base_lr must be > 0 and weight_decay >= 0");
    if (retrain_epochs < 0)
        throw RejectedInputError("config: retrain_epochs must be >= 0");

    if (detection.n_epochs < 1 || detection.n_epochs > training.epochs)
        throw RejectedInputError("config: detection n_epochs must be in [1, training epochs]");
    if (detection.n_clean < 1)
        throw RejectedInputError("config: n_clean must be positive");
    if (detection.k < 1 || detection.k > detection.n_clean)
        throw RejectedInputError("config: k must be in [1, n_clean]");
    if (detection.r < 0.0 || detection.r >= 1.0)
        throw RejectedInputError("config: r must be in [0,1)");
    if (detection.t < 0.0 || detection.t > 1.0)
        throw RejectedInputError("config: t must be in [0,1]");
    if (detection.vote_k < 1)
        throw RejectedInputError("config: vote_k must be positive");
    if (detection.filter_fraction < 0.0 || detection.filter_fraction >= 1.0)
        throw RejectedInputError("config: filter_fraction must be in [0,1)");
    if (detection.method == DetectorKind::LossRank &&
        (detection.cut_epoch < 0 || detection.cut_epoch >= detection.n_epochs))
        throw RejectedInputError("config: cut_epoch must be in [0, n_epochs)");
    if (detection.method == DetectorKind::KnnVote) {
        if (detection.n_clean % 2 != 0)
            throw RejectedInputError("config: knn_vote needs an even n_clean (half becomes P2)");
        detection.reference_attack.validate();
        if (detection.vote_k > (detection.n_clean / 2) * 3)
            throw RejectedInputError("config: vote_k exceeds the probe-set size");
    }

    double total_ratio = 0.0;
    std::unordered_set<int> targets;
    const int nc = dataset.type == "synthetic" ? dataset.num_classes : 10;
    for (const AttackSpec& a : attacks) {
        a.validate();
        total_ratio += a.ratio;
        if (a.target_class >= nc)
            throw RejectedInputError("config: attack target class out of range");
        if (!targets.insert(a.target_class).second)
            throw RejectedInputError("config: attacks must have distinct target classes");
    }
    if (total_ratio > 0.5)
        throw RejectedInputError("config: total poisoning ratio exceeds 0.5");
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    require_keys(j, "root",
                 {"dataset", "split", "attacks", "training", "retrain_epochs", "detection",
                  "seeds"});
    ExperimentConfig cfg;

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        require_keys(d, "dataset",
                     {"type", "num_classes", "per_class", "height", "width", "channels",
                      "path"});
        cfg.dataset.type = get_or<std::string>(d, "type", cfg.dataset.type);
        cfg.dataset.num_classes = get_or(d, "num_classes", cfg.dataset.num_classes);
        cfg.dataset.per_class = get_or(d, "per_class", cfg.dataset.per_class);
        cfg.dataset.height = get_or(d, "height", cfg.dataset.height);
        cfg.dataset.width = get_or(d, "width", cfg.dataset.width);
        cfg.dataset.channels = get_or(d, "channels", cfg.dataset.channels);
        cfg.dataset.path = get_or<std::string>(d, "path", cfg.dataset.path);
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        require_keys(s, "split", {"test_fraction", "stratified_probes"});
        cfg.split.test_fraction = get_or(s, "test_fraction", cfg.split.test_fraction);
        cfg.split.stratified_probes =
            get_or(s, "stratified_probes", cfg.split.stratified_probes);
    }
    if (j.contains("training")) {
        const json& t = j.at("training");
        require_keys(t, "training", {"epochs", "batch_size", "base_lr", "weight_decay"});
        cfg.training.epochs = get_or(t, "epochs", cfg.training.epochs);
        cfg.training.batch_size = get_or(t, "batch_size", cfg.training.batch_size);
        cfg.training.base_lr = get_or(t, "base_lr", cfg.training.base_lr);
        cfg.training.weight_decay = get_or(t, "weight_decay", cfg.training.weight_decay);
    }
    cfg.retrain_epochs = get_or(j, "retrain_epochs", cfg.retrain_epochs);

    if (j.contains("seeds")) {
        const json& s = j.at("seeds");
        require_keys(s, "seeds",
                     {"master", "data", "split", "plan", "init_detect", "init_final",
                      "init_retrain", "shuffle", "probes"});
        cfg.seeds.master = get_or<uint64_t>(s, "master", cfg.seeds.master);
        const auto named = [&](const char* key, const char* tag) {
            return s.contains(key) ? s.at(key).get<uint64_t>()
                                   : derive_seed(cfg.seeds.master, tag);
        };
        cfg.seeds.data = named("data", "data");
        cfg.seeds.split = named("split", "split");
        cfg.seeds.plan = named("plan", "plan");
        cfg.seeds.init_detect = named("init_detect", "init_detect");
        cfg.seeds.init_final = named("init_final", "init_final");
        cfg.seeds.init_retrain = named("init_retrain", "init_retrain");
        cfg.seeds.shuffle = named("shuffle", "shuffle");
        cfg.seeds.probes = named("probes", "probes");
    } else {
        const uint64_t m = cfg.seeds.master;
        cfg.seeds.data = derive_seed(m, "data");
        cfg.seeds.split = derive_seed(m, "split");
        cfg.seeds.plan = derive_seed(m, "plan");
        cfg.seeds.init_detect = derive_seed(m, "init_detect");
        cfg.seeds.init_final = derive_seed(m, "init_final");
        cfg.seeds.init_retrain = derive_seed(m, "init_retrain");
        cfg.seeds.shuffle = derive_seed(m, "shuffle");
        cfg.seeds.probes = derive_seed(m, "probes");
    }

    if (j.contains("attacks")) {
        if (!j.at("attacks").is_array())
            throw RejectedInputError("config: attacks must be an array");
        size_t index = 0;
        for (const json& a : j.at("attacks")) {
            AttackSpec spec = attack_spec_from_json(a);
            if (!a.contains("seed"))
                spec.seed = derive_seed(cfg.seeds.master, "attack_trigger", index);
            cfg.attacks.push_back(spec);
            ++index;
        }
    }

    if (j.contains("detection")) {
        const json& d = j.at("detection");
        require_keys(d, "detection",
                     {"method", "n_clean", "k", "n_epochs", "r", "vote_k", "t", "cut_epoch",
                      "filter_fraction", "reference_attack"});
        cfg.detection.method = detector_kind_from_name(
            get_or<std::string>(d, "method", detector_kind_name(cfg.detection.method)));
        cfg.detection.n_clean = get_or(d, "n_clean", cfg.detection.n_clean);
        cfg.detection.k = get_or(d, "k", cfg.detection.k);
        cfg.detection.n_epochs = get_or(d, "n_epochs", cfg.detection.n_epochs);
        cfg.detection.r = get_or(d, "r", cfg.detection.r);
        cfg.detection.vote_k = get_or(d, "vote_k", cfg.detection.vote_k);
        cfg.detection.t = get_or(d, "t", cfg.detection.t);
        cfg.detection.cut_epoch = get_or(d, "cut_epoch", cfg.detection.cut_epoch);
        cfg.detection.filter_fraction =
            get_or(d, "filter_fraction", cfg.detection.filter_fraction);
        if (d.contains("reference_attack")) {
            cfg.detection.reference_attack = attack_spec_from_json(d.at("reference_attack"));
            if (!d.at("reference_attack").contains("seed"))
                cfg.detection.reference_attack.seed =
                    derive_seed(cfg.seeds.master, "reference_attack");
        } else {
            cfg.detection.reference_attack.seed =
                derive_seed(cfg.seeds.master, "reference_attack");
        }
    } else {
        cfg.detection.reference_attack.seed = derive_seed(cfg.seeds.master, "reference_attack");
    }

    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RejectedInputError("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw RejectedInputError(std::string("config: invalid JSON: ") + e.what());
    }
    return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
    json j;
    j["dataset"] = {{"type", dataset.type},
                    {"num_classes", dataset.num_classes},
                    {"per_class", dataset.per_class},
                    {"height", dataset.height},
                    {"width", dataset.width},
                    {"channels", dataset.channels},
                    {"path", dataset.path}};
    j["split"] = {{"test_fraction", split.test_fraction},
                  {"stratified_probes", split.stratified_probes}};
    j["attacks"] = json::array();
    for (const AttackSpec& a : attacks) j["attacks"].push_back(attack_spec_to_json(a));
    j["training"] = {{"epochs", training.epochs},
                     {"batch_size", training.batch_size},
                     {"base_lr", training.base_lr},
                     {"weight_decay", training.weight_decay}};
    j["retrain_epochs"] = effective_retrain_epochs();
    j["detection"] = {{"method", detector_kind_name(detection.method)},
                      {"n_clean", detection.n_clean},
                      {"k", detection.k},
                      {"n_epochs", detection.n_epochs},
                      {"r", detection.r},
                      {"vote_k", detection.vote_k},
                      {"t", detection.t},
                      {"cut_epoch", detection.cut_epoch},
                      {"filter_fraction", detection.filter_fraction},
                      {"reference_attack", attack_spec_to_json(detection.reference_attack)}};
    j["seeds"] = {{"master", seeds.master},
                  {"data", seeds.data},
                  {"split", seeds.split},
                  {"plan", seeds.plan},
                  {"init_detect", seeds.init_detect},
                  {"init_final", seeds.init_final},
                  {"init_retrain", seeds.init_retrain},
                  {"shuffle", seeds.shuffle},
                  {"probes", seeds.probes}};
    return j;
}

}  // namespace poisonlab
