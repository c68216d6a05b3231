#include "poisonlab/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "poisonlab/checkpoint.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

namespace {

using nlohmann::json;

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    return j;
}

void write_status(const RunPaths& paths, const std::string& state,
                  const std::string& stage, const std::vector<std::string>& done) {
    json j;
    j["state"] = state;
    j["stage"] = stage;
    j["stages_done"] = done;
    write_json_file(j, paths.status_json());
}

std::unordered_map<int, int> row_by_id(const ImageDataset& ds) {
    std::unordered_map<int, int> m;
    m.reserve(ds.example_ids.size());
    for (int r = 0; r < ds.size(); ++r) m[ds.example_ids[r]] = r;
    return m;
}

// Penultimate features over a whole dataset, chunked to bound memory.
FeatureMatrix features_for_dataset(const SmallConvNet& net, const ImageDataset& ds) {
    constexpr int kChunk = 256;
    FeatureMatrix all;
    all.rows = ds.size();
    all.cols = net.feature_dim();
    all.data.resize(static_cast<size_t>(all.rows) * all.cols);
    const size_t img_len = ds.image_len();
    for (int start = 0; start < ds.size(); start += kChunk) {
        const int n = std::min(kChunk, ds.size() - start);
        Tensor4 batch(n, ds.images.c, ds.images.h, ds.images.w);
        std::copy(ds.image(start), ds.image(start) + n * img_len, batch.data.begin());
        const FeatureMatrix f = penultimate_features(net, batch);
        std::copy(f.data.begin(), f.data.end(),
                  all.data.begin() + static_cast<size_t>(start) * all.cols);
    }
    return all;
}

json mask_to_json(const PoisonMask& mask) {
    json j;
    j["attack_names"] = mask.attack_names;
    j["tags"] = mask.tags;
    j["original_labels"] = mask.original_labels;
    j["target_labels"] = mask.target_labels;
    return j;
}

PoisonMask mask_from_json(const json& j) {
    PoisonMask mask;
    mask.attack_names = j.at("attack_names").get<std::vector<std::string>>();
    mask.tags = j.at("tags").get<std::vector<int>>();
    mask.original_labels = j.at("original_labels").get<std::vector<int>>();
    mask.target_labels = j.at("target_labels").get<std::vector<int>>();
    return mask;
}

json split_to_json(const SplitSpec& split) {
    json j;
    j["train_ids"] = split.train_ids;
    j["test_ids"] = split.test_ids;
    j["probe_ids"] = split.probe_ids;
    j["seed"] = split.seed;
    return j;
}

SplitSpec split_from_json(const json& j) {
    SplitSpec s;
    s.train_ids = j.at("train_ids").get<std::vector<int>>();
    s.test_ids = j.at("test_ids").get<std::vector<int>>();
    s.probe_ids = j.at("probe_ids").get<std::vector<int>>();
    s.seed = j.at("seed").get<uint64_t>();
    return s;
}

json plan_to_json(const PoisonPlan& plan) {
    json arr = json::array();
    for (const auto& entry : plan.entries) {
        json e;
        e["spec"] = attack_spec_to_json(entry.spec);
        e["example_ids"] = entry.example_ids;
        arr.push_back(e);
    }
    return arr;
}

PoisonPlan plan_from_json(const json& arr) {
    PoisonPlan plan;
    for (const json& e : arr) {
        PoisonPlan::Entry entry;
        entry.spec = attack_spec_from_json(e.at("spec"));
        entry.example_ids = e.at("example_ids").get<std::vector<int>>();
        plan.entries.push_back(std::move(entry));
    }
    return plan;
}

json probes_to_json(const ProbeSet& probes) {
    json j;
    j["variant_mode"] = probes.variant_mode;
    j["clean_ids"] = probes.clean_ids;
    j["p1"] = probes.p1;
    j["p2"] = probes.p2;
    j["p3"] = probes.p3;
    j["reference"] = attack_spec_to_json(probes.reference_spec);
    return j;
}

ProbeSet probes_from_json(const json& j) {
    ProbeSet p;
    p.variant_mode = j.at("variant_mode").get<bool>();
    p.clean_ids = j.at("clean_ids").get<std::vector<int>>();
    p.p1 = j.at("p1").get<std::vector<int>>();
    p.p2 = j.at("p2").get<std::vector<int>>();
    p.p3 = j.at("p3").get<std::vector<int>>();
    p.reference_spec = attack_spec_from_json(j.at("reference"));
    return p;
}

std::string format_g9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

SmallConvNet make_net(const RunState& state) {
    return SmallConvNet(state.train.data.images.c, state.train.data.images.h,
                        state.train.data.images.w, state.train.data.num_classes);
}

json detection_to_json(const RunState& state) {
    const auto candidates = state.candidate_ids();
    json j;
    j["method"] = detector_kind_name(state.cfg.detection.method);
    j["rejected_ids"] = state.rejected_ids;
    j["n_rejected"] = state.rejected_ids.size();
    j["n_candidates"] = candidates.size();
    j["removed_fraction"] =
        candidates.empty()
            ? 0.0
            : static_cast<double>(state.rejected_ids.size()) / candidates.size();
    j["clean_fpr"] = state.quality.clean_false_positive_rate;
    j["per_attack_recall"] = state.quality.per_attack_recall;
    const DetectionConfig& d = state.cfg.detection;
    j["params"] = {{"n_clean", d.n_clean},   {"k", d.k},
                   {"n_epochs", d.n_epochs}, {"r", d.r},
                   {"t", d.t},               {"vote_k", d.vote_k},
                   {"cut_epoch", d.cut_epoch}, {"filter_fraction", d.filter_fraction}};
    if (state.has_scores) {
        json arr = json::array();
        for (size_t i = 0; i < state.scores.example_ids.size(); ++i) {
            arr.push_back({{"id", state.scores.example_ids[i]},
                           {"score", state.scores.score[i]},
                           {"log_score", state.scores.log_score[i]}});
        }
        j["scores"] = std::move(arr);
    }
    return j;
}

}  // namespace

std::vector<int> RunState::candidate_ids() const {
    const std::vector<int> probe_ids = probes.all_probe_ids();
    const std::unordered_set<int> probe_set(probe_ids.begin(), probe_ids.end());
    std::vector<int> out;
    out.reserve(train.data.example_ids.size());
    for (const int id : train.data.example_ids)
        if (!probe_set.count(id)) out.push_back(id);
    return out;
}

void stage_poison(RunState& state, const RunPaths& paths) {
    const ExperimentConfig& cfg = state.cfg;

    ImageDataset full;
    if (cfg.dataset.type == "synthetic") {
        full = make_synthetic(cfg.dataset.num_classes, cfg.dataset.per_class,
                              cfg.dataset.height, cfg.dataset.width, cfg.seeds.data,
                              cfg.dataset.channels);
    } else {
        full = load_cifar10_binary(cfg.dataset.path);
    }
    full.check_invariants();

    state.split = split(full, cfg.split.test_fraction, cfg.detection.n_clean,
                        cfg.seeds.split, cfg.split.stratified_probes);

    const auto rows = row_by_id(full);
    const auto subset_by_ids = [&](const std::vector<int>& ids) {
        std::vector<int> indices;
        indices.reserve(ids.size());
        for (const int id : ids) indices.push_back(rows.at(id));
        return full.subset(indices);
    };
    ImageDataset train_ds = subset_by_ids(state.split.train_ids);
    state.test = subset_by_ids(state.split.test_ids);

    state.plan = build_poison_plan(train_ds, cfg.attacks, state.split, cfg.seeds.plan);
    state.train = poison_dataset(train_ds, state.plan);
    state.baseline_train = state.train.data;  // attacker-delivered copy

    if (cfg.detection.method == DetectorKind::KnnVote) {
        state.probes = build_probe_sets(state.train.data, state.split.probe_ids,
                                        cfg.detection.reference_attack, cfg.seeds.probes);
    } else {
        state.probes = ProbeSet{};
        state.probes.clean_ids = state.split.probe_ids;
    }

    save_dataset_binary(state.train.data, paths.train_bin());
    save_dataset_binary(state.baseline_train, paths.baseline_train_bin());
    save_dataset_binary(state.test, paths.test_bin());

    json st;
    st["config"] = cfg.to_json();
    st["num_classes"] = state.train.data.num_classes;
    st["image"] = {{"c", state.train.data.images.c},
                   {"h", state.train.data.images.h},
                   {"w", state.train.data.images.w}};
    st["train_example_ids"] = state.train.data.example_ids;
    st["test_example_ids"] = state.test.example_ids;
    st["split"] = split_to_json(state.split);
    st["mask"] = mask_to_json(state.train.mask);
    st["plan"] = plan_to_json(state.plan);
    st["probes"] = probes_to_json(state.probes);
    write_json_file(st, paths.state_json());
}

void stage_train(RunState& state, const RunPaths& paths) {
    const ExperimentConfig& cfg = state.cfg;
    std::filesystem::create_directories(paths.checkpoints_dir());

    // Detection-phase model: trajectory recording plus per-epoch checkpoints.
    SmallConvNet detect_net = make_net(state);
    detect_net.init_he_uniform(cfg.seeds.init_detect);
    TrainOptions detect_opts;
    detect_opts.epochs = cfg.detection.n_epochs;
    detect_opts.batch_size = cfg.training.batch_size;
    detect_opts.base_lr = static_cast<float>(cfg.training.base_lr);
    detect_opts.weight_decay = static_cast<float>(cfg.training.weight_decay);
    detect_opts.shuffle_seed = derive_seed(cfg.seeds.shuffle, "detect");
    detect_opts.checkpoint_dir = paths.checkpoints_dir();
    detect_opts.record_trajectories = true;
    state.detect_train = train_model(detect_net, state.train.data, detect_opts);
    state.has_trajectories = true;
    save_checkpoint(detect_net, cfg.detection.n_epochs, paths.detect_model());
    save_trajectories_csv(state.detect_train.trajectories, paths.trajectories_csv());
    save_epoch_filter_json(state.detect_train.filter, paths.epoch_filter_json());

    // Undefended baseline: fresh weights, full budget, attacker's dataset.
    SmallConvNet baseline_net = make_net(state);
    baseline_net.init_he_uniform(cfg.seeds.init_final);
    TrainOptions base_opts;
    base_opts.epochs = cfg.training.epochs;
    base_opts.batch_size = cfg.training.batch_size;
    base_opts.base_lr = static_cast<float>(cfg.training.base_lr);
    base_opts.weight_decay = static_cast<float>(cfg.training.weight_decay);
    base_opts.shuffle_seed = derive_seed(cfg.seeds.shuffle, "final");
    train_model(baseline_net, state.baseline_train, base_opts);
    save_checkpoint(baseline_net, cfg.training.epochs, paths.undefended_model());
}

void stage_detect(RunState& state, const RunPaths& paths) {
    const ExperimentConfig& cfg = state.cfg;
    if (!state.has_trajectories)
        throw RejectedInputError("detect: no trajectories recorded");
    const TrajectoryMatrix& matrix = state.detect_train.trajectories;

    switch (cfg.detection.method) {
        case DetectorKind::BadLoss: {
            state.scores = badloss_scores(matrix, state.probes, cfg.detection.k);
            state.has_scores = true;
            state.rejected_ids = select_rejections(state.scores, cfg.detection.r);
            break;
        }
        case DetectorKind::KnnVote: {
            state.rejected_ids =
                knn_vote_classify(matrix, state.probes, cfg.detection.vote_k,
                                  cfg.detection.t);
            break;
        }
        case DetectorKind::Spectral: {
            SmallConvNet net = make_net(state);
            load_checkpoint(net, paths.detect_model());
            const FeatureMatrix features = features_for_dataset(net, state.train.data);
            state.rejected_ids = spectral_signatures_filter(
                features, state.train.data.example_ids, state.train.data.labels,
                state.train.data.num_classes, cfg.detection.filter_fraction,
                state.probes.all_probe_ids());
            break;
        }
        case DetectorKind::LossRank: {
            state.rejected_ids =
                loss_rank_filter(matrix, cfg.detection.cut_epoch,
                                 cfg.detection.filter_fraction, state.probes.all_probe_ids());
            break;
        }
        case DetectorKind::None:
            state.rejected_ids.clear();
            break;
    }

    state.quality =
        detection_metrics(state.rejected_ids, state.train, state.candidate_ids());
    state.detection_done = true;
    write_json_file(detection_to_json(state), paths.detection_json());
}

void stage_retrain(RunState& state, const RunPaths& paths) {
    const ExperimentConfig& cfg = state.cfg;
    if (!state.detection_done)
        throw RejectedInputError("retrain: detection has not run");

    const std::unordered_set<int> rejected(state.rejected_ids.begin(),
                                           state.rejected_ids.end());
    std::vector<int> keep_rows;
    keep_rows.reserve(state.train.data.size());
    for (int r = 0; r < state.train.data.size(); ++r)
        if (!rejected.count(state.train.data.example_ids[r])) keep_rows.push_back(r);
    if (keep_rows.empty())
        throw RejectedInputError("retrain: every example was rejected");
    const ImageDataset filtered = state.train.data.subset(keep_rows);

    SmallConvNet net = make_net(state);
    net.init_he_uniform(cfg.seeds.init_retrain);
    TrainOptions opts;
    opts.epochs = cfg.effective_retrain_epochs();
    opts.batch_size = cfg.training.batch_size;
    opts.base_lr = static_cast<float>(cfg.training.base_lr);
    opts.weight_decay = static_cast<float>(cfg.training.weight_decay);
    opts.shuffle_seed = derive_seed(cfg.seeds.shuffle, "retrain");
    // Runtime guard for the contract that retraining never sees a rejected id.
    const BatchHook guard = [&rejected](int, const std::vector<int>& ids) {
        for (const int id : ids)
            if (rejected.count(id))
                throw RejectedInputError("retrain: rejected id " + std::to_string(id) +
                                         " reached a training batch");
    };
    train_model(net, filtered, opts, guard);
    save_checkpoint(net, opts.epochs, paths.retrained_model());
}

void stage_evaluate(RunState& state, const RunPaths& paths) {
    const ExperimentConfig& cfg = state.cfg;

    SmallConvNet undefended = make_net(state);
    load_checkpoint(undefended, paths.undefended_model());
    SmallConvNet retrained = make_net(state);
    load_checkpoint(retrained, paths.retrained_model());

    const auto evaluate = [&](const SmallConvNet& net) {
        Metrics m;
        m.clean_accuracy = evaluate_clean_accuracy(net, state.test);
        for (const auto& entry : state.plan.entries)
            m.asr[attack_instance_name(entry.spec)] =
                evaluate_asr(net, state.test, entry.spec);
        return m;
    };
    state.undefended = evaluate(undefended);
    state.retrained = evaluate(retrained);

    // Group-mean trajectories: one row for clean, one per attack.
    if (state.has_trajectories) {
        const TrajectoryMatrix& matrix = state.detect_train.trajectories;
        const auto rows = row_by_id(state.train.data);
        const size_t groups = state.train.mask.attack_names.size();
        std::vector<std::vector<double>> sums(groups,
                                              std::vector<double>(matrix.cols(), 0.0));
        std::vector<int> counts(groups, 0);
        for (int r = 0; r < matrix.rows(); ++r) {
            const int row = rows.at(matrix.example_ids[r]);
            const int tag = state.train.mask.tags[row];
            ++counts[tag];
            for (int c = 0; c < matrix.cols(); ++c) sums[tag][c] += matrix.at(r, c);
        }
        std::ofstream out(paths.group_means_csv(), std::ios::binary);
        if (!out) throw IoError("cannot open for writing: " + paths.group_means_csv());
        out << "group";
        for (const int k : matrix.kept_epoch_indices) out << ",epoch_" << k;
        out << "\n";
        for (size_t g = 0; g < groups; ++g) {
            out << state.train.mask.attack_names[g];
            for (int c = 0; c < matrix.cols(); ++c)
                out << ','
                    << format_g9(counts[g] > 0 ? sums[g][c] / counts[g] : 0.0);
            out << "\n";
        }
    }

    // The report: everything needed to re-derive any number in it.
    json report;
    report["config"] = cfg.to_json();
    report["dataset"] = {{"num_classes", state.train.data.num_classes},
                         {"image",
                          {{"c", state.train.data.images.c},
                           {"h", state.train.data.images.h},
                           {"w", state.train.data.images.w}}},
                         {"train_size", state.train.data.size()},
                         {"test_size", state.test.size()},
                         {"probe_count", state.split.probe_ids.size()}};
    json attacks = json::array();
    for (const auto& entry : state.plan.entries) {
        attacks.push_back({{"name", attack_instance_name(entry.spec)},
                           {"kind", attack_kind_name(entry.spec.kind)},
                           {"target_class", entry.spec.target_class},
                           {"ratio", entry.spec.ratio},
                           {"poisoned_count", entry.example_ids.size()}});
    }
    report["attacks"] = std::move(attacks);
    if (state.has_trajectories) {
        report["epoch_filter"] = {
            {"kept_epochs", state.detect_train.filter.kept_epochs},
            {"rejected_epochs", state.detect_train.filter.rejected_epochs}};
    }
    const auto candidates = state.candidate_ids();
    report["detection"] = {
        {"method", detector_kind_name(cfg.detection.method)},
        {"n_rejected", state.rejected_ids.size()},
        {"removed_fraction",
         candidates.empty()
             ? 0.0
             : static_cast<double>(state.rejected_ids.size()) / candidates.size()},
        {"clean_fpr", state.quality.clean_false_positive_rate},
        {"per_attack_recall", state.quality.per_attack_recall}};
    const auto metrics_json = [](const Metrics& m) {
        return json{{"clean_accuracy", m.clean_accuracy}, {"asr", m.asr}};
    };
    report["metrics"] = {{"undefended", metrics_json(state.undefended)},
                         {"retrained", metrics_json(state.retrained)}};
    report["notes"] = {
        {"probes_retained_in_retraining", true},
        {"score_definition",
         "mean distance to the k nearest clean-probe trajectories; "
         "log(mean + 1e-12) recorded alongside, ranking unchanged"}};
    state.report = report;
    write_json_file(report, paths.report_json());
}

RunState load_run_state(const RunPaths& paths) {
    const json st = read_json_file(paths.state_json());
    RunState state;
    state.cfg = ExperimentConfig::from_json(st.at("config"));

    const int num_classes = st.at("num_classes").get<int>();
    const int c = st.at("image").at("c").get<int>();
    const int h = st.at("image").at("h").get<int>();
    const int w = st.at("image").at("w").get<int>();

    state.train.data = load_dataset_binary(paths.train_bin(), num_classes, c, h, w);
    state.train.data.example_ids = st.at("train_example_ids").get<std::vector<int>>();
    state.baseline_train = load_dataset_binary(paths.baseline_train_bin(), num_classes, c, h, w);
    state.baseline_train.example_ids = state.train.data.example_ids;
    state.test = load_dataset_binary(paths.test_bin(), num_classes, c, h, w);
    state.test.example_ids = st.at("test_example_ids").get<std::vector<int>>();

    state.split = split_from_json(st.at("split"));
    state.train.mask = mask_from_json(st.at("mask"));
    state.plan = plan_from_json(st.at("plan"));
    state.probes = probes_from_json(st.at("probes"));

    if (std::filesystem::exists(paths.trajectories_csv())) {
        state.detect_train.trajectories = load_trajectories_csv(paths.trajectories_csv());
        state.detect_train.filter = load_epoch_filter_json(paths.epoch_filter_json());
        state.has_trajectories = true;
    }
    if (std::filesystem::exists(paths.detection_json())) {
        const json d = read_json_file(paths.detection_json());
        state.rejected_ids = d.at("rejected_ids").get<std::vector<int>>();
        state.quality.clean_false_positive_rate = d.at("clean_fpr").get<double>();
        state.quality.per_attack_recall =
            d.at("per_attack_recall").get<std::map<std::string, double>>();
        state.detection_done = true;
    }
    return state;
}

std::vector<std::string> stages_done(const RunPaths& paths) {
    if (!std::filesystem::exists(paths.status_json())) return {};
    const json j = read_json_file(paths.status_json());
    if (!j.contains("stages_done")) return {};
    return j.at("stages_done").get<std::vector<std::string>>();
}

RunState run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const RunPaths paths(out_dir);

    RunState state;
    state.cfg = cfg;
    std::vector<std::string> done;

    const auto run_stage = [&](const char* name, auto&& body) {
        write_status(paths, "incomplete", name, done);
        try {
            body();
        } catch (const std::exception& e) {
            write_status(paths, "incomplete", name, done);
            throw StageError(name, e.what());
        }
        done.push_back(name);
        write_status(paths, "incomplete", name, done);
    };

    run_stage("poison", [&] { stage_poison(state, paths); });
    run_stage("train", [&] { stage_train(state, paths); });
    run_stage("detect", [&] { stage_detect(state, paths); });
    run_stage("retrain", [&] { stage_retrain(state, paths); });
    run_stage("evaluate", [&] { stage_evaluate(state, paths); });
    write_status(paths, "complete", "evaluate", done);
    return state;
}

}  // namespace poisonlab
