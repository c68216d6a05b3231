// Command-line front end for the poisoning laboratory.
//
//   poisonlab run      --config cfg.json --out dir [--seed N]
//   poisonlab poison   --config cfg.json --out dir [--seed N]
//   poisonlab train    --out dir
//   poisonlab detect   --out dir
//   poisonlab retrain  --out dir
//   poisonlab evaluate --out dir
//   poisonlab report   --out dir
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "poisonlab/config.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/pipeline.hpp"

namespace {

using poisonlab::ExperimentConfig;
using poisonlab::RunPaths;
using poisonlab::RunState;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

ExperimentConfig load_config(const std::string& path, bool seed_given, uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw poisonlab::RejectedInputError("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw poisonlab::RejectedInputError(std::string("config: invalid JSON: ") + e.what());
    }
    if (seed_given) j["seeds"] = {{"master", seed}};
    return ExperimentConfig::from_json(j);
}

void write_status_line(const RunPaths& paths, const std::string& state,
                       const std::string& stage, const std::vector<std::string>& done) {
    nlohmann::json j;
    j["state"] = state;
    j["stage"] = stage;
    j["stages_done"] = done;
    std::ofstream out(paths.status_json(), std::ios::binary);
    if (!out) throw poisonlab::IoError("cannot write " + paths.status_json());
    out << j.dump(2) << "\n";
}

// Runs one stage against an existing run directory, enforcing stage order
// and keeping status.json truthful.
int run_single_stage(const std::string& out_dir, const std::string& name,
                     const std::string& prerequisite) {
    const RunPaths paths(out_dir);
    std::vector<std::string> done = poisonlab::stages_done(paths);
    if (!prerequisite.empty() &&
        std::find(done.begin(), done.end(), prerequisite) == done.end()) {
        std::cerr << "error: stage '" << name << "' requires completed stage '"
                  << prerequisite << "' in " << out_dir << "\n";
        return kExitConfig;
    }
    if (std::find(done.begin(), done.end(), name) != done.end())
        std::cerr << "note: stage '" << name << "' already ran; re-running\n";

    RunState state = poisonlab::load_run_state(paths);
    write_status_line(paths, "incomplete", name, done);
    try {
        if (name == "train") poisonlab::stage_train(state, paths);
        else if (name == "detect") poisonlab::stage_detect(state, paths);
        else if (name == "retrain") poisonlab::stage_retrain(state, paths);
        else if (name == "evaluate") poisonlab::stage_evaluate(state, paths);
    } catch (const std::exception& e) {
        write_status_line(paths, "incomplete", name, done);
        std::cerr << "error: stage '" << name << "' failed: " << e.what() << "\n";
        return kExitStage;
    }
    if (std::find(done.begin(), done.end(), name) == done.end()) done.push_back(name);
    const bool complete =
        std::find(done.begin(), done.end(), "evaluate") != done.end();
    write_status_line(paths, complete ? "complete" : "incomplete", name, done);
    std::cout << "stage '" << name << "' finished\n";
    return kExitOk;
}

int cmd_poison(const std::string& config_path, const std::string& out_dir, bool seed_given,
               uint64_t seed) {
    const ExperimentConfig cfg = load_config(config_path, seed_given, seed);
    std::filesystem::create_directories(out_dir);
    const RunPaths paths(out_dir);
    write_status_line(paths, "incomplete", "poison", {});
    RunState state;
    state.cfg = cfg;
    try {
        poisonlab::stage_poison(state, paths);
    } catch (const std::exception& e) {
        write_status_line(paths, "incomplete", "poison", {});
        std::cerr << "error: stage 'poison' failed: " << e.what() << "\n";
        return kExitStage;
    }
    write_status_line(paths, "incomplete", "poison", {"poison"});
    std::cout << "stage 'poison' finished\n";
    return kExitOk;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, bool seed_given,
            uint64_t seed) {
    const ExperimentConfig cfg = load_config(config_path, seed_given, seed);
    const RunState state = poisonlab::run_pipeline(cfg, out_dir);
    const auto& u = state.undefended;
    const auto& r = state.retrained;
    std::printf("clean accuracy: undefended %.4f, retrained %.4f\n", u.clean_accuracy,
                r.clean_accuracy);
    for (const auto& [name, asr] : u.asr) {
        const auto it = r.asr.find(name);
        std::printf("ASR %-18s undefended %.4f, retrained %.4f\n", name.c_str(), asr,
                    it == r.asr.end() ? 0.0 : it->second);
    }
    std::printf("rejected %zu example(s); report at %s\n", state.rejected_ids.size(),
                RunPaths(out_dir).report_json().c_str());
    return kExitOk;
}

int cmd_report(const std::string& out_dir) {
    const RunPaths paths(out_dir);
    std::ifstream in(paths.report_json());
    if (!in) {
        std::cerr << "error: no report.json in " << out_dir << " (run 'evaluate' first)\n";
        return kExitConfig;
    }
    nlohmann::json report;
    try {
        in >> report;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: unreadable report: " << e.what() << "\n";
        return kExitStage;
    }
    const auto& ds = report.at("dataset");
    std::printf("dataset: %d train / %d test, %d classes, %d probes\n",
                ds.at("train_size").get<int>(), ds.at("test_size").get<int>(),
                ds.at("num_classes").get<int>(), ds.at("probe_count").get<int>());
    std::printf("attacks:\n");
    for (const auto& a : report.at("attacks")) {
        std::printf("  %-18s ratio %.4f, %d poisoned\n",
                    a.at("name").get<std::string>().c_str(), a.at("ratio").get<double>(),
                    a.at("poisoned_count").get<int>());
    }
    const auto& det = report.at("detection");
    std::printf("detection: %s, rejected %d (%.3f of candidates), clean FPR %.3f\n",
                det.at("method").get<std::string>().c_str(), det.at("n_rejected").get<int>(),
                det.at("removed_fraction").get<double>(), det.at("clean_fpr").get<double>());
    for (const auto& [name, recall] : det.at("per_attack_recall").items())
        std::printf("  recall %-18s %.3f\n", name.c_str(), recall.get<double>());
    const auto& m = report.at("metrics");
    std::printf("clean accuracy: undefended %.4f, retrained %.4f\n",
                m.at("undefended").at("clean_accuracy").get<double>(),
                m.at("retrained").at("clean_accuracy").get<double>());
    for (const auto& [name, asr] : m.at("undefended").at("asr").items()) {
        std::printf("ASR %-18s undefended %.4f, retrained %.4f\n", name.c_str(),
                    asr.get<double>(),
                    m.at("retrained").at("asr").at(name).get<double>());
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-attack data poisoning laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    uint64_t seed = 0;
    bool seed_given = false;

    const auto add_config_opts = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
        cmd->add_option("--out", out_dir, "run directory")->required();
        cmd->add_option("--seed", seed, "master seed override")
            ->each([&](const std::string&) { seed_given = true; });
    };
    const auto add_out_opt = [&](CLI::App* cmd) {
        cmd->add_option("--out", out_dir, "run directory")->required();
    };

    CLI::App* run_cmd = app.add_subcommand("run", "full pipeline");
    add_config_opts(run_cmd);
    CLI::App* poison_cmd = app.add_subcommand("poison", "build and poison the dataset");
    add_config_opts(poison_cmd);
    CLI::App* train_cmd = app.add_subcommand("train", "detection-phase and baseline training");
    add_out_opt(train_cmd);
    CLI::App* detect_cmd = app.add_subcommand("detect", "score trajectories, pick rejections");
    add_out_opt(detect_cmd);
    CLI::App* retrain_cmd = app.add_subcommand("retrain", "train on the filtered dataset");
    add_out_opt(retrain_cmd);
    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "metrics, report, plot data");
    add_out_opt(evaluate_cmd);
    CLI::App* report_cmd = app.add_subcommand("report", "print a finished run's summary");
    add_out_opt(report_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (run_cmd->parsed()) return cmd_run(config_path, out_dir, seed_given, seed);
        if (poison_cmd->parsed()) return cmd_poison(config_path, out_dir, seed_given, seed);
        if (train_cmd->parsed()) return run_single_stage(out_dir, "train", "poison");
        if (detect_cmd->parsed()) return run_single_stage(out_dir, "detect", "train");
        if (retrain_cmd->parsed()) return run_single_stage(out_dir, "retrain", "detect");
        if (evaluate_cmd->parsed()) return run_single_stage(out_dir, "evaluate", "retrain");
        if (report_cmd->parsed()) return cmd_report(out_dir);
    } catch (const poisonlab::RejectedInputError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const poisonlab::StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    }
    return kExitOk;
}
