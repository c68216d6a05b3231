#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <string>
#include <vector>

#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/trajectory.hpp"
#include "oracles.hpp"

using namespace poisonlab;
using test_oracles::TempDir;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

// Feeds a recorder a sequence of averages with constant per-example losses.
TrajectoryRecorder feed(const std::vector<double>& avgs, int n_examples = 2) {
    std::vector<int> ids(n_examples);
    for (int i = 0; i < n_examples; ++i) ids[i] = i;
    TrajectoryRecorder rec(ids);
    for (size_t e = 0; e < avgs.size(); ++e) {
        std::vector<float> per(n_examples, static_cast<float>(avgs[e]));
        rec.record_epoch(static_cast<int>(e), avgs[e], per);
    }
    return rec;
}

}  // namespace

// ---------------------------------------------------------------------------
// spike rejection rule
// ---------------------------------------------------------------------------

TEST_CASE("record_epoch: worked sequence, spike above twice the window mean rejected") {
    // Kept history [2.0, 1.0, 0.9]: window mean 1.3, threshold 2.6.
    TrajectoryRecorder rec({0});
    CHECK(rec.record_epoch(0, 2.0, {2.0f}));
    CHECK(rec.record_epoch(1, 1.0, {1.0f}));
    CHECK(rec.record_epoch(2, 0.9, {0.9f}));

    CHECK(rec.would_keep(2.5));   // 2.5 <= 2.6
    CHECK(!rec.would_keep(2.7));  // 2.7 > 2.6

    CHECK(!rec.record_epoch(3, 2.7, {2.7f}));
    CHECK(rec.state().rejected_epochs == std::vector<int>{3});
    // The rejected epoch contributed nothing to the kept window.
    CHECK(rec.state().kept_averages == std::vector<double>{2.0, 1.0, 0.9});

    // Same threshold still in force: 2.5 is kept.
    CHECK(rec.record_epoch(4, 2.5, {2.5f}));
    CHECK(rec.state().kept_epochs == std::vector<int>{0, 1, 2, 4});
}

TEST_CASE("record_epoch: first epoch is always kept") {
    TrajectoryRecorder rec({0});
    CHECK(rec.would_keep(100.0));
    CHECK(rec.record_epoch(0, 100.0, {100.0f}));
    CHECK(rec.state().kept_epochs == std::vector<int>{0});
}

TEST_CASE("record_epoch: short history truncates the window") {
    // One kept epoch: the window is just [4.0], threshold 8.0.
    TrajectoryRecorder a({0});
    a.record_epoch(0, 4.0, {4.0f});
    CHECK(a.would_keep(8.0));    // not strictly greater
    CHECK(!a.would_keep(8.01));

    // Two kept epochs [4.0, 2.0]: window mean 3.0, threshold 6.0.
    TrajectoryRecorder b({0});
    b.record_epoch(0, 4.0, {4.0f});
    b.record_epoch(1, 2.0, {2.0f});
    CHECK(b.would_keep(6.0));
    CHECK(!b.would_keep(6.01));

    // Four kept epochs: only the last three count. [5, 1, 1, 1] -> mean 1.
    TrajectoryRecorder c({0});
    for (int e = 0; e < 4; ++e)
        c.record_epoch(e, e == 0 ? 5.0 : 1.0, {1.0f});
    CHECK(!c.would_keep(2.01));  // threshold 2.0 ignores the early 5.0
    CHECK(c.would_keep(2.0));
}

TEST_CASE("record_epoch: per-example length is checked even on rejected epochs") {
    TrajectoryRecorder rec({0, 1});
    rec.record_epoch(0, 1.0, {1.0f, 1.0f});
    CHECK_THROWS_AS(rec.record_epoch(1, 1.0, {1.0f}), RejectedInputError);
    // 9.0 would be rejected by the filter, but the length check comes first.
    CHECK_THROWS_AS(rec.record_epoch(1, 9.0, {9.0f, 9.0f, 9.0f}), RejectedInputError);
}

TEST_CASE("record_epoch: 1000 random sequences match the reference filter") {
    SplitMix64 rng(404);
    for (int trial = 0; trial < 1000; ++trial) {
        const int len = 1 + static_cast<int>(rng.next_below(40));
        std::vector<double> avgs(len);
        for (double& a : avgs) {
            a = 0.1 + 4.9 * rng.next_double();
            if (rng.next_below(5) == 0) a *= 5.0;  // occasional spike
        }
        const auto expect = test_oracles::oracle_epoch_filter(avgs);

        TrajectoryRecorder rec({0});
        for (int e = 0; e < len; ++e)
            rec.record_epoch(e, avgs[e], {static_cast<float>(avgs[e])});
        CHECK(rec.state().kept_epochs == expect.kept);
        CHECK(rec.state().rejected_epochs == expect.rejected);
    }
}

TEST_CASE("record_epoch: replaying a recorded average sequence reproduces the partition") {
    SplitMix64 rng(405);
    std::vector<double> avgs(25);
    for (double& a : avgs) a = 0.5 + 3.0 * rng.next_double() * (rng.next_below(4) ? 1.0 : 4.0);
    const TrajectoryRecorder first = feed(avgs);

    TrajectoryRecorder replay({0, 1});
    for (size_t e = 0; e < first.state().avg_losses.size(); ++e) {
        const double a = first.state().avg_losses[e];
        replay.record_epoch(static_cast<int>(e), a,
                            {static_cast<float>(a), static_cast<float>(a)});
    }
    CHECK(replay.state().kept_epochs == first.state().kept_epochs);
    CHECK(replay.state().rejected_epochs == first.state().rejected_epochs);
}

// ---------------------------------------------------------------------------
// finalize
// ---------------------------------------------------------------------------

TEST_CASE("finalize: five calm epochs give five columns") {
    const TrajectoryRecorder rec = feed({1.0, 1.1, 0.9, 1.0, 0.95});
    const TrajectoryMatrix m = rec.finalize();
    m.check_invariants();
    CHECK(m.cols() == 5);
    CHECK(m.kept_epoch_indices == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("finalize: rejected epochs 2 and 4 leave columns (0,1,3)") {
    // e0=1.0 kept; e1=1.5 kept; e2=3.0 rejected (>2.5); e3=2.0 kept;
    // e4=4.0 rejected (window [1.0,1.5,2.0] -> threshold 3.0).
    TrajectoryRecorder rec({7, 8});
    const std::vector<double> avgs = {1.0, 1.5, 3.0, 2.0, 4.0};
    // Distinct per-example losses per epoch so columns are identifiable.
    for (size_t e = 0; e < avgs.size(); ++e)
        rec.record_epoch(static_cast<int>(e), avgs[e],
                         {static_cast<float>(avgs[e]) + 0.25f,
                          static_cast<float>(avgs[e]) - 0.25f});

    CHECK(rec.state().rejected_epochs == std::vector<int>{2, 4});
    const TrajectoryMatrix m = rec.finalize();
    CHECK(m.kept_epoch_indices == std::vector<int>{0, 1, 3});
    CHECK(m.example_ids == std::vector<int>{7, 8});

    // Replay oracle: each row is the sequence of kept per-example losses.
    const std::vector<float> kept_avgs = {1.0f, 1.5f, 2.0f};
    for (int col = 0; col < 3; ++col) {
        CHECK(m.at(0, col) == kept_avgs[col] + 0.25f);
        CHECK(m.at(1, col) == kept_avgs[col] - 0.25f);
    }
}

TEST_CASE("finalize: zero recorded epochs is an error") {
    TrajectoryRecorder rec({0});
    CHECK_THROWS_AS(rec.finalize(), RejectedInputError);
}

TEST_CASE("TrajectoryRecorder: empty id list rejected; invariants enforced") {
    CHECK_THROWS_AS(TrajectoryRecorder(std::vector<int>{}), RejectedInputError);

    TrajectoryMatrix bad;
    bad.example_ids = {0, 1};
    bad.kept_epoch_indices = {0};
    bad.losses = {1.0f};  // wrong size
    CHECK_THROWS_AS(bad.check_invariants(), RejectedInputError);

    TrajectoryMatrix neg;
    neg.example_ids = {0};
    neg.kept_epoch_indices = {0};
    neg.losses = {-1.0f};
    CHECK_THROWS_AS(neg.check_invariants(), RejectedInputError);
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

TEST_CASE("trajectory csv: save -> load -> save is byte-identical") {
    TempDir dir("traj_csv");
    TrajectoryRecorder rec({10, 20, 30});
    SplitMix64 rng(77);
    for (int e = 0; e < 6; ++e) {
        std::vector<float> per = {rng.next_float() * 3, rng.next_float() * 3,
                                  rng.next_float() * 3};
        const double avg = (per[0] + per[1] + per[2]) / 3.0;
        rec.record_epoch(e, avg, per);
    }
    const TrajectoryMatrix m = rec.finalize();

    const std::string p1 = dir.file("a.csv"), p2 = dir.file("b.csv");
    save_trajectories_csv(m, p1);
    const TrajectoryMatrix back = load_trajectories_csv(p1);
    save_trajectories_csv(back, p2);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(!slurp(p1).empty());

    CHECK(back.example_ids == m.example_ids);
    CHECK(back.kept_epoch_indices == m.kept_epoch_indices);
    CHECK(back.losses == m.losses);  // %.9g preserves f32 exactly

    // Header shape contract.
    std::ifstream in(p1);
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("example_id,epoch_0,epoch_1", 0) == 0);
}

TEST_CASE("trajectory csv: 1000x30 round-trip is lossless") {
    TempDir dir("traj_big");
    TrajectoryMatrix m;
    m.example_ids.resize(1000);
    for (int i = 0; i < 1000; ++i) m.example_ids[i] = i * 3 + 1;
    m.kept_epoch_indices.resize(30);
    for (int e = 0; e < 30; ++e) m.kept_epoch_indices[e] = e;
    m.losses.resize(1000u * 30u);
    SplitMix64 rng(88);
    for (float& v : m.losses) v = rng.next_float() * 10.0f;

    const std::string path = dir.file("big.csv");
    save_trajectories_csv(m, path);
    const TrajectoryMatrix back = load_trajectories_csv(path);
    REQUIRE(back.rows() == 1000);
    REQUIRE(back.cols() == 30);
    float worst = 0.0f;
    for (size_t i = 0; i < m.losses.size(); ++i)
        worst = std::max(worst, std::abs(m.losses[i] - back.losses[i]));
    CHECK(worst <= 1e-6f);
}

TEST_CASE("trajectory csv: malformed input names the line") {
    TempDir dir("traj_bad");
    const std::string path = dir.file("bad.csv");

    {
        std::ofstream out(path);
        out << "example_id,epoch_0,epoch_1\n";
        out << "1,0.5,0.25\n";
        out << "2,0.5\n";  // ragged row (line 3)
    }
    try {
        load_trajectories_csv(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }

    {
        std::ofstream out(path);
        out << "id,epoch_0\n1,0.5\n";  // bad header
    }
    try {
        load_trajectories_csv(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }

    {
        std::ofstream out(path);
        out << "example_id,epoch_0\n1,banana\n";  // unparsable numeric
    }
    CHECK_THROWS_AS(load_trajectories_csv(path), FormatError);

    CHECK_THROWS_AS(load_trajectories_csv(dir.file("absent.csv")), IoError);
}

// ---------------------------------------------------------------------------
// epoch-filter sidecar JSON
// ---------------------------------------------------------------------------

TEST_CASE("epoch filter json: round-trip restores the full state") {
    TempDir dir("filter_json");
    const TrajectoryRecorder rec = feed({1.0, 1.2, 5.0, 1.1, 0.9});
    const EpochFilterState& st = rec.state();
    REQUIRE(st.rejected_epochs == std::vector<int>{2});

    const std::string path = dir.file("filter.json");
    save_epoch_filter_json(st, path);
    const EpochFilterState back = load_epoch_filter_json(path);
    CHECK(back.kept_epochs == st.kept_epochs);
    CHECK(back.rejected_epochs == st.rejected_epochs);
    CHECK(back.avg_losses == st.avg_losses);
    CHECK(back.kept_averages == st.kept_averages);
}

TEST_CASE("epoch filter json: malformed input rejected") {
    TempDir dir("filter_bad");
    const std::string path = dir.file("bad.json");
    {
        std::ofstream out(path);
        out << "{\"kept_epochs\": [0,1]}";  // missing fields
    }
    CHECK_THROWS_AS(load_epoch_filter_json(path), FormatError);
    {
        std::ofstream out(path);
        // length mismatch between epoch lists and avg_losses
        out << R"({"kept_epochs":[0],"rejected_epochs":[1],"avg_losses":[1.0]})";
    }
    CHECK_THROWS_AS(load_epoch_filter_json(path), FormatError);
    CHECK_THROWS_AS(load_epoch_filter_json(dir.file("absent.json")), IoError);
}
