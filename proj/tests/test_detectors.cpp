#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "poisonlab/attacks.hpp"
#include "poisonlab/checkpoint.hpp"
#include "poisonlab/dataset.hpp"
#include "poisonlab/detectors.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/trainer.hpp"
#include "oracles.hpp"

using namespace poisonlab;
using test_oracles::TempDir;

namespace {

// Matrix with the given per-id trajectories.
TrajectoryMatrix matrix_of(const std::vector<std::pair<int, std::vector<float>>>& rows) {
    TrajectoryMatrix m;
    const int cols = static_cast<int>(rows.front().second.size());
    for (int e = 0; e < cols; ++e) m.kept_epoch_indices.push_back(e);
    for (const auto& [id, traj] : rows) {
        m.example_ids.push_back(id);
        m.losses.insert(m.losses.end(), traj.begin(), traj.end());
    }
    return m;
}

TrajectoryMatrix random_matrix(int n, int cols, uint64_t seed, float scale = 3.0f) {
    TrajectoryMatrix m;
    m.example_ids.resize(n);
    for (int i = 0; i < n; ++i) m.example_ids[i] = i;
    m.kept_epoch_indices.resize(cols);
    for (int e = 0; e < cols; ++e) m.kept_epoch_indices[e] = e;
    m.losses.resize(static_cast<size_t>(n) * cols);
    SplitMix64 rng(seed);
    for (float& v : m.losses) v = rng.next_float() * scale;
    return m;
}

ProbeSet clean_probes(std::vector<int> ids) {
    ProbeSet p;
    p.clean_ids = std::move(ids);
    return p;
}

AnomalyScores scores_of(const std::vector<std::pair<int, float>>& entries,
                        std::vector<int> probe_ids = {}) {
    AnomalyScores s;
    for (const auto& [id, sc] : entries) {
        s.example_ids.push_back(id);
        s.score.push_back(sc);
        s.log_score.push_back(std::log(sc + 1e-12f));
    }
    s.k = 1;
    s.probe_ids = std::move(probe_ids);
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// badloss_scores
// ---------------------------------------------------------------------------

TEST_CASE("badloss_scores: Euclidean distance to a single probe") {
    const TrajectoryMatrix m = matrix_of({{0, {0.0f, 0.0f}}, {1, {3.0f, 4.0f}}});
    const AnomalyScores s = badloss_scores(m, clean_probes({0}), 1);
    REQUIRE(s.example_ids == std::vector<int>{0, 1});
    CHECK(s.score[1] == 5.0f);  // 3-4-5 triangle
    CHECK(s.log_score[1] == doctest::Approx(std::log(5.0 + 1e-12)));
    // The lone probe has no peer: zero anomaly by convention.
    CHECK(s.score[0] == 0.0f);
}

TEST_CASE("badloss_scores: zero distance to a coinciding probe") {
    const TrajectoryMatrix m = matrix_of({{0, {1.0f, 2.0f}}, {1, {1.0f, 2.0f}}});
    const AnomalyScores s = badloss_scores(m, clean_probes({0}), 1);
    CHECK(s.score[1] == 0.0f);
    CHECK(s.log_score[1] == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("badloss_scores: probes are scored against the other probes, self excluded") {
    const TrajectoryMatrix m = matrix_of({{0, {0.0f}}, {1, {1.0f}}, {2, {5.0f}}});
    const AnomalyScores s = badloss_scores(m, clean_probes({0, 1}), 1);
    // Probe 0's nearest peer is probe 1 (distance 1), not itself (0).
    CHECK(s.score[0] == 1.0f);
    CHECK(s.score[1] == 1.0f);
    CHECK(s.score[2] == 4.0f);  // |5-1|
}

TEST_CASE("badloss_scores: exact agreement with brute-force selection, k in {1,5,20}") {
    const TrajectoryMatrix m = random_matrix(200, 30, 7001);
    std::vector<int> probe_ids;
    for (int i = 0; i < 20; ++i) probe_ids.push_back(i * 10);  // 0,10,...,190

    std::vector<std::pair<int, const float*>> probe_rows;
    for (int id : probe_ids) probe_rows.emplace_back(id, m.row(id));  // ids are row indices

    for (int k : {1, 5, 20}) {
        const AnomalyScores s = badloss_scores(m, clean_probes(probe_ids), k);
        for (int r = 0; r < m.rows(); ++r) {
            const float expect = test_oracles::oracle_knn_mean(
                m.row(r), m.cols(), probe_rows, k, m.example_ids[r]);
            CHECK(s.score[r] == expect);  // bitwise equality
        }
    }
}

TEST_CASE("badloss_scores: precondition violations") {
    const TrajectoryMatrix m = matrix_of({{0, {0.0f}}, {1, {1.0f}}});
    CHECK_THROWS_AS(badloss_scores(m, clean_probes({0}), 2), RejectedInputError);   // k > |Dc|
    CHECK_THROWS_AS(badloss_scores(m, clean_probes({0}), 0), RejectedInputError);
    CHECK_THROWS_AS(badloss_scores(m, clean_probes({9}), 1), RejectedInputError);   // missing id
    CHECK_THROWS_AS(badloss_scores(m, clean_probes({}), 1), RejectedInputError);    // empty

    ProbeSet variant;
    variant.variant_mode = true;
    variant.p1 = {0};
    variant.p2 = {1};
    variant.p3 = {2};
    CHECK_THROWS_AS(badloss_scores(m, variant, 1), RejectedInputError);
}

// ---------------------------------------------------------------------------
// select_rejections
// ---------------------------------------------------------------------------

TEST_CASE("select_rejections: worked examples") {
    CHECK(select_rejections(scores_of({{1, 1.0f}, {2, 2.0f}, {3, 3.0f}}), 0.0).empty());

    // ceil(1/3 * 3) = 1: only the top score goes.
    CHECK(select_rejections(scores_of({{1, 1.0f}, {2, 2.0f}, {3, 3.0f}}), 1.0 / 3.0) ==
          std::vector<int>{3});

    CHECK_THROWS_AS(select_rejections(scores_of({{1, 1.0f}}), 1.0), RejectedInputError);
    CHECK_THROWS_AS(select_rejections(scores_of({{1, 1.0f}}), -0.1), RejectedInputError);
}

TEST_CASE("select_rejections: all-equal scores keep the lowest-id half") {
    const AnomalyScores s =
        scores_of({{4, 1.0f}, {1, 1.0f}, {3, 1.0f}, {2, 1.0f}});  // unsorted ids on purpose
    const auto rejected = select_rejections(s, 0.5);
    CHECK(rejected == std::vector<int>{3, 4});  // ties resolved toward keeping low ids

    // Deterministic across repeated calls.
    CHECK(select_rejections(s, 0.5) == rejected);
}

TEST_CASE("select_rejections: rejected count is ceil(r * candidates)") {
    std::vector<std::pair<int, float>> entries;
    for (int i = 0; i < 10; ++i) entries.push_back({i, static_cast<float>(i)});
    const AnomalyScores s = scores_of(entries);
    CHECK(select_rejections(s, 0.25).size() == 3);  // ceil(2.5)
    CHECK(select_rejections(s, 0.4).size() == 4);
    CHECK(select_rejections(s, 0.91).size() == 10);  // ceil(9.1) = 10 of 10
}

TEST_CASE("select_rejections: probes are never rejected") {
    // Probe id 5 carries the largest score but is immune.
    const AnomalyScores s =
        scores_of({{1, 1.0f}, {2, 2.0f}, {5, 99.0f}}, /*probe_ids=*/{5});
    const auto rejected = select_rejections(s, 0.5);  // ceil(0.5*2)=1 of the 2 candidates
    CHECK(rejected == std::vector<int>{2});
}

TEST_CASE("select_rejections: nesting property on randomized inputs") {
    SplitMix64 rng(7002);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::pair<int, float>> entries;
        const int n = 5 + static_cast<int>(rng.next_below(50));
        for (int i = 0; i < n; ++i)
            entries.push_back({i, static_cast<float>(rng.next_below(8))});  // many ties
        const AnomalyScores s = scores_of(entries);
        const double r1 = rng.next_double() * 0.9;
        const double r2 = r1 + (0.99 - r1) * rng.next_double();
        const auto rej1 = select_rejections(s, r1);
        const auto rej2 = select_rejections(s, r2);
        CHECK(std::includes(rej2.begin(), rej2.end(), rej1.begin(), rej1.end()));
    }
}

TEST_CASE("ranking invariance: mean-distance scores and log scores reject the same set") {
    SplitMix64 rng(7003);
    for (int trial = 0; trial < 100; ++trial) {
        const TrajectoryMatrix m = random_matrix(60, 10, 8000 + trial);
        const std::vector<int> probe_ids = {0, 1, 2, 3, 4};
        const AnomalyScores s = badloss_scores(m, clean_probes(probe_ids), 3);

        AnomalyScores logged = s;
        logged.score = s.log_score;  // select on log(mean + 1e-12) instead
        const double r = 0.1 + 0.5 * rng.next_double();
        CHECK(select_rejections(s, r) == select_rejections(logged, r));
    }
}

TEST_CASE("scale covariance: doubling every trajectory doubles scores exactly") {
    const TrajectoryMatrix m = random_matrix(80, 12, 7004);
    const std::vector<int> probe_ids = {0, 1, 2, 3, 4, 5};
    const AnomalyScores base = badloss_scores(m, clean_probes(probe_ids), 4);

    TrajectoryMatrix doubled = m;
    for (float& v : doubled.losses) v *= 2.0f;
    const AnomalyScores twice = badloss_scores(doubled, clean_probes(probe_ids), 4);
    for (int r = 0; r < m.rows(); ++r)
        CHECK(twice.score[r] == 2.0f * base.score[r]);  // exact: power-of-two scaling

    CHECK(select_rejections(base, 0.3) == select_rejections(twice, 0.3));

    // Non-power-of-two factor: covariance within round-off, same rejections.
    TrajectoryMatrix tripled = m;
    for (float& v : tripled.losses) v *= 3.0f;
    const AnomalyScores thrice = badloss_scores(tripled, clean_probes(probe_ids), 4);
    for (int r = 0; r < m.rows(); ++r)
        if (base.score[r] > 0.0f)
            CHECK(thrice.score[r] / base.score[r] == doctest::Approx(3.0).epsilon(1e-5));
    CHECK(select_rejections(base, 0.3) == select_rejections(thrice, 0.3));
}

// ---------------------------------------------------------------------------
// build_probe_sets
// ---------------------------------------------------------------------------

namespace {

AttackSpec reference_patch(int target = 1) {
    AttackSpec s;
    s.kind = AttackKind::Patch;
    s.target_class = target;
    s.ratio = 0.05;
    s.seed = 31;
    return s;
}

}  // namespace

TEST_CASE("build_probe_sets: sizes, disjointness, in-place dataset update") {
    ImageDataset ds = make_synthetic(4, 20, 8, 8, 91);  // 80 examples
    const ImageDataset original = ds;
    std::vector<int> clean = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};  // |C| = 2n = 10

    const ProbeSet probes = build_probe_sets(ds, clean, reference_patch(), 17);
    probes.check_invariants();
    CHECK(probes.variant_mode);
    CHECK(probes.p1.size() == 5);
    CHECK(probes.p2.size() == 5);
    CHECK(probes.p3.size() == 5);

    // P1 and P2 partition C; P3 is drawn outside C. All pairwise disjoint.
    std::set<int> all;
    for (const auto* v : {&probes.p1, &probes.p2, &probes.p3})
        for (int id : *v) CHECK(all.insert(id).second);
    std::set<int> c_set(clean.begin(), clean.end());
    for (int id : probes.p1) CHECK(c_set.count(id) == 1);
    for (int id : probes.p2) CHECK(c_set.count(id) == 1);
    for (int id : probes.p3) CHECK(c_set.count(id) == 0);

    // P1 rows untouched.
    for (int id : probes.p1) {
        const int row = ds.index_of(id);
        CHECK(ds.labels[row] == original.labels[row]);
        for (size_t p = 0; p < ds.image_len(); ++p)
            CHECK(ds.image(row)[p] == original.image(row)[p]);
    }

    // P2 rows transformed exactly per the reference attack's apply op.
    for (int id : probes.p2) {
        const int row = ds.index_of(id);
        CHECK(ds.labels[row] == 1);  // retargeted
        Tensor4 expect(1, 3, 8, 8);
        std::copy(original.image(row), original.image(row) + original.image_len(),
                  expect.data.begin());
        apply_attack(expect, reference_patch(), Tensor4());
        for (size_t p = 0; p < ds.image_len(); ++p)
            CHECK(ds.image(row)[p] == expect.data[p]);
    }

    // P3 rows: every label re-drawn to a wrong one, image untouched.
    for (int id : probes.p3) {
        const int row = ds.index_of(id);
        CHECK(ds.labels[row] != original.labels[row]);
        CHECK(ds.labels[row] >= 0);
        CHECK(ds.labels[row] < 4);
        for (size_t p = 0; p < ds.image_len(); ++p)
            CHECK(ds.image(row)[p] == original.image(row)[p]);
    }
}

TEST_CASE("build_probe_sets: n=1 minimal case") {
    ImageDataset ds = make_synthetic(2, 4, 8, 8, 92);  // 8 examples
    const ProbeSet probes = build_probe_sets(ds, {0, 1}, reference_patch(0), 18);
    CHECK(probes.p1.size() == 1);
    CHECK(probes.p2.size() == 1);
    CHECK(probes.p3.size() == 1);
}

TEST_CASE("build_probe_sets: clean-label reference keeps P2 labels") {
    ImageDataset ds = make_synthetic(4, 20, 8, 8, 93);
    const ImageDataset original = ds;
    AttackSpec sin_ref;
    sin_ref.kind = AttackKind::Sinusoid;
    sin_ref.target_class = 2;
    sin_ref.ratio = 0.05;
    const ProbeSet probes = build_probe_sets(ds, {0, 1, 2, 3, 4, 5}, sin_ref, 19);
    for (int id : probes.p2) {
        const int row = ds.index_of(id);
        CHECK(ds.labels[row] == original.labels[row]);  // labels preserved
        bool changed = false;
        for (size_t p = 0; p < ds.image_len(); ++p)
            if (ds.image(row)[p] != original.image(row)[p]) changed = true;
        CHECK(changed);  // image carries the trigger
    }
}

TEST_CASE("build_probe_sets: determinism and input validation") {
    const ImageDataset base = make_synthetic(4, 20, 8, 8, 94);
    ImageDataset a = base, b = base;
    const ProbeSet pa = build_probe_sets(a, {0, 1, 2, 3}, reference_patch(), 5);
    const ProbeSet pb = build_probe_sets(b, {0, 1, 2, 3}, reference_patch(), 5);
    CHECK(pa.p1 == pb.p1);
    CHECK(pa.p2 == pb.p2);
    CHECK(pa.p3 == pb.p3);
    CHECK(a.labels == b.labels);
    CHECK(a.images.data == b.images.data);

    ImageDataset c = base;
    CHECK_THROWS_AS(build_probe_sets(c, {0, 1, 2}, reference_patch(), 5),
                    RejectedInputError);  // odd |C|

    ImageDataset tiny = make_synthetic(2, 2, 8, 8, 95);  // 4 examples
    CHECK_THROWS_AS(build_probe_sets(tiny, {0, 1, 2, 3}, reference_patch(0), 5),
                    RejectedInputError);  // no ids left for P3
}

TEST_CASE("build_probe_sets: P3 labels exhaust no wrong-label option") {
    // Over many seeds every P3 relabel must be wrong, and in a 2-class
    // dataset the wrong label is forced, making mistakes visible.
    for (uint64_t seed = 0; seed < 30; ++seed) {
        ImageDataset ds = make_synthetic(2, 10, 8, 8, 96 + seed);
        const std::vector<int> before = ds.labels;
        const ProbeSet probes = build_probe_sets(ds, {0, 1, 2, 3}, reference_patch(0), seed);
        for (int id : probes.p3) {
            const int row = ds.index_of(id);
            CHECK(ds.labels[row] == 1 - before[row]);  // the only wrong label
        }
    }
}

// ---------------------------------------------------------------------------
// knn_vote_classify
// ---------------------------------------------------------------------------

namespace {

// Probe trajectories at ids 0 (P1), 1 (P2), 2 (P3).
ProbeSet toy_variant_probes() {
    ProbeSet p;
    p.variant_mode = true;
    p.p1 = {0};
    p.p2 = {1};
    p.p3 = {2};
    return p;
}

}  // namespace

TEST_CASE("knn_vote_classify: worked examples") {
    const TrajectoryMatrix m = matrix_of({{0, {0.0f, 0.0f}},
                                          {1, {10.0f, 10.0f}},
                                          {2, {20.0f, 20.0f}},
                                          {5, {0.0f, 0.0f}},      // coincides with P1
                                          {6, {10.1f, 10.0f}},    // nearest is P2
                                          {7, {14.0f, 14.0f}}});  // k=3: P2,P3 closer than P1
    const ProbeSet probes = toy_variant_probes();

    // k=1, t=0.5: id 5 votes clean, id 6 votes backdoored.
    const auto rejected1 = knn_vote_classify(m, probes, 1, 0.5);
    CHECK(std::find(rejected1.begin(), rejected1.end(), 5) == rejected1.end());
    CHECK(std::find(rejected1.begin(), rejected1.end(), 6) != rejected1.end());

    // k=3, t=0.5: all ids face neighbors {P1,P2,P3} -> 2/3 > 0.5, all rejected.
    const auto rejected3 = knn_vote_classify(m, probes, 3, 0.5);
    CHECK(rejected3 == std::vector<int>{5, 6, 7});

    // t=1.0: a fraction can never exceed 1, nothing is rejected.
    CHECK(knn_vote_classify(m, probes, 3, 1.0).empty());

    // Probes themselves are never in the output.
    for (int id : rejected3) CHECK(id > 2);
}

TEST_CASE("knn_vote_classify: agreement with a brute-force vote on random data") {
    const TrajectoryMatrix m = random_matrix(115, 8, 7005);
    ProbeSet probes;
    probes.variant_mode = true;
    for (int i = 0; i < 5; ++i) probes.p1.push_back(i);
    for (int i = 5; i < 10; ++i) probes.p2.push_back(i);
    for (int i = 10; i < 15; ++i) probes.p3.push_back(i);

    for (const int k : {1, 4, 15}) {
        const double t = 0.5;
        const auto rejected = knn_vote_classify(m, probes, k, t);

        // Independent vote: full sort of (distance, probe id) pairs.
        std::vector<int> expect;
        for (int r = 15; r < m.rows(); ++r) {
            std::vector<std::pair<double, int>> dists;
            for (int p = 0; p < 15; ++p) {
                double s = 0.0;
                for (int ccc = 0; ccc < m.cols(); ++ccc) {
                    const double d = static_cast<double>(m.at(r, ccc)) - m.at(p, ccc);
                    s += d * d;
                }
                dists.emplace_back(std::sqrt(s), p);
            }
            std::sort(dists.begin(), dists.end());
            int anomalous = 0;
            for (int i = 0; i < k; ++i)
                if (dists[i].second >= 5) ++anomalous;  // P2 and P3 rows
            if (static_cast<double>(anomalous) / k > t) expect.push_back(m.example_ids[r]);
        }
        CHECK(rejected == expect);
    }
}

TEST_CASE("knn_vote_classify: input validation") {
    const TrajectoryMatrix m = matrix_of({{0, {0.0f}}, {1, {1.0f}}, {2, {2.0f}}, {9, {5.0f}}});
    const ProbeSet probes = toy_variant_probes();
    CHECK_THROWS_AS(knn_vote_classify(m, clean_probes({0}), 1, 0.5), RejectedInputError);
    CHECK_THROWS_AS(knn_vote_classify(m, probes, 0, 0.5), RejectedInputError);
    CHECK_THROWS_AS(knn_vote_classify(m, probes, 4, 0.5), RejectedInputError);  // k > probes
    CHECK_THROWS_AS(knn_vote_classify(m, probes, 1, -0.1), RejectedInputError);
    CHECK_THROWS_AS(knn_vote_classify(m, probes, 1, 1.1), RejectedInputError);
}

// ---------------------------------------------------------------------------
// test-time detection
// ---------------------------------------------------------------------------

TEST_CASE("test_time_classify: checkpoint replay and probe vote") {
    TempDir dir("testtime");
    const ImageDataset ds = make_synthetic(2, 8, 8, 8, 97);
    SmallConvNet net(3, 8, 8, 2);
    net.init_he_uniform(55);
    TrainOptions opts;
    opts.epochs = 3;
    opts.batch_size = 8;
    opts.shuffle_seed = 5;
    opts.checkpoint_dir = dir.str();
    const TrainResult result = train_model(net, ds, opts);
    REQUIRE(result.checkpoint_paths.size() == 3);

    // One clean probe (image 0) and one "poisoned" probe (image 1 with a
    // wrong label, making its loss trajectory distinct).
    Tensor4 img0(1, 3, 8, 8), img1(1, 3, 8, 8);
    std::copy(ds.image(0), ds.image(0) + ds.image_len(), img0.data.begin());
    std::copy(ds.image(1), ds.image(1) + ds.image_len(), img1.data.begin());

    SmallConvNet scratch(3, 8, 8, 2);
    TestProbeBank bank;
    bank.trajectories.push_back(
        checkpoint_loss_trajectory(scratch, result.checkpoint_paths, img0, ds.labels[0]));
    bank.trajectories.push_back(checkpoint_loss_trajectory(scratch, result.checkpoint_paths,
                                                           img1, 1 - ds.labels[1]));
    bank.poisoned = {0, 1};
    bank.check_invariants();
    CHECK(bank.trajectories[0].size() == 3);

    // An example identical to the clean probe is classified clean at k=1;
    // one identical to the poisoned probe is classified backdoored.
    CHECK(!test_time_classify(scratch, result.checkpoint_paths, bank, img0, ds.labels[0], 1,
                              0.5));
    CHECK(test_time_classify(scratch, result.checkpoint_paths, bank, img1, 1 - ds.labels[1],
                             1, 0.5));

    // A bank built for a different checkpoint count is rejected.
    TestProbeBank stale;
    stale.trajectories = {{1.0f, 2.0f}};
    stale.poisoned = {1};
    CHECK_THROWS_AS(test_time_classify(scratch, result.checkpoint_paths, stale, img0,
                                       ds.labels[0], 1, 0.5),
                    RejectedInputError);
}

TEST_CASE("test_time_classify: zero checkpoints and dimension mismatches rejected") {
    SmallConvNet net(3, 8, 8, 2);
    Tensor4 img(1, 3, 8, 8, 0.5f);
    TestProbeBank bank;
    bank.trajectories = {{1.0f, 2.0f}};
    bank.poisoned = {0};
    CHECK_THROWS_AS(test_time_classify(net, {}, bank, img, 0, 1, 0.5), RejectedInputError);

    TestProbeBank empty;
    CHECK_THROWS_AS(empty.check_invariants(), RejectedInputError);

    TestProbeBank ragged;
    ragged.trajectories = {{1.0f, 2.0f}, {1.0f}};
    ragged.poisoned = {0, 1};
    CHECK_THROWS_AS(ragged.check_invariants(), RejectedInputError);
}

// ---------------------------------------------------------------------------
// spectral_signatures_filter
// ---------------------------------------------------------------------------

TEST_CASE("spectral filter: far outlier along the principal direction is rejected") {
    // Seven points near a line through the origin plus one far outlier.
    FeatureMatrix f;
    f.rows = 8;
    f.cols = 2;
    f.data = {0.0f, 0.1f,  1.0f, 0.9f,  2.0f, 2.1f,  3.0f, 2.9f,
              4.0f, 4.1f,  5.0f, 5.0f,  6.0f, 6.1f,  30.0f, 29.0f};
    std::vector<int> ids = {10, 11, 12, 13, 14, 15, 16, 17};
    std::vector<int> labels(8, 0);

    // fraction 1/8 -> ceil(1) = 1 rejection: must be the outlier, id 17.
    const auto rejected = spectral_signatures_filter(f, ids, labels, 1, 1.0 / 8.0);
    CHECK(rejected == std::vector<int>{17});
}

TEST_CASE("spectral filter: scores are invariant to a feature-mean shift") {
    SplitMix64 rng(7006);
    FeatureMatrix f;
    f.rows = 40;
    f.cols = 6;
    f.data.resize(240);
    for (float& v : f.data) v = rng.next_float() * 4.0f;
    std::vector<int> ids(40), labels(40);
    for (int i = 0; i < 40; ++i) {
        ids[i] = i;
        labels[i] = i % 2;
    }
    const auto base = spectral_signatures_filter(f, ids, labels, 2, 0.2);

    FeatureMatrix shifted = f;
    for (int r = 0; r < 40; ++r)
        for (int c = 0; c < 6; ++c) shifted.at(r, c) += 7.5f;
    const auto moved = spectral_signatures_filter(shifted, ids, labels, 2, 0.2);
    CHECK(base == moved);
}

TEST_CASE("spectral filter: power-iteration direction matches a Jacobi eigensolver") {
    SplitMix64 rng(7007);
    const int n = 50, d = 8;
    // Anisotropic cloud so the top eigenvalue is well separated.
    std::vector<double> centered(n * d);
    std::vector<double> direction(d);
    for (double& v : direction) v = rng.next_gaussian();
    for (int i = 0; i < n; ++i) {
        const double along = 5.0 * rng.next_gaussian();
        for (int c = 0; c < d; ++c)
            centered[static_cast<size_t>(i) * d + c] =
                along * direction[c] + 0.3 * rng.next_gaussian();
    }
    // Center exactly.
    for (int c = 0; c < d; ++c) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += centered[static_cast<size_t>(i) * d + c];
        mean /= n;
        for (int i = 0; i < n; ++i) centered[static_cast<size_t>(i) * d + c] -= mean;
    }

    const std::vector<double> v = dominant_scatter_direction(centered, n, d);

    // Scatter matrix for the oracle.
    std::vector<double> scatter(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                scatter[static_cast<size_t>(a) * d + b] +=
                    centered[static_cast<size_t>(i) * d + a] *
                    centered[static_cast<size_t>(i) * d + b];
    std::vector<double> vectors;
    test_oracles::jacobi_eigen(scatter, d, vectors);
    std::vector<double> top(d);
    for (int r = 0; r < d; ++r) top[r] = vectors[static_cast<size_t>(r) * d + 0];

    CHECK(test_oracles::abs_cosine(v, top) > 1.0 - 1e-6);
}

TEST_CASE("spectral filter: probe exemption, degenerate class, per-class counts") {
    FeatureMatrix f;
    f.rows = 6;
    f.cols = 2;
    f.data = {0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 50, 50};
    std::vector<int> ids = {0, 1, 2, 3, 4, 5};
    std::vector<int> labels(6, 0);

    // The outlier id 5 is a probe: exempt before centering, so the direction
    // is fit to the five collinear points and the extreme end (id 4) goes.
    const auto rejected = spectral_signatures_filter(f, ids, labels, 1, 0.2, {5});
    CHECK(rejected == std::vector<int>{4});  // ceil(0.2*5) = 1; ties kept low ids

    // Identical rows: all scores zero, tie rule rejects the highest ids.
    FeatureMatrix same;
    same.rows = 4;
    same.cols = 2;
    same.data = {1, 1, 1, 1, 1, 1, 1, 1};
    std::vector<int> ids2 = {7, 3, 9, 1};
    std::vector<int> labels2(4, 0);
    const auto tied = spectral_signatures_filter(same, ids2, labels2, 1, 0.5);
    CHECK(tied == std::vector<int>{7, 9});  // ceil(2) highest ids among {1,3,7,9}

    // Rejection counts are per class: ceil(0.3*4) + ceil(0.3*2) = 2 + 1.
    std::vector<int> labels3 = {0, 0, 0, 0, 1, 1};
    const auto split_classes = spectral_signatures_filter(f, ids, labels3, 2, 0.3);
    CHECK(split_classes.size() == 3);

    // A singleton class is skipped entirely: only class 0 contributes.
    std::vector<int> labels4 = {0, 0, 0, 0, 0, 1};
    const auto with_singleton = spectral_signatures_filter(f, ids, labels4, 2, 0.3);
    CHECK(with_singleton.size() == 2);  // ceil(0.3*5)
    CHECK(std::find(with_singleton.begin(), with_singleton.end(), 5) ==
          with_singleton.end());

    CHECK_THROWS_AS(spectral_signatures_filter(f, ids, labels, 1, 1.0), RejectedInputError);
    CHECK_THROWS_AS(spectral_signatures_filter(f, ids, labels, 1, -0.1), RejectedInputError);
    std::vector<int> short_ids = {0, 1};
    CHECK_THROWS_AS(spectral_signatures_filter(f, short_ids, labels, 1, 0.2),
                    RejectedInputError);
}

// ---------------------------------------------------------------------------
// loss_rank_filter
// ---------------------------------------------------------------------------

TEST_CASE("loss_rank_filter: worked examples") {
    const TrajectoryMatrix m =
        matrix_of({{1, {0.5f, 0.1f}}, {2, {0.5f, 5.0f}}, {3, {0.5f, 9.0f}}});

    CHECK(loss_rank_filter(m, 1, 0.0).empty());
    // fraction 1/3 at epoch 1: lowest loss is id 1.
    CHECK(loss_rank_filter(m, 1, 1.0 / 3.0) == std::vector<int>{1});
    // At epoch 0 all losses tie: lowest id is taken.
    CHECK(loss_rank_filter(m, 0, 1.0 / 3.0) == std::vector<int>{1});

    CHECK_THROWS_AS(loss_rank_filter(m, 2, 0.1), RejectedInputError);  // not a kept epoch
    CHECK_THROWS_AS(loss_rank_filter(m, 1, 1.0), RejectedInputError);
}

TEST_CASE("loss_rank_filter: cut epoch refers to the epoch index, not the column") {
    TrajectoryMatrix m = matrix_of({{1, {0.9f, 0.1f}}, {2, {0.1f, 0.9f}}});
    m.kept_epoch_indices = {0, 5};  // epoch 5 lives in column 1
    CHECK(loss_rank_filter(m, 5, 0.5) == std::vector<int>{1});  // id 1 lowest at epoch 5
    CHECK(loss_rank_filter(m, 0, 0.5) == std::vector<int>{2});
}

TEST_CASE("loss_rank_filter: probes exempt; sorting oracle on 1000 random losses") {
    TrajectoryMatrix m = random_matrix(1000, 3, 7008);
    const std::vector<int> probe_ids = {5, 17, 400};
    const double fraction = 0.15;
    const auto rejected = loss_rank_filter(m, 1, fraction, probe_ids);

    // Oracle: sort (loss at epoch 1, id) ascending over non-probes, take the
    // lowest ceil(fraction * n).
    std::vector<std::pair<float, int>> order;
    for (int r = 0; r < m.rows(); ++r) {
        const int id = m.example_ids[r];
        if (id == 5 || id == 17 || id == 400) continue;
        order.emplace_back(m.at(r, 1), id);
    }
    std::sort(order.begin(), order.end());
    const size_t count = static_cast<size_t>(std::ceil(fraction * order.size()));
    std::vector<int> expect;
    for (size_t i = 0; i < count; ++i) expect.push_back(order[i].second);
    std::sort(expect.begin(), expect.end());
    CHECK(rejected == expect);
}
