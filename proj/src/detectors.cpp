#include "poisonlab/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "poisonlab/checkpoint.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

namespace {

// Shared distance kernel: double accumulation over float inputs, index
// order fixed, so scores are reproducible bit for bit.
double l2_distance(const float* a, const float* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

std::unordered_map<int, int> row_index_by_id(const TrajectoryMatrix& matrix) {
    std::unordered_map<int, int> idx;
    idx.reserve(matrix.example_ids.size());
    for (int r = 0; r < matrix.rows(); ++r) idx[matrix.example_ids[r]] = r;
    return idx;
}

void require_disjoint(const std::vector<int>& a, const std::vector<int>& b,
                      const char* what) {
    std::unordered_set<int> set(a.begin(), a.end());
    for (const int id : b)
        if (set.count(id))
            throw RejectedInputError(std::string("ProbeSet: ") + what +
                                     " overlap at id " + std::to_string(id));
}

}  // namespace

std::vector<int> ProbeSet::all_probe_ids() const {
    std::vector<int> ids;
    if (variant_mode) {
        ids.reserve(p1.size() + p2.size() + p3.size());
        ids.insert(ids.end(), p1.begin(), p1.end());
        ids.insert(ids.end(), p2.begin(), p2.end());
        ids.insert(ids.end(), p3.begin(), p3.end());
    } else {
        ids = clean_ids;
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

void ProbeSet::check_invariants() const {
    if (variant_mode) {
        if (p1.size() != p2.size() || p2.size() != p3.size())
            throw RejectedInputError("ProbeSet: variant sets must have equal sizes");
        if (p1.empty()) throw RejectedInputError("ProbeSet: variant sets are empty");
        require_disjoint(p1, p2, "p1/p2");
        require_disjoint(p1, p3, "p1/p3");
        require_disjoint(p2, p3, "p2/p3");
    } else {
        if (clean_ids.empty())
            throw RejectedInputError("ProbeSet: clean probe set is empty");
    }
}

AnomalyScores badloss_scores(const TrajectoryMatrix& matrix, const ProbeSet& probes, int k) {
    probes.check_invariants();
    if (probes.variant_mode)
        throw RejectedInputError("badloss_scores: distance mode requires clean probes");
    if (k <= 0) throw RejectedInputError("badloss_scores: k must be positive");
    if (static_cast<size_t>(k) > probes.clean_ids.size())
        throw RejectedInputError("badloss_scores: k=" + std::to_string(k) +
                                 " exceeds clean probe count " +
                                 std::to_string(probes.clean_ids.size()));

    const auto row_of = row_index_by_id(matrix);
    struct ProbeRow {
        int id;
        const float* data;
    };
    std::vector<ProbeRow> probe_rows;
    probe_rows.reserve(probes.clean_ids.size());
    for (const int id : probes.clean_ids) {
        const auto it = row_of.find(id);
        if (it == row_of.end())
            throw RejectedInputError("badloss_scores: probe id " + std::to_string(id) +
                                     " missing from trajectory matrix");
        probe_rows.push_back({id, matrix.row(it->second)});
    }

    const int cols = matrix.cols();
    AnomalyScores out;
    out.example_ids = matrix.example_ids;
    out.k = k;
    out.probe_ids = probes.clean_ids;
    out.score.resize(matrix.rows());
    out.log_score.resize(matrix.rows());

    std::vector<std::pair<double, int>> dists;
    dists.reserve(probe_rows.size());
    for (int r = 0; r < matrix.rows(); ++r) {
        const int id = matrix.example_ids[r];
        const float* row = matrix.row(r);
        dists.clear();
        for (const ProbeRow& p : probe_rows) {
            if (p.id == id) continue;  // a probe never counts itself
            dists.emplace_back(l2_distance(row, p.data, cols), p.id);
        }
        if (dists.empty()) {
            // A lone probe has no peer to measure against; it is the clean
            // anchor itself, so its anomaly is zero.
            out.score[r] = 0.0f;
            out.log_score[r] = static_cast<float>(std::log(1e-12));
            continue;
        }
        std::sort(dists.begin(), dists.end());
        const size_t take = std::min<size_t>(static_cast<size_t>(k), dists.size());
        double sum = 0.0;
        for (size_t i = 0; i < take; ++i) sum += dists[i].first;
        const double mean = sum / static_cast<double>(take);
        out.score[r] = static_cast<float>(mean);
        out.log_score[r] = static_cast<float>(std::log(mean + 1e-12));
    }
    return out;
}

std::vector<int> select_rejections(const AnomalyScores& scores, double r) {
    if (r < 0.0 || r >= 1.0)
        throw RejectedInputError("select_rejections: r must be in [0,1)");
    const std::unordered_set<int> probe(scores.probe_ids.begin(), scores.probe_ids.end());
    struct Cand {
        float score;
        int id;
    };
    std::vector<Cand> cands;
    cands.reserve(scores.example_ids.size());
    for (size_t i = 0; i < scores.example_ids.size(); ++i) {
        const int id = scores.example_ids[i];
        if (probe.count(id)) continue;
        cands.push_back({scores.score[i], id});
    }
    const size_t count =
        static_cast<size_t>(std::ceil(r * static_cast<double>(cands.size())));
    if (count == 0) return {};
    // Ascending (score, id): the rejected tail holds the highest scores, and
    // among ties the highest ids, so the retained half keeps the lowest ids.
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score < b.score;
        return a.id < b.id;
    });
    std::vector<int> rejected;
    rejected.reserve(count);
    for (size_t i = cands.size() - count; i < cands.size(); ++i)
        rejected.push_back(cands[i].id);
    std::sort(rejected.begin(), rejected.end());
    return rejected;
}

ProbeSet build_probe_sets(ImageDataset& ds, const std::vector<int>& clean_ids,
                          const AttackSpec& reference, uint64_t seed) {
    if (clean_ids.empty() || clean_ids.size() % 2 != 0)
        throw RejectedInputError("build_probe_sets: clean id count must be even and > 0");
    reference.validate();
    const size_t n = clean_ids.size() / 2;

    std::vector<int> shuffled = clean_ids;
    SplitMix64 rng(derive_seed(seed, "probe_sets"));
    rng.shuffle(shuffled);

    ProbeSet probes;
    probes.variant_mode = true;
    probes.reference_spec = reference;
    probes.p1.assign(shuffled.begin(), shuffled.begin() + n);
    probes.p2.assign(shuffled.begin() + n, shuffled.end());

    // P3: n more ids drawn from outside the clean pool.
    const std::unordered_set<int> clean_set(clean_ids.begin(), clean_ids.end());
    std::vector<int> pool;
    for (const int id : ds.example_ids)
        if (!clean_set.count(id)) pool.push_back(id);
    if (pool.size() < n)
        throw RejectedInputError("build_probe_sets: need " + std::to_string(n) +
                                 " ids for the mislabeled set, have " +
                                 std::to_string(pool.size()));
    rng.shuffle(pool);
    probes.p3.assign(pool.begin(), pool.begin() + n);

    std::sort(probes.p1.begin(), probes.p1.end());
    std::sort(probes.p2.begin(), probes.p2.end());
    std::sort(probes.p3.begin(), probes.p3.end());

    // Step: apply the reference backdoor to P2 in place.
    Tensor4 trigger;
    if (reference.uses_trigger_image())
        trigger = make_trigger(reference.kind, ds.images.h, ds.images.w, ds.images.c,
                               reference.seed, reference.frequency);
    Tensor4 img(1, ds.images.c, ds.images.h, ds.images.w);
    const size_t len = ds.image_len();
    for (const int id : probes.p2) {
        const int row = ds.index_of(id);
        std::copy(ds.image(row), ds.image(row) + len, img.data.begin());
        apply_attack(img, reference, trigger);
        std::copy(img.data.begin(), img.data.end(), ds.image(row));
        if (!reference.is_clean_label()) ds.labels[row] = reference.target_class;
    }

    // Step: re-draw P3 labels so every one of them is wrong.
    if (ds.num_classes < 2)
        throw RejectedInputError("build_probe_sets: need >= 2 classes to mislabel");
    for (const int id : probes.p3) {
        const int row = ds.index_of(id);
        const int orig = ds.labels[row];
        int drawn = static_cast<int>(rng.next_below(static_cast<uint64_t>(ds.num_classes - 1)));
        if (drawn >= orig) ++drawn;
        ds.labels[row] = drawn;
    }

    probes.check_invariants();
    return probes;
}

std::vector<int> knn_vote_classify(const TrajectoryMatrix& matrix, const ProbeSet& probes,
                                   int k, double t) {
    probes.check_invariants();
    if (!probes.variant_mode)
        throw RejectedInputError("knn_vote_classify: variant probe sets required");
    if (t < 0.0 || t > 1.0)
        throw RejectedInputError("knn_vote_classify: t must be in [0,1]");
    const size_t total = probes.p1.size() + probes.p2.size() + probes.p3.size();
    if (k <= 0 || static_cast<size_t>(k) > total)
        throw RejectedInputError("knn_vote_classify: k must be in [1, probe count]");

    const auto row_of = row_index_by_id(matrix);
    struct ProbeRow {
        int id;
        const float* data;
        bool anomalous;  // from P2 or P3
    };
    std::vector<ProbeRow> probe_rows;
    probe_rows.reserve(total);
    const auto add_rows = [&](const std::vector<int>& ids, bool anomalous) {
        for (const int id : ids) {
            const auto it = row_of.find(id);
            if (it == row_of.end())
                throw RejectedInputError("knn_vote_classify: probe id " + std::to_string(id) +
                                         " missing from trajectory matrix");
            probe_rows.push_back({id, matrix.row(it->second), anomalous});
        }
    };
    add_rows(probes.p1, false);
    add_rows(probes.p2, true);
    add_rows(probes.p3, true);

    std::unordered_set<int> probe_ids;
    std::unordered_map<int, bool> anomalous_by_id;
    for (const ProbeRow& p : probe_rows) {
        probe_ids.insert(p.id);
        anomalous_by_id[p.id] = p.anomalous;
    }

    const int cols = matrix.cols();
    std::vector<int> rejected;
    std::vector<std::pair<double, int>> dists;  // (distance, probe id)
    dists.reserve(probe_rows.size());
    for (int r = 0; r < matrix.rows(); ++r) {
        const int id = matrix.example_ids[r];
        if (probe_ids.count(id)) continue;
        const float* row = matrix.row(r);
        dists.clear();
        for (const ProbeRow& p : probe_rows)
            dists.emplace_back(l2_distance(row, p.data, cols), p.id);
        std::sort(dists.begin(), dists.end());
        int anomalous = 0;
        for (int i = 0; i < k; ++i)
            if (anomalous_by_id.at(dists[i].second)) ++anomalous;
        const double fraction = static_cast<double>(anomalous) / static_cast<double>(k);
        if (fraction > t) rejected.push_back(id);
    }
    std::sort(rejected.begin(), rejected.end());
    return rejected;
}

void TestProbeBank::check_invariants() const {
    if (trajectories.size() != poisoned.size())
        throw RejectedInputError("TestProbeBank: flag count does not match trajectories");
    if (trajectories.empty()) throw RejectedInputError("TestProbeBank: empty");
    const size_t dim = trajectories.front().size();
    for (const auto& t : trajectories)
        if (t.size() != dim)
            throw RejectedInputError("TestProbeBank: ragged trajectory dimensions");
}

std::vector<float> checkpoint_loss_trajectory(SmallConvNet& net,
                                              const std::vector<std::string>& checkpoint_paths,
                                              const Tensor4& image, int label) {
    if (checkpoint_paths.empty())
        throw RejectedInputError("checkpoint_loss_trajectory: no checkpoints");
    std::vector<float> traj;
    traj.reserve(checkpoint_paths.size());
    for (const std::string& path : checkpoint_paths) {
        load_checkpoint(net, path);
        traj.push_back(per_example_losses(net, image, {label}).front());
    }
    return traj;
}

bool test_time_classify(SmallConvNet& net, const std::vector<std::string>& checkpoint_paths,
                        const TestProbeBank& bank, const Tensor4& image, int label, int k,
                        double t) {
    bank.check_invariants();
    if (k <= 0 || static_cast<size_t>(k) > bank.trajectories.size())
        throw RejectedInputError("test_time_classify: k must be in [1, probe count]");
    if (t < 0.0 || t > 1.0)
        throw RejectedInputError("test_time_classify: t must be in [0,1]");
    const std::vector<float> traj =
        checkpoint_loss_trajectory(net, checkpoint_paths, image, label);
    if (traj.size() != bank.trajectories.front().size())
        throw RejectedInputError("test_time_classify: checkpoint count does not match bank");

    std::vector<std::pair<double, int>> dists;
    dists.reserve(bank.trajectories.size());
    for (size_t p = 0; p < bank.trajectories.size(); ++p)
        dists.emplace_back(l2_distance(traj.data(), bank.trajectories[p].data(),
                                       static_cast<int>(traj.size())),
                           static_cast<int>(p));
    std::sort(dists.begin(), dists.end());
    int anomalous = 0;
    for (int i = 0; i < k; ++i)
        if (bank.poisoned[dists[i].second]) ++anomalous;
    return static_cast<double>(anomalous) / static_cast<double>(k) > t;
}

namespace {

// Top eigenvector of the (d x d) covariance-style matrix by power iteration,
// deterministic start, 1e-12 convergence, hard cap on iterations.
std::vector<double> power_iteration_top(const std::vector<double>& m, int d) {
    std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<double> next(d);
    for (int iter = 0; iter < 500; ++iter) {
        for (int i = 0; i < d; ++i) {
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += m[static_cast<size_t>(i) * d + j] * v[j];
            next[i] = s;
        }
        double norm = 0.0;
        for (const double x : next) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) return v;  // degenerate matrix: any direction works
        double delta = 0.0;
        for (int i = 0; i < d; ++i) {
            next[i] /= norm;
            delta = std::max(delta, std::abs(std::abs(next[i]) - std::abs(v[i])));
        }
        v.swap(next);
        if (delta < 1e-12) break;
    }
    return v;
}

}  // namespace

std::vector<double> dominant_scatter_direction(const std::vector<double>& centered_rows,
                                               int n_rows, int dim) {
    if (n_rows <= 0 || dim <= 0 ||
        centered_rows.size() != static_cast<size_t>(n_rows) * dim)
        throw RejectedInputError("dominant_scatter_direction: bad row data");
    std::vector<double> scatter(static_cast<size_t>(dim) * dim, 0.0);
    for (int i = 0; i < n_rows; ++i)
        for (int a = 0; a < dim; ++a) {
            const double xa = centered_rows[static_cast<size_t>(i) * dim + a];
            if (xa == 0.0) continue;
            for (int b = 0; b < dim; ++b)
                scatter[static_cast<size_t>(a) * dim + b] +=
                    xa * centered_rows[static_cast<size_t>(i) * dim + b];
        }
    return power_iteration_top(scatter, dim);
}

std::vector<int> spectral_signatures_filter(const FeatureMatrix& features,
                                            const std::vector<int>& example_ids,
                                            const std::vector<int>& labels, int num_classes,
                                            double fraction,
                                            const std::vector<int>& probe_ids) {
    if (features.rows != static_cast<int>(example_ids.size()) ||
        features.rows != static_cast<int>(labels.size()))
        throw RejectedInputError("spectral_signatures_filter: row count mismatch");
    if (fraction < 0.0 || fraction >= 1.0)
        throw RejectedInputError("spectral_signatures_filter: fraction must be in [0,1)");
    const std::unordered_set<int> probe(probe_ids.begin(), probe_ids.end());
    const int d = features.cols;

    std::vector<int> rejected;
    for (int cls = 0; cls < num_classes; ++cls) {
        std::vector<int> rows;
        for (int r = 0; r < features.rows; ++r)
            if (labels[r] == cls && !probe.count(example_ids[r])) rows.push_back(r);
        if (rows.size() < 2) continue;

        std::vector<double> mean(d, 0.0);
        for (const int r : rows)
            for (int c = 0; c < d; ++c) mean[c] += features.at(r, c);
        for (double& m : mean) m /= static_cast<double>(rows.size());

        // Centered rows, then the top scatter direction.
        std::vector<double> centered(rows.size() * static_cast<size_t>(d));
        for (size_t i = 0; i < rows.size(); ++i)
            for (int c = 0; c < d; ++c)
                centered[i * d + c] = features.at(rows[i], c) - mean[c];

        const std::vector<double> v =
            dominant_scatter_direction(centered, static_cast<int>(rows.size()), d);

        struct Cand {
            double score;
            int id;
        };
        std::vector<Cand> cands;
        cands.reserve(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            double proj = 0.0;
            for (int c = 0; c < d; ++c) proj += centered[i * d + c] * v[c];
            cands.push_back({proj * proj, example_ids[rows[i]]});
        }
        const size_t count =
            static_cast<size_t>(std::ceil(fraction * static_cast<double>(cands.size())));
        if (count == 0) continue;
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score < b.score;
            return a.id < b.id;
        });
        for (size_t i = cands.size() - count; i < cands.size(); ++i)
            rejected.push_back(cands[i].id);
    }
    std::sort(rejected.begin(), rejected.end());
    return rejected;
}

std::vector<int> loss_rank_filter(const TrajectoryMatrix& matrix, int cut_epoch,
                                  double fraction, const std::vector<int>& probe_ids) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw RejectedInputError("loss_rank_filter: fraction must be in [0,1)");
    const auto it = std::find(matrix.kept_epoch_indices.begin(),
                              matrix.kept_epoch_indices.end(), cut_epoch);
    if (it == matrix.kept_epoch_indices.end())
        throw RejectedInputError("loss_rank_filter: cut epoch " + std::to_string(cut_epoch) +
                                 " is not a kept epoch");
    const int col = static_cast<int>(it - matrix.kept_epoch_indices.begin());
    const std::unordered_set<int> probe(probe_ids.begin(), probe_ids.end());

    struct Cand {
        float loss;
        int id;
    };
    std::vector<Cand> cands;
    for (int r = 0; r < matrix.rows(); ++r) {
        const int id = matrix.example_ids[r];
        if (probe.count(id)) continue;
        cands.push_back({matrix.at(r, col), id});
    }
    const size_t count =
        static_cast<size_t>(std::ceil(fraction * static_cast<double>(cands.size())));
    if (count == 0) return {};
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.loss != b.loss) return a.loss < b.loss;
        return a.id < b.id;
    });
    std::vector<int> rejected;
    rejected.reserve(count);
    for (size_t i = 0; i < count; ++i) rejected.push_back(cands[i].id);
    std::sort(rejected.begin(), rejected.end());
    return rejected;
}

}  // namespace poisonlab
