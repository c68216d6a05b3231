#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace poisonlab {

// Per-example loss matrix over the epochs that survived the spike filter.
// Rows follow `example_ids`; columns follow `kept_epoch_indices`.
struct TrajectoryMatrix {
    std::vector<int> example_ids;
    std::vector<int> kept_epoch_indices;
    std::vector<float> losses;  // row-major, rows() x cols()

    int rows() const { return static_cast<int>(example_ids.size()); }
    int cols() const { return static_cast<int>(kept_epoch_indices.size()); }

    float at(int row, int col) const {
        return losses[static_cast<size_t>(row) * cols() + col];
    }
    float& at(int row, int col) {
        return losses[static_cast<size_t>(row) * cols() + col];
    }
    const float* row(int r) const { return losses.data() + static_cast<size_t>(r) * cols(); }

    // Throws RejectedInputError if the shape bookkeeping or value
    // constraints (finite, >= 0) are violated.
    void check_invariants() const;
};

// Epoch bookkeeping for the spike filter: `kept_averages` is append-only
// and feeds the moving-average threshold; a rejected epoch contributes
// nothing to it.
struct EpochFilterState {
    std::vector<double> kept_averages;
    std::vector<int> kept_epochs;
    std::vector<int> rejected_epochs;
    std::vector<double> avg_losses;  // every recorded epoch, in call order
};

// Single-writer recorder: feed each epoch's mean loss plus per-example
// losses; spiky epochs are dropped wholesale so every example keeps the
// same epoch set.
class TrajectoryRecorder {
  public:
    explicit TrajectoryRecorder(std::vector<int> example_ids);

    // True iff an epoch with this average loss would survive the filter
    // given the current history. Does not mutate state.
    bool would_keep(double avg_loss) const;

    // Applies the filter; on keep, appends the per-example losses as a new
    // column. Returns whether the epoch was kept. Throws RejectedInputError
    // on a per-example length mismatch.
    bool record_epoch(int epoch_index, double avg_loss, const std::vector<float>& per_example);

    // Builds the matrix. Throws RejectedInputError if no epoch was kept.
    TrajectoryMatrix finalize() const;

    const EpochFilterState& state() const { return state_; }
    const std::vector<int>& example_ids() const { return example_ids_; }

  private:
    std::vector<int> example_ids_;
    EpochFilterState state_;
    std::vector<std::vector<float>> kept_rows_;  // one vector per kept epoch
};

// CSV persistence. Header: "example_id,epoch_<k0>,epoch_<k1>,...";
// floats printed with %.9g so a save -> load -> save cycle is
// byte-identical. Malformed input raises FormatError naming the line.
void save_trajectories_csv(const TrajectoryMatrix& matrix, const std::string& path);
TrajectoryMatrix load_trajectories_csv(const std::string& path);

// Sidecar JSON: {"kept_epochs": [...], "rejected_epochs": [...],
// "avg_losses": [...]}.
void save_epoch_filter_json(const EpochFilterState& state, const std::string& path);
EpochFilterState load_epoch_filter_json(const std::string& path);

}  // namespace poisonlab
