#include "poisonlab/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "poisonlab/errors.hpp"

namespace poisonlab {

void TrajectoryMatrix::check_invariants() const {
    if (losses.size() != static_cast<size_t>(rows()) * cols())
        throw RejectedInputError("TrajectoryMatrix: losses size does not match rows*cols");
    for (size_t i = 1; i < kept_epoch_indices.size(); ++i)
        if (kept_epoch_indices[i] <= kept_epoch_indices[i - 1])
            throw RejectedInputError("TrajectoryMatrix: kept epochs not strictly increasing");
    for (const float v : losses)
        if (!std::isfinite(v) || v < 0.0f)
            throw RejectedInputError("TrajectoryMatrix: loss entries must be finite and >= 0");
}

TrajectoryRecorder::TrajectoryRecorder(std::vector<int> example_ids)
    : example_ids_(std::move(example_ids)) {
    if (example_ids_.empty())
        throw RejectedInputError("TrajectoryRecorder: no example ids");
}

bool TrajectoryRecorder::would_keep(double avg_loss) const {
    const auto& a = state_.kept_averages;
    if (a.empty()) return true;  // first epoch is always kept
    const size_t window = std::min<size_t>(3, a.size());
    double sum = 0.0;
    for (size_t i = a.size() - window; i < a.size(); ++i) sum += a[i];
    const double moving_avg = sum / static_cast<double>(window);
    return !(avg_loss > 2.0 * moving_avg);
}

bool TrajectoryRecorder::record_epoch(int epoch_index, double avg_loss,
                                      const std::vector<float>& per_example) {
    if (per_example.size() != example_ids_.size())
        throw RejectedInputError("record_epoch: per-example loss count " +
                                 std::to_string(per_example.size()) + " does not match " +
                                 std::to_string(example_ids_.size()) + " examples");
    state_.avg_losses.push_back(avg_loss);
    if (!would_keep(avg_loss)) {
        state_.rejected_epochs.push_back(epoch_index);
        return false;
    }
    state_.kept_averages.push_back(avg_loss);
    state_.kept_epochs.push_back(epoch_index);
    kept_rows_.push_back(per_example);
    return true;
}

TrajectoryMatrix TrajectoryRecorder::finalize() const {
    if (kept_rows_.empty())
        throw RejectedInputError("finalize: every epoch was rejected; no trajectory to build");
    TrajectoryMatrix m;
    m.example_ids = example_ids_;
    m.kept_epoch_indices = state_.kept_epochs;
    const int n = m.rows(), e = m.cols();
    m.losses.resize(static_cast<size_t>(n) * e);
    for (int col = 0; col < e; ++col)
        for (int row = 0; row < n; ++row) m.at(row, col) = kept_rows_[col][row];
    m.check_invariants();
    return m;
}

namespace {

std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

}  // namespace

void save_trajectories_csv(const TrajectoryMatrix& matrix, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "example_id";
    for (const int k : matrix.kept_epoch_indices) out << ",epoch_" << k;
    out << "\n";
    for (int r = 0; r < matrix.rows(); ++r) {
        out << matrix.example_ids[r];
        for (int c = 0; c < matrix.cols(); ++c) out << ',' << format_float(matrix.at(r, c));
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (const char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

TrajectoryMatrix load_trajectories_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("trajectory csv line 1: missing header");
    const std::vector<std::string> header = split_csv_line(line);
    if (header.empty() || header[0] != "example_id")
        throw FormatError("trajectory csv line 1: header must start with 'example_id'");
    TrajectoryMatrix m;
    for (size_t i = 1; i < header.size(); ++i) {
        const std::string& h = header[i];
        if (h.rfind("epoch_", 0) != 0)
            throw FormatError("trajectory csv line 1: bad column name '" + h + "'");
        try {
            m.kept_epoch_indices.push_back(std::stoi(h.substr(6)));
        } catch (const std::exception&) {
            throw FormatError("trajectory csv line 1: bad epoch index in '" + h + "'");
        }
    }
    const size_t cols = m.kept_epoch_indices.size();
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != cols + 1)
            throw FormatError("trajectory csv line " + std::to_string(line_no) + ": expected " +
                              std::to_string(cols + 1) + " fields, found " +
                              std::to_string(fields.size()));
        try {
            m.example_ids.push_back(std::stoi(fields[0]));
            for (size_t c = 1; c < fields.size(); ++c)
                m.losses.push_back(std::stof(fields[c]));
        } catch (const std::exception&) {
            throw FormatError("trajectory csv line " + std::to_string(line_no) +
                              ": unparsable numeric field");
        }
    }
    m.check_invariants();
    return m;
}

void save_epoch_filter_json(const EpochFilterState& state, const std::string& path) {
    nlohmann::json j;
    j["kept_epochs"] = state.kept_epochs;
    j["rejected_epochs"] = state.rejected_epochs;
    j["avg_losses"] = state.avg_losses;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

EpochFilterState load_epoch_filter_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("epoch filter json: ") + e.what());
    }
    EpochFilterState state;
    try {
        state.kept_epochs = j.at("kept_epochs").get<std::vector<int>>();
        state.rejected_epochs = j.at("rejected_epochs").get<std::vector<int>>();
        state.avg_losses = j.at("avg_losses").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("epoch filter json: ") + e.what());
    }
    // avg_losses is in record order; epochs were recorded in increasing
    // index order, so the merged sorted epoch list recovers that order.
    std::vector<int> all_epochs = state.kept_epochs;
    all_epochs.insert(all_epochs.end(), state.rejected_epochs.begin(),
                      state.rejected_epochs.end());
    std::sort(all_epochs.begin(), all_epochs.end());
    if (all_epochs.size() != state.avg_losses.size())
        throw FormatError("epoch filter json: epoch lists do not match avg_losses length");
    size_t kept_cursor = 0;
    for (size_t i = 0; i < all_epochs.size(); ++i) {
        if (kept_cursor < state.kept_epochs.size() &&
            state.kept_epochs[kept_cursor] == all_epochs[i]) {
            state.kept_averages.push_back(state.avg_losses[i]);
            ++kept_cursor;
        }
    }
    return state;
}

}  // namespace poisonlab
