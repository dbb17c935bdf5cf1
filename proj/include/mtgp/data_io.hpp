#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtgp/mtgp.hpp"

namespace mtgp {

// One observed quantity: sample locations, values in original units, and
// the empirical mean removed before modeling.
struct TaskDataset {
    std::string name;
    Points points;
    Eigen::VectorXd values;
    double center_offset = 0.0;

    Eigen::VectorXd centered_values() const {
        return values.array() - center_offset;
    }
    TaskData training_view() const {
        return TaskData{points, centered_values(), center_offset};
    }
    // Validates shapes/finiteness and computes the centering offset.
    static TaskDataset from_raw(std::string name, Points points,
                                Eigen::VectorXd values);
};

// Column selection for CSV ingestion. value_columns empty means "every
// non-coordinate column becomes a task".
struct CsvColumnMapping {
    std::array<std::string, 3> coordinates{"east", "north", "depth"};
    std::vector<std::string> value_columns;
};

// Reads a dataset CSV (header east,north,depth,<task>,...). Rows with a
// missing value (empty cell or NaN literal) are omitted from that task
// only, so tasks may end up with different sizes.
std::vector<TaskDataset> load_csv(const std::string& path,
                                  const CsvColumnMapping& mapping = {});

// Writes tasks sharing one coordinate set back to the dataset CSV layout.
void write_csv(const std::string& path, const std::vector<TaskDataset>& tasks);

struct DataFingerprint {
    std::vector<std::int64_t> counts;
    Eigen::VectorXd bbox_lo;
    Eigen::VectorXd bbox_hi;
    std::uint64_t content_hash = 0;
};

DataFingerprint fingerprint(const std::vector<TaskDataset>& tasks);

// Persistent form of a fitted model: kernel parameters per task plus either
// the task-similarity factor (kind "mtgp") or per-task signal variances
// (kind "gpi"), and a fingerprint of the data it was trained on.
struct ModelArchive {
    int version = 1;
    std::string kind;
    std::vector<std::string> task_names;
    std::vector<KernelParams> params;
    Eigen::MatrixXd similarity_factor;  // mtgp only
    Eigen::VectorXd noise_variances;
    Eigen::VectorXd center_offsets;
    DataFingerprint data_fingerprint;
};

void save_model(const std::string& path, const ModelArchive& archive);
ModelArchive load_model(const std::string& path);

// Returns a warning message when the archive's fingerprint does not match
// the supplied data (not fatal; the caller records it).
std::optional<std::string> fingerprint_mismatch(
    const ModelArchive& archive, const std::vector<TaskDataset>& data);

// Two-sine fusion demo data (1D): task A observes sin(x) everywhere, task B
// observes -sin(x) only outside the gap interval.
struct SineDemoConfig {
    int n_dense = 80;
    int n_sparse = 60;
    double gap_lo = 2.0;
    double gap_hi = 5.0;  // gap_hi <= gap_lo disables the gap
    double noise = 0.1;
    double domain_lo = 0.0;
    double domain_hi = 6.283185307179586;
    std::uint64_t seed = 1;
};

std::pair<TaskDataset, TaskDataset> gen_sine_demo(const SineDemoConfig& config);

// Synthetic 3D stand-in for multi-element assay data: latent GP fields are
// drawn on a regular grid via per-axis Cholesky factors and mixed linearly,
// so tasks carry a known cross coupling (mixing * mixing^T).
struct CorrelatedFieldConfig {
    std::array<int, 3> grid_dims{20, 16, 16};
    Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
    int task_count = 3;
    Eigen::Vector3d latent_length_scales = Eigen::Vector3d::Constant(2.5);
    Eigen::MatrixXd mixing;  // task_count x task_count; empty = identity
    double noise = 0.1;
    std::uint64_t seed = 0;
};

std::vector<TaskDataset> gen_correlated_field(const CorrelatedFieldConfig& config);

// Regular prediction grid; an axis with resolution 1 samples the box center.
struct GridSpec {
    Eigen::Vector3d lo;
    Eigen::Vector3d hi;
    std::array<int, 3> resolution{1, 1, 1};
};

Points grid_points(const GridSpec& spec);

using PredictFn = std::function<Posterior(const Points&)>;

// Streams (east,north,depth,mean,variance) rows over the grid in chunks.
// Refuses grids above max_cells.
void export_grid_predictions(const GridSpec& spec, const PredictFn& predict,
                             const std::string& out_path,
                             std::int64_t max_cells = 2000000);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

}  // namespace mtgp
