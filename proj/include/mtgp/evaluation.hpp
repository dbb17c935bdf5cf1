#pragma once

#include <array>
#include <iosfwd>

#include "mtgp/data_io.hpp"
#include "mtgp/training.hpp"

namespace mtgp {

// Spatial block gridding for cross validation: points fall into axis-aligned
// blocks of the given dimensions, whole blocks are dealt to folds.
struct BlockSpec {
    Eigen::VectorXd block_dims;  // one entry per coordinate axis
    int folds = 10;
    std::uint64_t seed = 0;
};

struct FoldPlan {
    std::vector<int> fold_of;      // fold index per point
    std::vector<int> fold_counts;  // points per fold
    int folds = 0;
};

// Grids the points into blocks (floor((coord - min) / block_dim) per axis),
// shuffles the non-empty blocks with the seed, and deals them round-robin
// onto folds. Every point lands in exactly one fold.
FoldPlan block_partition(const Points& points, const BlockSpec& spec);

double squared_error(double mean, double truth);
double variance_metric(double variance);
// 1/2 log(2 pi v) + (mean-truth)^2 / (2v); throws MetricError for v <= 0.
double negative_log_probability(double mean, double variance, double truth);

enum class Method { mtgp = 0, gp = 1, gpi = 2 };
inline constexpr int kMethodCount = 3;
const char* method_name(Method m);

enum class Metric { se = 0, var = 1, nlp = 2 };
inline constexpr int kMetricCount = 3;
const char* metric_name(Metric m);

struct MetricStats {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
    long count = 0;
};

MetricStats aggregate(const std::vector<double>& values);

// Independently optimized single-task baselines (signal variance used).
struct GpiParamSet {
    std::vector<KernelParams> params;
    Eigen::VectorXd noise_variances;
};

struct CvConfig {
    int support_size = 2000;  // support points drawn per fold
    std::uint64_t seed = 0;
    bool dump_points = false;
};

struct PointRecord {
    int fold = 0;
    Method method = Method::mtgp;
    int task = 0;
    Eigen::VectorXd coords;
    double truth = 0.0;
    double mean = 0.0;
    double variance = 0.0;
    double se = 0.0;
    double nlp = 0.0;
    bool nlp_excluded = false;
};

struct CvReport {
    std::string header;
    Eigen::VectorXd block_dims;
    int folds = 0;
    int support_size = 0;
    std::uint64_t partition_seed = 0;
    std::uint64_t support_seed = 0;
    std::vector<std::string> task_names;
    // stats[task][method][metric]
    std::vector<std::array<std::array<MetricStats, kMetricCount>, kMethodCount>>
        stats;
    std::vector<int> fold_test_counts;
    int min_fold_points = 0;
    int max_fold_points = 0;
    // NLP values excluded after variance clamping, per [task][method]
    std::vector<std::array<long, kMethodCount>> nlp_excluded;
    int clamped_variances = 0;
    std::vector<int> skipped_folds;
    // per fold, per method: hash of the support/test index lists; the three
    // entries of a fold must be identical (identical-support guarantee)
    std::vector<std::array<std::string, kMethodCount>> support_fingerprints;
    double runtime_seconds = 0.0;  // volatile; never serialized
    std::vector<PointRecord> points;  // filled iff CvConfig::dump_points
};

// Runs block-sampled k-fold cross validation comparing the fused MTGP, the
// derived per-task GP (same parameters, auto covariance, task-own data) and
// the independently optimized GP on identical support/test sets. Parameter
// sets are fitted once by the caller, outside the fold loop.
CvReport run_cross_validation(const std::vector<TaskDataset>& data,
                              const MtgpParamSet& mtgp_params,
                              const GpiParamSet& gpi_params,
                              const BlockSpec& spec, const CvConfig& config);

// Human-readable table: method rows, metric columns, mean with the standard
// deviation beneath.
std::string format_report_table(const CvReport& report);

// Machine-readable report (JSON text; excludes runtime and the point dump).
std::string report_to_json_text(const CvReport& report);

// Per-point metric dump; re-aggregating it reproduces the report exactly.
void write_point_dump(std::ostream& out, const CvReport& report);

}  // namespace mtgp
