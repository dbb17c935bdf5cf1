#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtgp/mtgp.hpp"

namespace mtgp {

using Objective = std::function<double(const Eigen::VectorXd&)>;

// Parameters of a fitted multi-task model, in natural (constrained) form.
struct MtgpParamSet {
    std::vector<KernelParams> params;
    TaskSimilarity similarity = TaskSimilarity::identity(1);
    Eigen::VectorXd noise_variances;
};

// Parameters of a fitted independent single-task model.
struct SingleParamSet {
    KernelParams params;
    double noise_variance = 0.0;
};

// Maps an MTGP parameter set onto a flat vector of unconstrained reals and
// back. Layout: row-major lower triangle of the similarity factor L (log on
// the diagonal, raw off-diagonal), then per task the log length scales (plus
// log bias for NN), then the log noise variances.
class MtgpPacker {
public:
    MtgpPacker(std::vector<KernelFamily> families, int dim);
    int size() const { return size_; }
    int task_count() const { return static_cast<int>(families_.size()); }
    Eigen::VectorXd pack(const MtgpParamSet& set) const;
    MtgpParamSet unpack(const Eigen::VectorXd& p) const;

private:
    std::vector<KernelFamily> families_;
    int dim_;
    int size_;
};

// Same mapping for a single independently optimized GP: log signal variance,
// log length scales, (log bias,) log noise variance.
class SinglePacker {
public:
    SinglePacker(KernelFamily family, int dim);
    int size() const { return size_; }
    Eigen::VectorXd pack(const SingleParamSet& set) const;
    SingleParamSet unpack(const Eigen::VectorXd& p) const;

private:
    KernelFamily family_;
    int dim_;
    int size_;
};

// Simulated-annealing stage settings.
struct AnnealSchedule {
    double initial_temperature = 100.0;
    double cooling = 0.95;
    int steps = 150;
    double proposal_scale = 0.3;  // Gaussian step size at the initial temperature
};

// Quasi-Newton (BFGS, finite-difference gradients) stage settings.
struct QuasiNewtonSettings {
    int max_iterations = 60;
    double gradient_tolerance = 1e-5;
    double fd_step = 1e-4;
    int max_line_search_halvings = 40;
};

struct TrainConfig {
    AnnealSchedule anneal;
    QuasiNewtonSettings quasi_newton;
    int block_size = 512;       // block-approximated likelihood
    int training_subset = 2000; // uniformly subsampled stacked points
    int restarts = 1;
    std::uint64_t seed = 0;
};

void validate_config(const TrainConfig& config);

// Block-learning approximation of the log marginal likelihood: the stacked
// data is shuffled once (stratified by task, round-robin interleaved),
// partitioned into consecutive blocks, and the per-block likelihoods are
// summed. block_size >= N returns the exact value.
double block_lml(const MtgpModel& model, int block_size, std::uint64_t seed);
double block_lml(const GpModel& model, int block_size, std::uint64_t seed);

// Central finite differences; falls back to one-sided differences when a
// perturbed point evaluates non-finite. Throws if f(p) itself is non-finite.
Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& p,
                            double step);

struct AnnealResult {
    Eigen::VectorXd best_point;
    double best_value = 0.0;
    int accepted = 0;
};

struct QuasiNewtonResult {
    Eigen::VectorXd point;
    double value = 0.0;
    int iterations = 0;
    std::string termination;
};

// Structured text log of one training run; one record per iteration.
struct FitReport {
    std::vector<std::string> records;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    std::string termination;

    void add(const std::string& line) { records.push_back(line); }
    std::string to_text() const;
};

AnnealResult anneal(const Objective& f, const Eigen::VectorXd& p0,
                    const AnnealSchedule& schedule, std::uint64_t seed,
                    FitReport* report = nullptr);

QuasiNewtonResult quasi_newton(const Objective& f, const Eigen::VectorXd& p0,
                               const QuasiNewtonSettings& settings,
                               FitReport* report = nullptr);

struct MtgpFitResult {
    MtgpParamSet params;
    FitReport report;
};

struct SingleFitResult {
    SingleParamSet params;
    FitReport report;
};

// Fits MTGP hyperparameters by maximizing the (block-approximated) marginal
// likelihood of a seeded uniform subsample: simulated annealing followed by
// quasi-Newton refinement, repeated over config.restarts initializations,
// keeping the best final objective. Deterministic for fixed config and data.
MtgpFitResult fit_mtgp(const std::vector<TaskData>& data,
                       const std::vector<KernelFamily>& families,
                       const TrainConfig& config);

// Same pipeline for one independently optimized GP.
SingleFitResult fit_single(const TaskData& data, KernelFamily family,
                           const TrainConfig& config);

}  // namespace mtgp
