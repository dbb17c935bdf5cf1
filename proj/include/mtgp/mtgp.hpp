#pragma once

#include <vector>

#include "mtgp/gp.hpp"

namespace mtgp {

// One task's training set as seen by the models: locations, centered
// targets and the offset that recenters predictions.
struct TaskData {
    Points x;
    Eigen::VectorXd z_centered;
    double offset = 0.0;
};

// Immutable multi-task GP. The joint covariance stacks per-task blocks:
// diagonal blocks are the task auto covariances plus per-task noise,
// off-diagonal blocks the closed-form cross covariances, all scaled by the
// task-similarity matrix K_f = L L^T. The joint factorization is computed
// once on first use and shared by all posterior/likelihood queries.
class MtgpModel {
public:
    MtgpModel(std::vector<KernelParams> task_params, TaskSimilarity similarity,
              Eigen::VectorXd noise_variances, std::vector<TaskData> data,
              Exec exec = Exec::parallel, int prediction_chunk = 1024);

    int task_count() const { return static_cast<int>(params_.size()); }
    int dim() const { return dim_; }
    int total_size() const { return total_; }
    int task_size(int task) const {
        return static_cast<int>(data_[task].x.rows());
    }
    const std::vector<KernelParams>& task_params() const { return params_; }
    const TaskSimilarity& similarity() const { return similarity_; }
    const Eigen::VectorXd& noise_variances() const { return noise_; }
    const std::vector<TaskData>& data() const { return data_; }

    // Stacked N x N training covariance; per-task noise on the diagonal
    // blocks iff with_noise.
    Eigen::MatrixXd joint_gram(bool with_noise) const;

    // Posterior of one task at the given points, fusing the training data of
    // all tasks. Variance includes the task's noise variance; mean includes
    // the task's centering offset.
    Posterior posterior(int task, const Points& test_x) const;

    LmlTerms lml_terms() const;
    double log_marginal_likelihood() const { return lml_terms().total(); }

    // Single-task model with this task's kernel parameters, kf_ii amplitude,
    // noise and data: the exact-comparison baseline ("derived GP").
    GpModel derive_single_gp(int task) const;

    double applied_jitter() const;

private:
    const detail::SpdFactor& factor() const;
    double cov_entry(int ti, int tj, const double* x, const double* y) const;

    std::vector<KernelParams> params_;
    TaskSimilarity similarity_;
    Eigen::VectorXd noise_;
    std::vector<TaskData> data_;
    std::vector<int> offsets_;  // start row of each task's block
    int dim_ = 0;
    int total_ = 0;
    Exec exec_;
    int prediction_chunk_;
    Eigen::VectorXd stacked_z_;
    std::shared_ptr<detail::SpdCache> cache_;
};

}  // namespace mtgp
