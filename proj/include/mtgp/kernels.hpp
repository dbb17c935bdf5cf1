#pragma once

#include <Eigen/Dense>

#include "mtgp/errors.hpp"

namespace mtgp {

// Point sets are stored row-major (one point per row) so that a row can be
// handed to the scalar kernel evaluators as a contiguous coordinate array.
using Points =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class KernelFamily { sqexp, nn, matern3 };

const char* family_name(KernelFamily f);
KernelFamily family_from_name(const std::string& name);

// Hyperparameters of one task's covariance function. Length scales are in
// coordinate units (meters), one per input dimension. The bias term is the
// extra length scale of the NN kernel's augmented coordinate and must be
// set iff family == nn. signal_variance is only used by single-task
// covariances (eval_single); the multi-task auto/cross forms replace it
// with the task-similarity amplitude.
struct KernelParams {
    KernelFamily family = KernelFamily::sqexp;
    Eigen::VectorXd length_scales;
    double bias = 0.0;
    double signal_variance = 1.0;

    int dim() const { return static_cast<int>(length_scales.size()); }
};

// Throws ParameterError / ArgumentError if params are unusable for
// dimension d inputs.
void validate_params(const KernelParams& params, int d);

// Lower-triangular factor L of the task-similarity matrix K_f = L L^T,
// which is symmetric PSD by construction. Columns are sign-flipped so the
// diagonal of L is non-negative (canonical form; leaves L L^T unchanged).
class TaskSimilarity {
public:
    explicit TaskSimilarity(Eigen::MatrixXd lower_factor);
    static TaskSimilarity identity(int task_count);

    int dimension() const { return static_cast<int>(factor_.rows()); }
    const Eigen::MatrixXd& factor() const { return factor_; }
    const Eigen::MatrixXd& matrix() const { return matrix_; }
    double coupling(int i, int j) const { return matrix_(i, j); }

private:
    Eigen::MatrixXd factor_;
    Eigen::MatrixXd matrix_;
};

// True when a closed-form cross covariance exists for the pair.
// Supported: sqexp x sqexp, nn x nn, matern3 x matern3, and
// sqexp x matern3 (either order). NN never pairs with another family.
bool pair_supported(KernelFamily a, KernelFamily b);

// Single-task kernel value k(x, x') including the signal variance factor.
double eval_single(const KernelParams& params, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& y);

// Multi-task auto covariance K_ii^U(x, x') with amplitude kf_ii.
double eval_auto(double kf_ii, const KernelParams& params,
                 const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// Multi-task cross covariance K_ij^U(x, x') with amplitude kf_ij.
// Satisfies K_ij(x, x') == K_ji(x', x) and reduces to eval_auto when the
// parameter sets coincide.
double eval_cross(double kf_ij, const KernelParams& pi, const KernelParams& pj,
                  const Eigen::VectorXd& x, const Eigen::VectorXd& y);

namespace detail {

// Unchecked fast paths for matrix assembly: callers must have run
// validate_params (and pair_supported) beforehand. These never throw.
double eval_single_unchecked(const KernelParams& params, const double* x,
                             const double* y, int d);
double eval_auto_unchecked(double kf_ii, const KernelParams& params,
                           const double* x, const double* y, int d);
double eval_cross_unchecked(double kf_ij, const KernelParams& pi,
                            const KernelParams& pj, const double* x,
                            const double* y, int d);

// Scaled complementary error function exp(x^2) erfc(x) for x >= 0.
double erfcx_positive(double x);

}  // namespace detail

}  // namespace mtgp
