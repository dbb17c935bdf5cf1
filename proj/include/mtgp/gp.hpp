#pragma once

#include <memory>
#include <mutex>

#include <Eigen/Dense>

#include "mtgp/kernels.hpp"
#include "mtgp/parallel.hpp"

namespace mtgp {

// Which covariance the single-task model evaluates: the plain kernels of an
// independently specified GP, or the multi-task auto covariance with the
// kf_ii amplitude (the "derived GP" used for exact MTGP comparisons).
enum class CovarianceMode { single, mtgp_auto };

struct Posterior {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
    // number of predictive variances clamped to zero after floating-point
    // cancellation; surfaced in evaluation reports
    int clamped_negative_variance = 0;
};

// The three addends of the log marginal likelihood, kept separate so that
// reports can show the data-fit / complexity split. total() is their sum.
struct LmlTerms {
    double data_fit = 0.0;       // -1/2 z^T K^-1 z
    double complexity = 0.0;     // -1/2 log|K|
    double normalization = 0.0;  // -n/2 log(2 pi)
    double total() const { return data_fit + complexity + normalization; }
};

namespace detail {

struct SpdFactor {
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::VectorXd alpha;  // K^-1 z
    double log_det = 0.0;
    double jitter = 0.0;
};

struct SpdCache {
    std::once_flag once;
    std::unique_ptr<SpdFactor> factor;
};

// Factorizes gram + jitter*I under the escalation policy (1e-10 to 1e-4 of
// the mean diagonal, x10 steps). Throws IllConditionedError on exhaustion.
SpdFactor factorize_spd(const Eigen::MatrixXd& gram, const Eigen::VectorXd& z);

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt);

}  // namespace detail

// Immutable single-task GP regression model. Training targets are held
// centered; the centering offset is restored on predicted means. The
// factorization of the noisy gram matrix is computed once on first use and
// cached; all query methods are const and safe to call concurrently.
class GpModel {
public:
    GpModel(KernelParams params, CovarianceMode mode, double kf_ii,
            double noise_variance, Points train_x,
            Eigen::VectorXd train_z_centered, double center_offset = 0.0,
            Exec exec = Exec::parallel);

    int size() const { return static_cast<int>(train_x_.rows()); }
    int dim() const { return static_cast<int>(train_x_.cols()); }
    const KernelParams& params() const { return params_; }
    CovarianceMode mode() const { return mode_; }
    double kf_ii() const { return kf_ii_; }
    double noise_variance() const { return noise_variance_; }
    double center_offset() const { return center_offset_; }
    const Points& train_x() const { return train_x_; }
    const Eigen::VectorXd& train_z() const { return train_z_; }

    // Covariance of two points under this model's mode (no noise term).
    double kernel_value(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;

    // Training covariance matrix; noise on the diagonal iff with_noise.
    Eigen::MatrixXd gram(bool with_noise) const;

    // Predictive mean/variance at the given points (rows). Variance includes
    // the noise term; mean includes the centering offset.
    Posterior posterior(const Points& test_x) const;

    LmlTerms lml_terms() const;
    double log_marginal_likelihood() const { return lml_terms().total(); }

    // Jitter that was needed to factorize (0 until first query).
    double applied_jitter() const;

private:
    const detail::SpdFactor& factor() const;

    KernelParams params_;
    CovarianceMode mode_;
    double kf_ii_;
    double noise_variance_;
    Points train_x_;
    Eigen::VectorXd train_z_;
    double center_offset_;
    Exec exec_;
    std::shared_ptr<detail::SpdCache> cache_;
};

}  // namespace mtgp
