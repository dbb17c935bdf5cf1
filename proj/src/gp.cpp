#include "mtgp/gp.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "mtgp/errors.hpp"
#include "mtgp/log.hpp"

namespace mtgp {

namespace detail {

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    double log_det = 0.0;
    const auto& L = llt.matrixLLT();
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
        log_det += std::log(L(i, i));
    }
    return 2.0 * log_det;
}

SpdFactor factorize_spd(const Eigen::MatrixXd& gram, const Eigen::VectorXd& z) {
    const Eigen::Index n = gram.rows();
    const double diag_mean = n > 0 ? gram.diagonal().mean() : 0.0;
    double jitter = 0.0;
    double level = 1e-10;
    for (;;) {
        Eigen::MatrixXd k = gram;
        if (jitter > 0.0) k.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(k);
        if (llt.info() == Eigen::Success &&
            llt.matrixLLT().diagonal().minCoeff() > 0.0) {
            if (jitter > 0.0) {
                log::debug("factorization needed jitter " +
                           std::to_string(jitter));
            }
            SpdFactor f;
            f.alpha = llt.solve(z);
            f.log_det = log_det_from_llt(llt);
            f.jitter = jitter;
            f.llt = std::move(llt);
            return f;
        }
        if (level > 1e-4) {
            std::ostringstream msg;
            msg << "covariance matrix of size " << n
                << " not positive definite even with jitter " << jitter;
            throw IllConditionedError(msg.str(), jitter);
        }
        jitter = level * diag_mean;
        level *= 10.0;
        if (jitter <= 0.0) {
            throw IllConditionedError(
                "covariance matrix has zero diagonal; cannot jitter", 0.0);
        }
    }
}

}  // namespace detail

GpModel::GpModel(KernelParams params, CovarianceMode mode, double kf_ii,
                 double noise_variance, Points train_x,
                 Eigen::VectorXd train_z_centered, double center_offset,
                 Exec exec)
    : params_(std::move(params)),
      mode_(mode),
      kf_ii_(kf_ii),
      noise_variance_(noise_variance),
      train_x_(std::move(train_x)),
      train_z_(std::move(train_z_centered)),
      center_offset_(center_offset),
      exec_(exec),
      cache_(std::make_shared<detail::SpdCache>()) {
    if (train_x_.rows() != train_z_.size()) {
        throw ArgumentError("training inputs and targets differ in count");
    }
    if (train_x_.rows() < 1) {
        throw ArgumentError("a GP model needs at least one training point");
    }
    if (noise_variance_ < 0.0) {
        throw ParameterError("noise variance must be non-negative");
    }
    if (mode_ == CovarianceMode::mtgp_auto && kf_ii_ < 0.0) {
        throw ParameterError("kf_ii must be non-negative");
    }
    validate_params(params_, dim());
}

double GpModel::kernel_value(const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y) const {
    if (x.size() != dim() || y.size() != dim()) {
        throw ArgumentError("query point dimension does not match model");
    }
    if (mode_ == CovarianceMode::single) {
        return detail::eval_single_unchecked(params_, x.data(), y.data(), dim());
    }
    return detail::eval_auto_unchecked(kf_ii_, params_, x.data(), y.data(), dim());
}

Eigen::MatrixXd GpModel::gram(bool with_noise) const {
    const int n = size();
    const int d = dim();
    Eigen::MatrixXd k(n, n);
    const auto entry = [&](Eigen::Index i, Eigen::Index j) {
        return mode_ == CovarianceMode::single
                   ? detail::eval_single_unchecked(params_, train_x_.row(i).data(),
                                                   train_x_.row(j).data(), d)
                   : detail::eval_auto_unchecked(kf_ii_, params_,
                                                 train_x_.row(i).data(),
                                                 train_x_.row(j).data(), d);
    };
    fill_symmetric(k, entry, exec_);
    if (with_noise) k.diagonal().array() += noise_variance_;
    return k;
}

const detail::SpdFactor& GpModel::factor() const {
    std::call_once(cache_->once, [this] {
        cache_->factor = std::make_unique<detail::SpdFactor>(
            detail::factorize_spd(gram(true), train_z_));
    });
    if (!cache_->factor) {
        throw IllConditionedError("factorization previously failed", 0.0);
    }
    return *cache_->factor;
}

double GpModel::applied_jitter() const {
    return cache_->factor ? cache_->factor->jitter : 0.0;
}

Posterior GpModel::posterior(const Points& test_x) const {
    if (test_x.cols() != dim()) {
        throw ArgumentError("test point dimension does not match model");
    }
    const auto& f = factor();
    const int n = size();
    const int d = dim();
    const Eigen::Index m = test_x.rows();

    Posterior out;
    out.mean.resize(m);
    out.variance.resize(m);

    constexpr Eigen::Index kChunk = 1024;
    Eigen::MatrixXd ks;
    for (Eigen::Index begin = 0; begin < m; begin += kChunk) {
        const Eigen::Index len = std::min(kChunk, m - begin);
        ks.resize(len, n);
        const auto entry = [&](Eigen::Index i, Eigen::Index j) {
            return mode_ == CovarianceMode::single
                       ? detail::eval_single_unchecked(
                             params_, test_x.row(begin + i).data(),
                             train_x_.row(j).data(), d)
                       : detail::eval_auto_unchecked(
                             kf_ii_, params_, test_x.row(begin + i).data(),
                             train_x_.row(j).data(), d);
        };
        fill_matrix(ks, entry, exec_);

        out.mean.segment(begin, len) =
            (ks * f.alpha).array() + center_offset_;
        // v = L^-1 k_*; var = k(x,x) + sigma^2 - v.v
        Eigen::MatrixXd v = f.llt.matrixL().solve(ks.transpose());
        for (Eigen::Index i = 0; i < len; ++i) {
            const Eigen::VectorXd xp = test_x.row(begin + i);
            double var = kernel_value(xp, xp) + noise_variance_ -
                         v.col(i).squaredNorm();
            if (var < 0.0) {
                var = 0.0;
                ++out.clamped_negative_variance;
            }
            out.variance[begin + i] = var;
        }
    }
    return out;
}

LmlTerms GpModel::lml_terms() const {
    const auto& f = factor();
    LmlTerms terms;
    terms.data_fit = -0.5 * train_z_.dot(f.alpha);
    terms.complexity = -0.5 * f.log_det;
    terms.normalization =
        -0.5 * static_cast<double>(size()) * std::log(2.0 * std::numbers::pi);
    return terms;
}

}  // namespace mtgp
