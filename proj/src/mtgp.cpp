#include "mtgp/mtgp.hpp"

#include <cmath>
#include <numbers>

#include "mtgp/errors.hpp"

namespace mtgp {

MtgpModel::MtgpModel(std::vector<KernelParams> task_params,
                     TaskSimilarity similarity, Eigen::VectorXd noise_variances,
                     std::vector<TaskData> data, Exec exec, int prediction_chunk)
    : params_(std::move(task_params)),
      similarity_(std::move(similarity)),
      noise_(std::move(noise_variances)),
      data_(std::move(data)),
      exec_(exec),
      prediction_chunk_(prediction_chunk),
      cache_(std::make_shared<detail::SpdCache>()) {
    const int nt = task_count();
    if (nt < 1) throw ArgumentError("MTGP needs at least one task");
    if (similarity_.dimension() != nt || noise_.size() != nt ||
        static_cast<int>(data_.size()) != nt) {
        throw ArgumentError(
            "task count mismatch between kernels, similarity, noises and data");
    }
    if (prediction_chunk_ < 1) {
        throw ArgumentError("prediction chunk size must be positive");
    }
    dim_ = static_cast<int>(data_[0].x.cols());
    offsets_.resize(nt + 1, 0);
    for (int t = 0; t < nt; ++t) {
        if (static_cast<int>(data_[t].x.cols()) != dim_) {
            throw ArgumentError("tasks disagree on input dimension");
        }
        if (data_[t].x.rows() != data_[t].z_centered.size()) {
            throw ArgumentError("task " + std::to_string(t) +
                                ": locations and targets differ in count");
        }
        if (noise_[t] < 0.0) {
            throw ParameterError("noise variances must be non-negative");
        }
        validate_params(params_[t], dim_);
        offsets_[t + 1] = offsets_[t] + static_cast<int>(data_[t].x.rows());
    }
    for (int i = 0; i < nt; ++i) {
        for (int j = i + 1; j < nt; ++j) {
            if (!pair_supported(params_[i].family, params_[j].family)) {
                throw UnsupportedPairError(
                    std::string("tasks ") + std::to_string(i) + " and " +
                    std::to_string(j) + " pair " + family_name(params_[i].family) +
                    " x " + family_name(params_[j].family));
            }
        }
    }
    total_ = offsets_[nt];
    if (total_ < 1) throw ArgumentError("MTGP needs at least one data point");

    stacked_z_.resize(total_);
    for (int t = 0; t < nt; ++t) {
        stacked_z_.segment(offsets_[t], data_[t].x.rows()) = data_[t].z_centered;
    }
}

double MtgpModel::cov_entry(int ti, int tj, const double* x,
                            const double* y) const {
    if (ti == tj) {
        return detail::eval_auto_unchecked(similarity_.coupling(ti, ti),
                                           params_[ti], x, y, dim_);
    }
    return detail::eval_cross_unchecked(similarity_.coupling(ti, tj),
                                        params_[ti], params_[tj], x, y, dim_);
}

Eigen::MatrixXd MtgpModel::joint_gram(bool with_noise) const {
    const int nt = task_count();
    Eigen::MatrixXd k(total_, total_);
    for (int ti = 0; ti < nt; ++ti) {
        const auto& xi = data_[ti].x;
        const int ni = static_cast<int>(xi.rows());
        if (ni == 0) continue;
        // diagonal block
        Eigen::MatrixXd block(ni, ni);
        fill_symmetric(
            block,
            [&](Eigen::Index a, Eigen::Index b) {
                return cov_entry(ti, ti, xi.row(a).data(), xi.row(b).data());
            },
            exec_);
        if (with_noise) block.diagonal().array() += noise_[ti];
        k.block(offsets_[ti], offsets_[ti], ni, ni) = block;
        // cross blocks; the (tj, ti) block is the exact transpose
        for (int tj = ti + 1; tj < nt; ++tj) {
            const auto& xj = data_[tj].x;
            const int nj = static_cast<int>(xj.rows());
            if (nj == 0) continue;
            Eigen::MatrixXd cross(ni, nj);
            fill_matrix(
                cross,
                [&](Eigen::Index a, Eigen::Index b) {
                    return cov_entry(ti, tj, xi.row(a).data(), xj.row(b).data());
                },
                exec_);
            k.block(offsets_[ti], offsets_[tj], ni, nj) = cross;
            k.block(offsets_[tj], offsets_[ti], nj, ni) = cross.transpose();
        }
    }
    return k;
}

const detail::SpdFactor& MtgpModel::factor() const {
    std::call_once(cache_->once, [this] {
        cache_->factor = std::make_unique<detail::SpdFactor>(
            detail::factorize_spd(joint_gram(true), stacked_z_));
    });
    if (!cache_->factor) {
        throw IllConditionedError("factorization previously failed", 0.0);
    }
    return *cache_->factor;
}

double MtgpModel::applied_jitter() const {
    return cache_->factor ? cache_->factor->jitter : 0.0;
}

Posterior MtgpModel::posterior(int task, const Points& test_x) const {
    if (task < 0 || task >= task_count()) {
        throw ArgumentError("task index out of range");
    }
    if (test_x.cols() != dim_) {
        throw ArgumentError("test point dimension does not match model");
    }
    const auto& f = factor();
    const Eigen::Index m = test_x.rows();

    Posterior out;
    out.mean.resize(m);
    out.variance.resize(m);

    Eigen::MatrixXd ks;
    for (Eigen::Index begin = 0; begin < m; begin += prediction_chunk_) {
        const Eigen::Index len = std::min<Eigen::Index>(prediction_chunk_, m - begin);
        ks.resize(len, total_);
        fill_matrix(
            ks,
            [&](Eigen::Index a, Eigen::Index b) {
                // which task block does column b fall into?
                int tj = 0;
                while (static_cast<int>(b) >= offsets_[tj + 1]) ++tj;
                const auto& xj = data_[tj].x;
                return cov_entry(task, tj, test_x.row(begin + a).data(),
                                 xj.row(b - offsets_[tj]).data());
            },
            exec_);

        out.mean.segment(begin, len) =
            (ks * f.alpha).array() + data_[task].offset;
        Eigen::MatrixXd v = f.llt.matrixL().solve(ks.transpose());
        for (Eigen::Index i = 0; i < len; ++i) {
            const double* xp = test_x.row(begin + i).data();
            double var = cov_entry(task, task, xp, xp) + noise_[task] -
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

LmlTerms MtgpModel::lml_terms() const {
    const auto& f = factor();
    LmlTerms terms;
    terms.data_fit = -0.5 * stacked_z_.dot(f.alpha);
    terms.complexity = -0.5 * f.log_det;
    terms.normalization =
        -0.5 * static_cast<double>(total_) * std::log(2.0 * std::numbers::pi);
    return terms;
}

GpModel MtgpModel::derive_single_gp(int task) const {
    if (task < 0 || task >= task_count()) {
        throw ArgumentError("task index out of range");
    }
    return GpModel(params_[task], CovarianceMode::mtgp_auto,
                   similarity_.coupling(task, task), noise_[task],
                   data_[task].x, data_[task].z_centered, data_[task].offset,
                   exec_);
}

}  // namespace mtgp
