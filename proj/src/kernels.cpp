#include "mtgp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mtgp {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSqrt3 = std::numbers::sqrt3;

// Relative length-scale gap below which the Matern 3/2 cross covariance
// switches to its analytic limit; the closed form divides by l_i^2 - l_j^2.
constexpr double kMaternEqualTol = 1e-5;

double sq(double v) { return v * v; }

}  // namespace

const char* family_name(KernelFamily f) {
    switch (f) {
        case KernelFamily::sqexp: return "sqexp";
        case KernelFamily::nn: return "nn";
        case KernelFamily::matern3: return "matern3";
    }
    return "?";
}

KernelFamily family_from_name(const std::string& name) {
    if (name == "sqexp") return KernelFamily::sqexp;
    if (name == "nn") return KernelFamily::nn;
    if (name == "matern3") return KernelFamily::matern3;
    throw ArgumentError("unknown kernel family '" + name +
                        "' (expected sqexp, nn or matern3)");
}

void validate_params(const KernelParams& params, int d) {
    if (params.dim() != d) {
        throw ArgumentError("kernel has " + std::to_string(params.dim()) +
                            " length scales but inputs have dimension " +
                            std::to_string(d));
    }
    for (int k = 0; k < d; ++k) {
        if (!(params.length_scales[k] > 0.0)) {
            throw ParameterError("length scale " + std::to_string(k) +
                                 " must be strictly positive");
        }
    }
    if (params.family == KernelFamily::nn && !(params.bias > 0.0)) {
        throw ParameterError("NN kernel requires a strictly positive bias");
    }
    if (!(params.signal_variance > 0.0)) {
        throw ParameterError("signal variance must be strictly positive");
    }
}

TaskSimilarity::TaskSimilarity(Eigen::MatrixXd lower_factor) {
    if (lower_factor.rows() != lower_factor.cols() || lower_factor.rows() < 1) {
        throw ArgumentError("task-similarity factor must be square and non-empty");
    }
    factor_ = lower_factor.triangularView<Eigen::Lower>();
    // canonical form: non-negative diagonal (column sign flips keep L L^T)
    for (int c = 0; c < factor_.cols(); ++c) {
        if (factor_(c, c) < 0.0) factor_.col(c) = -factor_.col(c);
    }
    matrix_ = factor_ * factor_.transpose();
}

TaskSimilarity TaskSimilarity::identity(int task_count) {
    return TaskSimilarity(Eigen::MatrixXd::Identity(task_count, task_count));
}

bool pair_supported(KernelFamily a, KernelFamily b) {
    if (a == b) return true;
    return (a == KernelFamily::sqexp && b == KernelFamily::matern3) ||
           (a == KernelFamily::matern3 && b == KernelFamily::sqexp);
}

namespace detail {

double erfcx_positive(double x) {
    if (x < 12.0) {
        return std::exp(x * x) * std::erfc(x);
    }
    // asymptotic expansion 1/(x sqrt(pi)) sum_n (-1)^n (2n-1)!!/(2x^2)^n;
    // eleven terms keep the truncation below 1e-15 for x >= 12
    const double s = 1.0 / (2.0 * x * x);
    double term = 1.0;
    double sum = 1.0;
    for (int n = 1; n <= 10; ++n) {
        term *= -(2.0 * n - 1.0) * s;
        sum += term;
    }
    return sum / (x * std::sqrt(kPi));
}

namespace {

// arcsin core of the NN kernel for precision entries prec[k] = Sigma_kk,
// operating on coordinates augmented with a leading 1.
double nn_arcsin(const double* x, const double* y, const double* prec, int d) {
    double sxy = prec[0];
    double sxx = prec[0];
    double syy = prec[0];
    for (int k = 0; k < d; ++k) {
        const double p = prec[k + 1];
        sxy += p * x[k] * y[k];
        sxx += p * x[k] * x[k];
        syy += p * y[k] * y[k];
    }
    double arg = 2.0 * sxy / std::sqrt((1.0 + 2.0 * sxx) * (1.0 + 2.0 * syy));
    arg = std::clamp(arg, -1.0, 1.0);
    return (2.0 / kPi) * std::asin(arg);
}

constexpr int kMaxDim = 15;

double nn_plain(const KernelParams& params, const double* x, const double* y,
                int d) {
    double prec[kMaxDim + 1];
    prec[0] = 1.0 / sq(params.bias);
    for (int k = 0; k < d; ++k) prec[k + 1] = 1.0 / sq(params.length_scales[k]);
    return nn_arcsin(x, y, prec, d);
}

double matern3_plain(const Eigen::VectorXd& ls, const double* x,
                     const double* y, int d) {
    double value = 1.0;
    for (int k = 0; k < d; ++k) {
        const double s = kSqrt3 * std::abs(x[k] - y[k]) / ls[k];
        value *= (1.0 + s) * std::exp(-s);
    }
    return value;
}

double cross_sqexp(const KernelParams& pi, const KernelParams& pj,
                   const double* x, const double* y, int d) {
    double value = 1.0;
    for (int k = 0; k < d; ++k) {
        const double li = pi.length_scales[k];
        const double lj = pj.length_scales[k];
        const double ssum = li * li + lj * lj;
        const double r = x[k] - y[k];
        value *= std::sqrt(2.0 * kPi) * li * lj / std::sqrt(ssum) *
                 std::exp(-0.5 * r * r / ssum);
    }
    return value;
}

double cross_nn(const KernelParams& pi, const KernelParams& pj,
                const double* x, const double* y, int d) {
    double prec[kMaxDim + 1];
    double prefactor = 1.0;
    for (int k = 0; k <= d; ++k) {
        const double bi = (k == 0) ? pi.bias : pi.length_scales[k - 1];
        const double bj = (k == 0) ? pj.bias : pj.length_scales[k - 1];
        const double ssum = bi * bi + bj * bj;
        prec[k] = 2.0 / ssum;
        prefactor *= std::sqrt(2.0) * std::sqrt(bi * bj) / std::sqrt(ssum);
    }
    return prefactor * nn_arcsin(x, y, prec, d);
}

double cross_matern3(const KernelParams& pi, const KernelParams& pj,
                     const double* x, const double* y, int d) {
    double value = 1.0;
    for (int k = 0; k < d; ++k) {
        const double li = pi.length_scales[k];
        const double lj = pj.length_scales[k];
        const double r = std::abs(x[k] - y[k]);
        if (std::abs(li - lj) < kMaternEqualTol * std::max(li, lj)) {
            // analytic limit of the closed form as l_j -> l_i, evaluated at
            // the midpoint so the branch is symmetric in (i, j)
            const double l = 0.5 * (li + lj);
            const double s = kSqrt3 * r / l;
            value *= (1.0 + s) * std::exp(-s);
        } else {
            value *= 2.0 * std::sqrt(li * lj) / (li * li - lj * lj) *
                     (li * std::exp(-kSqrt3 * r / li) -
                      lj * std::exp(-kSqrt3 * r / lj));
        }
    }
    return value;
}

// Cross covariance of an SQEXP task and a Matern 3/2 task, evaluated as the
// exact correlation of the two smoothing kernels that generate this
// library's SQEXP and Matern auto covariances:
//   k_se(t) = exp(-t^2 / (2 l_se^2)),  k_m(t) = sqrt(a) exp(-a |t|),
// with a = sqrt(3)/l_m. Per dimension the integral evaluates to
//   sqrt(pi/2) sqrt(a) l_se e^(lam^2) [e^(-ar) erfc(lam - rho)
//                                      + e^(ar) erfc(lam + rho)]
// with lam = a l_se / sqrt(2), rho = r / (sqrt(2) l_se). The e^(lam^2)
// factors are folded into scaled complementary error functions so the
// expression stays finite for small Matern length scales.
double cross_sqexp_matern3(const KernelParams& pse, const KernelParams& pm,
                           const double* x, const double* y, int d) {
    double value = 1.0;
    for (int k = 0; k < d; ++k) {
        const double lse = pse.length_scales[k];
        const double lm = pm.length_scales[k];
        const double r = std::abs(x[k] - y[k]);
        const double a = kSqrt3 / lm;
        const double lam = a * lse / std::sqrt(2.0);
        const double rho = r / (std::sqrt(2.0) * lse);
        const double emr2 = std::exp(-rho * rho);
        const double t1 = emr2 * erfcx_positive(lam + rho);
        double t2;
        if (lam >= rho) {
            t2 = emr2 * erfcx_positive(lam - rho);
        } else {
            t2 = 2.0 * std::exp(lam * lam - a * r) -
                 emr2 * erfcx_positive(rho - lam);
        }
        value *= std::sqrt(kPi / 2.0) * std::sqrt(a) * lse * (t1 + t2);
    }
    return value;
}

}  // namespace

double eval_single_unchecked(const KernelParams& params, const double* x,
                             const double* y, int d) {
    switch (params.family) {
        case KernelFamily::sqexp: {
            double q = 0.0;
            for (int k = 0; k < d; ++k) {
                q += sq((x[k] - y[k]) / params.length_scales[k]);
            }
            return params.signal_variance * std::exp(-0.5 * q);
        }
        case KernelFamily::nn:
            return params.signal_variance * nn_plain(params, x, y, d);
        case KernelFamily::matern3:
            return params.signal_variance *
                   matern3_plain(params.length_scales, x, y, d);
    }
    return 0.0;
}

double eval_auto_unchecked(double kf_ii, const KernelParams& params,
                           const double* x, const double* y, int d) {
    switch (params.family) {
        case KernelFamily::sqexp: {
            // pi^(d/2)/|Sigma|^(1/2) prefactor and quarter exponent from the
            // smoothing-kernel self-correlation
            double value = 1.0;
            double q = 0.0;
            for (int k = 0; k < d; ++k) {
                value *= std::sqrt(kPi) * params.length_scales[k];
                q += sq((x[k] - y[k]) / params.length_scales[k]);
            }
            return kf_ii * value * std::exp(-0.25 * q);
        }
        case KernelFamily::nn:
            return kf_ii * nn_plain(params, x, y, d);
        case KernelFamily::matern3:
            return kf_ii * matern3_plain(params.length_scales, x, y, d);
    }
    return 0.0;
}

double eval_cross_unchecked(double kf_ij, const KernelParams& pi,
                            const KernelParams& pj, const double* x,
                            const double* y, int d) {
    if (pi.family == pj.family) {
        switch (pi.family) {
            case KernelFamily::sqexp:
                return kf_ij * cross_sqexp(pi, pj, x, y, d);
            case KernelFamily::nn:
                return kf_ij * cross_nn(pi, pj, x, y, d);
            case KernelFamily::matern3:
                return kf_ij * cross_matern3(pi, pj, x, y, d);
        }
    }
    if (pi.family == KernelFamily::sqexp) {
        return kf_ij * cross_sqexp_matern3(pi, pj, x, y, d);
    }
    return kf_ij * cross_sqexp_matern3(pj, pi, x, y, d);
}

}  // namespace detail

namespace {

void check_pair_args(const KernelParams& pi, const KernelParams& pj,
                     const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    if (x.size() != y.size()) {
        throw ArgumentError("covariance inputs differ in dimension");
    }
    if (x.size() > detail::kMaxDim) {
        throw ArgumentError("input dimension exceeds supported maximum");
    }
    validate_params(pi, static_cast<int>(x.size()));
    validate_params(pj, static_cast<int>(x.size()));
}

}  // namespace

double eval_single(const KernelParams& params, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& y) {
    check_pair_args(params, params, x, y);
    return detail::eval_single_unchecked(params, x.data(), y.data(),
                                         static_cast<int>(x.size()));
}

double eval_auto(double kf_ii, const KernelParams& params,
                 const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    if (kf_ii < 0.0) {
        throw ParameterError("auto-covariance amplitude kf_ii must be >= 0");
    }
    check_pair_args(params, params, x, y);
    return detail::eval_auto_unchecked(kf_ii, params, x.data(), y.data(),
                                       static_cast<int>(x.size()));
}

double eval_cross(double kf_ij, const KernelParams& pi, const KernelParams& pj,
                  const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    if (!pair_supported(pi.family, pj.family)) {
        throw UnsupportedPairError(
            std::string("no closed-form cross covariance for ") +
            family_name(pi.family) + " x " + family_name(pj.family));
    }
    check_pair_args(pi, pj, x, y);
    return detail::eval_cross_unchecked(kf_ij, pi, pj, x.data(), y.data(),
                                        static_cast<int>(x.size()));
}

}  // namespace mtgp
