#include "mtgp/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "mtgp/errors.hpp"
#include "mtgp/rng.hpp"

namespace mtgp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(const char* pattern, ...) {
    char buf[256];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof(buf), pattern, args);
    va_end(args);
    return std::string(buf);
}

int per_task_entries(KernelFamily family, int dim) {
    return dim + (family == KernelFamily::nn ? 1 : 0);
}

}  // namespace

MtgpPacker::MtgpPacker(std::vector<KernelFamily> families, int dim)
    : families_(std::move(families)), dim_(dim) {
    if (families_.empty() || dim_ < 1) {
        throw ArgumentError("packer needs at least one task and one dimension");
    }
    const int nt = task_count();
    size_ = nt * (nt + 1) / 2 + nt;
    for (KernelFamily f : families_) size_ += per_task_entries(f, dim_);
}

Eigen::VectorXd MtgpPacker::pack(const MtgpParamSet& set) const {
    const int nt = task_count();
    if (static_cast<int>(set.params.size()) != nt ||
        set.similarity.dimension() != nt || set.noise_variances.size() != nt) {
        throw ArgumentError("parameter set does not match packer schema");
    }
    Eigen::VectorXd p(size_);
    int idx = 0;
    const Eigen::MatrixXd& L = set.similarity.factor();
    for (int i = 0; i < nt; ++i) {
        for (int j = 0; j < i; ++j) p[idx++] = L(i, j);
        p[idx++] = std::log(L(i, i));
    }
    for (int t = 0; t < nt; ++t) {
        const KernelParams& kp = set.params[t];
        if (kp.family != families_[t] || kp.dim() != dim_) {
            throw ArgumentError("task kernel does not match packer schema");
        }
        for (int k = 0; k < dim_; ++k) p[idx++] = std::log(kp.length_scales[k]);
        if (kp.family == KernelFamily::nn) p[idx++] = std::log(kp.bias);
    }
    for (int t = 0; t < nt; ++t) p[idx++] = std::log(set.noise_variances[t]);
    return p;
}

MtgpParamSet MtgpPacker::unpack(const Eigen::VectorXd& p) const {
    if (p.size() != size_) {
        throw ArgumentError("parameter vector length does not match schema");
    }
    const int nt = task_count();
    int idx = 0;
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(nt, nt);
    for (int i = 0; i < nt; ++i) {
        for (int j = 0; j < i; ++j) L(i, j) = p[idx++];
        L(i, i) = std::exp(p[idx++]);
    }
    std::vector<KernelParams> params(nt);
    for (int t = 0; t < nt; ++t) {
        params[t].family = families_[t];
        params[t].length_scales.resize(dim_);
        for (int k = 0; k < dim_; ++k) {
            params[t].length_scales[k] = std::exp(p[idx++]);
        }
        if (families_[t] == KernelFamily::nn) params[t].bias = std::exp(p[idx++]);
        params[t].signal_variance = 1.0;  // unused by the multi-task forms
    }
    Eigen::VectorXd noises(nt);
    for (int t = 0; t < nt; ++t) noises[t] = std::exp(p[idx++]);
    return MtgpParamSet{std::move(params), TaskSimilarity(std::move(L)),
                        std::move(noises)};
}

SinglePacker::SinglePacker(KernelFamily family, int dim)
    : family_(family), dim_(dim) {
    if (dim_ < 1) throw ArgumentError("packer needs at least one dimension");
    size_ = 2 + per_task_entries(family_, dim_);
}

Eigen::VectorXd SinglePacker::pack(const SingleParamSet& set) const {
    if (set.params.family != family_ || set.params.dim() != dim_) {
        throw ArgumentError("parameter set does not match packer schema");
    }
    Eigen::VectorXd p(size_);
    int idx = 0;
    p[idx++] = std::log(set.params.signal_variance);
    for (int k = 0; k < dim_; ++k) {
        p[idx++] = std::log(set.params.length_scales[k]);
    }
    if (family_ == KernelFamily::nn) p[idx++] = std::log(set.params.bias);
    p[idx++] = std::log(set.noise_variance);
    return p;
}

SingleParamSet SinglePacker::unpack(const Eigen::VectorXd& p) const {
    if (p.size() != size_) {
        throw ArgumentError("parameter vector length does not match schema");
    }
    SingleParamSet set;
    int idx = 0;
    set.params.family = family_;
    set.params.signal_variance = std::exp(p[idx++]);
    set.params.length_scales.resize(dim_);
    for (int k = 0; k < dim_; ++k) set.params.length_scales[k] = std::exp(p[idx++]);
    if (family_ == KernelFamily::nn) set.params.bias = std::exp(p[idx++]);
    set.noise_variance = std::exp(p[idx++]);
    return set;
}

void validate_config(const TrainConfig& config) {
    if (config.anneal.steps < 0 || config.anneal.initial_temperature <= 0.0 ||
        config.anneal.cooling <= 0.0 || config.anneal.cooling > 1.0) {
        throw ArgumentError("invalid annealing schedule");
    }
    if (config.quasi_newton.max_iterations < 0 ||
        config.quasi_newton.gradient_tolerance <= 0.0) {
        throw ArgumentError("invalid quasi-Newton settings");
    }
    if (!(config.quasi_newton.fd_step > 0.0 &&
          config.quasi_newton.fd_step <= 1e-2)) {
        throw ArgumentError("finite-difference step must be in (0, 1e-2]");
    }
    if (config.block_size < 2 || config.training_subset < 1 ||
        config.restarts < 1) {
        throw ArgumentError("block size, subset size and restarts must be positive");
    }
}

double block_lml(const MtgpModel& model, int block_size, std::uint64_t seed) {
    const int nt = model.task_count();
    const int n = model.total_size();
    if (n == 0) throw ArgumentError("block likelihood of empty data");
    if (block_size < 2 * nt) {
        throw ArgumentError("block size must be at least twice the task count");
    }
    if (block_size >= n) return model.log_marginal_likelihood();

    // stratified shuffle: per-task index permutations, round-robin interleave
    Rng rng(derive_seed(seed, 0xB10C));
    std::vector<std::vector<int>> order(nt);
    for (int t = 0; t < nt; ++t) {
        order[t].resize(model.task_size(t));
        std::iota(order[t].begin(), order[t].end(), 0);
        rng.shuffle(order[t]);
    }
    std::vector<std::pair<int, int>> stacked;
    stacked.reserve(n);
    std::vector<std::size_t> cursor(nt, 0);
    bool any = true;
    while (any) {
        any = false;
        for (int t = 0; t < nt; ++t) {
            if (cursor[t] < order[t].size()) {
                stacked.emplace_back(t, order[t][cursor[t]++]);
                any = true;
            }
        }
    }

    double total = 0.0;
    const int d = model.dim();
    for (int begin = 0; begin < n; begin += block_size) {
        const int len = std::min(block_size, n - begin);
        std::vector<std::vector<int>> rows(nt);
        for (int i = 0; i < len; ++i) {
            rows[stacked[begin + i].first].push_back(stacked[begin + i].second);
        }
        std::vector<TaskData> block(nt);
        for (int t = 0; t < nt; ++t) {
            block[t].x.resize(rows[t].size(), d);
            block[t].z_centered.resize(rows[t].size());
            for (std::size_t i = 0; i < rows[t].size(); ++i) {
                block[t].x.row(i) = model.data()[t].x.row(rows[t][i]);
                block[t].z_centered[i] = model.data()[t].z_centered[rows[t][i]];
            }
            block[t].offset = model.data()[t].offset;
        }
        MtgpModel sub(model.task_params(), model.similarity(),
                      model.noise_variances(), std::move(block));
        total += sub.log_marginal_likelihood();
    }
    return total;
}

double block_lml(const GpModel& model, int block_size, std::uint64_t seed) {
    const int n = model.size();
    if (n == 0) throw ArgumentError("block likelihood of empty data");
    if (block_size < 2) throw ArgumentError("block size must be at least 2");
    if (block_size >= n) return model.log_marginal_likelihood();

    Rng rng(derive_seed(seed, 0xB10C));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    double total = 0.0;
    const int d = model.dim();
    for (int begin = 0; begin < n; begin += block_size) {
        const int len = std::min(block_size, n - begin);
        Points x(len, d);
        Eigen::VectorXd z(len);
        for (int i = 0; i < len; ++i) {
            x.row(i) = model.train_x().row(order[begin + i]);
            z[i] = model.train_z()[order[begin + i]];
        }
        GpModel sub(model.params(), model.mode(), model.kf_ii(),
                    model.noise_variance(), std::move(x), std::move(z),
                    model.center_offset());
        total += sub.log_marginal_likelihood();
    }
    return total;
}

Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& p,
                            double step) {
    if (!(step > 0.0)) throw ArgumentError("finite-difference step must be > 0");
    const double f0 = f(p);
    if (!std::isfinite(f0)) {
        throw Error("objective is not finite at the evaluation point");
    }
    Eigen::VectorXd g(p.size());
    Eigen::VectorXd q = p;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        q[k] = p[k] + step;
        const double fp = f(q);
        q[k] = p[k] - step;
        const double fm = f(q);
        q[k] = p[k];
        if (std::isfinite(fp) && std::isfinite(fm)) {
            g[k] = (fp - fm) / (2.0 * step);
        } else if (std::isfinite(fp)) {
            g[k] = (fp - f0) / step;
        } else if (std::isfinite(fm)) {
            g[k] = (f0 - fm) / step;
        } else {
            g[k] = 0.0;
        }
    }
    return g;
}

AnnealResult anneal(const Objective& f, const Eigen::VectorXd& p0,
                    const AnnealSchedule& schedule, std::uint64_t seed,
                    FitReport* report) {
    double current_value = f(p0);
    if (!std::isfinite(current_value)) {
        throw Error("objective is not finite at the starting point");
    }
    Rng rng(derive_seed(seed, 0xA77EA1));
    AnnealResult result{p0, current_value, 0};
    Eigen::VectorXd current = p0;
    Eigen::VectorXd proposal(p0.size());
    double temperature = schedule.initial_temperature;
    for (int step = 0; step < schedule.steps; ++step) {
        const double scale =
            schedule.proposal_scale * temperature / schedule.initial_temperature;
        for (Eigen::Index k = 0; k < current.size(); ++k) {
            proposal[k] = current[k] + scale * rng.normal();
        }
        const double value = f(proposal);
        bool accept = false;
        if (std::isfinite(value)) {
            const double delta = value - current_value;
            accept = delta <= 0.0 ||
                     rng.uniform() < std::exp(-delta / temperature);
        }
        if (accept) {
            current = proposal;
            current_value = value;
            ++result.accepted;
            if (value < result.best_value) {
                result.best_value = value;
                result.best_point = current;
            }
        }
        if (report) {
            report->add(fmt("stage=anneal iter=%d objective=%.10g temp=%.4g "
                            "accepted=%d best=%.10g",
                            step + 1, current_value, temperature,
                            accept ? 1 : 0, result.best_value));
        }
        temperature *= schedule.cooling;
    }
    return result;
}

QuasiNewtonResult quasi_newton(const Objective& f, const Eigen::VectorXd& p0,
                               const QuasiNewtonSettings& settings,
                               FitReport* report) {
    const Eigen::Index n = p0.size();
    double value = f(p0);
    if (!std::isfinite(value)) {
        throw Error("objective is not finite at the starting point");
    }
    QuasiNewtonResult result{p0, value, 0, "max_iterations"};
    Eigen::VectorXd p = p0;
    Eigen::VectorXd g = fd_gradient(f, p, settings.fd_step);
    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);

    for (int iter = 0; iter < settings.max_iterations; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() <= settings.gradient_tolerance) {
            result.termination = "gradient_tolerance";
            break;
        }
        Eigen::VectorXd direction = -(h * g);
        double slope = direction.dot(g);
        if (!(slope < 0.0)) {
            // reset to steepest descent if the approximation lost descent
            h.setIdentity();
            direction = -g;
            slope = direction.dot(g);
        }
        double step = 1.0;
        double candidate_value = kInf;
        Eigen::VectorXd candidate;
        bool found = false;
        for (int ls = 0; ls <= settings.max_line_search_halvings; ++ls) {
            candidate = p + step * direction;
            candidate_value = f(candidate);
            if (std::isfinite(candidate_value) &&
                candidate_value <= value + 1e-4 * step * slope) {
                found = true;
                break;
            }
            step *= 0.5;
        }
        if (!found) {
            result.termination = "line_search_failure";
            break;
        }
        Eigen::VectorXd g_new = fd_gradient(f, candidate, settings.fd_step);
        const Eigen::VectorXd s = candidate - p;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (iter == 0 && sy > 0.0) {
            h *= sy / y.dot(y);  // standard initial inverse-Hessian scaling
        }
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::VectorXd hy = h * y;
            h -= rho * (s * hy.transpose() + hy * s.transpose());
            h += rho * rho * (y.dot(hy)) * (s * s.transpose());
            h += rho * (s * s.transpose());
        }
        p = candidate;
        value = candidate_value;
        g = g_new;
        result.iterations = iter + 1;
        if (value < result.value) {
            result.value = value;
            result.point = p;
        }
        if (report) {
            report->add(fmt("stage=qn iter=%d objective=%.10g grad_inf=%.4g "
                            "step=%.4g",
                            iter + 1, value, g.lpNorm<Eigen::Infinity>(), step));
        }
    }
    return result;
}

std::string FitReport::to_text() const {
    std::ostringstream out;
    out << fmt("initial_objective=%.17g", initial_objective) << "\n";
    for (const auto& line : records) out << line << "\n";
    out << fmt("final_objective=%.17g", final_objective) << "\n";
    out << "termination=" << termination << "\n";
    return out.str();
}

namespace {

// Uniform seeded subsample of the stacked multi-task data, preserving the
// per-task row order.
std::vector<TaskData> subsample(const std::vector<TaskData>& data, int subset,
                                std::uint64_t seed) {
    int total = 0;
    for (const auto& t : data) total += static_cast<int>(t.x.rows());
    if (subset >= total) return data;

    std::vector<std::pair<int, int>> stacked;
    stacked.reserve(total);
    for (std::size_t t = 0; t < data.size(); ++t) {
        for (int i = 0; i < data[t].x.rows(); ++i) {
            stacked.emplace_back(static_cast<int>(t), i);
        }
    }
    Rng rng(derive_seed(seed, 0x5B5));
    rng.shuffle(stacked);
    stacked.resize(subset);

    std::vector<std::vector<int>> rows(data.size());
    for (const auto& [t, i] : stacked) rows[t].push_back(i);
    std::vector<TaskData> out(data.size());
    for (std::size_t t = 0; t < data.size(); ++t) {
        std::sort(rows[t].begin(), rows[t].end());
        out[t].x.resize(rows[t].size(), data[t].x.cols());
        out[t].z_centered.resize(rows[t].size());
        for (std::size_t i = 0; i < rows[t].size(); ++i) {
            out[t].x.row(i) = data[t].x.row(rows[t][i]);
            out[t].z_centered[i] = data[t].z_centered[rows[t][i]];
        }
        out[t].offset = data[t].offset;
    }
    return out;
}

Eigen::VectorXd heuristic_length_scales(const TaskData& task) {
    const int d = static_cast<int>(task.x.cols());
    Eigen::VectorXd ls(d);
    for (int k = 0; k < d; ++k) {
        const double extent =
            task.x.col(k).maxCoeff() - task.x.col(k).minCoeff();
        ls[k] = extent > 0.0 ? extent / 10.0 : 1.0;
    }
    return ls;
}

double target_variance(const TaskData& task) {
    const double n = static_cast<double>(task.z_centered.size());
    const double var = task.z_centered.squaredNorm() / std::max(1.0, n);
    return var > 0.0 ? var : 1e-4;
}

struct StagedRun {
    Eigen::VectorXd point;
    double value = kInf;
    std::string termination;
};

// anneal + quasi-Newton from one starting point
StagedRun run_pipeline(const Objective& objective, const Eigen::VectorXd& start,
                       const TrainConfig& config, std::uint64_t anneal_seed,
                       FitReport* report) {
    AnnealResult annealed =
        anneal(objective, start, config.anneal, anneal_seed, report);
    QuasiNewtonResult refined = quasi_newton(objective, annealed.best_point,
                                             config.quasi_newton, report);
    StagedRun run;
    if (refined.value <= annealed.best_value) {
        run.point = refined.point;
        run.value = refined.value;
    } else {
        run.point = annealed.best_point;
        run.value = annealed.best_value;
    }
    run.termination = refined.termination;
    return run;
}

template <class MakeObjective>
std::pair<Eigen::VectorXd, FitReport> fit_common(
    const MakeObjective& objective, const Eigen::VectorXd& p0,
    const TrainConfig& config) {
    FitReport report;
    report.initial_objective = objective(p0);

    Eigen::VectorXd best_point = p0;
    double best_value = report.initial_objective;
    std::string termination = "no_improvement";
    for (int r = 0; r < config.restarts; ++r) {
        Eigen::VectorXd start = p0;
        if (r > 0) {
            Rng rng(derive_seed(config.seed, 0x9E57A97 + r));
            for (Eigen::Index k = 0; k < start.size(); ++k) {
                start[k] += 0.5 * rng.normal();
            }
        }
        report.add(fmt("stage=restart index=%d", r));
        StagedRun run;
        try {
            run = run_pipeline(objective, start, config,
                               derive_seed(config.seed, 0xA1 + r), &report);
        } catch (const Error&) {
            report.add(fmt("stage=restart index=%d abandoned", r));
            continue;
        }
        report.add(fmt("stage=restart index=%d objective=%.10g termination=%s",
                       r, run.value, run.termination.c_str()));
        if (run.value < best_value) {
            best_value = run.value;
            best_point = run.point;
            termination = run.termination;
        }
    }
    report.final_objective = best_value;
    report.termination = termination;
    return {best_point, std::move(report)};
}

}  // namespace

MtgpFitResult fit_mtgp(const std::vector<TaskData>& data,
                       const std::vector<KernelFamily>& families,
                       const TrainConfig& config) {
    validate_config(config);
    if (data.empty() || data.size() != families.size()) {
        throw ArgumentError("fit needs one kernel family per task");
    }
    for (const auto& t : data) {
        if (t.x.rows() == 0) throw ArgumentError("every task needs data");
    }
    const int nt = static_cast<int>(data.size());
    const int d = static_cast<int>(data[0].x.cols());
    const std::vector<TaskData> sub =
        subsample(data, config.training_subset, config.seed);

    MtgpPacker packer(families, d);
    std::vector<KernelParams> init_params(nt);
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(nt, nt);
    Eigen::VectorXd init_noises(nt);
    for (int t = 0; t < nt; ++t) {
        init_params[t].family = families[t];
        init_params[t].length_scales = heuristic_length_scales(sub[t]);
        if (families[t] == KernelFamily::nn) {
            init_params[t].bias = init_params[t].length_scales.mean();
        }
        const double var = target_variance(sub[t]);
        init_noises[t] = 0.1 * var;
        L(t, t) = std::sqrt(var);
    }
    const MtgpParamSet initial{init_params, TaskSimilarity(L), init_noises};
    const Eigen::VectorXd p0 = packer.pack(initial);

    const std::uint64_t lml_seed = derive_seed(config.seed, 0x1111);
    const Objective objective = [&](const Eigen::VectorXd& p) -> double {
        try {
            MtgpParamSet set = packer.unpack(p);
            MtgpModel model(set.params, set.similarity, set.noise_variances, sub);
            const double value = -block_lml(model, config.block_size, lml_seed);
            return std::isfinite(value) ? value : kInf;
        } catch (const Error&) {
            return kInf;
        }
    };

    auto [best, report] = fit_common(objective, p0, config);
    MtgpFitResult result{packer.unpack(best), std::move(report)};
    return result;
}

SingleFitResult fit_single(const TaskData& data, KernelFamily family,
                           const TrainConfig& config) {
    validate_config(config);
    if (data.x.rows() == 0) throw ArgumentError("fit needs data");
    const int d = static_cast<int>(data.x.cols());
    const std::vector<TaskData> sub =
        subsample({data}, config.training_subset, config.seed);

    SinglePacker packer(family, d);
    SingleParamSet init;
    init.params.family = family;
    init.params.length_scales = heuristic_length_scales(sub[0]);
    if (family == KernelFamily::nn) {
        init.params.bias = init.params.length_scales.mean();
    }
    const double var = target_variance(sub[0]);
    init.params.signal_variance = var;
    init.noise_variance = 0.1 * var;
    const Eigen::VectorXd p0 = packer.pack(init);

    const std::uint64_t lml_seed = derive_seed(config.seed, 0x1111);
    const Objective objective = [&](const Eigen::VectorXd& p) -> double {
        try {
            SingleParamSet set = packer.unpack(p);
            GpModel model(set.params, CovarianceMode::single, 0.0,
                          set.noise_variance, sub[0].x, sub[0].z_centered,
                          sub[0].offset);
            const double value = -block_lml(model, config.block_size, lml_seed);
            return std::isfinite(value) ? value : kInf;
        } catch (const Error&) {
            return kInf;
        }
    };

    auto [best, report] = fit_common(objective, p0, config);
    SingleFitResult result{packer.unpack(best), std::move(report)};
    return result;
}

}  // namespace mtgp
