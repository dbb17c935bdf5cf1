#include "mtgp/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "mtgp/errors.hpp"
#include "mtgp/log.hpp"
#include "mtgp/rng.hpp"

namespace mtgp {

namespace {

constexpr double kVarianceFloor = 1e-12;

std::uint64_t fnv1a_int(std::uint64_t hash, std::int64_t value) {
    unsigned char bytes[sizeof(value)];
    std::memcpy(bytes, &value, sizeof(value));
    for (unsigned char b : bytes) {
        hash ^= b;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace

FoldPlan block_partition(const Points& points, const BlockSpec& spec) {
    if (points.rows() == 0) throw ArgumentError("cannot partition empty data");
    const Eigen::Index d = points.cols();
    if (spec.block_dims.size() != d) {
        throw ArgumentError("block dimensions do not match point dimension");
    }
    if ((spec.block_dims.array() <= 0.0).any()) {
        throw ArgumentError("block dimensions must be positive");
    }
    if (spec.folds < 2) throw ArgumentError("need at least two folds");

    const Eigen::VectorXd lo = points.colwise().minCoeff();
    std::vector<std::vector<long>> keys(points.rows());
    std::map<std::vector<long>, int> blocks;  // ordered: deterministic ids
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        std::vector<long> key(d);
        for (Eigen::Index k = 0; k < d; ++k) {
            key[k] = static_cast<long>(
                std::floor((points(i, k) - lo[k]) / spec.block_dims[k]));
        }
        blocks.emplace(key, 0);
        keys[i] = std::move(key);
    }
    std::vector<int> order(blocks.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(spec.seed, 0xB0));
    rng.shuffle(order);
    int id = 0;
    for (auto& [key, fold] : blocks) {
        fold = order[id++] % spec.folds;
    }

    FoldPlan plan;
    plan.folds = spec.folds;
    plan.fold_of.resize(points.rows());
    plan.fold_counts.assign(spec.folds, 0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const int fold = blocks[keys[i]];
        plan.fold_of[i] = fold;
        ++plan.fold_counts[fold];
    }
    return plan;
}

double squared_error(double mean, double truth) {
    const double e = mean - truth;
    return e * e;
}

double variance_metric(double variance) { return variance; }

double negative_log_probability(double mean, double variance, double truth) {
    if (!(variance > 0.0)) {
        throw MetricError("NLP needs a strictly positive variance");
    }
    const double e = mean - truth;
    return 0.5 * std::log(2.0 * std::numbers::pi * variance) +
           e * e / (2.0 * variance);
}

const char* method_name(Method m) {
    switch (m) {
        case Method::mtgp: return "MTGP";
        case Method::gp: return "GP";
        case Method::gpi: return "GPI";
    }
    return "?";
}

const char* metric_name(Metric m) {
    switch (m) {
        case Metric::se: return "SE";
        case Metric::var: return "VAR";
        case Metric::nlp: return "NLP";
    }
    return "?";
}

MetricStats aggregate(const std::vector<double>& values) {
    MetricStats stats;
    stats.count = static_cast<long>(values.size());
    if (values.empty()) return stats;
    double sum = 0.0;
    for (double v : values) sum += v;
    stats.mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - stats.mean) * (v - stats.mean);
    stats.stddev = std::sqrt(ss / static_cast<double>(values.size()));
    return stats;
}

namespace {

struct SupportSelection {
    std::vector<std::vector<int>> rows;  // per task, sorted
    std::uint64_t hash = 0;
};

// One seeded uniform subset of the stacked evaluation data, shared by all
// methods of a fold. The hash covers the chosen support rows and the test
// rows so the identical-support guarantee is checkable.
SupportSelection select_support(
    const std::vector<std::vector<int>>& eval_rows,
    const std::vector<std::vector<int>>& test_rows, int support_size,
    std::uint64_t seed) {
    std::vector<std::pair<int, int>> stacked;
    for (std::size_t t = 0; t < eval_rows.size(); ++t) {
        for (int r : eval_rows[t]) stacked.emplace_back(static_cast<int>(t), r);
    }
    Rng rng(seed);
    rng.shuffle(stacked);
    if (static_cast<int>(stacked.size()) > support_size) {
        stacked.resize(support_size);
    }
    SupportSelection sel;
    sel.rows.resize(eval_rows.size());
    for (const auto& [t, r] : stacked) sel.rows[t].push_back(r);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (std::size_t t = 0; t < sel.rows.size(); ++t) {
        std::sort(sel.rows[t].begin(), sel.rows[t].end());
        for (int r : sel.rows[t]) hash = fnv1a_int(hash, r);
        hash = fnv1a_int(hash, -1);
        for (int r : test_rows[t]) hash = fnv1a_int(hash, r);
        hash = fnv1a_int(hash, -2);
    }
    sel.hash = hash;
    return sel;
}

TaskData gather(const TaskDataset& ds, const std::vector<int>& rows) {
    TaskData out;
    out.x.resize(rows.size(), ds.points.cols());
    out.z_centered.resize(rows.size());
    const Eigen::VectorXd centered = ds.centered_values();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.x.row(i) = ds.points.row(rows[i]);
        out.z_centered[i] = centered[rows[i]];
    }
    out.offset = ds.center_offset;
    return out;
}

}  // namespace

CvReport run_cross_validation(const std::vector<TaskDataset>& data,
                              const MtgpParamSet& mtgp_params,
                              const GpiParamSet& gpi_params,
                              const BlockSpec& spec, const CvConfig& config) {
    const auto start_time = std::chrono::steady_clock::now();
    const int nt = static_cast<int>(data.size());
    if (nt == 0) throw ArgumentError("cross validation needs data");
    if (static_cast<int>(mtgp_params.params.size()) != nt ||
        mtgp_params.similarity.dimension() != nt ||
        mtgp_params.noise_variances.size() != nt) {
        throw ArgumentError("MTGP parameter set does not match task count");
    }
    if (static_cast<int>(gpi_params.params.size()) != nt ||
        gpi_params.noise_variances.size() != nt) {
        throw ArgumentError("GPI parameter set does not match task count");
    }
    if (config.support_size < 1) {
        throw ArgumentError("support size must be positive");
    }

    // Shared spatial gridding across tasks: partition the stacked points.
    const Eigen::Index d = data[0].points.cols();
    Eigen::Index total = 0;
    for (const auto& t : data) {
        if (t.points.cols() != d) throw ArgumentError("tasks disagree on dimension");
        total += t.points.rows();
    }
    Points stacked(total, d);
    std::vector<Eigen::Index> offsets(nt + 1, 0);
    for (int t = 0; t < nt; ++t) {
        stacked.middleRows(offsets[t], data[t].points.rows()) = data[t].points;
        offsets[t + 1] = offsets[t] + data[t].points.rows();
    }
    const FoldPlan plan = block_partition(stacked, spec);

    CvReport report;
    report.header =
        "block-sampled k-fold cross validation; support points are one "
        "seeded uniform subset of the evaluation folds, selected per fold "
        "and shared by MTGP, GP and GPI; targets centered per task at load "
        "time";
    report.block_dims = spec.block_dims;
    report.folds = spec.folds;
    report.support_size = config.support_size;
    report.partition_seed = spec.seed;
    report.support_seed = config.seed;
    for (const auto& t : data) report.task_names.push_back(t.name);
    report.stats.resize(nt);
    report.nlp_excluded.assign(nt, {0, 0, 0});
    report.fold_test_counts = plan.fold_counts;

    // metric value streams, [task][method][metric]
    std::vector<std::array<std::array<std::vector<double>, kMetricCount>,
                           kMethodCount>>
        values(nt);

    for (int fold = 0; fold < spec.folds; ++fold) {
        std::vector<std::vector<int>> test_rows(nt);
        std::vector<std::vector<int>> eval_rows(nt);
        for (int t = 0; t < nt; ++t) {
            for (Eigen::Index i = 0; i < data[t].points.rows(); ++i) {
                if (plan.fold_of[offsets[t] + i] == fold) {
                    test_rows[t].push_back(static_cast<int>(i));
                } else {
                    eval_rows[t].push_back(static_cast<int>(i));
                }
            }
        }
        const int fold_points = plan.fold_counts[fold];
        if (fold_points == 0) {
            report.skipped_folds.push_back(fold);
            log::info("fold " + std::to_string(fold) +
                      " has no test points; skipped");
            continue;
        }

        const SupportSelection support = select_support(
            eval_rows, test_rows, config.support_size,
            derive_seed(config.seed, 0xF01D0 + static_cast<std::uint64_t>(fold)));
        bool support_ok = true;
        for (int t = 0; t < nt; ++t) {
            if (support.rows[t].empty()) support_ok = false;
        }
        if (!support_ok) {
            report.skipped_folds.push_back(fold);
            log::warn("fold " + std::to_string(fold) +
                      " left a task without support points; skipped");
            continue;
        }
        report.support_fingerprints.push_back(
            {hex64(support.hash), hex64(support.hash), hex64(support.hash)});

        std::vector<TaskData> support_data;
        support_data.reserve(nt);
        for (int t = 0; t < nt; ++t) {
            support_data.push_back(gather(data[t], support.rows[t]));
        }
        const MtgpModel fused(mtgp_params.params, mtgp_params.similarity,
                              mtgp_params.noise_variances, support_data);

        for (int t = 0; t < nt; ++t) {
            if (test_rows[t].empty()) continue;
            Points test_x(test_rows[t].size(), d);
            Eigen::VectorXd truth(test_rows[t].size());
            for (std::size_t i = 0; i < test_rows[t].size(); ++i) {
                test_x.row(i) = data[t].points.row(test_rows[t][i]);
                truth[i] = data[t].values[test_rows[t][i]];
            }

            const GpModel derived = fused.derive_single_gp(t);
            const GpModel independent(
                gpi_params.params[t], CovarianceMode::single, 0.0,
                gpi_params.noise_variances[t], support_data[t].x,
                support_data[t].z_centered, support_data[t].offset);

            const Posterior posts[kMethodCount] = {
                fused.posterior(t, test_x), derived.posterior(test_x),
                independent.posterior(test_x)};

            for (int m = 0; m < kMethodCount; ++m) {
                const Posterior& post = posts[m];
                report.clamped_variances += post.clamped_negative_variance;
                for (Eigen::Index i = 0; i < test_x.rows(); ++i) {
                    const double se = squared_error(post.mean[i], truth[i]);
                    double var = variance_metric(post.variance[i]);
                    bool excluded = false;
                    double nlp = 0.0;
                    if (var > 0.0) {
                        nlp = negative_log_probability(post.mean[i], var, truth[i]);
                    } else {
                        var = kVarianceFloor;
                        excluded = true;
                        ++report.nlp_excluded[t][m];
                    }
                    values[t][m][0].push_back(se);
                    values[t][m][1].push_back(var);
                    if (!excluded) values[t][m][2].push_back(nlp);
                    if (config.dump_points) {
                        PointRecord rec;
                        rec.fold = fold;
                        rec.method = static_cast<Method>(m);
                        rec.task = t;
                        rec.coords = test_x.row(i);
                        rec.truth = truth[i];
                        rec.mean = post.mean[i];
                        rec.variance = var;
                        rec.se = se;
                        rec.nlp = nlp;
                        rec.nlp_excluded = excluded;
                        report.points.push_back(std::move(rec));
                    }
                }
            }
        }
    }

    for (int t = 0; t < nt; ++t) {
        for (int m = 0; m < kMethodCount; ++m) {
            for (int k = 0; k < kMetricCount; ++k) {
                report.stats[t][m][k] = aggregate(values[t][m][k]);
            }
        }
    }
    report.min_fold_points =
        *std::min_element(plan.fold_counts.begin(), plan.fold_counts.end());
    report.max_fold_points =
        *std::max_element(plan.fold_counts.begin(), plan.fold_counts.end());
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      start_time)
            .count();
    return report;
}

std::string format_report_table(const CvReport& report) {
    std::ostringstream out;
    out << "block size:";
    for (Eigen::Index k = 0; k < report.block_dims.size(); ++k) {
        out << (k ? " x " : " ") << report.block_dims[k];
    }
    out << " (m), folds: " << report.folds
        << ", support per fold: " << report.support_size << "\n";
    out << "fold test counts: min " << report.min_fold_points << ", max "
        << report.max_fold_points << "\n";
    if (!report.skipped_folds.empty()) {
        out << "skipped folds:";
        for (int f : report.skipped_folds) out << ' ' << f;
        out << "\n";
    }
    out << report.header << "\n";
    char line[160];
    const auto parenthesized = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "(%.6g)", v);
        return std::string(buf);
    };
    for (std::size_t t = 0; t < report.task_names.size(); ++t) {
        out << "\ntask " << report.task_names[t] << "\n";
        std::snprintf(line, sizeof(line), "  %-6s %14s %14s %14s\n", "", "SE",
                      "VAR", "NLP");
        out << line;
        for (int m = 0; m < kMethodCount; ++m) {
            const auto& row = report.stats[t][m];
            std::snprintf(line, sizeof(line), "  %-6s %14.6g %14.6g %14.6g\n",
                          method_name(static_cast<Method>(m)), row[0].mean,
                          row[1].mean, row[2].mean);
            out << line;
            std::snprintf(line, sizeof(line), "  %-6s %14s %14s %14s\n", "",
                          parenthesized(row[0].stddev).c_str(),
                          parenthesized(row[1].stddev).c_str(),
                          parenthesized(row[2].stddev).c_str());
            out << line;
        }
    }
    return out.str();
}

std::string report_to_json_text(const CvReport& report) {
    nlohmann::json doc;
    doc["header"] = report.header;
    doc["block_dims"] = std::vector<double>(
        report.block_dims.data(),
        report.block_dims.data() + report.block_dims.size());
    doc["folds"] = report.folds;
    doc["support_size"] = report.support_size;
    doc["partition_seed"] = report.partition_seed;
    doc["support_seed"] = report.support_seed;
    doc["fold_test_counts"] = report.fold_test_counts;
    doc["min_fold_points"] = report.min_fold_points;
    doc["max_fold_points"] = report.max_fold_points;
    doc["skipped_folds"] = report.skipped_folds;
    doc["clamped_variances"] = report.clamped_variances;
    nlohmann::json tasks = nlohmann::json::array();
    for (std::size_t t = 0; t < report.task_names.size(); ++t) {
        nlohmann::json task;
        task["name"] = report.task_names[t];
        for (int m = 0; m < kMethodCount; ++m) {
            nlohmann::json method;
            for (int k = 0; k < kMetricCount; ++k) {
                const MetricStats& s = report.stats[t][m][k];
                nlohmann::json metric;
                metric["mean"] = s.mean;
                metric["std"] = s.stddev;
                metric["count"] = s.count;
                method[metric_name(static_cast<Metric>(k))] = std::move(metric);
            }
            method["nlp_excluded"] = report.nlp_excluded[t][m];
            task[method_name(static_cast<Method>(m))] = std::move(method);
        }
        tasks.push_back(std::move(task));
    }
    doc["tasks"] = std::move(tasks);
    nlohmann::json prints = nlohmann::json::array();
    for (const auto& fp : report.support_fingerprints) {
        prints.push_back({fp[0], fp[1], fp[2]});
    }
    doc["support_fingerprints"] = std::move(prints);
    return doc.dump(2) + "\n";
}

void write_point_dump(std::ostream& out, const CvReport& report) {
    const Eigen::Index d =
        report.points.empty() ? 0 : report.points.front().coords.size();
    out << "fold,method,task";
    for (Eigen::Index k = 0; k < d; ++k) out << ",c" << k;
    out << ",truth,mean,variance,se,nlp,nlp_excluded\n";
    for (const auto& rec : report.points) {
        out << rec.fold << ',' << method_name(rec.method) << ','
            << report.task_names[rec.task];
        for (Eigen::Index k = 0; k < rec.coords.size(); ++k) {
            out << ',' << format_double(rec.coords[k]);
        }
        out << ',' << format_double(rec.truth) << ',' << format_double(rec.mean)
            << ',' << format_double(rec.variance) << ','
            << format_double(rec.se) << ',' << format_double(rec.nlp) << ','
            << (rec.nlp_excluded ? 1 : 0) << '\n';
    }
}

}  // namespace mtgp
