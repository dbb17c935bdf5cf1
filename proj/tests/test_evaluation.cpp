#include <doctest.h>

#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "mtgp/evaluation.hpp"
#include "support/oracles.hpp"

using namespace mtgp;

namespace {

Points column(std::initializer_list<double> xs) {
    Points p(xs.size(), 1);
    int i = 0;
    for (double x : xs) p(i++, 0) = x;
    return p;
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
    Eigen::VectorXd v(xs.size());
    int i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

BlockSpec spec3(double bx, double by, double bz, int folds, std::uint64_t seed) {
    BlockSpec s;
    s.block_dims = Eigen::Vector3d(bx, by, bz);
    s.folds = folds;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("block partition") {
    SUBCASE("blocks covering the extent put everything in one fold") {
        Rng rng(3);
        const Points pts = oracles::random_points(rng, 50, 3, 10.0);
        const FoldPlan plan = block_partition(pts, spec3(100, 100, 100, 5, 1));
        int nonempty = 0;
        for (int c : plan.fold_counts) nonempty += c > 0;
        CHECK(nonempty == 1);
        CHECK(*std::max_element(plan.fold_counts.begin(),
                                plan.fold_counts.end()) == 50);
    }
    SUBCASE("one point per block deals folds evenly") {
        Points pts(20, 3);
        for (int i = 0; i < 20; ++i) {
            pts(i, 0) = i * 10.0;
            pts(i, 1) = 0.0;
            pts(i, 2) = 0.0;
        }
        const FoldPlan plan = block_partition(pts, spec3(1, 1, 1, 4, 7));
        for (int c : plan.fold_counts) CHECK(c == 5);
    }
    SUBCASE("partition is disjoint and exhaustive") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            const int n = 30 + static_cast<int>(rng.below(200));
            const Points pts = oracles::random_points(rng, n, 3, 50.0);
            BlockSpec spec = spec3(rng.uniform(1.0, 20.0), rng.uniform(1.0, 20.0),
                                   rng.uniform(1.0, 20.0),
                                   2 + static_cast<int>(rng.below(9)),
                                   rng.below(1000));
            const FoldPlan plan = block_partition(pts, spec);
            REQUIRE(static_cast<int>(plan.fold_of.size()) == n);
            int sum = 0;
            for (int c : plan.fold_counts) sum += c;
            CHECK(sum == n);
            for (int f : plan.fold_of) {
                CHECK(f >= 0);
                CHECK(f < spec.folds);
            }
        }
    }
    SUBCASE("degenerate axis extent is allowed") {
        Points pts(10, 3);
        for (int i = 0; i < 10; ++i) {
            pts(i, 0) = i;
            pts(i, 1) = 2.5;   // constant
            pts(i, 2) = 0.0;   // constant
        }
        CHECK_NOTHROW(block_partition(pts, spec3(2, 1, 1, 3, 0)));
    }
    SUBCASE("fold-size spread widens with block size on a grid") {
        CorrelatedFieldConfig config;
        config.grid_dims = {20, 20, 5};
        config.task_count = 1;
        config.seed = 13;
        const auto tasks = gen_correlated_field(config);
        int prev_spread = -1;
        for (double b : {1.0, 4.0, 10.0}) {
            const FoldPlan plan =
                block_partition(tasks[0].points, spec3(b, b, b, 10, 3));
            int sum = 0;
            for (int c : plan.fold_counts) sum += c;
            CHECK(sum == 2000);
            const int spread =
                *std::max_element(plan.fold_counts.begin(),
                                  plan.fold_counts.end()) -
                *std::min_element(plan.fold_counts.begin(),
                                  plan.fold_counts.end());
            CHECK(spread >= prev_spread);
            prev_spread = spread;
        }
        CHECK(prev_spread > 0);
    }
    SUBCASE("argument validation") {
        Points pts(0, 3);
        CHECK_THROWS_AS(block_partition(pts, spec3(1, 1, 1, 2, 0)),
                        ArgumentError);
        Points one(1, 3);
        one << 0, 0, 0;
        CHECK_THROWS_AS(block_partition(one, spec3(1, 1, 1, 1, 0)),
                        ArgumentError);
        CHECK_THROWS_AS(block_partition(one, spec3(0, 1, 1, 2, 0)),
                        ArgumentError);
        BlockSpec wrong_dim;
        wrong_dim.block_dims = Eigen::VectorXd::Ones(2);
        wrong_dim.folds = 2;
        CHECK_THROWS_AS(block_partition(one, wrong_dim), ArgumentError);
    }
}

TEST_CASE("metric formulas") {
    CHECK(squared_error(3.0, 3.0) == 0.0);
    CHECK(squared_error(1.0, -1.0) == 4.0);
    CHECK(variance_metric(0.7) == 0.7);
    const double inv2pi = 1.0 / (2.0 * std::numbers::pi);
    CHECK(std::abs(negative_log_probability(2.0, inv2pi, 2.0)) <= 1e-12);
    const double err = 1.0 / std::sqrt(std::numbers::pi);
    CHECK(std::abs(negative_log_probability(err, inv2pi, 0.0) - 1.0) <= 1e-12);
    CHECK_THROWS_AS(negative_log_probability(0.0, 0.0, 0.0), MetricError);
    CHECK_THROWS_AS(negative_log_probability(0.0, -1.0, 0.0), MetricError);
}

TEST_CASE("metric aggregation") {
    const std::vector<double> values{1.0, 2.0, 3.0, 4.0};
    const MetricStats stats = aggregate(values);
    CHECK(stats.mean == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(stats.stddev == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));
    CHECK(stats.count == 4);
    const MetricStats empty = aggregate({});
    CHECK(empty.count == 0);
    CHECK(empty.mean == 0.0);
}

namespace {

// shared toy setup: one task, four 1D points, two folds of two points each
struct ToyCase {
    std::vector<TaskDataset> data;
    MtgpParamSet mtgp;
    GpiParamSet gpi;
    BlockSpec spec;
    CvConfig config;
};

ToyCase make_toy() {
    ToyCase toy;
    Points pts4(4, 1);
    pts4 << 0.0, 1.0, 10.0, 11.0;
    toy.data = {TaskDataset::from_raw("E1", pts4, vec({1.0, 2.0, -1.0, 0.5}))};

    KernelParams kp;
    kp.family = KernelFamily::sqexp;
    kp.length_scales = Eigen::VectorXd::Constant(1, 1.5);
    Eigen::MatrixXd l(1, 1);
    l << 0.8;
    toy.mtgp = MtgpParamSet{{kp}, TaskSimilarity(l),
                            Eigen::VectorXd::Constant(1, 0.05)};
    KernelParams gp = kp;
    gp.signal_variance = 1.3;
    toy.gpi = GpiParamSet{{gp}, Eigen::VectorXd::Constant(1, 0.07)};

    toy.spec.block_dims = Eigen::VectorXd::Constant(1, 0.5);
    toy.spec.folds = 2;
    toy.spec.seed = 5;
    toy.config.support_size = 10;
    toy.config.seed = 5;
    return toy;
}

// closed-form posterior from two support points, by adjugate inverse
void two_point_posterior(double k11, double k12, double k22, double ks1,
                         double ks2, double kss, double z1, double z2,
                         double* mean, double* var) {
    const double det = k11 * k22 - k12 * k12;
    const double i11 = k22 / det, i22 = k11 / det, i12 = -k12 / det;
    *mean = ks1 * (i11 * z1 + i12 * z2) + ks2 * (i12 * z1 + i22 * z2);
    *var = kss - (ks1 * (i11 * ks1 + i12 * ks2) + ks2 * (i12 * ks1 + i22 * ks2));
}

}  // namespace

TEST_CASE("cross validation on the 4-point toy matches a hand oracle") {
    const ToyCase toy = make_toy();
    const CvReport report = run_cross_validation(toy.data, toy.mtgp, toy.gpi,
                                                 toy.spec, toy.config);
    // recover the fold layout the report used
    const FoldPlan plan = block_partition(toy.data[0].points, toy.spec);
    const double offset = toy.data[0].center_offset;
    const double l = 1.5;
    const double kf = 0.8 * 0.8;
    const double sf2 = 1.3;
    const double noise_m = 0.05;
    const double noise_g = 0.07;

    const auto auto_cov = [&](double xa, double xb) {
        const double r = (xa - xb) / l;
        return kf * std::sqrt(std::numbers::pi) * l * std::exp(-0.25 * r * r);
    };
    const auto single_cov = [&](double xa, double xb) {
        const double r = (xa - xb) / l;
        return sf2 * std::exp(-0.5 * r * r);
    };

    std::vector<double> se[kMethodCount], var[kMethodCount], nlp[kMethodCount];
    for (int fold = 0; fold < 2; ++fold) {
        std::vector<int> test, sup;
        for (int i = 0; i < 4; ++i) {
            (plan.fold_of[i] == fold ? test : sup).push_back(i);
        }
        REQUIRE(test.size() == 2);
        const auto x = [&](int i) { return toy.data[0].points(i, 0); };
        const auto zc = [&](int i) { return toy.data[0].values[i] - offset; };
        for (int ti : test) {
            // MTGP == derived GP for a single task
            double mean, variance;
            two_point_posterior(
                auto_cov(x(sup[0]), x(sup[0])) + noise_m,
                auto_cov(x(sup[0]), x(sup[1])),
                auto_cov(x(sup[1]), x(sup[1])) + noise_m,
                auto_cov(x(ti), x(sup[0])), auto_cov(x(ti), x(sup[1])),
                auto_cov(x(ti), x(ti)) + noise_m, zc(sup[0]), zc(sup[1]), &mean,
                &variance);
            mean += offset;
            for (int m : {0, 1}) {
                se[m].push_back(squared_error(mean, toy.data[0].values[ti]));
                var[m].push_back(variance);
                nlp[m].push_back(negative_log_probability(
                    mean, variance, toy.data[0].values[ti]));
            }
            two_point_posterior(
                single_cov(x(sup[0]), x(sup[0])) + noise_g,
                single_cov(x(sup[0]), x(sup[1])),
                single_cov(x(sup[1]), x(sup[1])) + noise_g,
                single_cov(x(ti), x(sup[0])), single_cov(x(ti), x(sup[1])),
                single_cov(x(ti), x(ti)) + noise_g, zc(sup[0]), zc(sup[1]),
                &mean, &variance);
            mean += offset;
            se[2].push_back(squared_error(mean, toy.data[0].values[ti]));
            var[2].push_back(variance);
            nlp[2].push_back(
                negative_log_probability(mean, variance, toy.data[0].values[ti]));
        }
    }
    for (int m = 0; m < kMethodCount; ++m) {
        const MetricStats want_se = aggregate(se[m]);
        const MetricStats want_var = aggregate(var[m]);
        const MetricStats want_nlp = aggregate(nlp[m]);
        CHECK(report.stats[0][m][0].mean ==
              doctest::Approx(want_se.mean).epsilon(1e-10));
        CHECK(report.stats[0][m][1].mean ==
              doctest::Approx(want_var.mean).epsilon(1e-10));
        CHECK(report.stats[0][m][2].mean ==
              doctest::Approx(want_nlp.mean).epsilon(1e-10));
        CHECK(report.stats[0][m][0].stddev ==
              doctest::Approx(want_se.stddev).epsilon(1e-9));
    }
}

TEST_CASE("zero coupling with matched parameters makes all methods agree") {
    Rng rng(31);
    CorrelatedFieldConfig field;
    field.grid_dims = {8, 6, 6};
    field.task_count = 2;
    field.noise = 0.1;
    field.seed = 17;
    const auto data = gen_correlated_field(field);

    const double l = 2.0;
    KernelParams kp;
    kp.family = KernelFamily::sqexp;
    kp.length_scales = Eigen::Vector3d::Constant(l);
    Eigen::MatrixXd lf = Eigen::MatrixXd::Zero(2, 2);
    lf(0, 0) = 0.6;
    lf(1, 1) = 0.9;
    MtgpParamSet mtgp{{kp, kp}, TaskSimilarity(lf),
                      Eigen::Vector2d(0.01, 0.01)};

    // GPI with the derived auto-covariance re-expressed as a plain SQEXP:
    // amplitude kf * pi^(d/2) * prod(l), length scales sqrt(2) * l
    GpiParamSet gpi;
    for (int t = 0; t < 2; ++t) {
        KernelParams gp = kp;
        gp.length_scales = Eigen::Vector3d::Constant(l * std::sqrt(2.0));
        gp.signal_variance = lf(t, t) * lf(t, t) *
                             std::pow(std::numbers::pi, 1.5) * l * l * l;
        gpi.params.push_back(gp);
    }
    gpi.noise_variances = Eigen::Vector2d(0.01, 0.01);

    BlockSpec spec = spec3(2, 2, 2, 4, 3);
    CvConfig config;
    config.support_size = 80;
    config.seed = 3;
    const CvReport report = run_cross_validation(data, mtgp, gpi, spec, config);
    for (int t = 0; t < 2; ++t) {
        for (int k = 0; k < kMetricCount; ++k) {
            const double m0 = report.stats[t][0][k].mean;
            CHECK(report.stats[t][1][k].mean ==
                  doctest::Approx(m0).epsilon(1e-8));
            CHECK(report.stats[t][2][k].mean ==
                  doctest::Approx(m0).epsilon(1e-8));
        }
    }
    // identical-support guarantee
    for (const auto& fp : report.support_fingerprints) {
        CHECK(fp[0] == fp[1]);
        CHECK(fp[1] == fp[2]);
    }
}

TEST_CASE("point dump reproduces the report") {
    ToyCase toy = make_toy();
    toy.config.dump_points = true;
    const CvReport report = run_cross_validation(toy.data, toy.mtgp, toy.gpi,
                                                 toy.spec, toy.config);
    std::ostringstream dump;
    write_point_dump(dump, report);

    // parse the dump and re-aggregate in file order
    std::istringstream in(dump.str());
    std::string line;
    std::getline(in, line);  // header
    std::map<std::pair<std::string, std::string>,
             std::array<std::vector<double>, kMetricCount>>
        grouped;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        REQUIRE(cells.size() == 10);
        const auto parse = [&](int idx) {
            double v = 0.0;
            std::from_chars(cells[idx].data(),
                            cells[idx].data() + cells[idx].size(), v);
            return v;
        };
        auto& streams = grouped[{cells[1], cells[2]}];
        streams[0].push_back(parse(7));   // se
        streams[1].push_back(parse(6));   // variance
        if (cells[9] == "0") streams[2].push_back(parse(8));  // nlp
    }
    for (int m = 0; m < kMethodCount; ++m) {
        const auto key = std::make_pair(
            std::string(method_name(static_cast<Method>(m))),
            report.task_names[0]);
        REQUIRE(grouped.count(key) == 1);
        for (int k = 0; k < kMetricCount; ++k) {
            const MetricStats again = aggregate(grouped[key][k]);
            CHECK(again.mean == report.stats[0][m][k].mean);
            CHECK(again.stddev == report.stats[0][m][k].stddev);
            CHECK(again.count == report.stats[0][m][k].count);
        }
    }
}

TEST_CASE("report formatting") {
    ToyCase toy = make_toy();
    const CvReport report = run_cross_validation(toy.data, toy.mtgp, toy.gpi,
                                                 toy.spec, toy.config);
    const std::string table = format_report_table(report);
    CHECK(table.find("MTGP") != std::string::npos);
    CHECK(table.find("GPI") != std::string::npos);
    CHECK(table.find("task E1") != std::string::npos);

    const std::string json_text = report_to_json_text(report);
    CHECK(json_text.find("\"SE\"") != std::string::npos);
    CHECK(json_text.find("runtime") == std::string::npos);

    // byte-identical on a rerun (runtime excluded from serialization)
    const CvReport again = run_cross_validation(toy.data, toy.mtgp, toy.gpi,
                                                toy.spec, toy.config);
    CHECK(report_to_json_text(again) == json_text);
    CHECK(format_report_table(again) == table);
}

TEST_CASE("cross validation argument errors") {
    ToyCase toy = make_toy();
    CHECK_THROWS_AS(run_cross_validation({}, toy.mtgp, toy.gpi, toy.spec,
                                         toy.config),
                    ArgumentError);
    auto bad_gpi = toy.gpi;
    bad_gpi.params.clear();
    CHECK_THROWS_AS(run_cross_validation(toy.data, toy.mtgp, bad_gpi, toy.spec,
                                         toy.config),
                    ArgumentError);
    auto bad_config = toy.config;
    bad_config.support_size = 0;
    CHECK_THROWS_AS(run_cross_validation(toy.data, toy.mtgp, toy.gpi, toy.spec,
                                         bad_config),
                    ArgumentError);
}
