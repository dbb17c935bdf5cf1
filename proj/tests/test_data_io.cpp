#include <doctest.h>

#include <charconv>
#include <unistd.h>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtgp/data_io.hpp"
#include "support/oracles.hpp"

using namespace mtgp;

namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& stem) {
    static int counter = 0;
    return fs::temp_directory_path() /
           (stem + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("dataset construction and centering") {
    Points pts(3, 3);
    pts << 0, 0, 0, 1, 0, 0, 0, 2, 0;
    Eigen::VectorXd v(3);
    v << 1.0, 2.0, 6.0;
    const TaskDataset ds = TaskDataset::from_raw("E1", pts, v);
    CHECK(ds.center_offset == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(std::abs(ds.centered_values().mean()) <= 1e-10 * 3.0);

    Eigen::VectorXd bad(3);
    bad << 1.0, std::nan(""), 2.0;
    CHECK_THROWS_AS(TaskDataset::from_raw("E1", pts, bad), ArgumentError);
}

TEST_CASE("csv ingestion") {
    SUBCASE("three rows, one task") {
        const auto path = temp_file("basic.csv");
        write_text(path,
                   "east,north,depth,E1\n"
                   "0,0,0,1.5\n"
                   "1,0,0,2.5\n"
                   "0,1,0,3.5\n");
        const auto tasks = load_csv(path.string());
        REQUIRE(tasks.size() == 1);
        CHECK(tasks[0].name == "E1");
        CHECK(tasks[0].points.rows() == 3);
        CHECK(tasks[0].values[2] == 3.5);
    }
    SUBCASE("missing values drop rows per task only") {
        const auto path = temp_file("missing.csv");
        write_text(path,
                   "east,north,depth,E1,E2\n"
                   "0,0,0,1.0,2.0\n"
                   "1,0,0,1.1,\n"
                   "2,0,0,1.2,NaN\n"
                   "3,0,0,1.3,2.3\n");
        const auto tasks = load_csv(path.string());
        REQUIRE(tasks.size() == 2);
        CHECK(tasks[0].points.rows() == 4);
        CHECK(tasks[1].points.rows() == 2);
        CHECK(tasks[1].values[1] == 2.3);
    }
    SUBCASE("crlf line endings and explicit mapping") {
        const auto path = temp_file("crlf.csv");
        write_text(path, "east,north,depth,E1,E2\r\n0,0,0,1,9\r\n1,1,1,2,8\r\n");
        CsvColumnMapping mapping;
        mapping.value_columns = {"E2"};
        const auto tasks = load_csv(path.string(), mapping);
        REQUIRE(tasks.size() == 1);
        CHECK(tasks[0].name == "E2");
        CHECK(tasks[0].values[0] == 9.0);
    }
    SUBCASE("writer and reader round trip exactly") {
        Rng rng(3);
        const int n = 10000;
        Points pts = oracles::random_points(rng, n, 3, 1000.0);
        Eigen::VectorXd v1(n), v2(n);
        for (int i = 0; i < n; ++i) {
            v1[i] = rng.normal() * 1e3;
            v2[i] = rng.normal() * 1e-3;
        }
        const std::vector<TaskDataset> tasks{
            TaskDataset::from_raw("E1", pts, v1),
            TaskDataset::from_raw("E2", pts, v2)};
        const auto path = temp_file("roundtrip.csv");
        write_csv(path.string(), tasks);
        const auto loaded = load_csv(path.string());
        REQUIRE(loaded.size() == 2);
        CHECK(loaded[0].points == tasks[0].points);
        CHECK(loaded[0].values == tasks[0].values);
        CHECK(loaded[1].values == tasks[1].values);
    }
    SUBCASE("errors carry row and column information") {
        const auto path = temp_file("badcell.csv");
        write_text(path, "east,north,depth,E1\n0,0,0,1.0\n1,0,zzz,2.0\n");
        try {
            load_csv(path.string());
            FAIL("expected IoError");
        } catch (const IoError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("row 3") != std::string::npos);
            CHECK(msg.find("column 3") != std::string::npos);
        }
    }
    SUBCASE("empty and header-only files are rejected") {
        const auto empty = temp_file("empty.csv");
        write_text(empty, "");
        CHECK_THROWS_AS(load_csv(empty.string()), IoError);
        const auto header_only = temp_file("header.csv");
        write_text(header_only, "east,north,depth,E1\n");
        CHECK_THROWS_AS(load_csv(header_only.string()), IoError);
    }
    SUBCASE("format_double parses back exactly") {
        Rng rng(5);
        for (int i = 0; i < 1000; ++i) {
            const double v = std::ldexp(rng.normal(), int(rng.below(40)) - 20);
            const std::string s = format_double(v);
            double back = 0.0;
            std::from_chars(s.data(), s.data() + s.size(), back);
            CHECK(back == v);
        }
    }
}

TEST_CASE("model archive") {
    ModelArchive archive;
    archive.kind = "mtgp";
    archive.task_names = {"E1", "E2"};
    KernelParams p1;
    p1.family = KernelFamily::matern3;
    p1.length_scales = Eigen::Vector3d(1.0, 2.0, 0.5);
    KernelParams p2;
    p2.family = KernelFamily::sqexp;
    p2.length_scales = Eigen::Vector3d(0.31, 1.7, 2.9);
    archive.params = {p1, p2};
    archive.similarity_factor = Eigen::MatrixXd(2, 2);
    archive.similarity_factor << 1.1, 0.0, -0.4, 0.9;
    archive.noise_variances = Eigen::Vector2d(0.01, 0.02);
    archive.center_offsets = Eigen::Vector2d(5.5, -1.25);
    Rng rng(7);
    Points pts = oracles::random_points(rng, 20, 3);
    Eigen::VectorXd v(20);
    for (int i = 0; i < 20; ++i) v[i] = rng.normal();
    const std::vector<TaskDataset> data{TaskDataset::from_raw("E1", pts, v),
                                        TaskDataset::from_raw("E2", pts, v)};
    archive.data_fingerprint = fingerprint(data);

    SUBCASE("save, load, save is byte-identical") {
        const auto path1 = temp_file("model1.json");
        const auto path2 = temp_file("model2.json");
        save_model(path1.string(), archive);
        const ModelArchive loaded = load_model(path1.string());
        save_model(path2.string(), loaded);
        CHECK(read_text(path1) == read_text(path2));
        CHECK(loaded.params[0].length_scales == p1.length_scales);
        CHECK(loaded.similarity_factor == archive.similarity_factor);
        CHECK(loaded.data_fingerprint.content_hash ==
              archive.data_fingerprint.content_hash);
    }
    SUBCASE("negative noise is rejected on load") {
        auto bad = archive;
        bad.noise_variances[1] = -0.5;
        const auto path = temp_file("badnoise.json");
        save_model(path.string(), bad);
        CHECK_THROWS_AS(load_model(path.string()), IoError);
    }
    SUBCASE("fingerprint mismatch is reported") {
        CHECK(!fingerprint_mismatch(archive, data).has_value());
        auto other = data;
        other[0].values[3] += 1.0;
        CHECK(fingerprint_mismatch(archive, other).has_value());
    }
    SUBCASE("round trip preserves posteriors") {
        const auto path = temp_file("model3.json");
        save_model(path.string(), archive);
        const ModelArchive loaded = load_model(path.string());

        std::vector<TaskData> tdata;
        for (const auto& ds : data) tdata.push_back(ds.training_view());
        MtgpModel before(archive.params, TaskSimilarity(archive.similarity_factor),
                         archive.noise_variances, tdata);
        MtgpModel after(loaded.params, TaskSimilarity(loaded.similarity_factor),
                        loaded.noise_variances, tdata);
        const Points test = oracles::random_points(rng, 100, 3);
        for (int t = 0; t < 2; ++t) {
            const Posterior a = before.posterior(t, test);
            const Posterior b = after.posterior(t, test);
            CHECK(a.mean == b.mean);
            CHECK(a.variance == b.variance);
        }
    }
    SUBCASE("gpi archives carry signal variances") {
        ModelArchive gpi = archive;
        gpi.kind = "gpi";
        gpi.similarity_factor.resize(0, 0);
        gpi.params[0].signal_variance = 2.5;
        gpi.params[1].signal_variance = 0.75;
        const auto path = temp_file("gpi.json");
        save_model(path.string(), gpi);
        const ModelArchive loaded = load_model(path.string());
        CHECK(loaded.kind == "gpi");
        CHECK(loaded.params[0].signal_variance == 2.5);
        CHECK(loaded.params[1].signal_variance == 0.75);
    }
    SUBCASE("unknown version is rejected") {
        auto bad = archive;
        bad.version = 2;
        const auto path = temp_file("badversion.json");
        CHECK_THROWS_AS(save_model(path.string(), bad), ArgumentError);
        // hand-edit the version field on disk
        save_model(path.string(), archive);
        std::string text = read_text(path);
        const auto pos = text.find("\"format_version\": 1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 19, "\"format_version\": 9");
        write_text(path, text);
        CHECK_THROWS_AS(load_model(path.string()), IoError);
    }
}

TEST_CASE("sine demo generator") {
    SUBCASE("no gap and no noise inverts the dense task") {
        SineDemoConfig config;
        config.n_dense = 25;
        config.n_sparse = 25;
        config.gap_lo = 1.0;
        config.gap_hi = 1.0;  // disabled
        config.noise = 0.0;
        auto [a, b] = gen_sine_demo(config);
        REQUIRE(a.points.rows() == 25);
        REQUIRE(b.points.rows() == 25);
        CHECK(a.points == b.points);
        for (int i = 0; i < 25; ++i) {
            CHECK(b.values[i] == -a.values[i]);
        }
    }
    SUBCASE("gap excludes sparse samples") {
        SineDemoConfig config;
        auto [a, b] = gen_sine_demo(config);
        CHECK(a.points.rows() == config.n_dense);
        CHECK(b.points.rows() < config.n_sparse);
        for (int i = 0; i < b.points.rows(); ++i) {
            CHECK((b.points(i, 0) < config.gap_lo ||
                   b.points(i, 0) > config.gap_hi));
        }
    }
    SUBCASE("deterministic per seed") {
        SineDemoConfig config;
        config.seed = 42;
        auto [a1, b1] = gen_sine_demo(config);
        auto [a2, b2] = gen_sine_demo(config);
        CHECK(a1.values == a2.values);
        CHECK(b1.values == b2.values);
        config.seed = 43;
        auto [a3, b3] = gen_sine_demo(config);
        CHECK(a1.values != a3.values);
    }
}

TEST_CASE("correlated field generator") {
    SUBCASE("identity mixing gives near-independent tasks") {
        CorrelatedFieldConfig config;
        config.grid_dims = {12, 10, 10};
        config.task_count = 2;
        config.noise = 0.0;
        config.seed = 9;
        const auto tasks = gen_correlated_field(config);
        REQUIRE(tasks.size() == 2);
        const Eigen::VectorXd a = tasks[0].centered_values();
        const Eigen::VectorXd b = tasks[1].centered_values();
        const double corr = a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm());
        CHECK(std::abs(corr) < 0.1);
    }
    SUBCASE("equal mixing rows duplicate the task values before noise") {
        CorrelatedFieldConfig config;
        config.grid_dims = {6, 5, 5};
        config.task_count = 2;
        config.noise = 0.0;
        config.mixing = Eigen::MatrixXd(2, 2);
        config.mixing << 0.8, 0.6, 0.8, 0.6;
        const auto tasks = gen_correlated_field(config);
        CHECK(tasks[0].values == tasks[1].values);
    }
    SUBCASE("wide spacing decorrelates neighbours") {
        CorrelatedFieldConfig config;
        config.grid_dims = {10, 8, 40};
        config.task_count = 1;
        config.noise = 0.0;
        config.spacing = Eigen::Vector3d(5.0, 5.0, 5.0);
        config.latent_length_scales = Eigen::Vector3d(0.2, 0.2, 0.2);
        const auto tasks = gen_correlated_field(config);
        const Eigen::VectorXd v = tasks[0].centered_values();
        const int nz = 40;
        double num = 0.0, den = 0.0;
        for (int i = 0; i + 1 < v.size(); ++i) {
            if ((i + 1) % nz == 0) continue;  // do not cross slab boundaries
            num += v[i] * v[i + 1];
            den += v[i] * v[i];
        }
        CHECK(std::abs(num / den) < 0.2);
    }
    SUBCASE("known coupling shows up empirically") {
        CorrelatedFieldConfig config;
        config.grid_dims = {12, 10, 10};
        config.task_count = 2;
        config.noise = 0.05;
        config.mixing = Eigen::MatrixXd(2, 2);
        config.mixing << 1.0, 0.0, 0.9, std::sqrt(1 - 0.81);
        config.seed = 11;
        const auto tasks = gen_correlated_field(config);
        const Eigen::VectorXd a = tasks[0].centered_values();
        const Eigen::VectorXd b = tasks[1].centered_values();
        const double corr = a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm());
        CHECK(corr > 0.6);
    }
}

TEST_CASE("grid prediction export") {
    KernelParams params;
    params.family = KernelFamily::sqexp;
    params.length_scales = Eigen::Vector3d(1.0, 1.0, 1.0);
    Points train(1, 3);
    train << 1.0, 2.0, 3.0;
    Eigen::VectorXd z(1);
    z << 4.0;
    GpModel model(params, CovarianceMode::single, 0.0, 0.0, train, z);
    const PredictFn predict = [&](const Points& pts) {
        return model.posterior(pts);
    };

    SUBCASE("single-cell grid samples the box center") {
        GridSpec spec;
        spec.lo = Eigen::Vector3d(0.0, 0.0, 0.0);
        spec.hi = Eigen::Vector3d(2.0, 4.0, 6.0);
        const auto path = temp_file("grid1.csv");
        export_grid_predictions(spec, predict, path.string());
        const std::string text = read_text(path);
        std::istringstream in(text);
        std::string header, row;
        std::getline(in, header);
        CHECK(header == "east,north,depth,mean,variance");
        std::getline(in, row);
        CHECK(row.substr(0, 6) == "1,2,3,");  // box center == training point
        CHECK(!std::getline(in, row));
        // noise-free model at its training point: variance ~ 0
        const Posterior at = model.posterior(train);
        CHECK(at.variance[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
    }
    SUBCASE("full grid matches direct posterior calls") {
        GridSpec spec;
        spec.lo = Eigen::Vector3d(0.0, 0.0, 0.0);
        spec.hi = Eigen::Vector3d(2.0, 2.0, 2.0);
        spec.resolution = {20, 20, 5};
        const auto path = temp_file("grid2.csv");
        export_grid_predictions(spec, predict, path.string());
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        int rows = 0;
        const Points pts = grid_points(spec);
        const Posterior direct = model.posterior(pts);
        while (std::getline(in, line)) {
            const auto last_comma = line.rfind(',');
            const auto prev_comma = line.rfind(',', last_comma - 1);
            double mean = 0.0, var = 0.0;
            std::from_chars(line.data() + prev_comma + 1,
                            line.data() + last_comma, mean);
            std::from_chars(line.data() + last_comma + 1,
                            line.data() + line.size(), var);
            CHECK(mean == direct.mean[rows]);
            CHECK(var == direct.variance[rows]);
            ++rows;
        }
        CHECK(rows == 2000);
    }
    SUBCASE("oversized grids are refused") {
        GridSpec spec;
        spec.lo = Eigen::Vector3d::Zero();
        spec.hi = Eigen::Vector3d::Ones();
        spec.resolution = {1000, 1000, 1000};
        const auto path = temp_file("grid3.csv");
        CHECK_THROWS_AS(export_grid_predictions(spec, predict, path.string()),
                        ArgumentError);
    }
}
