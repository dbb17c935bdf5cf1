#include "mtgp/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mtgp/errors.hpp"
#include "mtgp/rng.hpp"

namespace mtgp {

namespace {

using nlohmann::json;

std::uint64_t fnv1a(std::uint64_t hash, const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::uint64_t fnv1a_double(std::uint64_t hash, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    return fnv1a(hash, &bits, sizeof(bits));
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string::size_type start = 0;
    for (;;) {
        auto pos = line.find(',', start);
        if (pos == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!cells.empty() && !cells.back().empty() && cells.back().back() == '\r') {
        cells.back().pop_back();
    }
    return cells;
}

bool is_missing(const std::string& cell) {
    if (cell.empty()) return true;
    return cell == "NaN" || cell == "nan" || cell == "NAN";
}

double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
    double value = 0.0;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    while (ptr != end && (*ptr == ' ' || *ptr == '\t')) ++ptr;
    if (ec != std::errc() || ptr != end) {
        std::ostringstream msg;
        msg << "unparseable numeric cell '" << cell << "' at row " << row
            << ", column " << (col + 1);
        throw IoError(msg.str());
    }
    return value;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

TaskDataset TaskDataset::from_raw(std::string name, Points points,
                                  Eigen::VectorXd values) {
    if (points.rows() != values.size()) {
        throw ArgumentError("task '" + name +
                            "': point and value counts differ");
    }
    if (points.rows() == 0) {
        throw ArgumentError("task '" + name + "' has no observations");
    }
    if (!points.allFinite() || !values.allFinite()) {
        throw ArgumentError("task '" + name + "' contains non-finite entries");
    }
    TaskDataset ds;
    ds.name = std::move(name);
    ds.points = std::move(points);
    ds.values = std::move(values);
    ds.center_offset = ds.values.mean();
    return ds;
}

std::vector<TaskDataset> load_csv(const std::string& path,
                                  const CsvColumnMapping& mapping) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line) || line.empty()) {
        throw IoError("'" + path + "' is empty or lacks a header row");
    }
    const std::vector<std::string> header = split_line(line);

    auto column_of = [&](const std::string& name) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (header[c] == name) return static_cast<int>(c);
        }
        throw IoError("'" + path + "' has no column '" + name + "'");
    };

    std::vector<int> coord_cols;
    for (const auto& c : mapping.coordinates) coord_cols.push_back(column_of(c));

    std::vector<std::string> value_names = mapping.value_columns;
    if (value_names.empty()) {
        for (const auto& name : header) {
            if (std::find(mapping.coordinates.begin(), mapping.coordinates.end(),
                          name) == mapping.coordinates.end()) {
                value_names.push_back(name);
            }
        }
    }
    if (value_names.empty()) {
        throw IoError("'" + path + "' maps to no value columns");
    }
    std::vector<int> value_cols;
    for (const auto& name : value_names) value_cols.push_back(column_of(name));

    const std::size_t ntasks = value_names.size();
    std::vector<std::vector<double>> coords(ntasks);
    std::vector<std::vector<double>> vals(ntasks);

    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> cells = split_line(line);
        if (cells.size() < header.size()) {
            throw IoError("row " + std::to_string(row) + " of '" + path +
                          "' has too few columns");
        }
        double xyz[3];
        for (int k = 0; k < 3; ++k) {
            xyz[k] = parse_cell(cells[coord_cols[k]], row, coord_cols[k]);
        }
        for (std::size_t t = 0; t < ntasks; ++t) {
            const std::string& cell = cells[value_cols[t]];
            if (is_missing(cell)) continue;
            const double v = parse_cell(cell, row, value_cols[t]);
            coords[t].insert(coords[t].end(), xyz, xyz + 3);
            vals[t].push_back(v);
        }
    }

    std::vector<TaskDataset> out;
    out.reserve(ntasks);
    for (std::size_t t = 0; t < ntasks; ++t) {
        if (vals[t].empty()) {
            throw IoError("task '" + value_names[t] + "' in '" + path +
                          "' has no usable rows");
        }
        Points pts(vals[t].size(), 3);
        std::copy(coords[t].begin(), coords[t].end(), pts.data());
        Eigen::VectorXd v =
            Eigen::Map<Eigen::VectorXd>(vals[t].data(), vals[t].size());
        out.push_back(TaskDataset::from_raw(value_names[t], std::move(pts), v));
    }
    return out;
}

void write_csv(const std::string& path, const std::vector<TaskDataset>& tasks) {
    if (tasks.empty()) throw ArgumentError("nothing to write");
    const Points& pts = tasks[0].points;
    for (const auto& t : tasks) {
        if (t.points.rows() != pts.rows() || t.points != pts) {
            throw IoError(
                "CSV writer requires tasks sharing one coordinate set");
        }
    }
    if (pts.cols() != 3) {
        throw IoError("dataset CSV layout is 3-dimensional");
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "east,north,depth";
    for (const auto& t : tasks) out << ',' << t.name;
    out << '\n';
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        out << format_double(pts(i, 0)) << ',' << format_double(pts(i, 1)) << ','
            << format_double(pts(i, 2));
        for (const auto& t : tasks) out << ',' << format_double(t.values[i]);
        out << '\n';
    }
}

DataFingerprint fingerprint(const std::vector<TaskDataset>& tasks) {
    if (tasks.empty()) throw ArgumentError("fingerprint of empty data");
    const Eigen::Index d = tasks[0].points.cols();
    DataFingerprint fp;
    fp.bbox_lo = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::max());
    fp.bbox_hi = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::lowest());
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const auto& t : tasks) {
        if (t.points.cols() != d) {
            throw ArgumentError("tasks disagree on dimension");
        }
        fp.counts.push_back(t.points.rows());
        hash = fnv1a(hash, t.name.data(), t.name.size());
        for (Eigen::Index i = 0; i < t.points.rows(); ++i) {
            for (Eigen::Index k = 0; k < d; ++k) {
                hash = fnv1a_double(hash, t.points(i, k));
                fp.bbox_lo[k] = std::min(fp.bbox_lo[k], t.points(i, k));
                fp.bbox_hi[k] = std::max(fp.bbox_hi[k], t.points(i, k));
            }
            hash = fnv1a_double(hash, t.values[i]);
        }
    }
    fp.content_hash = hash;
    return fp;
}

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vector_from_json(const json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
    return v;
}

std::string hash_to_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace

void save_model(const std::string& path, const ModelArchive& archive) {
    const std::size_t nt = archive.params.size();
    if (archive.task_names.size() != nt ||
        static_cast<std::size_t>(archive.noise_variances.size()) != nt ||
        static_cast<std::size_t>(archive.center_offsets.size()) != nt) {
        throw ArgumentError("archive fields disagree on task count");
    }
    if (archive.kind != "mtgp" && archive.kind != "gpi") {
        throw ArgumentError("archive kind must be 'mtgp' or 'gpi'");
    }
    if (archive.version != 1) {
        throw ArgumentError("archive writer supports format version 1 only");
    }
    json doc;
    doc["format_version"] = archive.version;
    doc["kind"] = archive.kind;
    json tasks = json::array();
    for (std::size_t t = 0; t < nt; ++t) {
        const KernelParams& kp = archive.params[t];
        json task;
        task["name"] = archive.task_names[t];
        task["family"] = family_name(kp.family);
        task["length_scales"] = vector_to_json(kp.length_scales);
        if (kp.family == KernelFamily::nn) task["bias"] = kp.bias;
        if (archive.kind == "gpi") task["signal_variance"] = kp.signal_variance;
        task["noise_variance"] = archive.noise_variances[t];
        task["center_offset"] = archive.center_offsets[t];
        tasks.push_back(std::move(task));
    }
    doc["tasks"] = std::move(tasks);
    if (archive.kind == "mtgp") {
        json rows = json::array();
        for (Eigen::Index i = 0; i < archive.similarity_factor.rows(); ++i) {
            rows.push_back(vector_to_json(archive.similarity_factor.row(i)));
        }
        doc["similarity_factor"] = std::move(rows);
    }
    json fp;
    fp["counts"] = archive.data_fingerprint.counts;
    fp["bbox_lo"] = vector_to_json(archive.data_fingerprint.bbox_lo);
    fp["bbox_hi"] = vector_to_json(archive.data_fingerprint.bbox_hi);
    fp["content_hash"] = hash_to_hex(archive.data_fingerprint.content_hash);
    doc["data_fingerprint"] = std::move(fp);

    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << doc.dump(2) << '\n';
}

ModelArchive load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw IoError("'" + path + "' is not a valid model archive: " + e.what());
    }
    try {
        ModelArchive archive;
        archive.version = doc.at("format_version").get<int>();
        if (archive.version != 1) {
            throw IoError("unsupported archive version " +
                          std::to_string(archive.version));
        }
        archive.kind = doc.at("kind").get<std::string>();
        if (archive.kind != "mtgp" && archive.kind != "gpi") {
            throw IoError("unknown archive kind '" + archive.kind + "'");
        }
        const json& tasks = doc.at("tasks");
        const std::size_t nt = tasks.size();
        if (nt == 0) throw IoError("archive holds no tasks");
        archive.noise_variances.resize(nt);
        archive.center_offsets.resize(nt);
        for (std::size_t t = 0; t < nt; ++t) {
            const json& task = tasks[t];
            archive.task_names.push_back(task.at("name").get<std::string>());
            KernelParams kp;
            kp.family = family_from_name(task.at("family").get<std::string>());
            kp.length_scales = vector_from_json(task.at("length_scales"));
            if (kp.family == KernelFamily::nn) {
                kp.bias = task.at("bias").get<double>();
            }
            if (archive.kind == "gpi") {
                kp.signal_variance = task.at("signal_variance").get<double>();
            }
            validate_params(kp, kp.dim());
            archive.params.push_back(std::move(kp));
            archive.noise_variances[t] = task.at("noise_variance").get<double>();
            if (archive.noise_variances[t] < 0.0) {
                throw IoError("archive has a negative noise variance");
            }
            archive.center_offsets[t] = task.at("center_offset").get<double>();
        }
        if (archive.kind == "mtgp") {
            const json& rows = doc.at("similarity_factor");
            if (rows.size() != nt) {
                throw IoError("similarity factor does not match task count");
            }
            archive.similarity_factor.resize(nt, nt);
            for (std::size_t i = 0; i < nt; ++i) {
                if (rows[i].size() != nt) {
                    throw IoError("similarity factor is not square");
                }
                for (std::size_t j = 0; j < nt; ++j) {
                    archive.similarity_factor(i, j) = rows[i][j].get<double>();
                }
            }
        }
        const json& fp = doc.at("data_fingerprint");
        archive.data_fingerprint.counts =
            fp.at("counts").get<std::vector<std::int64_t>>();
        archive.data_fingerprint.bbox_lo = vector_from_json(fp.at("bbox_lo"));
        archive.data_fingerprint.bbox_hi = vector_from_json(fp.at("bbox_hi"));
        archive.data_fingerprint.content_hash = std::stoull(
            fp.at("content_hash").get<std::string>(), nullptr, 16);
        return archive;
    } catch (const json::exception& e) {
        throw IoError("'" + path + "' is not a valid model archive: " + e.what());
    } catch (const ParameterError& e) {
        throw IoError("'" + path + "' violates archive invariants: " + e.what());
    } catch (const ArgumentError& e) {
        throw IoError("'" + path + "' violates archive invariants: " + e.what());
    }
}

std::optional<std::string> fingerprint_mismatch(
    const ModelArchive& archive, const std::vector<TaskDataset>& data) {
    const DataFingerprint fp = fingerprint(data);
    const DataFingerprint& want = archive.data_fingerprint;
    if (fp.counts != want.counts) {
        return "data fingerprint mismatch: task sizes differ from the "
               "archive's training data";
    }
    if (fp.content_hash != want.content_hash) {
        return "data fingerprint mismatch: content hash differs from the "
               "archive's training data";
    }
    return std::nullopt;
}

std::pair<TaskDataset, TaskDataset> gen_sine_demo(const SineDemoConfig& config) {
    if (config.n_dense < 2 || config.n_sparse < 2) {
        throw ArgumentError("sine demo needs at least two samples per task");
    }
    if (!(config.domain_hi > config.domain_lo)) {
        throw ArgumentError("sine demo domain is empty");
    }
    if (config.noise < 0.0) throw ArgumentError("noise must be non-negative");
    const bool has_gap = config.gap_hi > config.gap_lo;

    auto linspace = [&](int n, int i) {
        return config.domain_lo +
               (config.domain_hi - config.domain_lo) * i / (n - 1);
    };

    Rng dense_rng(derive_seed(config.seed, 1));
    Points xa(config.n_dense, 1);
    Eigen::VectorXd za(config.n_dense);
    for (int i = 0; i < config.n_dense; ++i) {
        const double x = linspace(config.n_dense, i);
        xa(i, 0) = x;
        za[i] = std::sin(x) + config.noise * dense_rng.normal();
    }

    Rng sparse_rng(derive_seed(config.seed, 2));
    std::vector<double> xs;
    std::vector<double> zs;
    for (int i = 0; i < config.n_sparse; ++i) {
        const double x = linspace(config.n_sparse, i);
        const double noise = config.noise * sparse_rng.normal();
        if (has_gap && x >= config.gap_lo && x <= config.gap_hi) continue;
        xs.push_back(x);
        zs.push_back(-std::sin(x) + noise);
    }
    if (xs.empty()) {
        throw ArgumentError("gap interval removed every sparse-task sample");
    }
    Points xb(xs.size(), 1);
    Eigen::VectorXd zb(zs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xb(i, 0) = xs[i];
        zb[i] = zs[i];
    }
    return {TaskDataset::from_raw("task_a", std::move(xa), std::move(za)),
            TaskDataset::from_raw("task_b", std::move(xb), std::move(zb))};
}

namespace {

Eigen::MatrixXd axis_cholesky(int n, double spacing, double length_scale) {
    Eigen::MatrixXd k(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double r = (i - j) * spacing / length_scale;
            k(i, j) = std::exp(-0.5 * r * r);
        }
    }
    k.diagonal().array() += 1e-10;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) {
        throw IllConditionedError("axis covariance not factorizable", 1e-10);
    }
    return llt.matrixL();
}

}  // namespace

std::vector<TaskDataset> gen_correlated_field(
    const CorrelatedFieldConfig& config) {
    const int nx = config.grid_dims[0];
    const int ny = config.grid_dims[1];
    const int nz = config.grid_dims[2];
    const int nt = config.task_count;
    if (nx < 1 || ny < 1 || nz < 1 || nt < 1) {
        throw ArgumentError("field grid and task count must be positive");
    }
    if ((config.spacing.array() <= 0.0).any() ||
        (config.latent_length_scales.array() <= 0.0).any()) {
        throw ArgumentError("spacing and latent length scales must be positive");
    }
    if (config.noise < 0.0) throw ArgumentError("noise must be non-negative");
    Eigen::MatrixXd mixing = config.mixing;
    if (mixing.size() == 0) mixing = Eigen::MatrixXd::Identity(nt, nt);
    if (mixing.rows() != nt || mixing.cols() != nt) {
        throw ArgumentError("mixing matrix must be task_count x task_count");
    }

    const Eigen::MatrixXd lx =
        axis_cholesky(nx, config.spacing[0], config.latent_length_scales[0]);
    const Eigen::MatrixXd ly =
        axis_cholesky(ny, config.spacing[1], config.latent_length_scales[1]);
    const Eigen::MatrixXd lz =
        axis_cholesky(nz, config.spacing[2], config.latent_length_scales[2]);

    const int total = nx * ny * nz;
    // latent fields, one per task slot, sampled via the Kronecker structure
    Eigen::MatrixXd latents(nt, total);
    using RowMat =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    for (int m = 0; m < nt; ++m) {
        Rng rng(derive_seed(config.seed, 10 + m));
        Eigen::VectorXd field(total);
        for (int i = 0; i < total; ++i) field[i] = rng.normal();
        // apply along z (fastest axis)
        {
            Eigen::Map<RowMat> mat(field.data(), nx * ny, nz);
            mat = mat * lz.transpose();
        }
        // apply along y, one x-slab at a time
        for (int ix = 0; ix < nx; ++ix) {
            Eigen::Map<RowMat> slab(field.data() + ix * ny * nz, ny, nz);
            slab = ly * slab;
        }
        // apply along x
        {
            Eigen::Map<RowMat> mat(field.data(), nx, ny * nz);
            mat = lx * mat;
        }
        latents.row(m) = field;
    }

    Points pts(total, 3);
    int row = 0;
    for (int ix = 0; ix < nx; ++ix) {
        for (int iy = 0; iy < ny; ++iy) {
            for (int iz = 0; iz < nz; ++iz) {
                pts(row, 0) = ix * config.spacing[0];
                pts(row, 1) = iy * config.spacing[1];
                pts(row, 2) = iz * config.spacing[2];
                ++row;
            }
        }
    }

    std::vector<TaskDataset> out;
    out.reserve(nt);
    for (int t = 0; t < nt; ++t) {
        Rng noise_rng(derive_seed(config.seed, 100 + t));
        Eigen::VectorXd values = mixing.row(t) * latents;
        for (int i = 0; i < total; ++i) {
            values[i] += config.noise * noise_rng.normal();
        }
        out.push_back(TaskDataset::from_raw("E" + std::to_string(t + 1), pts,
                                            std::move(values)));
    }
    return out;
}

Points grid_points(const GridSpec& spec) {
    for (int k = 0; k < 3; ++k) {
        if (spec.resolution[k] < 1) {
            throw ArgumentError("grid resolution must be at least 1 per axis");
        }
        if (spec.hi[k] < spec.lo[k]) {
            throw ArgumentError("grid bounding box is inverted");
        }
    }
    auto coord = [&](int axis, int i) {
        const int n = spec.resolution[axis];
        if (n == 1) return 0.5 * (spec.lo[axis] + spec.hi[axis]);
        return spec.lo[axis] +
               (spec.hi[axis] - spec.lo[axis]) * i / static_cast<double>(n - 1);
    };
    const std::int64_t total = static_cast<std::int64_t>(spec.resolution[0]) *
                               spec.resolution[1] * spec.resolution[2];
    Points pts(total, 3);
    std::int64_t row = 0;
    for (int ix = 0; ix < spec.resolution[0]; ++ix) {
        for (int iy = 0; iy < spec.resolution[1]; ++iy) {
            for (int iz = 0; iz < spec.resolution[2]; ++iz) {
                pts(row, 0) = coord(0, ix);
                pts(row, 1) = coord(1, iy);
                pts(row, 2) = coord(2, iz);
                ++row;
            }
        }
    }
    return pts;
}

void export_grid_predictions(const GridSpec& spec, const PredictFn& predict,
                             const std::string& out_path,
                             std::int64_t max_cells) {
    const std::int64_t total = static_cast<std::int64_t>(spec.resolution[0]) *
                               spec.resolution[1] * spec.resolution[2];
    if (total > max_cells) {
        std::ostringstream msg;
        msg << "grid has " << total << " cells, above the limit of " << max_cells
            << "; choose a coarser resolution";
        throw ArgumentError(msg.str());
    }
    const Points pts = grid_points(spec);
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write '" + out_path + "'");
    out << "east,north,depth,mean,variance\n";
    constexpr Eigen::Index kChunk = 1024;
    for (Eigen::Index begin = 0; begin < pts.rows(); begin += kChunk) {
        const Eigen::Index len = std::min<Eigen::Index>(kChunk, pts.rows() - begin);
        const Points chunk = pts.middleRows(begin, len);
        const Posterior post = predict(chunk);
        for (Eigen::Index i = 0; i < len; ++i) {
            out << format_double(chunk(i, 0)) << ',' << format_double(chunk(i, 1))
                << ',' << format_double(chunk(i, 2)) << ','
                << format_double(post.mean[i]) << ','
                << format_double(post.variance[i]) << '\n';
        }
    }
}

}  // namespace mtgp
