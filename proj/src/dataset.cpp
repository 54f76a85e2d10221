#include "mrpf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mrpf {

Dataset Dataset::subset(const std::vector<int64_t>& indices) const {
    Dataset out;
    out.features = gather_rows(features, indices);
    out.labels.reserve(indices.size());
    for (int64_t i : indices) {
        if (i < 0 || i >= static_cast<int64_t>(labels.size())) {
            throw ValueError("dataset index " + std::to_string(i) + " out of range");
        }
        out.labels.push_back(labels[static_cast<size_t>(i)]);
    }
    out.classes = classes;
    return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
    if (b.size() == 0) return a;
    if (a.size() == 0) return b;
    if (a.classes != b.classes) throw ValueError("cannot concat datasets with different class counts");
    std::vector<int64_t> shape = a.features.shape();
    std::vector<int64_t> bs = b.features.shape();
    if (shape.size() != bs.size() || !std::equal(shape.begin() + 1, shape.end(), bs.begin() + 1)) {
        throw ShapeError("cannot concat features " + shape_str(shape) + " and " + shape_str(bs));
    }
    shape[0] += bs[0];
    std::vector<double> data;
    data.reserve(a.features.data().size() + b.features.data().size());
    data.insert(data.end(), a.features.data().begin(), a.features.data().end());
    data.insert(data.end(), b.features.data().begin(), b.features.data().end());
    Dataset out;
    out.features = Tensor::from_data(std::move(shape), std::move(data), a.features.precision());
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.classes = a.classes;
    return out;
}

Tensor gather_rows(const Tensor& t, const std::vector<int64_t>& indices) {
    if (t.empty()) throw ValueError("gather_rows on an empty tensor");
    if (indices.empty()) throw ValueError("gather_rows needs at least one index");
    int64_t n = t.extent(0);
    int64_t row = t.size() / n;
    std::vector<int64_t> shape = t.shape();
    shape[0] = static_cast<int64_t>(indices.size());
    Tensor out = Tensor::zeros(shape, t.precision());
    for (size_t r = 0; r < indices.size(); ++r) {
        int64_t i = indices[r];
        if (i < 0 || i >= n) throw ValueError("row index " + std::to_string(i) + " out of range");
        for (int64_t j = 0; j < row; ++j) {
            out.data()[r * static_cast<size_t>(row) + static_cast<size_t>(j)] = t[i * row + j];
        }
    }
    return out;
}

std::vector<int64_t> shuffled_indices(int64_t n, Rng& rng) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i) {
        int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    return idx;
}

const char* dataset_kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::Blobs: return "blobs";
        case DatasetKind::Rings: return "rings";
        case DatasetKind::GridImage: return "grid-image";
    }
    return "?";
}

DatasetKind dataset_kind_from_name(const std::string& name) {
    if (name == "blobs") return DatasetKind::Blobs;
    if (name == "rings") return DatasetKind::Rings;
    if (name == "grid-image") return DatasetKind::GridImage;
    throw ConfigError("unknown dataset kind '" + name + "'");
}

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

Dataset generate_split(const DatasetSpec& spec, int64_t n, Rng& rng) {
    Dataset out;
    out.classes = spec.classes;
    out.labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out.labels[static_cast<size_t>(i)] = i % spec.classes;

    switch (spec.kind) {
        case DatasetKind::Blobs: {
            // Class centroids drawn once, away from the walls so that noise
            // rarely clips.
            std::vector<double> centroids(static_cast<size_t>(spec.classes * spec.dims));
            Rng crng(derive_seed(spec.seed, "blob-centroids"));
            for (auto& c : centroids) c = crng.uniform(0.25, 0.75);
            Tensor f = Tensor::zeros({n, spec.dims});
            for (int64_t i = 0; i < n; ++i) {
                int64_t c = out.labels[static_cast<size_t>(i)];
                for (int64_t d = 0; d < spec.dims; ++d) {
                    double v = centroids[static_cast<size_t>(c * spec.dims + d)] + spec.noise * rng.normal();
                    f.data()[static_cast<size_t>(i * spec.dims + d)] = clamp01(v);
                }
            }
            out.features = std::move(f);
            break;
        }
        case DatasetKind::Rings: {
            // Concentric annuli around (0.5, 0.5); radii spread so the widest
            // ring stays inside the unit square and adjacent rings keep a gap
            // wide enough that l-inf balls of radius ~0.1 cannot bridge it.
            Tensor f = Tensor::zeros({n, 2});
            double denom = static_cast<double>(std::max<int64_t>(1, spec.classes - 1));
            for (int64_t i = 0; i < n; ++i) {
                int64_t c = out.labels[static_cast<size_t>(i)];
                double radius = 0.10 + 0.28 * static_cast<double>(c) / denom + spec.noise * rng.normal();
                double theta = rng.uniform(0.0, 6.283185307179586476925286766559);
                f.data()[static_cast<size_t>(i * 2 + 0)] = clamp01(0.5 + radius * std::cos(theta));
                f.data()[static_cast<size_t>(i * 2 + 1)] = clamp01(0.5 + radius * std::sin(theta));
            }
            out.features = std::move(f);
            break;
        }
        case DatasetKind::GridImage: {
            // Single-channel images with a class-keyed bright cross on a dim
            // noisy background.
            int64_t h = spec.image_h, w = spec.image_w;
            Tensor f = Tensor::zeros({n, 1, h, w});
            for (int64_t i = 0; i < n; ++i) {
                int64_t c = out.labels[static_cast<size_t>(i)];
                int64_t ri = 1 + (c * (h - 2)) / spec.classes;
                int64_t ci = 1 + (c * (w - 2)) / spec.classes;
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        double v = spec.noise * std::fabs(rng.normal());
                        bool bright = (y == ri && std::llabs(x - ci) <= 1) || (x == ci && std::llabs(y - ri) <= 1);
                        if (bright) v = 1.0 - spec.noise * std::fabs(rng.normal());
                        f.data()[static_cast<size_t>(((i * 1 + 0) * h + y) * w + x)] = clamp01(v);
                    }
            }
            out.features = std::move(f);
            break;
        }
    }
    return out;
}

}  // namespace

SyntheticData make_synthetic_dataset(const DatasetSpec& spec) {
    if (spec.classes < 2) throw ConfigError("dataset needs at least 2 classes");
    if (spec.n_train <= 0 || spec.n_test <= 0) throw ConfigError("dataset split sizes must be positive");
    if (spec.noise < 0.0) throw ConfigError("dataset noise must be nonnegative");
    if (spec.kind == DatasetKind::Blobs && spec.dims <= 0) throw ConfigError("blobs need a positive dimension");
    if (spec.kind == DatasetKind::Rings && spec.dims != 2) throw ConfigError("rings are 2-D");
    if (spec.kind == DatasetKind::GridImage && (spec.image_h < 3 || spec.image_w < 3)) {
        throw ConfigError("grid images need extents of at least 3");
    }
    SyntheticData out;
    Rng train_rng(derive_seed(spec.seed, "dataset-train"));
    Rng test_rng(derive_seed(spec.seed, "dataset-test"));
    out.train = generate_split(spec, spec.n_train, train_rng);
    out.test = generate_split(spec, spec.n_test, test_rng);
    return out;
}

void save_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
    if (data.features.rank() != 2) throw IoError("CSV datasets need rank-2 features");
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    int64_t d = data.features.extent(1);
    os << "label";
    for (int64_t j = 0; j < d; ++j) os << ",f" << j;
    os << "\n";
    os.precision(17);
    for (int64_t i = 0; i < data.size(); ++i) {
        os << data.labels[static_cast<size_t>(i)];
        for (int64_t j = 0; j < d; ++j) os << "," << data.features[i * d + j];
        os << "\n";
    }
    if (!os) throw IoError("failed writing " + path.string());
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty CSV file " + path.string());
    int64_t d = static_cast<int64_t>(std::count(line.begin(), line.end(), ','));
    if (d <= 0 || line.substr(0, 5) != "label") {
        throw IoError("bad CSV header in " + path.string());
    }
    std::vector<double> values;
    std::vector<int64_t> labels;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        if (!std::getline(row, cell, ',')) throw IoError("bad CSV row in " + path.string());
        labels.push_back(std::stoll(cell));
        int64_t got = 0;
        while (std::getline(row, cell, ',')) {
            values.push_back(std::stod(cell));
            ++got;
        }
        if (got != d) throw IoError("CSV row with " + std::to_string(got) + " features, expected " +
                                    std::to_string(d) + " in " + path.string());
    }
    if (labels.empty()) throw IoError("CSV file " + path.string() + " has no rows");
    Dataset out;
    out.features = Tensor::from_data({static_cast<int64_t>(labels.size()), d}, std::move(values));
    out.labels = std::move(labels);
    out.classes = *std::max_element(out.labels.begin(), out.labels.end()) + 1;
    for (int64_t y : out.labels) {
        if (y < 0) throw IoError("negative label in " + path.string());
    }
    return out;
}

}  // namespace mrpf
