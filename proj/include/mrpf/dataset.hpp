#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrpf/common.hpp"
#include "mrpf/tensor.hpp"

namespace mrpf {

struct Dataset {
    Tensor features;               // [N, d] or [N, C, H, W]
    std::vector<int64_t> labels;   // length N
    int64_t classes = 0;

    int64_t size() const { return features.empty() ? 0 : features.extent(0); }
    Dataset subset(const std::vector<int64_t>& indices) const;
};

Dataset concat(const Dataset& a, const Dataset& b);

/// Gather rows (leading-dimension slices) of a tensor.
Tensor gather_rows(const Tensor& t, const std::vector<int64_t>& indices);

/// Fisher-Yates permutation of 0..n-1.
std::vector<int64_t> shuffled_indices(int64_t n, Rng& rng);

enum class DatasetKind { Blobs, Rings, GridImage };

const char* dataset_kind_name(DatasetKind k);
DatasetKind dataset_kind_from_name(const std::string& name);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Rings;
    int64_t classes = 2;
    int64_t n_train = 2000;
    int64_t n_test = 500;
    int64_t dims = 2;        // blobs/rings feature dimension (rings is always 2-D)
    int64_t image_h = 5;     // grid-image extents (single channel)
    int64_t image_w = 5;
    double noise = 0.04;
    uint64_t seed = 1;

    bool operator==(const DatasetSpec&) const = default;
};

struct SyntheticData {
    Dataset train;
    Dataset test;
};

/// Deterministic per seed; features lie in [0,1] so epsilon presets in input
/// units are meaningful; class counts balanced within +-1.
SyntheticData make_synthetic_dataset(const DatasetSpec& spec);

/// CSV interchange, header "label,f0,f1,...", one example per row. Rank-2
/// feature tensors only.
void save_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset_csv(const std::filesystem::path& path);

}  // namespace mrpf
