#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mrpf/common.hpp"

namespace mrpf {

/// Dense n-dimensional array of reals, row-major. Values are held as doubles;
/// an F32 tensor keeps every element snapped to the float grid so that 32-bit
/// storage round-trips exactly.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape, Precision p = Precision::F64);
    static Tensor full(std::vector<int64_t> shape, double value, Precision p = Precision::F64);
    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                            Precision p = Precision::F64);
    // 1-D convenience
    static Tensor vector(std::vector<double> data, Precision p = Precision::F64);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int64_t extent(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
    bool empty() const { return data_.empty(); }
    Precision precision() const { return precision_; }

    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

    double at2(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double at4(int64_t a, int64_t b, int64_t c, int64_t d) const {
        return data_[static_cast<size_t>(((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d)];
    }
    double& at4(int64_t a, int64_t b, int64_t c, int64_t d) {
        return data_[static_cast<size_t>(((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d)];
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    /// Re-snap all elements to this tensor's precision grid. Call after any
    /// in-place arithmetic on the raw data.
    void requantize();

    /// Same values, different precision tag (F32 target rounds the payload).
    Tensor to_precision(Precision p) const;

    /// Throws ValueError naming `what` if any element is NaN/Inf.
    void check_finite(const char* what) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool bit_equal(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

    double l2_norm() const;
    double max_abs() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
    Precision precision_ = Precision::F64;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// MRPT fixture format: magic "MRPT", u32 LE rank, u32 LE extents, row-major
// f32 LE payload. F64 tensors use the wide variant (magic "MRPD", f64 LE
// payload) so checkpoints round-trip bit-exactly; readers dispatch on magic.
void write_mrpt(std::ostream& os, const Tensor& t);
Tensor read_mrpt(std::istream& is);
void save_mrpt(const std::filesystem::path& path, const Tensor& t);
Tensor load_mrpt(const std::filesystem::path& path);

}  // namespace mrpf
