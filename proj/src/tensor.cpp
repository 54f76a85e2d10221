#include "mrpf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mrpf {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(std::vector<int64_t> shape, Precision p) {
    Tensor t;
    int64_t n = shape_numel(shape);
    t.shape_ = std::move(shape);
    t.data_.assign(static_cast<size_t>(n), 0.0);
    t.precision_ = p;
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, Precision p) {
    Tensor t = zeros(std::move(shape), p);
    std::fill(t.data_.begin(), t.data_.end(), quantize(value, p));
    return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data, Precision p) {
    int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    t.precision_ = p;
    t.requantize();
    return t;
}

Tensor Tensor::vector(std::vector<double> data, Precision p) {
    auto n = static_cast<int64_t>(data.size());
    return from_data({n}, std::move(data), p);
}

void Tensor::requantize() {
    if (precision_ == Precision::F32) {
        for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
    }
}

Tensor Tensor::to_precision(Precision p) const {
    Tensor t = *this;
    t.precision_ = p;
    t.requantize();
    return t;
}

void Tensor::check_finite(const char* what) const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            throw ValueError(std::string("non-finite value in ") + what);
        }
    }
}

double Tensor::l2_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

namespace {

void put_u32_le(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw IoError(std::string("truncated MRPT stream while reading ") + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_u64_le(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64_le(std::istream& is, const char* what) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (is.gcount() != 8) throw IoError(std::string("truncated MRPT stream while reading ") + what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_mrpt(std::ostream& os, const Tensor& t) {
    bool wide = t.precision() == Precision::F64;
    os.write(wide ? "MRPD" : "MRPT", 4);
    put_u32_le(os, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape()) put_u32_le(os, static_cast<uint32_t>(e));
    for (int64_t i = 0; i < t.size(); ++i) {
        if (wide) {
            double d = t[i];
            uint64_t bits;
            std::memcpy(&bits, &d, 8);
            put_u64_le(os, bits);
        } else {
            float f = static_cast<float>(t[i]);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32_le(os, bits);
        }
    }
    if (!os) throw IoError("failed to write MRPT tensor");
}

Tensor read_mrpt(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4) throw IoError("bad MRPT magic");
    bool wide = std::memcmp(magic, "MRPD", 4) == 0;
    if (!wide && std::memcmp(magic, "MRPT", 4) != 0) throw IoError("bad MRPT magic");
    uint32_t rank = get_u32_le(is, "rank");
    if (rank > 8) throw IoError("MRPT rank " + std::to_string(rank) + " out of range");
    std::vector<int64_t> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t e = get_u32_le(is, "extent");
        if (e == 0) throw IoError("MRPT extent must be positive");
        shape[i] = static_cast<int64_t>(e);
    }
    int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        if (wide) {
            uint64_t bits = get_u64_le(is, "payload");
            double d;
            std::memcpy(&d, &bits, 8);
            data[static_cast<size_t>(i)] = d;
        } else {
            uint32_t bits = get_u32_le(is, "payload");
            float f;
            std::memcpy(&f, &bits, 4);
            data[static_cast<size_t>(i)] = static_cast<double>(f);
        }
    }
    return Tensor::from_data(std::move(shape), std::move(data),
                             wide ? Precision::F64 : Precision::F32);
}

void save_mrpt(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_mrpt(os, t);
}

Tensor load_mrpt(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        return read_mrpt(is);
    } catch (const IoError& e) {
        throw IoError(std::string(e.what()) + " in " + path.string());
    }
}

}  // namespace mrpf
