#include "mrgr/tensor.hpp"

#include <cmath>
#include <cstring>

#include "mrgr/errors.hpp"

namespace mrgr {
namespace {

int64_t checked_size(const std::vector<int64_t>& shape) {
    if (shape.empty() || shape.size() > 2) {
        throw ShapeError("tensor rank must be 1 or 2, got rank " + std::to_string(shape.size()));
    }
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw ShapeError("negative dimension " + std::to_string(d));
        n *= d;
    }
    return n;
}

} // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(checked_size(shape_)), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> data) {
    int64_t n = checked_size(shape);
    if (n != static_cast<int64_t>(data.size())) {
        throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape size " +
                         std::to_string(n));
    }
    for (double v : data) {
        if (!std::isfinite(v)) throw NumericError("tensor literal contains a non-finite value");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::vec(std::vector<double> v) {
    // Size must be read before the move: argument construction order is
    // unspecified, and g++ builds the data parameter first.
    const int64_t n = static_cast<int64_t>(v.size());
    return from({n}, std::move(v));
}

Tensor Tensor::mat(std::initializer_list<std::initializer_list<double>> rows) {
    int64_t r = static_cast<int64_t>(rows.size());
    int64_t c = r == 0 ? 0 : static_cast<int64_t>(rows.begin()->size());
    std::vector<double> data;
    data.reserve(static_cast<size_t>(r * c));
    for (const auto& row : rows) {
        if (static_cast<int64_t>(row.size()) != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(data));
}

int64_t Tensor::rows() const { return rank() == 2 ? shape_[0] : 1; }
int64_t Tensor::cols() const { return rank() == 2 ? shape_[1] : (shape_.empty() ? 0 : shape_[0]); }

double& Tensor::at(int64_t i) {
    if (i < 0 || i >= size()) {
        throw ShapeError("index " + std::to_string(i) + " out of range for size " + std::to_string(size()));
    }
    return data_[static_cast<size_t>(i)];
}

double Tensor::at(int64_t i) const { return const_cast<Tensor*>(this)->at(i); }

double& Tensor::at(int64_t r, int64_t c) {
    if (r < 0 || r >= rows() || c < 0 || c >= cols()) {
        throw ShapeError("index (" + std::to_string(r) + "," + std::to_string(c) +
                         ") out of range for shape " + shape_str());
    }
    return data_[static_cast<size_t>(r * cols() + c)];
}

double Tensor::at(int64_t r, int64_t c) const { return const_cast<Tensor*>(this)->at(r, c); }

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool Tensor::bits_equal(const Tensor& o) const {
    if (shape_ != o.shape_) return false;
    if (data_.empty()) return true;
    return std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

} // namespace mrgr
