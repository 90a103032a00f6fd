#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace mrgr {

// Dense row-major f64 tensor, rank 1 or 2. Deliberately minimal: storage,
// shape checks, and a few constructors. All arithmetic lives in the tape ops
// and the kernel layer.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape); // zero-filled

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double v);
    // Validates size; rejects non-finite entries.
    static Tensor from(std::vector<int64_t> shape, std::vector<double> data);
    static Tensor vec(std::vector<double> v);
    static Tensor mat(std::initializer_list<std::initializer_list<double>> rows);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors; rank-1 tensors behave as a single row.
    int64_t rows() const;
    int64_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(int64_t r) { return data_.data() + r * cols(); }
    const double* row(int64_t r) const { return data_.data() + r * cols(); }

    double& at(int64_t i);
    double at(int64_t i) const;
    double& at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    bool all_finite() const;
    bool bits_equal(const Tensor& o) const;

    void fill(double v);

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

} // namespace mrgr
