// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors and the plain (non-differentiable) numeric primitives.

#pragma once

#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace distillkit {

using Shape = std::vector<int64_t>;

/// Allocator with a fixed 64-byte alignment. Eigen's vectorised kernels choose
/// where to peel loops from the data address, so a fixed alignment keeps the
/// summation order, and therefore every result bit, the same across runs.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t kAlign = 64;

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        const std::size_t bytes = (n * sizeof(T) + kAlign - 1) / kAlign * kAlign;
        void* p = std::aligned_alloc(kAlign, bytes == 0 ? kAlign : bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) { std::free(p); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Row-major dense tensor of doubles. Element count always equals the
/// product of the shape dimensions.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::initializer_list<double> values);
    Tensor(Shape shape, const std::vector<double>& values);
    Tensor(Shape shape, Storage values);

    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(int64_t rows, int64_t cols, std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    int64_t dim(size_t axis) const { return shape_.at(axis); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    Storage& values() { return data_; }
    const Storage& values() const { return data_; }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    /// 2-D accessors; the tensor is viewed as [rows, last-dim].
    int64_t rows() const;
    int64_t cols() const;
    double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

    Tensor reshaped(Shape shape) const;
    void fill(double v);
    void add_(const Tensor& other);
    void scale_(double s);
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
    Storage data_;
};

/// Softmax along `axis`, computed with max-subtraction.
Tensor softmax(const Tensor& x, int axis);

/// Lower bound applied to probabilities before taking logarithms.
inline constexpr double kProbFloor = 1e-12;
/// Lower bound on the norm product in cosine similarity.
inline constexpr double kCosineFloor = 1e-12;

/// Sum over all elements of p * ln(p / q), both clamped to [kProbFloor, 1].
/// Entries with p == 0 contribute nothing.
double kl_divergence(const Tensor& p, const Tensor& q);

double cosine_similarity(const Tensor& u, const Tensor& v);

double mse(const Tensor& a, const Tensor& b);

/// Row-wise layer normalisation with unit gain and zero bias.
Tensor layer_norm_rows(const Tensor& x, double eps);

}  // namespace distillkit
