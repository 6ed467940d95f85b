// SPDX-License-Identifier: Apache-2.0

#include "distillkit/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace distillkit {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) {
            throw NumericError("negative dimension in shape " + shape_str(shape));
        }
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, Storage values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw NumericError("tensor shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({static_cast<int64_t>(values.size())}, values);
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, values);
}

int64_t Tensor::cols() const {
    return shape_.empty() ? 1 : shape_.back();
}

int64_t Tensor::rows() const {
    int64_t c = cols();
    return c == 0 ? 0 : numel() / c;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw NumericError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

void Tensor::add_(const Tensor& other) {
    if (other.numel() != numel()) {
        throw NumericError("add_: shape " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    }
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_(double s) {
    for (double& v : data_) v *= s;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor softmax(const Tensor& x, int axis) {
    const int rank = static_cast<int>(x.rank());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw NumericError("softmax: axis out of range for shape " + shape_str(x.shape()));
    }
    const int64_t len = x.dim(static_cast<size_t>(axis));
    int64_t inner = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<size_t>(i));
    const int64_t outer = len == 0 ? 0 : x.numel() / (len * inner);

    Tensor out(x.shape());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            double mx = -INFINITY;
            for (int64_t k = 0; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
            double sum = 0.0;
            for (int64_t k = 0; k < len; ++k) {
                const double e = std::exp(x[base + k * inner] - mx);
                out[base + k * inner] = e;
                sum += e;
            }
            for (int64_t k = 0; k < len; ++k) out[base + k * inner] /= sum;
        }
    }
    return out;
}

double kl_divergence(const Tensor& p, const Tensor& q) {
    if (!p.same_shape(q)) {
        throw NumericError("kl_divergence: shape " + shape_str(p.shape()) + " vs " + shape_str(q.shape()));
    }
    double total = 0.0;
    for (int64_t i = 0; i < p.numel(); ++i) {
        if (p[i] <= 0.0) continue;
        const double pc = std::clamp(p[i], kProbFloor, 1.0);
        const double qc = std::clamp(q[i], kProbFloor, 1.0);
        total += p[i] * (std::log(pc) - std::log(qc));
    }
    return total;
}

double cosine_similarity(const Tensor& u, const Tensor& v) {
    if (u.numel() != v.numel()) {
        throw NumericError("cosine_similarity: length " + std::to_string(u.numel()) + " vs " +
                           std::to_string(v.numel()));
    }
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (int64_t i = 0; i < u.numel(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    return dot / std::max(std::sqrt(nu) * std::sqrt(nv), kCosineFloor);
}

double mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw NumericError("mse: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    if (a.numel() == 0) return 0.0;
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

Tensor layer_norm_rows(const Tensor& x, double eps) {
    Tensor out(x.shape());
    const int64_t R = x.rows(), C = x.cols();
    for (int64_t r = 0; r < R; ++r) {
        double mean = 0.0;
        for (int64_t c = 0; c < C; ++c) mean += x.at(r, c);
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double d = x.at(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t c = 0; c < C; ++c) out.at(r, c) = (x.at(r, c) - mean) * inv;
    }
    return out;
}

}  // namespace distillkit
