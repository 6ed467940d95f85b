// SPDX-License-Identifier: Apache-2.0

#include "distillkit/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace distillkit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using Strided = Eigen::OuterStride<>;
using SMatMap = Eigen::Map<RowMat, 0, Strided>;
using CSMatMap = Eigen::Map<const RowMat, 0, Strided>;

CMatMap cmap(const Tensor& t, int64_t r, int64_t c) { return CMatMap(t.data(), r, c); }
MatMap map(Tensor& t, int64_t r, int64_t c) { return MatMap(t.data(), r, c); }

void require_same(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value())) {
        throw NumericError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_rank2(const Var& a, const char* op) {
    if (a.value().rank() != 2) {
        throw NumericError(std::string(op) + ": expected a matrix, got shape " + shape_str(a.shape()));
    }
}

std::pair<int64_t, int64_t> row_view(const Tensor& t) {
    if (t.rank() <= 1) return {t.numel(), 1};
    return {t.rows(), t.cols()};
}

Node& parent(Node& self, size_t i) { return *self.parents[i]; }
bool wants(Node& self, size_t i) { return self.parents[i]->requires_grad; }

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    out.add_(b.value());
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (size_t i = 0; i < 2; ++i)
            if (wants(self, i)) parent(self, i).accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) parent(self, 0).accumulate(self.grad);
        if (wants(self, 1)) {
            Tensor& g = parent(self, 1).grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (size_t k = 0; k < 2; ++k) {
            if (!wants(self, k)) continue;
            const Tensor& other = parent(self, 1 - k).value();
            Tensor& g = parent(self, k).grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * other[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    out.scale_(s);
    return make_result(std::move(out), {a}, [s](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.values()) v += s;
    return make_result(std::move(out), {a}, [](Node& self) { parent(self, 0).accumulate(self.grad); });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return make_result(Tensor(Shape{}, s), {a}, [](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        const double d = self.grad[0];
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += d;
    });
}

Var mean(const Var& a) {
    const int64_t n = a.value().numel();
    if (n == 0) throw NumericError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(const Var& a) {
    const auto [R, C] = row_view(a.value());
    Tensor out(Shape{R});
    for (int64_t r = 0; r < R; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < C; ++c) s += a.value()[r * C + c];
        out[r] = s;
    }
    return make_result(std::move(out), {a}, [R = R, C = C](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < C; ++c) g[r * C + c] += self.grad[r];
    });
}

Var matmul(const Var& a, const Var& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const int64_t R = a.value().dim(0), K = a.value().dim(1), C = b.value().dim(1);
    if (b.value().dim(0) != K) {
        throw NumericError("matmul: inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor out({R, C});
    map(out, R, C).noalias() = cmap(a.value(), R, K) * cmap(b.value(), K, C);
    return make_result(std::move(out), {a, b}, [R, K, C](Node& self) {
        auto dy = cmap(self.grad, R, C);
        if (wants(self, 0))
            map(parent(self, 0).grad_buffer(), R, K).noalias() += dy * cmap(parent(self, 1).value(), K, C).transpose();
        if (wants(self, 1))
            map(parent(self, 1).grad_buffer(), K, C).noalias() += cmap(parent(self, 0).value(), R, K).transpose() * dy;
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const int64_t R = a.value().dim(0), K = a.value().dim(1), C = b.value().dim(0);
    if (b.value().dim(1) != K) {
        throw NumericError("matmul_nt: inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    }
    Tensor out({R, C});
    map(out, R, C).noalias() = cmap(a.value(), R, K) * cmap(b.value(), C, K).transpose();
    return make_result(std::move(out), {a, b}, [R, K, C](Node& self) {
        auto dy = cmap(self.grad, R, C);
        if (wants(self, 0))
            map(parent(self, 0).grad_buffer(), R, K).noalias() += dy * cmap(parent(self, 1).value(), C, K);
        if (wants(self, 1))
            map(parent(self, 1).grad_buffer(), C, K).noalias() += dy.transpose() * cmap(parent(self, 0).value(), R, K);
    });
}

Var add_rowvec(const Var& x, const Var& bias) {
    const int64_t R = x.value().rows(), C = x.value().cols();
    if (bias.value().numel() != C) {
        throw NumericError("add_rowvec: bias " + shape_str(bias.shape()) + " for rows of width " + std::to_string(C));
    }
    Tensor out = x.value();
    map(out, R, C).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), C);
    return make_result(std::move(out), {x, bias}, [R, C](Node& self) {
        if (wants(self, 0)) parent(self, 0).accumulate(self.grad);
        if (wants(self, 1)) map(parent(self, 1).grad_buffer(), 1, C) += cmap(self.grad, R, C).colwise().sum();
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require_rank2(x, "linear");
    require_rank2(weight, "linear");
    const int64_t R = x.value().dim(0), In = x.value().dim(1), Out = weight.value().dim(1);
    if (weight.value().dim(0) != In || bias.value().numel() != Out) {
        throw NumericError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                           ", bias " + shape_str(bias.shape()));
    }
    Tensor out({R, Out});
    auto y = map(out, R, Out);
    y.noalias() = cmap(x.value(), R, In) * cmap(weight.value(), In, Out);
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), Out);
    return make_result(std::move(out), {x, weight, bias}, [R, In, Out](Node& self) {
        auto dy = cmap(self.grad, R, Out);
        if (wants(self, 0))
            map(parent(self, 0).grad_buffer(), R, In).noalias() += dy * cmap(parent(self, 1).value(), In, Out).transpose();
        if (wants(self, 1))
            map(parent(self, 1).grad_buffer(), In, Out).noalias() += cmap(parent(self, 0).value(), R, In).transpose() * dy;
        if (wants(self, 2)) map(parent(self, 2).grad_buffer(), 1, Out) += dy.colwise().sum();
    });
}

Var gelu(const Var& x) {
    Tensor out = x.value();
    for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return make_result(std::move(out), {x}, [](Node& self) {
        const Tensor& in = parent(self, 0).value();
        Tensor& g = parent(self, 0).grad_buffer();
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double v = in[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            g[i] += self.grad[i] * (cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v));
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int64_t R = x.value().rows(), C = x.value().cols();
    if (gamma.value().numel() != C || beta.value().numel() != C) {
        throw NumericError("layer_norm: parameters do not match width " + std::to_string(C));
    }
    auto xhat = std::make_shared<Tensor>(x.value().shape());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(R));
    Tensor out(x.value().shape());
    const Tensor& in = x.value();
    for (int64_t r = 0; r < R; ++r) {
        double mu = 0.0;
        for (int64_t c = 0; c < C; ++c) mu += in[r * C + c];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double d = in[r * C + c] - mu;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = inv;
        for (int64_t c = 0; c < C; ++c) {
            const double h = (in[r * C + c] - mu) * inv;
            (*xhat)[r * C + c] = h;
            out[r * C + c] = h * gamma.value()[c] + beta.value()[c];
        }
    }
    return make_result(std::move(out), {x, gamma, beta}, [R, C, xhat, inv_std](Node& self) {
        const Tensor& g = parent(self, 1).value();
        if (wants(self, 0)) {
            Tensor& dx = parent(self, 0).grad_buffer();
            for (int64_t r = 0; r < R; ++r) {
                double s1 = 0.0, s2 = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                    const double dh = self.grad[r * C + c] * g[c];
                    s1 += dh;
                    s2 += dh * (*xhat)[r * C + c];
                }
                const double inv = (*inv_std)[static_cast<size_t>(r)];
                const double n = static_cast<double>(C);
                for (int64_t c = 0; c < C; ++c) {
                    const double dh = self.grad[r * C + c] * g[c];
                    dx[r * C + c] += inv / n * (n * dh - s1 - (*xhat)[r * C + c] * s2);
                }
            }
        }
        if (wants(self, 1)) {
            Tensor& dg = parent(self, 1).grad_buffer();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) dg[c] += self.grad[r * C + c] * (*xhat)[r * C + c];
        }
        if (wants(self, 2)) {
            Tensor& db = parent(self, 2).grad_buffer();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) db[c] += self.grad[r * C + c];
        }
    });
}

Var embedding(const Var& table, std::span<const int32_t> ids) {
    require_rank2(table, "embedding");
    const int64_t V = table.value().dim(0), D = table.value().dim(1);
    const int64_t R = static_cast<int64_t>(ids.size());
    Tensor out({R, D});
    for (int64_t r = 0; r < R; ++r) {
        const int32_t id = ids[static_cast<size_t>(r)];
        if (id < 0 || id >= V) {
            throw NumericError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(V));
        }
        std::copy_n(table.value().data() + id * D, D, out.data() + r * D);
    }
    auto idx = std::make_shared<std::vector<int32_t>>(ids.begin(), ids.end());
    return make_result(std::move(out), {table}, [idx, D](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        for (size_t r = 0; r < idx->size(); ++r) {
            const double* src = self.grad.data() + static_cast<int64_t>(r) * D;
            double* dst = g.data() + static_cast<int64_t>((*idx)[r]) * D;
            for (int64_t c = 0; c < D; ++c) dst[c] += src[c];
        }
    });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw NumericError("dropout probability must be < 1");
    auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(x.value().numel()));
    const double keep = 1.0 / (1.0 - p);
    for (double& m : *mask) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        m = u < p ? 0.0 : keep;
    }
    Tensor out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= (*mask)[static_cast<size_t>(i)];
    return make_result(std::move(out), {x}, [mask](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * (*mask)[static_cast<size_t>(i)];
    });
}

Var select_rows(const Var& x, std::span<const int64_t> rows) {
    const auto [R, C] = row_view(x.value());
    const int64_t K = static_cast<int64_t>(rows.size());
    Shape shape = x.value().rank() <= 1 ? Shape{K} : Shape{K, C};
    Tensor out(shape);
    for (int64_t i = 0; i < K; ++i) {
        const int64_t r = rows[static_cast<size_t>(i)];
        if (r < 0 || r >= R) throw NumericError("select_rows: row " + std::to_string(r) + " out of range");
        std::copy_n(x.value().data() + r * C, C, out.data() + i * C);
    }
    auto idx = std::make_shared<std::vector<int64_t>>(rows.begin(), rows.end());
    return make_result(std::move(out), {x}, [idx, C = C](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        for (size_t i = 0; i < idx->size(); ++i)
            for (int64_t c = 0; c < C; ++c) g[(*idx)[i] * C + c] += self.grad[static_cast<int64_t>(i) * C + c];
    });
}

Var shift_concat(const Var& x, int64_t batch, int64_t seq_len, int kernel) {
    require_rank2(x, "shift_concat");
    if (kernel < 1 || kernel % 2 == 0) throw NumericError("shift_concat: kernel size must be odd and positive");
    const int64_t C = x.value().dim(1);
    if (x.value().dim(0) != batch * seq_len) throw NumericError("shift_concat: row count is not batch * seq_len");
    const int64_t half = kernel / 2;
    const int64_t K = kernel;
    Tensor out({batch * seq_len, K * C});
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t t = 0; t < seq_len; ++t)
            for (int64_t j = 0; j < K; ++j) {
                const int64_t src = t + j - half;
                if (src < 0 || src >= seq_len) continue;
                std::copy_n(x.value().data() + (b * seq_len + src) * C, C,
                            out.data() + (b * seq_len + t) * K * C + j * C);
            }
    return make_result(std::move(out), {x}, [batch, seq_len, half, K, C](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t t = 0; t < seq_len; ++t)
                for (int64_t j = 0; j < K; ++j) {
                    const int64_t src = t + j - half;
                    if (src < 0 || src >= seq_len) continue;
                    const double* d = self.grad.data() + (b * seq_len + t) * K * C + j * C;
                    double* dst = g.data() + (b * seq_len + src) * C;
                    for (int64_t c = 0; c < C; ++c) dst[c] += d[c];
                }
    });
}

Var attention_probs(const Var& q, const Var& k, int64_t batch, int64_t seq_len, int64_t heads,
                    std::span<const uint8_t> key_valid) {
    require_same(q, k, "attention_probs");
    const int64_t N = seq_len, D = q.value().cols();
    if (q.value().rows() != batch * N) throw NumericError("attention_probs: row count is not batch * seq_len");
    if (heads <= 0 || D % heads != 0) throw NumericError("attention_probs: width not divisible by head count");
    if (static_cast<int64_t>(key_valid.size()) != batch * N) throw NumericError("attention_probs: mask size mismatch");
    const int64_t dh = D / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out({batch, heads, N, N});
    RowMat scores(N, N);
    for (int64_t b = 0; b < batch; ++b) {
        const uint8_t* valid = key_valid.data() + b * N;
        for (int64_t h = 0; h < heads; ++h) {
            CSMatMap Q(q.value().data() + b * N * D + h * dh, N, dh, Strided(D));
            CSMatMap Kt(k.value().data() + b * N * D + h * dh, N, dh, Strided(D));
            scores.noalias() = (Q * Kt.transpose()) * sc;
            double* P = out.data() + ((b * heads + h) * N) * N;
            for (int64_t i = 0; i < N; ++i) {
                if (!valid[i]) continue;  // invalid query: zero row
                double mx = -INFINITY;
                for (int64_t j = 0; j < N; ++j)
                    if (valid[j]) mx = std::max(mx, scores(i, j));
                double s = 0.0;
                for (int64_t j = 0; j < N; ++j) {
                    const double e = valid[j] ? std::exp(scores(i, j) - mx) : 0.0;
                    P[i * N + j] = e;
                    s += e;
                }
                for (int64_t j = 0; j < N; ++j) P[i * N + j] /= s;
            }
        }
    }
    return make_result(std::move(out), {q, k}, [batch, heads, N, D, dh, sc](Node& self) {
        const Tensor& P = self.value();
        const Tensor& qv = parent(self, 0).value();
        const Tensor& kv = parent(self, 1).value();
        Tensor* dq = wants(self, 0) ? &parent(self, 0).grad_buffer() : nullptr;
        Tensor* dk = wants(self, 1) ? &parent(self, 1).grad_buffer() : nullptr;
        RowMat dS(N, N);
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t h = 0; h < heads; ++h) {
                const int64_t off = ((b * heads + h) * N) * N;
                for (int64_t i = 0; i < N; ++i) {
                    double dot = 0.0;
                    for (int64_t j = 0; j < N; ++j) dot += self.grad[off + i * N + j] * P[off + i * N + j];
                    for (int64_t j = 0; j < N; ++j)
                        dS(i, j) = P[off + i * N + j] * (self.grad[off + i * N + j] - dot) * sc;
                }
                const int64_t base = b * N * D + h * dh;
                if (dq) SMatMap(dq->data() + base, N, dh, Strided(D)).noalias() += dS * CSMatMap(kv.data() + base, N, dh, Strided(D));
                if (dk) SMatMap(dk->data() + base, N, dh, Strided(D)).noalias() += dS.transpose() * CSMatMap(qv.data() + base, N, dh, Strided(D));
            }
    });
}

Var attention_context(const Var& probs, const Var& v, int64_t batch, int64_t seq_len, int64_t heads) {
    const int64_t N = seq_len, D = v.value().cols();
    if (probs.value().shape() != Shape{batch, heads, N, N} || v.value().rows() != batch * N || D % heads != 0) {
        throw NumericError("attention_context: probs " + shape_str(probs.shape()) + " incompatible with values " +
                           shape_str(v.shape()));
    }
    const int64_t dh = D / heads;
    Tensor out({batch * N, D});
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t h = 0; h < heads; ++h) {
            CMatMap P(probs.value().data() + ((b * heads + h) * N) * N, N, N);
            const int64_t base = b * N * D + h * dh;
            SMatMap(out.data() + base, N, dh, Strided(D)).noalias() = P * CSMatMap(v.value().data() + base, N, dh, Strided(D));
        }
    return make_result(std::move(out), {probs, v}, [batch, heads, N, D, dh](Node& self) {
        const Tensor& pv = parent(self, 0).value();
        const Tensor& vv = parent(self, 1).value();
        Tensor* dp = wants(self, 0) ? &parent(self, 0).grad_buffer() : nullptr;
        Tensor* dv = wants(self, 1) ? &parent(self, 1).grad_buffer() : nullptr;
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t h = 0; h < heads; ++h) {
                const int64_t poff = ((b * heads + h) * N) * N;
                const int64_t base = b * N * D + h * dh;
                CSMatMap dY(self.grad.data() + base, N, dh, Strided(D));
                if (dp) MatMap(dp->data() + poff, N, N).noalias() += dY * CSMatMap(vv.data() + base, N, dh, Strided(D)).transpose();
                if (dv) SMatMap(dv->data() + base, N, dh, Strided(D)).noalias() += CMatMap(pv.data() + poff, N, N).transpose() * dY;
            }
    });
}

Var softmax_rows(const Var& x) {
    Tensor out = softmax(x.value(), -1);
    return make_result(std::move(out), {x}, [](Node& self) {
        const Tensor& y = self.value();
        const int64_t R = y.rows(), C = y.cols();
        Tensor& g = parent(self, 0).grad_buffer();
        for (int64_t r = 0; r < R; ++r) {
            double dot = 0.0;
            for (int64_t c = 0; c < C; ++c) dot += self.grad[r * C + c] * y[r * C + c];
            for (int64_t c = 0; c < C; ++c) g[r * C + c] += y[r * C + c] * (self.grad[r * C + c] - dot);
        }
    });
}

Var log_softmax_rows(const Var& x) {
    const Tensor& in = x.value();
    const int64_t R = in.rows(), C = in.cols();
    Tensor out(in.shape());
    for (int64_t r = 0; r < R; ++r) {
        double mx = -INFINITY;
        for (int64_t c = 0; c < C; ++c) mx = std::max(mx, in[r * C + c]);
        double s = 0.0;
        for (int64_t c = 0; c < C; ++c) s += std::exp(in[r * C + c] - mx);
        const double lse = mx + std::log(s);
        for (int64_t c = 0; c < C; ++c) out[r * C + c] = in[r * C + c] - lse;
    }
    return make_result(std::move(out), {x}, [R, C](Node& self) {
        const Tensor& y = self.value();
        Tensor& g = parent(self, 0).grad_buffer();
        for (int64_t r = 0; r < R; ++r) {
            double s = 0.0;
            for (int64_t c = 0; c < C; ++c) s += self.grad[r * C + c];
            for (int64_t c = 0; c < C; ++c) g[r * C + c] += self.grad[r * C + c] - std::exp(y[r * C + c]) * s;
        }
    });
}

Var pick(const Var& x, std::span<const int64_t> rows, std::span<const int64_t> cols) {
    if (rows.size() != cols.size()) throw NumericError("pick: rows and cols differ in length");
    const int64_t R = x.value().rows(), C = x.value().cols();
    const int64_t K = static_cast<int64_t>(rows.size());
    Tensor out(Shape{K});
    auto flat = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(K));
    for (int64_t i = 0; i < K; ++i) {
        const int64_t r = rows[static_cast<size_t>(i)], c = cols[static_cast<size_t>(i)];
        if (r < 0 || r >= R || c < 0 || c >= C) throw NumericError("pick: index out of range");
        (*flat)[static_cast<size_t>(i)] = r * C + c;
        out[i] = x.value()[r * C + c];
    }
    return make_result(std::move(out), {x}, [flat](Node& self) {
        Tensor& g = parent(self, 0).grad_buffer();
        for (size_t i = 0; i < flat->size(); ++i) g[(*flat)[i]] += self.grad[static_cast<int64_t>(i)];
    });
}

Var kl_rows(const Var& p, const Var& q) {
    require_same(p, q, "kl_rows");
    const auto [R, C] = std::pair{p.value().rows(), p.value().cols()};
    Tensor out(Shape{R});
    const Tensor& pv = p.value();
    const Tensor& qv = q.value();
    for (int64_t r = 0; r < R; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double pi = pv[r * C + c];
            if (pi <= 0.0) continue;
            s += pi * (std::log(std::clamp(pi, kProbFloor, 1.0)) - std::log(std::clamp(qv[r * C + c], kProbFloor, 1.0)));
        }
        out[r] = s;
    }
    return make_result(std::move(out), {p, q}, [R = R, C = C](Node& self) {
        const Tensor& pv = parent(self, 0).value();
        const Tensor& qv = parent(self, 1).value();
        if (wants(self, 0)) {
            Tensor& g = parent(self, 0).grad_buffer();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) {
                    const double pi = pv[r * C + c];
                    if (pi <= 0.0) continue;
                    const double pc = std::clamp(pi, kProbFloor, 1.0);
                    const double qc = std::clamp(qv[r * C + c], kProbFloor, 1.0);
                    const double inner = (pi > kProbFloor && pi < 1.0) ? 1.0 : 0.0;
                    g[r * C + c] += self.grad[r] * (std::log(pc) - std::log(qc) + inner);
                }
        }
        if (wants(self, 1)) {
            Tensor& g = parent(self, 1).grad_buffer();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) {
                    const double pi = pv[r * C + c];
                    const double qi = qv[r * C + c];
                    if (pi <= 0.0 || qi <= kProbFloor || qi >= 1.0) continue;
                    g[r * C + c] -= self.grad[r] * pi / qi;
                }
        }
    });
}

Var cosine_rows(const Var& a, const Var& b) {
    require_same(a, b, "cosine_rows");
    const int64_t R = a.value().rows(), C = a.value().cols();
    auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(3 * R));  // |a|, |b|, denom
    Tensor out(Shape{R});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    for (int64_t r = 0; r < R; ++r) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            dot += av[r * C + c] * bv[r * C + c];
            na += av[r * C + c] * av[r * C + c];
            nb += bv[r * C + c] * bv[r * C + c];
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        const double den = std::max(na * nb, kCosineFloor);
        (*stats)[3 * r] = na;
        (*stats)[3 * r + 1] = nb;
        (*stats)[3 * r + 2] = den;
        out[r] = dot / den;
    }
    return make_result(std::move(out), {a, b}, [R, C, stats](Node& self) {
        const Tensor& cos = self.value();
        for (size_t k = 0; k < 2; ++k) {
            if (!wants(self, k)) continue;
            const Tensor& mine = parent(self, k).value();
            const Tensor& other = parent(self, 1 - k).value();
            Tensor& g = parent(self, k).grad_buffer();
            for (int64_t r = 0; r < R; ++r) {
                const double n_mine = (*stats)[3 * r + k];
                const double n_other = (*stats)[3 * r + (1 - k)];
                const double den = (*stats)[3 * r + 2];
                const bool floored = n_mine * n_other <= kCosineFloor;
                for (int64_t c = 0; c < C; ++c) {
                    double d = other[r * C + c] / den;
                    if (!floored) d -= cos[r] * mine[r * C + c] / (n_mine * n_mine);
                    g[r * C + c] += self.grad[r] * d;
                }
            }
        }
    });
}

Var mse(const Var& a, const Var& b) {
    require_same(a, b, "mse");
    const int64_t n = a.value().numel();
    if (n == 0) throw NumericError("mse of empty tensors");
    return mean(mul(sub(a, b), sub(a, b)));
}

}  // namespace distillkit
