#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kbdm/errors.hpp"
#include "kbdm/rng.hpp"

namespace kbdm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

/// Dense row-major tensor of 64-bit floats.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        }
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    // 1xN row vector.
    static Tensor row(std::vector<double> values) {
        std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> values) {
        return Tensor({r, c}, std::move(values));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const { return rank() >= 1 ? shape[0] : 1; }
    std::size_t cols() const { return rank() >= 2 ? shape[1] : 1; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }

    Tensor& operator-=(const Tensor& o) {
        require_same_shape(o, "-=");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
        return *this;
    }

    Tensor& operator*=(double s) {
        for (double& v : data) v *= s;
        return *this;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    void require_same_shape(const Tensor& o, const char* op) const {
        if (!same_shape(o)) {
            throw DimensionError(std::string(op) + ": shape " + shape_str(shape) +
                                 " vs " + shape_str(o.shape));
        }
    }
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor operator*(Tensor a, double s) { return a *= s; }
inline Tensor operator*(double s, Tensor a) { return a *= s; }

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    a.require_same_shape(b, "hadamard");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

inline void check_finite(const Tensor& t, const std::string& context) {
    if (!t.finite()) throw NumericError("non-finite value in " + context);
}

inline void check_finite(double v, const std::string& context) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + context);
}

/// Trainable tensor with its gradient accumulator.
struct Parameter {
    Tensor value;
    Tensor grad;
    std::string name;

    Parameter() = default;
    Parameter(std::string id, Tensor v)
        : value(std::move(v)), grad(Tensor::zeros(value.shape)), name(std::move(id)) {}

    void zero_grad() { grad.fill(0.0); }
};

// Glorot-style uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
inline Tensor init_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-s, s);
    return t;
}

// ---------------------------------------------------------------------------
// Core differentiable operations. Each op has an explicit backward companion;
// there is no tape.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul: " + shape_str(a.shape) + " by " + shape_str(b.shape));
    }
    const std::size_t m = a.rows(), p = a.cols(), n = b.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < p; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: rank " + std::to_string(a.rank()));
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

// dL/da += dout * b^T, dL/db += a^T * dout
inline void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dout,
                            Tensor* da, Tensor* db) {
    if (da) *da += matmul(dout, transpose(b));
    if (db) *db += matmul(transpose(a), dout);
}

// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("softmax_rows: rank " + std::to_string(x.rank()));
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            double e = std::exp(x.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) /= sum;
    }
    return out;
}

// dx_i = y_i * (dy_i - <dy_i, y_i>) per row, with y the softmax output.
inline Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
    y.require_same_shape(dy, "softmax_rows_backward");
    Tensor dx(y.shape);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += dy.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j)
            dx.at(i, j) = y.at(i, j) * (dy.at(i, j) - dot);
    }
    return dx;
}

inline double mse(const Tensor& pred, const Tensor& target) {
    pred.require_same_shape(target, "mse");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        double d = pred.data[i] - target.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(pred.numel());
}

// d/dpred = 2 (pred - target) / count
inline Tensor mse_backward(const Tensor& pred, const Tensor& target) {
    pred.require_same_shape(target, "mse_backward");
    Tensor g(pred.shape);
    const double scale = 2.0 / static_cast<double>(pred.numel());
    for (std::size_t i = 0; i < pred.numel(); ++i)
        g.data[i] = scale * (pred.data[i] - target.data[i]);
    return g;
}

inline double cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
    if (logits.rank() != 2 || logits.rows() != targets.size()) {
        throw DimensionError("cross_entropy: logits " + shape_str(logits.shape) + " vs " +
                             std::to_string(targets.size()) + " targets");
    }
    const std::size_t k = logits.cols();
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        if (targets[i] >= k) {
            throw IndexError("cross_entropy: row " + std::to_string(i) + " target " +
                             std::to_string(targets[i]) + " out of range [0," +
                             std::to_string(k) + ")");
        }
        double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
        double lse = 0.0;
        for (std::size_t j = 0; j < k; ++j) lse += std::exp(logits.at(i, j) - mx);
        sum += std::log(lse) + mx - logits.at(i, targets[i]);
    }
    return sum / static_cast<double>(logits.rows());
}

// dlogits = (softmax - onehot) / rows
inline Tensor cross_entropy_backward(const Tensor& logits, const std::vector<std::size_t>& targets) {
    Tensor g = softmax_rows(logits);
    const double inv = 1.0 / static_cast<double>(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        g.at(i, targets[i]) -= 1.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) g.at(i, j) *= inv;
    }
    return g;
}

}  // namespace kbdm
