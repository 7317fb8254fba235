#pragma once

// Dense 64-bit kernels with paired forward/backward passes and a central
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace r2t {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw std::invalid_argument("Matrix::from_rows: ragged rows");
            std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
            ++i;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Matrix& operator+=(const Matrix& o) {
        if (o.rows_ != rows_ || o.cols_ != cols_) throw std::invalid_argument("Matrix +=: shape mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }

inline void require_shape(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
    return m;
}

/// A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require_shape(a.cols() == b.rows(), "matmul");
    Matrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* o = out.data() + i * n;
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
        }
    }
    return out;
}

/// A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require_shape(a.rows() == b.rows(), "matmul_tn");
    Matrix out(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* brow = b.data() + k * n;
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            double* o = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += aki * brow[j];
        }
    }
    return out;
}

/// A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require_shape(a.cols() == b.cols(), "matmul_nt");
    Matrix out(a.rows(), b.rows());
    const std::size_t d = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.data() + i * d;
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* brow = b.data() + j * d;
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += arow[k] * brow[k];
            out(i, j) = s;
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// Sum whose result does not depend on the order of `terms`: the terms are
/// sorted before accumulation. Used where permutation invariance must hold
/// bit-for-bit.
inline double order_invariant_sum(std::vector<double> terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

// ---------------------------------------------------------------------------
// Learnable tensors

struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;  // rank 1 tensors are stored as 1 x n
    Matrix value;
    Matrix grad;

    ParamTensor() = default;
    ParamTensor(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
        if (shape.empty() || shape.size() > 2) throw std::invalid_argument("ParamTensor: rank must be 1 or 2");
        const std::size_t r = shape.size() == 1 ? 1 : shape[0];
        const std::size_t c = shape.back();
        value = Matrix(r, c);
        grad = Matrix(r, c);
    }

    std::size_t size() const { return value.size(); }
    void zero_grad() { grad.fill(0.0); }
};

using ParamList = std::vector<ParamTensor*>;

inline void zero_grads(const ParamList& params) {
    for (ParamTensor* p : params) p->zero_grad();
}

using Rng = std::mt19937_64;

inline void init_uniform(ParamTensor& p, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.value.flat()) v = dist(rng);
}

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = shape[0].
inline void init_fan_in(ParamTensor& p, Rng& rng) {
    init_uniform(p, 1.0 / std::sqrt(static_cast<double>(p.shape.front())), rng);
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = dist(rng);
    return m;
}

// ---------------------------------------------------------------------------
// linear

inline Matrix linear(const Matrix& x, const Matrix& w, std::span<const double> b) {
    if (x.cols() != w.rows() || b.size() != w.cols())
        throw std::invalid_argument("linear: shape mismatch");
    Matrix out = matmul(x, w);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b[j];
    return out;
}

struct LinearGrads {
    Matrix dx;
    Matrix dw;
    std::vector<double> db;
};

inline LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy) {
    require_shape(dy.rows() == x.rows() && dy.cols() == w.cols(), "linear_backward");
    LinearGrads g{matmul_nt(dy, w), matmul_tn(x, dy), std::vector<double>(w.cols(), 0.0)};
    for (std::size_t i = 0; i < dy.rows(); ++i)
        for (std::size_t j = 0; j < dy.cols(); ++j) g.db[j] += dy(i, j);
    return g;
}

// ---------------------------------------------------------------------------
// softmax

enum class Axis { rows, cols };  // rows: each row sums to one

inline void softmax_inplace(std::span<double> v) {
    if (v.empty()) return;
    if (!all_finite(v)) throw std::domain_error("softmax: non-finite input");
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        s += x;
    }
    for (double& x : v) x /= s;
}

inline std::vector<double> softmax(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    softmax_inplace(out);
    return out;
}

/// dx = y * (dy - <y, dy>)
inline std::vector<double> softmax_backward(std::span<const double> y, std::span<const double> dy) {
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
    std::vector<double> dx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - dot);
    return dx;
}

inline Matrix softmax(const Matrix& m, Axis axis) {
    if (axis == Axis::rows) {
        Matrix out = m;
        for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
        return out;
    }
    return transpose(softmax(transpose(m), Axis::rows));
}

inline Matrix softmax_backward(const Matrix& y, const Matrix& dy, Axis axis) {
    require_shape(y.rows() == dy.rows() && y.cols() == dy.cols(), "softmax_backward");
    if (axis == Axis::cols) return transpose(softmax_backward(transpose(y), transpose(dy), Axis::rows));
    Matrix dx(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto g = softmax_backward(y.row(r), dy.row(r));
        std::copy(g.begin(), g.end(), dx.row(r).begin());
    }
    return dx;
}

// ---------------------------------------------------------------------------
// layer normalization over the last axis

struct LayerNormCache {
    Matrix xhat;
    std::vector<double> inv_std;
};

inline Matrix layer_norm(const Matrix& x, std::span<const double> scale, std::span<const double> shift,
                         double eps = 1e-5, LayerNormCache* cache = nullptr) {
    const std::size_t d = x.cols();
    if (d == 0 || scale.size() != d || shift.size() != d) throw std::invalid_argument("layer_norm: shape mismatch");
    Matrix out(x.rows(), d);
    if (cache) {
        cache->xhat = Matrix(x.rows(), d);
        cache->inv_std.assign(x.rows(), 0.0);
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mean) * inv;
            out(r, j) = xh * scale[j] + shift[j];
            if (cache) cache->xhat(r, j) = xh;
        }
        if (cache) cache->inv_std[r] = inv;
    }
    return out;
}

struct LayerNormGrads {
    Matrix dx;
    std::vector<double> dscale;
    std::vector<double> dshift;
};

inline LayerNormGrads layer_norm_backward(const Matrix& dy, std::span<const double> scale, const LayerNormCache& cache) {
    const std::size_t d = dy.cols();
    require_shape(cache.xhat.rows() == dy.rows() && cache.xhat.cols() == d, "layer_norm_backward");
    LayerNormGrads g{Matrix(dy.rows(), d), std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    const double inv_d = 1.0 / static_cast<double>(d);
    std::vector<double> dxh(d);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
        double sum_dxh = 0.0;
        double sum_dxh_xh = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = cache.xhat(r, j);
            g.dscale[j] += dy(r, j) * xh;
            g.dshift[j] += dy(r, j);
            dxh[j] = dy(r, j) * scale[j];
            sum_dxh += dxh[j];
            sum_dxh_xh += dxh[j] * xh;
        }
        for (std::size_t j = 0; j < d; ++j)
            g.dx(r, j) = cache.inv_std[r] * (dxh[j] - inv_d * sum_dxh - cache.xhat(r, j) * inv_d * sum_dxh_xh);
    }
    return g;
}

// ---------------------------------------------------------------------------
// 1-D "same" convolution with zero padding of (k-1)/2 on both ends

inline void check_odd_kernel(std::size_t k) {
    if (k % 2 == 0) throw std::invalid_argument("conv1d: kernel width must be odd, got " + std::to_string(k));
}

/// out[t] = sum_j kernel[j] * x[t + j - pad]
inline void conv1d_same(std::span<const double> x, std::span<const double> kernel, std::span<double> out) {
    check_odd_kernel(kernel.size());
    const auto t_len = static_cast<std::ptrdiff_t>(x.size());
    const auto k_len = static_cast<std::ptrdiff_t>(kernel.size());
    const std::ptrdiff_t pad = (k_len - 1) / 2;
    for (std::ptrdiff_t t = 0; t < t_len; ++t) {
        double s = 0.0;
        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, pad - t);
        const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(k_len, t_len + pad - t);
        for (std::ptrdiff_t j = j0; j < j1; ++j) s += kernel[j] * x[t + j - pad];
        out[t] = s;
    }
}

/// Accumulates into dx and dkernel.
inline void conv1d_same_backward(std::span<const double> x, std::span<const double> kernel, std::span<const double> dy,
                                 std::span<double> dx, std::span<double> dkernel) {
    const auto t_len = static_cast<std::ptrdiff_t>(x.size());
    const auto k_len = static_cast<std::ptrdiff_t>(kernel.size());
    const std::ptrdiff_t pad = (k_len - 1) / 2;
    for (std::ptrdiff_t t = 0; t < t_len; ++t) {
        const double g = dy[t];
        if (g == 0.0) continue;
        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, pad - t);
        const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(k_len, t_len + pad - t);
        for (std::ptrdiff_t j = j0; j < j1; ++j) {
            dx[t + j - pad] += kernel[j] * g;
            dkernel[j] += x[t + j - pad] * g;
        }
    }
}

/// Each of the C rows of x (C x T) is convolved with its own row of kernels (C x k).
inline Matrix conv1d_depthwise(const Matrix& x, const Matrix& kernels) {
    if (x.rows() != kernels.rows()) throw std::invalid_argument("conv1d_depthwise: channel mismatch");
    check_odd_kernel(kernels.cols());
    Matrix out(x.rows(), x.cols());
    for (std::size_t c = 0; c < x.rows(); ++c) conv1d_same(x.row(c), kernels.row(c), out.row(c));
    return out;
}

struct Conv1dGrads {
    Matrix dx;
    Matrix dkernels;
};

inline Conv1dGrads conv1d_depthwise_backward(const Matrix& x, const Matrix& kernels, const Matrix& dy) {
    require_shape(dy.rows() == x.rows() && dy.cols() == x.cols(), "conv1d_depthwise_backward");
    Conv1dGrads g{Matrix(x.rows(), x.cols()), Matrix(kernels.rows(), kernels.cols())};
    for (std::size_t c = 0; c < x.rows(); ++c)
        conv1d_same_backward(x.row(c), kernels.row(c), dy.row(c), g.dx.row(c), g.dkernels.row(c));
    return g;
}

// ---------------------------------------------------------------------------
// gradient checking

struct GradCheckReport {
    std::string op_name;
    double max_rel_err = 0.0;
    std::size_t worst_coordinate = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates_checked = 0;
    bool passed = true;
};

struct GradCheckOptions {
    double eps = 1e-5;
    double tol = 1e-4;
    // Per-tensor cap on checked coordinates; 0 checks every coordinate.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t sample_seed = 0;
};

/// Compares the analytic gradient that `backward` writes into the targets'
/// grad buffers against central differences of the loss sum(terms()).
/// `backward` must run its own forward pass; grads are zeroed before it is
/// called. The two perturbed evaluations are differenced term by term before
/// summing, which keeps cancellation in large reductions out of the estimate.
inline GradCheckReport finite_diff_check_terms(std::string op_name, const ParamList& targets,
                                               const std::function<std::vector<double>()>& terms,
                                               const std::function<void()>& backward,
                                               const GradCheckOptions& opt = {}) {
    GradCheckReport rep;
    rep.op_name = std::move(op_name);
    zero_grads(targets);
    backward();

    Rng rng(opt.sample_seed);
    std::size_t offset = 0;
    for (ParamTensor* p : targets) {
        const Matrix analytic = p->grad;
        std::vector<std::size_t> coords(p->size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (opt.max_coords_per_tensor > 0 && coords.size() > opt.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opt.max_coords_per_tensor);
        }
        for (std::size_t i : coords) {
            double& v = p->value.flat()[i];
            const double saved = v;
            v = saved + opt.eps;
            const std::vector<double> fp = terms();
            v = saved - opt.eps;
            const std::vector<double> fm = terms();
            v = saved;
            double diff = 0.0;
            for (std::size_t t = 0; t < fp.size(); ++t) diff += fp[t] - fm[t];
            const double numeric = diff / (2.0 * opt.eps);
            const double a = analytic.flat()[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++rep.coordinates_checked;
            if (rel > rep.max_rel_err || !std::isfinite(rel)) {
                rep.max_rel_err = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
                rep.worst_coordinate = offset + i;
                rep.worst_analytic = a;
                rep.worst_numeric = numeric;
            }
        }
        offset += p->size();
    }
    rep.passed = rep.max_rel_err < opt.tol;
    return rep;
}

/// Scalar-loss form of finite_diff_check_terms.
inline GradCheckReport finite_diff_check(std::string op_name, const ParamList& targets,
                                         const std::function<double()>& loss,
                                         const std::function<void()>& backward,
                                         const GradCheckOptions& opt = {}) {
    return finite_diff_check_terms(
        std::move(op_name), targets, [&] { return std::vector<double>{loss()}; }, backward, opt);
}

}  // namespace r2t
