#pragma once

// Multi-head scaled dot-product attention over one short sequence, with the
// optional depthwise 1-D convolution on the logits ("attn" placement) or on
// the values ("value" placement). Shared by regional and cross-region MSA.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "r2tmil/numerics.hpp"

namespace r2t {

enum class EpegVariant { attn, value };

struct AttentionOptions {
    std::size_t heads = 1;
    double scale = 1.0;                   // logits are divided by this
    const Matrix* kernels = nullptr;      // heads x k, null disables the positional conv
    EpegVariant variant = EpegVariant::attn;
};

struct AttentionCache {
    std::vector<Matrix> logits;  // per head T x T, before the conv
    std::vector<Matrix> alpha;   // per head T x T
    Matrix values;               // T x D, values after the optional conv
};

inline Matrix column_block(const Matrix& m, std::size_t c0, std::size_t width) {
    Matrix out(m.rows(), width);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t j = 0; j < width; ++j) out(r, j) = m(r, c0 + j);
    return out;
}

inline void add_column_block(Matrix& m, std::size_t c0, const Matrix& blk) {
    for (std::size_t r = 0; r < blk.rows(); ++r)
        for (std::size_t j = 0; j < blk.cols(); ++j) m(r, c0 + j) += blk(r, j);
}

/// Row softmax where keys with key_mask[j] == false get weight zero. A row
/// with no usable key is all zeros.
inline void masked_softmax_rows(Matrix& s, std::span<const char> key_mask) {
    if (key_mask.empty()) {
        for (std::size_t i = 0; i < s.rows(); ++i) softmax_inplace(s.row(i));
        return;
    }
    std::vector<double> buf;
    for (std::size_t i = 0; i < s.rows(); ++i) {
        auto row = s.row(i);
        buf.clear();
        for (std::size_t j = 0; j < row.size(); ++j)
            if (key_mask[j]) buf.push_back(row[j]);
        softmax_inplace(buf);
        std::size_t n = 0;
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = key_mask[j] ? buf[n++] : 0.0;
    }
}

/// Applies kernel row `h` along the sequence axis to every column of a T x w value block.
inline Matrix conv_columns(const Matrix& v, std::span<const double> kernel) {
    Matrix out(v.rows(), v.cols());
    std::vector<double> col(v.rows()), res(v.rows());
    for (std::size_t j = 0; j < v.cols(); ++j) {
        for (std::size_t t = 0; t < v.rows(); ++t) col[t] = v(t, j);
        conv1d_same(col, kernel, res);
        for (std::size_t t = 0; t < v.rows(); ++t) out(t, j) = res[t];
    }
    return out;
}

/// q, k, v: T x D. Returns the concatenated per-head outputs (T x D), before W^O.
inline Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionOptions& opt,
                     std::span<const char> key_mask = {}, AttentionCache* cache = nullptr) {
    const std::size_t t = q.rows();
    const std::size_t d = q.cols();
    const std::size_t dh = d / opt.heads;
    Matrix out(t, d);
    Matrix values = v;
    const bool value_conv = opt.kernels && opt.variant == EpegVariant::value;
    const bool logit_conv = opt.kernels && opt.variant == EpegVariant::attn;
    if (cache) {
        cache->logits.assign(opt.heads, Matrix());
        cache->alpha.assign(opt.heads, Matrix());
    }
    for (std::size_t h = 0; h < opt.heads; ++h) {
        const std::size_t c0 = h * dh;
        Matrix qh = column_block(q, c0, dh);
        Matrix kh = column_block(k, c0, dh);
        Matrix vh = column_block(v, c0, dh);
        if (value_conv) {
            vh += conv_columns(vh, opt.kernels->row(h));
            for (std::size_t r = 0; r < t; ++r)
                for (std::size_t j = 0; j < dh; ++j) values(r, c0 + j) = vh(r, j);
        }
        Matrix e = matmul_nt(qh, kh);
        e *= 1.0 / opt.scale;
        Matrix s = e;
        if (logit_conv) {
            std::vector<double> conv(t);
            for (std::size_t i = 0; i < t; ++i) {
                conv1d_same(e.row(i), opt.kernels->row(h), conv);
                auto srow = s.row(i);
                for (std::size_t j = 0; j < t; ++j) srow[j] += conv[j];
            }
        }
        masked_softmax_rows(s, key_mask);
        const Matrix oh = matmul(s, vh);
        for (std::size_t r = 0; r < t; ++r)
            for (std::size_t j = 0; j < dh; ++j) out(r, c0 + j) = oh(r, j);
        if (cache) {
            cache->logits[h] = std::move(e);
            cache->alpha[h] = std::move(s);
        }
    }
    if (cache) cache->values = std::move(values);
    return out;
}

struct AttentionGrads {
    Matrix dq, dk, dv;
};

/// Backward of attend(). Accumulates the conv kernel gradient into dkernels
/// (heads x k) when a kernel is in use.
inline AttentionGrads attend_backward(const Matrix& dout, const Matrix& q, const Matrix& k, const Matrix& v,
                                      const AttentionOptions& opt, const AttentionCache& cache,
                                      Matrix* dkernels = nullptr) {
    const std::size_t t = q.rows();
    const std::size_t d = q.cols();
    const std::size_t dh = d / opt.heads;
    AttentionGrads g{Matrix(t, d), Matrix(t, d), Matrix(t, d)};
    const bool value_conv = opt.kernels && opt.variant == EpegVariant::value;
    const bool logit_conv = opt.kernels && opt.variant == EpegVariant::attn;
    for (std::size_t h = 0; h < opt.heads; ++h) {
        const std::size_t c0 = h * dh;
        const Matrix& alpha = cache.alpha[h];
        const Matrix doh = column_block(dout, c0, dh);
        const Matrix vh = column_block(cache.values, c0, dh);
        Matrix dvh = matmul_tn(alpha, doh);
        const Matrix dalpha = matmul_nt(doh, vh);
        const Matrix ds = softmax_backward(alpha, dalpha, Axis::rows);
        Matrix de = ds;
        if (logit_conv) {
            const auto kern = opt.kernels->row(h);
            std::vector<double> dk_local(kern.size(), 0.0);
            for (std::size_t i = 0; i < t; ++i)
                conv1d_same_backward(cache.logits[h].row(i), kern, ds.row(i), de.row(i), dk_local);
            if (dkernels)
                for (std::size_t j = 0; j < kern.size(); ++j) (*dkernels)(h, j) += dk_local[j];
        }
        de *= 1.0 / opt.scale;
        const Matrix qh = column_block(q, c0, dh);
        const Matrix kh = column_block(k, c0, dh);
        add_column_block(g.dq, c0, matmul(de, kh));
        add_column_block(g.dk, c0, matmul_tn(de, qh));
        if (value_conv) {
            const auto kern = opt.kernels->row(h);
            const Matrix raw = column_block(v, c0, dh);
            std::vector<double> col(t), dcol(t), dx(t);
            std::vector<double> dk_local(kern.size(), 0.0);
            for (std::size_t j = 0; j < dh; ++j) {
                for (std::size_t r = 0; r < t; ++r) {
                    col[r] = raw(r, j);
                    dcol[r] = dvh(r, j);
                }
                std::fill(dx.begin(), dx.end(), 0.0);
                conv1d_same_backward(col, kern, dcol, dx, dk_local);
                for (std::size_t r = 0; r < t; ++r) dvh(r, j) += dx[r];
            }
            if (dkernels)
                for (std::size_t j = 0; j < kern.size(); ++j) (*dkernels)(h, j) += dk_local[j];
        }
        add_column_block(g.dv, c0, dvh);
    }
    return g;
}

}  // namespace r2t
