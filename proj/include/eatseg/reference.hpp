#pragma once

// Serial, direct-loop reference implementations of the network kernels.
// Straightforward index arithmetic with no im2col or GEMM packing; templated
// so tests can run them in double for finite-difference checks.

#include <cmath>
#include <cstddef>
#include <vector>

#include "eatseg/tensor.hpp"

namespace eatseg::reference {

template <typename T>
struct Array4 {
    Shape4 shape{};
    std::vector<T> v;

    Array4() = default;
    explicit Array4(Shape4 s, T fill = T{}) : shape(s), v(s.numel(), fill) {}

    T& operator()(int n, int c, int y, int x) { return v[index(n, c, y, x)]; }
    T operator()(int n, int c, int y, int x) const { return v[index(n, c, y, x)]; }
    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape.c + c) * shape.h + y) * shape.w + x;
    }
};

template <typename T>
Array4<T> from_tensor(const Tensor& t) {
    Array4<T> a(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) a.v[i] = static_cast<T>(t.data()[i]);
    return a;
}

template <typename T>
Tensor to_tensor(const Array4<T>& a) {
    Tensor t(a.shape);
    for (std::size_t i = 0; i < a.v.size(); ++i) t.data()[i] = static_cast<float>(a.v[i]);
    return t;
}

/// y[n,co,y,x] = b[co] + sum w[co,ci,ky,kx] * x[n,ci,y+ky-p,x+kx-p]
template <typename T>
Array4<T> conv2d_forward(const Array4<T>& x, const std::vector<T>& w, const std::vector<T>& bias, int cout,
                         int ksize) {
    const int pad = ksize / 2;
    const auto [n, cin, h, wd] = x.shape;
    Array4<T> y(Shape4{n, cout, h, wd});
    for (int b = 0; b < n; ++b)
        for (int co = 0; co < cout; ++co)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < wd; ++j) {
                    T s = bias.empty() ? T{} : bias[co];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < ksize; ++ky)
                            for (int kx = 0; kx < ksize; ++kx) {
                                const int sy = i + ky - pad, sx = j + kx - pad;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                                s += w[((static_cast<std::size_t>(co) * cin + ci) * ksize + ky) * ksize + kx] *
                                     x(b, ci, sy, sx);
                            }
                    y(b, co, i, j) = s;
                }
    return y;
}

template <typename T>
struct ConvGrads {
    Array4<T> dx;
    std::vector<T> dw, dbias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Array4<T>& x, const std::vector<T>& w, const Array4<T>& dy, int ksize) {
    const int pad = ksize / 2;
    const auto [n, cin, h, wd] = x.shape;
    const int cout = dy.shape.c;
    ConvGrads<T> g{Array4<T>(x.shape), std::vector<T>(w.size()), std::vector<T>(cout)};
    for (int b = 0; b < n; ++b)
        for (int co = 0; co < cout; ++co)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < wd; ++j) {
                    const T d = dy(b, co, i, j);
                    g.dbias[co] += d;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < ksize; ++ky)
                            for (int kx = 0; kx < ksize; ++kx) {
                                const int sy = i + ky - pad, sx = j + kx - pad;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                                const std::size_t wi = ((static_cast<std::size_t>(co) * cin + ci) * ksize + ky) * ksize + kx;
                                g.dw[wi] += d * x(b, ci, sy, sx);
                                g.dx(b, ci, sy, sx) += d * w[wi];
                            }
                }
    return g;
}

/// Transposed conv, kernel 2 stride 2: y[n,co,2i+a,2j+b] = bias[co] + sum_ci w[ci,co,a,b] x[n,ci,i,j]
template <typename T>
Array4<T> upconv2x2_forward(const Array4<T>& x, const std::vector<T>& w, const std::vector<T>& bias, int cout) {
    const auto [n, cin, h, wd] = x.shape;
    Array4<T> y(Shape4{n, cout, 2 * h, 2 * wd});
    for (int b = 0; b < n; ++b)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < 2 * h; ++oy)
                for (int ox = 0; ox < 2 * wd; ++ox) {
                    T s = bias[co];
                    for (int ci = 0; ci < cin; ++ci)
                        s += w[((static_cast<std::size_t>(ci) * cout + co) * 2 + oy % 2) * 2 + ox % 2] *
                             x(b, ci, oy / 2, ox / 2);
                    y(b, co, oy, ox) = s;
                }
    return y;
}

template <typename T>
ConvGrads<T> upconv2x2_backward(const Array4<T>& x, const std::vector<T>& w, const Array4<T>& dy) {
    const auto [n, cin, h, wd] = x.shape;
    const int cout = dy.shape.c;
    ConvGrads<T> g{Array4<T>(x.shape), std::vector<T>(w.size()), std::vector<T>(cout)};
    for (int b = 0; b < n; ++b)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < 2 * h; ++oy)
                for (int ox = 0; ox < 2 * wd; ++ox) {
                    const T d = dy(b, co, oy, ox);
                    g.dbias[co] += d;
                    for (int ci = 0; ci < cin; ++ci) {
                        const std::size_t wi = ((static_cast<std::size_t>(ci) * cout + co) * 2 + oy % 2) * 2 + ox % 2;
                        g.dw[wi] += d * x(b, ci, oy / 2, ox / 2);
                        g.dx(b, ci, oy / 2, ox / 2) += d * w[wi];
                    }
                }
    return g;
}

/// Training-mode batch norm with biased batch variance.
template <typename T>
Array4<T> batchnorm_forward_train(const Array4<T>& x, const std::vector<T>& gamma, const std::vector<T>& beta,
                                  T eps) {
    const auto [n, c, h, wd] = x.shape;
    Array4<T> y(x.shape);
    const T count = static_cast<T>(n * h * wd);
    for (int ch = 0; ch < c; ++ch) {
        T mu{}, var{};
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < wd; ++j) mu += x(b, ch, i, j);
        mu /= count;
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < wd; ++j) var += (x(b, ch, i, j) - mu) * (x(b, ch, i, j) - mu);
        var /= count;
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < wd; ++j)
                    y(b, ch, i, j) = gamma[ch] * (x(b, ch, i, j) - mu) / std::sqrt(var + eps) + beta[ch];
    }
    return y;
}

template <typename T>
Array4<T> maxpool2_forward(const Array4<T>& x) {
    const auto [n, c, h, wd] = x.shape;
    Array4<T> y(Shape4{n, c, h / 2, wd / 2});
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h / 2; ++i)
                for (int j = 0; j < wd / 2; ++j) {
                    T m = x(b, ch, 2 * i, 2 * j);
                    for (int t = 1; t < 4; ++t) {
                        const T v = x(b, ch, 2 * i + t / 2, 2 * j + t % 2);
                        if (v > m) m = v;
                    }
                    y(b, ch, i, j) = m;
                }
    return y;
}

/// Naive triple loop: C = op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, const T* a, int lda, const T* b, int ldb, T beta, T* c, int ldc) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T s{};
            for (int p = 0; p < k; ++p) {
                const T av = ta ? a[static_cast<std::size_t>(p) * lda + i] : a[static_cast<std::size_t>(i) * lda + p];
                const T bv = tb ? b[static_cast<std::size_t>(j) * ldb + p] : b[static_cast<std::size_t>(p) * ldb + j];
                s += av * bv;
            }
            T& cij = c[static_cast<std::size_t>(i) * ldc + j];
            cij = (beta == T{} ? T{} : beta * cij) + s;
        }
}

}  // namespace eatseg::reference
