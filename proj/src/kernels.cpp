#include "eatseg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "eatseg/errors.hpp"

namespace eatseg::kernels {
namespace {

// Register tile and cache blocking for the packed GEMM.
constexpr int kMr = 8;
constexpr int kNr = 32;
constexpr int kKc = 256;
constexpr int kNc = 2048;

// Upper bound on an im2col buffer, in floats. Batches are split into chunks to fit.
constexpr std::size_t kColBudget = std::size_t{1} << 24;

using vf16 = float __attribute__((vector_size(64)));

inline vf16 load16(const float* p) {
    vf16 v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}
inline void store16(float* p, vf16 v) { std::memcpy(p, &v, sizeof(v)); }

void pack_a(Trans ta, const float* a, int lda, int m, int k0, int kc, float* out) {
    const int slivers = (m + kMr - 1) / kMr;
#pragma omp parallel for schedule(static)
    for (int s = 0; s < slivers; ++s) {
        float* dst = out + static_cast<std::size_t>(s) * kMr * kc;
        const int i0 = s * kMr;
        const int rows = std::min(kMr, m - i0);
        for (int k = 0; k < kc; ++k) {
            for (int i = 0; i < kMr; ++i) {
                float v = 0.f;
                if (i < rows) {
                    const std::size_t r = static_cast<std::size_t>(i0 + i);
                    const std::size_t col = static_cast<std::size_t>(k0 + k);
                    v = ta == Trans::no ? a[r * lda + col] : a[col * lda + r];
                }
                dst[k * kMr + i] = v;
            }
        }
    }
}

void pack_b(Trans tb, const float* b, int ldb, int k0, int kc, int j0, int nc, float* out) {
    const int slivers = (nc + kNr - 1) / kNr;
#pragma omp parallel for schedule(static)
    for (int s = 0; s < slivers; ++s) {
        float* dst = out + static_cast<std::size_t>(s) * kNr * kc;
        const int jj = j0 + s * kNr;
        const int cols = std::min(kNr, j0 + nc - jj);
        for (int k = 0; k < kc; ++k) {
            const std::size_t row = static_cast<std::size_t>(k0 + k);
            float* d = dst + static_cast<std::size_t>(k) * kNr;
            if (tb == Trans::no) {
                const float* src = b + row * ldb + jj;
                int j = 0;
                for (; j < cols; ++j) d[j] = src[j];
                for (; j < kNr; ++j) d[j] = 0.f;
            } else {
                int j = 0;
                for (; j < cols; ++j) d[j] = b[static_cast<std::size_t>(jj + j) * ldb + row];
                for (; j < kNr; ++j) d[j] = 0.f;
            }
        }
    }
}

// acc[kMr][kNr] = sum_k a[k][i] * b[k][j]; always full tiles so every element
// sees the same instruction sequence regardless of its position in C.
inline void micro_kernel(int kc, const float* ap, const float* bp, float* acc) {
    vf16 c[kMr][2];
    for (int i = 0; i < kMr; ++i) c[i][0] = c[i][1] = vf16{};
    for (int k = 0; k < kc; ++k) {
        const vf16 b0 = load16(bp);
        const vf16 b1 = load16(bp + 16);
        for (int i = 0; i < kMr; ++i) {
            const float av = ap[i];
            c[i][0] += av * b0;
            c[i][1] += av * b1;
        }
        ap += kMr;
        bp += kNr;
    }
    for (int i = 0; i < kMr; ++i) {
        store16(acc + i * kNr, c[i][0]);
        store16(acc + i * kNr + 16, c[i][1]);
    }
}

struct ConvGeom {
    int n, cin, h, w, ksize, pad;
    std::size_t hw() const { return static_cast<std::size_t>(h) * w; }
    std::size_t krows() const { return static_cast<std::size_t>(cin) * ksize * ksize; }
};

// col[(ci,ky,kx)][(nl,y,x)] for samples [n0, n0+nb).
void im2col(const Tensor& x, const ConvGeom& g, int n0, int nb, float* col) {
    const std::size_t hw = g.hw();
    const std::size_t ncols = hw * nb;
    const int rows = static_cast<int>(g.krows());
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const int ci = r / (g.ksize * g.ksize);
        const int ky = (r / g.ksize) % g.ksize - g.pad;
        const int kx = r % g.ksize - g.pad;
        float* dst = col + static_cast<std::size_t>(r) * ncols;
        for (int nl = 0; nl < nb; ++nl) {
            const float* src = x.plane(n0 + nl, ci);
            float* d = dst + static_cast<std::size_t>(nl) * hw;
            for (int y = 0; y < g.h; ++y) {
                const int sy = y + ky;
                float* drow = d + static_cast<std::size_t>(y) * g.w;
                if (sy < 0 || sy >= g.h) {
                    std::fill(drow, drow + g.w, 0.f);
                    continue;
                }
                const float* srow = src + static_cast<std::size_t>(sy) * g.w;
                for (int xx = 0; xx < g.w; ++xx) {
                    const int sx = xx + kx;
                    drow[xx] = (sx < 0 || sx >= g.w) ? 0.f : srow[sx];
                }
            }
        }
    }
}

void col2im(const float* col, const ConvGeom& g, int n0, int nb, Tensor& dx) {
    const std::size_t hw = g.hw();
    const std::size_t ncols = hw * nb;
    const int kk = g.ksize * g.ksize;
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < g.cin; ++ci) {
        for (int nl = 0; nl < nb; ++nl) {
            float* dst = dx.plane(n0 + nl, ci);
            std::fill(dst, dst + hw, 0.f);
            for (int t = 0; t < kk; ++t) {
                const int ky = t / g.ksize - g.pad;
                const int kx = t % g.ksize - g.pad;
                const float* src = col + static_cast<std::size_t>(ci * kk + t) * ncols + nl * hw;
                for (int y = 0; y < g.h; ++y) {
                    const int sy = y + ky;
                    if (sy < 0 || sy >= g.h) continue;
                    const float* srow = src + static_cast<std::size_t>(y) * g.w;
                    float* drow = dst + static_cast<std::size_t>(sy) * g.w;
                    for (int xx = 0; xx < g.w; ++xx) {
                        const int sx = xx + kx;
                        if (sx >= 0 && sx < g.w) drow[sx] += srow[xx];
                    }
                }
            }
        }
    }
}

// Gathers channel planes of samples [n0, n0+nb) into a (c, nb*hw) matrix, or the reverse.
void gather_cols(const Tensor& t, int n0, int nb, float* out) {
    const std::size_t hw = t.plane_size();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < t.c(); ++c)
        for (int nl = 0; nl < nb; ++nl)
            std::memcpy(out + (static_cast<std::size_t>(c) * nb + nl) * hw, t.plane(n0 + nl, c), hw * sizeof(float));
}

int chunk_samples(std::size_t rows, std::size_t hw, int n) {
    const std::size_t per = std::max<std::size_t>(1, rows * hw);
    return static_cast<int>(std::clamp<std::size_t>(kColBudget / per, 1, static_cast<std::size_t>(n)));
}

}  // namespace

void sgemm(Trans ta, Trans tb, int m, int n, int k, const float* a, int lda, const float* b, int ldb, float beta,
           float* c, int ldc) {
    if (m <= 0 || n <= 0) return;
    if (k <= 0) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                float& cij = c[static_cast<std::size_t>(i) * ldc + j];
                cij = beta == 0.f ? 0.f : beta * cij;
            }
        return;
    }
    const int m_slivers = (m + kMr - 1) / kMr;
    std::vector<float> apack(static_cast<std::size_t>(m_slivers) * kMr * kKc);
    std::vector<float> bpack(static_cast<std::size_t>((kNc + kNr - 1) / kNr) * kNr * kKc);

    for (int jc = 0; jc < n; jc += kNc) {
        const int nc = std::min(kNc, n - jc);
        const int n_slivers = (nc + kNr - 1) / kNr;
        for (int pc = 0; pc < k; pc += kKc) {
            const int kc = std::min(kKc, k - pc);
            const bool first = pc == 0;
            pack_b(tb, b, ldb, pc, kc, jc, nc, bpack.data());
            pack_a(ta, a, lda, m, pc, kc, apack.data());
            const int tiles = n_slivers * m_slivers;
#pragma omp parallel for schedule(static)
            for (int t = 0; t < tiles; ++t) {
                const int js = t / m_slivers;
                const int is = t % m_slivers;
                alignas(64) float acc[kMr * kNr];
                micro_kernel(kc, apack.data() + static_cast<std::size_t>(is) * kMr * kc,
                             bpack.data() + static_cast<std::size_t>(js) * kNr * kc, acc);
                const int i0 = is * kMr;
                const int j0 = jc + js * kNr;
                const int rows = std::min(kMr, m - i0);
                const int cols = std::min(kNr, jc + nc - j0);
                for (int i = 0; i < rows; ++i) {
                    float* crow = c + static_cast<std::size_t>(i0 + i) * ldc + j0;
                    const float* arow = acc + i * kNr;
                    if (!first) {
                        for (int j = 0; j < cols; ++j) crow[j] += arow[j];
                    } else if (beta == 0.f) {
                        for (int j = 0; j < cols; ++j) crow[j] = arow[j];
                    } else {
                        for (int j = 0; j < cols; ++j) crow[j] = beta * crow[j] + arow[j];
                    }
                }
            }
        }
    }
}

void conv2d_forward(const Tensor& x, std::span<const float> w, std::span<const float> bias, int cout, int ksize,
                    Tensor& y) {
    const ConvGeom g{x.n(), x.c(), x.h(), x.w(), ksize, ksize / 2};
    require(ksize % 2 == 1, ErrorKind::invalid_argument, "conv2d: kernel size must be odd");
    require(w.size() == static_cast<std::size_t>(cout) * g.krows(), ErrorKind::invalid_argument,
            "conv2d: weight size does not match (cout, cin, k, k)");
    require(bias.empty() || bias.size() == static_cast<std::size_t>(cout), ErrorKind::invalid_argument,
            "conv2d: bias size mismatch");
    if (!(y.shape() == Shape4{g.n, cout, g.h, g.w})) y = Tensor(g.n, cout, g.h, g.w);

    const std::size_t hw = g.hw();
    const int chunk = chunk_samples(g.krows(), hw, g.n);
    std::vector<float> col(g.krows() * hw * chunk);
    std::vector<float> out(static_cast<std::size_t>(cout) * hw * chunk);
    for (int n0 = 0; n0 < g.n; n0 += chunk) {
        const int nb = std::min(chunk, g.n - n0);
        const int ncols = static_cast<int>(hw) * nb;
        if (ksize == 1) {
            gather_cols(x, n0, nb, col.data());
        } else {
            im2col(x, g, n0, nb, col.data());
        }
        sgemm(Trans::no, Trans::no, cout, ncols, static_cast<int>(g.krows()), w.data(), static_cast<int>(g.krows()),
              col.data(), ncols, 0.f, out.data(), ncols);
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co) {
            const float b = bias.empty() ? 0.f : bias[co];
            for (int nl = 0; nl < nb; ++nl) {
                const float* src = out.data() + (static_cast<std::size_t>(co) * nb + nl) * hw;
                float* dst = y.plane(n0 + nl, co);
                for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + b;
            }
        }
    }
}

void conv2d_backward(const Tensor& x, std::span<const float> w, const Tensor& dy, int ksize, Tensor* dx,
                     std::span<float> dw, std::span<float> dbias) {
    const ConvGeom g{x.n(), x.c(), x.h(), x.w(), ksize, ksize / 2};
    const int cout = dy.c();
    require(dy.n() == g.n && dy.h() == g.h && dy.w() == g.w, ErrorKind::invalid_argument,
            "conv2d_backward: gradient shape mismatch");
    require(dw.size() == static_cast<std::size_t>(cout) * g.krows(), ErrorKind::invalid_argument,
            "conv2d_backward: weight gradient size mismatch");
    if (dx && !(dx->shape() == x.shape())) *dx = Tensor(x.shape());

    const std::size_t hw = g.hw();
    const int krows = static_cast<int>(g.krows());
    const int chunk = chunk_samples(g.krows(), hw, g.n);
    std::vector<float> col(g.krows() * hw * chunk);
    std::vector<float> dyc(static_cast<std::size_t>(cout) * hw * chunk);

    if (!dbias.empty()) {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co) {
            double s = 0.0;
            for (int n = 0; n < g.n; ++n) {
                const float* p = dy.plane(n, co);
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
            }
            dbias[co] += static_cast<float>(s);
        }
    }

    for (int n0 = 0; n0 < g.n; n0 += chunk) {
        const int nb = std::min(chunk, g.n - n0);
        const int ncols = static_cast<int>(hw) * nb;
        gather_cols(dy, n0, nb, dyc.data());
        if (ksize == 1) {
            gather_cols(x, n0, nb, col.data());
        } else {
            im2col(x, g, n0, nb, col.data());
        }
        // dW (cout x krows) += dY (cout x ncols) * col^T
        sgemm(Trans::no, Trans::yes, cout, krows, ncols, dyc.data(), ncols, col.data(), ncols, 1.f, dw.data(), krows);
        if (dx) {
            // dcol (krows x ncols) = W^T * dY
            sgemm(Trans::yes, Trans::no, krows, ncols, cout, w.data(), krows, dyc.data(), ncols, 0.f, col.data(),
                  ncols);
            col2im(col.data(), g, n0, nb, *dx);
        }
    }
}

void upconv2x2_forward(const Tensor& x, std::span<const float> w, std::span<const float> bias, int cout, Tensor& y) {
    const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
    const int taps = cout * 4;
    require(w.size() == static_cast<std::size_t>(cin) * taps, ErrorKind::invalid_argument,
            "upconv2x2: weight size does not match (cin, cout, 2, 2)");
    require(bias.size() == static_cast<std::size_t>(cout), ErrorKind::invalid_argument, "upconv2x2: bias size");
    if (!(y.shape() == Shape4{n, cout, 2 * h, 2 * wd})) y = Tensor(n, cout, 2 * h, 2 * wd);

    const std::size_t hw = x.plane_size();
    const int chunk = chunk_samples(static_cast<std::size_t>(std::max(cin, taps)), hw, n);
    std::vector<float> xc(static_cast<std::size_t>(cin) * hw * chunk);
    std::vector<float> out(static_cast<std::size_t>(taps) * hw * chunk);
    for (int n0 = 0; n0 < n; n0 += chunk) {
        const int nb = std::min(chunk, n - n0);
        const int ncols = static_cast<int>(hw) * nb;
        gather_cols(x, n0, nb, xc.data());
        // out (taps x ncols) = W^T (taps x cin) * X (cin x ncols)
        sgemm(Trans::yes, Trans::no, taps, ncols, cin, w.data(), taps, xc.data(), ncols, 0.f, out.data(), ncols);
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co) {
            for (int nl = 0; nl < nb; ++nl) {
                float* dst = y.plane(n0 + nl, co);
                for (int t = 0; t < 4; ++t) {
                    const int a = t / 2, b = t % 2;
                    const float* src = out.data() + (static_cast<std::size_t>(co * 4 + t) * nb + nl) * hw;
                    for (int i = 0; i < h; ++i)
                        for (int j = 0; j < wd; ++j)
                            dst[static_cast<std::size_t>(2 * i + a) * (2 * wd) + 2 * j + b] =
                                src[static_cast<std::size_t>(i) * wd + j] + bias[co];
                }
            }
        }
    }
}

void upconv2x2_backward(const Tensor& x, std::span<const float> w, const Tensor& dy, Tensor& dx, std::span<float> dw,
                        std::span<float> dbias) {
    const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
    const int cout = dy.c();
    const int taps = cout * 4;
    require(dy.n() == n && dy.h() == 2 * h && dy.w() == 2 * wd, ErrorKind::invalid_argument,
            "upconv2x2_backward: gradient shape mismatch");
    if (!(dx.shape() == x.shape())) dx = Tensor(x.shape());

    const std::size_t hw = x.plane_size();
    const std::size_t ohw = dy.plane_size();
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        double s = 0.0;
        for (int b = 0; b < n; ++b) {
            const float* p = dy.plane(b, co);
            for (std::size_t i = 0; i < ohw; ++i) s += p[i];
        }
        dbias[co] += static_cast<float>(s);
    }

    const int chunk = chunk_samples(static_cast<std::size_t>(std::max(cin, taps)), hw, n);
    std::vector<float> xc(static_cast<std::size_t>(cin) * hw * chunk);
    std::vector<float> dt(static_cast<std::size_t>(taps) * hw * chunk);
    for (int n0 = 0; n0 < n; n0 += chunk) {
        const int nb = std::min(chunk, n - n0);
        const int ncols = static_cast<int>(hw) * nb;
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cout; ++co) {
            for (int nl = 0; nl < nb; ++nl) {
                const float* src = dy.plane(n0 + nl, co);
                for (int t = 0; t < 4; ++t) {
                    const int a = t / 2, b = t % 2;
                    float* dst = dt.data() + (static_cast<std::size_t>(co * 4 + t) * nb + nl) * hw;
                    for (int i = 0; i < h; ++i)
                        for (int j = 0; j < wd; ++j)
                            dst[static_cast<std::size_t>(i) * wd + j] =
                                src[static_cast<std::size_t>(2 * i + a) * (2 * wd) + 2 * j + b];
                }
            }
        }
        gather_cols(x, n0, nb, xc.data());
        // dW (cin x taps) += X (cin x ncols) * dT^T
        sgemm(Trans::no, Trans::yes, cin, taps, ncols, xc.data(), ncols, dt.data(), ncols, 1.f, dw.data(), taps);
        // dX (cin x ncols) = W (cin x taps) * dT
        sgemm(Trans::no, Trans::no, cin, ncols, taps, w.data(), taps, dt.data(), ncols, 0.f, xc.data(), ncols);
#pragma omp parallel for schedule(static)
        for (int c = 0; c < cin; ++c)
            for (int nl = 0; nl < nb; ++nl)
                std::memcpy(dx.plane(n0 + nl, c), xc.data() + (static_cast<std::size_t>(c) * nb + nl) * hw,
                            hw * sizeof(float));
    }
}

void batchnorm_forward_train(const Tensor& x, std::span<const float> gamma, std::span<const float> beta, float eps,
                             Tensor& y, Tensor& xhat, std::vector<float>& inv_std, std::vector<float>& mean,
                             std::vector<float>& var_unbiased) {
    const int n = x.n(), c = x.c();
    const std::size_t hw = x.plane_size();
    const double count = static_cast<double>(n) * hw;
    if (!(y.shape() == x.shape())) y = Tensor(x.shape());
    if (!(xhat.shape() == x.shape())) xhat = Tensor(x.shape());
    inv_std.assign(c, 0.f);
    mean.assign(c, 0.f);
    var_unbiased.assign(c, 0.f);
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int b = 0; b < n; ++b) {
            const float* p = x.plane(b, ch);
            for (std::size_t i = 0; i < hw; ++i) s += p[i];
        }
        const double mu = s / count;
        double ss = 0.0;
        for (int b = 0; b < n; ++b) {
            const float* p = x.plane(b, ch);
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = p[i] - mu;
                ss += d * d;
            }
        }
        const double var = ss / count;
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        inv_std[ch] = is;
        mean[ch] = static_cast<float>(mu);
        var_unbiased[ch] = static_cast<float>(count > 1 ? ss / (count - 1) : var);
        const float muf = static_cast<float>(mu);
        for (int b = 0; b < n; ++b) {
            const float* p = x.plane(b, ch);
            float* xh = xhat.plane(b, ch);
            float* out = y.plane(b, ch);
            for (std::size_t i = 0; i < hw; ++i) {
                xh[i] = (p[i] - muf) * is;
                out[i] = gamma[ch] * xh[i] + beta[ch];
            }
        }
    }
}

void batchnorm_forward_eval(const Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                            std::span<const float> running_mean, std::span<const float> running_var, float eps,
                            Tensor& y) {
    const int n = x.n(), c = x.c();
    const std::size_t hw = x.plane_size();
    if (!(y.shape() == x.shape())) y = Tensor(x.shape());
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const float is = 1.f / std::sqrt(running_var[ch] + eps);
        const float scale = gamma[ch] * is;
        const float shift = beta[ch] - running_mean[ch] * scale;
        for (int b = 0; b < n; ++b) {
            const float* p = x.plane(b, ch);
            float* out = y.plane(b, ch);
            for (std::size_t i = 0; i < hw; ++i) out[i] = p[i] * scale + shift;
        }
    }
}

void batchnorm_backward(const Tensor& xhat, std::span<const float> inv_std, std::span<const float> gamma,
                        const Tensor& dy, Tensor& dx, std::span<float> dgamma, std::span<float> dbeta) {
    const int n = xhat.n(), c = xhat.c();
    const std::size_t hw = xhat.plane_size();
    const double count = static_cast<double>(n) * hw;
    if (!(dx.shape() == xhat.shape())) dx = Tensor(xhat.shape());
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        double sdy = 0.0, sdyx = 0.0;
        for (int b = 0; b < n; ++b) {
            const float* g = dy.plane(b, ch);
            const float* xh = xhat.plane(b, ch);
            for (std::size_t i = 0; i < hw; ++i) {
                sdy += g[i];
                sdyx += static_cast<double>(g[i]) * xh[i];
            }
        }
        dgamma[ch] += static_cast<float>(sdyx);
        dbeta[ch] += static_cast<float>(sdy);
        const float mdy = static_cast<float>(sdy / count);
        const float mdyx = static_cast<float>(sdyx / count);
        const float k = gamma[ch] * inv_std[ch];
        for (int b = 0; b < n; ++b) {
            const float* g = dy.plane(b, ch);
            const float* xh = xhat.plane(b, ch);
            float* out = dx.plane(b, ch);
            for (std::size_t i = 0; i < hw; ++i) out[i] = k * (g[i] - mdy - xh[i] * mdyx);
        }
    }
}

void relu_inplace(Tensor& x) {
    float* p = x.data();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.numel());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = p[i] > 0.f ? p[i] : 0.f;
}

void relu_backward_inplace(const Tensor& y, Tensor& dy) {
    const float* yp = y.data();
    float* g = dy.data();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(y.numel());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        if (!(yp[i] > 0.f)) g[i] = 0.f;
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::uint32_t>& argmax) {
    require(x.h() % 2 == 0 && x.w() % 2 == 0, ErrorKind::invalid_argument,
            "maxpool2: spatial size " + std::to_string(x.h()) + "x" + std::to_string(x.w()) + " is not even");
    const int oh = x.h() / 2, ow = x.w() / 2;
    if (!(y.shape() == Shape4{x.n(), x.c(), oh, ow})) y = Tensor(x.n(), x.c(), oh, ow);
    argmax.resize(y.numel());
    const int planes = x.n() * x.c();
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const float* src = x.data() + static_cast<std::size_t>(p) * x.plane_size();
        float* dst = y.data() + static_cast<std::size_t>(p) * y.plane_size();
        std::uint32_t* am = argmax.data() + static_cast<std::size_t>(p) * y.plane_size();
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                std::uint32_t best = static_cast<std::uint32_t>(2 * i * x.w() + 2 * j);
                for (int t = 1; t < 4; ++t) {
                    const std::uint32_t idx = static_cast<std::uint32_t>((2 * i + t / 2) * x.w() + 2 * j + t % 2);
                    if (src[idx] > src[best]) best = idx;
                }
                dst[i * ow + j] = src[best];
                am[i * ow + j] = best;
            }
    }
}

void maxpool2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, Shape4 x_shape, Tensor& dx) {
    if (!(dx.shape() == x_shape)) dx = Tensor(x_shape);
    const int planes = x_shape.n * x_shape.c;
    const std::size_t in_hw = static_cast<std::size_t>(x_shape.h) * x_shape.w;
    const std::size_t out_hw = dy.plane_size();
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        float* dst = dx.data() + static_cast<std::size_t>(p) * in_hw;
        std::fill(dst, dst + in_hw, 0.f);
        const float* g = dy.data() + static_cast<std::size_t>(p) * out_hw;
        const std::uint32_t* am = argmax.data() + static_cast<std::size_t>(p) * out_hw;
        for (std::size_t i = 0; i < out_hw; ++i) dst[am[i]] += g[i];
    }
}

void sigmoid_inplace(Tensor& x) {
    float* p = x.data();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.numel());
    constexpr float lo = std::numeric_limits<float>::min();
    const float hi = std::nextafter(1.f, 0.f);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const float z = std::clamp(p[i], -80.f, 80.f);
        p[i] = std::clamp(1.f / (1.f + std::exp(-z)), lo, hi);
    }
}

void concat_channels(const Tensor& a, const Tensor& b, Tensor& out) {
    require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(), ErrorKind::invalid_argument,
            "concat: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
    const Shape4 s{a.n(), a.c() + b.c(), a.h(), a.w()};
    if (!(out.shape() == s)) out = Tensor(s);
    const std::size_t hw = a.plane_size();
    for (int n = 0; n < a.n(); ++n) {
        std::memcpy(out.plane(n, 0), a.plane(n, 0), hw * a.c() * sizeof(float));
        std::memcpy(out.plane(n, a.c()), b.plane(n, 0), hw * b.c() * sizeof(float));
    }
}

void split_channels(const Tensor& in, int c_first, Tensor& a, Tensor& b) {
    const Shape4 sa{in.n(), c_first, in.h(), in.w()};
    const Shape4 sb{in.n(), in.c() - c_first, in.h(), in.w()};
    if (!(a.shape() == sa)) a = Tensor(sa);
    if (!(b.shape() == sb)) b = Tensor(sb);
    const std::size_t hw = in.plane_size();
    for (int n = 0; n < in.n(); ++n) {
        std::memcpy(a.plane(n, 0), in.plane(n, 0), hw * sa.c * sizeof(float));
        std::memcpy(b.plane(n, 0), in.plane(n, c_first), hw * sb.c * sizeof(float));
    }
}

}  // namespace eatseg::kernels
