#include <gtest/gtest.h>

#include <omp.h>

#include <random>

#include "eatseg/kernels.hpp"
#include "eatseg/reference.hpp"

using namespace eatseg;
namespace ref = eatseg::reference;

namespace {

Tensor random_tensor(Shape4 s, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    Tensor t(s);
    for (auto& v : t.span()) v = u(rng);
    return t;
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

std::vector<double> widen(const std::vector<float>& v) { return {v.begin(), v.end()}; }

void expect_close(std::span<const float> got, const std::vector<double>& want, double tol) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
        ASSERT_NEAR(got[i], want[i], tol * (1.0 + std::abs(want[i]))) << "index " << i;
}

}  // namespace

class SgemmShapes : public ::testing::TestWithParam<std::tuple<int, int, int, bool, bool>> {};

TEST_P(SgemmShapes, MatchesTripleLoop) {
    const auto [m, n, k, ta, tb] = GetParam();
    std::mt19937_64 rng(m * 1000 + n * 10 + k);
    const auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
    const auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
    auto c = random_vec(static_cast<std::size_t>(m) * n, rng);
    auto c_ref = widen(c);
    const int lda = ta ? m : k, ldb = tb ? k : n;
    kernels::sgemm(ta ? kernels::Trans::yes : kernels::Trans::no, tb ? kernels::Trans::yes : kernels::Trans::no, m, n,
                   k, a.data(), lda, b.data(), ldb, 1.f, c.data(), n);
    const auto ad = widen(a), bd = widen(b);
    ref::gemm<double>(ta, tb, m, n, k, ad.data(), lda, bd.data(), ldb, 1.0, c_ref.data(), n);
    expect_close(c, c_ref, 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Shapes, SgemmShapes,
                         ::testing::Values(std::tuple{1, 1, 1, false, false}, std::tuple{7, 5, 3, false, false},
                                           std::tuple{33, 17, 65, true, false}, std::tuple{64, 129, 31, false, true},
                                           std::tuple{70, 70, 300, true, true}));

TEST(Sgemm, BetaZeroIgnoresGarbage) {
    std::vector<float> a{1, 2, 3, 4}, b{1, 0, 0, 1};
    std::vector<float> c(4, std::numeric_limits<float>::quiet_NaN());
    kernels::sgemm(kernels::Trans::no, kernels::Trans::no, 2, 2, 2, a.data(), 2, b.data(), 2, 0.f, c.data(), 2);
    EXPECT_EQ(c, (std::vector<float>{1, 2, 3, 4}));
}

TEST(Conv2d, ForwardAndBackwardMatchReference) {
    std::mt19937_64 rng(3);
    for (int ksize : {1, 3}) {
        const Shape4 xs{2, 3, 9, 9};
        const int cout = 4;
        const Tensor x = random_tensor(xs, rng);
        const auto w = random_vec(static_cast<std::size_t>(cout) * 3 * ksize * ksize, rng);
        const auto bias = random_vec(cout, rng);
        Tensor y;
        kernels::conv2d_forward(x, w, bias, cout, ksize, y);
        const auto xr = ref::from_tensor<double>(x);
        const auto yr = ref::conv2d_forward<double>(xr, widen(w), widen(bias), cout, ksize);
        expect_close(y.span(), yr.v, 1e-5);

        const Tensor dy = random_tensor(y.shape(), rng);
        Tensor dx;
        std::vector<float> dw(w.size(), 0.f), db(cout, 0.f);
        kernels::conv2d_backward(x, w, dy, ksize, &dx, dw, db);
        const auto g = ref::conv2d_backward<double>(xr, widen(w), ref::from_tensor<double>(dy), ksize);
        expect_close(dx.span(), g.dx.v, 1e-5);
        expect_close(dw, g.dw, 1e-5);
        expect_close(db, g.dbias, 1e-5);
    }
}

TEST(Upconv, ForwardAndBackwardMatchReference) {
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor({2, 5, 4, 4}, rng);
    const int cout = 3;
    const auto w = random_vec(5 * cout * 4, rng);
    const auto bias = random_vec(cout, rng);
    Tensor y;
    kernels::upconv2x2_forward(x, w, bias, cout, y);
    const auto xr = ref::from_tensor<double>(x);
    expect_close(y.span(), ref::upconv2x2_forward<double>(xr, widen(w), widen(bias), cout).v, 1e-5);

    const Tensor dy = random_tensor(y.shape(), rng);
    Tensor dx;
    std::vector<float> dw(w.size(), 0.f), db(cout, 0.f);
    kernels::upconv2x2_backward(x, w, dy, dx, dw, db);
    const auto g = ref::upconv2x2_backward<double>(xr, widen(w), ref::from_tensor<double>(dy));
    expect_close(dx.span(), g.dx.v, 1e-5);
    expect_close(dw, g.dw, 1e-5);
    expect_close(db, g.dbias, 1e-5);
}

TEST(BatchNorm, TrainForwardMatchesReference) {
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({3, 4, 6, 6}, rng);
    const auto gamma = random_vec(4, rng), beta = random_vec(4, rng);
    Tensor y, xhat;
    std::vector<float> inv_std, mean, var;
    kernels::batchnorm_forward_train(x, gamma, beta, 1e-5f, y, xhat, inv_std, mean, var);
    const auto yr = ref::batchnorm_forward_train<double>(ref::from_tensor<double>(x), widen(gamma), widen(beta), 1e-5);
    expect_close(y.span(), yr.v, 1e-4);
}

TEST(MaxPool, ForwardMatchesReferenceAndRoutesGradient) {
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor y;
    std::vector<std::uint32_t> arg;
    kernels::maxpool2_forward(x, y, arg);
    expect_close(y.span(), ref::maxpool2_forward<double>(ref::from_tensor<double>(x)).v, 0.0);

    Tensor dy(y.shape(), 1.f), dx;
    kernels::maxpool2_backward(dy, arg, x.shape(), dx);
    double total = 0;
    for (float v : dx.span()) total += v;
    EXPECT_EQ(total, static_cast<double>(y.numel()));
}

TEST(Sigmoid, StaysInsideOpenInterval) {
    Tensor t(1, 1, 1, 4);
    t.span()[0] = -1000.f;
    t.span()[1] = 1000.f;
    t.span()[2] = 0.f;
    t.span()[3] = 2.f;
    kernels::sigmoid_inplace(t);
    EXPECT_GT(t.span()[0], 0.f);
    EXPECT_LT(t.span()[1], 1.f);
    EXPECT_FLOAT_EQ(t.span()[2], 0.5f);
    EXPECT_NEAR(t.span()[3], 1.0 / (1.0 + std::exp(-2.0)), 1e-6);
}

TEST(ConcatSplit, RoundTrip) {
    std::mt19937_64 rng(7);
    const Tensor a = random_tensor({2, 3, 4, 4}, rng), b = random_tensor({2, 5, 4, 4}, rng);
    Tensor cat, a2(a.shape()), b2(b.shape());
    kernels::concat_channels(a, b, cat);
    EXPECT_EQ(cat.c(), 8);
    kernels::split_channels(cat, 3, a2, b2);
    EXPECT_EQ(a2, a);
    EXPECT_EQ(b2, b);
}

// Reference backward passes against central differences of the reference forward, in double.
TEST(Gradients, ConvReferenceMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    const auto xr = ref::from_tensor<double>(random_tensor({1, 2, 5, 5}, rng));
    const auto w = widen(random_vec(3 * 2 * 9, rng));
    const std::vector<double> bias{0.1, -0.2, 0.3};
    const auto dyr = ref::from_tensor<double>(random_tensor({1, 3, 5, 5}, rng));
    auto objective = [&](const ref::Array4<double>& x, const std::vector<double>& ww) {
        const auto y = ref::conv2d_forward<double>(x, ww, bias, 3, 3);
        double s = 0;
        for (std::size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * dyr.v[i];
        return s;
    };
    const auto g = ref::conv2d_backward<double>(xr, w, dyr, 3);
    const double h = 1e-6;
    for (std::size_t i = 0; i < w.size(); i += 5) {
        auto wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        const double fd = (objective(xr, wp) - objective(xr, wm)) / (2 * h);
        EXPECT_NEAR(g.dw[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
    for (std::size_t i = 0; i < xr.v.size(); i += 3) {
        auto xp = xr, xm = xr;
        xp.v[i] += h;
        xm.v[i] -= h;
        const double fd = (objective(xp, w) - objective(xm, w)) / (2 * h);
        EXPECT_NEAR(g.dx.v[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST(Determinism, ThreadCountDoesNotChangeResults) {
    std::mt19937_64 rng(9);
    const Tensor x = random_tensor({2, 4, 16, 16}, rng);
    const auto w = random_vec(8 * 4 * 9, rng);
    Tensor y1, y2;
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    kernels::conv2d_forward(x, w, {}, 8, 3, y1);
    omp_set_num_threads(4);
    kernels::conv2d_forward(x, w, {}, 8, 3, y2);
    omp_set_num_threads(saved);
    EXPECT_EQ(y1, y2);
}

TEST(Gradients, BatchNormBackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(10);
    const Tensor x = random_tensor({2, 3, 3, 3}, rng);
    const auto gamma = random_vec(3, rng), beta = random_vec(3, rng);
    const Tensor dy = random_tensor(x.shape(), rng);
    Tensor y, xhat, dx;
    std::vector<float> inv_std, mean, var, dgamma(3, 0.f), dbeta(3, 0.f);
    kernels::batchnorm_forward_train(x, gamma, beta, 1e-5f, y, xhat, inv_std, mean, var);
    kernels::batchnorm_backward(xhat, inv_std, gamma, dy, dx, dgamma, dbeta);

    const auto dyr = ref::from_tensor<double>(dy);
    auto objective = [&](const ref::Array4<double>& xx, const std::vector<double>& g) {
        const auto yy = ref::batchnorm_forward_train<double>(xx, g, widen(beta), 1e-5);
        double s = 0;
        for (std::size_t i = 0; i < yy.v.size(); ++i) s += yy.v[i] * dyr.v[i];
        return s;
    };
    const auto xr = ref::from_tensor<double>(x);
    const auto g = widen(gamma);
    const double h = 1e-6;
    for (std::size_t i = 0; i < xr.v.size(); ++i) {
        auto xp = xr, xm = xr;
        xp.v[i] += h;
        xm.v[i] -= h;
        const double fd = (objective(xp, g) - objective(xm, g)) / (2 * h);
        EXPECT_NEAR(dx.data()[i], fd, 1e-3 * std::max(1.0, std::abs(fd))) << "dx " << i;
    }
    for (std::size_t c = 0; c < 3; ++c) {
        auto gp = g, gm = g;
        gp[c] += h;
        gm[c] -= h;
        const double fd = (objective(xr, gp) - objective(xr, gm)) / (2 * h);
        EXPECT_NEAR(dgamma[c], fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
}
