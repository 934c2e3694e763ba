#pragma once

// OpenMP-parallel layer kernels used by the segmentation network.
//
// Every kernel assigns each output element to exactly one thread and reduces
// in a fixed order, so results are bit-identical for any thread count. The
// serial reference versions in reference.hpp are the test oracles.

#include <cstdint>
#include <span>
#include <vector>

#include "eatseg/tensor.hpp"

namespace eatseg::kernels {

enum class Trans { no, yes };

/// C = op(A) * op(B) + beta * C, with op(A) m x k and op(B) k x n, all row-major.
void sgemm(Trans ta, Trans tb, int m, int n, int k, const float* a, int lda, const float* b, int ldb, float beta,
           float* c, int ldc);

/// Same-padded, stride-1 convolution. `w` is (cout, cin, ksize, ksize); `bias` may be empty.
void conv2d_forward(const Tensor& x, std::span<const float> w, std::span<const float> bias, int cout, int ksize,
                    Tensor& y);

/// Accumulates into `dw` / `dbias` (+=). Overwrites `*dx` when non-null.
void conv2d_backward(const Tensor& x, std::span<const float> w, const Tensor& dy, int ksize, Tensor* dx,
                     std::span<float> dw, std::span<float> dbias);

/// Transposed convolution, kernel 2, stride 2. `w` is (cin, cout, 2, 2).
void upconv2x2_forward(const Tensor& x, std::span<const float> w, std::span<const float> bias, int cout, Tensor& y);
void upconv2x2_backward(const Tensor& x, std::span<const float> w, const Tensor& dy, Tensor& dx, std::span<float> dw,
                        std::span<float> dbias);

/// Training-mode batch norm. Writes normalized activations to `xhat` and per-channel
/// batch statistics (inverse std, mean, unbiased variance) for the running averages.
void batchnorm_forward_train(const Tensor& x, std::span<const float> gamma, std::span<const float> beta, float eps,
                             Tensor& y, Tensor& xhat, std::vector<float>& inv_std, std::vector<float>& mean,
                             std::vector<float>& var_unbiased);
void batchnorm_forward_eval(const Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                            std::span<const float> running_mean, std::span<const float> running_var, float eps,
                            Tensor& y);
void batchnorm_backward(const Tensor& xhat, std::span<const float> inv_std, std::span<const float> gamma,
                        const Tensor& dy, Tensor& dx, std::span<float> dgamma, std::span<float> dbeta);

void relu_inplace(Tensor& x);
/// Zeroes `dy` wherever the forward output `y` was not positive.
void relu_backward_inplace(const Tensor& y, Tensor& dy);

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::uint32_t>& argmax);
void maxpool2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, Shape4 x_shape, Tensor& dx);

/// Logistic function clamped to the open interval (0, 1) in float.
void sigmoid_inplace(Tensor& x);

void concat_channels(const Tensor& a, const Tensor& b, Tensor& out);
void split_channels(const Tensor& in, int c_first, Tensor& a, Tensor& b);

}  // namespace eatseg::kernels
