#pragma once

#include <span>
#include <vector>

#include "skelfuse/tensor.hpp"

// Differentiable operations on rank <= 2 row-major tensors. A rank-1 tensor
// of length m behaves as a 1 x m row wherever a matrix is expected.
//
// Binary elementwise ops broadcast one operand against the other when it is
// a scalar, a row (1 x m or length m) or a column (n x 1). Shape mismatches
// throw ShapeError.
namespace skelfuse::ad {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Gradient is zero wherever the value was clipped.
Tensor clamp(const Tensor& a, double lo, double hi);

/// axis 1 normalises each row, axis 0 each column.
Tensor softmax(const Tensor& a, int axis = 1);
Tensor log_softmax(const Tensor& a, int axis = 1);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reduces along axis: axis 1 gives n x 1, axis 0 gives 1 x m.
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// out[i] = a[index[i]]
Tensor gather_rows(const Tensor& a, std::span<const int> index);
/// out[index[i]] += a[i]; out has out_rows rows.
Tensor scatter_add_rows(const Tensor& a, std::span<const int> index, std::size_t out_rows);
/// Flat element pick; result has shape {index.size()}.
Tensor take(const Tensor& a, std::span<const std::size_t> index);

/// Per-row standardisation with biased variance, no affine part.
Tensor layer_norm(const Tensor& a, double eps = 1e-5);
/// x / sqrt(|x|^2 + eps) per row.
Tensor l2_normalize(const Tensor& a, double eps = 1e-12);
/// Fused multi-head scaled dot-product attention: per head h,
/// softmax(Q_h K_h^T / sqrt(d_h) + bias) V_h, heads concatenated. q is n x D,
/// k and v are m x D, bias (optional, may need a gradient) is n x m and is
/// shared by all heads. When `weights` is non-null it receives the
/// per-head attention matrices as constants.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                            const Tensor* bias = nullptr, std::vector<Tensor>* weights = nullptr);
/// Elementwise stable binary cross-entropy. Targets are treated as constants.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace skelfuse::ad
