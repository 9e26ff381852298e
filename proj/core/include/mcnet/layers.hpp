#pragma once

#include <optional>
#include <vector>

#include "mcnet/tensor.hpp"

namespace mcnet {

struct ConvSpec {
    int out_channels = 0;
    int in_channels = 0;
    int kernel = 0;     // square; the nets here use only 1 and 3
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    bool has_bias = true;

    /// Effective kernel size under dilation: k + (k-1)(d-1).
    int effective_kernel() const { return kernel + (kernel - 1) * (dilation - 1); }
    int output_dim(int in_dim) const;

    bool operator==(const ConvSpec&) const = default;
};

enum class PoolKind { max, global_average };

struct PoolSpec {
    PoolKind kind = PoolKind::max;
    int window = 0;
    int stride = 1;
    int output_dim(int in_dim) const { return (in_dim - window) / stride + 1; }

    bool operator==(const PoolSpec&) const = default;
};

struct FireSpec {
    int squeeze_1x1 = 0;
    int expand_1x1 = 0;
    int expand_3x3 = 0;
    int out_channels() const { return expand_1x1 + expand_3x3; }

    bool operator==(const FireSpec&) const = default;
};

/// Cross-correlation with zero padding; kernel tap (i,j) reads input offset
/// (i*dilation, j*dilation). Accepts rank-3 (C,H,W) or rank-4 (N,C,H,W)
/// input; weights are (out_c, in_c, k, k).
Tensor conv2d_forward(const Tensor& x, const ConvSpec& spec, const Tensor& weights,
                      const Tensor* bias);

struct ConvGrads {
    Tensor grad_x;
    Tensor grad_w;
    std::optional<Tensor> grad_b;
};

/// Gradients of sum(grad_out * conv2d_forward(x)) w.r.t. x, weights, bias.
ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& spec, const Tensor& weights,
                          const Tensor& grad_out);

struct MaxPoolResult {
    Tensor y;
    /// Winning flat input offset per output element, for backward routing.
    /// Ties resolve to the lowest flat index.
    std::vector<std::int64_t> argmax;
};

MaxPoolResult maxpool_forward(const Tensor& x, const PoolSpec& spec);
Tensor maxpool_backward(const Tensor& grad_y, const std::vector<std::int64_t>& argmax,
                        const std::vector<int>& x_dims);

/// Per-channel mean over H x W; output spatial dims collapse to 1x1.
Tensor global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(const Tensor& grad_y, const std::vector<int>& x_dims);

Tensor relu(const Tensor& x);
/// Passes grad only where the forward input was > 0.
Tensor relu_backward(const Tensor& x, const Tensor& grad_y);

enum class SoftmaxAxis {
    channel,  // over C at each spatial position (rank-1 input: over the vector)
    spatial,  // over H*W per channel
};

/// Exp-normalize along the chosen axis with max subtraction. Non-finite
/// input is a hard error.
Tensor softmax(const Tensor& x, SoftmaxAxis axis);

/// Jacobian-vector product given the forward output y = softmax(x):
/// grad_x = y * (grad_y - sum(grad_y * y)) along the softmax axis.
Tensor softmax_backward(const Tensor& y, const Tensor& grad_y, SoftmaxAxis axis);

struct FireParams {
    Tensor squeeze_w, squeeze_b;
    Tensor expand1_w, expand1_b;
    Tensor expand3_w, expand3_b;
};

struct FireTrace {
    Tensor squeeze_pre;   // squeeze conv output before ReLU
    Tensor squeeze_act;   // after ReLU (input to both expands)
    Tensor expand1_pre;
    Tensor expand3_pre;
};

/// Squeeze 1x1 conv + ReLU, then parallel expand 1x1 and expand 3x3
/// (padding 1) convs + ReLU, channel-concatenated. Spatial dims preserved.
Tensor fire_forward(const Tensor& x, const FireSpec& spec, const FireParams& params,
                    FireTrace* trace = nullptr);

struct FireGrads {
    Tensor grad_x;
    FireParams grads;  // same shapes as the parameters
};

FireGrads fire_backward(const Tensor& x, const FireSpec& spec, const FireParams& params,
                        const FireTrace& trace, const Tensor& grad_out);

struct CrossEntropyResult {
    float loss = 0.0f;
    Tensor grad_logits;
};

/// loss = -log softmax(logits)[label]; grad = softmax(logits) - onehot(label).
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, int label);

}  // namespace mcnet
