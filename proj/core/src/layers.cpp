#include "mcnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mcnet {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) {
        throw std::invalid_argument(msg);
    }
}

std::vector<int> conv_out_dims(const Tensor& x, const ConvSpec& spec) {
    const int oh = spec.output_dim(x.height());
    const int ow = spec.output_dim(x.width());
    require(oh >= 1 && ow >= 1, "conv2d: effective kernel " +
                                    std::to_string(spec.effective_kernel()) +
                                    " exceeds padded input");
    if (x.rank() == 4) {
        return {x.dims[0], spec.out_channels, oh, ow};
    }
    return {spec.out_channels, oh, ow};
}

}  // namespace

int ConvSpec::output_dim(int in_dim) const {
    return (in_dim + 2 * padding - effective_kernel()) / stride + 1;
}

Tensor conv2d_forward(const Tensor& x, const ConvSpec& spec, const Tensor& weights,
                      const Tensor* bias) {
    require(x.rank() == 3 || x.rank() == 4, "conv2d: input must be rank 3 or 4");
    require(x.channels() == spec.in_channels, "conv2d: input has " +
                                                  std::to_string(x.channels()) +
                                                  " channels, spec expects " +
                                                  std::to_string(spec.in_channels));
    require(weights.dims == std::vector<int>{spec.out_channels, spec.in_channels,
                                             spec.kernel, spec.kernel},
            "conv2d: weight dims do not match spec");
    require(!spec.has_bias || (bias != nullptr && bias->dims == std::vector<int>{spec.out_channels}),
            "conv2d: bias missing or wrong shape");

    Tensor out(conv_out_dims(x, spec));
    const int ih = x.height(), iw = x.width();
    const int oh = out.height(), ow = out.width();
    const int k = spec.kernel, s = spec.stride, p = spec.padding, d = spec.dilation;
    const std::int64_t in_plane = static_cast<std::int64_t>(ih) * iw;
    const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;

    for (int n = 0; n < x.batch(); ++n) {
        const float* xin = x.data.data() + static_cast<std::size_t>(n) * spec.in_channels * in_plane;
        float* yout = out.data.data() + static_cast<std::size_t>(n) * spec.out_channels * out_plane;

        for (int co = 0; co < spec.out_channels; ++co) {
            float* ochan = yout + static_cast<std::size_t>(co) * out_plane;
            const float b = spec.has_bias ? bias->data[static_cast<std::size_t>(co)] : 0.0f;
            for (std::int64_t i = 0; i < out_plane; ++i) {
                ochan[i] = b;
            }
        }

        // Accumulation order (co, ci, kh, kw) with a contiguous sweep over
        // output rows keeps the inner loop vectorizable and the float sum
        // order fixed.
        for (int co = 0; co < spec.out_channels; ++co) {
            float* ochan = yout + static_cast<std::size_t>(co) * out_plane;
            for (int ci = 0; ci < spec.in_channels; ++ci) {
                const float* ichan = xin + static_cast<std::size_t>(ci) * in_plane;
                const float* wk = weights.data.data() +
                                  (static_cast<std::size_t>(co) * spec.in_channels + ci) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const float w = wk[kh * k + kw];
                        for (int y = 0; y < oh; ++y) {
                            const int in_y = y * s - p + kh * d;
                            if (in_y < 0 || in_y >= ih) continue;
                            // Valid output columns: 0 <= xo*s + off < iw.
                            const int off = kw * d - p;
                            int x0 = 0;
                            if (off < 0) x0 = (-off + s - 1) / s;
                            int x1 = ow;  // exclusive
                            if (off + (ow - 1) * s >= iw) x1 = (iw - off + s - 1) / s;
                            const float* irow = ichan + static_cast<std::size_t>(in_y) * iw;
                            float* orow = ochan + static_cast<std::size_t>(y) * ow;
                            for (int xo = x0; xo < x1; ++xo) {
                                orow[xo] += w * irow[xo * s + off];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& spec, const Tensor& weights,
                          const Tensor& grad_out) {
    require(x.rank() == 3 || x.rank() == 4, "conv2d_backward: input must be rank 3 or 4");
    require(grad_out.dims == conv_out_dims(x, spec),
            "conv2d_backward: grad_out dims do not match forward output");
    require(weights.dims == std::vector<int>{spec.out_channels, spec.in_channels,
                                             spec.kernel, spec.kernel},
            "conv2d_backward: weight dims do not match spec");

    ConvGrads g;
    g.grad_x = Tensor(x.dims);
    g.grad_w = Tensor(weights.dims);
    if (spec.has_bias) {
        g.grad_b = Tensor({spec.out_channels});
    }

    const int ih = x.height(), iw = x.width();
    const int oh = grad_out.height(), ow = grad_out.width();
    const int k = spec.kernel, s = spec.stride, p = spec.padding, d = spec.dilation;
    const std::int64_t in_plane = static_cast<std::int64_t>(ih) * iw;
    const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;

    for (int n = 0; n < x.batch(); ++n) {
        const float* xin = x.data.data() + static_cast<std::size_t>(n) * spec.in_channels * in_plane;
        const float* gout = grad_out.data.data() +
                            static_cast<std::size_t>(n) * spec.out_channels * out_plane;
        float* gx = g.grad_x.data.data() + static_cast<std::size_t>(n) * spec.in_channels * in_plane;

        if (spec.has_bias) {
            for (int co = 0; co < spec.out_channels; ++co) {
                const float* gchan = gout + static_cast<std::size_t>(co) * out_plane;
                float acc = 0.0f;
                for (std::int64_t i = 0; i < out_plane; ++i) {
                    acc += gchan[i];
                }
                g.grad_b->data[static_cast<std::size_t>(co)] += acc;
            }
        }

        for (int co = 0; co < spec.out_channels; ++co) {
            const float* gchan = gout + static_cast<std::size_t>(co) * out_plane;
            for (int ci = 0; ci < spec.in_channels; ++ci) {
                const float* ichan = xin + static_cast<std::size_t>(ci) * in_plane;
                float* gichan = gx + static_cast<std::size_t>(ci) * in_plane;
                const std::size_t wbase =
                    (static_cast<std::size_t>(co) * spec.in_channels + ci) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const float w = weights.data[wbase + kh * k + kw];
                        float wacc = 0.0f;
                        for (int y = 0; y < oh; ++y) {
                            const int in_y = y * s - p + kh * d;
                            if (in_y < 0 || in_y >= ih) continue;
                            const int off = kw * d - p;
                            int x0 = 0;
                            if (off < 0) x0 = (-off + s - 1) / s;
                            int x1 = ow;
                            if (off + (ow - 1) * s >= iw) x1 = (iw - off + s - 1) / s;
                            const float* irow = ichan + static_cast<std::size_t>(in_y) * iw;
                            float* girow = gichan + static_cast<std::size_t>(in_y) * iw;
                            const float* grow = gchan + static_cast<std::size_t>(y) * ow;
                            for (int xo = x0; xo < x1; ++xo) {
                                const float go = grow[xo];
                                wacc += go * irow[xo * s + off];
                                girow[xo * s + off] += w * go;
                            }
                        }
                        g.grad_w.data[wbase + kh * k + kw] += wacc;
                    }
                }
            }
        }
    }
    return g;
}

MaxPoolResult maxpool_forward(const Tensor& x, const PoolSpec& spec) {
    require(spec.kind == PoolKind::max, "maxpool_forward: spec kind must be max");
    require(x.rank() == 3 || x.rank() == 4, "maxpool: input must be rank 3 or 4");
    require(spec.window >= 1 && spec.window <= x.height() && spec.window <= x.width(),
            "maxpool: window exceeds input spatial dims");

    const int oh = spec.output_dim(x.height());
    const int ow = spec.output_dim(x.width());
    std::vector<int> out_dims = x.dims;
    out_dims[x.rank() - 2] = oh;
    out_dims[x.rank() - 1] = ow;

    MaxPoolResult res;
    res.y = Tensor(out_dims);
    res.argmax.assign(static_cast<std::size_t>(res.y.numel()), 0);

    const int ih = x.height(), iw = x.width();
    const std::int64_t in_plane = static_cast<std::int64_t>(ih) * iw;
    const int planes = x.batch() * x.channels();
    std::int64_t oi = 0;
    for (int pc = 0; pc < planes; ++pc) {
        const float* ichan = x.data.data() + static_cast<std::size_t>(pc) * in_plane;
        for (int y = 0; y < oh; ++y) {
            for (int xo = 0; xo < ow; ++xo) {
                const int y0 = y * spec.stride;
                const int x0 = xo * spec.stride;
                float best = -std::numeric_limits<float>::infinity();
                std::int64_t best_idx = 0;
                for (int wy = 0; wy < spec.window; ++wy) {
                    for (int wx = 0; wx < spec.window; ++wx) {
                        const std::int64_t idx =
                            static_cast<std::int64_t>(y0 + wy) * iw + (x0 + wx);
                        const float v = ichan[idx];
                        if (v > best) {  // strict: ties keep the lowest flat index
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                res.y.data[static_cast<std::size_t>(oi)] = best;
                res.argmax[static_cast<std::size_t>(oi)] = pc * in_plane + best_idx;
                ++oi;
            }
        }
    }
    return res;
}

Tensor maxpool_backward(const Tensor& grad_y, const std::vector<std::int64_t>& argmax,
                        const std::vector<int>& x_dims) {
    require(argmax.size() == grad_y.data.size(), "maxpool_backward: argmax size mismatch");
    Tensor gx(x_dims);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        gx.data[static_cast<std::size_t>(argmax[i])] += grad_y.data[i];
    }
    return gx;
}

Tensor global_average_pool(const Tensor& x) {
    require(x.rank() == 3 || x.rank() == 4, "global_average_pool: input must be rank 3 or 4");
    std::vector<int> out_dims = x.dims;
    out_dims[x.rank() - 2] = 1;
    out_dims[x.rank() - 1] = 1;
    Tensor out(out_dims);
    const std::int64_t plane = static_cast<std::int64_t>(x.height()) * x.width();
    const int planes = x.batch() * x.channels();
    for (int pc = 0; pc < planes; ++pc) {
        const float* ichan = x.data.data() + static_cast<std::size_t>(pc) * plane;
        float acc = 0.0f;
        for (std::int64_t i = 0; i < plane; ++i) {
            acc += ichan[i];
        }
        out.data[static_cast<std::size_t>(pc)] = acc / static_cast<float>(plane);
    }
    return out;
}

Tensor global_average_pool_backward(const Tensor& grad_y, const std::vector<int>& x_dims) {
    Tensor gx(x_dims);
    const std::int64_t plane =
        static_cast<std::int64_t>(x_dims[x_dims.size() - 2]) * x_dims[x_dims.size() - 1];
    const int planes = static_cast<int>(gx.numel() / plane);
    require(static_cast<std::int64_t>(grad_y.data.size()) == planes,
            "global_average_pool_backward: grad size mismatch");
    for (int pc = 0; pc < planes; ++pc) {
        const float g = grad_y.data[static_cast<std::size_t>(pc)] / static_cast<float>(plane);
        float* gchan = gx.data.data() + static_cast<std::size_t>(pc) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            gchan[i] = g;
        }
    }
    return gx;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.dims);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
    }
    return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_y) {
    require(x.same_shape(grad_y), "relu_backward: shape mismatch");
    Tensor gx(x.dims);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        gx.data[i] = x.data[i] > 0.0f ? grad_y.data[i] : 0.0f;
    }
    return gx;
}

namespace {

// Softmax over strided groups: `count` elements `stride` apart starting at
// each group base. Covers both axes without duplicating the stable-exp code.
void softmax_group(const float* in, float* out, std::int64_t count, std::int64_t stride) {
    float mx = in[0];
    for (std::int64_t i = 1; i < count; ++i) {
        mx = std::max(mx, in[i * stride]);
    }
    float denom = 0.0f;
    for (std::int64_t i = 0; i < count; ++i) {
        const float e = std::exp(in[i * stride] - mx);
        out[i * stride] = e;
        denom += e;
    }
    for (std::int64_t i = 0; i < count; ++i) {
        out[i * stride] /= denom;
    }
}

}  // namespace

Tensor softmax(const Tensor& x, SoftmaxAxis axis) {
    for (float v : x.data) {
        require(std::isfinite(v), "softmax: non-finite input");
    }
    Tensor out(x.dims);
    if (x.rank() <= 2 || (axis == SoftmaxAxis::channel && x.rank() == 1)) {
        softmax_group(x.data.data(), out.data.data(), x.numel(), 1);
        return out;
    }
    const std::int64_t plane = static_cast<std::int64_t>(x.height()) * x.width();
    const int c = x.channels();
    if (axis == SoftmaxAxis::spatial) {
        for (int pc = 0; pc < x.batch() * c; ++pc) {
            softmax_group(x.data.data() + static_cast<std::size_t>(pc) * plane,
                          out.data.data() + static_cast<std::size_t>(pc) * plane, plane, 1);
        }
    } else {
        for (int n = 0; n < x.batch(); ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * c * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                softmax_group(x.data.data() + base + i, out.data.data() + base + i, c, plane);
            }
        }
    }
    return out;
}

namespace {

void softmax_backward_group(const float* y, const float* gy, float* gx, std::int64_t count,
                            std::int64_t stride) {
    float dot = 0.0f;
    for (std::int64_t i = 0; i < count; ++i) {
        dot += y[i * stride] * gy[i * stride];
    }
    for (std::int64_t i = 0; i < count; ++i) {
        gx[i * stride] = y[i * stride] * (gy[i * stride] - dot);
    }
}

}  // namespace

Tensor softmax_backward(const Tensor& y, const Tensor& grad_y, SoftmaxAxis axis) {
    require(y.same_shape(grad_y), "softmax_backward: shape mismatch");
    Tensor gx(y.dims);
    if (y.rank() <= 2) {
        softmax_backward_group(y.data.data(), grad_y.data.data(), gx.data.data(), y.numel(), 1);
        return gx;
    }
    const std::int64_t plane = static_cast<std::int64_t>(y.height()) * y.width();
    const int c = y.channels();
    if (axis == SoftmaxAxis::spatial) {
        for (int pc = 0; pc < y.batch() * c; ++pc) {
            const std::size_t base = static_cast<std::size_t>(pc) * plane;
            softmax_backward_group(y.data.data() + base, grad_y.data.data() + base,
                                   gx.data.data() + base, plane, 1);
        }
    } else {
        for (int n = 0; n < y.batch(); ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * c * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                softmax_backward_group(y.data.data() + base + i, grad_y.data.data() + base + i,
                                       gx.data.data() + base + i, c, plane);
            }
        }
    }
    return gx;
}

Tensor fire_forward(const Tensor& x, const FireSpec& spec, const FireParams& params,
                    FireTrace* trace) {
    const int in_c = x.channels();
    ConvSpec squeeze{spec.squeeze_1x1, in_c, 1};
    ConvSpec expand1{spec.expand_1x1, spec.squeeze_1x1, 1};
    ConvSpec expand3{spec.expand_3x3, spec.squeeze_1x1, 3, 1, 1};

    Tensor sq_pre = conv2d_forward(x, squeeze, params.squeeze_w, &params.squeeze_b);
    Tensor sq = relu(sq_pre);
    Tensor e1_pre = conv2d_forward(sq, expand1, params.expand1_w, &params.expand1_b);
    Tensor e3_pre = conv2d_forward(sq, expand3, params.expand3_w, &params.expand3_b);
    const Tensor parts[2] = {relu(e1_pre), relu(e3_pre)};
    if (trace) {
        trace->squeeze_pre = std::move(sq_pre);
        trace->squeeze_act = std::move(sq);
        trace->expand1_pre = std::move(e1_pre);
        trace->expand3_pre = std::move(e3_pre);
    }
    return concat_channels(parts);
}

FireGrads fire_backward(const Tensor& x, const FireSpec& spec, const FireParams& params,
                        const FireTrace& trace, const Tensor& grad_out) {
    const int in_c = x.channels();
    ConvSpec squeeze{spec.squeeze_1x1, in_c, 1};
    ConvSpec expand1{spec.expand_1x1, spec.squeeze_1x1, 1};
    ConvSpec expand3{spec.expand_3x3, spec.squeeze_1x1, 3, 1, 1};

    Tensor g_e1 = relu_backward(trace.expand1_pre, slice_channels(grad_out, 0, spec.expand_1x1));
    Tensor g_e3 = relu_backward(trace.expand3_pre,
                                slice_channels(grad_out, spec.expand_1x1, spec.expand_3x3));

    ConvGrads e1g = conv2d_backward(trace.squeeze_act, expand1, params.expand1_w, g_e1);
    ConvGrads e3g = conv2d_backward(trace.squeeze_act, expand3, params.expand3_w, g_e3);

    Tensor g_sq = relu_backward(trace.squeeze_pre,
                                elementwise_add(e1g.grad_x, e3g.grad_x));
    ConvGrads sqg = conv2d_backward(x, squeeze, params.squeeze_w, g_sq);

    FireGrads out;
    out.grad_x = std::move(sqg.grad_x);
    out.grads.squeeze_w = std::move(sqg.grad_w);
    out.grads.squeeze_b = std::move(*sqg.grad_b);
    out.grads.expand1_w = std::move(e1g.grad_w);
    out.grads.expand1_b = std::move(*e1g.grad_b);
    out.grads.expand3_w = std::move(e3g.grad_w);
    out.grads.expand3_b = std::move(*e3g.grad_b);
    return out;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, int label) {
    require(label >= 0 && label < static_cast<int>(logits.numel()),
            "softmax_cross_entropy: label out of range");
    Tensor probs = softmax(logits, SoftmaxAxis::channel);
    CrossEntropyResult res;
    res.loss = -std::log(std::max(probs.data[static_cast<std::size_t>(label)],
                                  std::numeric_limits<float>::min()));
    res.grad_logits = probs;
    res.grad_logits.data[static_cast<std::size_t>(label)] -= 1.0f;
    return res;
}

}  // namespace mcnet
