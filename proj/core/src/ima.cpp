#include "mcnet/ima.hpp"

#include <stdexcept>
#include <string>
#include <unordered_set>

namespace mcnet {

namespace {

ConvSpec branch_dconv_spec(const ImaBranchSpec& b) {
    // padding = dilation keeps output dims equal to input dims for k=3.
    return ConvSpec{b.channels, b.channels, 3, 1, b.dilation, b.dilation};
}

ConvSpec branch_merge_spec(const ImaBranchSpec& b) {
    return ConvSpec{b.channels, b.channels, 1};
}

}  // namespace

void validate_ima_spec(const ImaSpec& spec) {
    if (spec.channels < 1) {
        throw std::invalid_argument("ima: channels must be >= 1");
    }
    if (spec.project_out < 1) {
        throw std::invalid_argument("ima: project_out must be >= 1");
    }
    if (spec.dilations.empty()) {
        throw std::invalid_argument("ima: need at least one branch dilation");
    }
    std::unordered_set<int> seen;
    for (int d : spec.dilations) {
        if (d < 1) {
            throw std::invalid_argument("ima: dilation must be >= 1");
        }
        if (!seen.insert(d).second) {
            throw std::invalid_argument("ima: dilations must be distinct");
        }
    }
}

Tensor ima_branch_forward(const Tensor& x, const ImaBranchSpec& branch,
                          const ImaBranchParams& params, ImaBranchTrace* trace) {
    if (x.channels() != branch.channels) {
        throw std::invalid_argument("ima branch: input has " + std::to_string(x.channels()) +
                                    " channels, branch expects " +
                                    std::to_string(branch.channels));
    }
    Tensor dconv = conv2d_forward(x, branch_dconv_spec(branch), params.dconv_w, &params.dconv_b);
    Tensor merged = conv2d_forward(dconv, branch_merge_spec(branch), params.merge_w,
                                   &params.merge_b);
    Tensor att = softmax(merged, SoftmaxAxis::spatial);
    Tensor out = elementwise_add(att, x);
    if (trace) {
        trace->dconv_out = std::move(dconv);
        trace->merge_out = std::move(merged);
        trace->attention = std::move(att);
    }
    return out;
}

Tensor ima_forward(const Tensor& x, const ImaSpec& spec, const ImaParams& params,
                   ImaTrace* trace) {
    validate_ima_spec(spec);
    if (x.channels() != spec.channels) {
        throw std::invalid_argument("ima: input has " + std::to_string(x.channels()) +
                                    " channels, spec expects " + std::to_string(spec.channels));
    }
    std::vector<Tensor> branch_outs;
    branch_outs.reserve(spec.dilations.size());
    if (trace) {
        trace->branches.assign(spec.dilations.size(), {});
    }
    for (std::size_t b = 0; b < spec.dilations.size(); ++b) {
        ImaBranchSpec bs{spec.channels, spec.dilations[b]};
        branch_outs.push_back(ima_branch_forward(x, bs, params.branches[b],
                                                 trace ? &trace->branches[b] : nullptr));
    }
    Tensor cat = branch_outs.size() >= 2 ? concat_channels(branch_outs)
                                         : std::move(branch_outs[0]);
    const int cat_c = spec.channels * spec.branch_count();
    ConvSpec project{spec.project_out, cat_c, 1};
    Tensor proj_pre = conv2d_forward(cat, project, params.project_w, &params.project_b);
    Tensor out = relu(proj_pre);
    if (trace) {
        trace->concat = std::move(cat);
        trace->project_pre = std::move(proj_pre);
    }
    return out;
}

ImaGrads ima_backward(const Tensor& x, const ImaSpec& spec, const ImaParams& params,
                      const ImaTrace& trace, const Tensor& grad_out) {
    const int cat_c = spec.channels * spec.branch_count();
    ConvSpec project{spec.project_out, cat_c, 1};

    Tensor g_proj_pre = relu_backward(trace.project_pre, grad_out);
    ConvGrads pg = conv2d_backward(trace.concat, project, params.project_w, g_proj_pre);

    ImaGrads out;
    out.grads.project_w = std::move(pg.grad_w);
    out.grads.project_b = std::move(*pg.grad_b);
    out.grads.branches.resize(spec.dilations.size());
    out.grad_x = Tensor(x.dims);

    for (std::size_t b = 0; b < spec.dilations.size(); ++b) {
        ImaBranchSpec bs{spec.channels, spec.dilations[b]};
        const ImaBranchTrace& bt = trace.branches[b];
        Tensor g_branch = slice_channels(pg.grad_x, static_cast<int>(b) * spec.channels,
                                         spec.channels);

        // branch output = attention + x: the residual passes g_branch to x
        // directly, the gate path goes back through the softmax Jacobian.
        Tensor g_att = g_branch;  // same tensor, both addends see grad 1
        Tensor g_merge = softmax_backward(bt.attention, g_att, SoftmaxAxis::spatial);
        ConvGrads mg = conv2d_backward(bt.dconv_out, branch_merge_spec(bs),
                                       params.branches[b].merge_w, g_merge);
        ConvGrads dg = conv2d_backward(x, branch_dconv_spec(bs), params.branches[b].dconv_w,
                                       mg.grad_x);

        out.grads.branches[b].merge_w = std::move(mg.grad_w);
        out.grads.branches[b].merge_b = std::move(*mg.grad_b);
        out.grads.branches[b].dconv_w = std::move(dg.grad_w);
        out.grads.branches[b].dconv_b = std::move(*dg.grad_b);

        for (std::size_t i = 0; i < out.grad_x.data.size(); ++i) {
            out.grad_x.data[i] += g_branch.data[i] + dg.grad_x.data[i];
        }
    }
    return out;
}

}  // namespace mcnet
