#pragma once

#include <vector>

#include "mcnet/layers.hpp"
#include "mcnet/tensor.hpp"

namespace mcnet {

/// One attention branch: 3x3 dilated conv (padding = dilation, so spatial
/// dims are preserved), 1x1 channel merge, spatial softmax gate, residual
/// add onto the branch input. Channels stay C -> C so the residual add is
/// well-formed.
struct ImaBranchSpec {
    int channels = 0;
    int dilation = 1;
    static constexpr int kernel = 3;

    int effective_kernel() const { return kernel + (kernel - 1) * (dilation - 1); }

    bool operator==(const ImaBranchSpec&) const = default;
};

struct ImaSpec {
    int channels = 0;
    std::vector<int> dilations{1, 2, 3};
    int project_out = 0;

    int branch_count() const { return static_cast<int>(dilations.size()); }

    bool operator==(const ImaSpec&) const = default;
};

struct ImaBranchParams {
    Tensor dconv_w, dconv_b;  // (C, C, 3, 3)
    Tensor merge_w, merge_b;  // (C, C, 1, 1)
};

struct ImaParams {
    std::vector<ImaBranchParams> branches;
    Tensor project_w, project_b;  // (project_out, C*branches, 1, 1)
};

struct ImaBranchTrace {
    Tensor dconv_out;   // after the dilated conv
    Tensor merge_out;   // after the 1x1 merge (gate logits)
    Tensor attention;   // spatial softmax of merge_out, sums to 1 per channel map
};

struct ImaTrace {
    std::vector<ImaBranchTrace> branches;
    Tensor concat;       // branch outputs concatenated along channels
    Tensor project_pre;  // projection conv output before ReLU
};

Tensor ima_branch_forward(const Tensor& x, const ImaBranchSpec& branch,
                          const ImaBranchParams& params, ImaBranchTrace* trace = nullptr);

/// All branch outputs concatenated in dilation order, then a 1x1 projection
/// to project_out channels followed by ReLU. Spatial dims preserved.
Tensor ima_forward(const Tensor& x, const ImaSpec& spec, const ImaParams& params,
                   ImaTrace* trace = nullptr);

struct ImaGrads {
    Tensor grad_x;
    ImaParams grads;
};

ImaGrads ima_backward(const Tensor& x, const ImaSpec& spec, const ImaParams& params,
                      const ImaTrace& trace, const Tensor& grad_out);

void validate_ima_spec(const ImaSpec& spec);

}  // namespace mcnet
