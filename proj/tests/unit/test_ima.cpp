#include <doctest.h>

#include <cmath>

#include "../oracle/naive_ref.hpp"
#include "mcnet/ima.hpp"

using mcnet::ImaBranchParams;
using mcnet::ImaBranchSpec;
using mcnet::ImaParams;
using mcnet::ImaSpec;
using mcnet::Rng;
using mcnet::Tensor;

namespace {

ImaBranchParams random_branch(int c, Rng& rng) {
    ImaBranchParams p;
    p.dconv_w = mcnet::tensor_random_init({c, c, 3, 3}, 9 * c, rng);
    p.dconv_b = mcnet::tensor_random_init({c}, 1, rng);
    p.merge_w = mcnet::tensor_random_init({c, c, 1, 1}, c, rng);
    p.merge_b = mcnet::tensor_random_init({c}, 1, rng);
    return p;
}

ImaParams random_params(const ImaSpec& spec, Rng& rng) {
    ImaParams p;
    for (std::size_t b = 0; b < spec.dilations.size(); ++b) {
        p.branches.push_back(random_branch(spec.channels, rng));
    }
    const int cat_c = spec.channels * spec.branch_count();
    p.project_w = mcnet::tensor_random_init({spec.project_out, cat_c, 1, 1}, cat_c, rng);
    p.project_b = mcnet::tensor_random_init({spec.project_out}, 1, rng);
    return p;
}

std::int64_t param_count(const ImaParams& p) {
    std::int64_t n = p.project_w.numel() + p.project_b.numel();
    for (const auto& b : p.branches) {
        n += b.dconv_w.numel() + b.dconv_b.numel() + b.merge_w.numel() + b.merge_b.numel();
    }
    return n;
}

}  // namespace

TEST_SUITE_BEGIN("ima");

TEST_CASE("branch output dims equal input dims for every dilation") {
    Rng rng(1);
    for (int d = 1; d <= 3; ++d) {
        ImaBranchSpec spec{4, d};
        const ImaBranchParams p = random_branch(4, rng);
        const Tensor x = mcnet::tensor_random_init({4, 6, 6}, 4, rng);
        CHECK(mcnet::ima_branch_forward(x, spec, p).dims == x.dims);
    }
}

TEST_CASE("zero weights force a uniform gate: output = x + 1/(H*W)") {
    Rng rng(2);
    ImaBranchSpec spec{3, 2};
    ImaBranchParams p;
    p.dconv_w = mcnet::tensor_zeros({3, 3, 3, 3});
    p.dconv_b = mcnet::tensor_zeros({3});
    p.merge_w = mcnet::tensor_zeros({3, 3, 1, 1});
    p.merge_b = mcnet::tensor_zeros({3});
    const Tensor x = mcnet::tensor_random_init({3, 4, 5}, 4, rng);
    const Tensor y = mcnet::ima_branch_forward(x, spec, p);
    const float uniform = 1.0f / 20.0f;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        CHECK(y.data[i] == doctest::Approx(x.data[i] + uniform));
    }
}

TEST_CASE("branch composition equals the layer-op cascade") {
    Rng rng(3);
    ImaBranchSpec spec{8, 2};
    const ImaBranchParams p = random_branch(8, rng);
    const Tensor x = mcnet::tensor_random_init({8, 6, 6}, 8, rng);

    mcnet::ImaBranchTrace trace;
    const Tensor got = mcnet::ima_branch_forward(x, spec, p, &trace);

    const Tensor dconv = oracle::naive_conv2d(
        x, mcnet::ConvSpec{8, 8, 3, 1, 2, 2}, p.dconv_w, &p.dconv_b);
    for (std::size_t i = 0; i < dconv.data.size(); ++i) {
        CHECK(std::abs(trace.dconv_out.data[i] - dconv.data[i]) < 1e-6f);
    }
    const Tensor merged = oracle::naive_conv2d(dconv, mcnet::ConvSpec{8, 8, 1}, p.merge_w,
                                               &p.merge_b);
    for (std::size_t i = 0; i < merged.data.size(); ++i) {
        CHECK(std::abs(trace.merge_out.data[i] - merged.data[i]) < 1e-6f);
    }
    const Tensor att = mcnet::softmax(merged, mcnet::SoftmaxAxis::spatial);
    const Tensor want = mcnet::elementwise_add(att, x);
    for (std::size_t i = 0; i < want.data.size(); ++i) {
        CHECK(std::abs(got.data[i] - want.data[i]) < 1e-6f);
    }
}

TEST_CASE("attention maps sum to one per channel") {
    Rng rng(4);
    ImaSpec spec{5, {1, 2, 3}, 5};
    const ImaParams p = random_params(spec, rng);
    const Tensor x = mcnet::tensor_random_init({5, 7, 7}, 5, rng);
    mcnet::ImaTrace trace;
    mcnet::ima_forward(x, spec, p, &trace);
    for (const auto& bt : trace.branches) {
        for (int c = 0; c < 5; ++c) {
            double sum = 0.0;
            for (int y = 0; y < 7; ++y) {
                for (int xx = 0; xx < 7; ++xx) {
                    const float v = bt.attention.at(c, y, xx);
                    CHECK(v >= 0.0f);
                    sum += v;
                }
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("pre-projection concat has branches * C channels") {
    Rng rng(5);
    ImaSpec spec{8, {1, 2, 3}, 8};
    const ImaParams p = random_params(spec, rng);
    const Tensor x = mcnet::tensor_random_init({8, 5, 5}, 8, rng);
    mcnet::ImaTrace trace;
    const Tensor y = mcnet::ima_forward(x, spec, p, &trace);
    CHECK(trace.concat.dims == std::vector<int>{24, 5, 5});
    CHECK(y.dims == std::vector<int>{8, 5, 5});
}

TEST_CASE("single branch with identity projection reduces to the branch output") {
    Rng rng(6);
    ImaSpec spec{4, {1}, 4};
    ImaParams p;
    p.branches.push_back(random_branch(4, rng));
    p.project_w = mcnet::tensor_zeros({4, 4, 1, 1});
    for (int c = 0; c < 4; ++c) {
        p.project_w.at(c, c, 0, 0) = 1.0f;
    }
    p.project_b = mcnet::tensor_zeros({4});

    // Non-negative input keeps the branch output non-negative, so the
    // projection ReLU is transparent.
    Tensor x = mcnet::tensor_random_init({4, 5, 5}, 4, rng);
    for (float& v : x.data) v = std::abs(v);

    const Tensor whole = mcnet::ima_forward(x, spec, p);
    const Tensor branch = mcnet::ima_branch_forward(x, ImaBranchSpec{4, 1}, p.branches[0]);
    for (std::size_t i = 0; i < whole.data.size(); ++i) {
        CHECK(whole.data[i] == doctest::Approx(branch.data[i]));
    }
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(mcnet::validate_ima_spec(ImaSpec{4, {}, 4}), std::invalid_argument);
    CHECK_THROWS_AS(mcnet::validate_ima_spec(ImaSpec{4, {1, 1}, 4}), std::invalid_argument);
    CHECK_THROWS_AS(mcnet::validate_ima_spec(ImaSpec{4, {0}, 4}), std::invalid_argument);
    CHECK_THROWS_AS(mcnet::validate_ima_spec(ImaSpec{0, {1}, 4}), std::invalid_argument);
    Rng rng(7);
    ImaSpec spec{4, {1, 2}, 4};
    const ImaParams p = random_params(spec, rng);
    const Tensor wrong = mcnet::tensor_zeros({3, 5, 5});
    CHECK_THROWS_AS(mcnet::ima_forward(wrong, spec, p), std::invalid_argument);
}

TEST_CASE("zero upstream grad gives zero parameter grads") {
    Rng rng(8);
    ImaSpec spec{3, {1, 2}, 3};
    const ImaParams p = random_params(spec, rng);
    const Tensor x = mcnet::tensor_random_init({3, 5, 5}, 3, rng);
    mcnet::ImaTrace trace;
    mcnet::ima_forward(x, spec, p, &trace);
    const Tensor gout = mcnet::tensor_zeros({3, 5, 5});
    const mcnet::ImaGrads g = mcnet::ima_backward(x, spec, p, trace, gout);
    for (float v : g.grad_x.data) CHECK(v == 0.0f);
    for (const auto& b : g.grads.branches) {
        for (float v : b.dconv_w.data) CHECK(v == 0.0f);
        for (float v : b.merge_w.data) CHECK(v == 0.0f);
    }
    for (float v : g.grads.project_w.data) CHECK(v == 0.0f);
}

TEST_CASE("whole-module gradients match finite differences") {
    Rng rng(9);
    ImaSpec spec{4, {1, 2, 3}, 4};
    ImaParams p = random_params(spec, rng);
    Tensor x = mcnet::tensor_random_init({4, 5, 5}, 4, rng);
    const Tensor gout = mcnet::tensor_random_init({4, 5, 5}, 4, rng);

    auto objective = [&] {
        const Tensor y = mcnet::ima_forward(x, spec, p);
        double s = 0.0;
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            s += static_cast<double>(y.data[i]) * gout.data[i];
        }
        return s;
    };

    mcnet::ImaTrace trace;
    mcnet::ima_forward(x, spec, p, &trace);
    const mcnet::ImaGrads g = mcnet::ima_backward(x, spec, p, trace, gout);

    auto check_tensor = [&](Tensor& t, const Tensor& analytic, std::size_t step) {
        for (std::size_t i = 0; i < t.data.size(); i += step) {
            const double numeric = oracle::central_diff(objective, &t.data[i], 1e-3f);
            const double a = analytic.data[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            CHECK(std::abs(a - numeric) / denom < 1e-3);
        }
    };
    check_tensor(x, g.grad_x, 1);
    for (std::size_t b = 0; b < p.branches.size(); ++b) {
        check_tensor(p.branches[b].dconv_w, g.grads.branches[b].dconv_w, 5);
        check_tensor(p.branches[b].dconv_b, g.grads.branches[b].dconv_b, 1);
        check_tensor(p.branches[b].merge_w, g.grads.branches[b].merge_w, 3);
        check_tensor(p.branches[b].merge_b, g.grads.branches[b].merge_b, 1);
    }
    check_tensor(p.project_w, g.grads.project_w, 3);
    check_tensor(p.project_b, g.grads.project_b, 1);
}

TEST_CASE("residual path keeps a near-identity diagonal") {
    Rng rng(10);
    ImaBranchSpec spec{3, 1};
    ImaBranchParams p = random_branch(3, rng);
    // Small weights keep the softmax coupling weak.
    for (auto* t : {&p.dconv_w, &p.merge_w}) {
        for (float& v : t->data) v *= 0.1f;
    }
    Tensor x = mcnet::tensor_random_init({3, 4, 4}, 3, rng);
    for (int probe = 0; probe < 5; ++probe) {
        const std::size_t i = rng.bounded(x.data.size());
        auto out_at = [&] {
            return static_cast<double>(mcnet::ima_branch_forward(x, spec, p).data[i]);
        };
        const double diag = oracle::central_diff(out_at, &x.data[i], 1e-3f);
        // d out[i] / d x[i] = 1 + gate coupling; the coupling is bounded by
        // the attention magnitudes, far below the identity term.
        CHECK(diag > 0.5);
        CHECK(diag < 1.5);
    }
}

TEST_CASE("pre-gate footprint obeys the dilation law") {
    Rng rng(11);
    for (int d = 1; d <= 3; ++d) {
        ImaBranchSpec spec{2, d};
        ImaBranchParams p = random_branch(2, rng);
        Tensor x = mcnet::tensor_random_init({2, 9, 9}, 2, rng);
        mcnet::ImaBranchTrace trace;
        mcnet::ima_branch_forward(x, spec, p, &trace);
        const int oy = 4, ox = 4;  // center; padding = d keeps taps interior
        const float base = trace.dconv_out.at(0, oy, ox);
        const int fd = 3 + 2 * (d - 1);
        int lo = 9, hi = -1;
        for (int y = 0; y < 9; ++y) {
            for (int xx = 0; xx < 9; ++xx) {
                Tensor probe = x;
                probe.at(0, y, xx) += 1.0f;
                mcnet::ImaBranchTrace t2;
                mcnet::ima_branch_forward(probe, spec, p, &t2);
                if (t2.dconv_out.at(0, oy, ox) != base) {
                    lo = std::min(lo, y);
                    hi = std::max(hi, y);
                }
            }
        }
        CHECK(hi - lo + 1 == fd);
    }
}

TEST_CASE("ima parameter count for the paper-scale block") {
    Rng rng(12);
    ImaSpec spec{128, {1, 2, 3}, 128};
    const ImaParams p = random_params(spec, rng);
    // 3 * (128*128*9 + 128 + 128*128 + 128) + (384*128 + 128)
    CHECK(param_count(p) == 541568);
}

TEST_SUITE_END();
