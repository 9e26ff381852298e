#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "../oracle/naive_ref.hpp"
#include "mcnet/analysis.hpp"
#include "mcnet/model.hpp"

using mcnet::ArchConfig;
using mcnet::DensityLevel;
using mcnet::LayerKind;
using mcnet::Model;
using mcnet::Rng;
using mcnet::Tensor;

namespace {

const char* kTinyText = R"(input 2x8x8
conv out=4 k=3 s=1 p=1
pool kind=max k=2 s=2
conv out=6 k=3 s=2 p=1
conv out=3 k=1
gap
classes 3
)";

const char* kNoBiasText = R"(input 2x8x8
conv out=4 k=3 s=1 p=1 bias=0
conv out=3 k=1 bias=0
gap
classes 3
)";

std::string save_to_string(const Model& m) {
    std::ostringstream os(std::ios::binary);
    mcnet::save_weights(m, os);
    return os.str();
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("build allocates exactly what the analyzer counts") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng rng(1);
    const Model m = mcnet::build_model(c, rng);
    CHECK(m.total_param_count() == mcnet::count_params(c));
    CHECK(m.params.size() == m.grads.size());
    CHECK(m.params.size() == m.momentum.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        CHECK(m.params[i].value.dims == m.grads[i].dims);
        CHECK(m.params[i].value.dims == m.momentum[i].dims);
    }
}

TEST_CASE("same seed builds bit-identical parameters") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng a(42), b(42);
    const Model ma = mcnet::build_model(c, a);
    const Model mb = mcnet::build_model(c, b);
    REQUIRE(ma.params.size() == mb.params.size());
    for (std::size_t i = 0; i < ma.params.size(); ++i) {
        CHECK(ma.params[i].name == mb.params[i].name);
        CHECK(ma.params[i].value.data == mb.params[i].value.data);
    }
}

TEST_CASE("forward produces class_count logits and is deterministic") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng rng(7);
    const Model m = mcnet::build_model(c, rng);
    const Tensor x = mcnet::tensor_random_init({2, 8, 8}, 4, rng);
    const auto r1 = mcnet::forward(m, x);
    const auto r2 = mcnet::forward(m, x);
    REQUIRE(r1.logits.numel() == 3);
    CHECK(r1.logits.data == r2.logits.data);
}

TEST_CASE("zero input through a bias-free model gives zero logits") {
    const ArchConfig c = mcnet::parse_arch(kNoBiasText);
    Rng rng(3);
    const Model m = mcnet::build_model(c, rng);
    const Tensor x = mcnet::tensor_zeros({2, 8, 8});
    const auto r = mcnet::forward(m, x);
    for (float v : r.logits.data) CHECK(v == 0.0f);
}

TEST_CASE("forward equals composing each layer op independently") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng rng(9);
    const Model m = mcnet::build_model(c, rng);
    const Tensor x = mcnet::tensor_random_init({2, 8, 8}, 4, rng);
    const auto got = mcnet::forward(m, x);

    // Layer kinds in kTinyText: conv+relu, pool, conv+relu, head conv, gap.
    Tensor cur = mcnet::relu(mcnet::conv2d_forward(x, c.layers[0].conv,
                                                   m.param("L0_conv.w"),
                                                   &m.param("L0_conv.b")));
    cur = mcnet::maxpool_forward(cur, c.layers[1].pool).y;
    cur = mcnet::relu(mcnet::conv2d_forward(cur, c.layers[2].conv, m.param("L2_conv.w"),
                                            &m.param("L2_conv.b")));
    cur = mcnet::conv2d_forward(cur, c.layers[3].conv, m.param("L3_conv.w"),
                                &m.param("L3_conv.b"));
    cur = mcnet::global_average_pool(cur);
    REQUIRE(static_cast<int>(got.logits.numel()) == cur.numel());
    for (std::size_t i = 0; i < cur.data.size(); ++i) {
        CHECK(got.logits.data[i] == cur.data[i]);
    }
}

TEST_CASE("forward rejects wrong input shapes") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng rng(4);
    const Model m = mcnet::build_model(c, rng);
    CHECK_THROWS_AS(mcnet::forward(m, mcnet::tensor_zeros({2, 9, 8})), std::invalid_argument);
}

TEST_CASE("capture returns the requested activations") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng rng(5);
    const Model m = mcnet::build_model(c, rng);
    const Tensor x = mcnet::tensor_random_init({2, 8, 8}, 4, rng);
    const std::unordered_set<std::string> capture{"L1_pool", "L2_conv"};
    const auto r = mcnet::forward(m, x, &capture);
    REQUIRE(r.captured.size() == 2);
    CHECK(r.captured.at("L1_pool").dims == std::vector<int>{4, 4, 4});
    CHECK(r.captured.at("L2_conv").dims == std::vector<int>{6, 2, 2});
}

TEST_CASE("predict applies softmax and breaks ties to the lowest class") {
    // Head bias fully determines the logits on zero input.
    const ArchConfig c = mcnet::parse_arch("input 1x4x4\nconv out=3 k=1\ngap\nclasses 3\n");
    Rng rng(6);
    Model m = mcnet::build_model(c, rng);
    for (float& v : m.param("L0_conv.w").data) v = 0.0f;
    Tensor& bias = m.param("L0_conv.b");
    bias.data = {2.0f, 0.0f, 0.0f};

    const Tensor x = mcnet::tensor_zeros({1, 4, 4});
    const auto p = mcnet::predict(m, x);
    CHECK(p.level == DensityLevel::low);
    const double e2 = std::exp(2.0);
    CHECK(p.probs[0] == doctest::Approx(e2 / (e2 + 2.0)));
    CHECK(p.probs[1] == doctest::Approx(1.0 / (e2 + 2.0)));
    CHECK(p.probs[2] == doctest::Approx(1.0 / (e2 + 2.0)));

    bias.data = {1.0f, 1.0f, 1.0f};
    const auto tie = mcnet::predict(m, x);
    CHECK(tie.level == DensityLevel::low);
    for (float v : tie.probs) CHECK(v == doctest::Approx(1.0f / 3.0f));

    float sum = 0.0f;
    for (float v : p.probs) {
        CHECK(v >= 0.0f);
        sum += v;
    }
    CHECK(std::abs(sum - 1.0f) < 1e-6f);
}

TEST_CASE("argmax of probs always equals argmax of logits") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng rng(8);
    const Model m = mcnet::build_model(c, rng);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = mcnet::tensor_random_init({2, 8, 8}, 4, rng);
        const auto fr = mcnet::forward(m, x);
        const auto p = mcnet::predict(m, x);
        int logit_arg = 0;
        for (int i = 1; i < 3; ++i) {
            if (fr.logits.data[i] > fr.logits.data[logit_arg]) logit_arg = i;
        }
        CHECK(static_cast<int>(p.level) == logit_arg);
    }
}

TEST_CASE("save -> load -> save produces identical bytes") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng rng(10);
    const Model m = mcnet::build_model(c, rng);
    const std::string blob1 = save_to_string(m);
    std::istringstream is(blob1, std::ios::binary);
    const Model loaded = mcnet::load_weights(c, is);
    const std::string blob2 = save_to_string(loaded);
    CHECK(blob1 == blob2);
}

TEST_CASE("weights blob size follows the format arithmetic") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng rng(11);
    const Model m = mcnet::build_model(c, rng);
    std::size_t expect = 16;  // magic + version + count + reserved
    for (const auto& p : m.params) {
        expect += 2 + p.name.size() + 1 + 4 * p.value.dims.size() +
                  4 * static_cast<std::size_t>(p.value.numel());
    }
    CHECK(save_to_string(m).size() == expect);
}

TEST_CASE("load rejects corrupted blobs with useful messages") {
    const ArchConfig c = mcnet::parse_arch(kTinyText);
    Rng rng(12);
    const Model m = mcnet::build_model(c, rng);
    const std::string blob = save_to_string(m);

    {
        std::string bad = blob;
        bad[0] = 'X';
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS_WITH_AS(mcnet::load_weights(c, is), doctest::Contains("bad magic"),
                             std::runtime_error);
    }
    {
        std::string bad = blob;
        bad[4] = 9;  // version
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS_WITH_AS(mcnet::load_weights(c, is), doctest::Contains("version"),
                             std::runtime_error);
    }
    {
        // First tensor: header(16) + u16 len + "L0_conv.w" + rank byte, then
        // dims. Corrupt the first dim field.
        std::string bad = blob;
        const std::size_t dim_off = 16 + 2 + 9 + 1;
        bad[dim_off] = 77;
        std::istringstream is(bad, std::ios::binary);
        try {
            mcnet::load_weights(c, is);
            FAIL("expected dim mismatch");
        } catch (const std::runtime_error& e) {
            const std::string what = e.what();
            CHECK(what.find("L0_conv.w") != std::string::npos);
            CHECK(what.find("dims") != std::string::npos);
        }
    }
    {
        std::string bad = blob.substr(0, blob.size() / 2);
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS_WITH_AS(mcnet::load_weights(c, is), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    {
        // Rename a tensor: unknown name.
        std::string bad = blob;
        bad[16 + 2] = 'Q';
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS_WITH_AS(mcnet::load_weights(c, is), doctest::Contains("unknown tensor"),
                             std::runtime_error);
    }
}

TEST_CASE("toggling the ima directive changes no other layer's dims") {
    const char* base = R"(input 3x16x16
conv out=4 k=3 s=1 p=1
pool kind=max k=2 s=2
fire s=2 e1=4 e3=4
conv out=3 k=1
gap
classes 3
)";
    const char* with_ima = R"(input 3x16x16
conv out=4 k=3 s=1 p=1
pool kind=max k=2 s=2
fire s=2 e1=4 e3=4
ima dil=1,2,3 proj=8
conv out=3 k=1
gap
classes 3
)";
    const auto layout_a = mcnet::parameter_layout(mcnet::parse_arch(base));
    const auto layout_b = mcnet::parameter_layout(mcnet::parse_arch(with_ima));

    // Drop the ima block's own tensors from the with-ima layout, then the
    // per-tensor dims must line up one-for-one.
    std::vector<std::vector<int>> dims_a, dims_b;
    for (const auto& [name, dims] : layout_a) dims_a.push_back(dims);
    for (const auto& [name, dims] : layout_b) {
        if (name.find("_ima.") == std::string::npos) dims_b.push_back(dims);
    }
    CHECK(dims_a == dims_b);
}

TEST_SUITE_END();
