#include <doctest.h>

#include <string>

#include "mcnet/arch.hpp"

using mcnet::ArchConfig;
using mcnet::LayerKind;
using mcnet::ParseError;
using mcnet::Rng;

namespace {

const char* kSmallValid = R"(# comment line
input 3x16x16
conv out=4 k=3 s=1 p=1   # trailing comment
pool kind=max k=2 s=2
fire s=2 e1=3 e3=3
conv out=3 k=1
gap
classes 3
)";

// Random valid config with a proper classifier head. Used by the
// parse -> render -> parse round-trip.
ArchConfig random_config(Rng& rng) {
    ArchConfig c;
    c.in_channels = 1 + static_cast<int>(rng.bounded(3));
    c.in_height = c.in_width = 16 + static_cast<int>(rng.bounded(17));
    c.class_count = 2 + static_cast<int>(rng.bounded(3));
    int h = c.in_height;
    const int n_layers = 1 + static_cast<int>(rng.bounded(4));
    for (int i = 0; i < n_layers && h >= 6; ++i) {
        mcnet::LayerSpec l;
        switch (rng.bounded(4)) {
            case 0: {
                l.kind = LayerKind::conv;
                l.conv.out_channels = 1 + static_cast<int>(rng.bounded(6));
                l.conv.kernel = rng.bounded(2) == 0 ? 1 : 3;
                l.conv.stride = 1 + static_cast<int>(rng.bounded(2));
                l.conv.padding = l.conv.kernel == 3 ? static_cast<int>(rng.bounded(2)) : 0;
                l.conv.dilation =
                    l.conv.kernel == 3 ? 1 + static_cast<int>(rng.bounded(2)) : 1;
                l.conv.has_bias = rng.bounded(4) != 0;
                break;
            }
            case 1:
                l.kind = LayerKind::pool;
                l.pool.window = 2 + static_cast<int>(rng.bounded(2));
                l.pool.stride = 1 + static_cast<int>(rng.bounded(2));
                break;
            case 2:
                l.kind = LayerKind::fire;
                l.fire.squeeze_1x1 = 1 + static_cast<int>(rng.bounded(4));
                l.fire.expand_1x1 = 1 + static_cast<int>(rng.bounded(4));
                l.fire.expand_3x3 = 1 + static_cast<int>(rng.bounded(4));
                break;
            default:
                l.kind = LayerKind::ima;
                l.ima.dilations = rng.bounded(2) == 0 ? std::vector<int>{1, 2}
                                                      : std::vector<int>{1, 2, 3};
                l.ima.project_out = 1 + static_cast<int>(rng.bounded(6));
                break;
        }
        c.layers.push_back(l);
        if (l.kind == LayerKind::conv) h = l.conv.output_dim(h);
        if (l.kind == LayerKind::pool) h = l.pool.output_dim(h);
        if (h < 1) {
            c.layers.pop_back();
            break;
        }
    }
    mcnet::LayerSpec head;
    head.kind = LayerKind::conv;
    head.conv.out_channels = c.class_count;
    head.conv.kernel = 1;
    c.layers.push_back(head);
    mcnet::LayerSpec gap;
    gap.kind = LayerKind::gap;
    c.layers.push_back(gap);
    mcnet::validate_config(c);
    return c;
}

}  // namespace

TEST_SUITE_BEGIN("arch");

TEST_CASE("small valid config parses with auto names and shapes") {
    const ArchConfig c = mcnet::parse_arch(kSmallValid);
    CHECK(c.in_channels == 3);
    CHECK(c.class_count == 3);
    REQUIRE(c.layers.size() == 5);
    CHECK(c.layers[0].name == "L0_conv");
    CHECK(c.layers[2].name == "L2_fire");
    CHECK(c.layers[0].conv.in_channels == 3);
    CHECK(mcnet::shape_after(c, 2) == std::vector<int>{4, 8, 8});
    CHECK(mcnet::shape_after(c, c.layers.size()) == std::vector<int>{3, 1, 1});
}

TEST_CASE("missing classifier head is rejected") {
    const std::string text = "input 3x8x8\nconv out=4 k=3 s=1 p=1\ngap\nclasses 3\n";
    CHECK_THROWS_WITH_AS(mcnet::parse_arch(text),
                         doctest::Contains("classifier head missing"), ParseError);
}

TEST_CASE("kernel restriction names the offending value") {
    const std::string text = "input 3x8x8\nconv out=16 k=5\nconv out=3 k=1\ngap\nclasses 3\n";
    try {
        mcnet::parse_arch(text);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 2);
        CHECK(std::string(e.what()).find("kernel must be 1 or 3") != std::string::npos);
    }
}

TEST_CASE("unknown directive and malformed keys carry line numbers") {
    try {
        mcnet::parse_arch("input 3x8x8\nwibble out=1\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 2);
        CHECK(std::string(e.what()).find("unknown directive") != std::string::npos);
    }
    CHECK_THROWS_AS(mcnet::parse_arch("input 3x8x8\nconv out=abc k=3\n"), ParseError);
    CHECK_THROWS_AS(mcnet::parse_arch("input 3x8x8\nconv out=4 k=3 zap=1\n"), ParseError);
}

TEST_CASE("duplicate input and classes are rejected") {
    CHECK_THROWS_WITH_AS(mcnet::parse_arch("input 3x8x8\ninput 3x8x8\n"),
                         doctest::Contains("duplicate 'input'"), ParseError);
    CHECK_THROWS_WITH_AS(
        mcnet::parse_arch("input 3x8x8\nconv out=3 k=1\ngap\nclasses 3\nclasses 3\n"),
        doctest::Contains("duplicate 'classes'"), ParseError);
}

TEST_CASE("shape incompatibilities are caught during parse") {
    // 3x3 window pooling on a 2x2 map.
    const std::string pool_text =
        "input 3x4x4\npool kind=max k=2 s=2\npool kind=max k=3 s=1\n"
        "conv out=3 k=1\ngap\nclasses 3\n";
    CHECK_THROWS_WITH_AS(mcnet::parse_arch(pool_text), doctest::Contains("pool window"),
                         ParseError);

    const std::string conv_text =
        "input 3x4x4\nconv out=2 k=3 d=3\nconv out=3 k=1\ngap\nclasses 3\n";
    CHECK_THROWS_WITH_AS(mcnet::parse_arch(conv_text),
                         doctest::Contains("exceeds padded input"), ParseError);
}

TEST_CASE("layers after the head gap are rejected") {
    const std::string text =
        "input 3x8x8\nconv out=3 k=1\ngap\nconv out=3 k=1\ngap\nclasses 3\n";
    CHECK_THROWS_AS(mcnet::parse_arch(text), ParseError);
}

TEST_CASE("flatten is accepted as the final layer") {
    const ArchConfig c =
        mcnet::parse_arch("input 3x8x8\nconv out=3 k=1\ngap\nflatten\nclasses 3\n");
    CHECK(c.layers.back().kind == LayerKind::flatten);
    CHECK(mcnet::shape_after(c, c.layers.size()) == std::vector<int>{3, 1, 1});
}

TEST_CASE("ima directive with duplicate dilations is rejected") {
    const std::string text =
        "input 4x8x8\nima dil=2,2 proj=4\nconv out=3 k=1\ngap\nclasses 3\n";
    CHECK_THROWS_WITH_AS(mcnet::parse_arch(text), doctest::Contains("distinct"), ParseError);
}

TEST_CASE("parse -> render -> parse is an identity on random configs") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const ArchConfig c = random_config(rng);
        const std::string text = mcnet::render_arch(c);
        const ArchConfig back = mcnet::parse_arch(text);
        CHECK(back == c);
        CHECK(mcnet::render_arch(back) == text);
    }
}

TEST_SUITE_END();
