#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mcnet/ima.hpp"
#include "mcnet/layers.hpp"

namespace mcnet {

enum class LayerKind { conv, pool, fire, ima, gap, flatten };

const char* layer_kind_name(LayerKind k);

/// One network layer as written in the architecture config. Exactly one of
/// the spec records is meaningful, selected by `kind`.
struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    std::string name;  // auto-assigned "L<index>_<kind>"
    ConvSpec conv;
    PoolSpec pool;
    FireSpec fire;
    ImaSpec ima;

    bool operator==(const LayerSpec&) const = default;
};

/// Parsed architecture: input shape, ordered layers, class count. The single
/// source for building, analyzing, and serializing a model.
struct ArchConfig {
    int in_channels = 0;
    int in_height = 0;
    int in_width = 0;
    std::vector<LayerSpec> layers;
    int class_count = 0;

    bool operator==(const ArchConfig&) const = default;
};

struct ParseError : std::runtime_error {
    int line;
    ParseError(int line_, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line_) + ": " + msg), line(line_) {}
};

/// Parse the line-oriented architecture DSL. Directives:
///   input 3x227x227
///   conv out=16 k=3 s=2 p=1 d=1 bias=1   (defaults s=1 p=0 d=1 bias=1)
///   pool kind=max k=3 s=2
///   fire s=16 e1=64 e3=64
///   ima dil=1,2,3 proj=128
///   gap
///   flatten
///   classes 3
/// '#' starts a comment. Validation propagates shapes through every layer
/// and requires the classifier head conv(out=classes, k=1) -> gap at the end.
ArchConfig parse_arch(const std::string& text);

/// Canonical DSL text; parse_arch(render_arch(c)) == c.
std::string render_arch(const ArchConfig& config);

/// Shape propagation + structural validation. Fills the derived fields
/// (conv in_channels, ima channels, auto names); throws ParseError with a
/// 1-based layer ordinal as "line" when constructed programmatically.
void validate_config(ArchConfig& config);

/// Output shape (C,H,W) after layer index `upto` (exclusive end: pass
/// layers.size() for the final shape). Requires a valid config.
std::vector<int> shape_after(const ArchConfig& config, std::size_t upto);

/// Channels entering layer `index`.
int input_channels_of(const ArchConfig& config, std::size_t index);

}  // namespace mcnet
