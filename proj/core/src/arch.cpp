#include "mcnet/arch.hpp"

#include <charconv>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace mcnet {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::pool: return "pool";
        case LayerKind::fire: return "fire";
        case LayerKind::ima: return "ima";
        case LayerKind::gap: return "gap";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream ss(line);
    std::string t;
    while (ss >> t) {
        toks.push_back(t);
    }
    return toks;
}

int parse_int(const std::string& s, int line, const std::string& what) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ParseError(line, "malformed " + what + " value '" + s + "'");
    }
    return v;
}

std::vector<int> parse_int_list(const std::string& s, int line, const std::string& what) {
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = s.find(',', pos);
        const std::string piece = s.substr(pos, comma == std::string::npos ? comma : comma - pos);
        if (piece.empty()) {
            throw ParseError(line, "malformed " + what + " list '" + s + "'");
        }
        out.push_back(parse_int(piece, line, what));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

using KvMap = std::unordered_map<std::string, std::string>;

KvMap parse_kv(const std::vector<std::string>& toks, std::size_t from, int line,
               const std::unordered_set<std::string>& allowed) {
    KvMap kv;
    for (std::size_t i = from; i < toks.size(); ++i) {
        const std::size_t eq = toks[i].find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 >= toks[i].size()) {
            throw ParseError(line, "expected key=value, got '" + toks[i] + "'");
        }
        const std::string key = toks[i].substr(0, eq);
        if (!allowed.count(key)) {
            throw ParseError(line, "unknown key '" + key + "' for " + toks[0]);
        }
        if (!kv.emplace(key, toks[i].substr(eq + 1)).second) {
            throw ParseError(line, "duplicate key '" + key + "'");
        }
    }
    return kv;
}

int require_key(const KvMap& kv, const std::string& key, int line) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw ParseError(line, "missing required key '" + key + "'");
    }
    return parse_int(it->second, line, key);
}

int key_or(const KvMap& kv, const std::string& key, int line, int fallback) {
    const auto it = kv.find(key);
    return it == kv.end() ? fallback : parse_int(it->second, line, key);
}

struct ShapeState {
    int c, h, w;
};

void validate_with_lines(ArchConfig& config, const std::vector<int>& lines) {
    auto line_of = [&](std::size_t i) {
        return i < lines.size() ? lines[i] : static_cast<int>(i) + 1;
    };
    if (config.in_channels < 1 || config.in_height < 1 || config.in_width < 1) {
        throw ParseError(0, "missing or invalid 'input' shape");
    }
    if (config.class_count < 1) {
        throw ParseError(0, "missing or invalid 'classes' count");
    }
    if (config.layers.empty()) {
        throw ParseError(0, "config has no layers");
    }

    ShapeState s{config.in_channels, config.in_height, config.in_width};
    bool seen_gap = false;
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        LayerSpec& layer = config.layers[i];
        const int ln = line_of(i);
        layer.name = "L" + std::to_string(i) + "_" + layer_kind_name(layer.kind);
        if (seen_gap && layer.kind != LayerKind::flatten) {
            throw ParseError(ln, "no layers may follow the head 'gap' except 'flatten'");
        }
        switch (layer.kind) {
            case LayerKind::conv: {
                ConvSpec& cs = layer.conv;
                if (cs.kernel != 1 && cs.kernel != 3) {
                    throw ParseError(ln, "conv kernel must be 1 or 3, got " +
                                             std::to_string(cs.kernel));
                }
                if (cs.out_channels < 1 || cs.stride < 1 || cs.padding < 0 || cs.dilation < 1) {
                    throw ParseError(ln, "conv parameters out of range");
                }
                cs.in_channels = s.c;
                const int oh = cs.output_dim(s.h);
                const int ow = cs.output_dim(s.w);
                if (oh < 1 || ow < 1) {
                    throw ParseError(ln, "conv effective kernel " +
                                             std::to_string(cs.effective_kernel()) +
                                             " exceeds padded input " + std::to_string(s.h) +
                                             "x" + std::to_string(s.w));
                }
                s = {cs.out_channels, oh, ow};
                break;
            }
            case LayerKind::pool: {
                const PoolSpec& ps = layer.pool;
                if (ps.window < 1 || ps.stride < 1) {
                    throw ParseError(ln, "pool parameters out of range");
                }
                if (ps.window > s.h || ps.window > s.w) {
                    throw ParseError(ln, "pool window " + std::to_string(ps.window) +
                                             " exceeds input " + std::to_string(s.h) + "x" +
                                             std::to_string(s.w));
                }
                s.h = ps.output_dim(s.h);
                s.w = ps.output_dim(s.w);
                break;
            }
            case LayerKind::fire: {
                const FireSpec& fs = layer.fire;
                if (fs.squeeze_1x1 < 1 || fs.expand_1x1 < 1 || fs.expand_3x3 < 1) {
                    throw ParseError(ln, "fire channel counts must be >= 1");
                }
                s.c = fs.out_channels();
                break;
            }
            case LayerKind::ima: {
                ImaSpec& is = layer.ima;
                is.channels = s.c;
                try {
                    validate_ima_spec(is);
                } catch (const std::invalid_argument& e) {
                    throw ParseError(ln, e.what());
                }
                // padding = dilation keeps spatial dims; need the padded
                // input to cover the effective kernel.
                for (int d : is.dilations) {
                    const int fd = 3 + 2 * (d - 1);
                    if (fd > s.h + 2 * d || fd > s.w + 2 * d) {
                        throw ParseError(ln, "ima dilation " + std::to_string(d) +
                                                 " too large for input");
                    }
                }
                s.c = is.project_out;
                break;
            }
            case LayerKind::gap: {
                if (seen_gap) {
                    throw ParseError(ln, "duplicate 'gap'");
                }
                seen_gap = true;
                s.h = 1;
                s.w = 1;
                break;
            }
            case LayerKind::flatten: {
                if (!seen_gap || i + 1 != config.layers.size()) {
                    throw ParseError(ln, "'flatten' is only allowed as the final layer "
                                         "after the head 'gap'");
                }
                s = {s.c * s.h * s.w, 1, 1};
                break;
            }
        }
    }

    // Classifier head: conv(out=classes, k=1) -> gap [-> flatten].
    std::size_t tail = config.layers.size();
    if (config.layers.back().kind == LayerKind::flatten) {
        --tail;
    }
    const bool head_ok =
        tail >= 2 && config.layers[tail - 1].kind == LayerKind::gap &&
        config.layers[tail - 2].kind == LayerKind::conv &&
        config.layers[tail - 2].conv.kernel == 1 &&
        config.layers[tail - 2].conv.out_channels == config.class_count;
    if (!head_ok) {
        throw ParseError(line_of(config.layers.size() - 1),
                         "classifier head missing: config must end with a 1x1 conv to " +
                             std::to_string(config.class_count) + " classes followed by 'gap'");
    }
    if (s.c != config.class_count) {
        throw ParseError(line_of(config.layers.size() - 1),
                         "final channel count does not equal class count");
    }
}

}  // namespace

ArchConfig parse_arch(const std::string& text) {
    ArchConfig config;
    std::vector<int> layer_lines;
    bool seen_input = false, seen_classes = false;

    std::istringstream stream(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(stream, raw)) {
        ++line_no;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) {
            raw.resize(hash);
        }
        const auto toks = tokenize(raw);
        if (toks.empty()) continue;
        const std::string& dir = toks[0];

        if (dir == "input") {
            if (seen_input) {
                throw ParseError(line_no, "duplicate 'input'");
            }
            seen_input = true;
            if (toks.size() != 2) {
                throw ParseError(line_no, "usage: input CxHxW");
            }
            const auto dims = [&] {
                std::vector<int> d;
                std::size_t pos = 0;
                const std::string& s = toks[1];
                while (pos <= s.size()) {
                    const std::size_t x = s.find('x', pos);
                    const std::string piece =
                        s.substr(pos, x == std::string::npos ? x : x - pos);
                    d.push_back(parse_int(piece, line_no, "input dim"));
                    if (x == std::string::npos) break;
                    pos = x + 1;
                }
                return d;
            }();
            if (dims.size() != 3) {
                throw ParseError(line_no, "input shape must be CxHxW");
            }
            config.in_channels = dims[0];
            config.in_height = dims[1];
            config.in_width = dims[2];
        } else if (dir == "classes") {
            if (seen_classes) {
                throw ParseError(line_no, "duplicate 'classes'");
            }
            seen_classes = true;
            if (toks.size() != 2) {
                throw ParseError(line_no, "usage: classes N");
            }
            config.class_count = parse_int(toks[1], line_no, "classes");
        } else if (dir == "conv") {
            const auto kv = parse_kv(toks, 1, line_no, {"out", "k", "s", "p", "d", "bias"});
            LayerSpec layer;
            layer.kind = LayerKind::conv;
            layer.conv.out_channels = require_key(kv, "out", line_no);
            layer.conv.kernel = require_key(kv, "k", line_no);
            layer.conv.stride = key_or(kv, "s", line_no, 1);
            layer.conv.padding = key_or(kv, "p", line_no, 0);
            layer.conv.dilation = key_or(kv, "d", line_no, 1);
            layer.conv.has_bias = key_or(kv, "bias", line_no, 1) != 0;
            config.layers.push_back(std::move(layer));
            layer_lines.push_back(line_no);
        } else if (dir == "pool") {
            const auto kv = parse_kv(toks, 1, line_no, {"kind", "k", "s"});
            const auto kind_it = kv.find("kind");
            if (kind_it != kv.end() && kind_it->second != "max") {
                throw ParseError(line_no, "pool kind must be 'max' (use 'gap' for "
                                          "global average pooling)");
            }
            LayerSpec layer;
            layer.kind = LayerKind::pool;
            layer.pool.kind = PoolKind::max;
            layer.pool.window = require_key(kv, "k", line_no);
            layer.pool.stride = key_or(kv, "s", line_no, 1);
            config.layers.push_back(std::move(layer));
            layer_lines.push_back(line_no);
        } else if (dir == "fire") {
            const auto kv = parse_kv(toks, 1, line_no, {"s", "e1", "e3"});
            LayerSpec layer;
            layer.kind = LayerKind::fire;
            layer.fire.squeeze_1x1 = require_key(kv, "s", line_no);
            layer.fire.expand_1x1 = require_key(kv, "e1", line_no);
            layer.fire.expand_3x3 = require_key(kv, "e3", line_no);
            config.layers.push_back(std::move(layer));
            layer_lines.push_back(line_no);
        } else if (dir == "ima") {
            const auto kv = parse_kv(toks, 1, line_no, {"dil", "proj"});
            LayerSpec layer;
            layer.kind = LayerKind::ima;
            const auto dil_it = kv.find("dil");
            if (dil_it == kv.end()) {
                throw ParseError(line_no, "missing required key 'dil'");
            }
            layer.ima.dilations = parse_int_list(dil_it->second, line_no, "dil");
            layer.ima.project_out = require_key(kv, "proj", line_no);
            config.layers.push_back(std::move(layer));
            layer_lines.push_back(line_no);
        } else if (dir == "gap") {
            if (toks.size() != 1) {
                throw ParseError(line_no, "'gap' takes no arguments");
            }
            LayerSpec layer;
            layer.kind = LayerKind::gap;
            layer.pool.kind = PoolKind::global_average;
            config.layers.push_back(std::move(layer));
            layer_lines.push_back(line_no);
        } else if (dir == "flatten") {
            if (toks.size() != 1) {
                throw ParseError(line_no, "'flatten' takes no arguments");
            }
            LayerSpec layer;
            layer.kind = LayerKind::flatten;
            config.layers.push_back(std::move(layer));
            layer_lines.push_back(line_no);
        } else {
            throw ParseError(line_no, "unknown directive '" + dir + "'");
        }
    }

    validate_with_lines(config, layer_lines);
    return config;
}

std::string render_arch(const ArchConfig& config) {
    std::ostringstream out;
    out << "input " << config.in_channels << "x" << config.in_height << "x" << config.in_width
        << "\n";
    for (const LayerSpec& layer : config.layers) {
        switch (layer.kind) {
            case LayerKind::conv:
                out << "conv out=" << layer.conv.out_channels << " k=" << layer.conv.kernel
                    << " s=" << layer.conv.stride << " p=" << layer.conv.padding
                    << " d=" << layer.conv.dilation << " bias=" << (layer.conv.has_bias ? 1 : 0)
                    << "\n";
                break;
            case LayerKind::pool:
                out << "pool kind=max k=" << layer.pool.window << " s=" << layer.pool.stride
                    << "\n";
                break;
            case LayerKind::fire:
                out << "fire s=" << layer.fire.squeeze_1x1 << " e1=" << layer.fire.expand_1x1
                    << " e3=" << layer.fire.expand_3x3 << "\n";
                break;
            case LayerKind::ima: {
                out << "ima dil=";
                for (std::size_t i = 0; i < layer.ima.dilations.size(); ++i) {
                    out << (i ? "," : "") << layer.ima.dilations[i];
                }
                out << " proj=" << layer.ima.project_out << "\n";
                break;
            }
            case LayerKind::gap:
                out << "gap\n";
                break;
            case LayerKind::flatten:
                out << "flatten\n";
                break;
        }
    }
    out << "classes " << config.class_count << "\n";
    return out.str();
}

void validate_config(ArchConfig& config) { validate_with_lines(config, {}); }

std::vector<int> shape_after(const ArchConfig& config, std::size_t upto) {
    ShapeState s{config.in_channels, config.in_height, config.in_width};
    for (std::size_t i = 0; i < upto && i < config.layers.size(); ++i) {
        const LayerSpec& layer = config.layers[i];
        switch (layer.kind) {
            case LayerKind::conv:
                s = {layer.conv.out_channels, layer.conv.output_dim(s.h),
                     layer.conv.output_dim(s.w)};
                break;
            case LayerKind::pool:
                s.h = layer.pool.output_dim(s.h);
                s.w = layer.pool.output_dim(s.w);
                break;
            case LayerKind::fire:
                s.c = layer.fire.out_channels();
                break;
            case LayerKind::ima:
                s.c = layer.ima.project_out;
                break;
            case LayerKind::gap:
                s.h = 1;
                s.w = 1;
                break;
            case LayerKind::flatten:
                s = {s.c * s.h * s.w, 1, 1};
                break;
        }
    }
    return {s.c, s.h, s.w};
}

int input_channels_of(const ArchConfig& config, std::size_t index) {
    return shape_after(config, index)[0];
}

}  // namespace mcnet
