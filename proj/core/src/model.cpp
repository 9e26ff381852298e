#include "mcnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace mcnet {

namespace {

int find_head_conv(const ArchConfig& config) {
    for (std::size_t i = config.layers.size(); i-- > 0;) {
        if (config.layers[i].kind == LayerKind::gap) {
            return static_cast<int>(i) - 1;
        }
    }
    return -1;
}

void append_conv_params(std::vector<std::pair<std::string, std::vector<int>>>& out,
                        const std::string& prefix, int out_c, int in_c, int k, bool has_bias) {
    out.emplace_back(prefix + ".w", std::vector<int>{out_c, in_c, k, k});
    if (has_bias) {
        out.emplace_back(prefix + ".b", std::vector<int>{out_c});
    }
}

}  // namespace

std::vector<std::pair<std::string, std::vector<int>>> parameter_layout(const ArchConfig& config) {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& layer = config.layers[i];
        const int in_c = input_channels_of(config, i);
        switch (layer.kind) {
            case LayerKind::conv:
                append_conv_params(out, layer.name, layer.conv.out_channels, in_c,
                                   layer.conv.kernel, layer.conv.has_bias);
                break;
            case LayerKind::fire:
                append_conv_params(out, layer.name + ".squeeze", layer.fire.squeeze_1x1, in_c, 1,
                                   true);
                append_conv_params(out, layer.name + ".expand1", layer.fire.expand_1x1,
                                   layer.fire.squeeze_1x1, 1, true);
                append_conv_params(out, layer.name + ".expand3", layer.fire.expand_3x3,
                                   layer.fire.squeeze_1x1, 3, true);
                break;
            case LayerKind::ima: {
                for (std::size_t b = 0; b < layer.ima.dilations.size(); ++b) {
                    const std::string bp = layer.name + ".branch" + std::to_string(b);
                    append_conv_params(out, bp + ".dconv", in_c, in_c, 3, true);
                    append_conv_params(out, bp + ".merge", in_c, in_c, 1, true);
                }
                append_conv_params(out, layer.name + ".project", layer.ima.project_out,
                                   in_c * layer.ima.branch_count(), 1, true);
                break;
            }
            default:
                break;
        }
    }
    return out;
}

const Tensor& Model::param(const std::string& name) const {
    for (const NamedTensor& p : params) {
        if (p.name == name) return p.value;
    }
    throw std::out_of_range("no parameter named '" + name + "'");
}

Tensor& Model::param(const std::string& name) {
    for (NamedTensor& p : params) {
        if (p.name == name) return p.value;
    }
    throw std::out_of_range("no parameter named '" + name + "'");
}

std::int64_t Model::total_param_count() const {
    std::int64_t n = 0;
    for (const NamedTensor& p : params) {
        n += p.value.numel();
    }
    return n;
}

void Model::zero_grads() {
    for (Tensor& g : grads) {
        std::fill(g.data.begin(), g.data.end(), 0.0f);
    }
}

Model build_model(const ArchConfig& config, Rng& rng) {
    Model m;
    m.config = config;
    m.head_conv_index = find_head_conv(config);

    m.layer_param_offsets.assign(config.layers.size() + 1, 0);
    const auto layout = parameter_layout(config);
    int cursor = 0;
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        m.layer_param_offsets[i] = cursor;
        const LayerSpec& layer = config.layers[i];
        switch (layer.kind) {
            case LayerKind::conv: cursor += layer.conv.has_bias ? 2 : 1; break;
            case LayerKind::fire: cursor += 6; break;
            case LayerKind::ima: cursor += 4 * layer.ima.branch_count() + 2; break;
            default: break;
        }
    }
    m.layer_param_offsets[config.layers.size()] = cursor;
    if (cursor != static_cast<int>(layout.size())) {
        throw std::logic_error("parameter layout disagrees with per-layer offsets");
    }

    for (const auto& [name, dims] : layout) {
        NamedTensor nt;
        nt.name = name;
        if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0) {
            // fan_in = in_channels * k * k from the weight tensor itself.
            const int fan_in = dims[1] * dims[2] * dims[3];
            nt.value = tensor_random_init(dims, fan_in, rng);
        } else {
            nt.value = tensor_zeros(dims);
        }
        m.grads.emplace_back(tensor_zeros(dims));
        m.momentum.emplace_back(tensor_zeros(dims));
        m.params.push_back(std::move(nt));
    }
    return m;
}

namespace {

struct LayerParamView {
    const Tensor* w = nullptr;
    const Tensor* b = nullptr;
};

LayerParamView conv_params_at(const Model& model, int idx, bool has_bias) {
    LayerParamView v;
    v.w = &model.params[static_cast<std::size_t>(idx)].value;
    if (has_bias) {
        v.b = &model.params[static_cast<std::size_t>(idx) + 1].value;
    }
    return v;
}

FireParams fire_params_at(const Model& model, int base) {
    FireParams p;
    p.squeeze_w = model.params[base + 0].value;
    p.squeeze_b = model.params[base + 1].value;
    p.expand1_w = model.params[base + 2].value;
    p.expand1_b = model.params[base + 3].value;
    p.expand3_w = model.params[base + 4].value;
    p.expand3_b = model.params[base + 5].value;
    return p;
}

ImaParams ima_params_at(const Model& model, int base, int branches) {
    ImaParams p;
    p.branches.resize(branches);
    int cur = base;
    for (int b = 0; b < branches; ++b) {
        p.branches[b].dconv_w = model.params[cur++].value;
        p.branches[b].dconv_b = model.params[cur++].value;
        p.branches[b].merge_w = model.params[cur++].value;
        p.branches[b].merge_b = model.params[cur++].value;
    }
    p.project_w = model.params[cur++].value;
    p.project_b = model.params[cur++].value;
    return p;
}

Tensor flatten_tensor(const Tensor& x) {
    Tensor out({static_cast<int>(x.numel())});
    out.data = x.data;
    return out;
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& x,
                      const std::unordered_set<std::string>* capture,
                      std::vector<LayerTrace>* trace) {
    const ArchConfig& cfg = model.config;
    if (x.dims != std::vector<int>{cfg.in_channels, cfg.in_height, cfg.in_width}) {
        throw std::invalid_argument("forward: input shape does not match config input shape");
    }
    if (trace) {
        trace->assign(cfg.layers.size(), {});
    }

    ForwardResult res;
    Tensor cur = x;
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& layer = cfg.layers[i];
        const int poff = model.layer_param_offsets[i];
        LayerTrace scratch;
        LayerTrace& lt = trace ? (*trace)[i] : scratch;

        switch (layer.kind) {
            case LayerKind::conv: {
                const auto pv = conv_params_at(model, poff, layer.conv.has_bias);
                Tensor pre = conv2d_forward(cur, layer.conv, *pv.w, pv.b);
                if (static_cast<int>(i) == model.head_conv_index) {
                    cur = std::move(pre);
                } else {
                    cur = relu(pre);
                    if (trace) lt.conv_pre = std::move(pre);
                }
                break;
            }
            case LayerKind::pool: {
                MaxPoolResult r = maxpool_forward(cur, layer.pool);
                cur = std::move(r.y);
                if (trace) lt.argmax = std::move(r.argmax);
                break;
            }
            case LayerKind::fire: {
                cur = fire_forward(cur, layer.fire, fire_params_at(model, poff),
                                   trace ? &lt.fire : nullptr);
                break;
            }
            case LayerKind::ima: {
                cur = ima_forward(cur, layer.ima, ima_params_at(model, poff, layer.ima.branch_count()),
                                  trace ? &lt.ima : nullptr);
                break;
            }
            case LayerKind::gap:
                cur = global_average_pool(cur);
                break;
            case LayerKind::flatten:
                cur = flatten_tensor(cur);
                break;
        }
        if (capture && capture->count(layer.name)) {
            res.captured.emplace(layer.name, cur);
        }
        if (trace) lt.output = cur;
    }

    res.logits = flatten_tensor(cur);
    if (res.logits.numel() != cfg.class_count) {
        throw std::logic_error("forward: logits length does not equal class count");
    }
    return res;
}

Tensor backward(Model& model, const Tensor& x, const std::vector<LayerTrace>& trace,
                const Tensor& grad_logits) {
    const ArchConfig& cfg = model.config;
    if (trace.size() != cfg.layers.size()) {
        throw std::invalid_argument("backward: trace does not cover all layers");
    }
    if (grad_logits.numel() != cfg.class_count) {
        throw std::invalid_argument("backward: grad_logits length mismatch");
    }

    auto accumulate = [&](int idx, const Tensor& g) {
        Tensor& dst = model.grads[static_cast<std::size_t>(idx)];
        for (std::size_t j = 0; j < dst.data.size(); ++j) {
            dst.data[j] += g.data[j];
        }
    };

    Tensor grad = grad_logits;
    for (std::size_t i = cfg.layers.size(); i-- > 0;) {
        const LayerSpec& layer = cfg.layers[i];
        const Tensor& layer_in = i == 0 ? x : trace[i - 1].output;
        const int poff = model.layer_param_offsets[i];

        switch (layer.kind) {
            case LayerKind::conv: {
                Tensor g_pre;
                if (static_cast<int>(i) == model.head_conv_index) {
                    g_pre = std::move(grad);
                } else {
                    g_pre = relu_backward(trace[i].conv_pre, grad);
                }
                const Tensor& w = model.params[poff].value;
                ConvGrads cg = conv2d_backward(layer_in, layer.conv, w, g_pre);
                accumulate(poff, cg.grad_w);
                if (layer.conv.has_bias) {
                    accumulate(poff + 1, *cg.grad_b);
                }
                grad = std::move(cg.grad_x);
                break;
            }
            case LayerKind::pool:
                grad = maxpool_backward(grad, trace[i].argmax, layer_in.dims);
                break;
            case LayerKind::fire: {
                FireGrads fg = fire_backward(layer_in, layer.fire, fire_params_at(model, poff),
                                             trace[i].fire, grad);
                accumulate(poff + 0, fg.grads.squeeze_w);
                accumulate(poff + 1, fg.grads.squeeze_b);
                accumulate(poff + 2, fg.grads.expand1_w);
                accumulate(poff + 3, fg.grads.expand1_b);
                accumulate(poff + 4, fg.grads.expand3_w);
                accumulate(poff + 5, fg.grads.expand3_b);
                grad = std::move(fg.grad_x);
                break;
            }
            case LayerKind::ima: {
                const int branches = layer.ima.branch_count();
                ImaGrads ig = ima_backward(layer_in, layer.ima,
                                           ima_params_at(model, poff, branches), trace[i].ima,
                                           grad);
                int cur = poff;
                for (int b = 0; b < branches; ++b) {
                    accumulate(cur++, ig.grads.branches[b].dconv_w);
                    accumulate(cur++, ig.grads.branches[b].dconv_b);
                    accumulate(cur++, ig.grads.branches[b].merge_w);
                    accumulate(cur++, ig.grads.branches[b].merge_b);
                }
                accumulate(cur++, ig.grads.project_w);
                accumulate(cur++, ig.grads.project_b);
                grad = std::move(ig.grad_x);
                break;
            }
            case LayerKind::gap:
                grad = global_average_pool_backward(grad, layer_in.dims);
                break;
            case LayerKind::flatten: {
                Tensor g(layer_in.dims);
                g.data = grad.data;
                grad = std::move(g);
                break;
            }
        }
    }
    return grad;
}

Prediction predict(const Model& model, const Tensor& x) {
    const ForwardResult fr = forward(model, x);
    const Tensor probs = softmax(fr.logits, SoftmaxAxis::channel);
    Prediction p;
    int best = 0;
    for (int i = 1; i < static_cast<int>(probs.numel()); ++i) {
        if (probs.data[static_cast<std::size_t>(i)] > probs.data[static_cast<std::size_t>(best)]) {
            best = i;  // strict: ties keep the lowest index
        }
    }
    p.level = static_cast<DensityLevel>(best);
    p.probs = probs.data;
    return p;
}

namespace {

constexpr char kMagic[4] = {'M', 'C', 'N', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    os.write(b, 4);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw std::runtime_error("weights blob truncated");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("weights blob truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_weights(const Model& model, std::ostream& sink) {
    sink.write(kMagic, 4);
    put_u32(sink, kVersion);
    put_u32(sink, static_cast<std::uint32_t>(model.params.size()));
    put_u32(sink, 0);  // reserved
    for (const NamedTensor& p : model.params) {
        put_u16(sink, static_cast<std::uint16_t>(p.name.size()));
        sink.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const char rank = static_cast<char>(p.value.rank());
        sink.write(&rank, 1);
        for (int d : p.value.dims) {
            put_u32(sink, static_cast<std::uint32_t>(d));
        }
        for (float v : p.value.data) {
            std::uint32_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, 4);
            put_u32(sink, bits);
        }
    }
    if (!sink) {
        throw std::runtime_error("failed writing weights blob");
    }
}

Model load_weights(const ArchConfig& config, std::istream& source) {
    char magic[4];
    source.read(magic, 4);
    if (!source || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("weights blob: bad magic");
    }
    const std::uint32_t version = get_u32(source);
    if (version != kVersion) {
        throw std::runtime_error("weights blob: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = get_u32(source);
    get_u32(source);  // reserved

    const auto layout = parameter_layout(config);
    if (count != layout.size()) {
        throw std::runtime_error("weights blob: expected " + std::to_string(layout.size()) +
                                 " tensors, found " + std::to_string(count));
    }
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        index.emplace(layout[i].first, i);
    }

    Rng throwaway(0);
    Model m = build_model(config, throwaway);
    std::vector<bool> seen(layout.size(), false);

    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint16_t name_len = get_u16(source);
        std::string name(name_len, '\0');
        source.read(name.data(), name_len);
        if (!source) throw std::runtime_error("weights blob truncated");
        const auto it = index.find(name);
        if (it == index.end()) {
            throw std::runtime_error("weights blob: unknown tensor '" + name + "'");
        }
        if (seen[it->second]) {
            throw std::runtime_error("weights blob: duplicate tensor '" + name + "'");
        }
        seen[it->second] = true;

        char rank_c;
        source.read(&rank_c, 1);
        if (!source) throw std::runtime_error("weights blob truncated");
        const int rank = rank_c;
        const std::vector<int>& want = layout[it->second].second;
        if (rank != static_cast<int>(want.size())) {
            throw std::runtime_error("weights blob: tensor '" + name + "' has rank " +
                                     std::to_string(rank) + ", expected " +
                                     std::to_string(want.size()));
        }
        std::vector<int> dims(static_cast<std::size_t>(rank));
        for (int d = 0; d < rank; ++d) {
            dims[static_cast<std::size_t>(d)] = static_cast<int>(get_u32(source));
        }
        if (dims != want) {
            throw std::runtime_error("weights blob: tensor '" + name + "' has wrong dims");
        }
        Tensor& dst = m.params[it->second].value;
        for (float& v : dst.data) {
            const std::uint32_t bits = get_u32(source);
            std::memcpy(&v, &bits, 4);
        }
    }
    return m;
}

void save_weights_file(const Model& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    save_weights(model, f);
}

Model load_weights_file(const ArchConfig& config, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open '" + path + "' for reading");
    }
    return load_weights(config, f);
}

}  // namespace mcnet
