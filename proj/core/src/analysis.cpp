#include "mcnet/analysis.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace mcnet {

namespace {

std::int64_t conv_macs(std::int64_t oh, std::int64_t ow, std::int64_t out_c, std::int64_t in_c,
                       std::int64_t k) {
    return oh * ow * out_c * in_c * k * k;
}

std::int64_t conv_params(std::int64_t out_c, std::int64_t in_c, std::int64_t k, bool bias) {
    return out_c * in_c * k * k + (bias ? out_c : 0);
}

}  // namespace

std::vector<int> receptive_field(const ArchConfig& config) {
    std::vector<int> out;
    out.reserve(config.layers.size());
    std::int64_t r = 1;
    std::int64_t stride_product = 1;
    for (const LayerSpec& layer : config.layers) {
        switch (layer.kind) {
            case LayerKind::conv:
                r += static_cast<std::int64_t>(layer.conv.effective_kernel() - 1) * stride_product;
                stride_product *= layer.conv.stride;
                break;
            case LayerKind::pool:
                r += static_cast<std::int64_t>(layer.pool.window - 1) * stride_product;
                stride_product *= layer.pool.stride;
                break;
            case LayerKind::fire:
                // squeeze 1x1 adds nothing; the expand 3x3 path is the widest.
                r += 2 * stride_product;
                break;
            case LayerKind::ima: {
                // Widest branch: the largest dilation's effective 3x3.
                int fd_max = 3;
                for (int d : layer.ima.dilations) {
                    fd_max = std::max(fd_max, 3 + 2 * (d - 1));
                }
                r += static_cast<std::int64_t>(fd_max - 1) * stride_product;
                break;
            }
            case LayerKind::gap:
            case LayerKind::flatten:
                break;
        }
        out.push_back(static_cast<int>(r));
    }
    return out;
}

std::vector<std::int64_t> count_params_per_layer(const ArchConfig& config) {
    std::vector<std::int64_t> out;
    out.reserve(config.layers.size());
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& layer = config.layers[i];
        const std::int64_t in_c = input_channels_of(config, i);
        std::int64_t p = 0;
        switch (layer.kind) {
            case LayerKind::conv:
                p = conv_params(layer.conv.out_channels, in_c, layer.conv.kernel,
                                layer.conv.has_bias);
                break;
            case LayerKind::fire:
                p = conv_params(layer.fire.squeeze_1x1, in_c, 1, true) +
                    conv_params(layer.fire.expand_1x1, layer.fire.squeeze_1x1, 1, true) +
                    conv_params(layer.fire.expand_3x3, layer.fire.squeeze_1x1, 3, true);
                break;
            case LayerKind::ima:
                for (std::size_t b = 0; b < layer.ima.dilations.size(); ++b) {
                    p += conv_params(in_c, in_c, 3, true) + conv_params(in_c, in_c, 1, true);
                }
                p += conv_params(layer.ima.project_out, in_c * layer.ima.branch_count(), 1, true);
                break;
            default:
                break;
        }
        out.push_back(p);
    }
    return out;
}

std::int64_t count_params(const ArchConfig& config) {
    std::int64_t total = 0;
    for (std::int64_t p : count_params_per_layer(config)) {
        total += p;
    }
    return total;
}

std::vector<std::int64_t> count_macs_per_layer(const ArchConfig& config) {
    std::vector<std::int64_t> out;
    out.reserve(config.layers.size());
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& layer = config.layers[i];
        const auto in_shape = shape_after(config, i);
        const auto out_shape = shape_after(config, i + 1);
        const std::int64_t in_c = in_shape[0];
        std::int64_t m = 0;
        switch (layer.kind) {
            case LayerKind::conv:
                m = conv_macs(out_shape[1], out_shape[2], layer.conv.out_channels, in_c,
                              layer.conv.kernel);
                break;
            case LayerKind::fire: {
                const std::int64_t h = in_shape[1], w = in_shape[2];
                m = conv_macs(h, w, layer.fire.squeeze_1x1, in_c, 1) +
                    conv_macs(h, w, layer.fire.expand_1x1, layer.fire.squeeze_1x1, 1) +
                    conv_macs(h, w, layer.fire.expand_3x3, layer.fire.squeeze_1x1, 3);
                break;
            }
            case LayerKind::ima: {
                const std::int64_t h = in_shape[1], w = in_shape[2];
                for (std::size_t b = 0; b < layer.ima.dilations.size(); ++b) {
                    m += conv_macs(h, w, in_c, in_c, 3) + conv_macs(h, w, in_c, in_c, 1);
                }
                m += conv_macs(h, w, layer.ima.project_out, in_c * layer.ima.branch_count(), 1);
                break;
            }
            default:
                break;
        }
        out.push_back(m);
    }
    return out;
}

std::int64_t count_macs(const ArchConfig& config) {
    std::int64_t total = 0;
    for (std::int64_t m : count_macs_per_layer(config)) {
        total += m;
    }
    return total;
}

AnalysisReport analyze(const ArchConfig& config) {
    AnalysisReport rep;
    const auto rf = receptive_field(config);
    const auto params = count_params_per_layer(config);
    const auto macs = count_macs_per_layer(config);

    for (std::size_t i = 0; i < config.layers.size(); ++i) {
        const LayerSpec& layer = config.layers[i];
        LayerAnalysis row;
        row.name = layer.name;
        row.kind = layer_kind_name(layer.kind);
        row.out_shape = shape_after(config, i + 1);
        switch (layer.kind) {
            case LayerKind::conv:
                row.f_eff = layer.conv.effective_kernel();
                row.stride = layer.conv.stride;
                break;
            case LayerKind::pool:
                row.f_eff = layer.pool.window;
                row.stride = layer.pool.stride;
                break;
            case LayerKind::fire:
                row.f_eff = 3;
                row.stride = 1;
                break;
            case LayerKind::ima: {
                int fd_max = 3;
                for (int d : layer.ima.dilations) {
                    fd_max = std::max(fd_max, 3 + 2 * (d - 1));
                }
                row.f_eff = fd_max;
                row.stride = 1;
                break;
            }
            default:
                row.f_eff = 1;
                row.stride = 1;
                break;
        }
        row.rf = rf[i];
        row.params = params[i];
        row.macs = macs[i];
        rep.total_params += row.params;
        rep.total_macs += row.macs;
        rep.rows.push_back(std::move(row));
    }
    rep.rf_final = rf.empty() ? 1 : rf.back();
    rep.covers_input = rep.rf_final >= std::max(config.in_height, config.in_width);
    return rep;
}

namespace {

std::string shape_str(const std::vector<int>& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? "x" : "") + std::to_string(s[i]);
    }
    return out;
}

}  // namespace

std::string render_report(const AnalysisReport& report, ReportFormat format) {
    std::ostringstream os;
    if (format == ReportFormat::csv) {
        os << "name,kind,out_shape,f_eff,stride,rf,params,macs\n";
        for (const LayerAnalysis& r : report.rows) {
            os << r.name << "," << r.kind << "," << shape_str(r.out_shape) << "," << r.f_eff
               << "," << r.stride << "," << r.rf << "," << r.params << "," << r.macs << "\n";
        }
        os << "TOTAL,,,,," << report.rf_final << "," << report.total_params << ","
           << report.total_macs << "\n";
        return os.str();
    }

    os << std::left << std::setw(14) << "name" << std::setw(9) << "kind" << std::setw(13)
       << "out_shape" << std::right << std::setw(6) << "f_eff" << std::setw(7) << "stride"
       << std::setw(6) << "rf" << std::setw(10) << "params" << std::setw(14) << "macs" << "\n";
    for (const LayerAnalysis& r : report.rows) {
        os << std::left << std::setw(14) << r.name << std::setw(9) << r.kind << std::setw(13)
           << shape_str(r.out_shape) << std::right << std::setw(6) << r.f_eff << std::setw(7)
           << r.stride << std::setw(6) << r.rf << std::setw(10) << r.params << std::setw(14)
           << r.macs << "\n";
    }
    os << std::left << std::setw(36) << "TOTAL" << std::right << std::setw(6) << "" << std::setw(7)
       << "" << std::setw(6) << report.rf_final << std::setw(10) << report.total_params
       << std::setw(14) << report.total_macs << "\n";
    os << "rf_final = " << report.rf_final << ", covers_input = "
       << (report.covers_input ? "true" : "false") << "\n";
    return os.str();
}

}  // namespace mcnet
