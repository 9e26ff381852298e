#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcnet/arch.hpp"

namespace mcnet {

struct LayerAnalysis {
    std::string name;
    std::string kind;
    std::vector<int> out_shape;  // C,H,W
    int f_eff = 1;               // effective kernel entering the RF recurrence
    int stride = 1;
    int rf = 1;                  // receptive field after this layer
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct AnalysisReport {
    std::vector<LayerAnalysis> rows;
    std::int64_t total_params = 0;
    std::int64_t total_macs = 0;
    int rf_final = 1;
    bool covers_input = false;  // rf_final >= max(input H, W)
};

/// Receptive field after each layer: r_0 = 1,
/// r_n = r_{n-1} + (f_n - 1) * prod_{i<n} s_i, with dilated convs
/// contributing their effective kernel and multi-branch blocks (fire, ima)
/// contributing their widest path. gap/flatten leave r unchanged.
std::vector<int> receptive_field(const ArchConfig& config);

/// Weight + bias element counts per layer (pool/gap/flatten are 0).
std::vector<std::int64_t> count_params_per_layer(const ArchConfig& config);
std::int64_t count_params(const ArchConfig& config);

/// Convolution multiplies per layer: outH*outW*out_c*in_c*k^2 per conv
/// (dilation does not change the tap count); everything else costs 0.
std::vector<std::int64_t> count_macs_per_layer(const ArchConfig& config);
std::int64_t count_macs(const ArchConfig& config);

AnalysisReport analyze(const ArchConfig& config);

enum class ReportFormat { text, csv };

/// CSV header: name,kind,out_shape,f_eff,stride,rf,params,macs; one row per
/// layer plus a totals row.
std::string render_report(const AnalysisReport& report, ReportFormat format);

}  // namespace mcnet
