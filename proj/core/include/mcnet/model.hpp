#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mcnet/arch.hpp"
#include "mcnet/density.hpp"
#include "mcnet/tensor.hpp"

namespace mcnet {

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// ArchConfig bound to parameters plus parallel gradient and momentum
/// buffers (identical names and dims, derivable from the config alone).
struct Model {
    ArchConfig config;
    std::vector<NamedTensor> params;
    std::vector<Tensor> grads;
    std::vector<Tensor> momentum;
    /// params index range [offsets[i], offsets[i+1]) belongs to layer i.
    std::vector<int> layer_param_offsets;

    /// Index of the head conv (the conv feeding the final gap); every other
    /// conv layer is followed by ReLU, the head conv is not.
    int head_conv_index = -1;

    const Tensor& param(const std::string& name) const;
    Tensor& param(const std::string& name);
    std::int64_t total_param_count() const;
    void zero_grads();
};

/// Expected parameter tensor names and dims for a config, in serialization
/// order. This is the single source of truth shared by build, load, and the
/// static analyzer's allocation cross-check.
std::vector<std::pair<std::string, std::vector<int>>> parameter_layout(const ArchConfig& config);

/// Allocate and initialize all parameters (uniform fan-in-scaled weights,
/// zero biases); deterministic per rng seed.
Model build_model(const ArchConfig& config, Rng& rng);

/// Per-layer forward state kept for the backward pass and for activation
/// capture.
struct LayerTrace {
    Tensor output;
    Tensor conv_pre;  // conv output before ReLU (conv layers only)
    std::vector<std::int64_t> argmax;
    FireTrace fire;
    ImaTrace ima;
};

struct ForwardResult {
    Tensor logits;  // rank-1, length class_count
    std::unordered_map<std::string, Tensor> captured;
};

/// Run the layer pipeline. `capture` selects intermediate activations by
/// layer name; `trace` (when non-null) retains everything backward needs.
ForwardResult forward(const Model& model, const Tensor& x,
                      const std::unordered_set<std::string>* capture = nullptr,
                      std::vector<LayerTrace>* trace = nullptr);

/// Backward through the whole pipeline; accumulates parameter gradients into
/// model.grads and returns the gradient w.r.t. the input.
Tensor backward(Model& model, const Tensor& x, const std::vector<LayerTrace>& trace,
                const Tensor& grad_logits);

struct Prediction {
    DensityLevel level = DensityLevel::low;
    std::vector<float> probs;  // length class_count (3 for the density task)
};

/// softmax over the logits; argmax with ties resolving to the lowest index.
Prediction predict(const Model& model, const Tensor& x);

/// Binary weights blob. Little-endian: magic "MCNW", u32 version=1,
/// u32 tensor count, u32 reserved (16-byte header); per tensor: u16 name
/// length, name bytes, u8 rank, u32 dims, raw float32 data.
void save_weights(const Model& model, std::ostream& sink);
Model load_weights(const ArchConfig& config, std::istream& source);

void save_weights_file(const Model& model, const std::string& path);
Model load_weights_file(const ArchConfig& config, const std::string& path);

}  // namespace mcnet
