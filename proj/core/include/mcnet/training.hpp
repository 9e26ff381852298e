#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mcnet/model.hpp"
#include "mcnet/tensor.hpp"

namespace mcnet {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    float lr = 0.01f;
    float momentum = 0.9f;
    std::uint64_t seed = 1;
    bool shuffle = true;
    /// Optional step decay: multiply lr by decay_factor once at decay_epoch
    /// (1-based); 0 disables.
    int decay_epoch = 0;
    float decay_factor = 0.1f;
};

struct Sample {
    Tensor x;
    int label = 0;
};

struct EpochMetrics {
    float mean_loss = 0.0f;
    float accuracy = 0.0f;
};

struct PrPoint {
    float threshold = 0.0f;
    float precision = 0.0f;
    float recall = 0.0f;
};

struct EvalResult {
    float accuracy = 0.0f;
    std::array<std::array<int, 3>, 3> confusion{};  // [actual][predicted]
    std::array<std::vector<PrPoint>, 3> pr;         // one-vs-rest per class
};

/// v <- momentum * v + grad; param <- param - lr * v; grads zeroed after.
void sgd_step(Model& model, float lr, float momentum);

/// One full pass in batches (shuffled per epoch from `shuffle_rng` when
/// enabled). Gradients are averaged over each batch in sample order, so the
/// result is bit-reproducible per seed. `lr` is the effective rate for this
/// epoch.
EpochMetrics train_epoch(Model& model, const std::vector<Sample>& dataset,
                         const TrainConfig& cfg, float lr, Rng& shuffle_rng);

/// Full training run driving train_epoch; returns per-epoch metrics.
std::vector<EpochMetrics> train(Model& model, const std::vector<Sample>& dataset,
                                const TrainConfig& cfg);

/// Accuracy, confusion matrix, and per-class one-vs-rest precision-recall
/// computed by sweeping a threshold over the class softmax score. Points are
/// sorted by recall.
EvalResult evaluate(const Model& model, const std::vector<Sample>& dataset);

/// Compare the analytic gradient of the cross-entropy loss w.r.t. every
/// parameter and the input against central finite differences. Returns
/// max(|a - n| / max(|a|, |n|, 1e-8)). Intended for configs with at most a
/// few thousand parameters.
float grad_check(const ArchConfig& config, std::uint64_t seed, float eps);

std::string metrics_csv(const std::vector<EpochMetrics>& metrics);
std::string pr_csv(const EvalResult& eval);

}  // namespace mcnet
