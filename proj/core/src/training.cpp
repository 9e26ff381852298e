#include "mcnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mcnet/layers.hpp"

namespace mcnet {

void sgd_step(Model& model, float lr, float momentum) {
    for (std::size_t t = 0; t < model.params.size(); ++t) {
        Tensor& p = model.params[t].value;
        Tensor& g = model.grads[t];
        Tensor& v = model.momentum[t];
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            v.data[i] = momentum * v.data[i] + g.data[i];
            p.data[i] -= lr * v.data[i];
        }
    }
    model.zero_grads();
}

EpochMetrics train_epoch(Model& model, const std::vector<Sample>& dataset,
                         const TrainConfig& cfg, float lr, Rng& shuffle_rng) {
    if (dataset.empty()) {
        throw std::invalid_argument("train_epoch: empty dataset");
    }
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    if (cfg.shuffle) {
        // Fisher-Yates on the portable rng stream.
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = shuffle_rng.bounded(i);
            std::swap(order[i - 1], order[j]);
        }
    }

    double loss_sum = 0.0;
    std::int64_t correct = 0;
    std::vector<LayerTrace> trace;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const float inv_batch = 1.0f / static_cast<float>(end - start);
        for (std::size_t i = start; i < end; ++i) {
            const Sample& s = dataset[order[i]];
            const ForwardResult fr = forward(model, s.x, nullptr, &trace);
            CrossEntropyResult ce = softmax_cross_entropy(fr.logits, s.label);
            loss_sum += ce.loss;
            int argmax = 0;
            for (int c = 1; c < static_cast<int>(fr.logits.numel()); ++c) {
                if (fr.logits.data[c] > fr.logits.data[argmax]) argmax = c;
            }
            if (argmax == s.label) ++correct;
            for (float& g : ce.grad_logits.data) {
                g *= inv_batch;
            }
            backward(model, s.x, trace, ce.grad_logits);
        }
        sgd_step(model, lr, cfg.momentum);
    }

    EpochMetrics m;
    m.mean_loss = static_cast<float>(loss_sum / static_cast<double>(dataset.size()));
    m.accuracy = static_cast<float>(correct) / static_cast<float>(dataset.size());
    return m;
}

std::vector<EpochMetrics> train(Model& model, const std::vector<Sample>& dataset,
                                const TrainConfig& cfg) {
    if (cfg.lr <= 0.0f) {
        throw std::invalid_argument("train: lr must be > 0");
    }
    if (cfg.momentum < 0.0f || cfg.momentum >= 1.0f) {
        throw std::invalid_argument("train: momentum must be in [0, 1)");
    }
    Rng shuffle_rng(cfg.seed);
    std::vector<EpochMetrics> out;
    float lr = cfg.lr;
    for (int e = 1; e <= cfg.epochs; ++e) {
        if (cfg.decay_epoch > 0 && e == cfg.decay_epoch) {
            lr *= cfg.decay_factor;
        }
        out.push_back(train_epoch(model, dataset, cfg, lr, shuffle_rng));
    }
    return out;
}

namespace {

// Recall ties broken by threshold so the sweep order is deterministic.
bool pr_less(const PrPoint& a, const PrPoint& b) {
    if (a.recall != b.recall) return a.recall < b.recall;
    return a.threshold > b.threshold;
}

}  // namespace

EvalResult evaluate(const Model& model, const std::vector<Sample>& dataset) {
    if (dataset.empty()) {
        throw std::invalid_argument("evaluate: empty dataset");
    }
    EvalResult res;
    std::vector<std::vector<float>> scores(dataset.size());
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Prediction p = predict(model, dataset[i].x);
        scores[i] = p.probs;
        const int pred = static_cast<int>(p.level);
        const int actual = dataset[i].label;
        if (pred == actual) ++correct;
        if (actual >= 0 && actual < 3 && pred >= 0 && pred < 3) {
            res.confusion[static_cast<std::size_t>(actual)][static_cast<std::size_t>(pred)]++;
        }
    }
    res.accuracy = static_cast<float>(correct) / static_cast<float>(dataset.size());

    const int classes = static_cast<int>(scores[0].size());
    for (int c = 0; c < std::min(classes, 3); ++c) {
        std::vector<float> thresholds;
        thresholds.reserve(dataset.size());
        for (const auto& s : scores) {
            thresholds.push_back(s[static_cast<std::size_t>(c)]);
        }
        std::sort(thresholds.begin(), thresholds.end());
        thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

        int positives = 0;
        for (const Sample& s : dataset) {
            if (s.label == c) ++positives;
        }
        for (float t : thresholds) {
            int tp = 0, fp = 0;
            for (std::size_t i = 0; i < dataset.size(); ++i) {
                if (scores[i][static_cast<std::size_t>(c)] >= t) {
                    if (dataset[i].label == c) {
                        ++tp;
                    } else {
                        ++fp;
                    }
                }
            }
            PrPoint p;
            p.threshold = t;
            p.precision = (tp + fp) > 0 ? static_cast<float>(tp) / static_cast<float>(tp + fp)
                                        : 1.0f;
            p.recall = positives > 0 ? static_cast<float>(tp) / static_cast<float>(positives)
                                     : 0.0f;
            res.pr[static_cast<std::size_t>(c)].push_back(p);
        }
        std::sort(res.pr[static_cast<std::size_t>(c)].begin(),
                  res.pr[static_cast<std::size_t>(c)].end(), pr_less);
    }
    return res;
}

float grad_check(const ArchConfig& config, std::uint64_t seed, float eps) {
    if (eps <= 0.0f) {
        throw std::invalid_argument("grad_check: eps must be > 0");
    }
    Rng rng(seed);
    Model model = build_model(config, rng);

    Tensor x = tensor_random_init({config.in_channels, config.in_height, config.in_width},
                                  1 /* spread in [-sqrt(6), sqrt(6)] */, rng);
    const int label = static_cast<int>(rng.bounded(config.class_count));

    auto loss_at = [&](const Tensor& input) {
        const ForwardResult fr = forward(model, input);
        return softmax_cross_entropy(fr.logits, label).loss;
    };

    std::vector<LayerTrace> trace;
    const ForwardResult fr = forward(model, x, nullptr, &trace);
    CrossEntropyResult ce = softmax_cross_entropy(fr.logits, label);
    model.zero_grads();
    Tensor grad_x = backward(model, x, trace, ce.grad_logits);

    double max_rel = 0.0;
    auto check_one = [&](float analytic, float* slot) {
        const float saved = *slot;
        *slot = saved + eps;
        const double lp = loss_at(x);
        *slot = saved - eps;
        const double lm = loss_at(x);
        *slot = saved;
        if (!std::isfinite(lp) || !std::isfinite(lm)) {
            throw std::runtime_error("grad_check: non-finite loss");
        }
        const double numeric = (lp - lm) / (2.0 * static_cast<double>(eps));
        const double denom = std::max({std::abs(static_cast<double>(analytic)),
                                       std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    };

    for (std::size_t t = 0; t < model.params.size(); ++t) {
        Tensor& p = model.params[t].value;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            check_one(model.grads[t].data[i], &p.data[i]);
        }
    }
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        check_one(grad_x.data[i], &x.data[i]);
    }
    return static_cast<float>(max_rel);
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
    std::ostringstream os;
    os << "epoch,loss,accuracy\n";
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        os << (i + 1) << "," << metrics[i].mean_loss << "," << metrics[i].accuracy << "\n";
    }
    return os.str();
}

std::string pr_csv(const EvalResult& eval) {
    std::ostringstream os;
    os << "class,threshold,precision,recall\n";
    for (std::size_t c = 0; c < eval.pr.size(); ++c) {
        for (const PrPoint& p : eval.pr[c]) {
            os << c << "," << p.threshold << "," << p.precision << "," << p.recall << "\n";
        }
    }
    return os.str();
}

}  // namespace mcnet
