// mcnet: analyze, synth, train, predict, bench, gradcheck, inspect — one
// binary over the core library.
//
// Exit codes: 0 success, 1 I/O error, 2 validation/threshold failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <CLI11.hpp>

#include "mcnet/analysis.hpp"
#include "mcnet/arch.hpp"
#include "mcnet/data.hpp"
#include "mcnet/model.hpp"
#include "mcnet/training.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitValidation = 2;

struct CliError {
    int code;
    std::string message;
};

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw CliError{kExitIo, "cannot open '" + path + "'"};
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

mcnet::ArchConfig load_config(const std::string& path) {
    const std::string text = read_text_file(path);
    try {
        return mcnet::parse_arch(text);
    } catch (const mcnet::ParseError& e) {
        throw CliError{kExitValidation, path + ": " + e.what()};
    }
}

std::vector<int> parse_shape(const std::string& s, int parts) {
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t x = s.find('x', pos);
        const std::string piece = s.substr(pos, x == std::string::npos ? x : x - pos);
        try {
            out.push_back(std::stoi(piece));
        } catch (const std::exception&) {
            throw CliError{kExitValidation, "malformed shape '" + s + "'"};
        }
        if (x == std::string::npos) break;
        pos = x + 1;
    }
    if (static_cast<int>(out.size()) != parts) {
        throw CliError{kExitValidation, "shape '" + s + "' needs " + std::to_string(parts) +
                                            " fields"};
    }
    return out;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
    std::string config;
    std::string input_shape;
    std::string format = "text";
    bool warn_only = false;
};

int cmd_analyze(const AnalyzeArgs& args) {
    mcnet::ArchConfig config = load_config(args.config);
    if (!args.input_shape.empty()) {
        const auto s = parse_shape(args.input_shape, 3);
        config.in_channels = s[0];
        config.in_height = s[1];
        config.in_width = s[2];
        try {
            mcnet::validate_config(config);
        } catch (const mcnet::ParseError& e) {
            throw CliError{kExitValidation, std::string("--input-shape: ") + e.what()};
        }
    }
    const mcnet::AnalysisReport report = mcnet::analyze(config);
    const auto format =
        args.format == "csv" ? mcnet::ReportFormat::csv : mcnet::ReportFormat::text;
    std::cout << mcnet::render_report(report, format);
    if (!report.covers_input) {
        std::cerr << "warning: receptive field " << report.rf_final
                  << " does not cover the input\n";
        if (!args.warn_only) {
            return kExitValidation;
        }
    }
    return kExitOk;
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
    std::string out_dir;
    int per_class = 10;
    std::string size = "64x64";
    std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& args) {
    const auto hw = parse_shape(args.size, 2);
    std::error_code ec;
    std::filesystem::create_directories(args.out_dir, ec);
    if (ec) {
        throw CliError{kExitIo, "cannot create directory '" + args.out_dir + "'"};
    }
    mcnet::Rng rng(args.seed);
    const auto images = mcnet::synth_generate(args.per_class, hw[0], hw[1], rng);
    std::ostringstream manifest;
    for (std::size_t i = 0; i < images.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "img_%05zu_c%02d.pgm", i, images[i].count);
        mcnet::write_pixmap_file(images[i].image,
                                 (std::filesystem::path(args.out_dir) / name).string());
        manifest << name << "\t" << static_cast<int>(images[i].label) << "\n";
    }
    std::ofstream mf(std::filesystem::path(args.out_dir) / "manifest.txt");
    if (!mf) {
        throw CliError{kExitIo, "cannot write manifest in '" + args.out_dir + "'"};
    }
    mf << manifest.str();
    std::cout << "wrote " << images.size() << " images + manifest.txt to " << args.out_dir
              << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string config;
    std::string data;
    int epochs = 30;
    double lr = 0.01;
    double momentum = 0.9;
    int batch = 32;
    std::uint64_t seed = 1;
    std::string out_weights;
    std::string metrics;
    std::string pr_out;
    double split = 0.0;
    int decay_epoch = 0;
    double decay_factor = 0.1;
};

int cmd_train(const TrainArgs& args) {
    const mcnet::ArchConfig config = load_config(args.config);
    const auto manifest = [&] {
        try {
            return mcnet::load_manifest(args.data);
        } catch (const std::runtime_error& e) {
            const std::string what = e.what();
            throw CliError{what.find("manifest line") != std::string::npos ? kExitValidation
                                                                           : kExitIo,
                           what};
        }
    }();
    const std::string base_dir = std::filesystem::path(args.data).parent_path().string();

    std::vector<mcnet::ManifestEntry> train_part = manifest, test_part;
    mcnet::Rng split_rng(args.seed);
    if (args.split > 0.0) {
        auto [tr, te] = mcnet::split_manifest(manifest, args.split, split_rng);
        train_part = std::move(tr);
        test_part = std::move(te);
    }
    const auto train_set =
        mcnet::load_samples(train_part, base_dir, config.in_height, config.in_width);

    mcnet::TrainConfig tc;
    tc.epochs = args.epochs;
    tc.batch_size = args.batch;
    tc.lr = static_cast<float>(args.lr);
    tc.momentum = static_cast<float>(args.momentum);
    tc.seed = args.seed;
    tc.decay_epoch = args.decay_epoch;
    tc.decay_factor = static_cast<float>(args.decay_factor);

    mcnet::Rng init_rng(args.seed);
    mcnet::Model model = mcnet::build_model(config, init_rng);
    std::vector<mcnet::EpochMetrics> metrics;
    if (args.epochs > 0) {
        metrics = mcnet::train(model, train_set, tc);
        for (std::size_t e = 0; e < metrics.size(); ++e) {
            std::cout << "epoch " << (e + 1) << " loss=" << metrics[e].mean_loss
                      << " accuracy=" << metrics[e].accuracy << "\n";
        }
    }

    if (!args.out_weights.empty()) {
        mcnet::save_weights_file(model, args.out_weights);
    }
    if (!args.metrics.empty()) {
        std::ofstream mf(args.metrics);
        if (!mf) {
            throw CliError{kExitIo, "cannot write '" + args.metrics + "'"};
        }
        mf << mcnet::metrics_csv(metrics);
    }
    if (!test_part.empty()) {
        const auto test_set =
            mcnet::load_samples(test_part, base_dir, config.in_height, config.in_width);
        const mcnet::EvalResult eval = mcnet::evaluate(model, test_set);
        std::cout << "test_accuracy=" << eval.accuracy << "\n";
        if (!args.pr_out.empty()) {
            std::ofstream pf(args.pr_out);
            if (!pf) {
                throw CliError{kExitIo, "cannot write '" + args.pr_out + "'"};
            }
            pf << mcnet::pr_csv(eval);
        }
    }
    return kExitOk;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
    std::string config;
    std::string weights;
    std::string image;
};

int cmd_predict(const PredictArgs& args) {
    const mcnet::ArchConfig config = load_config(args.config);
    mcnet::Model model = [&] {
        try {
            return mcnet::load_weights_file(config, args.weights);
        } catch (const std::runtime_error& e) {
            const std::string what = e.what();
            throw CliError{what.find("cannot open") != std::string::npos ? kExitIo
                                                                         : kExitValidation,
                           what};
        }
    }();
    mcnet::ImageBuffer img;
    try {
        img = mcnet::read_pixmap_file(args.image);
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        throw CliError{what.find("cannot open") != std::string::npos ? kExitIo : kExitValidation,
                       what};
    }
    const mcnet::Tensor x = mcnet::preprocess(img, config.in_height, config.in_width);
    const mcnet::Prediction p = mcnet::predict(model, x);
    std::cout << "level=" << mcnet::density_level_name(p.level) << " probs=";
    for (std::size_t i = 0; i < p.probs.size(); ++i) {
        std::cout << (i ? "," : "") << p.probs[i];
    }
    std::cout << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------ bench

struct BenchArgs {
    std::string config;
    std::string weights;
    int iters = 50;
    int warmup = 5;
    int threads = 1;
    std::uint64_t seed = 1;
};

double quantile_ms(const std::vector<double>& sorted, double q) {
    const std::size_t idx =
        static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1));
    return sorted[idx];
}

int cmd_bench(const BenchArgs& args) {
    if (args.iters < 1 || args.warmup < 0 || args.threads < 1) {
        throw CliError{kExitValidation, "bench: iters >= 1, warmup >= 0, threads >= 1"};
    }
    const mcnet::ArchConfig config = load_config(args.config);
    mcnet::Rng rng(args.seed);
    const mcnet::Model model = args.weights.empty()
                                   ? mcnet::build_model(config, rng)
                                   : mcnet::load_weights_file(config, args.weights);

    auto run_worker = [&](std::uint64_t seed, std::vector<double>& lat_ms) {
        mcnet::Rng worker_rng(seed);
        const mcnet::Tensor x = mcnet::tensor_random_init(
            {config.in_channels, config.in_height, config.in_width}, 1, worker_rng);
        volatile float sink = 0.0f;
        for (int i = 0; i < args.warmup; ++i) {
            sink = sink + mcnet::forward(model, x).logits.data[0];
        }
        lat_ms.reserve(static_cast<std::size_t>(args.iters));
        for (int i = 0; i < args.iters; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            sink = sink + mcnet::forward(model, x).logits.data[0];
            const auto t1 = std::chrono::steady_clock::now();
            lat_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
    };

    std::vector<std::vector<double>> per_thread(static_cast<std::size_t>(args.threads));
    const auto wall0 = std::chrono::steady_clock::now();
    if (args.threads == 1) {
        run_worker(args.seed, per_thread[0]);
    } else {
        std::vector<std::thread> workers;
        for (int t = 0; t < args.threads; ++t) {
            workers.emplace_back(run_worker, args.seed + static_cast<std::uint64_t>(t),
                                 std::ref(per_thread[static_cast<std::size_t>(t)]));
        }
        for (auto& w : workers) {
            w.join();
        }
    }
    const auto wall1 = std::chrono::steady_clock::now();

    std::vector<double> lat;
    for (const auto& v : per_thread) {
        lat.insert(lat.end(), v.begin(), v.end());
    }
    std::sort(lat.begin(), lat.end());
    const double mean =
        std::accumulate(lat.begin(), lat.end(), 0.0) / static_cast<double>(lat.size());
    const double wall_s = std::chrono::duration<double>(wall1 - wall0).count();

    std::cout << "iterations=" << args.iters << " warmup=" << args.warmup
              << " threads=" << args.threads << "\n";
    std::cout << "latencies_ms=";
    for (std::size_t i = 0; i < lat.size(); ++i) {
        std::cout << (i ? "," : "") << lat[i];
    }
    std::cout << "\n";
    std::printf("mean_ms=%.4f median_ms=%.4f p95_ms=%.4f min_ms=%.4f max_ms=%.4f\n", mean,
                quantile_ms(lat, 0.5), quantile_ms(lat, 0.95), lat.front(), lat.back());
    std::printf("throughput_fps=%.2f\n",
                static_cast<double>(lat.size()) / std::max(wall_s, 1e-9));
    return kExitOk;
}

// -------------------------------------------------------------- gradcheck

struct GradcheckArgs {
    std::string config;
    std::uint64_t seed = 1;
    double eps = 1e-3;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    const mcnet::ArchConfig config = load_config(args.config);
    const std::int64_t params = mcnet::count_params(config);
    if (params > 5000) {
        throw CliError{kExitValidation,
                       "gradcheck: config has " + std::to_string(params) +
                           " parameters; use a config with at most 5000"};
    }
    float max_rel = 0.0f;
    try {
        max_rel = mcnet::grad_check(config, args.seed, static_cast<float>(args.eps));
    } catch (const std::invalid_argument& e) {
        throw CliError{kExitValidation, e.what()};
    }
    std::printf("max_rel_err=%.3e\n", static_cast<double>(max_rel));
    return max_rel < 1e-3f ? kExitOk : kExitValidation;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
    std::string config;
    std::string weights;
    std::string image;
    std::string layer;
    std::string out_dir;
};

int cmd_inspect(const InspectArgs& args) {
    const mcnet::ArchConfig config = load_config(args.config);
    bool known = false;
    for (const auto& l : config.layers) {
        known = known || l.name == args.layer;
    }
    if (!known) {
        std::string names;
        for (const auto& l : config.layers) {
            names += (names.empty() ? "" : ", ") + l.name;
        }
        throw CliError{kExitValidation,
                       "no layer named '" + args.layer + "' (have: " + names + ")"};
    }
    const mcnet::Model model = mcnet::load_weights_file(config, args.weights);
    const mcnet::ImageBuffer img = mcnet::read_pixmap_file(args.image);
    const mcnet::Tensor x = mcnet::preprocess(img, config.in_height, config.in_width);
    const std::unordered_set<std::string> capture{args.layer};
    const mcnet::ForwardResult fr = mcnet::forward(model, x, &capture);
    const mcnet::Tensor& act = fr.captured.at(args.layer);

    std::error_code ec;
    std::filesystem::create_directories(args.out_dir, ec);
    if (ec) {
        throw CliError{kExitIo, "cannot create directory '" + args.out_dir + "'"};
    }
    const int c = act.channels(), h = act.height(), w = act.width();
    for (int ch = 0; ch < c; ++ch) {
        float lo = act.at(ch, 0, 0), hi = lo;
        for (int y = 0; y < h; ++y) {
            for (int xo = 0; xo < w; ++xo) {
                lo = std::min(lo, act.at(ch, y, xo));
                hi = std::max(hi, act.at(ch, y, xo));
            }
        }
        const float range = hi > lo ? hi - lo : 1.0f;
        mcnet::ImageBuffer out;
        out.width = w;
        out.height = h;
        out.channels = 1;
        out.pixels.resize(static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y) {
            for (int xo = 0; xo < w; ++xo) {
                out.pixels[static_cast<std::size_t>(y) * w + xo] = static_cast<std::uint8_t>(
                    std::clamp((act.at(ch, y, xo) - lo) / range * 255.0f, 0.0f, 255.0f) + 0.5f);
            }
        }
        char name[128];
        std::snprintf(name, sizeof(name), "%s_c%03d.pgm", args.layer.c_str(), ch);
        mcnet::write_pixmap_file(out, (std::filesystem::path(args.out_dir) / name).string());
    }
    std::cout << "wrote " << c << " channel images to " << args.out_dir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MCNet crowd-density toolkit"};
    app.require_subcommand(1);

    AnalyzeArgs analyze_args;
    auto* analyze = app.add_subcommand("analyze", "static analysis of an architecture config");
    analyze->add_option("--config", analyze_args.config, "architecture config file")->required();
    analyze->add_option("--input-shape", analyze_args.input_shape, "override input CxHxW");
    analyze->add_option("--format", analyze_args.format, "text|csv")
        ->check(CLI::IsMember({"text", "csv"}));
    analyze->add_flag("--warn", analyze_args.warn_only,
                      "exit 0 even when the receptive field does not cover the input");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic crowd dataset");
    synth->add_option("--out", synth_args.out_dir, "output directory")->required();
    synth->add_option("--per-class", synth_args.per_class, "images per density level");
    synth->add_option("--size", synth_args.size, "image HxW");
    synth->add_option("--seed", synth_args.seed, "rng seed");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train a model on a manifest dataset");
    train->add_option("--config", train_args.config)->required();
    train->add_option("--data", train_args.data, "manifest file")->required();
    train->add_option("--epochs", train_args.epochs);
    train->add_option("--lr", train_args.lr);
    train->add_option("--momentum", train_args.momentum);
    train->add_option("--batch", train_args.batch);
    train->add_option("--seed", train_args.seed);
    train->add_option("--out", train_args.out_weights, "weights output file");
    train->add_option("--metrics", train_args.metrics, "per-epoch metrics CSV");
    train->add_option("--pr", train_args.pr_out, "held-out precision-recall CSV");
    train->add_option("--split", train_args.split, "train fraction; rest is held out");
    train->add_option("--lr-decay-epoch", train_args.decay_epoch,
                      "epoch at which to scale lr once (0 = off)");
    train->add_option("--lr-decay-factor", train_args.decay_factor);

    PredictArgs predict_args;
    auto* predict = app.add_subcommand("predict", "classify one image");
    predict->add_option("--config", predict_args.config)->required();
    predict->add_option("--weights", predict_args.weights)->required();
    predict->add_option("--image", predict_args.image, "P5/P6 pixmap")->required();

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "single-image inference latency");
    bench->add_option("--config", bench_args.config)->required();
    bench->add_option("--weights", bench_args.weights);
    bench->add_option("--iters", bench_args.iters);
    bench->add_option("--warmup", bench_args.warmup);
    bench->add_option("--threads", bench_args.threads);
    bench->add_option("--seed", bench_args.seed);

    GradcheckArgs gradcheck_args;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--config", gradcheck_args.config)->required();
    gradcheck->add_option("--seed", gradcheck_args.seed);
    gradcheck->add_option("--eps", gradcheck_args.eps);

    InspectArgs inspect_args;
    auto* inspect = app.add_subcommand("inspect", "dump one layer's activation channels");
    inspect->add_option("--config", inspect_args.config)->required();
    inspect->add_option("--weights", inspect_args.weights)->required();
    inspect->add_option("--image", inspect_args.image)->required();
    inspect->add_option("--layer", inspect_args.layer, "layer name, e.g. L11_fire")->required();
    inspect->add_option("--out", inspect_args.out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*analyze) return cmd_analyze(analyze_args);
        if (*synth) return cmd_synth(synth_args);
        if (*train) return cmd_train(train_args);
        if (*predict) return cmd_predict(predict_args);
        if (*bench) return cmd_bench(bench_args);
        if (*gradcheck) return cmd_gradcheck(gradcheck_args);
        if (*inspect) return cmd_inspect(inspect_args);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.message << "\n";
        return e.code;
    } catch (const mcnet::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        const std::string what = e.what();
        std::cerr << "error: " << what << "\n";
        return what.find("cannot open") != std::string::npos ? kExitIo : kExitValidation;
    }
    return kExitOk;
}
