#include "mcnet/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mcnet {

namespace {

struct ByteCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    bool eof() const { return pos >= bytes.size(); }
    std::uint8_t peek() const { return bytes[pos]; }
    std::uint8_t take() { return bytes[pos++]; }
};

// Skip whitespace and '#' comments between header tokens.
void skip_header_space(ByteCursor& c) {
    while (!c.eof()) {
        const std::uint8_t b = c.peek();
        if (std::isspace(b)) {
            c.take();
        } else if (b == '#') {
            while (!c.eof() && c.take() != '\n') {
            }
        } else {
            break;
        }
    }
}

int read_header_int(ByteCursor& c, const char* what) {
    skip_header_space(c);
    if (c.eof() || !std::isdigit(c.peek())) {
        throw std::runtime_error(std::string("pixmap: malformed ") + what);
    }
    long v = 0;
    while (!c.eof() && std::isdigit(c.peek())) {
        v = v * 10 + (c.take() - '0');
        if (v > 1'000'000) {
            throw std::runtime_error(std::string("pixmap: absurd ") + what);
        }
    }
    return static_cast<int>(v);
}

}  // namespace

ImageBuffer decode_pixmap(std::span<const std::uint8_t> bytes) {
    ByteCursor c{bytes};
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw std::runtime_error("pixmap: bad magic (want P5 or P6)");
    }
    const int channels = bytes[1] == '5' ? 1 : 3;
    c.pos = 2;
    ImageBuffer img;
    img.channels = channels;
    img.width = read_header_int(c, "width");
    img.height = read_header_int(c, "height");
    const int maxval = read_header_int(c, "maxval");
    if (maxval != 255) {
        throw std::runtime_error("pixmap: maxval must be 255, got " + std::to_string(maxval));
    }
    if (img.width < 1 || img.height < 1) {
        throw std::runtime_error("pixmap: non-positive dimensions");
    }
    if (c.eof() || !std::isspace(c.peek())) {
        throw std::runtime_error("pixmap: missing whitespace before payload");
    }
    c.take();  // exactly one whitespace byte separates header and payload

    const std::size_t need =
        static_cast<std::size_t>(img.width) * img.height * channels;
    if (bytes.size() - c.pos < need) {
        throw std::runtime_error("pixmap: truncated payload (need " + std::to_string(need) +
                                 " bytes, have " + std::to_string(bytes.size() - c.pos) + ")");
    }
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(c.pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(c.pos + need));
    return img;
}

std::vector<std::uint8_t> encode_pixmap(const ImageBuffer& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw std::invalid_argument("pixmap: channels must be 1 or 3");
    }
    if (img.pixels.size() !=
        static_cast<std::size_t>(img.width) * img.height * img.channels) {
        throw std::invalid_argument("pixmap: pixel count does not match dimensions");
    }
    std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                         std::to_string(img.width) + " " + std::to_string(img.height) +
                         "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

ImageBuffer read_pixmap_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open '" + path + "' for reading");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_pixmap(bytes);
}

void write_pixmap_file(const ImageBuffer& img, const std::string& path) {
    const auto bytes = encode_pixmap(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Tensor preprocess(const ImageBuffer& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("preprocess: target dims must be >= 1");
    }
    Tensor out({3, out_h, out_w});
    const float scale_y = static_cast<float>(img.height) / static_cast<float>(out_h);
    const float scale_x = static_cast<float>(img.width) / static_cast<float>(out_w);
    for (int y = 0; y < out_h; ++y) {
        // Half-pixel-centered source coordinate, clamped to the valid range.
        float sy = (static_cast<float>(y) + 0.5f) * scale_y - 0.5f;
        sy = std::clamp(sy, 0.0f, static_cast<float>(img.height - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const float fy = sy - static_cast<float>(y0);
        for (int x = 0; x < out_w; ++x) {
            float sx = (static_cast<float>(x) + 0.5f) * scale_x - 0.5f;
            sx = std::clamp(sx, 0.0f, static_cast<float>(img.width - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const float fx = sx - static_cast<float>(x0);
            for (int c = 0; c < 3; ++c) {
                const int sc = img.channels == 1 ? 0 : c;
                const float v00 = img.sample(y0, x0, sc);
                const float v01 = img.sample(y0, x1, sc);
                const float v10 = img.sample(y1, x0, sc);
                const float v11 = img.sample(y1, x1, sc);
                const float top = v00 + (v01 - v00) * fx;
                const float bot = v10 + (v11 - v10) * fx;
                out.at(c, y, x) = (top + (bot - top) * fy) / 255.0f;
            }
        }
    }
    return out;
}

DensityLevel count_to_level(int count, const LabelThresholds& t) {
    if (t.low_max >= t.medium_max) {
        throw std::invalid_argument("count_to_level: low_max must be < medium_max");
    }
    if (count <= t.low_max) return DensityLevel::low;
    if (count <= t.medium_max) return DensityLevel::medium;
    return DensityLevel::high;
}

namespace {

void add_gaussian(std::vector<float>& buf, int h, int w, float cx, float cy, float sigma,
                  float amp) {
    const float reach = 3.0f * sigma;
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + reach)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + reach)));
    const float inv = 1.0f / (2.0f * sigma * sigma);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const float dx = static_cast<float>(x) - cx;
            const float dy = static_cast<float>(y) - cy;
            buf[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-(dx * dx + dy * dy) * inv);
        }
    }
}

}  // namespace

std::vector<SynthImage> synth_generate(int per_class, int height, int width, Rng& rng,
                                       const SynthParams& params) {
    if (per_class < 1) {
        throw std::invalid_argument("synth_generate: per_class must be >= 1");
    }
    const LabelThresholds& t = params.thresholds;
    if (params.max_count <= t.medium_max) {
        throw std::invalid_argument("synth_generate: max_count must exceed medium_max");
    }
    const float base_r = params.base_radius_frac * static_cast<float>(std::min(height, width));
    if (base_r >= static_cast<float>(std::min(height, width)) || base_r < 0.5f) {
        throw std::invalid_argument("synth_generate: degenerate blob radius for image size");
    }

    std::vector<SynthImage> out;
    out.reserve(static_cast<std::size_t>(per_class) * 3);
    std::vector<float> buf(static_cast<std::size_t>(height) * width);

    for (int cls = 0; cls < 3; ++cls) {
        for (int k = 0; k < per_class; ++k) {
            int count = 0;
            switch (cls) {
                case 0: count = static_cast<int>(rng.bounded(t.low_max + 1)); break;
                case 1:
                    count = t.low_max + 1 +
                            static_cast<int>(rng.bounded(t.medium_max - t.low_max));
                    break;
                default:
                    count = t.medium_max + 1 +
                            static_cast<int>(rng.bounded(params.max_count - t.medium_max));
                    break;
            }

            // Low-frequency background.
            const float base = static_cast<float>(rng.uniform(35.0, 70.0));
            std::fill(buf.begin(), buf.end(), base);
            const int bg_blobs = 3 + static_cast<int>(rng.bounded(3));
            for (int b = 0; b < bg_blobs; ++b) {
                const float cx = static_cast<float>(rng.uniform(0.0, width));
                const float cy = static_cast<float>(rng.uniform(0.0, height));
                const float sigma = static_cast<float>(
                    rng.uniform(0.15, 0.45) * std::min(height, width));
                const float amp = static_cast<float>(rng.uniform(-18.0, 18.0));
                add_gaussian(buf, height, width, cx, cy, sigma, amp);
            }

            // "Heads": bright blobs, radius grows toward the image bottom.
            for (int b = 0; b < count; ++b) {
                const float cx = static_cast<float>(rng.uniform(0.0, width));
                const float cy = static_cast<float>(rng.uniform(0.0, height));
                const float perspective = 0.6f + 0.8f * cy / static_cast<float>(height);
                const float r = base_r * perspective *
                                static_cast<float>(rng.uniform(0.85, 1.15));
                const float amp = static_cast<float>(
                    rng.uniform(params.blob_min_amp, params.blob_max_amp));
                add_gaussian(buf, height, width, cx, cy, r / 1.6f, amp);
            }

            SynthImage img;
            img.count = count;
            img.label = count_to_level(count, t);
            img.image.width = width;
            img.image.height = height;
            img.image.channels = 1;
            img.image.pixels.resize(buf.size());
            for (std::size_t i = 0; i < buf.size(); ++i) {
                img.image.pixels[i] = static_cast<std::uint8_t>(
                    std::clamp(buf[i], 0.0f, 255.0f) + 0.5f);
            }
            out.push_back(std::move(img));
        }
    }
    return out;
}

std::vector<ManifestEntry> parse_manifest(const std::string& text) {
    std::vector<ManifestEntry> out;
    std::istringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
            line.pop_back();
        }
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": expected 'path<TAB>label'");
        }
        ManifestEntry e;
        e.path = line.substr(0, tab);
        const std::string label_str = line.substr(tab + 1);
        try {
            std::size_t used = 0;
            e.label = std::stoi(label_str, &used);
            if (used != label_str.size()) {
                throw std::invalid_argument("");
            }
        } catch (const std::exception&) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": malformed label '" + label_str + "'");
        }
        if (e.label < 0 || e.label > 2) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": unknown label " + std::to_string(e.label));
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("cannot open '" + path + "' for reading");
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_manifest(ss.str());
}

std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>> split_manifest(
    const std::vector<ManifestEntry>& manifest, double train_ratio, Rng& rng) {
    if (manifest.empty()) {
        throw std::invalid_argument("split_manifest: empty manifest");
    }
    if (train_ratio <= 0.0 || train_ratio >= 1.0) {
        throw std::invalid_argument("split_manifest: train_ratio must be in (0, 1)");
    }
    std::array<std::vector<std::size_t>, 3> by_class;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        by_class[static_cast<std::size_t>(manifest[i].label)].push_back(i);
    }

    // Largest-remainder allocation so the train side gets exactly
    // round(ratio * N), then per-class clamping to keep every class with
    // >= 2 samples present on both sides.
    const auto total_target = static_cast<std::size_t>(
        std::llround(train_ratio * static_cast<double>(manifest.size())));
    std::array<std::size_t, 3> take{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int c = 0; c < 3; ++c) {
        const double quota = train_ratio * static_cast<double>(by_class[c].size());
        take[c] = static_cast<std::size_t>(quota);
        frac[c] = quota - static_cast<double>(take[c]);
        assigned += take[c];
    }
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (frac[a] != frac[b]) return frac[a] > frac[b];
        return a < b;
    });
    for (int c : order) {
        if (assigned >= total_target) break;
        if (take[c] < by_class[c].size()) {
            ++take[c];
            ++assigned;
        }
    }
    for (int c = 0; c < 3; ++c) {
        if (by_class[c].size() >= 2) {
            take[c] = std::clamp<std::size_t>(take[c], 1, by_class[c].size() - 1);
        } else {
            take[c] = std::min(take[c], by_class[c].size());
        }
    }

    std::vector<ManifestEntry> train, test;
    for (int c = 0; c < 3; ++c) {
        auto& idxs = by_class[c];
        for (std::size_t i = idxs.size(); i > 1; --i) {
            std::swap(idxs[i - 1], idxs[rng.bounded(i)]);
        }
        for (std::size_t i = 0; i < idxs.size(); ++i) {
            (i < take[c] ? train : test).push_back(manifest[idxs[i]]);
        }
    }
    for (std::size_t i = train.size(); i > 1; --i) {
        std::swap(train[i - 1], train[rng.bounded(i)]);
    }
    for (std::size_t i = test.size(); i > 1; --i) {
        std::swap(test[i - 1], test[rng.bounded(i)]);
    }
    return {std::move(train), std::move(test)};
}

std::vector<Sample> load_samples(const std::vector<ManifestEntry>& manifest,
                                 const std::string& base_dir, int out_h, int out_w) {
    std::vector<Sample> out;
    out.reserve(manifest.size());
    for (const ManifestEntry& e : manifest) {
        std::filesystem::path p(e.path);
        if (p.is_relative() && !base_dir.empty()) {
            p = std::filesystem::path(base_dir) / p;
        }
        Sample s;
        s.x = preprocess(read_pixmap_file(p.string()), out_h, out_w);
        s.label = e.label;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace mcnet
