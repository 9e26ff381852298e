#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcnet/density.hpp"
#include "mcnet/tensor.hpp"
#include "mcnet/training.hpp"

namespace mcnet {

/// 8-bit image, row-major, interleaved samples; 1 (gray) or 3 (RGB) channels.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t sample(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

/// Binary portable pixmap: P5 (gray) or P6 (RGB), maxval 255, '#' comments
/// allowed between header tokens.
ImageBuffer decode_pixmap(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pixmap(const ImageBuffer& img);

ImageBuffer read_pixmap_file(const std::string& path);
void write_pixmap_file(const ImageBuffer& img, const std::string& path);

/// Bilinear resize (half-pixel-centered sampling) to out_h x out_w, samples
/// divided by 255; grayscale inputs are replicated to 3 channels. Output is
/// a 3 x out_h x out_w tensor with values in [0, 1].
Tensor preprocess(const ImageBuffer& img, int out_h = 227, int out_w = 227);

/// Head-count bands for the three density levels: count <= low_max -> low,
/// count <= medium_max -> medium, else high.
struct LabelThresholds {
    int low_max = 6;
    int medium_max = 12;
};

DensityLevel count_to_level(int count, const LabelThresholds& t);

struct SynthParams {
    LabelThresholds thresholds{};  // defaults follow the SH_METRO bands
    int max_count = 25;
    /// Blob ("head") base radius as a fraction of min(h, w).
    float base_radius_frac = 0.07f;
    float blob_min_amp = 110.0f;
    float blob_max_amp = 180.0f;
};

struct SynthImage {
    ImageBuffer image;  // grayscale
    int count = 0;
    DensityLevel label = DensityLevel::low;
};

/// Render per_class scenes per density level: randomly placed, partially
/// overlapping bright blobs with perspective-scaled radii over a
/// low-frequency noise background. Counts are drawn per class from the
/// disjoint threshold bands, so labels are exact by construction.
/// Deterministic per rng seed.
std::vector<SynthImage> synth_generate(int per_class, int height, int width, Rng& rng,
                                       const SynthParams& params = {});

struct ManifestEntry {
    std::string path;
    int label = 0;
};

/// Manifest text: one "path<TAB>label" per line, '#' comments. Malformed
/// lines are reported with their line number.
std::vector<ManifestEntry> parse_manifest(const std::string& text);
std::vector<ManifestEntry> load_manifest(const std::string& path);

/// Shuffled, per-class stratified split. Every class keeps at least one
/// sample on each side when it has >= 2 samples. Deterministic per seed.
std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>> split_manifest(
    const std::vector<ManifestEntry>& manifest, double train_ratio, Rng& rng);

/// Decode + preprocess every manifest entry. Relative paths resolve against
/// the manifest file's directory.
std::vector<Sample> load_samples(const std::vector<ManifestEntry>& manifest,
                                 const std::string& base_dir, int out_h, int out_w);

}  // namespace mcnet
