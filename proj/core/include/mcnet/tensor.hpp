#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mcnet {

/// Dense rank-1..4 float32 array in channels-first order (N x C x H x W or
/// C x H x W), row-major contiguous storage.
struct Tensor {
    std::vector<int> dims;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape);

    int rank() const { return static_cast<int>(dims.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    // Channels-first accessors. Rank-3 (C,H,W) and rank-4 (N,C,H,W) are the
    // layouts every layer op uses; lower ranks are indexed flat.
    float& at(int c, int h, int w);
    float at(int c, int h, int w) const;
    float& at(int n, int c, int h, int w);
    float at(int n, int c, int h, int w) const;

    float& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // Spatial/channel getters that treat rank-3 as batch size 1.
    int batch() const;
    int channels() const;
    int height() const;
    int width() const;

    bool same_shape(const Tensor& other) const { return dims == other.dims; }
};

/// Seeded deterministic generator. The engine is std::mt19937_64 (bit-exact
/// per the standard); all draws are built on the raw 64-bit stream because
/// std distributions are not portable across library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n). n must be >= 1.
    std::uint64_t bounded(std::uint64_t n);
    /// Standard normal via Box-Muller on the portable uniform stream.
    double normal();

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

Tensor tensor_zeros(const std::vector<int>& dims);

/// Uniform init in [-b, b], b = sqrt(6 / fan_in).
Tensor tensor_random_init(const std::vector<int>& dims, int fan_in, Rng& rng);

Tensor elementwise_add(const Tensor& a, const Tensor& b);

/// Concatenate along the channel axis. Parts must agree on spatial dims (and
/// batch dim when present); part k occupies a contiguous channel block.
Tensor concat_channels(std::span<const Tensor> parts);

/// Extract channels [begin, begin+count) as a tensor of the same rank.
Tensor slice_channels(const Tensor& x, int begin, int count);

}  // namespace mcnet
