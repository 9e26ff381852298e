#include "mcnet/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace mcnet {

namespace {

std::int64_t checked_numel(const std::vector<int>& dims) {
    if (dims.empty() || dims.size() > 4) {
        throw std::invalid_argument("tensor rank must be 1..4, got " +
                                    std::to_string(dims.size()));
    }
    std::int64_t n = 1;
    for (int d : dims) {
        if (d < 1) {
            throw std::invalid_argument("tensor dims must be >= 1, got " + std::to_string(d));
        }
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : dims(std::move(shape)) {
    data.assign(static_cast<std::size_t>(checked_numel(dims)), 0.0f);
}

float& Tensor::at(int c, int h, int w) {
    return data[(static_cast<std::size_t>(c) * dims[1] + h) * dims[2] + w];
}

float Tensor::at(int c, int h, int w) const {
    return data[(static_cast<std::size_t>(c) * dims[1] + h) * dims[2] + w];
}

float& Tensor::at(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * dims[1] + c) * dims[2] + h) * dims[3] + w];
}

float Tensor::at(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * dims[1] + c) * dims[2] + h) * dims[3] + w];
}

int Tensor::batch() const { return rank() == 4 ? dims[0] : 1; }

int Tensor::channels() const {
    switch (rank()) {
        case 4: return dims[1];
        case 3: return dims[0];
        default: return dims[0];
    }
}

int Tensor::height() const {
    switch (rank()) {
        case 4: return dims[2];
        case 3: return dims[1];
        default: return 1;
    }
}

int Tensor::width() const {
    switch (rank()) {
        case 4: return dims[3];
        case 3: return dims[2];
        default: return 1;
    }
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
    // 53 mantissa bits of the raw stream -> [0, 1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::bounded(std::uint64_t n) {
    if (n == 0) {
        throw std::invalid_argument("bounded(0)");
    }
    // Multiply-shift range reduction; deterministic and unbiased enough
    // for shuffles and scene sampling.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = mag * std::sin(two_pi * u2);
    have_spare_ = true;
    return mag * std::cos(two_pi * u2);
}

Tensor tensor_zeros(const std::vector<int>& dims) { return Tensor(dims); }

Tensor tensor_random_init(const std::vector<int>& dims, int fan_in, Rng& rng) {
    if (fan_in < 1) {
        throw std::invalid_argument("fan_in must be >= 1");
    }
    Tensor t(dims);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) {
        v = static_cast<float>(rng.uniform(-bound, bound));
    }
    return t;
}

Tensor elementwise_add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("elementwise_add: shape mismatch");
    }
    Tensor out(a.dims);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        out.data[i] = a.data[i] + b.data[i];
    }
    return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
    if (parts.size() < 2) {
        throw std::invalid_argument("concat_channels: need at least 2 parts");
    }
    const Tensor& first = parts[0];
    const int rank = first.rank();
    if (rank != 3 && rank != 4) {
        throw std::invalid_argument("concat_channels: parts must be rank 3 or 4");
    }
    int total_c = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank || p.height() != first.height() || p.width() != first.width() ||
            p.batch() != first.batch()) {
            throw std::invalid_argument("concat_channels: spatial/batch dims mismatch");
        }
        total_c += p.channels();
    }
    std::vector<int> out_dims = first.dims;
    out_dims[rank == 4 ? 1 : 0] = total_c;
    Tensor out(out_dims);

    const int n_items = first.batch();
    const std::int64_t plane = static_cast<std::int64_t>(first.height()) * first.width();
    for (int n = 0; n < n_items; ++n) {
        std::int64_t dst_c = 0;
        for (const Tensor& p : parts) {
            const std::int64_t block = static_cast<std::int64_t>(p.channels()) * plane;
            const float* src = p.data.data() + static_cast<std::size_t>(n) * block;
            float* dst = out.data.data() +
                         (static_cast<std::size_t>(n) * total_c + dst_c) * plane;
            for (std::int64_t i = 0; i < block; ++i) {
                dst[i] = src[i];
            }
            dst_c += p.channels();
        }
    }
    return out;
}

Tensor slice_channels(const Tensor& x, int begin, int count) {
    const int rank = x.rank();
    if (rank != 3 && rank != 4) {
        throw std::invalid_argument("slice_channels: tensor must be rank 3 or 4");
    }
    if (begin < 0 || count < 1 || begin + count > x.channels()) {
        throw std::invalid_argument("slice_channels: channel range out of bounds");
    }
    std::vector<int> out_dims = x.dims;
    out_dims[rank == 4 ? 1 : 0] = count;
    Tensor out(out_dims);
    const std::int64_t plane = static_cast<std::int64_t>(x.height()) * x.width();
    for (int n = 0; n < x.batch(); ++n) {
        const float* src = x.data.data() +
                           (static_cast<std::size_t>(n) * x.channels() + begin) * plane;
        float* dst = out.data.data() + static_cast<std::size_t>(n) * count * plane;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(count) * plane; ++i) {
            dst[i] = src[i];
        }
    }
    return out;
}

}  // namespace mcnet
