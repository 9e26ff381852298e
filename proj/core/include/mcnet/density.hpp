#pragma once

namespace mcnet {

/// Three-way crowd density label.
enum class DensityLevel : int { low = 0, medium = 1, high = 2 };

inline const char* density_level_name(DensityLevel level) {
    switch (level) {
        case DensityLevel::low: return "low";
        case DensityLevel::medium: return "medium";
        case DensityLevel::high: return "high";
    }
    return "?";
}

}  // namespace mcnet
