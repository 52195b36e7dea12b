#pragma once

#include "smartcal/dataio.hpp"
#include "smartcal/rng.hpp"

#include <cmath>
#include <filesystem>
#include <string>

namespace testing {

inline std::filesystem::path scratch(const std::string &name)
{
    const std::filesystem::path dir = std::filesystem::path(SMARTCAL_TEST_TMP);
    std::filesystem::create_directories(dir);
    return dir / name;
}

/// Gaussian logits with labels drawn uniformly.
inline smartcal::LogitSet random_set(std::size_t n, std::size_t k, std::uint64_t seed, double scale = 2.0)
{
    smartcal::Rng rng(seed);
    smartcal::LogitSet s;
    s.n = n;
    s.k = k;
    for (std::size_t i = 0; i < n * k; ++i)
        s.logits.push_back(static_cast<float>(scale * rng.normal()));
    for (std::size_t i = 0; i < n; ++i)
        s.labels.push_back(static_cast<std::uint32_t>(rng.below(k)));
    return s;
}

inline double rel_err(double a, double b)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

} // namespace testing
