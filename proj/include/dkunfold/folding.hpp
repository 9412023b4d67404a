#pragma once

// Forward model: line source -> modified response -> channel histogram -> Poisson counts.

#include "dkunfold/error.hpp"
#include "dkunfold/random.hpp"
#include "dkunfold/response.hpp"
#include "dkunfold/spectrum.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace dku {

struct GridSnap {
    std::size_t index = 0;
    double offset = 0.0; ///< requested energy minus snapped grid energy, keV
};

inline GridSnap snap_to_grid(const EnergyGrid& grid, double energy)
{
    const std::size_t i = grid.nearest_index(energy);
    return {i, energy - grid.energy(i)};
}

inline std::vector<GridSnap> snap_lines(const LineList& lines, const EnergyGrid& grid)
{
    std::vector<GridSnap> out;
    out.reserve(lines.size());
    for (const auto& l : lines)
        out.push_back(snap_to_grid(grid, l.energy));
    return out;
}

/// M(E_i) = sum_n a_n * R_hat(E_i, E_n), with E_n snapped to the nearest column.
inline ContinuousSpectrum fold(const LineList& lines, const ResponseMatrix& rhat)
{
    require(rhat.size() > 0, ErrorCode::invalid_argument, "cannot fold through an empty grid");
    auto out = ContinuousSpectrum::zeros(rhat.grid);
    for (const auto& line : lines) {
        require(line.amplitude >= 0.0, ErrorCode::invalid_argument, "line amplitudes must be nonnegative");
        const auto col = static_cast<Eigen::Index>(snap_to_grid(rhat.grid, line.energy).index);
        for (Eigen::Index i = 0; i < rhat.values.rows(); ++i)
            out.density[static_cast<std::size_t>(i)] += line.amplitude * rhat.values(i, col);
    }
    return out;
}

/// Integrates a grid density into channels of width epsilon starting at
/// origin. Channel edges must coincide with grid cell edges, which makes the
/// midpoint integral exact: each channel sums epsilon/spacing whole cells.
inline ChannelHistogram channelize(const ContinuousSpectrum& spectrum, double epsilon, double origin)
{
    const EnergyGrid& g = spectrum.grid;
    const double h = g.spacing();
    const double ratio = epsilon / h;
    const double cells = std::round(ratio);
    require(cells >= 1.0 && std::abs(ratio - cells) <= 1e-9 * cells, ErrorCode::invalid_argument,
            "channel width must be an integer multiple of the grid spacing");
    const double start_pos = (origin - g.lower_edge()) / h;
    const double start = std::round(start_pos);
    require(start >= 0.0 && std::abs(start_pos - start) <= 1e-9 * std::max(1.0, start), ErrorCode::invalid_argument,
            "channel origin must lie on a grid cell edge inside the grid");

    const auto per = static_cast<std::size_t>(cells);
    const auto first = static_cast<std::size_t>(start);
    require(first < g.size(), ErrorCode::invalid_argument, "channel origin lies beyond the grid");
    const std::size_t n_channels = (g.size() - first) / per;
    require(n_channels >= 8, ErrorCode::invalid_argument, "grid too short for 8 channels at this width");

    ChannelHistogram hist;
    hist.epsilon = epsilon;
    hist.origin = origin;
    hist.mode = HistogramMode::expected;
    hist.counts.assign(n_channels, 0.0);
    for (std::size_t k = 0; k < n_channels; ++k) {
        double s = 0.0;
        for (std::size_t c = 0; c < per; ++c)
            s += spectrum.density[first + k * per + c];
        hist.counts[k] = s * h;
    }
    return hist;
}

/// Rescales the expectation to total_counts and draws each channel
/// independently from a Poisson law (see random.hpp for the algorithm).
inline ChannelHistogram poisson_realize(const ChannelHistogram& expected, std::uint64_t total_counts, std::uint64_t seed)
{
    require(expected.mode == HistogramMode::expected, ErrorCode::invalid_argument,
            "poisson realization needs an expected-mode histogram");
    require(total_counts > 0, ErrorCode::invalid_argument, "total counts must be positive");
    const double mass = expected.total();
    require(mass > 0.0 && std::isfinite(mass), ErrorCode::invalid_argument,
            "cannot realize a histogram with zero expected mass");
    const double scale = static_cast<double>(total_counts) / mass;
    Rng rng(seed);
    ChannelHistogram out = expected;
    out.mode = HistogramMode::realized;
    for (auto& c : out.counts)
        c = static_cast<double>(rng.poisson(c * scale));
    return out;
}

} // namespace dku
