#pragma once

#include "dkunfold/error.hpp"

#include <cmath>
#include <cstddef>
#include <string>

namespace dku {

/// Uniform energy grid. Point i sits at e_min + i*spacing and represents the
/// quadrature cell [point - spacing/2, point + spacing/2).
class EnergyGrid {
public:
    EnergyGrid() = default;

    EnergyGrid(double e_min, double e_max, std::size_t n_points)
        : e_min_(e_min), e_max_(e_max), n_points_(n_points)
    {
        require(std::isfinite(e_min) && std::isfinite(e_max), ErrorCode::invalid_argument,
                "energy grid bounds must be finite");
        require(e_min >= 0.0, ErrorCode::invalid_argument, "energy grid requires e_min >= 0");
        require(e_max > e_min, ErrorCode::invalid_argument, "energy grid requires e_max > e_min");
        require(n_points >= 2, ErrorCode::invalid_argument, "energy grid requires at least 2 points");
        spacing_ = (e_max - e_min) / static_cast<double>(n_points - 1);
    }

    static EnergyGrid from_spacing(double e_min, double spacing, std::size_t n_points)
    {
        require(spacing > 0.0, ErrorCode::invalid_argument, "grid spacing must be positive");
        require(n_points >= 2, ErrorCode::invalid_argument, "energy grid requires at least 2 points");
        return EnergyGrid(e_min, e_min + spacing * static_cast<double>(n_points - 1), n_points);
    }

    double e_min() const noexcept { return e_min_; }
    double e_max() const noexcept { return e_max_; }
    std::size_t size() const noexcept { return n_points_; }
    double spacing() const noexcept { return spacing_; }

    double energy(std::size_t i) const noexcept { return e_min_ + spacing_ * static_cast<double>(i); }

    /// Lower edge of the first quadrature cell.
    double lower_edge() const noexcept { return e_min_ - 0.5 * spacing_; }
    double upper_edge() const noexcept { return e_max_ + 0.5 * spacing_; }

    bool contains(double e) const noexcept { return e >= e_min_ && e <= e_max_; }

    /// Nearest grid index; exact midpoints go to the lower index.
    std::size_t nearest_index(double e) const
    {
        require(contains(e), ErrorCode::out_of_range,
                "energy " + std::to_string(e) + " keV lies outside the grid");
        const double pos = (e - e_min_) / spacing_;
        auto idx = static_cast<std::size_t>(std::floor(pos));
        if (pos - static_cast<double>(idx) > 0.5)
            ++idx;
        return idx < n_points_ ? idx : n_points_ - 1;
    }

    friend bool operator==(const EnergyGrid& a, const EnergyGrid& b) noexcept
    {
        return a.e_min_ == b.e_min_ && a.e_max_ == b.e_max_ && a.n_points_ == b.n_points_;
    }

private:
    double e_min_ = 0.0;
    double e_max_ = 1.0;
    std::size_t n_points_ = 2;
    double spacing_ = 1.0;
};

} // namespace dku
