#pragma once

// Discretised transfer operators. A ResponseMatrix column j is the density
// (1/keV) over recorded/exit energy produced by one photon at grid energy j.

#include "dkunfold/error.hpp"
#include "dkunfold/grid.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

namespace dku {

inline constexpr double electron_rest_energy_kev = 511.0;
inline constexpr double fwhm_to_sigma = 0.42466090014400953; // 1 / (2 sqrt(2 ln 2))

struct ResponseMatrix {
    EnergyGrid grid;
    Eigen::MatrixXd values; // (recorded energy, source energy)

    std::size_t size() const noexcept { return grid.size(); }

    double column_mass(std::size_t j) const
    {
        return values.col(static_cast<Eigen::Index>(j)).sum() * grid.spacing();
    }

    double max_column_mass() const
    {
        double m = 0.0;
        for (std::size_t j = 0; j < size(); ++j)
            m = std::max(m, column_mass(j));
        return m;
    }

    bool nonnegative() const { return (values.array() >= 0.0).all(); }
};

struct DetectorModel {
    double fwhm_a = 2.0;  ///< keV^(1/2)
    double fwhm_b = 0.0;  ///< dimensionless
    double photofraction = 0.6;
    double compton_fraction = 0.4;
    bool escape_peaks = false;
    double single_escape_fraction = 0.0;
    double double_escape_fraction = 0.0;

    double fwhm(double e) const noexcept { return fwhm_a * std::sqrt(std::max(e, 0.0)) + fwhm_b * e; }

    void validate() const
    {
        require(fwhm_a >= 0.0 && fwhm_b >= 0.0 && fwhm_a + fwhm_b > 0.0, ErrorCode::invalid_argument,
                "detector resolution coefficients must be nonnegative and not both zero");
        require(photofraction > 0.0 && photofraction <= 1.0, ErrorCode::invalid_argument,
                "photofraction must lie in (0, 1]");
        require(compton_fraction >= 0.0, ErrorCode::invalid_argument, "compton fraction must be >= 0");
        require(single_escape_fraction >= 0.0 && double_escape_fraction >= 0.0, ErrorCode::invalid_argument,
                "escape fractions must be >= 0");
        const double escapes = escape_peaks ? single_escape_fraction + double_escape_fraction : 0.0;
        require(photofraction + compton_fraction + escapes <= 1.0 + 1e-12, ErrorCode::invalid_argument,
                "detector fractions sum above one");
    }
};

/// Upper end of the Compton continuum for a photon of energy e (keV).
inline double compton_edge(double e) noexcept
{
    return e * (1.0 - 1.0 / (1.0 + 2.0 * e / electron_rest_energy_kev));
}

struct MediumModel {
    std::function<double(double)> transmission = [](double) { return 1.0; };
    double scatter_fraction = 0.0;

    static MediumModel vacuum() { return {}; }

    static MediumModel constant(double t, double scatter)
    {
        return {[t](double) { return t; }, scatter};
    }

    /// t(E) = t0 * exp(-scale / E)
    static MediumModel attenuating(double t0, double scale_kev, double scatter)
    {
        return {[t0, scale_kev](double e) { return t0 * std::exp(-scale_kev / std::max(e, 1e-300)); }, scatter};
    }
};

namespace detail {

// Probability mass of N(0,1) on [a, b], stable in both tails.
inline double normal_mass(double a, double b)
{
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    if (a >= 0.0)
        return 0.5 * (std::erfc(a * inv_sqrt2) - std::erfc(b * inv_sqrt2));
    if (b <= 0.0)
        return 0.5 * (std::erfc(-b * inv_sqrt2) - std::erfc(-a * inv_sqrt2));
    return 1.0 - 0.5 * std::erfc(-a * inv_sqrt2) - 0.5 * std::erfc(b * inv_sqrt2);
}

// Adds mass * Gaussian(centre, sigma) as cell averages into column col.
inline void add_gaussian(Eigen::MatrixXd& m, const EnergyGrid& g, Eigen::Index col, double centre,
                         double sigma, double mass)
{
    const double h = g.spacing();
    const double reach = 12.0 * sigma + h;
    const double lo_e = std::max(centre - reach, g.lower_edge());
    const double hi_e = std::min(centre + reach, g.upper_edge());
    if (hi_e <= lo_e)
        return;
    const auto first = static_cast<Eigen::Index>(std::floor((lo_e - g.lower_edge()) / h));
    const auto last = std::min(static_cast<Eigen::Index>(std::ceil((hi_e - g.lower_edge()) / h)),
                               static_cast<Eigen::Index>(g.size()));
    for (Eigen::Index i = std::max<Eigen::Index>(first, 0); i < last; ++i) {
        const double e = g.energy(static_cast<std::size_t>(i));
        const double a = (e - 0.5 * h - centre) / sigma;
        const double b = (e + 0.5 * h - centre) / sigma;
        m(i, col) += mass * normal_mass(a, b) / h;
    }
}

// Adds a flat density of total mass `mass` on [lo, hi] as cell averages.
inline void add_flat(Eigen::MatrixXd& m, const EnergyGrid& g, Eigen::Index col, double lo, double hi, double mass)
{
    if (!(hi > lo) || mass == 0.0)
        return;
    const double h = g.spacing();
    const double height = mass / (hi - lo);
    const auto first = std::max<Eigen::Index>(static_cast<Eigen::Index>(std::floor((lo - g.lower_edge()) / h)), 0);
    const auto last = std::min(static_cast<Eigen::Index>(std::ceil((hi - g.lower_edge()) / h)),
                               static_cast<Eigen::Index>(g.size()));
    for (Eigen::Index i = first; i < last; ++i) {
        const double e = g.energy(static_cast<std::size_t>(i));
        const double overlap = std::min(hi, e + 0.5 * h) - std::max(lo, e - 0.5 * h);
        if (overlap > 0.0)
            m(i, col) += height * overlap / h;
    }
}

} // namespace detail

/// Gaussian photopeak plus flat Compton shelf (and optional escape peaks),
/// integrated exactly over each grid cell. The shelf starts at
/// max(0, lower grid edge) so that its mass stays on the grid.
inline ResponseMatrix detector_response_matrix(const DetectorModel& model, const EnergyGrid& grid)
{
    model.validate();
    require(model.fwhm(grid.e_min()) > 0.0, ErrorCode::invalid_argument,
            "detector FWHM must be positive across the grid");
    require(grid.spacing() <= 0.5 * model.fwhm(grid.e_min()), ErrorCode::grid_too_coarse,
            "grid spacing exceeds half the photopeak FWHM at e_min; photopeaks would alias");

    const auto n = static_cast<Eigen::Index>(grid.size());
    ResponseMatrix r{grid, Eigen::MatrixXd::Zero(n, n)};
    const double shelf_lo = std::max(0.0, grid.lower_edge());
    for (Eigen::Index j = 0; j < n; ++j) {
        const double v = grid.energy(static_cast<std::size_t>(j));
        detail::add_gaussian(r.values, grid, j, v, model.fwhm(v) * fwhm_to_sigma, model.photofraction);
        detail::add_flat(r.values, grid, j, shelf_lo, compton_edge(v), model.compton_fraction);
        if (model.escape_peaks && v > 2.0 * electron_rest_energy_kev) {
            for (auto [shift, frac] : {std::pair{electron_rest_energy_kev, model.single_escape_fraction},
                                       std::pair{2.0 * electron_rest_energy_kev, model.double_escape_fraction}}) {
                const double c = v - shift;
                detail::add_gaussian(r.values, grid, j, c, model.fwhm(c) * fwhm_to_sigma, frac);
            }
        }
    }
    return r;
}

/// Unscattered delta column plus a flat downshifted continuum on [0, U_j).
inline ResponseMatrix medium_kernel(const MediumModel& model, const EnergyGrid& grid)
{
    require(model.scatter_fraction >= 0.0 && model.scatter_fraction < 1.0, ErrorCode::invalid_argument,
            "scatter fraction must lie in [0, 1)");
    require(static_cast<bool>(model.transmission), ErrorCode::invalid_argument, "medium transmission is unset");
    const auto n = static_cast<Eigen::Index>(grid.size());
    const double h = grid.spacing();
    ResponseMatrix p{grid, Eigen::MatrixXd::Zero(n, n)};
    const double lo = std::max(0.0, grid.lower_edge());
    for (Eigen::Index j = 0; j < n; ++j) {
        const double u = grid.energy(static_cast<std::size_t>(j));
        const double t = model.transmission(u);
        require(t > 0.0 && t <= 1.0, ErrorCode::invalid_argument,
                "medium transmission must lie in (0, 1] on the grid");
        p.values(j, j) += t * (1.0 - model.scatter_fraction) / h;
        detail::add_flat(p.values, grid, j, lo, u, t * model.scatter_fraction);
    }
    return p;
}

/// Composition R_hat = R * P * spacing (midpoint quadrature over the
/// intermediate energy). Columns of P that vanish below the diagonal and are
/// constant above it (a flat down-scatter continuum) are applied through
/// running sums of R's columns; any other column uses a dense product.
inline ResponseMatrix modified_response(const ResponseMatrix& r, const ResponseMatrix& p)
{
    require(r.grid == p.grid, ErrorCode::grid_mismatch, "response and medium grids differ");
    const double h = r.grid.spacing();
    const Eigen::Index n = p.values.rows();
    ResponseMatrix out{r.grid, Eigen::MatrixXd(n, n)};
    Eigen::VectorXd prefix = Eigen::VectorXd::Zero(n); // sum of R columns 0 .. j-1
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto pj = p.values.col(j);
        const bool upper = (pj.tail(n - j - 1).array() == 0.0).all();
        const double c = j > 0 ? pj(0) : 0.0;
        if (upper && (pj.head(j).array() == c).all())
            out.values.col(j) = h * (c * prefix + pj(j) * r.values.col(j));
        else if (upper)
            out.values.col(j).noalias() = h * (r.values.leftCols(j + 1) * pj.head(j + 1));
        else
            out.values.col(j).noalias() = h * (r.values * pj);
        prefix += r.values.col(j);
    }
    return out;
}

// Text format: "response_matrix e_min=<> e_max=<> n_points=<>" followed by
// n_points rows of n_points values (%.17g), row = recorded energy.

inline void write_response(std::ostream& out, const ResponseMatrix& m)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", m.grid.e_min());
    out << "response_matrix e_min=" << buf;
    std::snprintf(buf, sizeof buf, "%.17g", m.grid.e_max());
    out << " e_max=" << buf << " n_points=" << m.grid.size() << '\n';
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", m.values(i, j));
            if (j)
                out << ' ';
            out << buf;
        }
        out << '\n';
    }
}

inline ResponseMatrix read_response(std::istream& in)
{
    std::string header;
    require(static_cast<bool>(std::getline(in, header)), ErrorCode::parse_error, "empty response file");
    std::istringstream hs(header);
    std::string tag, a, b, c;
    hs >> tag >> a >> b >> c;
    require(tag == "response_matrix" && a.rfind("e_min=", 0) == 0 && b.rfind("e_max=", 0) == 0 &&
                c.rfind("n_points=", 0) == 0,
            ErrorCode::parse_error, "malformed response header '" + header + "'");
    const double e_min = std::strtod(a.c_str() + 6, nullptr);
    const double e_max = std::strtod(b.c_str() + 6, nullptr);
    const auto n = static_cast<std::size_t>(std::stoull(c.substr(9)));
    ResponseMatrix m{EnergyGrid(e_min, e_max, n), Eigen::MatrixXd(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))};
    std::string tok;
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
            require(static_cast<bool>(in >> tok), ErrorCode::parse_error, "response matrix truncated");
            char* end = nullptr;
            m.values(i, j) = std::strtod(tok.c_str(), &end);
            require(end && *end == '\0', ErrorCode::parse_error, "bad response value '" + tok + "'");
        }
    }
    return m;
}

} // namespace dku
