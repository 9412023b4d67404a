#pragma once

// Matched interpolation/derivative filter pairs.
//
// A pair (d0, d1) is stored on `support` taps centred on zero: tap k sits at
// offset k - (support-1)/2, so odd supports use integer offsets and even
// supports use half-integer offsets (a half-sample pair). Filtering follows the
// convolution convention y(x) = sum_k taps[k] * f(x - offset_k).

#include "dkunfold/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace dku {

struct KernelPair {
    std::vector<double> d0; ///< smoothing / interpolation taps
    std::vector<double> d1; ///< derivative taps, units 1/sample
    std::string label;

    std::size_t support() const noexcept { return d0.size(); }
    bool half_sample() const noexcept { return support() % 2 == 0; }

    double offset(std::size_t k) const noexcept
    {
        return static_cast<double>(k) - 0.5 * static_cast<double>(support() - 1);
    }

    std::vector<double> offsets() const
    {
        std::vector<double> out(support());
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] = offset(k);
        return out;
    }
};

enum class Weighting { uniform, raised_cosine };

inline std::string to_string(Weighting w)
{
    return w == Weighting::uniform ? "uniform" : "raised-cosine";
}

inline Weighting parse_weighting(const std::string& s)
{
    if (s == "uniform")
        return Weighting::uniform;
    if (s == "raised-cosine" || s == "raised_cosine")
        return Weighting::raised_cosine;
    throw Error(ErrorCode::parse_error, "unknown weighting '" + s + "'");
}

struct DesignSpec {
    std::size_t support = 5;
    double band_edge = 0.8 * std::numbers::pi; ///< radians/sample
    Weighting weighting = Weighting::uniform;
    std::size_t grid_points = 1024;

    void validate() const
    {
        require(support >= 3, ErrorCode::invalid_argument, "kernel support must be >= 3");
        require(band_edge > 0.0 && band_edge <= std::numbers::pi, ErrorCode::invalid_argument,
                "band edge must lie in (0, pi]");
        require(grid_points >= 8 * support, ErrorCode::invalid_argument,
                "frequency grid needs at least 8 points per tap");
    }

    double frequency(std::size_t k) const noexcept
    {
        return band_edge * static_cast<double>(k) / static_cast<double>(grid_points - 1);
    }

    double weight(double omega) const noexcept
    {
        if (weighting == Weighting::uniform)
            return 1.0;
        return 0.5 * (1.0 + std::cos(std::numbers::pi * omega / band_edge));
    }
};

/// sum_k taps[k] * exp(-i * omega * offset_k) with centred offsets.
inline std::complex<double> frequency_response(std::span<const double> taps, double omega)
{
    const double centre = 0.5 * static_cast<double>(taps.size() - 1);
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t k = 0; k < taps.size(); ++k) {
        const double phase = -omega * (static_cast<double>(k) - centre);
        acc += taps[k] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
    return acc;
}

/// |i*omega*D0(omega) - D1(omega)|^2 at a single frequency.
inline double matching_integrand(const KernelPair& pair, double omega)
{
    const auto lhs = std::complex<double>(0.0, omega) * frequency_response(pair.d0, omega);
    return std::norm(lhs - frequency_response(pair.d1, omega));
}

inline double matching_error(const KernelPair& pair, const DesignSpec& spec)
{
    spec.validate();
    require(pair.d0.size() == pair.d1.size(), ErrorCode::invalid_argument,
            "kernel pair taps differ in length");
    require(pair.support() == spec.support, ErrorCode::invalid_argument,
            "kernel support " + std::to_string(pair.support()) + " does not match design support " +
                std::to_string(spec.support));
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < spec.grid_points; ++k) {
        const double w = spec.frequency(k);
        const double weight = spec.weight(w);
        num += weight * matching_integrand(pair, w);
        den += weight;
    }
    return den > 0.0 ? num / den : 0.0;
}

struct PairInvariantReport {
    double symmetry = 0.0;     ///< max |d0[k] - d0[S-1-k]|
    double antisymmetry = 0.0; ///< max |d1[k] + d1[S-1-k]|
    double dc = 0.0;           ///< |sum d0 - 1|
    double moment = 0.0;       ///< |sum(-offset * d1) - 1|

    bool holds(double tol) const noexcept
    {
        return symmetry <= tol && antisymmetry <= tol && dc <= tol && moment <= tol;
    }
};

inline PairInvariantReport check_invariants(const KernelPair& pair)
{
    PairInvariantReport r;
    const std::size_t s = pair.support();
    double sum0 = 0.0;
    double moment = 0.0;
    for (std::size_t k = 0; k < s; ++k) {
        r.symmetry = std::max(r.symmetry, std::abs(pair.d0[k] - pair.d0[s - 1 - k]));
        r.antisymmetry = std::max(r.antisymmetry, std::abs(pair.d1[k] + pair.d1[s - 1 - k]));
        sum0 += pair.d0[k];
        moment += -pair.offset(k) * pair.d1[k];
    }
    r.dc = std::abs(sum0 - 1.0);
    r.moment = std::abs(moment - 1.0);
    return r;
}

namespace detail {

// Rebuild full tap vectors from the non-negative-offset half.
inline KernelPair expand_half(std::size_t support, const std::vector<double>& d0_half,
                              const std::vector<double>& d1_half, std::string label)
{
    KernelPair pair;
    pair.d0.assign(support, 0.0);
    pair.d1.assign(support, 0.0);
    pair.label = std::move(label);
    const std::size_t first = support / 2; // index of the first tap with offset >= 0
    for (std::size_t h = 0; h < d0_half.size(); ++h) {
        pair.d0[first + h] = d0_half[h];
        pair.d0[support - 1 - first - h] = d0_half[h];
    }
    for (std::size_t h = 0; h < d1_half.size(); ++h) {
        const std::size_t pos = support - d1_half.size() + h;
        pair.d1[pos] = d1_half[h];
        pair.d1[support - 1 - pos] = -d1_half[h];
    }
    return pair;
}

} // namespace detail

/// Default catalog name for a designed pair of the given support.
inline std::string design_label(std::size_t support)
{
    return "DK" + std::to_string(support);
}

/// Equality-constrained least squares for the matched pair. The residual
/// i*w*D0(w) - D1(w) is purely imaginary for symmetric/antisymmetric taps, and
/// its imaginary part is linear in the free half-taps:
///   r(w) = w * sum_h m_h u_h cos(o_h w) + 2 sum_h v_h sin(o_h w)
/// with u the d0 half-taps (multiplicity m_h = 1 at offset 0, else 2) and v the
/// d1 taps at positive offsets. The two linear constraints (DC and unit first
/// moment) are eliminated by substitution and the remainder solved by
/// column-pivoted QR.
inline KernelPair design_pair(const DesignSpec& spec)
{
    spec.validate();
    const std::size_t s = spec.support;
    const bool odd = s % 2 == 1;
    const std::size_t n_u = (s + 1) / 2; // d0 half including offset 0 when odd
    const std::size_t n_v = s / 2;       // d1 taps at positive offsets

    std::vector<double> u_off(n_u), u_mult(n_u), v_off(n_v);
    for (std::size_t h = 0; h < n_u; ++h) {
        u_off[h] = odd ? static_cast<double>(h) : static_cast<double>(h) + 0.5;
        u_mult[h] = (odd && h == 0) ? 1.0 : 2.0;
    }
    for (std::size_t h = 0; h < n_v; ++h)
        v_off[h] = odd ? static_cast<double>(h + 1) : static_cast<double>(h) + 0.5;

    const std::size_t n = n_u + n_v;
    const auto g = static_cast<Eigen::Index>(spec.grid_points);
    Eigen::MatrixXd a(g, static_cast<Eigen::Index>(n));
    double weight_sum = 0.0;
    for (Eigen::Index k = 0; k < g; ++k) {
        const double w = spec.frequency(static_cast<std::size_t>(k));
        const double sw = std::sqrt(spec.weight(w));
        weight_sum += spec.weight(w);
        for (std::size_t h = 0; h < n_u; ++h)
            a(k, static_cast<Eigen::Index>(h)) = sw * w * u_mult[h] * std::cos(u_off[h] * w);
        for (std::size_t h = 0; h < n_v; ++h)
            a(k, static_cast<Eigen::Index>(n_u + h)) = sw * 2.0 * std::sin(v_off[h] * w);
    }
    require(weight_sum > 0.0, ErrorCode::internal_error, "design weights vanish on the band");

    // Constraints: sum_h m_h u_h = 1 and -2 sum_h o_h v_h = 1. Eliminate u_0 and v_0.
    // x = x_p + Z y
    Eigen::VectorXd xp = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    xp(0) = 1.0 / u_mult[0];
    xp(static_cast<Eigen::Index>(n_u)) = 1.0 / (-2.0 * v_off[0]);
    const std::size_t n_free = n - 2;
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_free));
    std::size_t col = 0;
    for (std::size_t h = 1; h < n_u; ++h, ++col) {
        z(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(col)) = 1.0;
        z(0, static_cast<Eigen::Index>(col)) = -u_mult[h] / u_mult[0];
    }
    for (std::size_t h = 1; h < n_v; ++h, ++col) {
        z(static_cast<Eigen::Index>(n_u + h), static_cast<Eigen::Index>(col)) = 1.0;
        z(static_cast<Eigen::Index>(n_u), static_cast<Eigen::Index>(col)) = -v_off[h] / v_off[0];
    }

    Eigen::VectorXd x = xp;
    if (n_free > 0) {
        const Eigen::MatrixXd az = a * z;
        const Eigen::VectorXd rhs = -(a * xp);
        const Eigen::VectorXd y = az.colPivHouseholderQr().solve(rhs);
        x += z * y;
    }
    require(x.allFinite(), ErrorCode::internal_error, "kernel design solve produced non-finite taps");

    std::vector<double> u(n_u), v(n_v);
    for (std::size_t h = 0; h < n_u; ++h)
        u[h] = x(static_cast<Eigen::Index>(h));
    for (std::size_t h = 0; h < n_v; ++h)
        v[h] = x(static_cast<Eigen::Index>(n_u + h));

    KernelPair pair = detail::expand_half(s, u, v, design_label(s));
    require(check_invariants(pair).holds(1e-12), ErrorCode::internal_error,
            "designed kernel pair violates its normalisation");
    return pair;
}

/// Sampled Gaussian and its derivative, renormalised to unit DC gain and unit
/// ramp response.
inline KernelPair sampled_gaussian_pair(double sigma, std::size_t support)
{
    require(support >= 3, ErrorCode::invalid_argument, "kernel support must be >= 3");
    require(sigma > 0.0 && std::isfinite(sigma), ErrorCode::invalid_argument, "gaussian sigma must be positive");
    KernelPair pair;
    pair.label = "gauss-" + std::to_string(support);
    pair.d0.resize(support);
    pair.d1.resize(support);
    // Fill from the centre outwards so mirrored taps are computed from identical inputs.
    for (std::size_t k = 0; k < support; ++k) {
        const double o = std::abs(pair.offset(k));
        const double g = std::exp(-o * o / (2.0 * sigma * sigma));
        pair.d0[k] = g;
        const double d = o * g / (sigma * sigma);
        pair.d1[k] = pair.offset(k) < 0.0 ? d : -d;
    }
    double sum0 = 0.0;
    double moment = 0.0;
    for (std::size_t k = 0; k < support / 2; ++k) {
        sum0 += 2.0 * pair.d0[k];
        moment += 2.0 * (-pair.offset(k)) * pair.d1[k];
    }
    if (support % 2 == 1)
        sum0 += pair.d0[support / 2];
    for (auto& t : pair.d0)
        t /= sum0;
    for (auto& t : pair.d1)
        t /= moment;
    return pair;
}

/// d0 = identity (odd) or two-point average (even); d1 = the matching
/// central / two-point difference. Reference pair for the design.
inline KernelPair difference_pair(std::size_t support)
{
    require(support >= 3, ErrorCode::invalid_argument, "kernel support must be >= 3");
    std::vector<double> u((support + 1) / 2, 0.0);
    std::vector<double> v(support / 2, 0.0);
    if (support % 2 == 1) {
        u[0] = 1.0;
        v[0] = -0.5;
    } else {
        u[0] = 0.5;
        v[0] = -1.0;
    }
    return detail::expand_half(support, u, v, "diff-" + std::to_string(support));
}

/// Resolves catalog labels: "DK<n>" (designed, default spec), "gauss-<n>"
/// (sigma = n/5) or "gauss-<n>:<sigma>", and "diff-<n>".
inline KernelPair resolve_kernel(const std::string& label, const DesignSpec& base = {})
{
    auto parse_size = [&](const std::string& digits) -> std::size_t {
        require(!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos,
                ErrorCode::parse_error, "cannot resolve kernel label '" + label + "'");
        return static_cast<std::size_t>(std::stoul(digits));
    };
    if (label.rfind("DK", 0) == 0) {
        DesignSpec spec = base;
        spec.support = parse_size(label.substr(2));
        spec.grid_points = std::max(spec.grid_points, 8 * spec.support);
        return design_pair(spec);
    }
    if (label.rfind("gauss-", 0) == 0) {
        const std::string rest = label.substr(6);
        const auto colon = rest.find(':');
        const std::size_t support = parse_size(rest.substr(0, colon));
        double sigma = static_cast<double>(support) / 5.0;
        if (colon != std::string::npos) {
            std::istringstream in(rest.substr(colon + 1));
            require(static_cast<bool>(in >> sigma), ErrorCode::parse_error,
                    "cannot parse sigma in kernel label '" + label + "'");
        }
        KernelPair pair = sampled_gaussian_pair(sigma, support);
        pair.label = label;
        return pair;
    }
    if (label.rfind("diff-", 0) == 0)
        return difference_pair(parse_size(label.substr(5)));
    throw Error(ErrorCode::parse_error, "cannot resolve kernel label '" + label + "'");
}

// Catalog text format: header "label,offset,d0,d1", one row per tap.

inline void write_catalog(std::ostream& out, std::span<const KernelPair> pairs)
{
    out << "label,offset,d0,d1\n";
    char buf[128];
    for (const auto& p : pairs) {
        for (std::size_t k = 0; k < p.support(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", p.offset(k), p.d0[k], p.d1[k]);
            out << p.label << ',' << buf << '\n';
        }
    }
}

inline std::vector<KernelPair> read_catalog(std::istream& in)
{
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line == "label,offset,d0,d1",
            ErrorCode::parse_error, "kernel catalog header missing");
    std::vector<KernelPair> pairs;
    std::map<std::string, std::size_t> index;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::istringstream row(line);
        std::string label, off, d0, d1;
        require(std::getline(row, label, ',') && std::getline(row, off, ',') && std::getline(row, d0, ',') &&
                    std::getline(row, d1),
                ErrorCode::parse_error, "malformed catalog row '" + line + "'");
        auto [it, inserted] = index.try_emplace(label, pairs.size());
        if (inserted) {
            pairs.emplace_back();
            pairs.back().label = label;
        }
        auto& p = pairs[it->second];
        p.d0.push_back(std::strtod(d0.c_str(), nullptr));
        p.d1.push_back(std::strtod(d1.c_str(), nullptr));
    }
    return pairs;
}

} // namespace dku
