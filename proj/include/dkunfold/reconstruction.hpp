#pragma once

// Cumulative count surface m(n1*eps, n2*eps) and the derivative-kernel
// estimate of the count density M(E) along its second argument at zero.

#include "dkunfold/error.hpp"
#include "dkunfold/kernels.hpp"
#include "dkunfold/spectrum.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <vector>

namespace dku {

inline std::vector<double> prefix_sums(const ChannelHistogram& hist)
{
    std::vector<double> prefix(hist.size() + 1, 0.0);
    for (std::size_t k = 0; k < hist.size(); ++k)
        prefix[k + 1] = prefix[k] + hist.counts[k];
    return prefix;
}

/// m(n1, n2) = prefix[n1 + n2] - prefix[n1] for n1 in [0, N], n2 in [-L, L].
/// Cells with n1 + n2 outside [0, N] are invalid and hold NaN.
class MSurface {
public:
    MSurface(const ChannelHistogram& hist, std::size_t half_width)
        : epsilon_(hist.epsilon), origin_(hist.origin), n_(hist.size()), half_width_(half_width),
          prefix_(prefix_sums(hist))
    {
        require(half_width >= 1, ErrorCode::invalid_argument, "surface half width must be >= 1");
        require(hist.size() >= 2 * half_width + 1, ErrorCode::invalid_argument,
                "histogram shorter than 2L+1 channels");
        const std::size_t cols = 2 * half_width_ + 1;
        values_.assign((n_ + 1) * cols, std::numeric_limits<double>::quiet_NaN());
        const auto n = static_cast<std::ptrdiff_t>(n_);
        const auto l = static_cast<std::ptrdiff_t>(half_width_);
        for (std::ptrdiff_t n1 = 0; n1 <= n; ++n1)
            for (std::ptrdiff_t n2 = -l; n2 <= l; ++n2)
                if (n1 + n2 >= 0 && n1 + n2 <= n)
                    values_[slot(n1, n2)] = prefix_[static_cast<std::size_t>(n1 + n2)] - prefix_[static_cast<std::size_t>(n1)];
    }

    double epsilon() const noexcept { return epsilon_; }
    double origin() const noexcept { return origin_; }
    std::size_t channels() const noexcept { return n_; }
    std::size_t half_width() const noexcept { return half_width_; }
    const std::vector<double>& prefix() const noexcept { return prefix_; }

    bool valid(std::ptrdiff_t n1, std::ptrdiff_t n2) const noexcept
    {
        const auto n = static_cast<std::ptrdiff_t>(n_);
        const auto l = static_cast<std::ptrdiff_t>(half_width_);
        return n1 >= 0 && n1 <= n && n2 >= -l && n2 <= l && n1 + n2 >= 0 && n1 + n2 <= n;
    }

    /// NaN outside the valid region.
    double operator()(std::ptrdiff_t n1, std::ptrdiff_t n2) const noexcept
    {
        if (n1 < 0 || n1 > static_cast<std::ptrdiff_t>(n_) || std::abs(n2) > static_cast<std::ptrdiff_t>(half_width_))
            return std::numeric_limits<double>::quiet_NaN();
        return values_[slot(n1, n2)];
    }

private:
    std::size_t slot(std::ptrdiff_t n1, std::ptrdiff_t n2) const noexcept
    {
        return static_cast<std::size_t>(n1) * (2 * half_width_ + 1) +
               static_cast<std::size_t>(n2 + static_cast<std::ptrdiff_t>(half_width_));
    }

    double epsilon_;
    double origin_;
    std::size_t n_;
    std::size_t half_width_;
    std::vector<double> prefix_;
    std::vector<double> values_;
};

/// Largest |n2| a pair reads: odd supports evaluate the derivative at E' = 0,
/// half-sample pairs at E' = eps/2.
inline std::size_t kernel_reach(const KernelPair& pair)
{
    return pair.half_sample() ? pair.support() / 2 : (pair.support() - 1) / 2;
}

inline MSurface build_m_surface(const ChannelHistogram& hist, std::size_t half_width)
{
    hist.validate();
    return MSurface(hist, half_width);
}

struct ReconstructionOptions {
    bool smooth_energy_axis = true; ///< apply d0 along E; false uses a delta (odd supports only)
};

/// M_hat(origin + n*eps) = (1/eps) sum_i sum_j d0[i] d1[j] m(n - s - o_i, s - o_j)
/// where o are the tap offsets and s = 0 (odd support) or 1/2 (half-sample
/// pair). For half-sample pairs the two half-sample shifts cancel so the
/// output still lands on channel edges. Points whose stencil leaves the
/// surface are flagged invalid and set to zero.
inline ContinuousSpectrum estimate_density(const MSurface& surface, const KernelPair& pair,
                                           const ReconstructionOptions& options = {})
{
    require(pair.d0.size() == pair.d1.size() && pair.support() >= 2, ErrorCode::invalid_argument,
            "malformed kernel pair");
    require(kernel_reach(pair) <= surface.half_width(), ErrorCode::invalid_argument,
            "kernel wider than the surface margin");
    require(options.smooth_energy_axis || !pair.half_sample(), ErrorCode::invalid_argument,
            "half-sample pairs require smoothing along the energy axis");

    const double s = pair.half_sample() ? 0.5 : 0.0;
    std::vector<std::ptrdiff_t> a_shift;
    std::vector<double> a_weight;
    if (options.smooth_energy_axis) {
        for (std::size_t i = 0; i < pair.support(); ++i) {
            a_shift.push_back(static_cast<std::ptrdiff_t>(std::llround(-s - pair.offset(i))));
            a_weight.push_back(pair.d0[i]);
        }
    } else {
        a_shift.push_back(0);
        a_weight.push_back(1.0);
    }
    std::vector<std::ptrdiff_t> b_shift;
    for (std::size_t j = 0; j < pair.support(); ++j)
        b_shift.push_back(static_cast<std::ptrdiff_t>(std::llround(s - pair.offset(j))));

    const std::size_t n_channels = surface.channels();
    ContinuousSpectrum out;
    out.grid = EnergyGrid(surface.origin(), surface.origin() + surface.epsilon() * static_cast<double>(n_channels),
                          n_channels + 1);
    out.density.assign(n_channels + 1, 0.0);
    out.valid.assign(n_channels + 1, 0);
    out.relaxed = true;

    const double inv_eps = 1.0 / surface.epsilon();
    for (std::size_t n = 0; n <= n_channels; ++n) {
        bool ok = true;
        double acc = 0.0;
        for (std::size_t i = 0; i < a_shift.size() && ok; ++i) {
            const std::ptrdiff_t a = static_cast<std::ptrdiff_t>(n) + a_shift[i];
            double inner = 0.0;
            for (std::size_t j = 0; j < b_shift.size(); ++j) {
                if (!surface.valid(a, b_shift[j])) {
                    ok = false;
                    break;
                }
                inner += pair.d1[j] * surface(a, b_shift[j]);
            }
            acc += a_weight[i] * inner;
        }
        if (ok) {
            out.density[n] = acc * inv_eps;
            out.valid[n] = 1;
        }
    }
    return out;
}

inline void write_reconstruction_csv(std::ostream& out, const ContinuousSpectrum& s)
{
    out << "energy_keV,density_per_keV,valid_flag\n";
    for (std::size_t i = 0; i < s.size(); ++i)
        out << format_g17(s.grid.energy(i)) << ',' << format_g17(s.density[i]) << ',' << int(s.valid[i]) << '\n';
}

} // namespace dku
