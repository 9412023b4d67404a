#pragma once

#include "dkunfold/error.hpp"
#include "dkunfold/grid.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace dku {

struct SpectralLine {
    double energy = 0.0;    ///< keV
    double amplitude = 0.0; ///< expected photon count
};

using LineList = std::vector<SpectralLine>;

/// Density (counts/keV) sampled on an energy grid. Forward-model spectra are
/// nonnegative and fully valid; reconstructed estimates set `relaxed` and may
/// carry negative values and invalid (boundary) points.
struct ContinuousSpectrum {
    EnergyGrid grid;
    std::vector<double> density;
    std::vector<std::uint8_t> valid;
    bool relaxed = false;

    static ContinuousSpectrum zeros(const EnergyGrid& g)
    {
        return {g, std::vector<double>(g.size(), 0.0), std::vector<std::uint8_t>(g.size(), 1), false};
    }

    std::size_t size() const noexcept { return density.size(); }

    /// Integral over the grid cells (midpoint rule).
    double integral() const
    {
        double s = 0.0;
        for (double d : density)
            s += d;
        return s * grid.spacing();
    }

    /// Linear interpolation between grid points; zero outside [e_min, e_max].
    double value_at(double e) const
    {
        if (!grid.contains(e))
            return 0.0;
        const double pos = (e - grid.e_min()) / grid.spacing();
        auto i = static_cast<std::size_t>(pos);
        if (i + 1 >= size())
            return density.back();
        const double f = pos - static_cast<double>(i);
        return (1.0 - f) * density[i] + f * density[i + 1];
    }
};

enum class HistogramMode { expected, realized };

inline std::string to_string(HistogramMode m) { return m == HistogramMode::expected ? "expected" : "realized"; }

/// Counts per channel of width epsilon; channel k covers [origin + k*eps, origin + (k+1)*eps).
struct ChannelHistogram {
    double epsilon = 1.0;
    double origin = 0.0;
    std::vector<double> counts;
    HistogramMode mode = HistogramMode::expected;

    std::size_t size() const noexcept { return counts.size(); }
    double channel_low(std::size_t k) const noexcept { return origin + epsilon * static_cast<double>(k); }

    double total() const
    {
        double s = 0.0;
        for (double c : counts)
            s += c;
        return s;
    }

    void validate() const
    {
        require(epsilon > 0.0 && std::isfinite(epsilon), ErrorCode::invalid_argument, "channel width must be positive");
        require(counts.size() >= 8, ErrorCode::invalid_argument, "histogram needs at least 8 channels");
        for (double c : counts) {
            require(std::isfinite(c) && c >= 0.0, ErrorCode::invalid_argument, "histogram counts must be nonnegative");
            if (mode == HistogramMode::realized)
                require(c == std::floor(c), ErrorCode::invalid_argument, "realized histogram counts must be integers");
        }
    }
};

inline std::string format_g17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_histogram(std::ostream& out, const ChannelHistogram& h)
{
    out << "epsilon=" << format_g17(h.epsilon) << " origin=" << format_g17(h.origin) << " mode=" << to_string(h.mode)
        << '\n';
    char buf[40];
    for (double c : h.counts) {
        if (h.mode == HistogramMode::realized)
            std::snprintf(buf, sizeof buf, "%.0f", c);
        else
            std::snprintf(buf, sizeof buf, "%.17g", c);
        out << buf << '\n';
    }
}

inline ChannelHistogram read_histogram(std::istream& in)
{
    std::string header;
    require(static_cast<bool>(std::getline(in, header)), ErrorCode::parse_error, "empty histogram file");
    std::istringstream hs(header);
    std::string a, b, c;
    hs >> a >> b >> c;
    require(a.rfind("epsilon=", 0) == 0 && b.rfind("origin=", 0) == 0 && c.rfind("mode=", 0) == 0,
            ErrorCode::parse_error, "malformed histogram header '" + header + "'");
    ChannelHistogram h;
    h.epsilon = std::strtod(a.c_str() + 8, nullptr);
    h.origin = std::strtod(b.c_str() + 7, nullptr);
    const std::string mode = c.substr(5);
    require(mode == "expected" || mode == "realized", ErrorCode::parse_error, "unknown histogram mode '" + mode + "'");
    h.mode = mode == "expected" ? HistogramMode::expected : HistogramMode::realized;
    std::string tok;
    while (in >> tok) {
        char* end = nullptr;
        h.counts.push_back(std::strtod(tok.c_str(), &end));
        require(end && *end == '\0', ErrorCode::parse_error, "bad histogram count '" + tok + "'");
    }
    h.validate();
    return h;
}

inline void write_histogram_csv(std::ostream& out, const ChannelHistogram& h)
{
    out << "channel,energy_low,counts\n";
    for (std::size_t k = 0; k < h.size(); ++k)
        out << k << ',' << format_g17(h.channel_low(k)) << ',' << format_g17(h.counts[k]) << '\n';
}

} // namespace dku
