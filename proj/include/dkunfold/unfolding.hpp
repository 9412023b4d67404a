#pragma once

// Line recovery in reconstructed-density space: peak candidates, NNLS
// amplitudes against modified-response columns, and grid refinement of the
// line energies.

#include "dkunfold/error.hpp"
#include "dkunfold/folding.hpp"
#include "dkunfold/kernels.hpp"
#include "dkunfold/nnls.hpp"
#include "dkunfold/reconstruction.hpp"
#include "dkunfold/response.hpp"
#include "dkunfold/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

namespace dku {

struct LineDiagnostics {
    std::size_t column = 0;
    double max_correlation = 0.0; ///< largest |cosine| between this basis column and any other
};

struct UnfoldResult {
    LineList lines;
    double residual_norm = 0.0;
    std::vector<LineDiagnostics> diagnostics;
    std::vector<std::string> warnings;
};

/// Local maxima of the valid region whose topographic prominence is at least
/// min_prominence * max(density), kept greedily by descending prominence with
/// pairwise separation >= min_separation (keV). Returned in ascending energy.
inline std::vector<double> detect_peaks(const ContinuousSpectrum& spectrum, double min_prominence, double min_separation)
{
    const std::size_t n = spectrum.size();
    const auto& d = spectrum.density;
    auto ok = [&](std::size_t i) { return spectrum.valid.empty() || spectrum.valid[i] != 0; };

    double top = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (ok(i))
            top = std::max(top, d[i]);
    if (!(top > 0.0))
        return {};

    struct Peak {
        std::size_t index;
        double prominence;
    };
    std::vector<Peak> peaks;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!ok(i) || !ok(i - 1) || !(d[i] > d[i - 1]))
            continue;
        std::size_t r = i;
        while (r + 1 < n && ok(r + 1) && d[r + 1] == d[i])
            ++r;
        if (r + 1 >= n || !ok(r + 1) || !(d[r + 1] < d[i]))
            continue;
        const std::size_t p = i + (r - i) / 2;

        double left_min = d[i];
        for (std::size_t k = i; k-- > 0 && ok(k) && d[k] <= d[i];)
            left_min = std::min(left_min, d[k]);
        double right_min = d[i];
        for (std::size_t k = r + 1; k < n && ok(k) && d[k] <= d[i]; ++k)
            right_min = std::min(right_min, d[k]);
        const double prominence = d[p] - std::max(left_min, right_min);
        if (prominence >= min_prominence * top && prominence > 0.0)
            peaks.push_back({p, prominence});
        i = r;
    }

    std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        if (a.prominence != b.prominence)
            return a.prominence > b.prominence;
        return a.index < b.index;
    });
    std::vector<double> kept;
    for (const auto& pk : peaks) {
        const double e = spectrum.grid.energy(pk.index);
        const bool far = std::all_of(kept.begin(), kept.end(),
                                     [&](double k) { return std::abs(k - e) >= min_separation; });
        if (far)
            kept.push_back(e);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

namespace detail {

// Sampling plan mapping the valid points of a (coarse) spectrum onto linear
// interpolation of fine response columns.
struct BasisPlan {
    std::vector<std::size_t> rows;  // spectrum indices used
    std::vector<std::size_t> lower; // fine-grid index below the energy
    std::vector<double> frac;       // weight of lower + 1
    std::vector<std::uint8_t> inside;
    Eigen::VectorXd target;
};

inline BasisPlan make_plan(const ContinuousSpectrum& spectrum, const EnergyGrid& fine)
{
    BasisPlan plan;
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        if (!spectrum.valid.empty() && !spectrum.valid[i])
            continue;
        const double e = spectrum.grid.energy(i);
        plan.rows.push_back(i);
        const bool in = fine.contains(e);
        plan.inside.push_back(in ? 1 : 0);
        std::size_t lo = 0;
        double f = 0.0;
        if (in) {
            const double pos = (e - fine.e_min()) / fine.spacing();
            lo = std::min(static_cast<std::size_t>(pos), fine.size() - 2);
            f = pos - static_cast<double>(lo);
        }
        plan.lower.push_back(lo);
        plan.frac.push_back(f);
    }
    plan.target.resize(static_cast<Eigen::Index>(plan.rows.size()));
    for (std::size_t r = 0; r < plan.rows.size(); ++r)
        plan.target(static_cast<Eigen::Index>(r)) = spectrum.density[plan.rows[r]];
    return plan;
}

// Basis columns interpolated at the spectrum's valid points, computed once
// per response column and reused across refits.
class Fitter {
public:
    Fitter(const ContinuousSpectrum& spectrum, const ResponseMatrix& rhat)
        : plan_(make_plan(spectrum, rhat.grid)), rhat_(rhat), target_norm_(plan_.target.norm())
    {
    }

    const Eigen::VectorXd& column(std::size_t j)
    {
        auto it = cache_.find(j);
        if (it != cache_.end())
            return it->second;
        Eigen::VectorXd v(static_cast<Eigen::Index>(plan_.rows.size()));
        const auto col = rhat_.values.col(static_cast<Eigen::Index>(j));
        for (std::size_t r = 0; r < plan_.rows.size(); ++r) {
            double x = 0.0;
            if (plan_.inside[r]) {
                const auto lo = static_cast<Eigen::Index>(plan_.lower[r]);
                x = (1.0 - plan_.frac[r]) * col(lo) + plan_.frac[r] * col(lo + 1);
            }
            v(static_cast<Eigen::Index>(r)) = x;
        }
        return cache_.emplace(j, std::move(v)).first->second;
    }

    double target_norm() const { return target_norm_; }

    struct Normal {
        Eigen::MatrixXd gram;
        Eigen::VectorXd atb;
    };

    Normal normal(const std::vector<std::size_t>& columns)
    {
        const auto k = static_cast<Eigen::Index>(columns.size());
        Normal n{Eigen::MatrixXd(k, k), Eigen::VectorXd(k)};
        for (Eigen::Index i = 0; i < k; ++i) {
            const auto& ci = column(columns[static_cast<std::size_t>(i)]);
            n.atb(i) = ci.dot(plan_.target);
            for (Eigen::Index j = 0; j <= i; ++j)
                n.gram(i, j) = n.gram(j, i) = ci.dot(column(columns[static_cast<std::size_t>(j)]));
        }
        return n;
    }

    /// Normal equations with entry k of columns swapped in, given those of
    /// the previous column set.
    Normal replaced(const Normal& base, const std::vector<std::size_t>& columns, std::size_t k)
    {
        Normal n = base;
        const auto ki = static_cast<Eigen::Index>(k);
        const auto& ck = column(columns[k]);
        n.atb(ki) = ck.dot(plan_.target);
        for (std::size_t j = 0; j < columns.size(); ++j) {
            const auto ji = static_cast<Eigen::Index>(j);
            n.gram(ki, ji) = n.gram(ji, ki) = j == k ? ck.squaredNorm() : ck.dot(column(columns[j]));
        }
        return n;
    }

    UnfoldResult fit(const std::vector<std::size_t>& columns, const Normal& n)
    {
        UnfoldResult out;
        if (columns.empty()) {
            out.residual_norm = target_norm_;
            return out;
        }
        const double a_norm = std::sqrt(std::max(n.gram.trace(), 0.0));
        const NnlsResult sol = nnls_gram(n.gram, n.atb, nnls_tolerance(a_norm, target_norm_));
        Eigen::VectorXd r = plan_.target;
        for (std::size_t c = 0; c < columns.size(); ++c)
            if (const double x = sol.x(static_cast<Eigen::Index>(c)); x != 0.0)
                r -= x * column(columns[c]);
        out.residual_norm = r.norm();
        for (std::size_t c = 0; c < columns.size(); ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            out.lines.push_back({rhat_.grid.energy(columns[c]), sol.x(ci)});
            LineDiagnostics diag{columns[c], 0.0};
            for (std::size_t o = 0; o < columns.size(); ++o) {
                const auto oi = static_cast<Eigen::Index>(o);
                const double denom = std::sqrt(n.gram(ci, ci) * n.gram(oi, oi));
                if (o != c && denom > 0.0)
                    diag.max_correlation = std::max(diag.max_correlation, std::abs(n.gram(ci, oi)) / denom);
            }
            out.diagnostics.push_back(diag);
        }
        return out;
    }

    UnfoldResult fit(const std::vector<std::size_t>& columns) { return fit(columns, normal(columns)); }

private:
    BasisPlan plan_;
    const ResponseMatrix& rhat_;
    double target_norm_;
    std::unordered_map<std::size_t, Eigen::VectorXd> cache_;
};

inline std::vector<std::size_t> columns_of(const UnfoldResult& r)
{
    std::vector<std::size_t> cols;
    for (const auto& d : r.diagnostics)
        cols.push_back(d.column);
    return cols;
}

} // namespace detail

/// NNLS amplitudes of modified-response columns at the candidate energies.
/// Candidates are sorted; candidates snapping to the same column are merged.
inline UnfoldResult fit_amplitudes(const ContinuousSpectrum& spectrum, const ResponseMatrix& rhat,
                                   const std::vector<double>& energies)
{
    require(!energies.empty(), ErrorCode::invalid_argument, "fit_amplitudes needs at least one candidate");
    std::vector<std::size_t> columns;
    for (double e : energies)
        columns.push_back(snap_to_grid(rhat.grid, e).index);
    std::sort(columns.begin(), columns.end());
    std::vector<std::string> warnings;
    const auto dup = std::unique(columns.begin(), columns.end());
    if (dup != columns.end()) {
        warnings.push_back("merged " + std::to_string(std::distance(dup, columns.end())) +
                           " candidate(s) sharing a response column");
        columns.erase(dup, columns.end());
    }
    detail::Fitter fitter(spectrum, rhat);
    auto out = fitter.fit(columns);
    out.warnings = std::move(warnings);
    return out;
}

/// Coordinate descent on each line's grid column within +/- radius, refitting
/// amplitudes each time and accepting only strict residual decreases. Stops
/// after a sweep with no accepted move.
inline UnfoldResult refine_energies(const ContinuousSpectrum& spectrum, const ResponseMatrix& rhat,
                                    const UnfoldResult& result, std::size_t radius)
{
    if (result.lines.empty() || radius == 0)
        return result;
    detail::Fitter fitter(spectrum, rhat);
    UnfoldResult best = result;
    std::vector<std::size_t> cols = detail::columns_of(best);
    auto normal = fitter.normal(cols);
    const auto r = static_cast<std::ptrdiff_t>(radius);
    const auto n_cols = static_cast<std::ptrdiff_t>(rhat.size());

    for (int sweep = 0; sweep < 10000; ++sweep) {
        bool changed = false;
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const auto lo = k == 0 ? std::ptrdiff_t{-1} : static_cast<std::ptrdiff_t>(cols[k - 1]);
            const auto hi = k + 1 == cols.size() ? n_cols : static_cast<std::ptrdiff_t>(cols[k + 1]);
            const auto here = static_cast<std::ptrdiff_t>(cols[k]);
            std::size_t best_col = cols[k];
            UnfoldResult best_fit;
            detail::Fitter::Normal best_normal;
            double best_res = best.residual_norm;
            for (std::ptrdiff_t step = 1; step <= r; ++step) {
                for (std::ptrdiff_t c : {here - step, here + step}) {
                    if (c <= lo || c >= hi)
                        continue;
                    auto trial = cols;
                    trial[k] = static_cast<std::size_t>(c);
                    auto trial_normal = fitter.replaced(normal, trial, k);
                    auto fit = fitter.fit(trial, trial_normal);
                    if (fit.residual_norm < best_res) {
                        best_res = fit.residual_norm;
                        best_col = static_cast<std::size_t>(c);
                        best_fit = std::move(fit);
                        best_normal = std::move(trial_normal);
                    }
                }
            }
            if (best_col != cols[k]) {
                cols[k] = best_col;
                normal = std::move(best_normal);
                best_fit.warnings = best.warnings;
                best = std::move(best_fit);
                changed = true;
            }
        }
        if (!changed)
            break;
    }
    return best;
}

struct UnfoldOptions {
    ReconstructionOptions reconstruction{};
    std::size_t surface_margin = 1;  ///< extra m-surface columns beyond the kernel reach
    double min_prominence = 0.05;    ///< fraction of the spectrum maximum
    double min_separation = 40.0;    ///< keV
    std::size_t refine_radius = 8;   ///< fine-grid steps
    bool drop_zero_lines = true;
};

struct UnfoldTrace {
    ContinuousSpectrum estimate;
    std::vector<double> candidates;
};

/// m-surface -> derivative-kernel density -> peaks -> NNLS -> refinement.
inline UnfoldResult unfold(const ChannelHistogram& hist, const ResponseMatrix& rhat, const KernelPair& pair,
                           const UnfoldOptions& options = {}, UnfoldTrace* trace = nullptr)
{
    const auto surface = build_m_surface(hist, kernel_reach(pair) + options.surface_margin);
    auto estimate = estimate_density(surface, pair, options.reconstruction);
    std::vector<double> candidates;
    for (double e : detect_peaks(estimate, options.min_prominence, options.min_separation))
        if (rhat.grid.contains(e))
            candidates.push_back(e);

    UnfoldResult result;
    if (candidates.empty()) {
        result.residual_norm = detail::Fitter(estimate, rhat).target_norm();
    } else {
        result = fit_amplitudes(estimate, rhat, candidates);
        result = refine_energies(estimate, rhat, result, options.refine_radius);
    }
    if (options.drop_zero_lines) {
        UnfoldResult kept;
        kept.residual_norm = result.residual_norm;
        kept.warnings = result.warnings;
        for (std::size_t k = 0; k < result.lines.size(); ++k)
            if (result.lines[k].amplitude > 0.0) {
                kept.lines.push_back(result.lines[k]);
                kept.diagnostics.push_back(result.diagnostics[k]);
            }
        result = std::move(kept);
    }
    if (trace) {
        trace->estimate = std::move(estimate);
        trace->candidates = std::move(candidates);
    }
    return result;
}

/// ||fold(truth) - fold(estimate)|| / ||fold(truth)|| on the response grid.
inline double spectrum_error(const LineList& truth, const UnfoldResult& estimate, const ResponseMatrix& rhat)
{
    require(!truth.empty(), ErrorCode::invalid_argument, "spectrum_error needs a nonempty truth");
    const auto t = fold(truth, rhat);
    const auto e = fold(estimate.lines, rhat);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        num += (t.density[i] - e.density[i]) * (t.density[i] - e.density[i]);
        den += t.density[i] * t.density[i];
    }
    require(den > 0.0, ErrorCode::invalid_argument, "truth folds to an empty spectrum");
    return std::sqrt(num / den);
}

inline void write_result_csv(std::ostream& out, const UnfoldResult& r)
{
    out << "energy_keV,amplitude,amplitude_stddev_placeholder\n";
    for (const auto& l : r.lines)
        out << format_g17(l.energy) << ',' << format_g17(l.amplitude) << ",nan\n";
}

} // namespace dku
