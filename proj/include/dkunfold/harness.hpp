#pragma once

// Seeded simulation study: random line sets through the forward chain,
// unfolded with each kernel pair, scored, tabulated and plotted.

#include "dkunfold/error.hpp"
#include "dkunfold/folding.hpp"
#include "dkunfold/kernels.hpp"
#include "dkunfold/random.hpp"
#include "dkunfold/response.hpp"
#include "dkunfold/unfolding.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace dku {

// Config grammar, one entry per line:
//   key = value        lists are comma separated
//   # comment          blank lines ignored, unknown keys rejected
struct ExperimentConfig {
    double grid_e_min = 1.25;
    double grid_spacing = 0.5;
    std::size_t grid_points = 4096;
    double channel_width = 2.0;

    DetectorModel detector = [] {
        DetectorModel d;
        d.fwhm_a = 1.5;
        d.photofraction = 0.6;
        d.compton_fraction = 0.35;
        d.single_escape_fraction = 0.05;
        d.double_escape_fraction = 0.02;
        return d;
    }();
    double medium_transmission = 0.9;
    double medium_attenuation_scale = 0.0; ///< keV, t(E) = t0 exp(-scale/E)
    double medium_scatter_fraction = 0.2;

    std::size_t lines_count = 3;
    double lines_range_low = 0.2; ///< fraction of the grid span
    double lines_range_high = 0.8;
    double lines_amplitude_low = 1.0;
    double lines_amplitude_high = 10.0;
    double lines_min_separation_fwhm = 3.0;

    DesignSpec design{};
    std::vector<std::string> kernels{"DK3", "DK4", "DK5", "gauss-5"};
    std::vector<std::uint64_t> counts{1000, 10000, 100000, 1000000};
    std::size_t trials = 100;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    std::size_t threads = 1;
    bool record_runtime = false;

    UnfoldOptions unfold{};

    EnergyGrid grid() const { return EnergyGrid::from_spacing(grid_e_min, grid_spacing, grid_points); }

    MediumModel medium() const
    {
        return medium_attenuation_scale > 0.0
                   ? MediumModel::attenuating(medium_transmission, medium_attenuation_scale, medium_scatter_fraction)
                   : MediumModel::constant(medium_transmission, medium_scatter_fraction);
    }

    void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Shortest text that parses back to the same double.
inline std::string format_shortest(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (auto t = trim(item); !t.empty())
            out.push_back(t);
    return out;
}

inline double parse_double(const std::string& key, const std::string& v)
{
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    require(pos == v.size() && !v.empty(), ErrorCode::parse_error, key + ": not a number: '" + v + "'");
    return x;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v)
{
    std::size_t pos = 0;
    unsigned long long x = 0;
    if (!v.empty() && v[0] != '-') {
        try {
            x = std::stoull(v, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
    }
    require(pos == v.size() && !v.empty(), ErrorCode::parse_error,
            key + ": not a nonnegative integer: '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1")
        return true;
    if (v == "false" || v == "0")
        return false;
    throw Error(ErrorCode::parse_error, key + ": expected true or false, got '" + v + "'");
}

struct ConfigField {
    const char* key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline std::string join_list(const std::vector<std::string>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + v[i];
    return s;
}

#define DKU_REAL(name, member)                                                                                  \
    ConfigField                                                                                                 \
    {                                                                                                           \
        name, [](const ExperimentConfig& c) { return format_shortest(c.member); },                              \
            [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(name, v); }                 \
    }
#define DKU_UINT(name, member)                                                                                  \
    ConfigField                                                                                                 \
    {                                                                                                           \
        name, [](const ExperimentConfig& c) { return std::to_string(c.member); },                               \
            [](ExperimentConfig& c, const std::string& v) {                                                     \
                c.member = static_cast<decltype(c.member)>(parse_uint(name, v));                                \
            }                                                                                                   \
    }
#define DKU_BOOL(name, member)                                                                                  \
    ConfigField                                                                                                 \
    {                                                                                                           \
        name, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); },              \
            [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(name, v); }                   \
    }

inline const std::vector<ConfigField>& config_fields()
{
    static const std::vector<ConfigField> fields{
        DKU_REAL("grid.e_min", grid_e_min),
        DKU_REAL("grid.spacing", grid_spacing),
        DKU_UINT("grid.points", grid_points),
        DKU_REAL("channel.width", channel_width),
        DKU_REAL("detector.fwhm_a", detector.fwhm_a),
        DKU_REAL("detector.fwhm_b", detector.fwhm_b),
        DKU_REAL("detector.photofraction", detector.photofraction),
        DKU_REAL("detector.compton_fraction", detector.compton_fraction),
        DKU_BOOL("detector.escape_peaks", detector.escape_peaks),
        DKU_REAL("detector.single_escape_fraction", detector.single_escape_fraction),
        DKU_REAL("detector.double_escape_fraction", detector.double_escape_fraction),
        DKU_REAL("medium.transmission", medium_transmission),
        DKU_REAL("medium.attenuation_scale", medium_attenuation_scale),
        DKU_REAL("medium.scatter_fraction", medium_scatter_fraction),
        DKU_UINT("lines.count", lines_count),
        DKU_REAL("lines.range_low", lines_range_low),
        DKU_REAL("lines.range_high", lines_range_high),
        DKU_REAL("lines.amplitude_low", lines_amplitude_low),
        DKU_REAL("lines.amplitude_high", lines_amplitude_high),
        DKU_REAL("lines.min_separation_fwhm", lines_min_separation_fwhm),
        DKU_REAL("design.band_edge", design.band_edge),
        {"design.weighting", [](const ExperimentConfig& c) { return to_string(c.design.weighting); },
         [](ExperimentConfig& c, const std::string& v) { c.design.weighting = parse_weighting(v); }},
        DKU_UINT("design.grid_points", design.grid_points),
        {"kernels", [](const ExperimentConfig& c) { return join_list(c.kernels); },
         [](ExperimentConfig& c, const std::string& v) { c.kernels = split_list(v); }},
        {"counts",
         [](const ExperimentConfig& c) {
             std::vector<std::string> s;
             for (auto n : c.counts)
                 s.push_back(std::to_string(n));
             return join_list(s);
         },
         [](ExperimentConfig& c, const std::string& v) {
             c.counts.clear();
             for (const auto& item : split_list(v))
                 c.counts.push_back(static_cast<std::uint64_t>(parse_double("counts", item)));
         }},
        DKU_UINT("trials", trials),
        DKU_UINT("seed", seed),
        {"output_dir", [](const ExperimentConfig& c) { return c.output_dir; },
         [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }},
        DKU_UINT("threads", threads),
        DKU_BOOL("record_runtime", record_runtime),
        DKU_UINT("unfold.surface_margin", unfold.surface_margin),
        DKU_REAL("unfold.min_prominence", unfold.min_prominence),
        DKU_REAL("unfold.min_separation", unfold.min_separation),
        DKU_UINT("unfold.refine_radius", unfold.refine_radius),
    };
    return fields;
}

#undef DKU_REAL
#undef DKU_UINT
#undef DKU_BOOL

} // namespace detail

inline void ExperimentConfig::validate() const
{
    require(grid_points >= 16, ErrorCode::invalid_argument, "grid.points must be >= 16");
    require(grid_spacing > 0.0 && grid_e_min - 0.5 * grid_spacing >= 0.0, ErrorCode::invalid_argument,
            "grid cells must start at or above 0 keV");
    require(channel_width > 0.0, ErrorCode::invalid_argument, "channel.width must be > 0");
    detector.validate();
    require(medium_transmission > 0.0 && medium_transmission <= 1.0, ErrorCode::invalid_argument,
            "medium.transmission must lie in (0, 1]");
    require(medium_attenuation_scale >= 0.0, ErrorCode::invalid_argument, "medium.attenuation_scale must be >= 0");
    require(medium_scatter_fraction >= 0.0 && medium_scatter_fraction < 1.0, ErrorCode::invalid_argument,
            "medium.scatter_fraction must lie in [0, 1)");
    require(lines_count >= 1, ErrorCode::invalid_argument, "lines.count must be >= 1");
    require(0.0 <= lines_range_low && lines_range_low < lines_range_high && lines_range_high <= 1.0,
            ErrorCode::invalid_argument, "lines.range_low/high must satisfy 0 <= low < high <= 1");
    require(lines_amplitude_low > 0.0 && lines_amplitude_low <= lines_amplitude_high, ErrorCode::invalid_argument,
            "line amplitudes must satisfy 0 < low <= high");
    require(lines_min_separation_fwhm >= 0.0, ErrorCode::invalid_argument, "lines.min_separation_fwhm must be >= 0");
    design.validate();
    require(!kernels.empty(), ErrorCode::invalid_argument, "at least one kernel is required");
    for (const auto& k : kernels)
        resolve_kernel(k, design);
    require(!counts.empty(), ErrorCode::invalid_argument, "at least one count level is required");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        require(counts[i] > 0, ErrorCode::invalid_argument, "count levels must be > 0");
        require(i == 0 || counts[i] > counts[i - 1], ErrorCode::invalid_argument,
                "count levels must be strictly increasing");
    }
    require(trials >= 1, ErrorCode::invalid_argument, "trials must be >= 1");
    require(threads >= 1, ErrorCode::invalid_argument, "threads must be >= 1");
}

inline void dump_config(std::ostream& out, const ExperimentConfig& c)
{
    for (const auto& f : detail::config_fields())
        out << f.key << " = " << f.get(c) << '\n';
}

inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {})
{
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = detail::trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorCode::parse_error,
                "line " + std::to_string(line_no) + ": expected key = value");
        const auto key = detail::trim(line.substr(0, eq));
        const auto value = detail::trim(line.substr(eq + 1));
        const auto& fields = detail::config_fields();
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.key; });
        require(it != fields.end(), ErrorCode::parse_error,
                "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        it->set(base, value);
    }
    return base;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {})
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::io_error, "cannot open config '" + path + "'");
    return parse_config(in, std::move(base));
}

/// Everything a trial needs that does not depend on the seed.
struct Simulation {
    ExperimentConfig config;
    ResponseMatrix rhat;
    std::map<std::string, KernelPair> kernels;

    const KernelPair& kernel(const std::string& label) const
    {
        const auto it = kernels.find(label);
        require(it != kernels.end(), ErrorCode::invalid_argument, "kernel '" + label + "' is not prepared");
        return it->second;
    }
};

inline ResponseMatrix build_response(const ExperimentConfig& c)
{
    const auto g = c.grid();
    return modified_response(detector_response_matrix(c.detector, g), medium_kernel(c.medium(), g));
}

inline Simulation prepare(const ExperimentConfig& config)
{
    config.validate();
    Simulation sim{config, build_response(config), {}};
    for (const auto& k : config.kernels)
        sim.kernels.emplace(k, resolve_kernel(k, config.design));
    return sim;
}

/// Energies on grid points in the configured window, sorted, pairwise at
/// least min_separation_fwhm * FWHM apart; amplitudes log-uniform.
inline LineList random_lines(const ExperimentConfig& c, Rng& rng)
{
    const auto g = c.grid();
    const double span = g.upper_edge() - g.lower_edge();
    const double lo = g.lower_edge() + c.lines_range_low * span;
    const double hi = g.lower_edge() + c.lines_range_high * span;
    const double decades = std::log(c.lines_amplitude_high / c.lines_amplitude_low);
    LineList lines;
    for (std::size_t k = 0; k < c.lines_count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
            const double e = g.energy(g.nearest_index(rng.uniform(lo, hi)));
            placed = std::all_of(lines.begin(), lines.end(), [&](const SpectralLine& l) {
                const double w = std::max(c.detector.fwhm(e), c.detector.fwhm(l.energy));
                return std::abs(l.energy - e) >= c.lines_min_separation_fwhm * w && l.energy != e;
            });
            if (placed)
                lines.push_back({e, c.lines_amplitude_low * std::exp(decades * rng.uniform())});
        }
        require(placed, ErrorCode::invalid_argument, "cannot place " + std::to_string(c.lines_count) +
                                                         " separated lines in the configured window");
    }
    std::sort(lines.begin(), lines.end(), [](const auto& a, const auto& b) { return a.energy < b.energy; });
    return lines;
}

/// One simulated acquisition: lines rescaled so the expected histogram holds
/// exactly total_counts, then its Poisson realisation.
struct SimulatedSpectrum {
    LineList truth;
    ChannelHistogram expected;
    ChannelHistogram realized;
};

inline SimulatedSpectrum simulate(const Simulation& sim, std::uint64_t total_counts, std::uint64_t seed)
{
    require(total_counts > 0, ErrorCode::invalid_argument, "total counts must be > 0");
    Rng rng(mix_seed(seed, 0));
    SimulatedSpectrum out;
    out.truth = random_lines(sim.config, rng);
    const auto folded = fold(out.truth, sim.rhat);
    out.expected = channelize(folded, sim.config.channel_width, sim.rhat.grid.lower_edge());
    const double scale = static_cast<double>(total_counts) / out.expected.total();
    for (auto& l : out.truth)
        l.amplitude *= scale;
    for (auto& c : out.expected.counts)
        c *= scale;
    out.realized = poisson_realize(out.expected, total_counts, mix_seed(seed, 1));
    return out;
}

struct EnsembleRow {
    std::string kernel;
    std::uint64_t total_counts = 0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double error = 0.0; ///< NaN marks a failed trial
    double runtime_ms = 0.0;

    bool failed() const { return std::isnan(error); }
    bool operator==(const EnsembleRow&) const = default;
};

struct EnsembleTable {
    std::vector<EnsembleRow> rows;
};

inline EnsembleRow run_trial(const Simulation& sim, const std::string& kernel, std::uint64_t total_counts,
                             std::uint64_t seed)
{
    require(total_counts > 0, ErrorCode::invalid_argument, "total counts must be > 0");
    EnsembleRow row{kernel, total_counts, 0, seed, std::numeric_limits<double>::quiet_NaN(), 0.0};
    const auto start = std::chrono::steady_clock::now();
    try {
        const auto s = simulate(sim, total_counts, seed);
        const auto result = unfold(s.realized, sim.rhat, sim.kernel(kernel), sim.config.unfold);
        row.error = spectrum_error(s.truth, result, sim.rhat);
    } catch (const std::exception&) {
        row.error = std::numeric_limits<double>::quiet_NaN();
    }
    if (sim.config.record_runtime)
        row.runtime_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return row;
}

inline EnsembleRow run_trial(const ExperimentConfig& config, const std::string& kernel, std::uint64_t total_counts,
                             std::uint64_t seed)
{
    ExperimentConfig c = config;
    c.counts = {total_counts};
    c.kernels = {kernel};
    return run_trial(prepare(c), kernel, total_counts, seed);
}

/// Seed of a trial; independent of the kernel so every kernel sees the same
/// simulated spectra.
inline std::uint64_t trial_seed(std::uint64_t base, std::size_t level, std::size_t trial)
{
    return mix_seed(mix_seed(base, level), trial);
}

inline EnsembleTable run_ensemble(const Simulation& sim)
{
    const auto& c = sim.config;
    const std::size_t per_kernel = c.counts.size() * c.trials;
    EnsembleTable table;
    table.rows.resize(c.kernels.size() * per_kernel);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < table.rows.size(); i = next++) {
            const std::size_t k = i / per_kernel, level = (i % per_kernel) / c.trials, trial = i % c.trials;
            auto row = run_trial(sim, c.kernels[k], c.counts[level], trial_seed(c.seed, level, trial));
            row.trial = trial;
            table.rows[i] = std::move(row);
        }
    };
    const std::size_t n_threads = std::min(c.threads, table.rows.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    return table;
}

inline EnsembleTable run_ensemble(const ExperimentConfig& config) { return run_ensemble(prepare(config)); }

inline constexpr const char* ensemble_csv_header = "kernel,total_counts,trial,seed,error,runtime_ms";

inline void write_ensemble_csv(std::ostream& out, const EnsembleTable& t)
{
    out << ensemble_csv_header << '\n';
    for (const auto& r : t.rows)
        out << r.kernel << ',' << r.total_counts << ',' << r.trial << ',' << r.seed << ',' << format_g17(r.error)
            << ',' << format_g17(r.runtime_ms) << '\n';
}

inline EnsembleTable read_ensemble_csv(std::istream& in)
{
    std::string line;
    require(std::getline(in, line) && detail::trim(line) == ensemble_csv_header, ErrorCode::parse_error,
            "ensemble CSV header mismatch");
    EnsembleTable t;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty())
            continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ','))
            f.push_back(detail::trim(item));
        require(f.size() == 6, ErrorCode::parse_error, "ensemble CSV row needs 6 fields: '" + line + "'");
        EnsembleRow r;
        r.kernel = f[0];
        r.total_counts = detail::parse_uint("total_counts", f[1]);
        r.trial = detail::parse_uint("trial", f[2]);
        r.seed = detail::parse_uint("seed", f[3]);
        r.error = f[4] == "nan" ? std::numeric_limits<double>::quiet_NaN() : detail::parse_double("error", f[4]);
        r.runtime_ms = detail::parse_double("runtime_ms", f[5]);
        t.rows.push_back(std::move(r));
    }
    return t;
}

inline void emit_csv(const EnsembleTable& t, const std::string& path)
{
    require(!t.rows.empty(), ErrorCode::invalid_argument, "refusing to write an empty table");
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io_error, "cannot write '" + path + "'");
    write_ensemble_csv(out, t);
    require(static_cast<bool>(out), ErrorCode::io_error, "write failed for '" + path + "'");
}

inline EnsembleTable load_csv(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::io_error, "cannot open '" + path + "'");
    return read_ensemble_csv(in);
}

struct CellSummary {
    std::string kernel;
    std::uint64_t total_counts = 0;
    std::size_t n = 0;
    std::size_t failures = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
};

/// Per (kernel, level) statistics over successful trials, in first-seen order.
inline std::vector<CellSummary> summarize(const EnsembleTable& t)
{
    std::vector<CellSummary> cells;
    std::vector<std::vector<double>> values;
    for (const auto& r : t.rows) {
        auto it = std::find_if(cells.begin(), cells.end(), [&](const CellSummary& c) {
            return c.kernel == r.kernel && c.total_counts == r.total_counts;
        });
        if (it == cells.end()) {
            cells.push_back({r.kernel, r.total_counts, 0, 0, 0.0, 0.0});
            values.emplace_back();
            it = cells.end() - 1;
        }
        const auto idx = static_cast<std::size_t>(it - cells.begin());
        if (r.failed())
            ++it->failures;
        else
            values[idx].push_back(r.error);
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& v = values[i];
        cells[i].n = v.size();
        if (v.empty()) {
            cells[i].mean = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        double s = 0.0;
        for (double x : v)
            s += x;
        const double mean = s / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v)
            ss += (x - mean) * (x - mean);
        cells[i].mean = mean;
        cells[i].stderr_ = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
    }
    return cells;
}

struct PairedComparison {
    std::size_t n = 0;
    double mean_difference = 0.0; ///< mean of (a - b)
    double t = 0.0;
    double p_one_sided = 1.0;     ///< P(T >= t) under no difference; small when a > b
};

/// Paired t-test of kernel a against kernel b at one count level, matching
/// trials by seed and skipping pairs where either trial failed.
inline PairedComparison paired_comparison(const EnsembleTable& t, const std::string& a, const std::string& b,
                                          std::uint64_t total_counts)
{
    std::map<std::uint64_t, double> ea;
    for (const auto& r : t.rows)
        if (r.kernel == a && r.total_counts == total_counts && !r.failed())
            ea[r.seed] = r.error;
    std::vector<double> d;
    for (const auto& r : t.rows)
        if (r.kernel == b && r.total_counts == total_counts && !r.failed())
            if (auto it = ea.find(r.seed); it != ea.end())
                d.push_back(it->second - r.error);
    PairedComparison out;
    out.n = d.size();
    if (d.size() < 2)
        return out;
    double s = 0.0;
    for (double x : d)
        s += x;
    out.mean_difference = s / static_cast<double>(d.size());
    double ss = 0.0;
    for (double x : d)
        ss += (x - out.mean_difference) * (x - out.mean_difference);
    const double se = std::sqrt(ss / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
    if (se == 0.0) {
        out.t = out.mean_difference == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), out.mean_difference);
        out.p_one_sided = out.mean_difference > 0.0 ? 0.0 : (out.mean_difference < 0.0 ? 1.0 : 0.5);
        return out;
    }
    out.t = out.mean_difference / se;
    const boost::math::students_t dist(static_cast<double>(d.size() - 1));
    out.p_one_sided = boost::math::cdf(boost::math::complement(dist, out.t));
    return out;
}

enum class PlotKind { counts, kernels };

inline PlotKind parse_plot_kind(const std::string& s)
{
    if (s == "counts")
        return PlotKind::counts;
    if (s == "kernels")
        return PlotKind::kernels;
    throw Error(ErrorCode::invalid_argument, "unknown plot kind '" + s + "' (expected counts or kernels)");
}

namespace detail {

inline std::string svg_num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

inline const char* palette(std::size_t i)
{
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
    return colours[i % 7];
}

} // namespace detail

/// Mean error with one-standard-error bars. counts: log-x over count levels,
/// one series per kernel. kernels: kernels along x, one series per level.
/// Both use a log-y axis.
inline void write_svg(std::ostream& out, const EnsembleTable& t, PlotKind kind)
{
    require(!t.rows.empty(), ErrorCode::invalid_argument, "cannot plot an empty table");
    const auto cells = summarize(t);
    std::vector<std::string> kernels;
    std::vector<std::uint64_t> levels;
    for (const auto& c : cells) {
        if (std::find(kernels.begin(), kernels.end(), c.kernel) == kernels.end())
            kernels.push_back(c.kernel);
        if (std::find(levels.begin(), levels.end(), c.total_counts) == levels.end())
            levels.push_back(c.total_counts);
    }
    std::sort(levels.begin(), levels.end());

    double ymin = std::numeric_limits<double>::infinity(), ymax = 0.0;
    for (const auto& c : cells)
        if (c.n > 0 && c.mean > 0.0) {
            ymin = std::min(ymin, std::max(c.mean - c.stderr_, c.mean * 0.5));
            ymax = std::max(ymax, c.mean + c.stderr_);
        }
    if (!(ymax > 0.0)) {
        ymin = 1e-3;
        ymax = 1.0;
    }
    const double ly0 = std::floor(std::log10(ymin)), ly1 = std::max(std::ceil(std::log10(ymax)), ly0 + 1.0);

    const double w = 640, h = 420, left = 70, right = 150, top = 30, bottom = 60;
    const double pw = w - left - right, ph = h - top - bottom;
    auto ypix = [&](double v) { return top + ph * (ly1 - std::log10(std::max(v, std::pow(10.0, ly0)))) / (ly1 - ly0); };

    std::vector<std::string> x_labels;
    std::vector<double> x_pos;
    if (kind == PlotKind::counts) {
        const double lx0 = std::floor(std::log10(static_cast<double>(levels.front())));
        const double lx1 = std::max(std::ceil(std::log10(static_cast<double>(levels.back()))), lx0 + 1.0);
        for (double e = lx0; e <= lx1; e += 1.0) {
            x_pos.push_back(left + pw * (e - lx0) / (lx1 - lx0));
            x_labels.push_back("1e" + std::to_string(static_cast<int>(e)));
        }
    } else {
        for (std::size_t i = 0; i < kernels.size(); ++i) {
            x_pos.push_back(left + pw * (static_cast<double>(i) + 0.5) / static_cast<double>(kernels.size()));
            x_labels.push_back(kernels[i]);
        }
    }
    auto count_x = [&](std::uint64_t n) {
        const double lx0 = std::floor(std::log10(static_cast<double>(levels.front())));
        const double lx1 = std::max(std::ceil(std::log10(static_cast<double>(levels.back()))), lx0 + 1.0);
        return left + pw * (std::log10(static_cast<double>(n)) - lx0) / (lx1 - lx0);
    };

    using detail::svg_num;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
        << w << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double e = ly0; e <= ly1; e += 1.0) {
        const double y = ypix(std::pow(10.0, e));
        out << "<line x1=\"" << left << "\" y1=\"" << svg_num(y) << "\" x2=\"" << left + pw << "\" y2=\""
            << svg_num(y) << "\" stroke=\"#dddddd\"/>\n";
        out << "<text x=\"" << left - 6 << "\" y=\"" << svg_num(y + 4) << "\" text-anchor=\"end\">1e"
            << static_cast<int>(e) << "</text>\n";
    }
    for (std::size_t i = 0; i < x_pos.size(); ++i)
        out << "<text x=\"" << svg_num(x_pos[i]) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
            << detail::xml_escape(x_labels[i]) << "</text>\n";
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">"
        << (kind == PlotKind::counts ? "total counts" : "kernel pair") << "</text>\n";
    out << "<text transform=\"translate(18," << top + ph / 2
        << ") rotate(-90)\" text-anchor=\"middle\">mean spectrum error</text>\n";

    auto series = [&](std::size_t idx, const std::string& name, const std::vector<std::pair<double, const CellSummary*>>& pts) {
        const char* colour = detail::palette(idx);
        std::string path;
        for (const auto& [x, c] : pts) {
            if (c->n == 0 || !(c->mean > 0.0))
                continue;
            const double y = ypix(c->mean);
            path += (path.empty() ? "M" : " L") + svg_num(x) + ' ' + svg_num(y);
            out << "<line x1=\"" << svg_num(x) << "\" y1=\"" << svg_num(ypix(c->mean + c->stderr_)) << "\" x2=\""
                << svg_num(x) << "\" y2=\"" << svg_num(ypix(std::max(c->mean - c->stderr_, 1e-300)))
                << "\" stroke=\"" << colour << "\"/>\n";
            out << "<circle cx=\"" << svg_num(x) << "\" cy=\"" << svg_num(y) << "\" r=\"3\" fill=\"" << colour
                << "\"/>\n";
        }
        if (kind == PlotKind::counts && !path.empty())
            out << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << colour << "\"/>\n";
        const double ly = top + 14.0 + 18.0 * static_cast<double>(idx);
        out << "<rect x=\"" << left + pw + 12 << "\" y=\"" << svg_num(ly - 9) << "\" width=\"10\" height=\"10\" fill=\""
            << colour << "\"/>\n";
        out << "<text x=\"" << left + pw + 28 << "\" y=\"" << svg_num(ly) << "\">" << detail::xml_escape(name)
            << "</text>\n";
    };

    auto find = [&](const std::string& k, std::uint64_t n) -> const CellSummary* {
        for (const auto& c : cells)
            if (c.kernel == k && c.total_counts == n)
                return &c;
        return nullptr;
    };
    if (kind == PlotKind::counts) {
        for (std::size_t k = 0; k < kernels.size(); ++k) {
            std::vector<std::pair<double, const CellSummary*>> pts;
            for (auto n : levels)
                if (const auto* c = find(kernels[k], n))
                    pts.emplace_back(count_x(n), c);
            series(k, kernels[k], pts);
        }
    } else {
        const double slot = pw / static_cast<double>(kernels.size());
        for (std::size_t l = 0; l < levels.size(); ++l) {
            std::vector<std::pair<double, const CellSummary*>> pts;
            const double shift = slot * 0.6 * ((static_cast<double>(l) + 0.5) / static_cast<double>(levels.size()) - 0.5);
            for (std::size_t k = 0; k < kernels.size(); ++k)
                if (const auto* c = find(kernels[k], levels[l]))
                    pts.emplace_back(x_pos[k] + shift, c);
            series(l, std::to_string(levels[l]) + " counts", pts);
        }
    }
    out << "</svg>\n";
}

inline void emit_svg(const EnsembleTable& t, const std::string& path, PlotKind kind)
{
    require(!t.rows.empty(), ErrorCode::invalid_argument, "refusing to plot an empty table");
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io_error, "cannot write '" + path + "'");
    write_svg(out, t, kind);
    require(static_cast<bool>(out), ErrorCode::io_error, "write failed for '" + path + "'");
}

inline nlohmann::json to_json(const UnfoldResult& r)
{
    nlohmann::json lines = nlohmann::json::array();
    for (std::size_t k = 0; k < r.lines.size(); ++k) {
        nlohmann::json l{{"energy_keV", r.lines[k].energy}, {"amplitude", r.lines[k].amplitude}};
        if (k < r.diagnostics.size()) {
            l["column"] = r.diagnostics[k].column;
            l["max_correlation"] = r.diagnostics[k].max_correlation;
        }
        lines.push_back(std::move(l));
    }
    return {{"lines", lines}, {"residual_norm", r.residual_norm}, {"warnings", r.warnings}};
}

inline nlohmann::json to_json(const std::vector<CellSummary>& cells)
{
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : cells)
        out.push_back({{"kernel", c.kernel},
                       {"total_counts", c.total_counts},
                       {"n", c.n},
                       {"failures", c.failures},
                       {"mean_error", c.mean},
                       {"stderr", c.stderr_}});
    return out;
}

} // namespace dku
