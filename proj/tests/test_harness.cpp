#include "dkunfold/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace dku;

namespace {

// 1..1025 keV, 512 channels: same physics as the defaults on half the range.
ExperimentConfig small_config()
{
    ExperimentConfig c;
    c.grid_points = 2048;
    c.kernels = {"DK5", "gauss-5"};
    c.counts = {1000, 1000000};
    c.trials = 3;
    c.seed = 17;
    return c;
}

const Simulation& small_sim()
{
    static const Simulation sim = prepare(small_config());
    return sim;
}

std::string csv_of(const EnsembleTable& t)
{
    std::stringstream ss;
    write_ensemble_csv(ss, t);
    return ss.str();
}

std::filesystem::path temp_path(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("dkunfold_test_" + name);
}

} // namespace

TEST(Config, DumpParseRoundTrip)
{
    auto c = small_config();
    c.design.weighting = Weighting::raised_cosine;
    c.record_runtime = true;
    c.output_dir = "results/run 1";
    std::stringstream first;
    dump_config(first, c);
    const auto back = parse_config(first);
    std::stringstream second;
    dump_config(second, back);
    EXPECT_EQ(first.str(), second.str());
    EXPECT_EQ(back.kernels, c.kernels);
    EXPECT_EQ(back.counts, c.counts);
    EXPECT_EQ(back.design.weighting, Weighting::raised_cosine);
    EXPECT_EQ(back.output_dir, "results/run 1");
}

TEST(Config, CommentsBlankLinesAndOverrides)
{
    std::stringstream in("# study\n\n  trials = 7   # per cell\nkernels = DK3, gauss-5:0.8\ncounts=10,20\n");
    const auto c = parse_config(in);
    EXPECT_EQ(c.trials, 7u);
    EXPECT_EQ(c.kernels, (std::vector<std::string>{"DK3", "gauss-5:0.8"}));
    EXPECT_EQ(c.counts, (std::vector<std::uint64_t>{10, 20}));
    EXPECT_EQ(c.grid_points, ExperimentConfig{}.grid_points);
    c.validate();
}

TEST(Config, RejectsMalformedText)
{
    for (const char* text : {"trials 3\n", "bogus = 1\n", "trials = -1\n", "trials = 2x\n", "detector.fwhm_a = \n",
                             "record_runtime = maybe\n", "design.weighting = hann\n"}) {
        std::stringstream in(text);
        EXPECT_THROW(parse_config(in), Error) << text;
    }
}

TEST(Config, ValidationRules)
{
    auto expect_invalid = [](auto mutate) {
        auto c = small_config();
        mutate(c);
        EXPECT_THROW(c.validate(), Error);
    };
    expect_invalid([](ExperimentConfig& c) { c.trials = 0; });
    expect_invalid([](ExperimentConfig& c) { c.counts = {1000, 1000}; });
    expect_invalid([](ExperimentConfig& c) { c.counts = {10000, 1000}; });
    expect_invalid([](ExperimentConfig& c) { c.counts = {0, 1000}; });
    expect_invalid([](ExperimentConfig& c) { c.counts.clear(); });
    expect_invalid([](ExperimentConfig& c) { c.kernels = {"DK5", "laplace-5"}; });
    expect_invalid([](ExperimentConfig& c) { c.kernels.clear(); });
    expect_invalid([](ExperimentConfig& c) { c.lines_range_low = 0.9; });
    expect_invalid([](ExperimentConfig& c) { c.grid_e_min = 0.1; });
    EXPECT_NO_THROW(small_config().validate());
    EXPECT_NO_THROW(ExperimentConfig{}.validate());
}

TEST(RandomLines, RespectWindowSeparationAndAmplitudes)
{
    const auto c = small_config();
    const auto g = c.grid();
    const double span = g.upper_edge() - g.lower_edge();
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const auto lines = random_lines(c, rng);
        ASSERT_EQ(lines.size(), c.lines_count);
        for (std::size_t k = 0; k < lines.size(); ++k) {
            const auto& l = lines[k];
            EXPECT_GE(l.energy, g.lower_edge() + 0.2 * span - g.spacing());
            EXPECT_LE(l.energy, g.lower_edge() + 0.8 * span + g.spacing());
            EXPECT_EQ(l.energy, g.energy(g.nearest_index(l.energy)));
            EXPECT_GE(l.amplitude, 1.0);
            EXPECT_LE(l.amplitude, 10.0);
            if (k > 0) {
                const double w = std::max(c.detector.fwhm(l.energy), c.detector.fwhm(lines[k - 1].energy));
                EXPECT_GE(l.energy - lines[k - 1].energy, 3.0 * w);
            }
        }
    }
}

TEST(RandomLines, ImpossiblePackingIsReported)
{
    auto c = small_config();
    c.lines_count = 40;
    Rng rng(1);
    EXPECT_THROW(random_lines(c, rng), Error);
}

TEST(Simulate, ExpectedHistogramHoldsTheRequestedCounts)
{
    const auto s = simulate(small_sim(), 250000, 3);
    EXPECT_NEAR(s.expected.total(), 250000.0, 1e-6);
    EXPECT_EQ(s.realized.mode, HistogramMode::realized);
    EXPECT_NEAR(s.realized.total(), 250000.0, 5 * std::sqrt(250000.0));
    const auto refold = channelize(fold(s.truth, small_sim().rhat), 2.0, small_sim().rhat.grid.lower_edge());
    for (std::size_t k = 0; k < refold.size(); ++k)
        EXPECT_NEAR(refold.counts[k], s.expected.counts[k], 1e-9 * (1.0 + s.expected.counts[k]));
}

TEST(RunTrial, IsDeterministic)
{
    const auto a = run_trial(small_sim(), "DK5", 10000, 99);
    const auto b = run_trial(small_sim(), "DK5", 10000, 99);
    EXPECT_EQ(a, b);
    EXPECT_FALSE(a.failed());
    EXPECT_GE(a.error, 0.0);
    EXPECT_EQ(a.runtime_ms, 0.0);
    EXPECT_NE(run_trial(small_sim(), "DK5", 10000, 100).error, a.error);
}

TEST(RunTrial, SingleLineAtHighCountsIsAccurate)
{
    auto c = small_config();
    c.lines_count = 1;
    const auto row = run_trial(c, "DK5", 1000000, 2024);
    EXPECT_LT(row.error, 0.05);
    // pinned from the first verified run
    EXPECT_NEAR(row.error, 0.0050079302552673878, 1e-9);
}

TEST(RunTrial, ZeroCountsIsAConfigurationError)
{
    EXPECT_THROW(run_trial(small_config(), "DK5", 0, 1), Error);
    EXPECT_THROW(run_trial(small_sim(), "DK5", 0, 1), Error);
}

TEST(RunTrial, FailuresBecomeSentinelRows)
{
    const auto row = run_trial(small_sim(), "DK9", 1000, 1); // not prepared
    EXPECT_TRUE(row.failed());
    EXPECT_EQ(row.kernel, "DK9");
    EXPECT_EQ(row.seed, 1u);
}

TEST(RunEnsemble, CartesianProductInIndexOrder)
{
    const auto t = run_ensemble(small_sim());
    ASSERT_EQ(t.rows.size(), 12u);
    std::size_t i = 0;
    for (const auto& k : {"DK5", "gauss-5"})
        for (std::size_t level = 0; level < 2; ++level)
            for (std::size_t trial = 0; trial < 3; ++trial, ++i) {
                const auto& r = t.rows[i];
                EXPECT_EQ(r.kernel, k);
                EXPECT_EQ(r.total_counts, small_config().counts[level]);
                EXPECT_EQ(r.trial, trial);
                EXPECT_EQ(r.seed, trial_seed(17, level, trial));
                EXPECT_FALSE(r.failed());
                EXPECT_GE(r.error, 0.0);
            }
    // kernels share the simulated spectra
    EXPECT_EQ(t.rows[0].seed, t.rows[6].seed);
}

TEST(RunEnsemble, ThreadCountDoesNotChangeTheTable)
{
    Simulation threaded = small_sim();
    threaded.config.threads = 3;
    EXPECT_EQ(csv_of(run_ensemble(threaded)), csv_of(run_ensemble(small_sim())));
}

TEST(RunEnsemble, RerunIsBitIdentical)
{
    const auto a = summarize(run_ensemble(small_sim()));
    const auto b = summarize(run_ensemble(small_sim()));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].mean, b[i].mean);
        EXPECT_EQ(a[i].stderr_, b[i].stderr_);
    }
}

TEST(RunEnsemble, ErrorFallsWithStatistics)
{
    Simulation sim = small_sim();
    sim.config.trials = 12;
    const auto cells = summarize(run_ensemble(sim));
    for (const auto& k : sim.config.kernels) {
        double low = 0.0, high = 0.0;
        for (const auto& c : cells)
            if (c.kernel == k)
                (c.total_counts == 1000 ? low : high) = c.mean;
        EXPECT_LE(high, low) << k;
    }
}

TEST(RunEnsemble, MeansAgreeAcrossBaseSeeds)
{
    // Statistical form: the two ensemble means differ by less than three
    // combined standard errors at 100 trials per cell.
    Simulation a = small_sim();
    a.config.kernels = {"DK5"};
    a.config.counts = {100000};
    a.config.trials = 100;
    Simulation b = a;
    b.config.seed = 18;
    const auto ca = summarize(run_ensemble(a)).front();
    const auto cb = summarize(run_ensemble(b)).front();
    EXPECT_LT(std::abs(ca.mean - cb.mean), 3.0 * std::hypot(ca.stderr_, cb.stderr_));
}

TEST(EnsembleCsv, HeaderAndLineCount)
{
    const auto text = csv_of(run_ensemble(small_sim()));
    EXPECT_EQ(text.substr(0, text.find('\n')), "kernel,total_counts,trial,seed,error,runtime_ms");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 13);
}

TEST(EnsembleCsv, EmitParseRoundTrip)
{
    auto t = run_ensemble(small_sim());
    t.rows[4].runtime_ms = 12.375;
    const auto path = temp_path("roundtrip.csv");
    emit_csv(t, path.string());
    const auto back = load_csv(path.string());
    ASSERT_EQ(back.rows.size(), t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        EXPECT_EQ(back.rows[i], t.rows[i]) << i;
    std::filesystem::remove(path);

    EnsembleTable failed{{run_trial(small_sim(), "DK9", 1000, 1)}};
    std::stringstream ss(csv_of(failed));
    EXPECT_TRUE(read_ensemble_csv(ss).rows[0].failed());
}

TEST(EnsembleCsv, RejectsBadInputAndPaths)
{
    std::stringstream wrong_header("kernel,counts\nDK5,1\n");
    EXPECT_THROW(read_ensemble_csv(wrong_header), Error);
    std::stringstream short_row("kernel,total_counts,trial,seed,error,runtime_ms\nDK5,1,0\n");
    EXPECT_THROW(read_ensemble_csv(short_row), Error);
    EXPECT_THROW(emit_csv(EnsembleTable{}, temp_path("empty.csv").string()), Error);
    const auto t = run_ensemble(small_sim());
    EXPECT_THROW(emit_csv(t, "/nonexistent-dir/x.csv"), Error);
}

TEST(Statistics, SummaryAndPairedTestOracle)
{
    EnsembleTable t;
    const std::vector<double> a{1.3, 0.9, 1.5, 1.2, 1.4, 1.1}, b{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    for (std::size_t i = 0; i < a.size(); ++i) {
        t.rows.push_back({"A", 100, i, 1000 + i, a[i], 0.0});
        t.rows.push_back({"B", 100, i, 1000 + i, b[i], 0.0});
    }
    t.rows.push_back({"B", 100, 6, 2000, std::numeric_limits<double>::quiet_NaN(), 0.0});
    const auto cells = summarize(t);
    ASSERT_EQ(cells.size(), 2u);
    EXPECT_NEAR(cells[0].mean, 7.4 / 6.0, 1e-15);
    EXPECT_EQ(cells[1].failures, 1u);
    EXPECT_EQ(cells[1].n, 6u);
    const auto p = paired_comparison(t, "A", "B", 100);
    EXPECT_EQ(p.n, 6u);
    EXPECT_NEAR(p.mean_difference, 0.7 / 3.0, 1e-15);
    EXPECT_NEAR(p.t, 2.6457513110645907, 1e-12);
    EXPECT_NEAR(p.p_one_sided, 0.022829561890705816, 1e-12); // Student t survival function, 5 dof
}

TEST(Plot, SvgIsSelfContained)
{
    const auto t = run_ensemble(small_sim());
    for (auto kind : {PlotKind::counts, PlotKind::kernels}) {
        std::stringstream ss;
        write_svg(ss, t, kind);
        const auto svg = ss.str();
        EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
        EXPECT_NE(svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\""), std::string::npos);
        EXPECT_EQ(svg.substr(svg.size() - 7), "</svg>\n");
        EXPECT_EQ(svg.find("href"), std::string::npos);
        EXPECT_EQ(svg.find("nan"), std::string::npos);
        EXPECT_NE(svg.find("DK5"), std::string::npos);
    }
    EXPECT_EQ(parse_plot_kind("counts"), PlotKind::counts);
    EXPECT_THROW(parse_plot_kind("pie"), Error);
    EXPECT_THROW(emit_svg(EnsembleTable{}, temp_path("empty.svg").string(), PlotKind::counts), Error);
}

TEST(Json, UnfoldResultFields)
{
    UnfoldResult r;
    r.lines = {{661.75, 1234.5}};
    r.diagnostics = {{1321, 0.25}};
    r.residual_norm = 3.5;
    r.warnings = {"merged 1 candidate(s) sharing a response column"};
    const auto j = to_json(r);
    EXPECT_EQ(j["lines"][0]["energy_keV"], 661.75);
    EXPECT_EQ(j["lines"][0]["amplitude"], 1234.5);
    EXPECT_EQ(j["lines"][0]["column"], 1321);
    EXPECT_EQ(j["residual_norm"], 3.5);
    EXPECT_EQ(j["warnings"].size(), 1u);
}
