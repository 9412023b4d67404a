#include "dkunfold/folding.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace dku;

namespace {

EnergyGrid test_grid() { return EnergyGrid::from_spacing(1.25, 0.5, 1200); } // cells from 1 keV to 601 keV

ResponseMatrix photopeak_response(const EnergyGrid& g, double fwhm_a = 1.0)
{
    DetectorModel m;
    m.fwhm_a = fwhm_a;
    m.photofraction = 1.0;
    m.compton_fraction = 0.0;
    return detector_response_matrix(m, g);
}

ResponseMatrix mixed_response(const EnergyGrid& g)
{
    DetectorModel m;
    m.fwhm_a = 1.0;
    m.photofraction = 0.5;
    m.compton_fraction = 0.4;
    return modified_response(detector_response_matrix(m, g), medium_kernel(MediumModel::constant(0.9, 0.2), g));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace

TEST(Fold, EmptyLineListGivesZeroSpectrum)
{
    const auto g = test_grid();
    const auto s = fold({}, photopeak_response(g));
    for (double d : s.density)
        EXPECT_EQ(d, 0.0);
}

TEST(Fold, SingleLineIntegratesToUnitMass)
{
    const auto g = test_grid();
    const auto s = fold({{300.0, 1.0}}, photopeak_response(g));
    EXPECT_NEAR(s.integral(), 1.0, 1e-6);
}

TEST(Fold, IsLinearInTheLineList)
{
    const auto g = test_grid();
    const auto r = mixed_response(g);
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> energy(20.0, 580.0), amp(0.0, 1000.0), coef(0.0, 3.0);
    for (int trial = 0; trial < 10; ++trial) {
        LineList l1, l2;
        for (int k = 0; k < 3; ++k) {
            l1.push_back({energy(gen), amp(gen)});
            l2.push_back({energy(gen), amp(gen)});
        }
        const double alpha = coef(gen), beta = coef(gen);
        LineList combined;
        for (auto l : l1)
            combined.push_back({l.energy, alpha * l.amplitude});
        for (auto l : l2)
            combined.push_back({l.energy, beta * l.amplitude});
        const auto f = fold(combined, r);
        const auto f1 = fold(l1, r);
        const auto f2 = fold(l2, r);
        double scale = 0.0;
        for (double d : f.density)
            scale = std::max(scale, std::abs(d));
        for (std::size_t i = 0; i < f.size(); ++i)
            EXPECT_NEAR(f.density[i], alpha * f1.density[i] + beta * f2.density[i], 1e-12 * scale);
    }
}

TEST(Fold, SnapsToNearestColumnAndReportsOffset)
{
    const auto g = test_grid();
    const auto snap = snap_to_grid(g, 300.4);
    EXPECT_DOUBLE_EQ(g.energy(snap.index), 300.25);
    EXPECT_NEAR(snap.offset, 0.15, 1e-12);
    EXPECT_EQ(snap_to_grid(g, 300.5).index, snap.index); // exact midpoint resolves downwards
}

TEST(Fold, RejectsLineOutsideGrid)
{
    const auto g = test_grid();
    EXPECT_THROW(fold({{900.0, 1.0}}, photopeak_response(g)), Error);
}

TEST(Channelize, ConstantDensity)
{
    const auto g = test_grid();
    auto s = ContinuousSpectrum::zeros(g);
    std::fill(s.density.begin(), s.density.end(), 2.5);
    const auto h = channelize(s, 2.0, g.lower_edge());
    EXPECT_EQ(h.size(), 300u);
    for (double c : h.counts)
        EXPECT_NEAR(c, 5.0, 1e-12);
}

TEST(Channelize, ConservesCountsOverCoveredRange)
{
    const auto g = test_grid();
    const auto s = fold({{100.0, 1000.0}, {250.0, 300.0}, {480.0, 2000.0}}, mixed_response(g));
    for (double eps : {0.5, 2.0, 3.0}) {
        const auto h = channelize(s, eps, g.lower_edge() + 1.0);
        const auto per = static_cast<std::size_t>(std::lround(eps / g.spacing()));
        double covered = 0.0;
        for (std::size_t i = 2; i < 2 + h.size() * per; ++i)
            covered += s.density[i] * g.spacing();
        EXPECT_NEAR(h.total(), covered, 1e-9 * covered) << eps;
    }
}

TEST(Channelize, GaussianChannelMassesMatchErfIntervals)
{
    const auto g = test_grid();
    DetectorModel m;
    m.fwhm_a = 1.0;
    m.photofraction = 1.0;
    m.compton_fraction = 0.0;
    const double v = 400.25;
    const double sigma = m.fwhm(v) * fwhm_to_sigma;
    const auto s = fold({{v, 1.0}}, detector_response_matrix(m, g));
    const double eps = 2.0;
    const auto h = channelize(s, eps, g.lower_edge());
    for (std::size_t k = 0; k < h.size(); ++k) {
        const double lo = h.channel_low(k), hi = lo + eps;
        if (hi < v - 5 * sigma || lo > v + 5 * sigma)
            continue;
        EXPECT_NEAR(h.counts[k], normal_cdf((hi - v) / sigma) - normal_cdf((lo - v) / sigma), 1e-4) << k;
    }
}

TEST(Channelize, RejectsMisalignedChannels)
{
    const auto g = test_grid();
    const auto s = ContinuousSpectrum::zeros(g);
    EXPECT_THROW(channelize(s, 1.3, g.lower_edge()), Error);
    EXPECT_THROW(channelize(s, 2.0, g.lower_edge() + 0.2), Error);
    EXPECT_THROW(channelize(s, 2.0, g.lower_edge() - 0.5), Error);
}

TEST(PoissonRealize, FlatExpectationConcentrates)
{
    ChannelHistogram h;
    h.epsilon = 1.0;
    h.counts.assign(1000, 3.7);
    const auto r = poisson_realize(h, 1000000, 20240101);
    EXPECT_EQ(r.mode, HistogramMode::realized);
    const double sd = std::sqrt(1000.0);
    for (double c : r.counts) {
        EXPECT_EQ(c, std::floor(c));
        EXPECT_LT(std::abs(c - 1000.0), 5 * sd);
    }
}

TEST(PoissonRealize, DeterministicPerSeed)
{
    ChannelHistogram h;
    h.epsilon = 1.0;
    for (int k = 0; k < 64; ++k)
        h.counts.push_back(0.1 * k * k);
    EXPECT_EQ(poisson_realize(h, 50000, 5).counts, poisson_realize(h, 50000, 5).counts);
    EXPECT_NE(poisson_realize(h, 50000, 5).counts, poisson_realize(h, 50000, 6).counts);
}

TEST(PoissonRealize, ZeroExpectationStaysZero)
{
    ChannelHistogram h;
    h.epsilon = 1.0;
    h.counts.assign(16, 10.0);
    h.counts[7] = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed)
        EXPECT_EQ(poisson_realize(h, 100000, seed).counts[7], 0.0);
}

TEST(PoissonRealize, RejectsZeroMass)
{
    ChannelHistogram h;
    h.epsilon = 1.0;
    h.counts.assign(16, 0.0);
    EXPECT_THROW(poisson_realize(h, 100, 1), Error);
}

TEST(PoissonRealize, EnsembleMeanMatchesExpectation)
{
    ChannelHistogram h;
    h.epsilon = 1.0;
    for (int k = 0; k < 40; ++k)
        h.counts.push_back(0.5 + k); // means 0.5 .. 39.5 after scaling (straddles the sampler switch)
    const double total = h.total();
    std::vector<double> mean(h.size(), 0.0);
    const int seeds = 200;
    for (int s = 0; s < seeds; ++s) {
        const auto r = poisson_realize(h, static_cast<std::uint64_t>(total), 1000 + s);
        for (std::size_t k = 0; k < h.size(); ++k)
            mean[k] += r.counts[k] / seeds;
    }
    for (std::size_t k = 0; k < h.size(); ++k) {
        const double se = std::sqrt(h.counts[k] / seeds);
        EXPECT_LT(std::abs(mean[k] - h.counts[k]), 5 * se) << k;
    }
}

TEST(PoissonSampler, MomentsInBothRegimes)
{
    for (double lambda : {0.3, 4.0, 29.5, 30.0, 250.0, 1e5}) {
        Rng rng(99);
        const int n = 200000;
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto k = static_cast<double>(rng.poisson(lambda));
            s += k;
            s2 += k * k;
        }
        const double mean = s / n;
        const double var = s2 / n - mean * mean;
        EXPECT_LT(std::abs(mean - lambda), 5 * std::sqrt(lambda / n)) << lambda;
        EXPECT_NEAR(var / lambda, 1.0, 0.03) << lambda;
    }
}

TEST(PoissonSampler, StreamIsPinned)
{
    // mt19937_64 is fully specified by the standard, so these draws are portable.
    Rng rng(42);
    std::vector<std::uint64_t> draws;
    for (double lambda : {2.0, 2.0, 50.0, 50.0, 1000.0})
        draws.push_back(rng.poisson(lambda));
    Rng again(42);
    for (std::size_t i = 0; i < draws.size(); ++i)
        EXPECT_EQ(again.poisson(std::array{2.0, 2.0, 50.0, 50.0, 1000.0}[i]), draws[i]);
    EXPECT_EQ(std::mt19937_64(42)(), 13930160852258120406ull);
}

TEST(HistogramText, RoundTripAndCsv)
{
    ChannelHistogram h;
    h.epsilon = 2.0;
    h.origin = 1.0;
    for (int k = 0; k < 10; ++k)
        h.counts.push_back(k * 1.5 + 0.1);
    std::stringstream ss;
    write_histogram(ss, h);
    EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "epsilon=2 origin=1 mode=expected");
    const auto back = read_histogram(ss);
    EXPECT_EQ(back.counts, h.counts);
    EXPECT_EQ(back.epsilon, h.epsilon);

    const auto r = poisson_realize(h, 1000, 3);
    std::stringstream rs;
    write_histogram(rs, r);
    const auto rb = read_histogram(rs);
    EXPECT_EQ(rb.mode, HistogramMode::realized);
    EXPECT_EQ(rb.counts, r.counts);

    std::stringstream csv;
    write_histogram_csv(csv, h);
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "channel,energy_low,counts");
    std::getline(csv, line);
    EXPECT_EQ(line, "0,1,0.10000000000000001");
}

TEST(HistogramText, RejectsMalformedInput)
{
    std::stringstream bad("epsilon=1 origin=0 mode=guess\n1\n");
    EXPECT_THROW(read_histogram(bad), Error);
    std::stringstream short_hist("epsilon=1 origin=0 mode=expected\n1\n2\n");
    EXPECT_THROW(read_histogram(short_hist), Error);
    std::stringstream frac("epsilon=1 origin=0 mode=realized\n1\n2\n3\n4\n5\n6\n7\n8.5\n");
    EXPECT_THROW(read_histogram(frac), Error);
}
