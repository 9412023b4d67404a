#include "dkunfold/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace dku;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool& dump)
{
    cmd->add_flag("--dump-config", dump, "print the effective configuration and exit");
    cmd->add_option("--config", c.config_path, "key = value experiment config");
    cmd->add_option("--seed", c.seed, "base seed (overrides the config)");
    cmd->add_option("--out", c.out, "output path");
}

ExperimentConfig load(const Common& c)
{
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    if (c.seed)
        cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

std::string out_path(const Common& c, const ExperimentConfig& cfg, const std::string& fallback)
{
    const std::filesystem::path p =
        c.out.empty() ? std::filesystem::path(cfg.output_dir) / fallback : std::filesystem::path(c.out);
    if (p.has_parent_path())
        std::filesystem::create_directories(p.parent_path());
    return p.string();
}

std::ofstream open_out(const std::string& path)
{
    std::ofstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorCode::io_error, "cannot write '" + path + "'");
    return f;
}

std::string quote(const std::string& s)
{
    std::string q;
    for (char ch : s) {
        if (ch == '"' || ch == '\\')
            q += '\\';
        q += ch == '\n' ? ' ' : ch;
    }
    return '"' + q + '"';
}

void write_lines_csv(std::ostream& out, const LineList& lines)
{
    out << "energy_keV,amplitude\n";
    for (const auto& l : lines)
        out << format_g17(l.energy) << ',' << format_g17(l.amplitude) << '\n';
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Gamma-ray line unfolding with matched derivative-kernel pairs"};
    app.require_subcommand(0, 1);
    bool dump = false;
    app.add_flag("--dump-config", dump, "print the effective configuration and exit");

    Common design_c, sim_c, unfold_c, ens_c, plot_c;

    auto* design = app.add_subcommand("design-kernels", "design the configured kernel pairs and write the catalog");
    add_common(design, design_c, dump);

    auto* simulate_cmd = app.add_subcommand("simulate", "simulate one Poisson-realised channel histogram");
    add_common(simulate_cmd, sim_c, dump);
    std::uint64_t sim_counts = 0;
    std::string truth_path;
    simulate_cmd->add_option("--counts", sim_counts, "total counts (default: highest configured level)");
    simulate_cmd->add_option("--truth", truth_path, "also write the true line list as CSV");

    auto* unfold_cmd = app.add_subcommand("unfold", "unfold a histogram file into a line list");
    add_common(unfold_cmd, unfold_c, dump);
    std::string unfold_input, unfold_kernel = "DK5", json_path;
    unfold_cmd->add_option("--input", unfold_input, "histogram text file")->required();
    unfold_cmd->add_option("--kernel", unfold_kernel, "kernel pair label");
    unfold_cmd->add_option("--json", json_path, "also write the result as JSON");

    auto* ensemble = app.add_subcommand("ensemble", "run kernels x count levels x trials and write the table");
    add_common(ensemble, ens_c, dump);
    std::size_t threads = 0;
    ensemble->add_option("--threads", threads, "worker threads (overrides the config)");

    auto* plot = app.add_subcommand("plot", "render an ensemble CSV as SVG");
    add_common(plot, plot_c, dump);
    std::string plot_input, plot_kind = "counts";
    plot->add_option("--input", plot_input, "ensemble CSV")->required();
    plot->add_option("--kind", plot_kind, "counts or kernels");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: code=usage message=" << quote(e.what()) << '\n';
        return 2;
    }

    if (app.get_subcommands().empty()) {
        if (dump) {
            dump_config(std::cout, ExperimentConfig{});
            return 0;
        }
        std::cerr << "error: code=usage message=\"a verb is required\"\n" << app.help();
        return 2;
    }

    try {
        const Common& common = design->parsed()          ? design_c
                               : simulate_cmd->parsed()  ? sim_c
                               : unfold_cmd->parsed()    ? unfold_c
                               : ensemble->parsed()      ? ens_c
                                                         : plot_c;
        auto cfg = load(common);
        if (ensemble->parsed() && threads > 0)
            cfg.threads = threads;
        if (dump) {
            dump_config(std::cout, cfg);
            return 0;
        }

        if (design->parsed()) {
            std::vector<KernelPair> pairs;
            for (const auto& k : cfg.kernels) {
                pairs.push_back(resolve_kernel(k, cfg.design));
                DesignSpec s = cfg.design;
                s.support = pairs.back().support();
                std::cout << k << " matching_error=" << format_g17(matching_error(pairs.back(), s)) << '\n';
            }
            const auto path = out_path(common, cfg, "kernels.csv");
            auto f = open_out(path);
            write_catalog(f, pairs);
        } else if (simulate_cmd->parsed()) {
            const auto sim = prepare(cfg);
            const auto s = simulate(sim, sim_counts ? sim_counts : cfg.counts.back(), cfg.seed);
            const auto path = out_path(common, cfg, "histogram.txt");
            auto f = open_out(path);
            write_histogram(f, s.realized);
            if (!truth_path.empty()) {
                auto t = open_out(truth_path);
                write_lines_csv(t, s.truth);
            }
            std::cout << "channels=" << s.realized.size() << " total=" << format_g17(s.realized.total()) << '\n';
        } else if (unfold_cmd->parsed()) {
            std::ifstream in(unfold_input);
            require(static_cast<bool>(in), ErrorCode::io_error, "cannot open '" + unfold_input + "'");
            const auto hist = read_histogram(in);
            const auto rhat = build_response(cfg);
            const auto result = unfold(hist, rhat, resolve_kernel(unfold_kernel, cfg.design), cfg.unfold);
            const auto path = out_path(common, cfg, "lines.csv");
            auto f = open_out(path);
            write_result_csv(f, result);
            if (!json_path.empty()) {
                auto j = open_out(json_path);
                j << to_json(result).dump(2) << '\n';
            }
            for (const auto& w : result.warnings)
                std::cerr << "warning: " << w << '\n';
            std::cout << "lines=" << result.lines.size() << " residual=" << format_g17(result.residual_norm) << '\n';
        } else if (ensemble->parsed()) {
            const auto table = run_ensemble(cfg);
            emit_csv(table, out_path(common, cfg, "ensemble.csv"));
            std::cout << to_json(summarize(table)).dump(2) << '\n';
        } else {
            const auto table = load_csv(plot_input);
            emit_svg(table, out_path(common, cfg, "ensemble.svg"), parse_plot_kind(plot_kind));
        }
    } catch (const Error& e) {
        std::cerr << "error: code=" << to_string(e.code()) << " message=" << quote(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: code=internal_error message=" << quote(e.what()) << '\n';
        return 1;
    }
    return 0;
}
