#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icedepth/error.hpp"
#include "icedepth/pipeline.hpp"

namespace {

using namespace icedepth;

std::string flag_name(const std::string& key) {
    std::string s = key;
    for (char& c : s) {
        if (c == '_') c = '-';
    }
    return "--" + s;
}

struct Common {
    std::string config;
    std::string out;
    bool force = false;
    bool timings = false;
    std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("-c,--config", c.config, "scenario config file (key = value text or JSON)");
    app->add_option("-o,--out", c.out, "output directory")->required();
    app->add_flag("--force", c.force, "overwrite existing outputs");
    app->add_flag("--timings", c.timings, "record stage timings in the report");
    for (const auto& f : config_fields()) {
        if (f.key == "emit") continue;
        app->add_option_function<std::string>(
            flag_name(f.key), [&c, key = f.key](const std::string& v) { c.overrides[key] = v; }, f.help);
    }
    app->add_option_function<std::string>(
        "--emit", [&c](const std::string& v) { c.overrides["emit"] = v; }, "table format: tsv or json")
        ->check(CLI::IsMember({"tsv", "json"}));
}

ScenarioConfig build_config(const Common& c) {
    ScenarioConfig cfg = c.config.empty() ? ScenarioConfig{} : load_scenario(c.config);
    for (const auto& [k, v] : c.overrides) {
        if (k == "environment") {
            cfg.environment = v;
        } else {
            set_config_value(cfg, k, v);
        }
    }
    return cfg;
}

CommandOptions command_options(const Common& c) { return {c.out, c.force, c.timings}; }

void print_summary(const RunReport& r) {
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& o : r.outcomes) {
        if (o.estimate) {
            std::cout << to_string(o.method) << ": " << o.estimate->depth << " m\n";
        } else {
            std::cout << to_string(o.method) << ": inapplicable (" << o.inapplicable << ")\n";
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Source depth estimation for a single hydrophone in surface-duct deep water"};
    app.require_subcommand(1);

    Common sim_opts, ana_opts, est_opts;
    auto* sim = app.add_subcommand("simulate", "synthesise the received signal, eigenrays and dispersion table");
    add_common(sim, sim_opts);

    auto* ana = app.add_subcommand("analyze", "separate modes and extract amplitudes, limits and arrivals");
    std::string signal_path;
    ana->add_option("signal", signal_path, "signal file (.txt or .wav)")->required()->check(CLI::ExistingFile);
    add_common(ana, ana_opts);

    auto* est = app.add_subcommand("estimate", "estimate source depth from analysis outputs");
    std::string analysis_dir;
    std::string method = "all";
    est->add_option("analysis", analysis_dir, "directory written by analyze")->required()->check(CLI::ExistingDirectory);
    est->add_option("-m,--method", method, "amplitude, cutoff, tdoa or all")
        ->check(CLI::IsMember({"amplitude", "cutoff", "tdoa", "all"}));
    add_common(est, est_opts);

    auto* schema = app.add_subcommand("schema", "print every config key with its default and meaning");

    CLI11_PARSE(app, argc, argv);

    std::string stage = "config";
    try {
        if (schema->parsed()) {
            const ScenarioConfig def;
            for (const auto& f : config_fields()) {
                std::cout << f.key << " = " << f.get(def) << "    # " << f.help << "\n";
            }
            return 0;
        }
        if (sim->parsed()) {
            const ScenarioConfig cfg = build_config(sim_opts);
            stage = "simulate";
            print_summary(cmd_simulate(cfg, command_options(sim_opts)));
        } else if (ana->parsed()) {
            const ScenarioConfig cfg = build_config(ana_opts);
            stage = "analyze";
            print_summary(cmd_analyze(cfg, signal_path, command_options(ana_opts)));
        } else if (est->parsed()) {
            const ScenarioConfig cfg = build_config(est_opts);
            std::vector<Method> methods;
            if (method == "all") {
                methods = {Method::Amplitude, Method::Cutoff, Method::Tdoa};
            } else {
                methods = {method_from_string(method)};
            }
            stage = "estimate";
            print_summary(cmd_estimate(cfg, analysis_dir, methods, command_options(est_opts)));
        }
    } catch (const ParseError& e) {
        std::cerr << "icedepth " << stage << ": " << e.what() << "\n";
        return 2;
    } catch (const InvalidInput& e) {
        std::cerr << "icedepth " << stage << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "icedepth " << stage << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
