#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stamesh/experiments.hpp"

using namespace stamesh;

namespace {

std::vector<uint64_t> parse_seeds(const std::string& csv) {
    std::vector<uint64_t> seeds;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        seeds.push_back(std::stoull(csv.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stamesh — decentralized sense-trigger-actuate control plane simulator"};
    app.require_subcommand(1);

    // run
    std::string run_file, run_seeds, run_out = "out";
    int run_jobs = 2;
    bool run_trace = false;
    auto* run = app.add_subcommand("run", "run a scenario's experiment and write CSV outputs");
    run->add_option("scenario", run_file, "scenario JSON file")->required();
    run->add_option("--seeds", run_seeds, "comma-separated seed list (default: config seeds)");
    run->add_option("--out", run_out, "output directory");
    run->add_option("--jobs", run_jobs, "parallel trials");
    run->add_flag("--trace", run_trace, "also dump one event trace per seed");

    // verify
    std::string ver_file, ver_seeds;
    int ver_jobs = 2;
    auto* verify = app.add_subcommand("verify", "run the formal-property monitors on a scenario");
    verify->add_option("scenario", ver_file, "scenario JSON file")->required();
    verify->add_option("--seeds", ver_seeds, "comma-separated seed list");
    verify->add_option("--jobs", ver_jobs, "parallel trials");

    // avail
    int av_S = 100, av_G = 30, av_k = 11, av_f = 5, av_Fmax = 60;
    uint64_t av_mc = 0, av_seed = 1;
    std::string av_out = "out";
    auto* avail = app.add_subcommand("avail", "closed-form availability curve");
    avail->add_option("--S", av_S, "smart node count");
    avail->add_option("--G", av_G, "group count");
    avail->add_option("--k", av_k, "group size");
    avail->add_option("--f", av_f, "failure budget");
    avail->add_option("--F-max", av_Fmax, "sweep F from 0 to this");
    avail->add_option("--mc", av_mc, "Monte Carlo trials per sampled point (0 = skip)");
    avail->add_option("--seed", av_seed, "Monte Carlo seed");
    avail->add_option("--out", av_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            Scenario s = load_scenario_file(run_file);
            s.cfg = validate_config(s.cfg);
            std::vector<uint64_t> seeds = run_seeds.empty() ? s.cfg.seeds : parse_seeds(run_seeds);
            if (run_trace) {
                std::filesystem::create_directories(run_out);
                for (uint64_t seed : seeds) {
                    TrialResult res = run_trial(s, seed);
                    write_trace(res.trace, run_out + "/trace_seed" + std::to_string(seed) + ".tsv");
                }
            }
            return run_experiment(s, seeds, run_jobs, run_out, std::cout);
        }
        if (verify->parsed()) {
            Scenario s = load_scenario_file(ver_file);
            s.cfg = validate_config(s.cfg);
            std::vector<uint64_t> seeds = ver_seeds.empty() ? s.cfg.seeds : parse_seeds(ver_seeds);
            VerifyReport rep = verify_scenario(s, seeds, ver_jobs);
            for (const auto& [prop, ok] : rep.verdicts)
                std::cout << (ok ? "PASS" : "FAIL") << "  " << prop << "\n";
            size_t shown = 0;
            for (const auto& v : rep.violations) {
                if (shown++ >= 10) {
                    std::cout << "  ... " << rep.violations.size() - 10 << " more\n";
                    break;
                }
                std::cout << "  violation[" << v.property << "] t=" << v.t << ": " << v.detail
                          << "\n";
            }
            return rep.all_pass() ? 0 : 2;
        }
        if (avail->parsed()) {
            AvailabilityParams p{av_S, av_G, av_k, av_f, 0};
            auto rows = experiment_availability(p, av_Fmax, av_mc, av_seed, av_out);
            for (const auto& r : rows)
                std::cout << "F=" << r.F << " P=" << format_double(r.formula) << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
