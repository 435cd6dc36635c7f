#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "vrcaptcha/harness.hpp"
#include "vrcaptcha/http.hpp"

using namespace vrcaptcha;

namespace {

nlohmann::json read_json(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw Malformed("cannot open " + path);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Malformed(path + " is not a JSON object");
    return j;
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VR CAPTCHA gateway and simulation harness"};
    app.require_subcommand(1);

    std::string config_path, out;
    std::uint64_t seed = 0;
    std::size_t n = 0;

    auto* run = app.add_subcommand("run", "Run a simulated-population experiment");
    auto* cal = app.add_subcommand("calibrate", "Regenerate the calibration artifact");
    auto* rank = app.add_subcommand("rank", "Rank challenge kinds by mean simulated solve time");
    auto* serve = app.add_subcommand("serve", "Start the HTTP gateway");
    for (auto* sub : {run, cal, serve}) sub->add_option("--config", config_path, "JSON config file");
    for (auto* sub : {run, cal, serve}) sub->add_option("--seed", seed, "Root seed");
    for (auto* sub : {run, cal}) sub->add_option("--n", n, "Attempts per cell (run) or traces per class (calibrate)");
    run->add_option("--out", out, "Output directory");
    cal->add_option("--out", out, "Artifact path")->default_val("calibration.json");
    std::string csv_path;
    rank->add_option("csv", csv_path, "attempts.csv from `run`")->required();
    std::string corpus_path;
    cal->add_option("--corpus", corpus_path, "Also write the generated corpus (JSON lines)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto cfg = experiment_config_from_json(read_json(config_path));
            if (run->count("--seed")) cfg.seed = seed;
            if (run->count("--n")) cfg.n_per_cell = n;
            if (run->count("--out")) cfg.output_path = out;
            validate(cfg);
            const auto rep = run_experiment(cfg);
            std::cout << "wrote " << rep.rows.size() << " attempts to " << rep.attempts_path << "\n";
            std::cout << "wrote summary to " << rep.summary_path << "\n";
        } else if (*cal) {
            auto cfg = calibration_config_from_json(read_json(config_path));
            if (cal->count("--seed")) cfg.seed = seed;
            if (cal->count("--n")) cfg.n_per_class = n;
            if (!corpus_path.empty()) cfg.corpus_path = corpus_path;
            const auto art = calibrate(cfg);
            save_calibration(art, out);
            std::cout << "wrote " << out << " (motion theta " << art.motion_theta << ")\n";
        } else if (*rank) {
            int pos = 1;
            for (const auto& [kind, mean] : rank_report(read_file(csv_path)))
                std::cout << pos++ << ' ' << kind << ' ' << fixed6(mean) << "\n";
        } else if (*serve) {
            auto cfg = load_gateway_config(config_path);
            if (cfg.calibration_path.empty()) throw Malformed("serve needs a calibration artifact (calibration_path)");
            const Catalogs catalogs = cfg.catalogs_path.empty() ? builtin_catalogs() : load_catalogs(cfg.catalogs_path);
            std::optional<std::uint64_t> fixed_seed;
            if (serve->count("--seed")) fixed_seed = seed;
            Gateway gateway(cfg, catalogs, load_calibration(cfg.calibration_path), wall_clock_seconds, fixed_seed);
            httplib::Server server;
            mount_routes(server, gateway);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on " << cfg.host << ':' << cfg.port << "\n";
            if (!server.listen(cfg.host, cfg.port)) throw Malformed("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
