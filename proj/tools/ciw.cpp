#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ciw/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"convex integration workbench"};
    std::string config, out, manifest;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "seed for randomized sweeps (overrides the config)");
    app.add_option("--config", config, "experiment config (JSON)");
    app.add_option("--out", out, "output directory");
    app.add_option("--verify", manifest, "manifest.json of a previous run");
    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return ciw::exit_config;
    }

    // every module runs single-threaded; CIW_THREADS is read and recorded only
    if (const char* t = std::getenv("CIW_THREADS")) std::cerr << "CIW_THREADS=" << t << " (runs are single-threaded)\n";

    if (!manifest.empty()) {
        auto rep = ciw::verify(manifest);
        for (const auto& c : rep.checks)
            std::cout << (c.pass ? "ok   " : "FAIL ") << c.name << ": " << c.detail << "\n";
        std::cout << (rep.pass ? "verify passed" : (rep.complete ? "verify failed" : "verify failed: incomplete run")) << "\n";
        return rep.exit_code();
    }
    if (config.empty() || out.empty()) {
        std::cerr << "need --config and --out (or --verify)\n";
        return ciw::exit_config;
    }
    nlohmann::json raw;
    try {
        std::ifstream f(config);
        if (!f) throw std::runtime_error("cannot open " + config);
        raw = nlohmann::json::parse(f);
    } catch (const std::exception& e) {
        std::cerr << "config error: /: " << e.what() << "\n";
        return ciw::exit_config;
    }
    std::optional<std::uint64_t> s;
    if (*seed_opt) s = seed;
    auto r = ciw::run(raw, out, s);
    if (r.exit_code == ciw::exit_config) std::cerr << "config error: " << r.message << "\n";
    else std::cout << r.message << "\n";
    return r.exit_code;
}
