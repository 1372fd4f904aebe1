// fbp: run a JSON scenario and write report.json plus CSV tables.

#include "fbp/scenario.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using fbp::scenario::json;

namespace {

bool write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
    return bool(f.flush());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Free-boundary and Nahm scenario runner"};
    app.require_subcommand(1);
    auto* run = app.add_subcommand("run", "run a scenario configuration");
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    run->add_option("config", config_path, "scenario JSON file")->required();
    run->add_option("--out", out_dir, "output directory (default: output.dir from the config, else out)");
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--threads", threads, "worker threads (computation is single-threaded)")->check(CLI::PositiveNumber);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    json cfg;
    {
        std::ifstream in(config_path);
        if (!in) {
            std::cerr << "error: cannot read config '" << config_path << "'\n";
            return 2;
        }
        try {
            cfg = json::parse(in);
        } catch (const json::parse_error& e) {
            std::cerr << "error: invalid JSON in '" << config_path << "': " << e.what() << "\n";
            return 2;
        }
    }
    if (out_dir.empty()) {
        out_dir = "out";
        if (cfg.is_object() && cfg.contains("output")) {
            const json& o = cfg["output"];
            if (!o.is_object() || (o.contains("dir") && !o["dir"].is_string())) {
                std::cerr << "error: output.dir must be a string\n";
                return 2;
            }
            if (o.contains("dir")) out_dir = o["dir"].get<std::string>();
        }
    }

    const auto rr = fbp::scenario::run_config(cfg, seed, threads);
    for (const auto& line : rr.log) std::cout << line << "\n";

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    bool written = !ec && write_file(fs::path(out_dir) / "report.json", fbp::scenario::report_text(rr.report));
    for (const auto& t : rr.tables)
        written = written && write_file(fs::path(out_dir) / (t.name + ".csv"), fbp::scenario::csv(t));
    if (!written) {
        std::cerr << "error: cannot write output to '" << out_dir << "'\n";
        return 1;
    }

    if (!rr.message.empty()) std::cerr << "error: " << rr.message << "\n";
    for (const auto& c : rr.report["checks"])
        std::cout << "check " << c["name"].get<std::string>() << ": " << (c["pass"].get<bool>() ? "pass" : "FAIL") << "\n";
    std::cout << "status: " << rr.report["status"].get<std::string>() << "\n";
    return fbp::scenario::exit_code(rr.status);
}
