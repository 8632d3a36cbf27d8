#include "hadamard/pipeline.hpp"

#include "CLI11.hpp"

#include <tbb/global_control.h>

#include <iostream>

using namespace hadamard;

int main(int argc, char** argv) {
    CLI::App app{"Hadamard parametrix, wavefront and scaling-limit pipelines"};
    std::string command, config_path, out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    app.add_option("command", command, "coeffs | kernel | wavefront | predict-r | scaling | verify")
        ->required()
        ->check(CLI::IsMember(pipeline::command_names()));
    app.add_option("--config", config_path, "run configuration file")->required();
    app.add_option("--out", out_dir, "output directory (overrides output.dir)");
    app.add_option("--threads", threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    app.add_option("--seed", seed, "random seed (overrides run.seed)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : pipeline::kExitConfig;
    }

    std::optional<tbb::global_control> pool;
    if (threads > 0) pool.emplace(tbb::global_control::max_allowed_parallelism, static_cast<std::size_t>(threads));

    try {
        config::Config cfg = config::Config::load(config_path);
        if (!out_dir.empty()) cfg.set("output.dir", out_dir);
        if (seed) cfg.set("run.seed", std::to_string(*seed));
        pipeline::RunConfig rc = pipeline::parse_run_config(cfg);
        pipeline::CommandResult res = pipeline::run_command(command, rc);
        std::cout << res.report.dump(2) << "\n";
        if (res.exit_code != pipeline::kExitOk) std::cerr << "FAIL: " << command << "\n";
        return res.exit_code;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return pipeline::exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return pipeline::kExitFail;
    }
}
