#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rastream/bench.hpp"
#include "rastream/config.hpp"
#include "rastream/tiff.hpp"

namespace {

using namespace rastream;

std::string self_executable() {
    char buf[4096];
    const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) throw Error("cannot resolve own executable path");
    buf[n] = '\0';
    return buf;
}

int run_proc_transport(const std::string& config_path, int world,
                       const std::string& output_override) {
    const std::uint16_t port = pick_free_port();
    const std::string exe = self_executable();
    std::vector<pid_t> children;
    for (int r = 0; r < world; ++r) {
        const pid_t pid = ::fork();
        if (pid < 0) throw Error("fork failed");
        if (pid == 0) {
            std::vector<std::string> args = {exe,
                                             "__worker",
                                             "--config", config_path,
                                             "--world", std::to_string(world),
                                             "--rank", std::to_string(r),
                                             "--port", std::to_string(port)};
            if (!output_override.empty()) {
                args.push_back("--output");
                args.push_back(output_override);
            }
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            argv.push_back(nullptr);
            ::execv(exe.c_str(), argv.data());
            std::perror("execv");
            _exit(127);
        }
        children.push_back(pid);
    }
    int failures = 0;
    for (std::size_t r = 0; r < children.size(); ++r) {
        int status = 0;
        ::waitpid(children[r], &status, 0);
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
            std::cerr << "rank " << r << ": worker failed\n";
            ++failures;
        }
    }
    return failures == 0 ? 0 : 1;
}

int cmd_run(const std::string& config_path, int world_flag, const std::string& transport,
            const std::string& output_override) {
    const PipelineConfig config = parse_config_file(config_path);
    const int world = world_flag > 0 ? world_flag : config.world_size;
    if (transport == "proc" && world > 1)
        return run_proc_transport(config_path, world, output_override);
    const UpdateReport report = run_inproc(config, world, output_override);
    std::cout << "processed " << report.regions_processed << "/" << report.total_splits
              << " regions, " << report.bytes_written << " bytes written\n";
    return 0;
}

int cmd_worker(const std::string& config_path, int world, int rank, std::uint16_t port,
               const std::string& output_override) {
    SocketConfig sc;
    sc.world_size = world;
    sc.rank = rank;
    sc.port = port;
    auto comm = make_socket_communicator(sc);
    run_pipeline(parse_config_file(config_path), *comm, output_override);
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& worlds_csv, int reps,
              const std::string& out_path) {
    const PipelineConfig config = parse_config_file(config_path);
    std::vector<int> worlds;
    std::stringstream ss(worlds_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) worlds.push_back(std::stoi(tok));
    if (worlds.empty()) throw Error("bench: no world sizes given");

    std::string scratch = out_path;
    const auto slash = scratch.find_last_of('/');
    scratch = slash == std::string::npos ? "." : scratch.substr(0, slash);
    const BenchReport report = run_bench(config, worlds, reps, scratch);
    std::ofstream out(out_path);
    if (!out) throw Error("cannot write '" + out_path + "'");
    out << report.to_csv();
    std::cout << report.to_csv();
    return 0;
}

int cmd_diff(const std::string& a, const std::string& b) {
    const DiffResult d = file_diff(a, b);
    if (d.identical) {
        std::cout << "identical\n";
        return 0;
    }
    std::cout << "differ at byte " << d.first_difference << "\n";
    return 1;
}

int cmd_gen(const std::string& kind, std::int64_t w, std::int64_t h, int bands,
            const std::string& out, const std::string& sample_type, double value,
            std::uint64_t seed, std::int64_t period, double low, double high) {
    nlohmann::json cfg;
    cfg["nodes"]["src"] = {{"kind", "synthetic"}, {"pattern", kind},    {"width", w},
                           {"height", h},         {"bands", bands},     {"sample_type", sample_type},
                           {"value", value},      {"seed", seed},       {"period", period},
                           {"low", low},          {"high", high}};
    cfg["nodes"]["out"] = {{"kind", "writer"}, {"path", out}, {"input", "src"}};
    cfg["split"] = {{"strategy", "striped"}, {"count", 1}};
    run_inproc(parse_config(cfg.dump()), 1);
    std::cout << "wrote " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rastream: distributed streaming raster pipelines"};
    app.require_subcommand(1);

    std::string config_path, transport = "inproc", output_override;
    int world = 0;
    auto* run = app.add_subcommand("run", "execute a pipeline config");
    run->add_option("config", config_path)->required();
    run->add_option("--world", world, "worker count (default: config)");
    run->add_option("--transport", transport)->check(CLI::IsMember({"inproc", "proc"}));
    run->add_option("--output", output_override, "override the writer's output path");

    std::string worlds_csv = "1,2,4";
    int reps = 5;
    std::string bench_out = "report.csv";
    auto* bench = app.add_subcommand("bench", "time a pipeline across world sizes");
    bench->add_option("config", config_path)->required();
    bench->add_option("--worlds", worlds_csv);
    bench->add_option("--reps", reps);
    bench->add_option("--out", bench_out);

    std::string diff_a, diff_b;
    auto* diff = app.add_subcommand("diff", "byte-compare two files");
    diff->add_option("a", diff_a)->required();
    diff->add_option("b", diff_b)->required();

    std::string gen_kind, gen_out, gen_type = "u16";
    std::int64_t gen_w = 0, gen_h = 0, gen_period = 8;
    int gen_bands = 1;
    double gen_value = 0.0, gen_low = 0.0, gen_high = 255.0;
    std::uint64_t gen_seed = 1;
    auto* gen = app.add_subcommand("gen", "generate a synthetic test image");
    gen->add_option("kind", gen_kind)->required()
        ->check(CLI::IsMember({"constant", "checkerboard", "random"}));
    gen->add_option("width", gen_w)->required();
    gen->add_option("height", gen_h)->required();
    gen->add_option("bands", gen_bands)->required();
    gen->add_option("out", gen_out)->required();
    gen->add_option("--sample-type", gen_type);
    gen->add_option("--value", gen_value);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--period", gen_period);
    gen->add_option("--low", gen_low);
    gen->add_option("--high", gen_high);

    int rank = 0;
    unsigned port = 0;
    auto* worker = app.add_subcommand("__worker");
    worker->group("");  // hidden: internal entry point for proc transport
    worker->add_option("--config", config_path)->required();
    worker->add_option("--world", world)->required();
    worker->add_option("--rank", rank)->required();
    worker->add_option("--port", port)->required();
    worker->add_option("--output", output_override);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, world, transport, output_override);
        if (bench->parsed()) return cmd_bench(config_path, worlds_csv, reps, bench_out);
        if (diff->parsed()) return cmd_diff(diff_a, diff_b);
        if (gen->parsed())
            return cmd_gen(gen_kind, gen_w, gen_h, gen_bands, gen_out, gen_type, gen_value,
                           gen_seed, gen_period, gen_low, gen_high);
        if (worker->parsed())
            return cmd_worker(config_path, world, rank, static_cast<std::uint16_t>(port),
                              output_override);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
