#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rastream/bench.hpp"
#include "rastream/tiff.hpp"

namespace rastream {

DiffResult file_diff(const std::string& path_a, const std::string& path_b) {
    std::ifstream a(path_a, std::ios::binary), b(path_b, std::ios::binary);
    if (!a) throw Error("cannot read '" + path_a + "'");
    if (!b) throw Error("cannot read '" + path_b + "'");
    constexpr std::size_t kChunk = 1 << 16;
    std::vector<char> ba(kChunk), bb(kChunk);
    std::uint64_t offset = 0;
    for (;;) {
        a.read(ba.data(), kChunk);
        b.read(bb.data(), kChunk);
        const std::streamsize na = a.gcount();
        const std::streamsize nb = b.gcount();
        const std::streamsize n = std::min(na, nb);
        for (std::streamsize i = 0; i < n; ++i)
            if (ba[i] != bb[i]) return {false, offset + static_cast<std::uint64_t>(i)};
        if (na != nb) return {false, offset + static_cast<std::uint64_t>(n)};
        offset += static_cast<std::uint64_t>(n);
        if (na == 0) return {true, 0};
    }
}

UpdateReport run_inproc(const PipelineConfig& config, int world_size,
                        const std::string& output_override) {
    if (world_size == 1) {
        auto comm = make_loopback();
        return run_pipeline(config, *comm, output_override);
    }
    auto group = make_inproc_group(world_size);
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(world_size);
    std::vector<UpdateReport> reports(world_size);
    for (int r = 1; r < world_size; ++r) {
        threads.emplace_back([&, r] {
            try {
                reports[r] = run_pipeline(config, *group[r], output_override);
            } catch (...) {
                errors[r] = std::current_exception();
            }
        });
    }
    try {
        reports[0] = run_pipeline(config, *group[0], output_override);
    } catch (...) {
        errors[0] = std::current_exception();
    }
    for (auto& t : threads) t.join();
    for (int r = 0; r < world_size; ++r) {
        if (!errors[r]) continue;
        try {
            std::rethrow_exception(errors[r]);
        } catch (const std::exception& e) {
            throw Error("rank " + std::to_string(r) + ": " + e.what());
        }
    }
    UpdateReport total;
    for (const auto& rep : reports) {
        total.regions_processed += rep.regions_processed;
        total.bytes_written += rep.bytes_written;
        total.total_splits = rep.total_splits;
    }
    return total;
}

namespace {

// One timed repetition: workers are spawned and synchronized first, so the
// measurement covers plan + compute + write only.
double timed_run(const PipelineConfig& config, int world_size,
                 const std::string& output_override) {
    using Clock = std::chrono::steady_clock;
    if (world_size == 1) {
        auto comm = make_loopback();
        const auto t0 = Clock::now();
        run_pipeline(config, *comm, output_override);
        return std::chrono::duration<double>(Clock::now() - t0).count();
    }
    auto group = make_inproc_group(world_size);
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(world_size);
    for (int r = 1; r < world_size; ++r) {
        threads.emplace_back([&, r] {
            try {
                group[r]->barrier();
                run_pipeline(config, *group[r], output_override);
            } catch (...) {
                errors[r] = std::current_exception();
            }
        });
    }
    double elapsed = 0.0;
    try {
        group[0]->barrier();
        const auto t0 = Clock::now();
        run_pipeline(config, *group[0], output_override);
        elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
    } catch (...) {
        errors[0] = std::current_exception();
    }
    for (auto& t : threads) t.join();
    for (int r = 0; r < world_size; ++r) {
        if (!errors[r]) continue;
        try {
            std::rethrow_exception(errors[r]);
        } catch (const std::exception& e) {
            throw Error("rank " + std::to_string(r) + ": " + e.what());
        }
    }
    return elapsed;
}

BenchRow bench_cell(const PipelineConfig& config, const std::string& label, int world,
                    int reps, const std::string& out_path) {
    BenchRow row;
    row.pipeline = label;
    row.world_size = world;
    std::vector<double> times;
    try {
        for (int i = 0; i < reps; ++i) times.push_back(timed_run(config, world, out_path));
    } catch (const Error&) {
        row.valid = false;  // a failed repetition invalidates the cell
        return row;
    }
    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    var /= static_cast<double>(times.size());
    row.valid = true;
    row.mean_s = mean;
    row.stddev_s = std::sqrt(var);
    return row;
}

void fill_speedups(std::vector<BenchRow>& rows, const std::string& label) {
    double base = 0.0;
    for (const BenchRow& r : rows)
        if (r.pipeline == label && r.world_size == 1 && r.valid) base = r.mean_s;
    for (BenchRow& r : rows)
        if (r.pipeline == label && r.valid && base > 0.0) r.speedup = base / r.mean_s;
}

}  // namespace

std::string BenchReport::to_csv() const {
    std::ostringstream out;
    out << "pipeline,N,mean_s,stddev_s,speedup\n";
    for (const BenchRow& r : rows) {
        out << r.pipeline << "," << r.world_size << ",";
        if (r.valid)
            out << r.mean_s << "," << r.stddev_s << "," << r.speedup;
        else
            out << ",,";
        out << "\n";
    }
    return out.str();
}

BenchReport run_bench(const PipelineConfig& config, const std::vector<int>& world_sizes,
                      int repetitions, const std::string& scratch_dir) {
    if (repetitions < 3) throw ContractError("bench: repetitions must be >= 3");
    BenchReport report;
    const std::string out_path = scratch_dir + "/bench_out.tif";

    for (int world : world_sizes)
        report.rows.push_back(bench_cell(config, config.name, world, repetitions, out_path));
    fill_speedups(report.rows, config.name);

    // Pure-I/O baseline: materialize the pipeline's first source once, then
    // time a read+write pipeline over it.
    const PipelineConfig::Node* src = nullptr;
    for (const auto& n : config.nodes)
        if (n.kind == "synthetic" || n.kind == "source") {
            src = &n;
            break;
        }
    if (src) {
        std::string src_path;
        if (src->kind == "source") {
            src_path = nlohmann::json::parse(src->params_json).at("path").get<std::string>();
        } else {
            src_path = scratch_dir + "/bench_io_src.tif";
            nlohmann::json gen;
            gen["nodes"][src->name] = nlohmann::json::parse(src->params_json);
            gen["nodes"]["out"] = {{"kind", "writer"}, {"path", src_path}, {"input", src->name}};
            gen["split"] = {{"strategy", "striped"}, {"count", 1}};
            run_inproc(parse_config(gen.dump()), 1);
        }
        nlohmann::json io;
        io["name"] = "io";
        io["nodes"]["src"] = {{"kind", "source"}, {"path", src_path}};
        io["nodes"]["out"] = {{"kind", "writer"}, {"path", out_path}, {"input", "src"}};
        io["split"] = {{"strategy", "striped"},
                       {"count", std::int64_t{4} * *std::max_element(world_sizes.begin(),
                                                                     world_sizes.end())}};
        const PipelineConfig io_cfg = parse_config(io.dump());
        for (int world : world_sizes)
            report.rows.push_back(bench_cell(io_cfg, "io", world, repetitions, out_path));
        fill_speedups(report.rows, "io");
    }
    std::remove(out_path.c_str());
    return report;
}

}  // namespace rastream
