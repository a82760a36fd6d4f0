// Acceptance harness: one line per criterion (PASS / FAIL / SKIP), exit 0
// when everything passed, 77 when a criterion was skipped (host too small),
// 1 otherwise. argv[1] is the path to the rastream CLI binary (used for the
// multi-process writer criterion).

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>
#include <vector>

#include "rastream/bench.hpp"
#include "rastream/config.hpp"
#include "rastream/tiff.hpp"

using namespace rastream;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int failed = 0;
    int skipped = 0;
};

void report(Outcome& out, int criterion, const std::string& label, bool ok,
            const std::string& detail = "") {
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << criterion << ": " << label;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << std::endl;
    if (!ok) ++out.failed;
}

void skip(Outcome& out, int criterion, const std::string& label, const std::string& why) {
    std::cout << "SKIP criterion " << criterion << ": " << label << " (" << why << ")"
              << std::endl;
    ++out.skipped;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path()
             / ("rastream-accept-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string source_json(const std::string& name, int bands = 4) {
    return "\"" + name + R"(": {"kind": "synthetic", "pattern": "random", "width": 256,
            "height": 256, "bands": )" + std::to_string(bands)
         + R"(, "sample_type": "u16", "seed": 4242})";
}

/// The six shipped pipeline analogues over the shared 256x256x4 u16 source.
std::vector<std::pair<std::string, std::string>> pipeline_analogues() {
    std::vector<std::pair<std::string, std::string>> p;
    p.emplace_back("resample-grid", R"("warp": {"kind": "resample", "mode": "bilinear",
        "scale_x": 0.8, "scale_y": 0.8, "offset_x": 3.5, "offset_y": 1.25,
        "out_width": 256, "out_height": 256, "input": "src"})");
    p.emplace_back("texture-glcm", R"("gray": {"kind": "bandmath", "expr": "b0", "input": "src"},
        "tex": {"kind": "glcm", "radius": 2, "levels": 8, "dx": 1, "dy": 0, "input": "gray"})");
    p.emplace_back("pansharpen", R"("pan": {"kind": "bandmath", "expr": "(b0 + b1 + b2 + b3) / 4",
        "input": "src"},
        "fuse": {"kind": "pansharpen", "radius": 2, "inputs": ["pan", "src"]})");
    p.emplace_back("classify", R"("cls": {"kind": "classify", "default": 0, "stumps": [
        {"band": 0, "threshold": 20000, "le": 1},
        {"band": 1, "threshold": 40000, "le": 2, "gt": 3}], "input": "src"})");
    p.emplace_back("meanshift", R"("ms": {"kind": "meanshift", "spatial_radius": 2,
        "range_radius": 20000, "max_iter": 2, "input": "src"})");
    p.emplace_back("resample-xs", R"("up": {"kind": "resample", "mode": "nearest",
        "scale_x": 0.5, "scale_y": 0.5, "out_width": 256, "out_height": 256, "input": "src"})");
    return p;
}

std::string terminal_node_of(const std::string& body) {
    // Last declared node in the fragment feeds the writer.
    const auto q = body.rfind("\": {\"kind\"");
    const auto start = body.rfind('"', q - 1) + 1;
    return body.substr(start, q - start);
}

std::string analogue_config(const std::string& body, const std::string& out,
                            std::int64_t splits) {
    return "{\"split\": {\"strategy\": \"striped\", \"count\": " + std::to_string(splits)
         + "}, \"nodes\": {" + source_json("src") + ", " + body
         + R"(, "out": {"kind": "writer", "path": ")" + out + R"(", "input": ")"
         + terminal_node_of(body) + "\"}}}";
}

/// Independent of the library's TIFF reader: walks the first IFD by hand and
/// returns (width, height) from tags 256/257.
std::pair<std::uint32_t, std::uint32_t> independent_tiff_dimensions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(in), {});
    auto u16 = [&](std::size_t o) {
        return static_cast<std::uint32_t>(bytes.at(o)) | (static_cast<std::uint32_t>(bytes.at(o + 1)) << 8);
    };
    auto u32 = [&](std::size_t o) { return u16(o) | (u16(o + 2) << 16); };
    if (bytes.size() < 8 || bytes[0] != 'I' || bytes[1] != 'I' || u16(2) != 42)
        throw Error("not a little-endian TIFF");
    const std::uint32_t ifd = u32(4);
    const std::uint32_t entries = u16(ifd);
    std::uint32_t width = 0, height = 0;
    for (std::uint32_t i = 0; i < entries; ++i) {
        const std::size_t e = ifd + 2 + 12ull * i;
        const std::uint32_t tag = u16(e);
        const std::uint32_t type = u16(e + 2);
        const std::uint32_t value = type == 3 ? u16(e + 8) : u32(e + 8);
        if (tag == 256) width = value;
        if (tag == 257) height = value;
    }
    return {width, height};
}

double relative_error(double got, double want) {
    return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

struct OracleStats {
    double count = 0, mean = 0, variance = 0, min = 0, max = 0;
};

OracleStats whole_image_stats(const PixelBuffer& img, int band) {
    OracleStats s;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -s.min;
    double sum = 0, sum_sq = 0;
    const Region r = img.region();
    for (std::int64_t y = r.y; y < r.y_end(); ++y)
        for (std::int64_t x = r.x; x < r.x_end(); ++x) {
            const double v = img.get(x, y, band);
            s.count += 1;
            sum += v;
            sum_sq += v * v;
            s.min = std::min(s.min, v);
            s.max = std::max(s.max, v);
        }
    s.mean = sum / s.count;
    s.variance = sum_sq / s.count - s.mean * s.mean;
    return s;
}

// ---------------------------------------------------------------------------

void criterion_1(Outcome& out, const TempDir& tmp) {
    std::string detail;
    bool ok = true;
    for (const auto& [name, body] : pipeline_analogues()) {
        std::string reference;
        for (const int world : {1, 2, 4})
            for (const std::int64_t splits : {1, 4, 16}) {
                const std::string path = tmp.file(name + "-" + std::to_string(world) + "-"
                                                 + std::to_string(splits) + ".tif");
                run_inproc(parse_config(analogue_config(body, path, splits)), world);
                if (reference.empty()) {
                    reference = path;
                } else if (!file_diff(reference, path).identical) {
                    ok = false;
                    detail += (detail.empty() ? "" : "; ") + name + " differs at world "
                            + std::to_string(world) + " splits " + std::to_string(splits);
                }
            }
    }
    report(out, 1, "split/world invariance of P1-P5,P7 analogues", ok, detail);
}

void criterion_2(Outcome& out, const TempDir& tmp, const std::string& cli) {
    const std::string body = R"("blur": {"kind": "smooth", "radius": 2, "input": "src"})";
    const std::string serial = tmp.file("writer-serial.tif");
    run_inproc(parse_config(analogue_config(body, serial, 8)), 1);

    const std::string parallel = tmp.file("writer-parallel.tif");
    const std::string config_path = tmp.file("writer.json");
    std::ofstream(config_path) << analogue_config(body, parallel, 8);
    const std::string cmd = "'" + cli + "' run '" + config_path
                          + "' --world 4 --transport proc > /dev/null";
    if (std::system(cmd.c_str()) != 0) {
        report(out, 2, "4-process concurrent writer", false, "CLI run failed");
        return;
    }
    const bool identical = file_diff(serial, parallel).identical;
    const auto [w, h] = independent_tiff_dimensions(parallel);
    report(out, 2, "4-process concurrent writer", identical && w == 256 && h == 256,
           identical ? "dimensions " + std::to_string(w) + "x" + std::to_string(h)
                     : "bytes differ from the world-1 file");
}

void criterion_3(Outcome& out) {
    bool ok = true;
    std::string detail;
    for (const SampleType st : {SampleType::U16, SampleType::F32}) {
        SyntheticSpec spec;
        spec.kind = SyntheticKind::Random;
        spec.info.width = 128;
        spec.info.height = 96;
        spec.info.bands = 2;
        spec.info.sample_type = st;
        spec.seed = 77;
        auto oracle_src = std::make_shared<SyntheticSource>(spec);
        oracle_src->update_output_information();
        const PixelBuffer img = oracle_src->generate(Region(0, 0, 128, 96));

        for (const int world : {1, 2, 4}) {
            auto group = make_inproc_group(world);
            std::vector<std::vector<BandStats>> results(world);
            std::vector<std::thread> threads;
            std::vector<std::exception_ptr> errors(world);
            for (int r = 0; r < world; ++r)
                threads.emplace_back([&, r] {
                    try {
                        auto stats = std::make_shared<StatsFilter>();
                        stats->set_input(0, std::make_shared<SyntheticSource>(spec));
                        SplitStrategy strategy;
                        strategy.striped_count = 8;
                        auto mapper = std::make_shared<MapperObject>(
                            strategy, std::shared_ptr<RegionSink>(make_null_sink()));
                        mapper->set_input(0, stats);
                        mapper->update(*group[r]);
                        results[r] = stats->result();
                    } catch (...) {
                        errors[r] = std::current_exception();
                    }
                });
            for (auto& t : threads) t.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);

            for (int b = 0; b < 2; ++b) {
                const OracleStats want = whole_image_stats(img, b);
                for (int r = 0; r < world; ++r) {
                    const BandStats& got = results[r][b];
                    const bool integral = st != SampleType::F32;
                    const double tol = integral ? 0.0 : 1e-9;
                    if (static_cast<double>(got.count) != want.count
                        || relative_error(got.mean, want.mean) > tol
                        || relative_error(got.variance, want.variance) > tol
                        || got.min != want.min || got.max != want.max) {
                        ok = false;
                        detail = std::string(integral ? "u16" : "f32") + " world "
                               + std::to_string(world) + " band " + std::to_string(b);
                    }
                }
            }
        }
    }
    report(out, 3, "distributed statistics match the whole-image oracle", ok, detail);
}

void criterion_4(Outcome& out) {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::Random;
    spec.info.width = 64;
    spec.info.height = 64;
    spec.info.bands = 1;
    spec.info.sample_type = SampleType::U16;
    spec.seed = 808;
    auto src = std::make_shared<SyntheticSource>(spec);
    src->update_output_information();
    const PixelBuffer img = src->generate(Region(0, 0, 64, 64));
    constexpr std::int64_t r = 3;

    // Direct edge-replicated convolution oracle.
    PixelBuffer oracle(Region(0, 0, 64, 64), 1, SampleType::U16);
    for (std::int64_t y = 0; y < 64; ++y)
        for (std::int64_t x = 0; x < 64; ++x) {
            std::uint64_t sum = 0;
            for (std::int64_t dy = -r; dy <= r; ++dy)
                for (std::int64_t dx = -r; dx <= r; ++dx) {
                    const std::int64_t tx = std::min(std::max(x + dx, std::int64_t{0}),
                                                     std::int64_t{63});
                    const std::int64_t ty = std::min(std::max(y + dy, std::int64_t{0}),
                                                     std::int64_t{63});
                    sum += static_cast<std::uint64_t>(img.get(tx, ty, 0));
                }
            oracle.set_raw(x, y, 0, div_round_half_even(sum, (2 * r + 1) * (2 * r + 1)));
        }

    auto smooth = std::make_shared<SmoothFilter>(r);
    smooth->set_input(0, src);
    SplitStrategy strategy;
    strategy.striped_count = 13;  // ceil(64/13) = 5-row stripes
    auto sink = std::make_shared<MemorySink>();
    auto mapper = std::make_shared<MapperObject>(strategy, sink);
    mapper->set_input(0, smooth);
    auto comm = make_loopback();
    mapper->update(*comm);

    report(out, 4, "radius-3 smoothing over 5-row stripes has no seams",
           sink->image() == oracle);
}

void criterion_5(Outcome& out, const TempDir& tmp) {
    const unsigned threads = std::thread::hardware_concurrency();
    const std::string label = "GLCM pipeline speedup >= 2.5 at world 4";
    if (threads < 4) {
        skip(out, 5, label,
             "host has " + std::to_string(threads) + " hardware thread(s); needs >= 4");
        return;
    }
    const std::string config = R"({
      "name": "texture",
      "split": {"strategy": "striped", "count": 16},
      "nodes": {
        "src": {"kind": "synthetic", "pattern": "random", "width": 2048, "height": 2048,
                "bands": 1, "sample_type": "u16", "seed": 6},
        "tex": {"kind": "glcm", "radius": 2, "levels": 8, "dx": 1, "dy": 0,
                "min": 0, "max": 65535, "input": "src"},
        "out": {"kind": "writer", "path": ")" + tmp.file("tex.tif") + R"(", "input": "tex"}
      }
    })";
    const BenchReport bench = run_bench(parse_config(config), {1, 2, 4}, 5, tmp.path.string());
    double s1 = 0, s2 = 0, s4 = 0;
    for (const BenchRow& row : bench.rows)
        if (row.pipeline == "texture" && row.valid) {
            if (row.world_size == 1) s1 = row.speedup;
            if (row.world_size == 2) s2 = row.speedup;
            if (row.world_size == 4) s4 = row.speedup;
        }
    const bool ok = s4 >= 2.5 && s1 <= s2 && s2 <= s4 && s1 > 0;
    std::ostringstream detail;
    detail << "speedups 1/2/4 = " << s1 << "/" << s2 << "/" << s4;
    report(out, 5, label, ok, detail.str());
}

void criterion_6(Outcome& out, const TempDir& tmp) {
    const std::string config = R"({
      "name": "io-probe",
      "split": {"strategy": "striped", "count": 8},
      "nodes": {)" + source_json("src", 2) + R"(,
        "out": {"kind": "writer", "path": ")" + tmp.file("probe.tif") + R"(", "input": "src"}
      }
    })";
    const BenchReport bench = run_bench(parse_config(config), {1, 2, 4}, 3, tmp.path.string());
    const std::string csv = bench.to_csv();
    bool found = false;
    double io_speedup = 0;
    for (const BenchRow& row : bench.rows)
        if (row.pipeline == "io" && row.world_size == 4 && row.valid) {
            found = true;
            io_speedup = row.speedup;
        }
    std::ostringstream detail;
    detail << "io world-4 speedup recorded: " << io_speedup;
    report(out, 6, "bench CSV carries the pure read+write row", found && csv.find("io,4") != std::string::npos,
           detail.str());
}

void criterion_7(Outcome& out) {
    std::mt19937 rng(123);
    std::uniform_int_distribution<std::int64_t> dim(1, 400), count(1, 50), tile(1, 128);
    std::uniform_int_distribution<int> world(1, 12);
    bool ok = true;
    std::string detail;
    for (int i = 0; i < 1500 && ok; ++i) {
        ImageInfo info;
        info.width = dim(rng);
        info.height = dim(rng);
        info.sample_type = SampleType::U16;

        for (const SplitScheme& scheme :
             {striped_split(info, count(rng)), tiled_split(info, tile(rng), tile(rng))}) {
            std::uint64_t area = 0;
            for (const Region& r : scheme.splits) {
                if (!info.full_region().contains(r)) { ok = false; detail = "split escapes image"; }
                area += r.area();
            }
            if (area != static_cast<std::uint64_t>(info.width) * info.height) {
                ok = false;
                detail = "splits do not cover the image exactly";
            }
            for (std::size_t a = 0; a < scheme.splits.size() && ok; ++a)
                for (std::size_t b = a + 1; b < scheme.splits.size(); ++b)
                    if (!intersect(scheme.splits[a], scheme.splits[b]).empty()) {
                        ok = false;
                        detail = "splits overlap";
                    }

            const int w = world(rng);
            const Schedule schedule = assign_splits(scheme.total(), w);
            std::vector<std::size_t> per_rank(w, 0);
            for (int rank : schedule.assignment) ++per_rank[rank];
            const auto [lo, hi] = std::minmax_element(per_rank.begin(), per_rank.end());
            if (*hi - *lo > 1) {
                ok = false;
                detail = "schedule unfair (max-min > 1)";
            }
        }

        const std::uint64_t row = info.total_bytes() / info.height;
        const int w = world(rng);
        const std::int64_t n = auto_split_count(info, row * (1 + dim(rng) % 64), w);
        if (n % w != 0 && n != info.height) {
            ok = false;
            detail = "auto split count not a world multiple";
        }
    }
    report(out, 7, "splitting/scheduling properties over 1500 random cases", ok, detail);
}

void criterion_8(Outcome& out) {
    bool ok = true;
    std::string detail;

    SyntheticSpec constant;
    constant.info.width = 12;
    constant.info.height = 12;
    constant.info.bands = 1;
    constant.info.sample_type = SampleType::U8;
    constant.value = 42.0;
    auto g1 = std::make_shared<GlcmFilter>(3, 8, 1, 0, true, true);
    g1->set_input(0, std::make_shared<SyntheticSource>(constant));
    g1->set_bounds(0.0, 255.0);
    g1->update_output_information();
    const PixelBuffer flat = g1->generate(Region(0, 0, 12, 12));
    for (std::int64_t y = 0; y < 12 && ok; ++y)
        for (std::int64_t x = 0; x < 12; ++x)
            if (flat.get(x, y, 0) != 1.0 || flat.get(x, y, 1) != 0.0) {
                ok = false;
                detail = "constant window: expected energy 1, contrast 0";
                break;
            }

    SyntheticSpec checker;
    checker.kind = SyntheticKind::Checkerboard;
    checker.info = constant.info;
    checker.period = 1;
    checker.low = 0.0;
    checker.high = 1.0;
    auto g2 = std::make_shared<GlcmFilter>(3, 2, 1, 0, true, true);
    g2->set_input(0, std::make_shared<SyntheticSource>(checker));
    g2->set_bounds(0.0, 1.0);
    g2->update_output_information();
    const PixelBuffer board = g2->generate(Region(0, 0, 12, 12));
    for (std::int64_t y = 0; y < 12 && ok; ++y)
        for (std::int64_t x = 0; x < 12; ++x)
            if (board.get(x, y, 0) != 0.5 || board.get(x, y, 1) != 1.0) {
                ok = false;
                detail = "checkerboard: expected energy 0.5, contrast 1";
                break;
            }

    report(out, 8, "GLCM closed-form cases are exact", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: rastream_acceptance <path-to-rastream-cli> [criteria]\n"
                  << "  criteria: comma-separated list, e.g. 1,2,3 (default: all)\n";
        return 2;
    }
    const std::string cli = argv[1];
    std::vector<bool> enabled(9, argc < 3);
    if (argc >= 3) {
        std::stringstream ss(argv[2]);
        std::string tok;
        while (std::getline(ss, tok, ',')) enabled.at(std::stoul(tok)) = true;
    }

    Outcome outcome;
    TempDir tmp;
    try {
        if (enabled[1]) criterion_1(outcome, tmp);
        if (enabled[2]) criterion_2(outcome, tmp, cli);
        if (enabled[3]) criterion_3(outcome);
        if (enabled[4]) criterion_4(outcome);
        if (enabled[5]) criterion_5(outcome, tmp);
        if (enabled[6]) criterion_6(outcome, tmp);
        if (enabled[7]) criterion_7(outcome);
        if (enabled[8]) criterion_8(outcome);
    } catch (const std::exception& e) {
        std::cerr << "acceptance run aborted: " << e.what() << "\n";
        return 1;
    }
    if (outcome.failed > 0) return 1;
    return outcome.skipped > 0 ? 77 : 0;
}
