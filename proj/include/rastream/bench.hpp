#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rastream/config.hpp"

namespace rastream {

struct DiffResult {
    bool identical = false;
    std::uint64_t first_difference = 0;  // byte offset, valid when !identical
};

/// Byte comparison of two files; a length mismatch differs at the shorter
/// file's length.
DiffResult file_diff(const std::string& path_a, const std::string& path_b);

/// Runs the pipeline at the given world size with in-process workers (one
/// thread per rank). Errors are rethrown rank-tagged.
UpdateReport run_inproc(const PipelineConfig& config, int world_size,
                        const std::string& output_override = "");

struct BenchRow {
    std::string pipeline;
    int world_size = 1;
    bool valid = false;
    double mean_s = 0.0;
    double stddev_s = 0.0;
    double speedup = 0.0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    /// Columns: pipeline,N,mean_s,stddev_s,speedup. Invalid cells are empty.
    std::string to_csv() const;
};

/// Times the pipeline over the requested world sizes (in-process workers,
/// repetitions each; spawn excluded, plan/compute/write included) and appends
/// a pure read+write row ("io") over the pipeline's source image.
BenchReport run_bench(const PipelineConfig& config, const std::vector<int>& world_sizes,
                      int repetitions, const std::string& scratch_dir);

}  // namespace rastream
