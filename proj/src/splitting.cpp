#include "rastream/splitting.hpp"

namespace rastream {

bool SplitScheme::is_striped(const ImageInfo& info) const {
    for (const Region& r : splits)
        if (r.x != 0 || r.w != info.width) return false;
    return true;
}

std::vector<std::size_t> Schedule::splits_for_rank(int rank) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i] == rank) out.push_back(i);
    return out;
}

SplitScheme striped_split(const ImageInfo& info, std::int64_t n_splits) {
    info.validate();
    if (n_splits < 1) throw ContractError("striped_split: n_splits < 1");
    const std::int64_t n = std::min(n_splits, info.height);
    const std::int64_t rows = (info.height + n - 1) / n;  // ceil
    SplitScheme scheme;
    for (std::int64_t y = 0; y < info.height; y += rows)
        scheme.splits.emplace_back(0, y, info.width, std::min(rows, info.height - y));
    return scheme;
}

SplitScheme tiled_split(const ImageInfo& info, std::int64_t tile_w, std::int64_t tile_h) {
    info.validate();
    if (tile_w < 1 || tile_h < 1) throw ContractError("tiled_split: tile size < 1");
    SplitScheme scheme;
    for (std::int64_t y = 0; y < info.height; y += tile_h)
        for (std::int64_t x = 0; x < info.width; x += tile_w)
            scheme.splits.emplace_back(x, y, std::min(tile_w, info.width - x),
                                       std::min(tile_h, info.height - y));
    return scheme;
}

std::int64_t auto_split_count(const ImageInfo& info, std::uint64_t memory_budget_bytes,
                              int world_size) {
    info.validate();
    if (world_size < 1) throw ContractError("auto_split_count: world_size < 1");
    const std::uint64_t row_bytes = static_cast<std::uint64_t>(info.width)
                                  * static_cast<std::uint64_t>(info.bands)
                                  * byte_width(info.sample_type);
    if (memory_budget_bytes < row_bytes)
        throw Error("auto_split_count: memory budget (" + std::to_string(memory_budget_bytes)
                    + " bytes) smaller than one row (" + std::to_string(row_bytes) + " bytes)");
    const std::uint64_t total = info.total_bytes();
    std::uint64_t n = (total + memory_budget_bytes - 1) / memory_budget_bytes;
    const std::uint64_t w = static_cast<std::uint64_t>(world_size);
    n = (n + w - 1) / w * w;  // round up to multiple of world_size
    n = std::min(n, static_cast<std::uint64_t>(info.height));
    return static_cast<std::int64_t>(n);
}

Schedule assign_splits(std::size_t n_splits, int world_size) {
    if (n_splits < 1 || world_size < 1) throw ContractError("assign_splits: invalid arguments");
    Schedule s;
    s.world_size = world_size;
    s.assignment.resize(n_splits);
    for (std::size_t i = 0; i < n_splits; ++i)
        s.assignment[i] = static_cast<int>(i % static_cast<std::size_t>(world_size));
    return s;
}

}  // namespace rastream
