#pragma once

#include <cstdint>
#include <vector>

#include "rastream/raster.hpp"

namespace rastream {

/// Ordered partition of the full image into disjoint regions, row-major by
/// (index_y, index_x).
struct SplitScheme {
    std::vector<Region> splits;

    std::size_t total() const { return splits.size(); }

    /// True when every split is a full-width stripe (the writer's requirement).
    bool is_striped(const ImageInfo& info) const;
};

/// Fixed split-index -> rank assignment, identical on every rank.
struct Schedule {
    int world_size = 1;
    std::vector<int> assignment;  // split index -> rank

    std::vector<std::size_t> splits_for_rank(int rank) const;
};

/// Full-width stripes of ceil(height/n) rows, last stripe truncated. More
/// requested splits than rows collapses to one-row stripes.
SplitScheme striped_split(const ImageInfo& info, std::int64_t n_splits);

/// Row-major grid of tile_w x tile_h tiles, edge tiles truncated.
SplitScheme tiled_split(const ImageInfo& info, std::int64_t tile_w, std::int64_t tile_h);

/// Split count from a per-split memory budget: ceil(total_bytes/budget),
/// rounded up to a multiple of world_size, clamped to the image height.
std::int64_t auto_split_count(const ImageInfo& info, std::uint64_t memory_budget_bytes,
                              int world_size);

/// Round-robin: split i -> rank i mod world_size.
Schedule assign_splits(std::size_t n_splits, int world_size);

}  // namespace rastream
