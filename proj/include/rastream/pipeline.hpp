#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rastream/comm.hpp"
#include "rastream/raster.hpp"
#include "rastream/splitting.hpp"

namespace rastream {

class GraphError : public Error {
public:
    using Error::Error;
};

/// A node of the demand-driven pipeline graph. Information flows
/// upstream-to-downstream (update_output_information); data requests flow
/// downstream-to-upstream (requested_regions + generate), region by region.
///
/// One pipeline instance is owned by one rank context and never shared;
/// parallelism comes from replicating the whole pipeline across ranks.
class ProcessObject : public std::enable_shared_from_this<ProcessObject> {
public:
    virtual ~ProcessObject() = default;

    const std::vector<std::shared_ptr<ProcessObject>>& inputs() const { return inputs_; }

    /// Connects upstream into input_slot. Rejects connections that would
    /// create a cycle; advances this object's modified stamp.
    void set_input(std::size_t input_slot, std::shared_ptr<ProcessObject> upstream);

    std::uint64_t modified_stamp() const { return modified_stamp_; }

    /// Marks this object modified (parameter change); invalidates caches
    /// downstream of it.
    void touch();

    /// Resolves this object's output metadata, recursing upstream. Skips
    /// recomputation while no upstream object has a newer modified stamp.
    const ImageInfo& update_output_information();

    /// Per-input regions needed to produce out_region. Requires resolved
    /// output information; out_region must lie inside the largest region.
    std::vector<Region> requested_regions(const Region& out_region);

    /// Produces a PixelBuffer exactly covering region, pulling inputs first.
    PixelBuffer generate(const Region& region);

    // Persistent-filter protocol (cross-rank aggregation).
    virtual bool is_persistent() const { return false; }
    virtual void reset_state() {}
    virtual void synthesize_state(Communicator&) {}

    virtual bool region_independent() const { return true; }

    virtual std::string kind() const = 0;

    // Observability for the caching/economy contracts.
    std::uint64_t info_computations() const { return info_computations_; }
    std::uint64_t generate_computations() const { return generate_computations_; }

protected:
    ProcessObject() = default;

    virtual ImageInfo compute_info(std::span<const ImageInfo> input_infos) = 0;
    virtual Region input_region_for(std::size_t input, const Region& out_region,
                                    const ImageInfo& input_info) const;
    virtual PixelBuffer compute(const Region& out_region, std::span<const PixelBuffer> inputs) = 0;

private:
    std::uint64_t latest_upstream_stamp() const;
    bool reaches(const ProcessObject* target) const;

    std::vector<std::shared_ptr<ProcessObject>> inputs_;
    std::uint64_t modified_stamp_ = 0;

    std::optional<ImageInfo> cached_info_;
    std::uint64_t info_snapshot_ = 0;

    // One-deep memo keyed on (this, region): diamond graphs reuse the
    // upstream buffer generated for the identical region within one request.
    std::optional<PixelBuffer> memo_buffer_;
    Region memo_region_;
    std::uint64_t memo_snapshot_ = 0;

    std::uint64_t info_computations_ = 0;
    std::uint64_t generate_computations_ = 0;
};

/// Initiates the pipeline; has no inputs.
class SourceObject : public ProcessObject {
protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) final;
    virtual ImageInfo describe() = 0;
};

/// Transforms pixel data. Declares its neighborhood radius so the default
/// requested-region propagation can grow requests.
class FilterObject : public ProcessObject {
public:
    std::int64_t input_radius() const { return input_radius_; }
    bool region_independent() const override { return region_independent_; }

protected:
    explicit FilterObject(std::int64_t input_radius = 0, bool region_independent = true)
        : input_radius_(input_radius), region_independent_(region_independent) {}

    Region input_region_for(std::size_t input, const Region& out_region,
                            const ImageInfo& input_info) const override;

private:
    std::int64_t input_radius_;
    bool region_independent_;
};

struct SplitStrategy {
    enum class Kind { Striped, Tiled, Auto };
    Kind kind = Kind::Striped;
    std::int64_t striped_count = 1;
    std::int64_t tile_w = 256;
    std::int64_t tile_h = 256;
    std::uint64_t memory_budget_bytes = 64ull << 20;

    SplitScheme make(const ImageInfo& info, int world_size) const;
};

/// Receives each generated stripe; backends are the parallel raster writer,
/// an in-memory image, or nothing (stats-only runs).
class RegionSink {
public:
    virtual ~RegionSink() = default;
    virtual void open(const ImageInfo& info, const SplitScheme& scheme, Communicator& comm) = 0;
    virtual std::uint64_t write(const PixelBuffer& buf) = 0;
    virtual void close(Communicator& comm) = 0;
    /// Cleanup after a failed update; never throws.
    virtual void abandon() {}
};

std::unique_ptr<RegionSink> make_file_sink(const std::string& path);
std::unique_ptr<RegionSink> make_null_sink();

/// Sink assembling the full image in memory (tests, pre-passes).
class MemorySink : public RegionSink {
public:
    void open(const ImageInfo& info, const SplitScheme& scheme, Communicator& comm) override;
    std::uint64_t write(const PixelBuffer& buf) override;
    void close(Communicator& comm) override {}
    const PixelBuffer& image() const { return image_; }

private:
    PixelBuffer image_;
};

struct UpdateReport {
    std::uint64_t regions_processed = 0;
    std::uint64_t bytes_written = 0;
    std::size_t total_splits = 0;
};

/// Terminates the graph: resolves information, computes the split scheme and
/// this rank's schedule, then streams region by region into the sink.
class MapperObject : public ProcessObject {
public:
    MapperObject(SplitStrategy strategy, std::shared_ptr<RegionSink> sink)
        : strategy_(strategy), sink_(std::move(sink)) {}

    std::string kind() const override { return "mapper"; }

    const SplitStrategy& strategy() const { return strategy_; }
    RegionSink& sink() { return *sink_; }

    UpdateReport update(Communicator& comm);

protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) override;
    PixelBuffer compute(const Region&, std::span<const PixelBuffer>) override;

private:
    SplitStrategy strategy_;
    std::shared_ptr<RegionSink> sink_;
};

/// All distinct nodes reachable upstream of obj (obj included), depth-first,
/// inputs left-to-right — deterministic, so collective synthesis order agrees
/// across ranks.
std::vector<ProcessObject*> collect_graph(ProcessObject& obj);

}  // namespace rastream
