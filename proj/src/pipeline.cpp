#include <atomic>
#include <cstring>

#include "rastream/pipeline.hpp"
#include "rastream/tiff.hpp"

namespace rastream {

namespace {
std::atomic<std::uint64_t> g_stamp_counter{0};
std::uint64_t next_stamp() { return ++g_stamp_counter; }
}  // namespace

void ProcessObject::touch() { modified_stamp_ = next_stamp(); }

bool ProcessObject::reaches(const ProcessObject* target) const {
    if (this == target) return true;
    for (const auto& in : inputs_)
        if (in && in->reaches(target)) return true;
    return false;
}

void ProcessObject::set_input(std::size_t input_slot, std::shared_ptr<ProcessObject> upstream) {
    if (!upstream) throw ContractError("set_input: null upstream");
    if (upstream->reaches(this))
        throw GraphError("connection would create a cycle in the pipeline graph");
    if (input_slot > inputs_.size())
        throw ContractError("set_input: slot " + std::to_string(input_slot) + " out of order");
    if (input_slot == inputs_.size())
        inputs_.push_back(std::move(upstream));
    else
        inputs_[input_slot] = std::move(upstream);
    touch();
}

std::uint64_t ProcessObject::latest_upstream_stamp() const {
    std::uint64_t latest = modified_stamp_;
    for (const auto& in : inputs_)
        latest = std::max(latest, in->latest_upstream_stamp());
    return latest;
}

const ImageInfo& ProcessObject::update_output_information() {
    const std::uint64_t latest = latest_upstream_stamp();
    if (cached_info_ && info_snapshot_ >= latest) return *cached_info_;

    std::vector<ImageInfo> input_infos;
    input_infos.reserve(inputs_.size());
    for (const auto& in : inputs_) input_infos.push_back(in->update_output_information());
    ++info_computations_;
    cached_info_ = compute_info(input_infos);
    cached_info_->validate();
    info_snapshot_ = latest;
    return *cached_info_;
}

Region ProcessObject::input_region_for(std::size_t, const Region& out_region,
                                       const ImageInfo&) const {
    return out_region;
}

Region FilterObject::input_region_for(std::size_t, const Region& out_region,
                                      const ImageInfo& input_info) const {
    return grow_clamped(out_region, input_radius_, input_info.full_region());
}

std::vector<Region> ProcessObject::requested_regions(const Region& out_region) {
    const ImageInfo& info = update_output_information();
    if (!info.full_region().contains(out_region))
        throw ContractError("requested region " + out_region.to_string()
                            + " outside largest possible region "
                            + info.full_region().to_string());
    std::vector<Region> result;
    result.reserve(inputs_.size());
    for (std::size_t i = 0; i < inputs_.size(); ++i)
        result.push_back(input_region_for(i, out_region, inputs_[i]->update_output_information()));
    return result;
}

PixelBuffer ProcessObject::generate(const Region& region) {
    if (region.empty()) throw ContractError("generate: empty region");
    const ImageInfo& info = update_output_information();
    if (!info.full_region().contains(region))
        throw ContractError("generate: region " + region.to_string()
                            + " outside largest possible region");

    const std::uint64_t latest = latest_upstream_stamp();
    if (memo_buffer_ && memo_snapshot_ >= latest && memo_region_ == region)
        return *memo_buffer_;

    const std::vector<Region> in_regions = requested_regions(region);
    std::vector<PixelBuffer> in_buffers;
    in_buffers.reserve(inputs_.size());
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
        if (in_regions[i].empty())
            throw Error(kind() + ": requested input region is empty for output "
                        + region.to_string());
        in_buffers.push_back(inputs_[i]->generate(in_regions[i]));
    }

    ++generate_computations_;
    PixelBuffer out = compute(region, in_buffers);
    if (!(out.region() == region) || out.bands() != info.bands
        || out.sample_type() != info.sample_type)
        throw ContractError(kind() + ": produced buffer does not match declared output info for "
                            + region.to_string());

    memo_buffer_ = out;
    memo_region_ = region;
    memo_snapshot_ = latest;
    return out;
}

ImageInfo SourceObject::compute_info(std::span<const ImageInfo>) { return describe(); }

SplitScheme SplitStrategy::make(const ImageInfo& info, int world_size) const {
    switch (kind) {
    case Kind::Striped: return striped_split(info, striped_count);
    case Kind::Tiled: return tiled_split(info, tile_w, tile_h);
    case Kind::Auto:
        return striped_split(info, auto_split_count(info, memory_budget_bytes, world_size));
    }
    throw ContractError("invalid split strategy");
}

namespace {

class FileSink final : public RegionSink {
public:
    explicit FileSink(std::string path) : path_(std::move(path)), tmp_path_(path_ + ".tmp") {}

    void open(const ImageInfo& info, const SplitScheme& scheme, Communicator& comm) override {
        comm_ = &comm;
        plan_ = plan_output(tmp_path_, info, scheme, comm);
    }

    std::uint64_t write(const PixelBuffer& buf) override {
        return write_region(plan_, *comm_, buf);
    }

    void close(Communicator& comm) override {
        finalize(plan_, comm);
        // Publish atomically: the final name never holds a partial file.
        if (comm.rank() == 0 && std::rename(tmp_path_.c_str(), path_.c_str()) != 0)
            throw Error("cannot rename '" + tmp_path_ + "' to '" + path_ + "'");
        comm.barrier();
    }

    void abandon() override {
        plan_.file.reset();
        std::remove(tmp_path_.c_str());
    }

private:
    std::string path_;
    std::string tmp_path_;
    RasterFilePlan plan_;
    Communicator* comm_ = nullptr;
};

class NullSink final : public RegionSink {
public:
    void open(const ImageInfo&, const SplitScheme&, Communicator&) override {}
    std::uint64_t write(const PixelBuffer& buf) override { return buf.byte_size(); }
    void close(Communicator&) override {}
};

}  // namespace

std::unique_ptr<RegionSink> make_file_sink(const std::string& path) {
    return std::make_unique<FileSink>(path);
}

std::unique_ptr<RegionSink> make_null_sink() { return std::make_unique<NullSink>(); }

void MemorySink::open(const ImageInfo& info, const SplitScheme&, Communicator&) {
    image_ = PixelBuffer(info.full_region(), info.bands, info.sample_type);
}

std::uint64_t MemorySink::write(const PixelBuffer& buf) {
    const std::uint64_t pix = static_cast<std::uint64_t>(buf.bands())
                            * byte_width(buf.sample_type());
    const Region& r = buf.region();
    for (std::int64_t y = r.y; y < r.y_end(); ++y) {
        const std::uint64_t src = buf.sample_index(r.x, y, 0) * byte_width(buf.sample_type());
        const std::uint64_t dst = image_.sample_index(r.x, y, 0) * byte_width(buf.sample_type());
        std::memcpy(image_.bytes() + dst, buf.bytes() + src,
                    static_cast<std::uint64_t>(r.w) * pix);
    }
    return buf.byte_size();
}

ImageInfo MapperObject::compute_info(std::span<const ImageInfo> input_infos) {
    if (input_infos.empty()) throw GraphError("mapper has no input");
    return input_infos[0];
}

PixelBuffer MapperObject::compute(const Region&, std::span<const PixelBuffer>) {
    throw ContractError("mapper does not produce pixel data");
}

std::vector<ProcessObject*> collect_graph(ProcessObject& obj) {
    std::vector<ProcessObject*> order;
    auto visit = [&](auto&& self, ProcessObject* node) -> void {
        for (ProcessObject* seen : order)
            if (seen == node) return;
        order.push_back(node);
        for (const auto& in : node->inputs()) self(self, in.get());
    };
    visit(visit, &obj);
    return order;
}

UpdateReport MapperObject::update(Communicator& comm) {
    if (inputs().empty()) throw GraphError("mapper update: no input connected");
    const ImageInfo info = update_output_information();
    const SplitScheme scheme = strategy_.make(info, comm.world_size());
    const Schedule schedule = assign_splits(scheme.total(), comm.world_size());

    for (ProcessObject* node : collect_graph(*this))
        if (node->is_persistent()) node->reset_state();

    UpdateReport report;
    report.total_splits = scheme.total();
    try {
        sink_->open(info, scheme, comm);
        for (std::size_t idx : schedule.splits_for_rank(comm.rank())) {
            try {
                PixelBuffer buf = inputs()[0]->generate(scheme.splits[idx]);
                report.bytes_written += sink_->write(buf);
                ++report.regions_processed;
            } catch (const Error& e) {
                throw Error("split " + std::to_string(idx) + " failed: " + e.what());
            }
        }
        for (ProcessObject* node : collect_graph(*this))
            if (node->is_persistent()) node->synthesize_state(comm);
        sink_->close(comm);
    } catch (...) {
        sink_->abandon();
        throw;
    }
    return report;
}

}  // namespace rastream
