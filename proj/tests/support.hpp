#pragma once

#include <random>

#include "rastream/filters.hpp"
#include "rastream/pipeline.hpp"

namespace rastream::testing {

/// Source backed by a fixed in-memory image.
class InMemorySource final : public SourceObject {
public:
    explicit InMemorySource(PixelBuffer image, ImageInfo info)
        : image_(std::move(image)), info_(info) {}

    explicit InMemorySource(PixelBuffer image) : image_(std::move(image)) {
        info_.width = image_.region().w;
        info_.height = image_.region().h;
        info_.bands = image_.bands();
        info_.sample_type = image_.sample_type();
    }

    std::string kind() const override { return "memory-source"; }

protected:
    ImageInfo describe() override { return info_; }
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer>) override {
        PixelBuffer buf(out, image_.bands(), image_.sample_type());
        for (std::int64_t y = out.y; y < out.y_end(); ++y)
            for (std::int64_t x = out.x; x < out.x_end(); ++x)
                for (int b = 0; b < image_.bands(); ++b)
                    buf.set_flat(buf.sample_index(x, y, b), image_.get(x, y, b));
        return buf;
    }

private:
    PixelBuffer image_;
    ImageInfo info_;
};

inline PixelBuffer random_image(std::int64_t w, std::int64_t h, int bands, SampleType st,
                                std::uint32_t seed) {
    PixelBuffer buf(Region(0, 0, w, h), bands, st);
    std::mt19937 rng(seed);
    const double top = st == SampleType::U8 ? 255.0 : st == SampleType::U16 ? 65535.0 : 1.0;
    std::uniform_real_distribution<double> dist(0.0, top);
    for (std::uint64_t i = 0; i < buf.sample_count(); ++i) buf.set_flat(i, dist(rng));
    return buf;
}

/// Whole-image direct box-mean oracle: edge-replicated (2r+1)^2 window,
/// integer sum with round-half-to-even division for integer types.
inline PixelBuffer box_smooth_oracle(const PixelBuffer& img, std::int64_t r) {
    const Region full = img.region();
    PixelBuffer out(full, img.bands(), img.sample_type());
    const std::uint64_t window = static_cast<std::uint64_t>(2 * r + 1)
                               * static_cast<std::uint64_t>(2 * r + 1);
    const bool integral = img.sample_type() != SampleType::F32;
    for (std::int64_t y = full.y; y < full.y_end(); ++y)
        for (std::int64_t x = full.x; x < full.x_end(); ++x)
            for (int b = 0; b < img.bands(); ++b) {
                std::uint64_t isum = 0;
                double fsum = 0.0;
                for (std::int64_t dy = -r; dy <= r; ++dy)
                    for (std::int64_t dx = -r; dx <= r; ++dx) {
                        const std::int64_t tx =
                            std::min(std::max(x + dx, full.x), full.x_end() - 1);
                        const std::int64_t ty =
                            std::min(std::max(y + dy, full.y), full.y_end() - 1);
                        if (integral)
                            isum += static_cast<std::uint64_t>(img.get(tx, ty, b));
                        else
                            fsum += img.get(tx, ty, b);
                    }
                if (integral)
                    out.set_raw(x, y, b, div_round_half_even(isum, window));
                else
                    out.set(x, y, b, fsum / static_cast<double>(window));
            }
    return out;
}

struct SimpleStats {
    std::uint64_t count = 0;
    double mean = 0.0;
    double variance = 0.0;
    double min = 0.0;
    double max = 0.0;
};

/// Single-pass whole-image statistics oracle for one band.
inline SimpleStats stats_oracle(const PixelBuffer& img, int band) {
    SimpleStats s;
    s.min = std::numeric_limits<double>::infinity();
    s.max = -s.min;
    double sum = 0.0, sum_sq = 0.0;
    const Region full = img.region();
    for (std::int64_t y = full.y; y < full.y_end(); ++y)
        for (std::int64_t x = full.x; x < full.x_end(); ++x) {
            const double v = img.get(x, y, band);
            ++s.count;
            sum += v;
            sum_sq += v * v;
            s.min = std::min(s.min, v);
            s.max = std::max(s.max, v);
        }
    s.mean = sum / static_cast<double>(s.count);
    s.variance = sum_sq / static_cast<double>(s.count) - s.mean * s.mean;
    return s;
}

/// Runs source->filter->memory sink at the given striped split count on one
/// rank and returns the assembled image.
inline PixelBuffer run_split(std::shared_ptr<ProcessObject> terminal, std::int64_t n_splits) {
    SplitStrategy strategy;
    strategy.kind = SplitStrategy::Kind::Striped;
    strategy.striped_count = n_splits;
    auto sink = std::make_shared<MemorySink>();
    auto mapper = std::make_shared<MapperObject>(strategy, sink);
    mapper->set_input(0, std::move(terminal));
    auto comm = make_loopback();
    mapper->update(*comm);
    return sink->image();
}

}  // namespace rastream::testing
