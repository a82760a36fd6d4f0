#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rastream/pipeline.hpp"

namespace rastream {

class ConfigError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Sources

enum class SyntheticKind { Constant, Checkerboard, Random };

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::Constant;
    ImageInfo info;
    double value = 0.0;        // constant
    std::int64_t period = 1;   // checkerboard cell size
    double low = 0.0;          // checkerboard values
    double high = 1.0;
    std::uint64_t seed = 0;    // random

    /// Sample value at (x, y, b); pure function of coordinates, so any
    /// region yields the same samples as a whole-image generation.
    double sample(std::int64_t x, std::int64_t y, int b) const;
};

class SyntheticSource final : public SourceObject {
public:
    explicit SyntheticSource(SyntheticSpec spec);
    std::string kind() const override { return "synthetic"; }

protected:
    ImageInfo describe() override { return spec_.info; }
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer>) override;

private:
    SyntheticSpec spec_;
};

/// Streams sub-regions out of a raster file on demand.
class FileSource final : public SourceObject {
public:
    explicit FileSource(std::string path) : path_(std::move(path)) {}
    std::string kind() const override { return "source"; }

protected:
    ImageInfo describe() override;
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer>) override;

private:
    std::string path_;
};

// ---------------------------------------------------------------------------
// Filters

/// Maps output pixel coordinates to input pixel coordinates.
struct AffineGeoTransform {
    double scale_x = 1.0;
    double scale_y = 1.0;
    double offset_x = 0.0;
    double offset_y = 0.0;
};

enum class ResampleMode { Nearest, Bilinear };

class ResampleFilter final : public FilterObject {
public:
    ResampleFilter(AffineGeoTransform transform, ResampleMode mode,
                   std::int64_t out_width, std::int64_t out_height);
    std::string kind() const override { return "resample"; }

protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) override;
    Region input_region_for(std::size_t input, const Region& out_region,
                            const ImageInfo& input_info) const override;
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer> inputs) override;

private:
    AffineGeoTransform transform_;
    ResampleMode mode_;
    std::int64_t out_width_;
    std::int64_t out_height_;
};

/// Box mean over the clamped (2r+1)^2 window, edge replicated. Integer
/// outputs use an exact integer sum and round-half-to-even division so split
/// and unsplit runs agree bitwise.
class SmoothFilter final : public FilterObject {
public:
    explicit SmoothFilter(std::int64_t radius) : FilterObject(radius) {}
    std::string kind() const override { return "smooth"; }

protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) override;
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer> inputs) override;
};

/// Pointwise expression over the concatenated bands of all inputs
/// (b0, b1, ... in input order); +, -, *, /, parentheses and numeric
/// literals. Single f32 output band.
class BandMathFilter final : public FilterObject {
public:
    explicit BandMathFilter(const std::string& expression);
    ~BandMathFilter() override;
    std::string kind() const override { return "bandmath"; }

    struct Expr;  // expression tree, defined in filters.cpp

protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) override;
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer> inputs) override;

private:
    std::unique_ptr<Expr> expr_;
    std::string text_;
    int max_band_ = -1;
};

/// Ratio-component-substitution pansharpening:
/// out(x,y,b) = xs(x,y,b) * pan(x,y) / max(smooth(pan)(x,y), eps).
/// Inputs: 0 = pan (single band), 1 = xs, both on the PAN geometry.
class PansharpenFilter final : public FilterObject {
public:
    explicit PansharpenFilter(std::int64_t smoothing_radius);
    std::string kind() const override { return "pansharpen"; }

protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) override;
    Region input_region_for(std::size_t input, const Region& out_region,
                            const ImageInfo& input_info) const override;
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer> inputs) override;

private:
    std::int64_t smoothing_radius_;
    double epsilon_ = 1.0;
};

/// Per-pixel gray-level co-occurrence features over a truncated window:
/// symmetric normalized matrix for one offset, energy = sum p^2 and
/// contrast = sum (i-j)^2 p. Quantization bounds are global (a prior
/// statistics pass supplies them).
class GlcmFilter final : public FilterObject {
public:
    GlcmFilter(std::int64_t window_radius, int quant_levels, std::int64_t dx, std::int64_t dy,
               bool energy, bool contrast);
    std::string kind() const override { return "glcm"; }

    void set_bounds(double global_min, double global_max);
    bool has_bounds() const { return bounds_.has_value(); }

protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) override;
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer> inputs) override;

private:
    std::int64_t window_radius_;
    int levels_;
    std::int64_t dx_, dy_;
    bool energy_, contrast_;
    std::optional<std::pair<double, double>> bounds_;
};

/// Ordered threshold stumps combined by first match. A stump whose matching
/// class is absent falls through to the next stump.
struct DecisionRule {
    struct Stump {
        int band = 0;
        double threshold = 0.0;
        std::optional<int> class_le;
        std::optional<int> class_gt;
    };
    std::vector<Stump> stumps;
    int default_class = 0;

    int evaluate(std::span<const double> pixel) const;
    void validate(int bands) const;
};

class ClassifyFilter final : public FilterObject {
public:
    explicit ClassifyFilter(DecisionRule rule) : rule_(std::move(rule)) {}
    std::string kind() const override { return "classify"; }

protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) override;
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer> inputs) override;

private:
    DecisionRule rule_;
};

/// Mean-shift smoothing: per pixel, iterate the joint spatial/spectral mean
/// of neighbors within spatial radius h_s and spectral distance h_r until
/// the spectral shift drops below 0.1 or max_iter is reached.
class MeanshiftFilter final : public FilterObject {
public:
    MeanshiftFilter(std::int64_t spatial_radius, double range_radius, int max_iter);
    std::string kind() const override { return "meanshift"; }

protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) override;
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer> inputs) override;

private:
    std::int64_t spatial_radius_;
    double range_radius_;
    int max_iter_;
};

struct BandStats {
    std::uint64_t count = 0;
    double mean = 0.0;
    double variance = 0.0;  // population
    double min = 0.0;
    double max = 0.0;
};

/// Identity passthrough accumulating per-band pixel statistics across the
/// streamed regions of this rank; synthesize aggregates over the cluster
/// (count/sum/sum_sq via sum, min via min, max via max, in that order).
class StatsFilter final : public FilterObject {
public:
    StatsFilter() = default;
    std::string kind() const override { return "stats"; }

    bool is_persistent() const override { return true; }
    void reset_state() override;
    void synthesize_state(Communicator& comm) override;

    /// Valid only after synthesize; count == 0 is an error.
    const std::vector<BandStats>& result() const;

protected:
    ImageInfo compute_info(std::span<const ImageInfo> input_infos) override;
    PixelBuffer compute(const Region& out, std::span<const PixelBuffer> inputs) override;

private:
    std::vector<double> count_, sum_, sum_sq_, min_, max_;
    std::vector<BandStats> result_;
    bool synthesized_ = false;
};

}  // namespace rastream
