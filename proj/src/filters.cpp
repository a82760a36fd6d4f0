#include <cctype>
#include <cmath>
#include <cstring>
#include <limits>

#include "rastream/filters.hpp"
#include "rastream/tiff.hpp"

namespace rastream {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double type_max(SampleType t) {
    switch (t) {
    case SampleType::U8: return 255.0;
    case SampleType::U16: return 65535.0;
    case SampleType::F32: return 1.0;
    }
    return 1.0;
}

void require_same_geometry(std::span<const ImageInfo> infos, const char* who) {
    for (std::size_t i = 1; i < infos.size(); ++i)
        if (infos[i].width != infos[0].width || infos[i].height != infos[0].height)
            throw ConfigError(std::string(who) + ": input geometries differ ("
                              + std::to_string(infos[0].width) + "x" + std::to_string(infos[0].height)
                              + " vs " + std::to_string(infos[i].width) + "x"
                              + std::to_string(infos[i].height) + ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// Sources

double SyntheticSpec::sample(std::int64_t x, std::int64_t y, int b) const {
    switch (kind) {
    case SyntheticKind::Constant:
        return value;
    case SyntheticKind::Checkerboard:
        return ((x / period + y / period) % 2 == 0) ? low : high;
    case SyntheticKind::Random: {
        const std::uint64_t h = splitmix64(seed ^ splitmix64(
            static_cast<std::uint64_t>(x) * 0x100000001b3ull
            + static_cast<std::uint64_t>(y) * 0x1000193ull
            + static_cast<std::uint64_t>(b)));
        switch (info.sample_type) {
        case SampleType::U8: return static_cast<double>(h & 0xff);
        case SampleType::U16: return static_cast<double>(h & 0xffff);
        case SampleType::F32: return static_cast<double>(h >> 11) * 0x1.0p-53;
        }
        return 0.0;
    }
    }
    return 0.0;
}

SyntheticSource::SyntheticSource(SyntheticSpec spec) : spec_(std::move(spec)) {
    spec_.info.validate();
    if (spec_.kind == SyntheticKind::Checkerboard && spec_.period < 1)
        throw ConfigError("checkerboard period must be >= 1");
}

PixelBuffer SyntheticSource::compute(const Region& out, std::span<const PixelBuffer>) {
    PixelBuffer buf(out, spec_.info.bands, spec_.info.sample_type);
    for (std::int64_t y = out.y; y < out.y_end(); ++y)
        for (std::int64_t x = out.x; x < out.x_end(); ++x)
            for (int b = 0; b < spec_.info.bands; ++b)
                buf.set(x, y, b, spec_.sample(x, y, b));
    return buf;
}

ImageInfo FileSource::describe() { return read_info(path_); }

PixelBuffer FileSource::compute(const Region& out, std::span<const PixelBuffer>) {
    return read_region(path_, out);
}

// ---------------------------------------------------------------------------
// Resample

ResampleFilter::ResampleFilter(AffineGeoTransform transform, ResampleMode mode,
                               std::int64_t out_width, std::int64_t out_height)
    : transform_(transform), mode_(mode), out_width_(out_width), out_height_(out_height) {
    if (transform.scale_x == 0.0 || transform.scale_y == 0.0)
        throw ConfigError("resample: zero scale");
    if (out_width < 1 || out_height < 1) throw ConfigError("resample: invalid output size");
}

ImageInfo ResampleFilter::compute_info(std::span<const ImageInfo> input_infos) {
    if (input_infos.size() != 1) throw GraphError("resample expects one input");
    ImageInfo out = input_infos[0];
    out.width = out_width_;
    out.height = out_height_;
    out.spacing_x = input_infos[0].spacing_x * transform_.scale_x;
    out.spacing_y = input_infos[0].spacing_y * transform_.scale_y;
    out.origin_x = input_infos[0].origin_x + transform_.offset_x * input_infos[0].spacing_x;
    out.origin_y = input_infos[0].origin_y + transform_.offset_y * input_infos[0].spacing_y;
    return out;
}

Region ResampleFilter::input_region_for(std::size_t, const Region& out_region,
                                        const ImageInfo& input_info) const {
    auto span_for = [](double scale, double offset, std::int64_t lo, std::int64_t hi) {
        const double f0 = scale * static_cast<double>(lo) + offset;
        const double f1 = scale * static_cast<double>(hi) + offset;
        return std::pair<std::int64_t, std::int64_t>(
            static_cast<std::int64_t>(std::floor(std::min(f0, f1))),
            static_cast<std::int64_t>(std::floor(std::max(f0, f1))) + 1);
    };
    auto [x0, x1] = span_for(transform_.scale_x, transform_.offset_x,
                             out_region.x, out_region.x_end() - 1);
    auto [y0, y1] = span_for(transform_.scale_y, transform_.offset_y,
                             out_region.y, out_region.y_end() - 1);
    std::int64_t margin = mode_ == ResampleMode::Bilinear ? 1 : 0;
    const Region wanted(x0 - margin, y0 - margin,
                        x1 - x0 + 1 + 2 * margin, y1 - y0 + 1 + 2 * margin);
    const Region got = intersect(wanted, input_info.full_region());
    if (got.empty())
        throw Error("resample: transform maps output region " + out_region.to_string()
                    + " entirely outside the input image");
    return got;
}

PixelBuffer ResampleFilter::compute(const Region& out, std::span<const PixelBuffer> inputs) {
    const PixelBuffer& in = inputs[0];
    const ImageInfo& info = update_output_information();
    PixelBuffer buf(out, info.bands, info.sample_type);
    const Region& avail = in.region();
    auto clamp_tap = [](std::int64_t v, std::int64_t lo, std::int64_t hi) {
        return std::min(std::max(v, lo), hi);
    };
    for (std::int64_t y = out.y; y < out.y_end(); ++y) {
        const double fy = transform_.scale_y * static_cast<double>(y) + transform_.offset_y;
        for (std::int64_t x = out.x; x < out.x_end(); ++x) {
            const double fx = transform_.scale_x * static_cast<double>(x) + transform_.offset_x;
            if (mode_ == ResampleMode::Nearest) {
                const std::int64_t ix = clamp_tap(static_cast<std::int64_t>(std::floor(fx + 0.5)),
                                                  avail.x, avail.x_end() - 1);
                const std::int64_t iy = clamp_tap(static_cast<std::int64_t>(std::floor(fy + 0.5)),
                                                  avail.y, avail.y_end() - 1);
                for (int b = 0; b < info.bands; ++b) buf.set(x, y, b, in.get(ix, iy, b));
            } else {
                const double gx = std::floor(fx);
                const double gy = std::floor(fy);
                const double tx = fx - gx;
                const double ty = fy - gy;
                const std::int64_t x0 = clamp_tap(static_cast<std::int64_t>(gx), avail.x, avail.x_end() - 1);
                const std::int64_t x1 = clamp_tap(x0 + 1, avail.x, avail.x_end() - 1);
                const std::int64_t y0 = clamp_tap(static_cast<std::int64_t>(gy), avail.y, avail.y_end() - 1);
                const std::int64_t y1 = clamp_tap(y0 + 1, avail.y, avail.y_end() - 1);
                for (int b = 0; b < info.bands; ++b) {
                    const double v = (1 - ty) * ((1 - tx) * in.get(x0, y0, b) + tx * in.get(x1, y0, b))
                                   + ty * ((1 - tx) * in.get(x0, y1, b) + tx * in.get(x1, y1, b));
                    buf.set(x, y, b, v);
                }
            }
        }
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Smooth

ImageInfo SmoothFilter::compute_info(std::span<const ImageInfo> input_infos) {
    if (input_infos.size() != 1) throw GraphError("smooth expects one input");
    return input_infos[0];
}

PixelBuffer SmoothFilter::compute(const Region& out, std::span<const PixelBuffer> inputs) {
    const PixelBuffer& in = inputs[0];
    const ImageInfo& info = update_output_information();
    const std::int64_t r = input_radius();
    const Region image = info.full_region();
    PixelBuffer buf(out, info.bands, info.sample_type);
    const std::uint64_t window = static_cast<std::uint64_t>(2 * r + 1)
                               * static_cast<std::uint64_t>(2 * r + 1);
    const bool integral = info.sample_type != SampleType::F32;
    for (std::int64_t y = out.y; y < out.y_end(); ++y) {
        for (std::int64_t x = out.x; x < out.x_end(); ++x) {
            for (int b = 0; b < info.bands; ++b) {
                // Edge taps replicate the image border pixel.
                std::uint64_t isum = 0;
                double fsum = 0.0;
                for (std::int64_t dy = -r; dy <= r; ++dy) {
                    const std::int64_t ty = std::min(std::max(y + dy, std::int64_t{0}),
                                                     image.h - 1);
                    for (std::int64_t dx = -r; dx <= r; ++dx) {
                        const std::int64_t tx = std::min(std::max(x + dx, std::int64_t{0}),
                                                         image.w - 1);
                        if (integral)
                            isum += static_cast<std::uint64_t>(in.get(tx, ty, b));
                        else
                            fsum += in.get(tx, ty, b);
                    }
                }
                if (integral)
                    buf.set_raw(x, y, b, div_round_half_even(isum, window));
                else
                    buf.set(x, y, b, fsum / static_cast<double>(window));
            }
        }
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Band math

struct BandMathFilter::Expr {
    enum class Op { Num, Band, Add, Sub, Mul, Div, Neg };
    Op op;
    double value = 0.0;
    int band = 0;
    std::unique_ptr<Expr> lhs, rhs;

    double eval(std::span<const double> bands) const {
        switch (op) {
        case Op::Num: return value;
        case Op::Band: return bands[band];
        case Op::Add: return lhs->eval(bands) + rhs->eval(bands);
        case Op::Sub: return lhs->eval(bands) - rhs->eval(bands);
        case Op::Mul: return lhs->eval(bands) * rhs->eval(bands);
        case Op::Div: return lhs->eval(bands) / rhs->eval(bands);
        case Op::Neg: return -lhs->eval(bands);
        }
        return 0.0;
    }

    int max_band() const {
        int m = op == Op::Band ? band : -1;
        if (lhs) m = std::max(m, lhs->max_band());
        if (rhs) m = std::max(m, rhs->max_band());
        return m;
    }
};

namespace {

class ExprParser {
public:
    explicit ExprParser(const std::string& text) : s_(text) {}

    std::unique_ptr<BandMathFilter::Expr> parse() {
        auto e = sum();
        skip_ws();
        if (pos_ != s_.size())
            throw ConfigError("bandmath: unexpected character '" + std::string(1, s_[pos_])
                              + "' at position " + std::to_string(pos_));
        return e;
    }

private:
    using Expr = BandMathFilter::Expr;

    std::unique_ptr<Expr> sum() {
        auto lhs = product();
        for (;;) {
            skip_ws();
            if (accept('+'))
                lhs = binary(Expr::Op::Add, std::move(lhs), product());
            else if (accept('-'))
                lhs = binary(Expr::Op::Sub, std::move(lhs), product());
            else
                return lhs;
        }
    }

    std::unique_ptr<Expr> product() {
        auto lhs = unary();
        for (;;) {
            skip_ws();
            if (accept('*'))
                lhs = binary(Expr::Op::Mul, std::move(lhs), unary());
            else if (accept('/'))
                lhs = binary(Expr::Op::Div, std::move(lhs), unary());
            else
                return lhs;
        }
    }

    std::unique_ptr<Expr> unary() {
        skip_ws();
        if (accept('-')) {
            auto e = std::make_unique<Expr>();
            e->op = Expr::Op::Neg;
            e->lhs = unary();
            return e;
        }
        return atom();
    }

    std::unique_ptr<Expr> atom() {
        skip_ws();
        if (accept('(')) {
            auto e = sum();
            skip_ws();
            if (!accept(')')) throw ConfigError("bandmath: missing ')'");
            return e;
        }
        if (pos_ < s_.size() && s_[pos_] == 'b') {
            ++pos_;
            if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_])))
                throw ConfigError("bandmath: expected band index after 'b'");
            int idx = 0;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])))
                idx = idx * 10 + (s_[pos_++] - '0');
            auto e = std::make_unique<Expr>();
            e->op = Expr::Op::Band;
            e->band = idx;
            return e;
        }
        if (pos_ < s_.size()
            && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) {
            std::size_t used = 0;
            const double v = std::stod(s_.substr(pos_), &used);
            pos_ += used;
            auto e = std::make_unique<Expr>();
            e->op = Expr::Op::Num;
            e->value = v;
            return e;
        }
        throw ConfigError("bandmath: cannot parse expression at position " + std::to_string(pos_));
    }

    std::unique_ptr<Expr> binary(Expr::Op op, std::unique_ptr<Expr> lhs,
                                 std::unique_ptr<Expr> rhs) {
        auto e = std::make_unique<Expr>();
        e->op = op;
        e->lhs = std::move(lhs);
        e->rhs = std::move(rhs);
        return e;
    }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool accept(char c) {
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    std::string s_;
    std::size_t pos_ = 0;
};

}  // namespace

BandMathFilter::BandMathFilter(const std::string& expression) : text_(expression) {
    expr_ = ExprParser(expression).parse();
    max_band_ = expr_->max_band();
}

BandMathFilter::~BandMathFilter() = default;

ImageInfo BandMathFilter::compute_info(std::span<const ImageInfo> input_infos) {
    if (input_infos.empty()) throw GraphError("bandmath expects at least one input");
    require_same_geometry(input_infos, "bandmath");
    int total_bands = 0;
    for (const ImageInfo& i : input_infos) total_bands += i.bands;
    if (max_band_ >= total_bands)
        throw ConfigError("bandmath: expression references band b" + std::to_string(max_band_)
                          + " but inputs provide " + std::to_string(total_bands) + " bands");
    ImageInfo out = input_infos[0];
    out.bands = 1;
    out.sample_type = SampleType::F32;
    return out;
}

PixelBuffer BandMathFilter::compute(const Region& out, std::span<const PixelBuffer> inputs) {
    PixelBuffer buf(out, 1, SampleType::F32);
    std::vector<double> bands;
    for (const PixelBuffer& in : inputs) bands.resize(bands.size() + in.bands());
    for (std::int64_t y = out.y; y < out.y_end(); ++y)
        for (std::int64_t x = out.x; x < out.x_end(); ++x) {
            std::size_t k = 0;
            for (const PixelBuffer& in : inputs)
                for (int b = 0; b < in.bands(); ++b) bands[k++] = in.get(x, y, b);
            buf.set(x, y, 0, expr_->eval(bands));
        }
    return buf;
}

// ---------------------------------------------------------------------------
// Pansharpen

PansharpenFilter::PansharpenFilter(std::int64_t smoothing_radius)
    : FilterObject(smoothing_radius), smoothing_radius_(smoothing_radius) {
    if (smoothing_radius < 0) throw ConfigError("pansharpen: negative radius");
}

ImageInfo PansharpenFilter::compute_info(std::span<const ImageInfo> input_infos) {
    if (input_infos.size() != 2) throw GraphError("pansharpen expects pan and xs inputs");
    if (input_infos[0].bands != 1) throw ConfigError("pansharpen: pan input must be single band");
    require_same_geometry(input_infos, "pansharpen");
    epsilon_ = input_infos[0].sample_type == SampleType::F32
                   ? static_cast<double>(std::numeric_limits<float>::epsilon())
                   : 1.0;
    ImageInfo out = input_infos[1];
    out.sample_type = SampleType::F32;
    return out;
}

Region PansharpenFilter::input_region_for(std::size_t input, const Region& out_region,
                                          const ImageInfo& input_info) const {
    if (input == 0)  // pan feeds the internal smoothing
        return grow_clamped(out_region, smoothing_radius_, input_info.full_region());
    return out_region;
}

PixelBuffer PansharpenFilter::compute(const Region& out, std::span<const PixelBuffer> inputs) {
    const PixelBuffer& pan = inputs[0];
    const PixelBuffer& xs = inputs[1];
    const ImageInfo& info = update_output_information();
    const Region image = info.full_region();
    const std::int64_t r = smoothing_radius_;
    const double window = static_cast<double>((2 * r + 1) * (2 * r + 1));
    PixelBuffer buf(out, info.bands, SampleType::F32);
    for (std::int64_t y = out.y; y < out.y_end(); ++y)
        for (std::int64_t x = out.x; x < out.x_end(); ++x) {
            double sum = 0.0;
            for (std::int64_t dy = -r; dy <= r; ++dy) {
                const std::int64_t ty = std::min(std::max(y + dy, std::int64_t{0}), image.h - 1);
                for (std::int64_t dx = -r; dx <= r; ++dx) {
                    const std::int64_t tx = std::min(std::max(x + dx, std::int64_t{0}), image.w - 1);
                    sum += pan.get(tx, ty, 0);
                }
            }
            const double ratio = pan.get(x, y, 0) / std::max(sum / window, epsilon_);
            for (int b = 0; b < info.bands; ++b)
                buf.set(x, y, b, xs.get(x, y, b) * ratio);
        }
    return buf;
}

// ---------------------------------------------------------------------------
// GLCM textures

GlcmFilter::GlcmFilter(std::int64_t window_radius, int quant_levels, std::int64_t dx,
                       std::int64_t dy, bool energy, bool contrast)
    : FilterObject(window_radius), window_radius_(window_radius), levels_(quant_levels),
      dx_(dx), dy_(dy), energy_(energy), contrast_(contrast) {
    if (quant_levels < 2) throw ConfigError("glcm: quant_levels must be >= 2");
    if (!energy && !contrast) throw ConfigError("glcm: no feature selected");
    if (dx == 0 && dy == 0) throw ConfigError("glcm: zero offset");
}

void GlcmFilter::set_bounds(double global_min, double global_max) {
    bounds_ = {global_min, global_max};
    touch();
}

ImageInfo GlcmFilter::compute_info(std::span<const ImageInfo> input_infos) {
    if (input_infos.size() != 1) throw GraphError("glcm expects one input");
    if (input_infos[0].bands != 1) throw ConfigError("glcm: input must be single band");
    ImageInfo out = input_infos[0];
    out.bands = (energy_ ? 1 : 0) + (contrast_ ? 1 : 0);
    out.sample_type = SampleType::F32;
    return out;
}

PixelBuffer GlcmFilter::compute(const Region& out, std::span<const PixelBuffer> inputs) {
    if (!bounds_)
        throw Error("glcm: quantization bounds not set (run a statistics pass first)");
    const PixelBuffer& in = inputs[0];
    const ImageInfo& info = update_output_information();
    const Region image(0, 0, info.width, info.height);
    const double lo = bounds_->first;
    const double range = bounds_->second - bounds_->first;
    const std::int64_t r = window_radius_;
    const int levels = levels_;

    auto quantize = [&](double v) -> int {
        if (range <= 0.0) return 0;
        int q = static_cast<int>(std::floor((v - lo) / range * levels));
        return std::min(std::max(q, 0), levels - 1);
    };

    PixelBuffer buf(out, info.bands, SampleType::F32);
    // Quantized copy of the available window data, indexed in input space.
    const Region& avail = in.region();
    std::vector<int> quant(static_cast<std::size_t>(avail.area()));
    for (std::int64_t y = avail.y; y < avail.y_end(); ++y)
        for (std::int64_t x = avail.x; x < avail.x_end(); ++x)
            quant[static_cast<std::size_t>((y - avail.y) * avail.w + (x - avail.x))] =
                quantize(in.get(x, y, 0));
    auto q_at = [&](std::int64_t x, std::int64_t y) {
        return quant[static_cast<std::size_t>((y - avail.y) * avail.w + (x - avail.x))];
    };

    std::vector<std::uint32_t> matrix(static_cast<std::size_t>(levels) * levels);
    for (std::int64_t y = out.y; y < out.y_end(); ++y) {
        for (std::int64_t x = out.x; x < out.x_end(); ++x) {
            // Window truncated at the image boundary.
            const Region window = intersect(Region(x - r, y - r, 2 * r + 1, 2 * r + 1), image);
            std::fill(matrix.begin(), matrix.end(), 0);
            std::uint64_t pairs = 0;
            for (std::int64_t qy = window.y; qy < window.y_end(); ++qy)
                for (std::int64_t qx = window.x; qx < window.x_end(); ++qx) {
                    const std::int64_t px = qx + dx_;
                    const std::int64_t py = qy + dy_;
                    if (!window.contains(px, py)) continue;
                    const int a = q_at(qx, qy);
                    const int b = q_at(px, py);
                    ++matrix[static_cast<std::size_t>(a) * levels + b];
                    ++matrix[static_cast<std::size_t>(b) * levels + a];
                    ++pairs;
                }
            double energy = 0.0, contrast = 0.0;
            if (pairs > 0) {
                const double total = static_cast<double>(2 * pairs);
                for (int i = 0; i < levels; ++i)
                    for (int j = 0; j < levels; ++j) {
                        const std::uint32_t c = matrix[static_cast<std::size_t>(i) * levels + j];
                        if (c == 0) continue;
                        const double p = static_cast<double>(c) / total;
                        energy += p * p;
                        contrast += static_cast<double>((i - j) * (i - j)) * p;
                    }
            }
            int band = 0;
            if (energy_) buf.set(x, y, band++, energy);
            if (contrast_) buf.set(x, y, band++, contrast);
        }
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Classification

int DecisionRule::evaluate(std::span<const double> pixel) const {
    for (const Stump& s : stumps) {
        const std::optional<int>& cls = pixel[s.band] <= s.threshold ? s.class_le : s.class_gt;
        if (cls) return *cls;
    }
    return default_class;
}

void DecisionRule::validate(int bands) const {
    auto check_label = [](int label) {
        if (label < 0 || label > 255)
            throw ConfigError("classify: label " + std::to_string(label)
                              + " does not fit the u8 output");
    };
    check_label(default_class);
    for (const Stump& s : stumps) {
        if (s.band < 0 || s.band >= bands)
            throw ConfigError("classify: stump band b" + std::to_string(s.band)
                              + " out of range for " + std::to_string(bands) + "-band input");
        if (s.class_le) check_label(*s.class_le);
        if (s.class_gt) check_label(*s.class_gt);
    }
}

ImageInfo ClassifyFilter::compute_info(std::span<const ImageInfo> input_infos) {
    if (input_infos.size() != 1) throw GraphError("classify expects one input");
    rule_.validate(input_infos[0].bands);
    ImageInfo out = input_infos[0];
    out.bands = 1;
    out.sample_type = SampleType::U8;
    return out;
}

PixelBuffer ClassifyFilter::compute(const Region& out, std::span<const PixelBuffer> inputs) {
    const PixelBuffer& in = inputs[0];
    PixelBuffer buf(out, 1, SampleType::U8);
    std::vector<double> pixel(in.bands());
    for (std::int64_t y = out.y; y < out.y_end(); ++y)
        for (std::int64_t x = out.x; x < out.x_end(); ++x) {
            for (int b = 0; b < in.bands(); ++b) pixel[b] = in.get(x, y, b);
            buf.set_raw(x, y, 0, static_cast<std::uint64_t>(rule_.evaluate(pixel)));
        }
    return buf;
}

// ---------------------------------------------------------------------------
// Mean shift

MeanshiftFilter::MeanshiftFilter(std::int64_t spatial_radius, double range_radius, int max_iter)
    : FilterObject(spatial_radius * max_iter), spatial_radius_(spatial_radius),
      range_radius_(range_radius), max_iter_(max_iter) {
    if (spatial_radius < 1 || range_radius <= 0.0 || max_iter < 1)
        throw ConfigError("meanshift: invalid parameters");
}

ImageInfo MeanshiftFilter::compute_info(std::span<const ImageInfo> input_infos) {
    if (input_infos.size() != 1) throw GraphError("meanshift expects one input");
    return input_infos[0];
}

PixelBuffer MeanshiftFilter::compute(const Region& out, std::span<const PixelBuffer> inputs) {
    const PixelBuffer& in = inputs[0];
    const ImageInfo& info = update_output_information();
    const Region& avail = in.region();
    const int bands = info.bands;
    constexpr double kConvergence = 0.1;

    PixelBuffer buf(out, bands, info.sample_type);
    std::vector<double> v(bands), acc(bands);
    for (std::int64_t y = out.y; y < out.y_end(); ++y) {
        for (std::int64_t x = out.x; x < out.x_end(); ++x) {
            double px = static_cast<double>(x);
            double py = static_cast<double>(y);
            for (int b = 0; b < bands; ++b) v[b] = in.get(x, y, b);
            for (int iter = 0; iter < max_iter_; ++iter) {
                const std::int64_t qx0 = std::max<std::int64_t>(
                    static_cast<std::int64_t>(std::ceil(px - spatial_radius_)), avail.x);
                const std::int64_t qx1 = std::min<std::int64_t>(
                    static_cast<std::int64_t>(std::floor(px + spatial_radius_)), avail.x_end() - 1);
                const std::int64_t qy0 = std::max<std::int64_t>(
                    static_cast<std::int64_t>(std::ceil(py - spatial_radius_)), avail.y);
                const std::int64_t qy1 = std::min<std::int64_t>(
                    static_cast<std::int64_t>(std::floor(py + spatial_radius_)), avail.y_end() - 1);
                std::fill(acc.begin(), acc.end(), 0.0);
                double sx = 0.0, sy = 0.0;
                std::uint64_t n = 0;
                for (std::int64_t qy = qy0; qy <= qy1; ++qy)
                    for (std::int64_t qx = qx0; qx <= qx1; ++qx) {
                        double d2 = 0.0;
                        for (int b = 0; b < bands; ++b) {
                            const double d = in.get(qx, qy, b) - v[b];
                            d2 += d * d;
                        }
                        if (d2 > range_radius_ * range_radius_) continue;
                        for (int b = 0; b < bands; ++b) acc[b] += in.get(qx, qy, b);
                        sx += static_cast<double>(qx);
                        sy += static_cast<double>(qy);
                        ++n;
                    }
                if (n == 0) break;
                double shift2 = 0.0;
                for (int b = 0; b < bands; ++b) {
                    const double nv = acc[b] / static_cast<double>(n);
                    const double d = nv - v[b];
                    shift2 += d * d;
                    v[b] = nv;
                }
                px = sx / static_cast<double>(n);
                py = sy / static_cast<double>(n);
                if (shift2 < kConvergence * kConvergence) break;
            }
            for (int b = 0; b < bands; ++b) buf.set(x, y, b, v[b]);
        }
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Persistent statistics

ImageInfo StatsFilter::compute_info(std::span<const ImageInfo> input_infos) {
    if (input_infos.size() != 1) throw GraphError("stats expects one input");
    return input_infos[0];
}

void StatsFilter::reset_state() {
    const int bands = inputs().empty() ? 0
                                       : inputs()[0]->update_output_information().bands;
    count_.assign(bands, 0.0);
    sum_.assign(bands, 0.0);
    sum_sq_.assign(bands, 0.0);
    min_.assign(bands, std::numeric_limits<double>::infinity());
    max_.assign(bands, -std::numeric_limits<double>::infinity());
    result_.clear();
    synthesized_ = false;
}

PixelBuffer StatsFilter::compute(const Region& out, std::span<const PixelBuffer> inputs) {
    const PixelBuffer& in = inputs[0];
    const int bands = in.bands();
    if (count_.size() != static_cast<std::size_t>(bands)) reset_state();
    for (std::int64_t y = out.y; y < out.y_end(); ++y)
        for (std::int64_t x = out.x; x < out.x_end(); ++x)
            for (int b = 0; b < bands; ++b) {
                const double v = in.get(x, y, b);
                count_[b] += 1.0;
                sum_[b] += v;
                sum_sq_[b] += v * v;
                min_[b] = std::min(min_[b], v);
                max_[b] = std::max(max_[b], v);
            }
    return in;
}

void StatsFilter::synthesize_state(Communicator& comm) {
    const std::size_t bands = count_.size();
    std::vector<double> sums;
    sums.reserve(3 * bands);
    sums.insert(sums.end(), count_.begin(), count_.end());
    sums.insert(sums.end(), sum_.begin(), sum_.end());
    sums.insert(sums.end(), sum_sq_.begin(), sum_sq_.end());
    const auto total = comm.all_reduce(sums, ReduceOp::Sum);
    const auto gmin = comm.all_reduce(min_, ReduceOp::Min);
    const auto gmax = comm.all_reduce(max_, ReduceOp::Max);

    result_.resize(bands);
    for (std::size_t b = 0; b < bands; ++b) {
        const double n = total[b];
        if (n <= 0.0) throw Error("undefined statistics: no pixels accumulated");
        const double mean = total[bands + b] / n;
        result_[b].count = static_cast<std::uint64_t>(n);
        result_[b].mean = mean;
        result_[b].variance = total[2 * bands + b] / n - mean * mean;
        result_[b].min = gmin[b];
        result_[b].max = gmax[b];
    }
    synthesized_ = true;
}

const std::vector<BandStats>& StatsFilter::result() const {
    if (!synthesized_) throw Error("statistics not synthesized yet");
    return result_;
}

}  // namespace rastream
