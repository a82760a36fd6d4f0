#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <cfenv>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace rastream {

/// Recoverable runtime failure (I/O, protocol, configuration).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API misuse: a precondition the caller was responsible for.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class SampleType : std::uint8_t { U8, U16, F32 };

inline std::size_t byte_width(SampleType t) {
    switch (t) {
    case SampleType::U8: return 1;
    case SampleType::U16: return 2;
    case SampleType::F32: return 4;
    }
    throw ContractError("invalid SampleType");
}

inline const char* sample_type_name(SampleType t) {
    switch (t) {
    case SampleType::U8: return "u8";
    case SampleType::U16: return "u16";
    case SampleType::F32: return "f32";
    }
    return "?";
}

inline SampleType parse_sample_type(const std::string& s) {
    if (s == "u8") return SampleType::U8;
    if (s == "u16") return SampleType::U16;
    if (s == "f32") return SampleType::F32;
    throw Error("unknown sample type '" + s + "' (expected u8, u16 or f32)");
}

/// Rectangular pixel window. Empty regions are canonicalized to 0x0 at (0,0)
/// so equality tests are unambiguous.
struct Region {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t w = 0;
    std::int64_t h = 0;

    Region() = default;
    Region(std::int64_t x_, std::int64_t y_, std::int64_t w_, std::int64_t h_)
        : x(x_), y(y_), w(w_), h(h_) {
        if (w <= 0 || h <= 0) { x = y = w = h = 0; }
    }

    bool empty() const { return w == 0; }
    std::int64_t x_end() const { return x + w; }
    std::int64_t y_end() const { return y + h; }
    std::uint64_t area() const { return static_cast<std::uint64_t>(w) * static_cast<std::uint64_t>(h); }

    bool contains(std::int64_t px, std::int64_t py) const {
        return px >= x && px < x_end() && py >= y && py < y_end();
    }
    bool contains(const Region& r) const {
        if (r.empty()) return true;
        return r.x >= x && r.y >= y && r.x_end() <= x_end() && r.y_end() <= y_end();
    }
    bool operator==(const Region&) const = default;

    std::string to_string() const {
        return "(" + std::to_string(x) + "," + std::to_string(y) + ","
             + std::to_string(w) + "," + std::to_string(h) + ")";
    }
};

/// Maximal region contained in both; empty if disjoint.
inline Region intersect(const Region& a, const Region& b) {
    const std::int64_t x0 = std::max(a.x, b.x);
    const std::int64_t y0 = std::max(a.y, b.y);
    const std::int64_t x1 = std::min(a.x_end(), b.x_end());
    const std::int64_t y1 = std::min(a.y_end(), b.y_end());
    return Region(x0, y0, x1 - x0, y1 - y0);
}

/// Expand r by radius on all four sides, then clamp to bounds.
inline Region grow_clamped(const Region& r, std::int64_t radius, const Region& bounds) {
    if (radius < 0) throw ContractError("grow_clamped: negative radius");
    if (bounds.empty()) throw ContractError("grow_clamped: empty bounds");
    if (r.empty()) return Region();
    return intersect(Region(r.x - radius, r.y - radius, r.w + 2 * radius, r.h + 2 * radius), bounds);
}

/// Global image metadata, propagated upstream-to-downstream.
struct ImageInfo {
    std::int64_t width = 0;
    std::int64_t height = 0;
    int bands = 1;
    SampleType sample_type = SampleType::U8;
    double origin_x = 0.0;
    double origin_y = 0.0;
    double spacing_x = 1.0;
    double spacing_y = 1.0;  // may be negative for north-up rasters
    bool geo_referenced = false;

    std::uint64_t total_bytes() const {
        return static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height)
             * static_cast<std::uint64_t>(bands) * byte_width(sample_type);
    }
    Region full_region() const { return Region(0, 0, width, height); }

    void validate() const {
        if (width < 1 || height < 1 || bands < 1)
            throw Error("invalid ImageInfo: " + std::to_string(width) + "x"
                        + std::to_string(height) + "x" + std::to_string(bands));
    }
};

/// Round-half-to-even for nonnegative integer division, exact.
inline std::uint64_t div_round_half_even(std::uint64_t num, std::uint64_t den) {
    if (den == 0) throw ContractError("div_round_half_even: zero divisor");
    std::uint64_t q = num / den;
    const std::uint64_t rem2 = 2 * (num % den);
    if (rem2 > den || (rem2 == den && (q & 1))) ++q;
    return q;
}

/// Round-half-to-even for doubles (default FP environment).
inline double round_half_even(double v) { return std::nearbyint(v); }

/// Pixel data for one region: row-major, pixel-interleaved (band varies
/// fastest). The sample bytes are stored exactly as they go to disk.
class PixelBuffer {
public:
    PixelBuffer() = default;
    PixelBuffer(const Region& region, int bands, SampleType st)
        : region_(region), bands_(bands), sample_type_(st),
          data_(region.area() * static_cast<std::uint64_t>(bands) * byte_width(st), std::byte{0}) {
        if (bands < 1) throw ContractError("PixelBuffer: bands < 1");
    }

    const Region& region() const { return region_; }
    int bands() const { return bands_; }
    SampleType sample_type() const { return sample_type_; }
    std::uint64_t sample_count() const { return region_.area() * static_cast<std::uint64_t>(bands_); }

    const std::byte* bytes() const { return data_.data(); }
    std::byte* bytes() { return data_.data(); }
    std::size_t byte_size() const { return data_.size(); }

    /// Flat sample index of (x, y, b). Out-of-region access is a contract
    /// violation, never wrapped.
    std::uint64_t sample_index(std::int64_t x, std::int64_t y, int b) const {
        if (!region_.contains(x, y) || b < 0 || b >= bands_)
            throw ContractError("PixelBuffer access (" + std::to_string(x) + ","
                                + std::to_string(y) + ",b" + std::to_string(b)
                                + ") outside region " + region_.to_string());
        return (static_cast<std::uint64_t>(y - region_.y) * static_cast<std::uint64_t>(region_.w)
              + static_cast<std::uint64_t>(x - region_.x)) * static_cast<std::uint64_t>(bands_)
              + static_cast<std::uint64_t>(b);
    }

    double get(std::int64_t x, std::int64_t y, int b) const {
        return get_flat(sample_index(x, y, b));
    }

    /// Stores v in the buffer's sample type. Integer types round half-to-even
    /// and clamp to the type's range.
    void set(std::int64_t x, std::int64_t y, int b, double v) {
        set_flat(sample_index(x, y, b), v);
    }

    double get_flat(std::uint64_t i) const {
        const std::byte* p = data_.data() + i * byte_width(sample_type_);
        switch (sample_type_) {
        case SampleType::U8: return static_cast<double>(*reinterpret_cast<const std::uint8_t*>(p));
        case SampleType::U16: {
            std::uint16_t v;
            std::memcpy(&v, p, 2);
            return static_cast<double>(v);
        }
        case SampleType::F32: {
            float v;
            std::memcpy(&v, p, 4);
            return static_cast<double>(v);
        }
        }
        return 0.0;
    }

    void set_flat(std::uint64_t i, double v) {
        std::byte* p = data_.data() + i * byte_width(sample_type_);
        switch (sample_type_) {
        case SampleType::U8: {
            double r = round_half_even(v);
            r = std::min(255.0, std::max(0.0, r));
            *reinterpret_cast<std::uint8_t*>(p) = static_cast<std::uint8_t>(r);
            break;
        }
        case SampleType::U16: {
            double r = round_half_even(v);
            r = std::min(65535.0, std::max(0.0, r));
            const std::uint16_t u = static_cast<std::uint16_t>(r);
            std::memcpy(p, &u, 2);
            break;
        }
        case SampleType::F32: {
            const float f = static_cast<float>(v);
            std::memcpy(p, &f, 4);
            break;
        }
        }
    }

    /// Raw exact store for integer pipelines (value must fit the type).
    void set_raw(std::int64_t x, std::int64_t y, int b, std::uint64_t v) {
        std::byte* p = data_.data() + sample_index(x, y, b) * byte_width(sample_type_);
        switch (sample_type_) {
        case SampleType::U8:
            *reinterpret_cast<std::uint8_t*>(p) = static_cast<std::uint8_t>(v);
            break;
        case SampleType::U16: {
            const std::uint16_t u = static_cast<std::uint16_t>(v);
            std::memcpy(p, &u, 2);
            break;
        }
        case SampleType::F32:
            set(x, y, b, static_cast<double>(v));
            break;
        }
    }

    bool operator==(const PixelBuffer& o) const {
        return region_ == o.region_ && bands_ == o.bands_
            && sample_type_ == o.sample_type_ && data_ == o.data_;
    }

private:
    Region region_;
    int bands_ = 0;
    SampleType sample_type_ = SampleType::U8;
    std::vector<std::byte> data_;
};

}  // namespace rastream
