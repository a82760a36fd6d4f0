#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>

#include "rastream/tiff.hpp"

namespace rastream {

namespace {

// TIFF tag ids used by this writer's subset.
constexpr std::uint16_t kTagImageWidth = 256;
constexpr std::uint16_t kTagImageLength = 257;
constexpr std::uint16_t kTagBitsPerSample = 258;
constexpr std::uint16_t kTagCompression = 259;
constexpr std::uint16_t kTagPhotometric = 262;
constexpr std::uint16_t kTagStripOffsets = 273;
constexpr std::uint16_t kTagSamplesPerPixel = 277;
constexpr std::uint16_t kTagRowsPerStrip = 278;
constexpr std::uint16_t kTagStripByteCounts = 279;
constexpr std::uint16_t kTagPlanarConfig = 284;
constexpr std::uint16_t kTagSampleFormat = 339;
constexpr std::uint16_t kTagModelPixelScale = 33550;
constexpr std::uint16_t kTagModelTiepoint = 33922;

constexpr std::uint16_t kTypeShort = 3;
constexpr std::uint16_t kTypeLong = 4;
constexpr std::uint16_t kTypeDouble = 12;

constexpr std::uint64_t kDataAlignment = 4096;

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void put_f64(std::vector<std::uint8_t>& b, double v) {
    std::uint8_t raw[8];
    std::memcpy(raw, &v, 8);
    b.insert(b.end(), raw, raw + 8);
}

struct IfdEntry {
    std::uint16_t tag;
    std::uint16_t type;
    std::uint32_t count;
    std::uint32_t value;  // inline value or offset into the out-of-line area
};

std::uint16_t sample_bits(SampleType t) { return static_cast<std::uint16_t>(8 * byte_width(t)); }
std::uint16_t sample_format(SampleType t) { return t == SampleType::F32 ? 3 : 1; }

}  // namespace

std::pair<std::vector<std::uint8_t>, std::uint64_t> build_tiff_header(const ImageInfo& info) {
    info.validate();
    const std::uint32_t bands = static_cast<std::uint32_t>(info.bands);
    const std::uint32_t height = static_cast<std::uint32_t>(info.height);
    const std::uint64_t row_bytes = static_cast<std::uint64_t>(info.width) * bands
                                  * byte_width(info.sample_type);

    std::size_t n_entries = 11;
    if (info.geo_referenced) n_entries += 2;
    const std::uint64_t ifd_offset = 8;
    const std::uint64_t ifd_bytes = 2 + 12 * n_entries + 4;
    std::uint64_t extra = ifd_offset + ifd_bytes;  // cursor into the out-of-line area

    // Reserve out-of-line slots in tag order.
    auto reserve = [&extra](std::uint64_t bytes) {
        const std::uint64_t at = extra;
        extra += bytes;
        return static_cast<std::uint32_t>(at);
    };
    std::uint32_t bits_at = 0, offsets_at = 0, counts_at = 0, format_at = 0;
    std::uint32_t scale_at = 0, tiepoint_at = 0;
    if (bands > 2) bits_at = reserve(2 * bands);
    if (height > 1) offsets_at = reserve(4 * height);
    if (height > 1) counts_at = reserve(4 * height);
    if (bands > 2) format_at = reserve(2 * bands);
    if (info.geo_referenced) {
        scale_at = reserve(8 * 3);
        tiepoint_at = reserve(8 * 6);
    }

    const std::uint64_t data_offset = (extra + kDataAlignment - 1) / kDataAlignment * kDataAlignment;
    if (data_offset + static_cast<std::uint64_t>(height) * row_bytes > 0xFFFFFFFFull)
        throw Error("image too large for baseline TIFF 32-bit offsets");

    auto inline_shorts = [](std::uint32_t a, std::uint32_t b_) {
        return a | (b_ << 16);
    };
    const std::uint16_t bits = sample_bits(info.sample_type);
    const std::uint16_t format = sample_format(info.sample_type);

    std::vector<IfdEntry> entries;
    entries.push_back({kTagImageWidth, kTypeLong, 1, static_cast<std::uint32_t>(info.width)});
    entries.push_back({kTagImageLength, kTypeLong, 1, height});
    if (bands == 1)
        entries.push_back({kTagBitsPerSample, kTypeShort, 1, bits});
    else if (bands == 2)
        entries.push_back({kTagBitsPerSample, kTypeShort, 2, inline_shorts(bits, bits)});
    else
        entries.push_back({kTagBitsPerSample, kTypeShort, bands, bits_at});
    entries.push_back({kTagCompression, kTypeShort, 1, 1});
    entries.push_back({kTagPhotometric, kTypeShort, 1, 1});
    if (height == 1)
        entries.push_back({kTagStripOffsets, kTypeLong, 1, static_cast<std::uint32_t>(data_offset)});
    else
        entries.push_back({kTagStripOffsets, kTypeLong, height, offsets_at});
    entries.push_back({kTagSamplesPerPixel, kTypeShort, 1, bands});
    entries.push_back({kTagRowsPerStrip, kTypeLong, 1, 1});
    if (height == 1)
        entries.push_back({kTagStripByteCounts, kTypeLong, 1, static_cast<std::uint32_t>(row_bytes)});
    else
        entries.push_back({kTagStripByteCounts, kTypeLong, height, counts_at});
    entries.push_back({kTagPlanarConfig, kTypeShort, 1, 1});
    if (bands == 1)
        entries.push_back({kTagSampleFormat, kTypeShort, 1, format});
    else if (bands == 2)
        entries.push_back({kTagSampleFormat, kTypeShort, 2, inline_shorts(format, format)});
    else
        entries.push_back({kTagSampleFormat, kTypeShort, bands, format_at});
    if (info.geo_referenced) {
        entries.push_back({kTagModelPixelScale, kTypeDouble, 3, scale_at});
        entries.push_back({kTagModelTiepoint, kTypeDouble, 6, tiepoint_at});
    }

    std::vector<std::uint8_t> out;
    out.reserve(extra);
    out.push_back('I');
    out.push_back('I');
    put_u16(out, 42);
    put_u32(out, static_cast<std::uint32_t>(ifd_offset));
    put_u16(out, static_cast<std::uint16_t>(entries.size()));
    for (const IfdEntry& e : entries) {
        put_u16(out, e.tag);
        put_u16(out, e.type);
        put_u32(out, e.count);
        put_u32(out, e.value);
    }
    put_u32(out, 0);  // no next IFD

    if (bands > 2) {
        for (std::uint32_t i = 0; i < bands; ++i) put_u16(out, bits);
    }
    if (height > 1) {
        for (std::uint32_t y = 0; y < height; ++y)
            put_u32(out, static_cast<std::uint32_t>(data_offset + y * row_bytes));
        for (std::uint32_t y = 0; y < height; ++y)
            put_u32(out, static_cast<std::uint32_t>(row_bytes));
    }
    if (bands > 2) {
        for (std::uint32_t i = 0; i < bands; ++i) put_u16(out, format);
    }
    if (info.geo_referenced) {
        // North-up convention: pixel scale y is the magnitude of spacing_y.
        put_f64(out, info.spacing_x);
        put_f64(out, std::abs(info.spacing_y));
        put_f64(out, 0.0);
        put_f64(out, 0.0);
        put_f64(out, 0.0);
        put_f64(out, 0.0);
        put_f64(out, info.origin_x);
        put_f64(out, info.origin_y);
        put_f64(out, 0.0);
    }
    return {std::move(out), data_offset};
}

class FileHandle {
public:
    FileHandle(const std::string& path, bool create) : path_(path) {
        const int flags = create ? (O_RDWR | O_CREAT | O_TRUNC) : O_RDWR;
        fd_ = ::open(path.c_str(), flags, 0644);
        if (fd_ < 0)
            throw Error("cannot open '" + path + "' for writing: " + strerror(errno));
    }
    ~FileHandle() {
        if (fd_ >= 0) ::close(fd_);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;

    void pwrite_all(const void* buf, std::size_t n, std::uint64_t offset) {
        const char* p = static_cast<const char*>(buf);
        while (n > 0) {
            const ssize_t w = ::pwrite(fd_, p, n, static_cast<off_t>(offset));
            if (w < 0) {
                if (errno == EINTR) continue;
                throw Error("write failed at offset " + std::to_string(offset) + " in '"
                            + path_ + "': " + strerror(errno));
            }
            if (w == 0)
                throw Error("short write at offset " + std::to_string(offset) + " in '" + path_ + "'");
            p += w;
            n -= static_cast<std::size_t>(w);
            offset += static_cast<std::uint64_t>(w);
        }
    }

    void truncate(std::uint64_t size) {
        if (::ftruncate(fd_, static_cast<off_t>(size)) != 0)
            throw Error("cannot pre-size '" + path_ + "': " + strerror(errno));
    }

    std::uint64_t size() const {
        struct stat st{};
        if (::fstat(fd_, &st) != 0) throw Error("fstat failed on '" + path_ + "'");
        return static_cast<std::uint64_t>(st.st_size);
    }

    std::uint64_t pixel_bytes_written = 0;

private:
    std::string path_;
    int fd_ = -1;
};

RasterFilePlan plan_output(const std::string& path, const ImageInfo& info,
                           const SplitScheme& scheme, Communicator& comm) {
    if (!scheme.is_striped(info))
        throw Error("parallel writer requires a striped split scheme (full-width stripes)");

    RasterFilePlan plan;
    plan.path = path;
    plan.info = info;
    plan.scheme = scheme;
    auto [header, data_offset] = build_tiff_header(info);
    plan.header_bytes = header.size();
    plan.data_offset = data_offset;
    plan.row_bytes = static_cast<std::uint64_t>(info.width) * info.bands
                   * byte_width(info.sample_type);
    plan.strip_offsets.resize(info.height);
    for (std::int64_t y = 0; y < info.height; ++y)
        plan.strip_offsets[y] = data_offset + static_cast<std::uint64_t>(y) * plan.row_bytes;

    if (comm.rank() == 0) {
        plan.file = std::make_shared<FileHandle>(path, /*create=*/true);
        plan.file->pwrite_all(header.data(), header.size(), 0);
        plan.file->truncate(plan.total_file_bytes());
    }

    // All ranks must agree on the layout before anyone writes pixels.
    std::uint64_t root_offset = plan.data_offset;
    const std::string ack = comm.broadcast_from_root(
        std::string(reinterpret_cast<const char*>(&root_offset), sizeof(root_offset)));
    std::uint64_t agreed = 0;
    std::memcpy(&agreed, ack.data(), sizeof(agreed));
    if (agreed != plan.data_offset)
        throw ProtocolError("rank " + std::to_string(comm.rank())
                            + " computed a different data_offset than rank 0");
    if (comm.rank() != 0) plan.file = std::make_shared<FileHandle>(path, /*create=*/false);
    return plan;
}

std::uint64_t write_region(const RasterFilePlan& plan, Communicator& comm,
                           const PixelBuffer& buf) {
    (void)comm;
    const Region& r = buf.region();
    bool known = false;
    for (const Region& s : plan.scheme.splits)
        if (s == r) { known = true; break; }
    if (!known)
        throw ContractError("write_region: " + r.to_string() + " is not a stripe of the plan");
    if (buf.bands() != plan.info.bands || buf.sample_type() != plan.info.sample_type)
        throw ContractError("write_region: buffer layout does not match the plan");
    const std::uint64_t offset = plan.data_offset
                               + static_cast<std::uint64_t>(r.y) * plan.row_bytes;
    plan.file->pwrite_all(buf.bytes(), buf.byte_size(), offset);
    plan.file->pixel_bytes_written += buf.byte_size();
    return buf.byte_size();
}

void finalize(const RasterFilePlan& plan, Communicator& comm) {
    const double written = static_cast<double>(plan.file->pixel_bytes_written);
    const auto totals = comm.all_reduce(std::span<const double>(&written, 1), ReduceOp::Sum);
    comm.barrier();
    if (comm.rank() == 0) {
        const std::uint64_t expected_pixels =
            static_cast<std::uint64_t>(plan.info.height) * plan.row_bytes;
        if (static_cast<std::uint64_t>(totals[0]) != expected_pixels)
            throw Error("incomplete write: " + std::to_string(static_cast<std::uint64_t>(totals[0]))
                        + " pixel bytes written, expected " + std::to_string(expected_pixels));
        const std::uint64_t len = plan.file->size();
        if (len != plan.total_file_bytes())
            throw Error("incomplete write: file length " + std::to_string(len) + ", expected "
                        + std::to_string(plan.total_file_bytes()));
    }
}

namespace {

class TiffParser {
public:
    explicit TiffParser(const std::string& path) : path_(path) {
        fd_ = ::open(path.c_str(), O_RDONLY);
        if (fd_ < 0) throw Error("cannot open '" + path + "': " + strerror(errno));
    }
    ~TiffParser() {
        if (fd_ >= 0) ::close(fd_);
    }
    TiffParser(const TiffParser&) = delete;
    TiffParser& operator=(const TiffParser&) = delete;

    void parse() {
        std::uint8_t head[8];
        pread_exact(head, 8, 0);
        if (head[0] == 'M' && head[1] == 'M')
            throw FormatError("big-endian TIFF not supported");
        if (head[0] != 'I' || head[1] != 'I' || rd_u16(head + 2) != 42)
            throw FormatError("not a TIFF file: " + path_);
        const std::uint32_t ifd_offset = rd_u32(head + 4);

        std::uint8_t cnt[2];
        pread_exact(cnt, 2, ifd_offset);
        const std::uint16_t n = rd_u16(cnt);
        std::vector<std::uint8_t> raw(12 * static_cast<std::size_t>(n));
        pread_exact(raw.data(), raw.size(), ifd_offset + 2);
        for (std::uint16_t i = 0; i < n; ++i) {
            const std::uint8_t* e = raw.data() + 12 * i;
            Entry ent;
            ent.type = rd_u16(e + 2);
            ent.count = rd_u32(e + 4);
            std::memcpy(ent.value_bytes, e + 8, 4);
            entries_[rd_u16(e)] = ent;
        }

        info_.width = static_cast<std::int64_t>(scalar(kTagImageWidth));
        info_.height = static_cast<std::int64_t>(scalar(kTagImageLength));
        info_.bands = static_cast<int>(scalar_or(kTagSamplesPerPixel, 1));
        info_.validate();

        if (scalar_or(kTagCompression, 1) != 1)
            throw FormatError("unsupported Compression(259) in '" + path_ + "'");
        if (scalar_or(kTagPlanarConfig, 1) != 1)
            throw FormatError("unsupported PlanarConfiguration(284) in '" + path_ + "'");

        const auto bits = array(kTagBitsPerSample);
        for (std::uint32_t b : bits)
            if (b != bits[0]) throw FormatError("mixed BitsPerSample(258) in '" + path_ + "'");
        std::uint32_t format = 1;
        if (entries_.count(kTagSampleFormat)) {
            const auto formats = array(kTagSampleFormat);
            format = formats[0];
            for (std::uint32_t f : formats)
                if (f != format) throw FormatError("mixed SampleFormat(339) in '" + path_ + "'");
        }
        if (bits[0] == 8 && format == 1)
            info_.sample_type = SampleType::U8;
        else if (bits[0] == 16 && format == 1)
            info_.sample_type = SampleType::U16;
        else if (bits[0] == 32 && format == 3)
            info_.sample_type = SampleType::F32;
        else
            throw FormatError("unsupported BitsPerSample(258)/SampleFormat(339) combination "
                              + std::to_string(bits[0]) + "/" + std::to_string(format));

        strip_offsets_ = array(kTagStripOffsets);
        strip_byte_counts_ = array(kTagStripByteCounts);
        rows_per_strip_ = entries_.count(kTagRowsPerStrip)
                              ? static_cast<std::int64_t>(scalar(kTagRowsPerStrip))
                              : info_.height;
        if (rows_per_strip_ < 1 || strip_offsets_.size() != strip_byte_counts_.size()
            || static_cast<std::int64_t>(strip_offsets_.size())
                   != (info_.height + rows_per_strip_ - 1) / rows_per_strip_)
            throw FormatError("inconsistent StripOffsets(273)/RowsPerStrip(278) in '" + path_ + "'");

        row_bytes_ = static_cast<std::uint64_t>(info_.width) * info_.bands
                   * byte_width(info_.sample_type);
        for (std::size_t s = 0; s < strip_offsets_.size(); ++s) {
            const std::int64_t rows = std::min<std::int64_t>(
                rows_per_strip_, info_.height - static_cast<std::int64_t>(s) * rows_per_strip_);
            if (strip_byte_counts_[s] != row_bytes_ * static_cast<std::uint64_t>(rows))
                throw FormatError("unexpected StripByteCounts(279) in '" + path_ + "'");
        }

        if (entries_.count(kTagModelPixelScale) && entries_.count(kTagModelTiepoint)) {
            const auto scale = doubles(kTagModelPixelScale);
            const auto tie = doubles(kTagModelTiepoint);
            if (scale.size() >= 2 && tie.size() >= 6) {
                info_.spacing_x = scale[0];
                info_.spacing_y = -scale[1];  // north-up convention
                info_.origin_x = tie[3];
                info_.origin_y = tie[4];
                info_.geo_referenced = true;
            }
        }
    }

    const ImageInfo& info() const { return info_; }

    PixelBuffer read(const Region& region) {
        if (!info_.full_region().contains(region) || region.empty())
            throw ContractError("read region " + region.to_string() + " outside image");
        PixelBuffer buf(region, info_.bands, info_.sample_type);
        const std::uint64_t pix = static_cast<std::uint64_t>(info_.bands)
                                * byte_width(info_.sample_type);
        const std::uint64_t out_row = static_cast<std::uint64_t>(region.w) * pix;
        for (std::int64_t y = region.y; y < region.y_end(); ++y) {
            const std::uint64_t off = row_offset(y) + static_cast<std::uint64_t>(region.x) * pix;
            pread_exact(buf.bytes() + static_cast<std::uint64_t>(y - region.y) * out_row,
                        out_row, off);
        }
        return buf;
    }

private:
    struct Entry {
        std::uint16_t type;
        std::uint32_t count;
        std::uint8_t value_bytes[4];
    };

    static std::uint16_t rd_u16(const std::uint8_t* p) {
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    static std::uint32_t rd_u32(const std::uint8_t* p) {
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8)
             | (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    void pread_exact(void* buf, std::size_t n, std::uint64_t offset) {
        char* p = static_cast<char*>(buf);
        while (n > 0) {
            const ssize_t got = ::pread(fd_, p, n, static_cast<off_t>(offset));
            if (got < 0) {
                if (errno == EINTR) continue;
                throw Error("read failed in '" + path_ + "': " + strerror(errno));
            }
            if (got == 0) throw FormatError("truncated file: '" + path_ + "'");
            p += got;
            n -= static_cast<std::size_t>(got);
            offset += static_cast<std::uint64_t>(got);
        }
    }

    const Entry& require(std::uint16_t tag) {
        auto it = entries_.find(tag);
        if (it == entries_.end())
            throw FormatError("missing required tag " + std::to_string(tag) + " in '" + path_ + "'");
        return it->second;
    }

    std::uint64_t scalar(std::uint16_t tag) { return array_of(require(tag))[0]; }
    std::uint64_t scalar_or(std::uint16_t tag, std::uint64_t fallback) {
        auto it = entries_.find(tag);
        return it == entries_.end() ? fallback : array_of(it->second)[0];
    }
    std::vector<std::uint32_t> array(std::uint16_t tag) {
        const auto v = array_of(require(tag));
        return {v.begin(), v.end()};
    }

    std::vector<std::uint64_t> array_of(const Entry& e) {
        std::size_t elem;
        if (e.type == kTypeShort)
            elem = 2;
        else if (e.type == kTypeLong)
            elem = 4;
        else
            throw FormatError("unsupported IFD entry type " + std::to_string(e.type));
        const std::size_t total = elem * e.count;
        std::vector<std::uint8_t> raw(total);
        if (total <= 4)
            std::memcpy(raw.data(), e.value_bytes, total);
        else
            pread_exact(raw.data(), total, rd_u32(e.value_bytes));
        std::vector<std::uint64_t> out(e.count);
        for (std::uint32_t i = 0; i < e.count; ++i)
            out[i] = elem == 2 ? rd_u16(raw.data() + 2 * i) : rd_u32(raw.data() + 4 * i);
        return out;
    }

    std::vector<double> doubles(std::uint16_t tag) {
        const Entry& e = require(tag);
        if (e.type != kTypeDouble) throw FormatError("expected DOUBLE type for tag " + std::to_string(tag));
        std::vector<double> out(e.count);
        pread_exact(out.data(), 8 * e.count, rd_u32(e.value_bytes));
        return out;
    }

    std::uint64_t row_offset(std::int64_t y) const {
        const std::size_t strip = static_cast<std::size_t>(y / rows_per_strip_);
        const std::int64_t row_in_strip = y % rows_per_strip_;
        return strip_offsets_[strip] + static_cast<std::uint64_t>(row_in_strip) * row_bytes_;
    }

    std::string path_;
    int fd_ = -1;
    std::map<std::uint16_t, Entry> entries_;
    ImageInfo info_;
    std::vector<std::uint32_t> strip_offsets_;
    std::vector<std::uint32_t> strip_byte_counts_;
    std::int64_t rows_per_strip_ = 1;
    std::uint64_t row_bytes_ = 0;
};

}  // namespace

ImageInfo read_info(const std::string& path) {
    TiffParser p(path);
    p.parse();
    return p.info();
}

std::pair<ImageInfo, PixelBuffer> read_raster(const std::string& path) {
    TiffParser p(path);
    p.parse();
    return {p.info(), p.read(p.info().full_region())};
}

PixelBuffer read_region(const std::string& path, const Region& region) {
    TiffParser p(path);
    p.parse();
    return p.read(region);
}

}  // namespace rastream
