#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rastream/comm.hpp"
#include "rastream/raster.hpp"
#include "rastream/splitting.hpp"

namespace rastream {

class FormatError : public Error {
public:
    using Error::Error;
};

class FileHandle;  // rank-local descriptor, positional writes only

/// Write plan for one output raster: byte layout fixed before any pixel is
/// written and identical on every rank. The file is baseline little-endian
/// TIFF, chunky layout, one strip per image row, so the bytes on disk do not
/// depend on the split scheme or world size; offset of row y is
/// data_offset + y*row_bytes.
struct RasterFilePlan {
    std::string path;
    ImageInfo info;
    SplitScheme scheme;
    std::uint64_t header_bytes = 0;   // header + IFD + out-of-line arrays
    std::uint64_t data_offset = 0;    // 4096-aligned start of pixel data
    std::uint64_t row_bytes = 0;
    std::vector<std::uint64_t> strip_offsets;  // per row

    std::shared_ptr<FileHandle> file;

    std::uint64_t total_file_bytes() const {
        return data_offset + static_cast<std::uint64_t>(info.height) * row_bytes;
    }
};

/// Builds the deterministic plan; rank 0 writes header+IFD and pre-sizes the
/// file, then all ranks verify they computed the same data_offset.
/// The scheme must be striped (full-width splits).
RasterFilePlan plan_output(const std::string& path, const ImageInfo& info,
                           const SplitScheme& scheme, Communicator& comm);

/// Writes one stripe of pixel data at its precomputed offset. Stripes are
/// disjoint, so no locking is needed; each rank uses its own file handle.
std::uint64_t write_region(const RasterFilePlan& plan, Communicator& comm,
                           const PixelBuffer& buf);

/// Barrier, then rank 0 verifies the file length is exact.
void finalize(const RasterFilePlan& plan, Communicator& comm);

/// Reads metadata of a raster produced by this writer or any baseline-TIFF
/// file within the supported subset (uncompressed, chunky, equal bit depths).
ImageInfo read_info(const std::string& path);

/// Full-image read.
std::pair<ImageInfo, PixelBuffer> read_raster(const std::string& path);

/// Sub-region read by seeking row offsets.
PixelBuffer read_region(const std::string& path, const Region& region);

/// Header + IFD bytes and the data offset for an image, without touching the
/// filesystem (exposed for golden-file tests).
std::pair<std::vector<std::uint8_t>, std::uint64_t> build_tiff_header(const ImageInfo& info);

}  // namespace rastream
