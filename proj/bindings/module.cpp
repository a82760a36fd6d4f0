#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "rastream/bench.hpp"
#include "rastream/config.hpp"
#include "rastream/filters.hpp"
#include "rastream/tiff.hpp"

namespace py = pybind11;
using namespace rastream;

namespace {

py::array buffer_to_numpy(const PixelBuffer& buf) {
    const auto h = static_cast<py::ssize_t>(buf.region().h);
    const auto w = static_cast<py::ssize_t>(buf.region().w);
    const auto b = static_cast<py::ssize_t>(buf.bands());
    py::array out;
    switch (buf.sample_type()) {
    case SampleType::U8: out = py::array_t<std::uint8_t>({h, w, b}); break;
    case SampleType::U16: out = py::array_t<std::uint16_t>({h, w, b}); break;
    case SampleType::F32: out = py::array_t<float>({h, w, b}); break;
    }
    std::memcpy(out.mutable_data(), buf.bytes(), buf.byte_size());
    return out;
}

PixelBuffer numpy_to_buffer(py::array arr) {
    if (arr.ndim() == 2) arr = arr.reshape({arr.shape(0), arr.shape(1), py::ssize_t{1}});
    if (arr.ndim() != 3) throw Error("expected a (height, width, bands) array");
    SampleType st;
    if (py::isinstance<py::array_t<std::uint8_t>>(arr))
        st = SampleType::U8;
    else if (py::isinstance<py::array_t<std::uint16_t>>(arr))
        st = SampleType::U16;
    else if (py::isinstance<py::array_t<float>>(arr))
        st = SampleType::F32;
    else
        throw Error("expected uint8, uint16 or float32 samples");
    auto contiguous = py::array::ensure(arr, py::array::c_style);
    PixelBuffer buf(Region(0, 0, contiguous.shape(1), contiguous.shape(0)),
                    static_cast<int>(contiguous.shape(2)), st);
    std::memcpy(buf.bytes(), contiguous.data(), buf.byte_size());
    return buf;
}

void write_array(const std::string& path, py::array arr) {
    const PixelBuffer buf = numpy_to_buffer(std::move(arr));
    ImageInfo info;
    info.width = buf.region().w;
    info.height = buf.region().h;
    info.bands = buf.bands();
    info.sample_type = buf.sample_type();
    auto comm = make_loopback();
    const SplitScheme scheme = striped_split(info, 1);
    RasterFilePlan plan = plan_output(path, info, scheme, *comm);
    write_region(plan, *comm, buf);
    finalize(plan, *comm);
}

}  // namespace

PYBIND11_MODULE(rastream, m) {
    m.doc() = "Distributed streaming raster pipelines";

    py::register_exception<Error>(m, "RastreamError");

    py::enum_<SampleType>(m, "SampleType")
        .value("U8", SampleType::U8)
        .value("U16", SampleType::U16)
        .value("F32", SampleType::F32);

    py::class_<Region>(m, "Region")
        .def(py::init<std::int64_t, std::int64_t, std::int64_t, std::int64_t>(),
             py::arg("x"), py::arg("y"), py::arg("w"), py::arg("h"))
        .def_readonly("x", &Region::x)
        .def_readonly("y", &Region::y)
        .def_readonly("w", &Region::w)
        .def_readonly("h", &Region::h)
        .def("empty", &Region::empty)
        .def("area", &Region::area)
        .def("__eq__", [](const Region& a, const Region& b) { return a == b; })
        .def("__repr__", &Region::to_string);

    py::class_<ImageInfo>(m, "ImageInfo")
        .def(py::init<>())
        .def_readwrite("width", &ImageInfo::width)
        .def_readwrite("height", &ImageInfo::height)
        .def_readwrite("bands", &ImageInfo::bands)
        .def_readwrite("sample_type", &ImageInfo::sample_type)
        .def_readwrite("origin_x", &ImageInfo::origin_x)
        .def_readwrite("origin_y", &ImageInfo::origin_y)
        .def_readwrite("spacing_x", &ImageInfo::spacing_x)
        .def_readwrite("spacing_y", &ImageInfo::spacing_y)
        .def_readwrite("geo_referenced", &ImageInfo::geo_referenced)
        .def("total_bytes", &ImageInfo::total_bytes);

    m.def("intersect", &intersect, py::arg("a"), py::arg("b"));
    m.def("grow_clamped", &grow_clamped, py::arg("region"), py::arg("radius"), py::arg("bounds"));

    py::class_<SplitScheme>(m, "SplitScheme")
        .def_readonly("splits", &SplitScheme::splits)
        .def("total", &SplitScheme::total);
    py::class_<Schedule>(m, "Schedule")
        .def_readonly("world_size", &Schedule::world_size)
        .def_readonly("assignment", &Schedule::assignment)
        .def("splits_for_rank", &Schedule::splits_for_rank);

    m.def("striped_split", &striped_split, py::arg("info"), py::arg("n_splits"));
    m.def("tiled_split", &tiled_split, py::arg("info"), py::arg("tile_w"), py::arg("tile_h"));
    m.def("auto_split_count", &auto_split_count, py::arg("info"), py::arg("memory_budget_bytes"),
          py::arg("world_size"));
    m.def("assign_splits", &assign_splits, py::arg("n_splits"), py::arg("world_size"));

    m.def("read_info", &read_info, py::arg("path"));
    m.def("read_raster", [](const std::string& path) {
        auto [info, buf] = read_raster(path);
        return py::make_tuple(info, buffer_to_numpy(buf));
    }, py::arg("path"));
    m.def("read_region", [](const std::string& path, const Region& region) {
        return buffer_to_numpy(read_region(path, region));
    }, py::arg("path"), py::arg("region"));
    m.def("write_raster", &write_array, py::arg("path"), py::arg("array"),
          "Write a (height, width, bands) array as a striped TIFF.");

    m.def("diff", [](const std::string& a, const std::string& b) {
        const DiffResult d = file_diff(a, b);
        return d.identical ? py::object(py::none()) : py::object(py::int_(d.first_difference));
    }, py::arg("a"), py::arg("b"),
       "None when byte-identical, else the first differing byte offset.");

    py::class_<UpdateReport>(m, "UpdateReport")
        .def_readonly("regions_processed", &UpdateReport::regions_processed)
        .def_readonly("bytes_written", &UpdateReport::bytes_written)
        .def_readonly("total_splits", &UpdateReport::total_splits);

    m.def("run_config", [](const std::string& text, int world, const std::string& output) {
        const PipelineConfig cfg = parse_config(text);
        py::gil_scoped_release release;
        return run_inproc(cfg, world, output);
    }, py::arg("config_text"), py::arg("world") = 1, py::arg("output") = std::string(),
       "Parse and execute a pipeline config with in-process workers.");

    m.def("validate_config", [](const std::string& text) { parse_config(text); },
          py::arg("config_text"), "Raises RastreamError when the config is invalid.");
}
