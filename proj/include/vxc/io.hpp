#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vxc/cortexsim.hpp"
#include "vxc/tensor.hpp"

namespace vxc {

namespace io_detail {

inline void write_bytes(std::ofstream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw DataError("write failed");
}

inline void read_bytes(std::ifstream& is, void* p, std::size_t n, const std::string& what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw DataError("truncated file while reading " + what);
}

inline void write_u32(std::ofstream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
inline void write_u64(std::ofstream& os, std::uint64_t v) { write_bytes(os, &v, 8); }

inline std::uint32_t read_u32(std::ifstream& is, const std::string& what) {
    std::uint32_t v;
    read_bytes(is, &v, 4, what);
    return v;
}
inline std::uint64_t read_u64(std::ifstream& is, const std::string& what) {
    std::uint64_t v;
    read_bytes(is, &v, 8, what);
    return v;
}

inline void write_string(std::ofstream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::ifstream& is, const std::string& what) {
    const auto n = read_u32(is, what);
    std::string s(n, '\0');
    read_bytes(is, s.data(), n, what);
    return s;
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Binary tensor container: magic "VXC1", little-endian u32 header
// {ndim, dims..., dtype}, then the row-major f32 payload.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kDtypeF32 = 1;

inline void save_array(const std::filesystem::path& path, const Tensor<float>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write("VXC1", 4);
    io_detail::write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) io_detail::write_u32(os, static_cast<std::uint32_t>(d));
    io_detail::write_u32(os, kDtypeF32);
    io_detail::write_bytes(os, t.data(), t.numel() * sizeof(float));
}

inline Tensor<float> load_array(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    char magic[4];
    io_detail::read_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, "VXC1", 4) != 0)
        throw DataError("bad container magic in " + path.string());
    const auto ndim = io_detail::read_u32(is, "ndim");
    if (ndim > 8) throw DataError("implausible rank in " + path.string());
    Shape shape(ndim);
    for (auto& d : shape) d = io_detail::read_u32(is, "dims");
    const auto dtype = io_detail::read_u32(is, "dtype");
    if (dtype != kDtypeF32) throw DataError("unsupported dtype in " + path.string());
    std::vector<float> data(shape_numel(shape));
    io_detail::read_bytes(is, data.data(), data.size() * sizeof(float), "payload");
    char extra;
    if (is.read(&extra, 1) && is.gcount() == 1)
        throw DataError("trailing bytes in " + path.string());
    return Tensor<float>::from_vector(std::move(data), std::move(shape));
}

// ---------------------------------------------------------------------------
// Cohort directory: one container per array plus a JSON manifest naming the
// role of each file.
// ---------------------------------------------------------------------------

inline void save_cohort(const std::filesystem::path& dir, const Cohort& c) {
    std::filesystem::create_directories(dir);
    save_array(dir / "train_images.vxc", c.train_images);
    save_array(dir / "train_fmri.vxc", c.train_fmri);
    save_array(dir / "test_images.vxc", c.test_images);
    save_array(dir / "test_fmri_repeats.vxc", c.test_fmri_repeats);
    save_array(dir / "unlabeled_images.vxc", c.unlabeled_images);
    std::vector<float> mask(c.voxel_mask.begin(), c.voxel_mask.end());
    save_array(dir / "voxel_mask.vxc",
               Tensor<float>::from_vector(std::move(mask), {c.voxel_count}));

    nlohmann::json manifest;
    manifest["format"] = "vxc-cohort";
    manifest["version"] = 1;
    manifest["image_side"] = c.image_side;
    manifest["channels"] = c.channels;
    manifest["voxel_count"] = c.voxel_count;
    manifest["repeats"] = c.repeats;
    manifest["arrays"] = {{"train_images", "train_images.vxc"},
                          {"train_fmri", "train_fmri.vxc"},
                          {"test_images", "test_images.vxc"},
                          {"test_fmri_repeats", "test_fmri_repeats.vxc"},
                          {"unlabeled_images", "unlabeled_images.vxc"},
                          {"voxel_mask", "voxel_mask.vxc"}};
    std::ofstream os(dir / "manifest.json");
    if (!os) throw DataError("cannot write manifest in " + dir.string());
    os << manifest.dump(2) << "\n";
}

inline Cohort load_cohort(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw DataError("no manifest.json in " + dir.string());
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "vxc-cohort")
        throw DataError("not a cohort manifest: " + dir.string());
    const auto& arrays = manifest.at("arrays");
    auto get = [&](const char* role) {
        return load_array(dir / arrays.at(role).get<std::string>());
    };

    Cohort c;
    c.image_side = manifest.at("image_side").get<std::size_t>();
    c.channels = manifest.at("channels").get<std::size_t>();
    c.voxel_count = manifest.at("voxel_count").get<std::size_t>();
    c.repeats = manifest.at("repeats").get<std::size_t>();
    c.train_images = get("train_images");
    c.train_fmri = get("train_fmri");
    c.test_images = get("test_images");
    c.test_fmri_repeats = get("test_fmri_repeats");
    c.unlabeled_images = get("unlabeled_images");
    auto mask = get("voxel_mask");
    c.voxel_mask.resize(mask.numel());
    for (std::size_t i = 0; i < mask.numel(); ++i) c.voxel_mask[i] = mask.data()[i] != 0.f;

    if (c.train_fmri.shape().size() != 2 || c.train_fmri.dim(1) != c.voxel_count ||
        c.test_fmri_repeats.shape().size() != 3 ||
        c.test_fmri_repeats.dim(1) != c.repeats ||
        c.test_fmri_repeats.dim(2) != c.voxel_count ||
        c.voxel_mask.size() != c.voxel_count)
        throw DataError("inconsistent cohort arrays in " + dir.string());
    return c;
}

// ---------------------------------------------------------------------------
// 8-bit binary PGM (P5) / PPM (P6) image files, values round(255 * x).
// ---------------------------------------------------------------------------

// image: CHW float in [0,1]; writes P5 for 1 channel, P6 for 3.
inline void write_pnm(const std::filesystem::path& path, const float* image,
                      std::size_t channels, std::size_t height, std::size_t width) {
    if (channels != 1 && channels != 3)
        throw ConfigError("write_pnm: channels must be 1 or 3");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os << (channels == 1 ? "P5" : "P6") << "\n"
       << width << " " << height << "\n255\n";
    std::vector<unsigned char> row(width * channels);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < channels; ++c) {
                float v = image[(c * height + y) * width + x];
                v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
                row[x * channels + c] =
                    static_cast<unsigned char>(std::lround(255.0f * v));
            }
        io_detail::write_bytes(os, row.data(), row.size());
    }
}

// Reads an 8-bit P5/P6 file into a CHW float tensor scaled to [0,1].
inline Tensor<float> read_pnm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P5" && magic != "P6") throw DataError("not a binary PGM/PPM: " + path.string());
    const std::size_t channels = magic == "P5" ? 1 : 3;
    auto next_token = [&]() {
        std::string tok;
        while (is >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(is, rest);
                continue;
            }
            return tok;
        }
        throw DataError("truncated header in " + path.string());
    };
    const std::size_t width = std::stoul(next_token());
    const std::size_t height = std::stoul(next_token());
    const std::size_t maxval = std::stoul(next_token());
    if (maxval != 255) throw DataError("only 8-bit PNM supported: " + path.string());
    is.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(width * height * channels);
    io_detail::read_bytes(is, raw.data(), raw.size(), "pixel data");
    std::vector<float> out(channels * height * width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                out[(c * height + y) * width + x] =
                    static_cast<float>(raw[(y * width + x) * channels + c]) / 255.f;
    return Tensor<float>::from_vector(std::move(out), {channels, height, width});
}

// Loads a directory of PGM/PPM files (sorted by filename) as an image pool.
inline Tensor<float> read_pnm_dir(const std::filesystem::path& dir, std::size_t channels,
                                  std::size_t side) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path());
    }
    if (files.empty()) throw DataError("no .pgm/.ppm files in " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<float> out;
    out.reserve(files.size() * channels * side * side);
    for (const auto& f : files) {
        auto img = read_pnm(f);
        if (img.dim(0) != channels || img.dim(1) != side || img.dim(2) != side)
            throw DataError("image " + f.string() + " has shape " + shape_str(img.shape()) +
                            ", expected " + std::to_string(channels) + "x" +
                            std::to_string(side) + "x" + std::to_string(side));
        out.insert(out.end(), img.values().begin(), img.values().end());
    }
    return Tensor<float>::from_vector(std::move(out),
                                      {files.size(), channels, side, side});
}

}  // namespace vxc
