#ifndef MCADOT_VOLUME_HPP
#define MCADOT_VOLUME_HPP

#include <algorithm>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mcadot/common.hpp"

// Volumetric CT data model and file I/O.
//
// Native format: a <stem>.json header with keys {dims, spacing_mm, dtype}
// next to a <stem>.raw blob, little-endian, x-fastest voxel order. Writes
// and reads are bit-exact round trips.
//
// Import also accepts a NIfTI-1 subset: uncompressed single-file .nii,
// datatype 4 (int16) or 2 (uint8), little-endian, 348-byte header. The
// orientation matrix is ignored; volumes are taken as axially acquired.

namespace mcadot::volume {

constexpr int16_t kHuMin = -1024;
constexpr int16_t kHuMax = 3071;

/// 3D grid of signed Hounsfield units with physical spacing in mm.
/// Voxel order is x-fastest, then y, then z.
struct CtVolume {
    std::vector<int16_t> voxels;
    int nx = 0, ny = 0, nz = 0;
    double sx = 0.426, sy = 0.426, sz = 5.0;

    CtVolume() = default;
    CtVolume(int nx_, int ny_, int nz_, int16_t fill = 0,
             double sx_ = 0.426, double sy_ = 0.426, double sz_ = 5.0)
        : voxels(static_cast<std::size_t>(nx_) * ny_ * nz_, fill),
          nx(nx_), ny(ny_), nz(nz_), sx(sx_), sy(sy_), sz(sz_) {}

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
    }
    int16_t at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
    int16_t& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
    std::size_t voxel_count() const { return static_cast<std::size_t>(nx) * ny * nz; }

    void validate() const {
        require(nx > 0 && ny > 0 && nz > 0, "volume dims must be positive");
        require(sx > 0 && sy > 0 && sz > 0, "voxel spacing must be positive");
        require(voxels.size() == voxel_count(), "voxel count does not equal nx*ny*nz");
    }
};

/// Binary companion of CtVolume; voxels are exactly 0 or 1.
struct MaskVolume {
    std::vector<uint8_t> voxels;
    int nx = 0, ny = 0, nz = 0;
    double sx = 0.426, sy = 0.426, sz = 5.0;

    MaskVolume() = default;
    MaskVolume(int nx_, int ny_, int nz_, uint8_t fill = 0,
               double sx_ = 0.426, double sy_ = 0.426, double sz_ = 5.0)
        : voxels(static_cast<std::size_t>(nx_) * ny_ * nz_, fill),
          nx(nx_), ny(ny_), nz(nz_), sx(sx_), sy(sy_), sz(sz_) {}

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
    }
    uint8_t at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
    uint8_t& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
    std::size_t voxel_count() const { return static_cast<std::size_t>(nx) * ny * nz; }

    void validate() const {
        require(nx > 0 && ny > 0 && nz > 0, "mask dims must be positive");
        require(sx > 0 && sy > 0 && sz > 0, "voxel spacing must be positive");
        require(voxels.size() == voxel_count(), "voxel count does not equal nx*ny*nz");
        for (uint8_t v : voxels)
            require(v == 0 || v == 1, "mask voxels must be 0 or 1");
    }
};

/// Working representation of one axial plane, real-valued.
struct Slice2D {
    std::vector<double> pixels;
    int width = 0, height = 0;

    Slice2D() = default;
    Slice2D(int w, int h, double fill = 0.0)
        : pixels(static_cast<std::size_t>(w) * h, fill), width(w), height(h) {}

    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

using AnyVolume = std::variant<CtVolume, MaskVolume>;

// ---------------------------------------------------------------------------
// Slice access
// ---------------------------------------------------------------------------

/// Returns the k-th axial plane (k is 1-based) as a fresh copy.
inline Slice2D slice_at(const CtVolume& vol, int k) {
    require(k >= 1 && k <= vol.nz,
            "slice index " + std::to_string(k) + " out of range [1, " + std::to_string(vol.nz) + "]");
    Slice2D s(vol.nx, vol.ny);
    const int16_t* src = vol.voxels.data() + vol.index(0, 0, k - 1);
    for (std::size_t i = 0; i < s.pixel_count(); ++i) s.pixels[i] = static_cast<double>(src[i]);
    return s;
}

inline Slice2D slice_at(const MaskVolume& vol, int k) {
    require(k >= 1 && k <= vol.nz,
            "slice index " + std::to_string(k) + " out of range [1, " + std::to_string(vol.nz) + "]");
    Slice2D s(vol.nx, vol.ny);
    const uint8_t* src = vol.voxels.data() + vol.index(0, 0, k - 1);
    for (std::size_t i = 0; i < s.pixel_count(); ++i) s.pixels[i] = static_cast<double>(src[i]);
    return s;
}

/// Reflects a slice about its vertical centerline: out(x,y) = in(w-1-x, y).
inline Slice2D mirror_horizontal(const Slice2D& s) {
    Slice2D out(s.width, s.height);
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x)
            out.at(x, y) = s.at(s.width - 1 - x, y);
    return out;
}

// ---------------------------------------------------------------------------
// Native format
// ---------------------------------------------------------------------------

namespace detail {

inline std::string strip_volume_ext(const std::string& path) {
    for (const char* ext : {".json", ".raw"}) {
        std::size_t n = std::strlen(ext);
        if (path.size() > n && path.compare(path.size() - n, n, ext) == 0)
            return path.substr(0, path.size() - n);
    }
    return path;
}

inline void write_native(const std::string& stem, int nx, int ny, int nz,
                         double sx, double sy, double sz, const char* dtype,
                         const std::vector<unsigned char>& raw) {
    nlohmann::json header;
    header["dims"] = {nx, ny, nz};
    header["spacing_mm"] = {sx, sy, sz};
    header["dtype"] = dtype;
    std::string text = header.dump(2);
    text.push_back('\n');
    write_file_bytes(stem + ".json", reinterpret_cast<const unsigned char*>(text.data()), text.size());
    write_file_bytes(stem + ".raw", raw.data(), raw.size());
}

}  // namespace detail

/// Writes the native header+raw pair. `path` may be the stem or either
/// member of the pair; the extension is replaced.
inline void write_volume(const CtVolume& vol, const std::string& path) {
    vol.validate();
    std::vector<unsigned char> raw;
    raw.reserve(vol.voxel_count() * 2);
    for (int16_t v : vol.voxels) store_le<int16_t>(raw, v);
    detail::write_native(detail::strip_volume_ext(path), vol.nx, vol.ny, vol.nz,
                         vol.sx, vol.sy, vol.sz, "int16", raw);
}

inline void write_volume(const MaskVolume& vol, const std::string& path) {
    vol.validate();
    std::vector<unsigned char> raw(vol.voxels.begin(), vol.voxels.end());
    detail::write_native(detail::strip_volume_ext(path), vol.nx, vol.ny, vol.nz,
                         vol.sx, vol.sy, vol.sz, "uint8", raw);
}

// ---------------------------------------------------------------------------
// Reading (native pair or NIfTI-1 subset)
// ---------------------------------------------------------------------------

namespace detail {

inline AnyVolume read_native(const std::string& stem) {
    std::vector<unsigned char> htext = read_file_bytes(stem + ".json");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext.begin(), htext.end());
    } catch (const nlohmann::json::exception& e) {
        throw data_error(stem + ".json: invalid header: " + e.what());
    }
    require(header.contains("dims") && header["dims"].is_array() && header["dims"].size() == 3,
            stem + ".json: header needs 'dims' with 3 entries");
    require(header.contains("dtype"), stem + ".json: header needs 'dtype'");
    int nx = header["dims"][0].get<int>();
    int ny = header["dims"][1].get<int>();
    int nz = header["dims"][2].get<int>();
    require(nx > 0 && ny > 0 && nz > 0, stem + ".json: dims must be positive");
    double sx = 0.426, sy = 0.426, sz = 5.0;
    if (header.contains("spacing_mm")) {
        require(header["spacing_mm"].is_array() && header["spacing_mm"].size() == 3,
                stem + ".json: spacing_mm needs 3 entries");
        sx = header["spacing_mm"][0].get<double>();
        sy = header["spacing_mm"][1].get<double>();
        sz = header["spacing_mm"][2].get<double>();
    }
    std::string dtype = header["dtype"].get<std::string>();
    std::vector<unsigned char> raw = read_file_bytes(stem + ".raw");
    std::size_t n = static_cast<std::size_t>(nx) * ny * nz;

    if (dtype == "int16") {
        require(raw.size() == n * 2,
                stem + ".raw: size mismatch: header dims imply " + std::to_string(n * 2) +
                    " bytes, file has " + std::to_string(raw.size()));
        CtVolume vol(nx, ny, nz, 0, sx, sy, sz);
        for (std::size_t i = 0; i < n; ++i) {
            int16_t v = load_le<int16_t>(raw.data() + 2 * i);
            vol.voxels[i] = std::clamp(v, kHuMin, kHuMax);
        }
        vol.validate();
        return vol;
    }
    if (dtype == "uint8") {
        require(raw.size() == n,
                stem + ".raw: size mismatch: header dims imply " + std::to_string(n) +
                    " bytes, file has " + std::to_string(raw.size()));
        MaskVolume vol(nx, ny, nz, 0, sx, sy, sz);
        for (std::size_t i = 0; i < n; ++i) vol.voxels[i] = raw[i] ? 1 : 0;
        vol.validate();
        return vol;
    }
    throw data_error(stem + ".json: unsupported dtype '" + dtype + "' (expected int16 or uint8)");
}

inline AnyVolume read_nifti(const std::string& path) {
    std::vector<unsigned char> buf = read_file_bytes(path);
    if (buf.size() >= 2 && buf[0] == 0x1f && buf[1] == 0x8b)
        throw data_error(path + ": gzip-compressed NIfTI is unsupported (decompress to .nii first)");
    require(buf.size() >= 352, path + ": too small for a NIfTI-1 header");

    int32_t sizeof_hdr = load_le<int32_t>(buf.data() + 0);
    if (sizeof_hdr != 348) {
        if (sizeof_hdr == 1543569408)
            throw data_error(path + ": big-endian NIfTI is unsupported");
        throw data_error(path + ": not a NIfTI-1 file (sizeof_hdr=" + std::to_string(sizeof_hdr) + ")");
    }
    const char* magic = reinterpret_cast<const char*>(buf.data() + 344);
    if (std::memcmp(magic, "n+1", 4) != 0) {
        if (std::memcmp(magic, "ni1", 4) == 0)
            throw data_error(path + ": two-file NIfTI (.hdr/.img) is unsupported");
        throw data_error(path + ": bad NIfTI magic");
    }

    int16_t ndim = load_le<int16_t>(buf.data() + 40);
    require(ndim >= 1 && ndim <= 7, path + ": invalid dim[0]");
    int dims[7] = {1, 1, 1, 1, 1, 1, 1};
    for (int i = 0; i < 7; ++i) {
        int16_t d = load_le<int16_t>(buf.data() + 40 + 2 * (i + 1));
        dims[i] = (i < ndim) ? d : 1;
        if (dims[i] == 0) dims[i] = 1;
    }
    require(dims[3] == 1 && dims[4] == 1 && dims[5] == 1 && dims[6] == 1,
            path + ": NIfTI volumes with a 4th dimension are unsupported");
    int nx = dims[0], ny = dims[1], nz = dims[2];
    require(nx > 0 && ny > 0 && nz > 0, path + ": non-positive dims");

    int16_t datatype = load_le<int16_t>(buf.data() + 70);
    float pixdim1 = load_le<float>(buf.data() + 76 + 4);
    float pixdim2 = load_le<float>(buf.data() + 76 + 8);
    float pixdim3 = load_le<float>(buf.data() + 76 + 12);
    double sx = pixdim1 > 0 ? pixdim1 : 1.0;
    double sy = pixdim2 > 0 ? pixdim2 : 1.0;
    double sz = pixdim3 > 0 ? pixdim3 : 1.0;
    float vox_offset = load_le<float>(buf.data() + 108);
    float scl_slope = load_le<float>(buf.data() + 112);
    float scl_inter = load_le<float>(buf.data() + 116);
    double slope = (scl_slope == 0.0f) ? 1.0 : static_cast<double>(scl_slope);
    double inter = (scl_slope == 0.0f) ? 0.0 : static_cast<double>(scl_inter);

    require(vox_offset >= 348.0f, path + ": vox_offset below header size");
    std::size_t offset = static_cast<std::size_t>(vox_offset);
    std::size_t n = static_cast<std::size_t>(nx) * ny * nz;

    if (datatype == 4) {  // int16 -> CT volume
        require(buf.size() >= offset + n * 2,
                path + ": raw data truncated (need " + std::to_string(offset + n * 2) +
                    " bytes, have " + std::to_string(buf.size()) + ")");
        CtVolume vol(nx, ny, nz, 0, sx, sy, sz);
        for (std::size_t i = 0; i < n; ++i) {
            double v = static_cast<double>(load_le<int16_t>(buf.data() + offset + 2 * i));
            long long scaled = std::llround(v * slope + inter);
            vol.voxels[i] = static_cast<int16_t>(std::clamp<long long>(scaled, kHuMin, kHuMax));
        }
        vol.validate();
        return vol;
    }
    if (datatype == 2) {  // uint8 -> mask
        require(buf.size() >= offset + n,
                path + ": raw data truncated (need " + std::to_string(offset + n) +
                    " bytes, have " + std::to_string(buf.size()) + ")");
        MaskVolume vol(nx, ny, nz, 0, sx, sy, sz);
        for (std::size_t i = 0; i < n; ++i) {
            double v = static_cast<double>(buf[offset + i]);
            vol.voxels[i] = (std::llround(v * slope + inter) != 0) ? 1 : 0;
        }
        vol.validate();
        return vol;
    }
    throw data_error(path + ": unsupported NIfTI datatype code " + std::to_string(datatype) +
                     " (supported: 4 = int16, 2 = uint8)");
}

}  // namespace detail

/// Reads either a native pair (pass the stem, .json or .raw path) or a
/// single-file NIfTI-1 volume (pass the .nii path).
inline AnyVolume read_volume(const std::string& path) {
    if (path.size() > 4 && path.compare(path.size() - 4, 4, ".nii") == 0)
        return detail::read_nifti(path);
    return detail::read_native(detail::strip_volume_ext(path));
}

inline CtVolume read_ct(const std::string& path) {
    AnyVolume v = read_volume(path);
    require(std::holds_alternative<CtVolume>(v), path + ": expected a CT (int16) volume");
    return std::get<CtVolume>(std::move(v));
}

inline MaskVolume read_mask(const std::string& path) {
    AnyVolume v = read_volume(path);
    require(std::holds_alternative<MaskVolume>(v), path + ": expected a mask (uint8) volume");
    return std::get<MaskVolume>(std::move(v));
}

}  // namespace mcadot::volume

#endif
