#ifndef MCADOT_COHORT_HPP
#define MCADOT_COHORT_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "mcadot/common.hpp"

namespace mcadot::trainer {

enum class Hemisphere { Left, Right };

enum class Weakness { None, Left, Right, Both };

enum class Split { Train, Test };

inline const char* to_string(Hemisphere h) { return h == Hemisphere::Left ? "left" : "right"; }

inline const char* to_string(Weakness w) {
    switch (w) {
        case Weakness::None: return "none";
        case Weakness::Left: return "left";
        case Weakness::Right: return "right";
        case Weakness::Both: return "both";
    }
    return "none";
}

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

inline Weakness weakness_from_string(const std::string& s) {
    if (s == "none") return Weakness::None;
    if (s == "left") return Weakness::Left;
    if (s == "right") return Weakness::Right;
    if (s == "both") return Weakness::Both;
    throw data_error("unknown weakness value '" + s + "' (expected none|left|right|both)");
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw data_error("unknown split value '" + s + "' (expected train|test)");
}

inline Hemisphere hemisphere_from_string(const std::string& s) {
    if (s == "left") return Hemisphere::Left;
    if (s == "right") return Hemisphere::Right;
    throw data_error("unknown hemisphere value '" + s + "' (expected left|right)");
}

/// One patient record from the cohort manifest.
struct CaseRecord {
    std::string case_id;
    std::string volume_path;
    std::string mask_path;  // empty when the case has no labeled lesion
    Weakness weakness = Weakness::None;
    bool has_mca = false;
    Split split = Split::Train;

    /// A labeled lesion requires a mask, and a lesion never occurs without
    /// a recorded side of weakness.
    void validate() const {
        require(!case_id.empty(), "case_id must be nonempty");
        require(!volume_path.empty(), "case " + case_id + ": volume_path must be nonempty");
        if (has_mca)
            require(!mask_path.empty(), "case " + case_id + ": has_mca requires a mask_path");
        if (weakness == Weakness::None)
            require(!has_mca, "case " + case_id + ": has_mca=1 with weakness=none violates the cohort structure");
    }
};

/// One normalized 128x128 ROI image paired with its binary target mask.
struct TrainingSample {
    static constexpr int kSize = 128;

    std::vector<float> image;    // kSize*kSize values in [0,1]
    std::vector<uint8_t> target; // kSize*kSize values in {0,1}

    // provenance
    std::string case_id;
    int slice_index = 0;  // 1-based
    Hemisphere hemisphere = Hemisphere::Left;

    bool has_positive_target() const {
        for (uint8_t t : target)
            if (t) return true;
        return false;
    }

    void validate() const {
        std::size_t n = static_cast<std::size_t>(kSize) * kSize;
        require(image.size() == n, "sample image must be 128x128");
        require(target.size() == n, "sample target must be 128x128");
        for (uint8_t t : target) require(t == 0 || t == 1, "sample target must be binary");
    }
};

// ---------------------------------------------------------------------------
// Manifest I/O
// ---------------------------------------------------------------------------

inline const char* manifest_header() {
    return "case_id\tsplit\tweakness\thas_mca\tvolume_path\tmask_path";
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

}  // namespace detail

/// Reads a tab-separated cohort manifest. The header line is mandatory;
/// non-absolute volume/mask paths resolve against the manifest directory.
/// An empty file yields an empty cohort (callers decide whether to warn).
inline std::vector<CaseRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open manifest: " + path);
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
        return (base / p).string();
    };

    std::vector<CaseRecord> records;
    std::set<std::string> seen;
    std::string line;
    long line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        std::string where = path + ":" + std::to_string(line_no) + ": ";
        if (!have_header) {
            if (line != manifest_header())
                throw data_error(where + "expected manifest header '" + manifest_header() + "'");
            have_header = true;
            continue;
        }
        std::vector<std::string> f = detail::split_tabs(line);
        if (f.size() != 6)
            throw data_error(where + "expected 6 tab-separated fields, got " + std::to_string(f.size()));
        CaseRecord rec;
        try {
            rec.case_id = trim(f[0]);
            rec.split = split_from_string(trim(f[1]));
            rec.weakness = weakness_from_string(trim(f[2]));
            std::string mca = trim(f[3]);
            if (mca != "0" && mca != "1")
                throw data_error("has_mca must be 0 or 1, got '" + mca + "'");
            rec.has_mca = mca == "1";
            rec.volume_path = resolve(trim(f[4]));
            rec.mask_path = resolve(trim(f[5]));
            rec.validate();
        } catch (const std::exception& e) {
            throw data_error(where + e.what());
        }
        if (!seen.insert(rec.case_id).second)
            throw data_error(where + "duplicate case id '" + rec.case_id + "'");
        records.push_back(std::move(rec));
    }
    return records;
}

/// Writes records in load_manifest's format. Paths are written verbatim,
/// so emit paths relative to the manifest location for relocatable output.
inline void write_manifest(const std::vector<CaseRecord>& records, const std::string& path) {
    std::string out = manifest_header();
    out.push_back('\n');
    for (const CaseRecord& rec : records) {
        rec.validate();
        out += rec.case_id;
        out.push_back('\t');
        out += to_string(rec.split);
        out.push_back('\t');
        out += to_string(rec.weakness);
        out.push_back('\t');
        out += rec.has_mca ? "1" : "0";
        out.push_back('\t');
        out += rec.volume_path;
        out.push_back('\t');
        out += rec.mask_path;
        out.push_back('\n');
    }
    write_file_bytes(path, reinterpret_cast<const unsigned char*>(out.data()), out.size());
}

// ---------------------------------------------------------------------------
// Sample archive
//
// Binary container for preprocessed samples: 8-byte magic, little-endian
// u32 count, then per sample: u32 id length, id bytes, i32 slice index,
// u8 hemisphere (0 left / 1 right), 128x128 f32 image, 128x128 u8 target.
// All scalars little-endian so the bytes are platform-stable.
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr char kSampleMagic[9] = "MCADOTS1";
}

inline void write_samples(const std::vector<TrainingSample>& samples, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open file for writing: " + path);
    out.write(detail::kSampleMagic, 8);
    std::vector<unsigned char> buf;
    store_le<uint32_t>(buf, static_cast<uint32_t>(samples.size()));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (const TrainingSample& s : samples) {
        s.validate();
        require(s.hemisphere == Hemisphere::Left || s.hemisphere == Hemisphere::Right,
                "sample archive: bad hemisphere");
        buf.clear();
        store_le<uint32_t>(buf, static_cast<uint32_t>(s.case_id.size()));
        buf.insert(buf.end(), s.case_id.begin(), s.case_id.end());
        store_le<int32_t>(buf, static_cast<int32_t>(s.slice_index));
        buf.push_back(s.hemisphere == Hemisphere::Left ? 0 : 1);
        for (float v : s.image) store_le<float>(buf, v);
        buf.insert(buf.end(), s.target.begin(), s.target.end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw data_error("write failed: " + path);
}

inline std::vector<TrainingSample> load_samples(const std::string& path) {
    std::vector<unsigned char> buf = read_file_bytes(path);
    require(buf.size() >= 12 && std::memcmp(buf.data(), detail::kSampleMagic, 8) == 0,
            path + ": not a sample archive");
    const std::size_t n = static_cast<std::size_t>(TrainingSample::kSize) * TrainingSample::kSize;
    std::size_t off = 8;
    uint32_t count = load_le<uint32_t>(buf.data() + off);
    off += 4;

    std::vector<TrainingSample> samples(count);
    for (uint32_t i = 0; i < count; ++i) {
        TrainingSample& s = samples[i];
        require(off + 4 <= buf.size(), path + ": sample archive truncated");
        uint32_t id_len = load_le<uint32_t>(buf.data() + off);
        off += 4;
        require(off + id_len + 5 + n * 5 <= buf.size(), path + ": sample archive truncated");
        s.case_id.assign(reinterpret_cast<const char*>(buf.data() + off), id_len);
        off += id_len;
        s.slice_index = load_le<int32_t>(buf.data() + off);
        off += 4;
        unsigned char hemi = buf[off++];
        require(hemi <= 1, path + ": sample archive has a bad hemisphere byte");
        s.hemisphere = hemi == 0 ? Hemisphere::Left : Hemisphere::Right;
        s.image.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            s.image[j] = load_le<float>(buf.data() + off);
            off += 4;
        }
        s.target.assign(buf.data() + off, buf.data() + off + n);
        off += n;
        s.validate();
    }
    require(off == buf.size(), path + ": sample archive has trailing bytes");
    return samples;
}

}  // namespace mcadot::trainer

#endif
