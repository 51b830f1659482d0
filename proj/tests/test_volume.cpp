#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include <mcadot/volume.hpp>

#include "nifti_writer.hpp"

using namespace mcadot;
using namespace mcadot::volume;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
    fs::path dir = fs::temp_directory_path() / "mcadot_volume_test";
    fs::create_directories(dir);
    return dir;
}

CtVolume random_ct(Rng& rng, int nx, int ny, int nz) {
    CtVolume vol(nx, ny, nz);
    for (auto& v : vol.voxels)
        v = static_cast<int16_t>(rng.uniform_int(kHuMin, kHuMax));
    return vol;
}

MaskVolume random_mask(Rng& rng, int nx, int ny, int nz) {
    MaskVolume vol(nx, ny, nz);
    for (auto& v : vol.voxels) v = rng.bernoulli(0.2) ? 1 : 0;
    return vol;
}

}  // namespace

TEST_CASE("native CT round trip is bit exact") {
    auto dir = test_dir();
    Rng rng(1001);
    CtVolume vol = random_ct(rng, 17, 13, 5);
    vol.sx = 0.426;
    vol.sy = 0.426;
    vol.sz = 5.0;
    std::string stem = (dir / "ct_roundtrip").string();
    write_volume(vol, stem);
    CtVolume back = read_ct(stem);
    CHECK(back.voxels == vol.voxels);
    CHECK(back.nx == vol.nx);
    CHECK(back.ny == vol.ny);
    CHECK(back.nz == vol.nz);
    CHECK(back.sx == vol.sx);
    CHECK(back.sz == vol.sz);
}

TEST_CASE("native mask round trip is bit exact") {
    auto dir = test_dir();
    Rng rng(1002);
    MaskVolume vol = random_mask(rng, 9, 11, 4);
    std::string stem = (dir / "mask_roundtrip").string();
    write_volume(vol, stem);
    MaskVolume back = read_mask(stem);
    CHECK(back.voxels == vol.voxels);
    CHECK(back.nx == 9);
    CHECK(back.ny == 11);
    CHECK(back.nz == 4);
}

TEST_CASE("reader accepts stem, .json, or .raw path spellings") {
    auto dir = test_dir();
    Rng rng(1003);
    CtVolume vol = random_ct(rng, 4, 4, 2);
    std::string stem = (dir / "spellings").string();
    write_volume(vol, stem + ".json");
    CHECK(read_ct(stem).voxels == vol.voxels);
    CHECK(read_ct(stem + ".json").voxels == vol.voxels);
    CHECK(read_ct(stem + ".raw").voxels == vol.voxels);
}

TEST_CASE("out-of-range HU values clamp on import") {
    auto dir = test_dir();
    std::string stem = (dir / "clamp").string();
    {
        std::ofstream h(stem + ".json");
        h << R"({"dims":[2,1,1],"spacing_mm":[1,1,1],"dtype":"int16"})";
    }
    std::vector<unsigned char> raw;
    store_le<int16_t>(raw, 32000);
    store_le<int16_t>(raw, -5000);
    write_file_bytes(stem + ".raw", raw.data(), raw.size());
    CtVolume vol = read_ct(stem);
    CHECK(vol.voxels[0] == kHuMax);
    CHECK(vol.voxels[1] == kHuMin);
}

TEST_CASE("mask import maps any nonzero byte to 1") {
    auto dir = test_dir();
    std::string stem = (dir / "masknz").string();
    {
        std::ofstream h(stem + ".json");
        h << R"({"dims":[3,1,1],"dtype":"uint8"})";
    }
    std::vector<unsigned char> raw{0, 7, 255};
    write_file_bytes(stem + ".raw", raw.data(), raw.size());
    MaskVolume vol = read_mask(stem);
    CHECK(vol.voxels == std::vector<uint8_t>{0, 1, 1});
}

TEST_CASE("native reader rejects malformed inputs with informative errors") {
    auto dir = test_dir();
    std::string stem = (dir / "bad").string();

    SECTION("missing files") {
        CHECK_THROWS_AS(read_ct((dir / "nonexistent").string()), data_error);
    }
    SECTION("size mismatch names both byte counts") {
        {
            std::ofstream h(stem + ".json");
            h << R"({"dims":[4,4,4],"dtype":"int16"})";
        }
        std::vector<unsigned char> raw(10, 0);
        write_file_bytes(stem + ".raw", raw.data(), raw.size());
        CHECK_THROWS_WITH(read_ct(stem),
                          Catch::Matchers::ContainsSubstring("128") &&
                              Catch::Matchers::ContainsSubstring("10"));
    }
    SECTION("unknown dtype") {
        {
            std::ofstream h(stem + ".json");
            h << R"({"dims":[1,1,1],"dtype":"float32"})";
        }
        std::vector<unsigned char> raw(4, 0);
        write_file_bytes(stem + ".raw", raw.data(), raw.size());
        CHECK_THROWS_WITH(read_volume(stem), Catch::Matchers::ContainsSubstring("float32"));
    }
    SECTION("invalid json") {
        {
            std::ofstream h(stem + ".json");
            h << "{not json";
        }
        CHECK_THROWS_AS(read_volume(stem), data_error);
    }
    SECTION("type mismatch via read_ct/read_mask") {
        Rng rng(1);
        MaskVolume mask = random_mask(rng, 2, 2, 2);
        write_volume(mask, stem);
        CHECK_THROWS_AS(read_ct(stem), data_error);
        CtVolume ct = random_ct(rng, 2, 2, 2);
        write_volume(ct, stem);
        CHECK_THROWS_AS(read_mask(stem), data_error);
    }
}

TEST_CASE("NIfTI import matches an independently written twin") {
    auto dir = test_dir();
    Rng rng(1004);
    CtVolume vol = random_ct(rng, 12, 10, 6);
    std::string nii = (dir / "twin.nii").string();
    mcadot_tests::write_nifti_ct(nii, vol);
    CtVolume back = read_ct(nii);
    CHECK(back.voxels == vol.voxels);
    CHECK(back.nx == vol.nx);
    CHECK(back.ny == vol.ny);
    CHECK(back.nz == vol.nz);
    CHECK_THAT(back.sx, Catch::Matchers::WithinAbs(vol.sx, 1e-6));
    CHECK_THAT(back.sz, Catch::Matchers::WithinAbs(vol.sz, 1e-6));

    MaskVolume mask = random_mask(rng, 12, 10, 6);
    std::string mnii = (dir / "twin_mask.nii").string();
    mcadot_tests::write_nifti_mask(mnii, mask);
    CHECK(read_mask(mnii).voxels == mask.voxels);
}

TEST_CASE("NIfTI scl_slope/scl_inter rescale voxels") {
    auto dir = test_dir();
    CtVolume vol(2, 1, 1);
    vol.voxels = {100, -50};
    std::string nii = (dir / "scaled.nii").string();
    mcadot_tests::NiftiOverrides ov;
    ov.scl_slope = 2.0f;
    ov.scl_inter = 10.0f;
    mcadot_tests::write_nifti_ct(nii, vol, ov);
    CtVolume back = read_ct(nii);
    CHECK(back.voxels[0] == 210);
    CHECK(back.voxels[1] == -90);
}

TEST_CASE("NIfTI import rejects unsupported variants") {
    auto dir = test_dir();
    Rng rng(1005);
    CtVolume vol = random_ct(rng, 3, 3, 2);

    SECTION("big-endian header") {
        std::string nii = (dir / "be.nii").string();
        mcadot_tests::NiftiOverrides ov;
        ov.big_endian_hdr = true;
        mcadot_tests::write_nifti_ct(nii, vol, ov);
        CHECK_THROWS_WITH(read_volume(nii), Catch::Matchers::ContainsSubstring("big-endian"));
    }
    SECTION("two-file magic") {
        std::string nii = (dir / "ni1.nii").string();
        mcadot_tests::NiftiOverrides ov;
        ov.two_file_magic = true;
        mcadot_tests::write_nifti_ct(nii, vol, ov);
        CHECK_THROWS_WITH(read_volume(nii), Catch::Matchers::ContainsSubstring("two-file"));
    }
    SECTION("gzip-compressed stream") {
        std::string nii = (dir / "gz.nii").string();
        std::vector<unsigned char> bytes{0x1f, 0x8b, 0x08, 0x00, 0x00};
        write_file_bytes(nii, bytes.data(), bytes.size());
        CHECK_THROWS_WITH(read_volume(nii), Catch::Matchers::ContainsSubstring("gzip"));
    }
    SECTION("unsupported datatype code") {
        std::string nii = (dir / "f32.nii").string();
        mcadot_tests::write_nifti<std::int16_t>(nii, vol.voxels.data(), 3, 3, 2, 1, 1, 1, 16);
        CHECK_THROWS_WITH(read_volume(nii), Catch::Matchers::ContainsSubstring("datatype"));
    }
    SECTION("truncated voxel data") {
        std::string nii = (dir / "trunc.nii").string();
        mcadot_tests::write_nifti_ct(nii, vol);
        std::vector<unsigned char> bytes = read_file_bytes(nii);
        bytes.resize(bytes.size() - 4);
        write_file_bytes(nii, bytes.data(), bytes.size());
        CHECK_THROWS_WITH(read_volume(nii), Catch::Matchers::ContainsSubstring("truncated"));
    }
}

TEST_CASE("slice_at extracts 1-based axial planes") {
    CtVolume vol(3, 2, 2);
    for (std::size_t i = 0; i < vol.voxels.size(); ++i)
        vol.voxels[i] = static_cast<int16_t>(i);
    Slice2D s1 = slice_at(vol, 1);
    Slice2D s2 = slice_at(vol, 2);
    CHECK(s1.at(0, 0) == 0.0);
    CHECK(s1.at(2, 1) == 5.0);
    CHECK(s2.at(0, 0) == 6.0);
    CHECK(s2.at(2, 1) == 11.0);
    CHECK_THROWS_AS(slice_at(vol, 0), data_error);
    CHECK_THROWS_AS(slice_at(vol, 3), data_error);
}

TEST_CASE("mirror_horizontal reflects about the vertical centerline") {
    Slice2D s(3, 2);
    // rows: [1 2 3] / [4 5 6]
    s.pixels = {1, 2, 3, 4, 5, 6};
    Slice2D m = mirror_horizontal(s);
    CHECK(m.pixels == std::vector<double>{3, 2, 1, 6, 5, 4});
    Slice2D mm = mirror_horizontal(m);
    CHECK(mm.pixels == s.pixels);
}

TEST_CASE("mask validation rejects non-binary voxels") {
    MaskVolume vol(2, 1, 1);
    vol.voxels = {0, 2};
    CHECK_THROWS_AS(vol.validate(), data_error);
}
