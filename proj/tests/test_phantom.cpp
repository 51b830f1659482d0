#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "mcadot/phantom.hpp"
#include "mcadot/preproc.hpp"

using namespace mcadot;
using namespace mcadot::phantom;
using trainer::Hemisphere;
using trainer::Split;
using trainer::Weakness;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

fs::path test_dir(const char* leaf) {
    fs::path dir = fs::temp_directory_path() / "mcadot_phantom_test" / leaf;
    fs::create_directories(dir);
    return dir;
}

PhantomSpec small_spec() {
    PhantomSpec s;
    s.nx = 192;
    s.ny = 192;
    s.nz = 12;
    s.brain_ax = 58;
    s.brain_ay = 66;
    s.center_jitter = 3;
    s.max_rotation_deg = 6;
    s.max_shift_px = 5;
    return s;
}

PhantomSpec medium_spec() {
    PhantomSpec s;
    s.nx = 256;
    s.ny = 256;
    s.nz = 12;
    s.brain_ax = 77;
    s.brain_ay = 88;
    s.center_jitter = 3;
    s.max_rotation_deg = 6;
    s.max_shift_px = 5;
    return s;
}

}  // namespace

TEST_CASE("same seed renders bit-identical cases", "[phantom]") {
    PhantomSpec spec = small_spec();
    GeneratedCase a = generate_case(spec, true, Weakness::Left, 404);
    GeneratedCase b = generate_case(spec, true, Weakness::Left, 404);
    REQUIRE(a.ct.voxels == b.ct.voxels);
    REQUIRE(a.mask.voxels == b.mask.voxels);

    GeneratedCase c = generate_case(spec, true, Weakness::Left, 405);
    REQUIRE(a.ct.voxels != c.ct.voxels);
}

TEST_CASE("phantom spec validation rejects out-of-contract values", "[phantom]") {
    PhantomSpec s = small_spec();
    s.dot_hu_hi = 70;
    CHECK_THROWS_WITH(s.validate(), ContainsSubstring("[35, 60]"));

    s = small_spec();
    s.dot_radius_hi = 6;
    CHECK_THROWS_WITH(s.validate(), ContainsSubstring("[2, 5]"));

    s = small_spec();
    s.brain_ax = 120;  // ellipse plus ring plus motion would cross the border
    CHECK_THROWS_WITH(s.validate(), ContainsSubstring("border"));

    CHECK_THROWS_WITH(generate_case(small_spec(), true, Weakness::None, 1),
                      ContainsSubstring("weakness"));
}

TEST_CASE("negative cases carry an empty mask", "[phantom]") {
    GeneratedCase g = generate_case(small_spec(), false, Weakness::Right, 77);
    for (uint8_t v : g.mask.voxels) REQUIRE(v == 0);
}

TEST_CASE("the dot sits on its slice run with the advertised intensity", "[phantom]") {
    PhantomSpec spec = small_spec();
    for (uint64_t seed : {11ull, 12ull, 13ull, 14ull}) {
        GeneratedCase g = generate_case(spec, true, Weakness::Right, seed);
        REQUIRE(g.has_dot);
        CHECK(g.dot_base_hu >= 35.0);
        CHECK(g.dot_base_hu <= 60.0);
        CHECK(g.dot_radius >= 2.0);
        CHECK(g.dot_radius <= 5.0);
        CHECK(g.dot_z_first >= spec.dot_slice_lo);
        CHECK(g.dot_z_last <= spec.dot_slice_hi);

        double sum = 0;
        std::size_t count = 0;
        for (int z = 1; z <= spec.nz; ++z) {
            bool any = false;
            for (int y = 0; y < spec.ny; ++y)
                for (int x = 0; x < spec.nx; ++x)
                    if (g.mask.at(x, y, z - 1)) {
                        any = true;
                        sum += g.ct.at(x, y, z - 1);
                        ++count;
                    }
            bool expected = z >= g.dot_z_first && z <= g.dot_z_last;
            INFO("slice " << z);
            CHECK(any == expected);
        }
        REQUIRE(count > 0);
        double mean = sum / static_cast<double>(count);
        CHECK_THAT(mean, Catch::Matchers::WithinAbs(g.dot_base_hu + spec.dot_offset, 3.0));
    }
}

TEST_CASE("the dot lands inside the target hemisphere ROI box", "[phantom]") {
    PhantomSpec spec;  // full 512 geometry, where the ROI boxes do not overlap
    spec.nz = 12;
    for (uint64_t seed : {21ull, 22ull}) {
        Weakness w = seed % 2 ? Weakness::Left : Weakness::Right;
        GeneratedCase g = generate_case(spec, true, w, seed);
        Hemisphere expected = w == Weakness::Left ? Hemisphere::Right : Hemisphere::Left;
        CHECK(g.dot_hemisphere == expected);
        auto [ox, oy] = preproc::scaled_roi_origin(g.dot_hemisphere, spec.nx, spec.ny);
        CHECK(g.dot_x >= ox);
        CHECK(g.dot_x <= ox + 128);
        CHECK(g.dot_y >= oy);
        CHECK(g.dot_y <= oy + 128);
    }
}

TEST_CASE("strip_skull recovers the phantom brain and never the bone ring", "[phantom]") {
    GeneratedCase g = generate_case(small_spec(), true, Weakness::Left, 31);
    volume::MaskVolume brain = preproc::strip_skull(g.ct, 100.0);

    // CT values identify the scene classes exactly: bone is clamped to
    // >= 101 and everything soft inside the ellipse to (0, 100)
    std::size_t soft = 0, covered = 0, bone_hits = 0;
    for (std::size_t i = 0; i < g.ct.voxels.size(); ++i) {
        bool in = brain.voxels[i] != 0;
        if (g.ct.voxels[i] > 0 && g.ct.voxels[i] < 100) {
            ++soft;
            if (in) ++covered;
        }
        if (g.ct.voxels[i] >= 101 && in) ++bone_hits;
    }
    REQUIRE(soft > 0);
    CHECK(static_cast<double>(covered) >= 0.95 * static_cast<double>(soft));
    CHECK(bone_hits == 0);
}

TEST_CASE("generate_cohort writes a loadable manifest with the requested mix", "[phantom]") {
    fs::path dir = test_dir("cohort");
    PhantomSpec spec = small_spec();
    std::vector<trainer::CaseRecord> records =
        generate_cohort(spec, 10, 0.5, 99, dir.string(), 2);
    REQUIRE(records.size() == 10);

    int positives = 0, test_cases = 0;
    std::set<std::string> ids;
    for (const trainer::CaseRecord& rec : records) {
        ids.insert(rec.case_id);
        if (rec.has_mca) {
            ++positives;
            CHECK(rec.weakness != Weakness::None);  // the structural zero
            CHECK_FALSE(rec.mask_path.empty());
            volume::MaskVolume m = volume::read_mask(rec.mask_path);
            bool any = false;
            for (uint8_t v : m.voxels) any = any || v;
            CHECK(any);
        } else {
            CHECK(rec.mask_path.empty());
        }
        if (rec.split == Split::Test) ++test_cases;
        volume::CtVolume ct = volume::read_ct(rec.volume_path);
        CHECK(ct.nx == spec.nx);
    }
    CHECK(ids.size() == 10);
    CHECK(positives == 5);  // n=10 at prevalence 0.5
    CHECK(test_cases == 2);  // 80/20 split

    // reloading the manifest yields the same records
    std::vector<trainer::CaseRecord> again =
        trainer::load_manifest((dir / "manifest.tsv").string());
    REQUIRE(again.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(again[i].case_id == records[i].case_id);
        CHECK(again[i].volume_path == records[i].volume_path);
        CHECK(again[i].has_mca == records[i].has_mca);
    }
}

TEST_CASE("cohort output does not depend on the worker count", "[phantom]") {
    PhantomSpec spec = small_spec();
    spec.nz = 10;
    fs::path d1 = test_dir("w1"), d4 = test_dir("w4");
    std::vector<trainer::CaseRecord> r1 = generate_cohort(spec, 4, 0.5, 7, d1.string(), 1);
    std::vector<trainer::CaseRecord> r4 = generate_cohort(spec, 4, 0.5, 7, d4.string(), 4);
    REQUIRE(r1.size() == r4.size());
    std::vector<unsigned char> m1 = read_file_bytes((d1 / "manifest.tsv").string());
    std::vector<unsigned char> m4 = read_file_bytes((d4 / "manifest.tsv").string());
    REQUIRE(m1 == m4);
    for (std::size_t i = 0; i < r1.size(); ++i) {
        volume::CtVolume a = volume::read_ct(r1[i].volume_path);
        volume::CtVolume b = volume::read_ct(r4[i].volume_path);
        REQUIRE(a.voxels == b.voxels);
    }
}

TEST_CASE("preprocess_case on a phantom yields hemisphere ROI samples", "[phantom]") {
    PhantomSpec spec = medium_spec();
    fs::path dir = test_dir("preproc");
    GeneratedCase g = generate_case(spec, true, Weakness::Left, 55);
    volume::write_volume(g.ct, (dir / "p1_ct").string());
    volume::write_volume(g.mask, (dir / "p1_mask").string());

    trainer::CaseRecord rec;
    rec.case_id = "p1";
    rec.volume_path = (dir / "p1_ct.json").string();
    rec.mask_path = (dir / "p1_mask.json").string();
    rec.weakness = Weakness::Left;
    rec.has_mca = true;

    preproc::PreprocConfig cfg;
    auto [lx, ly] = preproc::scaled_roi_origin(Hemisphere::Left, spec.nx, spec.ny);
    auto [rx, ry] = preproc::scaled_roi_origin(Hemisphere::Right, spec.nx, spec.ny);
    cfg.left_x0 = lx;
    cfg.left_y0 = ly;
    cfg.right_x0 = rx;
    cfg.right_y0 = ry;

    std::vector<trainer::TrainingSample> samples = preproc::preprocess_case(rec, cfg);
    REQUIRE(samples.size() == 7);  // slices 4..10, one hemisphere

    for (const trainer::TrainingSample& s : samples) {
        s.validate();
        CHECK(s.case_id == "p1");
        CHECK(s.hemisphere == Hemisphere::Right);  // contralateral to left weakness
        for (float v : s.image) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        bool expected = s.slice_index >= g.dot_z_first && s.slice_index <= g.dot_z_last;
        INFO("slice " << s.slice_index);
        CHECK(s.has_positive_target() == expected);
    }
}

TEST_CASE("preprocess_case doubles samples for weakness on both sides", "[phantom]") {
    PhantomSpec spec = medium_spec();
    fs::path dir = test_dir("both");
    GeneratedCase g = generate_case(spec, false, Weakness::Both, 66);
    volume::write_volume(g.ct, (dir / "b1_ct").string());

    trainer::CaseRecord rec;
    rec.case_id = "b1";
    rec.volume_path = (dir / "b1_ct.json").string();
    rec.weakness = Weakness::Both;

    preproc::PreprocConfig cfg;
    auto [lx, ly] = preproc::scaled_roi_origin(Hemisphere::Left, spec.nx, spec.ny);
    auto [rx, ry] = preproc::scaled_roi_origin(Hemisphere::Right, spec.nx, spec.ny);
    cfg.left_x0 = lx;
    cfg.left_y0 = ly;
    cfg.right_x0 = rx;
    cfg.right_y0 = ry;

    std::vector<trainer::TrainingSample> samples = preproc::preprocess_case(rec, cfg);
    REQUIRE(samples.size() == 14);  // 7 slices x 2 hemispheres
    int left = 0, right = 0;
    for (const trainer::TrainingSample& s : samples) {
        (s.hemisphere == Hemisphere::Left ? left : right)++;
        CHECK_FALSE(s.has_positive_target());  // negative case
    }
    CHECK(left == 7);
    CHECK(right == 7);
}

TEST_CASE("reference-grid ROI origins match manual per-volume scaling", "[phantom]") {
    PhantomSpec spec = medium_spec();
    fs::path dir = test_dir("refgrid");
    GeneratedCase g = generate_case(spec, true, Weakness::Right, 91);
    volume::write_volume(g.ct, (dir / "r1_ct").string());
    volume::write_volume(g.mask, (dir / "r1_mask").string());

    trainer::CaseRecord rec;
    rec.case_id = "r1";
    rec.volume_path = (dir / "r1_ct.json").string();
    rec.mask_path = (dir / "r1_mask.json").string();
    rec.weakness = Weakness::Right;
    rec.has_mca = true;

    preproc::PreprocConfig manual;
    auto [lx, ly] = preproc::scaled_roi_origin(Hemisphere::Left, spec.nx, spec.ny);
    auto [rx, ry] = preproc::scaled_roi_origin(Hemisphere::Right, spec.nx, spec.ny);
    manual.left_x0 = lx;
    manual.left_y0 = ly;
    manual.right_x0 = rx;
    manual.right_y0 = ry;

    preproc::PreprocConfig reference;  // default 512-grid origins, scaled per volume
    reference.roi_on_reference_grid = true;

    std::vector<trainer::TrainingSample> a = preproc::preprocess_case(rec, manual);
    std::vector<trainer::TrainingSample> b = preproc::preprocess_case(rec, reference);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image == b[i].image);
        CHECK(a[i].target == b[i].target);
    }
}
