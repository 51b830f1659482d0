#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mcadot/preproc.hpp"

#include "synthetic_head.hpp"

using namespace mcadot;
using namespace mcadot::preproc;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using mcadot_tests::TestHead;
using mcadot_tests::displacement_error;
using mcadot_tests::make_head;

TEST_CASE("rigid transforms invert exactly", "[preproc]") {
    Rng rng(411);
    for (int trial = 0; trial < 50; ++trial) {
        RigidTransform2D t;
        t.theta = rng.uniform(-0.5, 0.5);
        t.tx = rng.uniform(-30, 30);
        t.ty = rng.uniform(-30, 30);
        t.cx = rng.uniform(0, 256);
        t.cy = rng.uniform(0, 256);
        RigidTransform2D inv = t.inverse();
        for (int p = 0; p < 10; ++p) {
            double x = rng.uniform(-50, 300), y = rng.uniform(-50, 300);
            auto [fx, fy] = t.apply(x, y);
            auto [bx, by] = t.apply_inverse(fx, fy);
            CHECK_THAT(bx, WithinAbs(x, 1e-9));
            CHECK_THAT(by, WithinAbs(y, 1e-9));
            auto [ix, iy] = inv.apply(fx, fy);
            CHECK_THAT(ix, WithinAbs(x, 1e-9));
            CHECK_THAT(iy, WithinAbs(y, 1e-9));
        }
    }
}

TEST_CASE("apply_rigid identity returns the image exactly", "[preproc]") {
    Rng rng(412);
    volume::Slice2D s(17, 13);
    for (double& v : s.pixels) v = rng.uniform(-100, 100);
    RigidTransform2D id;
    id.cx = 8;
    id.cy = 6;
    volume::Slice2D out = apply_rigid(s, id, Resample::bilinear);
    REQUIRE(out.pixels == s.pixels);
}

TEST_CASE("apply_rigid shifts content and fills with the image minimum", "[preproc]") {
    volume::Slice2D s(4, 1);
    s.pixels = {5.0, 2.0, 7.0, 9.0};
    RigidTransform2D t;
    t.tx = 1;  // content moves one pixel right
    volume::Slice2D out = apply_rigid(s, t, Resample::bilinear);
    REQUIRE(out.pixels == std::vector<double>{2.0, 5.0, 2.0, 7.0});
}

TEST_CASE("rotating forward then back loses little on a smooth image", "[preproc]") {
    volume::Slice2D s(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            double dx = x - 31.5, dy = y - 31.5;
            s.at(x, y) = 100.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * 10.0 * 10.0));
        }
    RigidTransform2D fwd;
    fwd.theta = 10.0 * 3.14159265358979323846 / 180.0;
    fwd.cx = fwd.cy = 31.5;
    volume::Slice2D back = apply_rigid(apply_rigid(s, fwd), fwd.inverse());
    double sum = 0;
    for (std::size_t i = 0; i < s.pixels.size(); ++i) sum += std::fabs(back.pixels[i] - s.pixels[i]);
    double mean = sum / static_cast<double>(s.pixels.size());
    CHECK(mean < 0.02 * 100.0);  // under 2% of the dynamic range
}

TEST_CASE("apply_rigid nearest keeps masks binary", "[preproc]") {
    Rng rng(413);
    volume::Slice2D m(40, 40);
    for (double& v : m.pixels) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    RigidTransform2D t;
    t.theta = 0.2;
    t.tx = 3.7;
    t.ty = -2.2;
    t.cx = t.cy = 19.5;
    volume::Slice2D out = apply_rigid(m, t, Resample::nearest);
    for (double v : out.pixels) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("strip_skull keeps the interior disk and rejects ring, air, and border blobs",
          "[preproc]") {
    // disk-in-ring slice: soft disk r<=20, low gap, bright ring, plus a
    // soft blob touching the border that must be ignored
    const int n = 96;
    volume::CtVolume vol(n, n, 3, -1000);
    double c = (n - 1) / 2.0;
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double r = std::hypot(x - c, y - c);
                int16_t v = -1000;
                if (r <= 20) v = 40;
                else if (r <= 26) v = -30;
                else if (r <= 32) v = 1200;
                if (x < 4) v = 50;  // soft column on the border
                vol.at(x, y, z) = v;
            }
    volume::MaskVolume brain = strip_skull(vol, 100.0);

    std::size_t disk = 0, covered = 0;
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double r = std::hypot(x - c, y - c);
                bool in = brain.at(x, y, z) != 0;
                if (x < 4) {
                    CHECK_FALSE(in);  // border-touching component excluded
                    continue;
                }
                if (r <= 20) {
                    ++disk;
                    if (in) ++covered;
                }
                if (r > 26 && r <= 32) CHECK_FALSE(in);  // never the ring
                if (r > 34) CHECK_FALSE(in);             // never outside air
            }
    CHECK(static_cast<double>(covered) >= 0.95 * static_cast<double>(disk));
}

TEST_CASE("strip_skull reports when no brain exists", "[preproc]") {
    volume::CtVolume vol(32, 32, 2, -1000);
    CHECK_THROWS_WITH(strip_skull(vol, 100.0), ContainsSubstring("no brain found"));
}

TEST_CASE("symmetry_register returns near-identity on a symmetric slice", "[preproc]") {
    TestHead head = make_head(256, 256);
    RegistrationResult reg = symmetry_register(head.img, head.mask);
    CHECK_FALSE(reg.degenerate);
    CHECK(reg.score >= reg.identity_score);
    double deg = 180.0 / 3.14159265358979323846;
    CHECK(std::fabs(reg.transform.theta) * deg <= 0.2);
    CHECK(std::fabs(reg.transform.tx) <= 0.5);
    CHECK(std::fabs(reg.transform.ty) <= 0.5);
}

TEST_CASE("symmetry_register recovers known perturbations", "[preproc]") {
    TestHead head = make_head(256, 256);
    const double deg = 3.14159265358979323846 / 180.0;
    struct Trial {
        double theta_deg, tx, ty;
    };
    const Trial trials[] = {{7.0, 5.0, -3.0}, {-6.0, -9.0, 7.0}, {3.5, 11.0, 12.0}};
    for (const Trial& trial : trials) {
        RigidTransform2D applied;
        applied.theta = trial.theta_deg * deg;
        applied.tx = trial.tx;
        applied.ty = trial.ty;
        applied.cx = applied.cy = 127.5;
        volume::Slice2D moved = apply_rigid(head.img, applied, Resample::bilinear);
        volume::Slice2D moved_mask = apply_rigid(head.mask, applied, Resample::nearest);

        RegistrationResult reg = symmetry_register(moved, moved_mask);
        INFO("applied theta=" << trial.theta_deg << " t=(" << trial.tx << "," << trial.ty << ")");
        CHECK(reg.score >= reg.identity_score);
        CHECK(std::fabs(reg.transform.theta + applied.theta) / deg <= 1.0);
        CHECK(displacement_error(reg.transform, applied, 127.5, 127.5) <= 1.5);
    }
}

TEST_CASE("symmetry_register flags a flat image as degenerate", "[preproc]") {
    volume::Slice2D flat(128, 128, 25.0);
    volume::Slice2D mask(128, 128, 0.0);
    for (int y = 40; y < 90; ++y)
        for (int x = 40; x < 90; ++x) mask.at(x, y) = 1.0;
    RegistrationResult reg = symmetry_register(flat, mask);
    CHECK(reg.degenerate);
    CHECK(reg.transform.theta == 0.0);
    CHECK(reg.transform.tx == 0.0);
    CHECK(reg.transform.ty == 0.0);
}

TEST_CASE("symmetry_register rejects an empty brain mask", "[preproc]") {
    volume::Slice2D s(64, 64, 10.0);
    volume::Slice2D empty(64, 64, 0.0);
    CHECK_THROWS_WITH(symmetry_register(s, empty), ContainsSubstring("empty brain mask"));
}

TEST_CASE("window_hu maps the window linearly onto [0,1]", "[preproc]") {
    volume::Slice2D s(5, 1);
    s.pixels = {20.0, 80.0, 50.0, 10.0, 100.0};
    volume::Slice2D out = window_hu(s, 20, 80);
    CHECK(out.pixels == std::vector<double>{0.0, 1.0, 0.5, 0.0, 1.0});
    CHECK_THROWS_WITH(window_hu(s, 80, 20), ContainsSubstring("lo < hi"));
}

TEST_CASE("equalize_histogram stretches a two-level image to full range", "[preproc]") {
    volume::Slice2D s(4, 1);
    s.pixels = {0.2, 0.7, 0.7, 0.7};
    volume::Slice2D ones(4, 1, 1.0);
    volume::Slice2D out = equalize_histogram(s, ones, 256);
    CHECK_THAT(out.pixels[0], WithinAbs(0.0, 1e-12));
    CHECK_THAT(out.pixels[1], WithinAbs(1.0, 1e-12));
    CHECK_THAT(out.pixels[2], WithinAbs(1.0, 1e-12));
}

TEST_CASE("equalize_histogram leaves a single-level image unchanged", "[preproc]") {
    volume::Slice2D s(6, 1, 0.4);
    volume::Slice2D ones(6, 1, 1.0);
    volume::Slice2D out = equalize_histogram(s, ones, 256);
    REQUIRE(out.pixels == s.pixels);
}

TEST_CASE("equalize_histogram zeroes unmasked pixels and validates inputs", "[preproc]") {
    volume::Slice2D s(4, 1);
    s.pixels = {0.1, 0.9, 0.5, 0.3};
    volume::Slice2D mask(4, 1);
    mask.pixels = {1.0, 1.0, 0.0, 0.0};
    volume::Slice2D out = equalize_histogram(s, mask, 16);
    CHECK(out.pixels[2] == 0.0);
    CHECK(out.pixels[3] == 0.0);

    volume::Slice2D empty(4, 1, 0.0);
    CHECK_THROWS_WITH(equalize_histogram(s, empty, 16), ContainsSubstring("empty mask"));

    volume::Slice2D frac(4, 1, 0.5);
    CHECK_THROWS_WITH(equalize_histogram(s, frac, 16), ContainsSubstring("binary"));

    volume::Slice2D bad(4, 1, 1.0);
    volume::Slice2D big(4, 1, 1.5);
    CHECK_THROWS_WITH(equalize_histogram(big, bad, 16), ContainsSubstring("[0,1]"));
}

TEST_CASE("equalize_histogram is monotone and flattens a dense histogram", "[preproc]") {
    const int n = 128, bins = 256;
    volume::Slice2D s(n, n);
    Rng rng(977);
    for (double& v : s.pixels) v = rng.uniform();
    volume::Slice2D ones(n, n, 1.0);
    volume::Slice2D out = equalize_histogram(s, ones, bins);

    // monotone: order of values never flips
    for (int i = 0; i < 2000; ++i) {
        std::size_t a = static_cast<std::size_t>(rng.uniform_int(0, n * n - 1));
        std::size_t b = static_cast<std::size_t>(rng.uniform_int(0, n * n - 1));
        if (s.pixels[a] <= s.pixels[b]) CHECK(out.pixels[a] <= out.pixels[b]);
    }

    // flat: each output value sits within 2/bins of the empirical CDF
    std::vector<double> sorted = out.pixels;
    std::sort(sorted.begin(), sorted.end());
    double worst = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        double cdf = static_cast<double>(i + 1) / static_cast<double>(sorted.size());
        worst = std::max(worst, std::fabs(sorted[i] - cdf));
    }
    CHECK(worst <= 2.0 / bins);
}

TEST_CASE("select_slices returns the inclusive configured range", "[preproc]") {
    volume::CtVolume vol(8, 8, 30);
    PreprocConfig cfg;
    std::vector<int> s = select_slices(vol, cfg);
    REQUIRE(s == std::vector<int>{4, 5, 6, 7, 8, 9, 10});

    cfg.slice_first = cfg.slice_last = 1;
    REQUIRE(select_slices(vol, cfg) == std::vector<int>{1});

    volume::CtVolume thin(8, 8, 5);
    PreprocConfig d;
    CHECK_THROWS_WITH(select_slices(thin, d), ContainsSubstring("exceeds"));
}

TEST_CASE("hemispheres_for maps weakness sides to scanned hemispheres", "[preproc]") {
    using trainer::Hemisphere;
    using trainer::Weakness;
    PreprocConfig contra;
    PreprocConfig ipsi;
    ipsi.mapping = PreprocConfig::WeaknessMapping::ipsilateral;
    trainer::CaseRecord rec;

    rec.weakness = Weakness::None;
    CHECK(hemispheres_for(rec, contra).empty());

    rec.weakness = Weakness::Both;
    CHECK(hemispheres_for(rec, contra) ==
          std::vector<Hemisphere>{Hemisphere::Left, Hemisphere::Right});

    rec.weakness = Weakness::Left;
    CHECK(hemispheres_for(rec, contra) == std::vector<Hemisphere>{Hemisphere::Right});
    CHECK(hemispheres_for(rec, ipsi) == std::vector<Hemisphere>{Hemisphere::Left});

    rec.weakness = Weakness::Right;
    CHECK(hemispheres_for(rec, contra) == std::vector<Hemisphere>{Hemisphere::Left});
}

TEST_CASE("extract_roi crops the configured 128x128 box", "[preproc]") {
    volume::Slice2D s(512, 512);
    for (int y = 0; y < 512; ++y)
        for (int x = 0; x < 512; ++x) s.at(x, y) = x + 1000.0 * y;
    PreprocConfig cfg;
    volume::Slice2D left = extract_roi(s, roi_for(cfg, trainer::Hemisphere::Left));
    CHECK(left.width == 128);
    CHECK(left.at(0, 0) == s.at(96, 192));
    CHECK(left.at(127, 127) == s.at(223, 319));

    volume::Slice2D right = extract_roi(s, roi_for(cfg, trainer::Hemisphere::Right));
    CHECK(right.at(0, 0) == s.at(288, 192));

    RoiSpec past;
    past.x0 = 500;
    past.y0 = 500;
    volume::Slice2D clamped = extract_roi(s, past);  // origin clamps to stay inside
    CHECK(clamped.at(0, 0) == s.at(384, 384));

    volume::Slice2D small(100, 100);
    CHECK_THROWS_WITH(extract_roi(small, past), ContainsSubstring("smaller"));
}

TEST_CASE("roi origins scale from the 512 grid", "[preproc]") {
    auto [lx, ly] = scaled_roi_origin(trainer::Hemisphere::Left, 512, 512);
    CHECK(lx == 96);
    CHECK(ly == 192);
    auto [rx, ry] = scaled_roi_origin(trainer::Hemisphere::Right, 256, 256);
    CHECK(rx == 144);
    CHECK(ry == 96);
}

TEST_CASE("preprocess_case yields no samples without weakness", "[preproc]") {
    trainer::CaseRecord rec;
    rec.case_id = "c0";
    rec.volume_path = "/nonexistent/never_read.json";  // must not be opened
    rec.weakness = trainer::Weakness::None;
    PreprocConfig cfg;
    CHECK(preprocess_case(rec, cfg).empty());
}

TEST_CASE("preprocess_case annotates failures with the case id", "[preproc]") {
    trainer::CaseRecord rec;
    rec.case_id = "c77";
    rec.volume_path = "/nonexistent/missing.json";
    rec.weakness = trainer::Weakness::Left;
    PreprocConfig cfg;
    CHECK_THROWS_WITH(preprocess_case(rec, cfg), ContainsSubstring("case c77"));
}
