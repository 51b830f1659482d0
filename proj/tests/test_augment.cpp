#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mcadot/augment.hpp"

using namespace mcadot;
using namespace mcadot::augment;
using trainer::TrainingSample;
using Catch::Matchers::WithinAbs;

namespace {

// sample with a smooth image gradient and a disk target at (cx, cy)
TrainingSample blob_sample(double cx, double cy, double r) {
    const int k = TrainingSample::kSize;
    TrainingSample s;
    s.case_id = "aug";
    s.slice_index = 5;
    s.image.resize(static_cast<std::size_t>(k) * k);
    s.target.resize(static_cast<std::size_t>(k) * k);
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            std::size_t i = static_cast<std::size_t>(y) * k + x;
            s.image[i] = static_cast<float>(0.2 + 0.3 * std::sin(x * 0.11) * std::cos(y * 0.07) +
                                            0.4 * (std::hypot(x - cx, y - cy) <= r));
            s.target[i] = std::hypot(x - cx, y - cy) <= r ? 1 : 0;
        }
    return s;
}

struct Centroid {
    double x = 0, y = 0;
    std::size_t n = 0;
};

Centroid mask_centroid(const TrainingSample& s) {
    const int k = TrainingSample::kSize;
    Centroid c;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x)
            if (s.target[static_cast<std::size_t>(y) * k + x]) {
                c.x += x;
                c.y += y;
                ++c.n;
            }
    c.x /= static_cast<double>(c.n);
    c.y /= static_cast<double>(c.n);
    return c;
}

}  // namespace

TEST_CASE("sample_spec is deterministic and respects ranges", "[augment]") {
    AugmentConfig cfg;
    Rng a(808), b(808);
    for (int i = 0; i < 100; ++i) {
        AugmentSpec sa = sample_spec(a, cfg);
        AugmentSpec sb = sample_spec(b, cfg);
        CHECK(sa.zoom == sb.zoom);
        CHECK(sa.dx == sb.dx);
        CHECK(sa.dy == sb.dy);
        CHECK(sa.rotation_deg == sb.rotation_deg);
        CHECK(sa.hflip == sb.hflip);

        CHECK(sa.zoom >= cfg.zoom_lo);
        CHECK(sa.zoom <= cfg.zoom_hi);
        CHECK(std::fabs(sa.dx) <= cfg.max_shift_px);
        CHECK(std::fabs(sa.dy) <= cfg.max_shift_px);
        CHECK(std::fabs(sa.rotation_deg) <= cfg.max_rotation_deg);
    }
}

TEST_CASE("hflip frequency sits near one half", "[augment]") {
    AugmentConfig cfg;
    Rng rng(809);
    int flips = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        if (sample_spec(rng, cfg).hflip) ++flips;
    double freq = static_cast<double>(flips) / n;
    CHECK_THAT(freq, WithinAbs(0.5, 0.02));
}

TEST_CASE("zeroed ranges always draw the identity spec", "[augment]") {
    AugmentConfig cfg = AugmentConfig::identity();
    Rng rng(810);
    for (int i = 0; i < 100; ++i) CHECK(sample_spec(rng, cfg).is_identity());
}

TEST_CASE("the identity spec is a fixed point of apply", "[augment]") {
    TrainingSample s = blob_sample(50, 60, 9);
    TrainingSample out = apply(s, AugmentSpec{});
    REQUIRE(out.image == s.image);
    REQUIRE(out.target == s.target);
    CHECK(out.case_id == s.case_id);
    CHECK(out.slice_index == s.slice_index);
}

TEST_CASE("a flip-only spec is an involution", "[augment]") {
    TrainingSample s = blob_sample(43, 71, 7);
    AugmentSpec flip;
    flip.hflip = true;
    TrainingSample once = apply(s, flip);
    CHECK(once.image != s.image);
    TrainingSample twice = apply(once, flip);
    REQUIRE(twice.image == s.image);
    REQUIRE(twice.target == s.target);
}

TEST_CASE("pure shift moves the mask centroid by the shift", "[augment]") {
    TrainingSample s = blob_sample(50, 60, 9);
    Centroid before = mask_centroid(s);
    const double shifts[][2] = {{7, -4}, {3.5, 2.5}, {-10, 10}};
    for (auto& sh : shifts) {
        AugmentSpec spec;
        spec.dx = sh[0];
        spec.dy = sh[1];
        Centroid after = mask_centroid(apply(s, spec));
        INFO("shift (" << sh[0] << ", " << sh[1] << ")");
        CHECK_THAT(after.x - before.x, WithinAbs(sh[0], 0.5));
        CHECK_THAT(after.y - before.y, WithinAbs(sh[1], 0.5));
    }
}

TEST_CASE("zoom scales the mask area quadratically", "[augment]") {
    TrainingSample s = blob_sample(63.5, 63.5, 12);
    double base = static_cast<double>(mask_centroid(s).n);
    for (double zoom : {0.9, 1.1}) {
        AugmentSpec spec;
        spec.zoom = zoom;
        double area = static_cast<double>(mask_centroid(apply(s, spec)).n);
        CHECK_THAT(area / base, Catch::Matchers::WithinRel(zoom * zoom, 0.10));
    }
}

TEST_CASE("rotation swings an off-center blob around the image center", "[augment]") {
    TrainingSample s = blob_sample(93.5, 63.5, 6);  // 30 px right of center
    AugmentSpec spec;
    spec.rotation_deg = 90;  // content at angle 0 moves to angle +90 (down)
    Centroid after = mask_centroid(apply(s, spec));
    CHECK_THAT(after.x, WithinAbs(63.5, 1.0));
    CHECK_THAT(after.y, WithinAbs(93.5, 1.0));
}

TEST_CASE("every spec keeps the mask binary and the size fixed", "[augment]") {
    TrainingSample s = blob_sample(40, 80, 10);
    AugmentConfig cfg;
    Rng rng(811);
    for (int i = 0; i < 25; ++i) {
        TrainingSample out = apply(s, sample_spec(rng, cfg));
        out.validate();  // checks 128x128 and binary target
    }
}
