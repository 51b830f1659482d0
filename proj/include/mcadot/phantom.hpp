#ifndef MCADOT_PHANTOM_HPP
#define MCADOT_PHANTOM_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mcadot/cohort.hpp"
#include "mcadot/common.hpp"
#include "mcadot/preproc.hpp"
#include "mcadot/volume.hpp"

// Synthetic head-CT cohort generator. Each case is a cylindrical head:
// a tissue ellipse, a CSF-like gap band, a bone ring, air outside, and
// for positive cases one hyperdense dot over an MCA region. The scene is
// rendered analytically in output space through the inverse of the global
// perturbation, so geometry and masks are exact rather than resampled.

namespace mcadot::phantom {

using preproc::RigidTransform2D;
using trainer::CaseRecord;
using trainer::Hemisphere;
using trainer::Split;
using trainer::Weakness;
using volume::CtVolume;
using volume::MaskVolume;

struct PhantomSpec {
    int nx = 512, ny = 512, nz = 30;
    double spacing_xy = 0.426, spacing_z = 5.0;

    double brain_ax = 154, brain_ay = 190;  // ellipse semi-axes, px
    double center_jitter = 6;               // uniform per-axis jitter, px
    double gap_px = 6;                      // band between tissue and bone
    double bone_px = 8;                     // ring thickness

    double tissue_mean = 35, tissue_sd = 6;
    double bone_hu = 1200, air_hu = -1000, gap_hu = -30;

    double dot_radius_lo = 2, dot_radius_hi = 5;
    double dot_hu_lo = 35, dot_hu_hi = 60;  // base band, before the offset
    double dot_offset = 15;                 // hyperdense contrast over tissue
    int dot_slice_lo = 4, dot_slice_hi = 10;
    int dot_run_lo = 2, dot_run_hi = 4;     // contiguous dot slices

    double max_rotation_deg = 8, max_shift_px = 10;
    double noise_sigma = 4;

    void validate() const {
        require(nx >= 128 && ny >= 128 && nz >= 1, "phantom dims must be at least 128x128x1");
        require(spacing_xy > 0 && spacing_z > 0, "phantom spacing must be positive");
        require(brain_ax > 8 && brain_ay > 8, "brain semi-axes too small");
        require(gap_px >= 2 && bone_px >= 2, "gap and bone bands must be at least 2 px");
        require(tissue_sd >= 0 && noise_sigma >= 0, "noise levels must be nonnegative");
        require(dot_radius_lo >= 2 && dot_radius_hi <= 5 && dot_radius_lo <= dot_radius_hi,
                "dot radius band must lie within [2, 5] px");
        require(dot_hu_lo >= 35 && dot_hu_hi <= 60 && dot_hu_lo <= dot_hu_hi,
                "dot HU band must lie within [35, 60]");
        require(dot_slice_lo >= 1 && dot_slice_lo <= dot_slice_hi && dot_slice_hi <= nz,
                "dot slice range must lie within the volume");
        require(dot_run_lo >= 1 && dot_run_lo <= dot_run_hi &&
                    dot_run_hi <= dot_slice_hi - dot_slice_lo + 1,
                "dot slice run must fit inside the dot slice range");
        double extent = std::max(brain_ax, brain_ay) + gap_px + bone_px + center_jitter +
                        max_shift_px;
        require(extent < std::min(nx, ny) / 2.0 - 2.0,
                "head does not fit: ellipse + ring + motion reaches the image border");
    }
};

struct GeneratedCase {
    CtVolume ct;
    MaskVolume mask;  // exactly the dot voxels; all zero for negatives

    // scene provenance, exposed so tests can use the generator as an oracle
    double scene_cx = 0, scene_cy = 0;       // ellipse center before perturbation
    RigidTransform2D perturbation;           // applied last, about the image center
    bool has_dot = false;
    Hemisphere dot_hemisphere = Hemisphere::Left;
    double dot_x = 0, dot_y = 0, dot_radius = 0, dot_base_hu = 0;
    int dot_z_first = 0, dot_z_last = 0;  // 1-based, inclusive
};

namespace detail {

inline int16_t to_hu(double v, double lo, double hi) {
    return static_cast<int16_t>(std::llround(std::clamp(v, lo, hi)));
}

}  // namespace detail

/// Renders one case. The same (spec, has_mca, weakness, seed) tuple always
/// produces bit-identical volumes: every voxel consumes exactly two normal
/// draws in raster order, after a fixed prefix of geometry draws.
inline GeneratedCase generate_case(const PhantomSpec& spec, bool has_mca, Weakness weakness,
                                   uint64_t seed) {
    spec.validate();
    require(!has_mca || weakness != Weakness::None,
            "a case with a dot must present weakness on some side");

    Rng rng(seed);
    GeneratedCase out;
    const double img_cx = (spec.nx - 1) / 2.0, img_cy = (spec.ny - 1) / 2.0;
    out.scene_cx = img_cx + rng.uniform(-spec.center_jitter, spec.center_jitter);
    out.scene_cy = img_cy + rng.uniform(-spec.center_jitter, spec.center_jitter);

    const double deg = 3.14159265358979323846 / 180.0;
    out.perturbation.theta = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * deg;
    out.perturbation.tx = rng.uniform(-spec.max_shift_px, spec.max_shift_px);
    out.perturbation.ty = rng.uniform(-spec.max_shift_px, spec.max_shift_px);
    out.perturbation.cx = img_cx;
    out.perturbation.cy = img_cy;

    const double min_axis = std::min(spec.brain_ax, spec.brain_ay);
    if (has_mca) {
        out.has_dot = true;
        switch (weakness) {  // dot sits contralateral to the weakness side
            case Weakness::Left: out.dot_hemisphere = Hemisphere::Right; break;
            case Weakness::Right: out.dot_hemisphere = Hemisphere::Left; break;
            default: out.dot_hemisphere = rng.bernoulli(0.5) ? Hemisphere::Left : Hemisphere::Right;
        }
        out.dot_radius = rng.uniform(spec.dot_radius_lo, spec.dot_radius_hi);
        out.dot_base_hu = rng.uniform(spec.dot_hu_lo, spec.dot_hu_hi);
        int run = static_cast<int>(rng.uniform_int(spec.dot_run_lo, spec.dot_run_hi));
        out.dot_z_first = static_cast<int>(rng.uniform_int(spec.dot_slice_lo, spec.dot_slice_hi - run + 1));
        out.dot_z_last = out.dot_z_first + run - 1;

        // Scene-space ROI box of the target hemisphere, clamped the same way
        // extract_roi clamps. The margin keeps the whole dot inside the box
        // even after the small registration-vs-scene offset.
        auto [ox, oy] = preproc::scaled_roi_origin(out.dot_hemisphere, spec.nx, spec.ny);
        const int k = preproc::RoiSpec::kSize, margin = 16;
        double x0 = std::clamp(ox, 0, spec.nx - k), y0 = std::clamp(oy, 0, spec.ny - k);
        const double fit = 1.0 - (out.dot_radius + 15.0) / min_axis;
        require(fit > 0, "dot cannot fit inside the brain ellipse");
        bool placed = false;
        for (int tries = 0; tries < 10000 && !placed; ++tries) {
            double x = rng.uniform(x0 + margin, x0 + k - margin);
            double y = rng.uniform(y0 + margin, y0 + k - margin);
            double rx = (x - out.scene_cx) / spec.brain_ax;
            double ry = (y - out.scene_cy) / spec.brain_ay;
            if (rx * rx + ry * ry <= fit * fit) {
                out.dot_x = x;
                out.dot_y = y;
                placed = true;
            }
        }
        require(placed, "could not place the dot inside the ROI box and the brain ellipse");
    }

    out.ct = CtVolume(spec.nx, spec.ny, spec.nz, 0, spec.spacing_xy, spec.spacing_xy, spec.spacing_z);
    out.mask = MaskVolume(spec.nx, spec.ny, spec.nz, 0, spec.spacing_xy, spec.spacing_xy, spec.spacing_z);

    // Band boundaries in normalized ellipse radius; the gap guarantees the
    // (dilated) brain mask never reaches the bone ring.
    const double r_gap = 1.0 + spec.gap_px / min_axis;
    const double r_bone = r_gap + spec.bone_px / min_axis;
    const double c = std::cos(out.perturbation.theta), s = std::sin(out.perturbation.theta);
    const double rr = out.dot_radius * out.dot_radius;

    for (int z = 1; z <= spec.nz; ++z) {
        bool dot_here = out.has_dot && z >= out.dot_z_first && z <= out.dot_z_last;
        int16_t* ct_plane = out.ct.voxels.data() + out.ct.index(0, 0, z - 1);
        uint8_t* mask_plane = out.mask.voxels.data() + out.mask.index(0, 0, z - 1);
        for (int y = 0; y < spec.ny; ++y)
            for (int x = 0; x < spec.nx; ++x) {
                // scene position = inverse perturbation of the output pixel
                double dx = x - img_cx - out.perturbation.tx;
                double dy = y - img_cy - out.perturbation.ty;
                double qx = c * dx + s * dy + img_cx;
                double qy = -s * dx + c * dy + img_cy;

                double texture = rng.normal();
                double noise = spec.noise_sigma * rng.normal();

                double ex = (qx - out.scene_cx) / spec.brain_ax;
                double ey = (qy - out.scene_cy) / spec.brain_ay;
                double r2 = ex * ex + ey * ey;
                std::size_t i = static_cast<std::size_t>(y) * spec.nx + x;
                double v;
                double lo, hi;
                if (r2 <= 1.0) {
                    double ddx = qx - out.dot_x, ddy = qy - out.dot_y;
                    if (dot_here && ddx * ddx + ddy * ddy <= rr) {
                        v = out.dot_base_hu + spec.dot_offset + noise;
                        mask_plane[i] = 1;
                    } else {
                        v = spec.tissue_mean + spec.tissue_sd * texture + noise;
                    }
                    lo = 1;   // keep every brain voxel inside the soft-tissue
                    hi = 99;  // predicate (0, bone_threshold)
                } else if (r2 <= r_gap * r_gap) {
                    v = spec.gap_hu + noise;
                    lo = -1024;
                    hi = 0;
                } else if (r2 <= r_bone * r_bone) {
                    v = spec.bone_hu + noise;
                    lo = 101;
                    hi = 3071;
                } else {
                    v = spec.air_hu + noise;
                    lo = -1024;
                    hi = 0;
                }
                ct_plane[i] = detail::to_hu(v, lo, hi);
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cohort generation
// ---------------------------------------------------------------------------

/// Default prevalence of the dot among cases, matching the cohort the
/// pipeline is modeled on (74 of 150).
inline constexpr double kDefaultPrevalence = 74.0 / 150.0;

namespace detail {

inline std::string case_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%04d", i + 1);
    return buf;
}

inline Weakness draw_positive_weakness(Rng& rng) {
    double u = rng.uniform();
    if (u < 0.475) return Weakness::Left;
    if (u < 0.95) return Weakness::Right;
    return Weakness::Both;
}

inline Weakness draw_negative_weakness(Rng& rng) {
    double u = rng.uniform();
    if (u < 0.44) return Weakness::None;
    if (u < 0.71) return Weakness::Left;
    if (u < 0.98) return Weakness::Right;
    return Weakness::Both;
}

}  // namespace detail

/// Generates n cases under out_dir, writes volumes plus a manifest with
/// relative paths, and returns the loaded manifest. Case i is a test case
/// when i % 5 == 4 (an 80/20 split); positives are chosen by a seeded
/// shuffle so splits stay balanced in expectation. Cases render in
/// parallel with per-case derived seeds, so output is identical for any
/// worker count.
inline std::vector<CaseRecord> generate_cohort(const PhantomSpec& spec, int n, double prevalence,
                                               uint64_t seed, const std::string& out_dir,
                                               int workers = 1) {
    spec.validate();
    require(n >= 1 && n <= 9999, "cohort size must be in [1, 9999]");
    require(prevalence >= 0.0 && prevalence <= 1.0, "prevalence must lie in [0, 1]");
    std::filesystem::create_directories(out_dir);

    int npos = static_cast<int>(std::lround(n * prevalence));
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng cohort_rng(mix_seed(seed, 0x636f686f72740000ull));  // cohort-level stream
    cohort_rng.shuffle(order);
    std::vector<uint8_t> positive(static_cast<std::size_t>(n), 0);
    for (int j = 0; j < npos; ++j) positive[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = 1;

    std::vector<CaseRecord> records(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t i) {
        bool has_mca = positive[i] != 0;
        Rng rng(mix_seed(seed, static_cast<uint64_t>(i) + 1));
        Weakness weakness = has_mca ? detail::draw_positive_weakness(rng)
                                    : detail::draw_negative_weakness(rng);
        GeneratedCase g = generate_case(spec, has_mca, weakness, rng.next_u64());

        std::string name = detail::case_name(static_cast<int>(i));
        volume::write_volume(g.ct, (std::filesystem::path(out_dir) / (name + "_ct")).string());
        CaseRecord rec;
        rec.case_id = name;
        rec.split = (i % 5 == 4) ? Split::Test : Split::Train;
        rec.weakness = weakness;
        rec.has_mca = has_mca;
        rec.volume_path = name + "_ct.json";
        if (has_mca) {
            volume::write_volume(g.mask, (std::filesystem::path(out_dir) / (name + "_mask")).string());
            rec.mask_path = name + "_mask.json";
        }
        records[i] = std::move(rec);
    });

    std::string manifest = (std::filesystem::path(out_dir) / "manifest.tsv").string();
    trainer::write_manifest(records, manifest);
    return trainer::load_manifest(manifest);
}

}  // namespace mcadot::phantom

#endif
