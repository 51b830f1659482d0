#ifndef MCADOT_PREPROC_HPP
#define MCADOT_PREPROC_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mcadot/cohort.hpp"
#include "mcadot/common.hpp"
#include "mcadot/volume.hpp"

// Preprocessing pipeline: skull stripping, rigid 2D symmetry registration,
// HU windowing, histogram equalization, slice selection, and hemisphere
// ROI extraction into 128x128 training samples.

namespace mcadot::preproc {

using trainer::CaseRecord;
using trainer::Hemisphere;
using trainer::TrainingSample;
using trainer::Weakness;
using volume::CtVolume;
using volume::MaskVolume;
using volume::Slice2D;

// ---------------------------------------------------------------------------
// Rigid 2D transforms
// ---------------------------------------------------------------------------

/// Forward map: F(p) = R(theta) * (p - center) + center + (tx, ty).
struct RigidTransform2D {
    double theta = 0;  // radians
    double tx = 0, ty = 0;
    double cx = 0, cy = 0;

    std::pair<double, double> apply(double x, double y) const {
        double c = std::cos(theta), s = std::sin(theta);
        double dx = x - cx, dy = y - cy;
        return {c * dx - s * dy + cx + tx, s * dx + c * dy + cy + ty};
    }

    std::pair<double, double> apply_inverse(double x, double y) const {
        double c = std::cos(theta), s = std::sin(theta);
        double dx = x - cx - tx, dy = y - cy - ty;
        return {c * dx + s * dy + cx, -s * dx + c * dy + cy};
    }

    /// Transform with the same center undoing this one exactly.
    RigidTransform2D inverse() const {
        double c = std::cos(theta), s = std::sin(theta);
        RigidTransform2D inv;
        inv.theta = -theta;
        inv.cx = cx;
        inv.cy = cy;
        inv.tx = -(c * tx + s * ty);
        inv.ty = -(-s * tx + c * ty);
        return inv;
    }

    bool near_identity(double tol_theta, double tol_t) const {
        return std::fabs(theta) <= tol_theta && std::fabs(tx) <= tol_t && std::fabs(ty) <= tol_t;
    }
};

enum class Resample { bilinear, nearest };

struct RoiSpec {
    static constexpr int kSize = trainer::TrainingSample::kSize;
    Hemisphere hemisphere = Hemisphere::Left;
    int x0 = 0, y0 = 0;
};

struct PreprocConfig {
    double hu_lo = 20, hu_hi = 80;
    int slice_first = 4, slice_last = 10;  // 1-based inclusive
    double bone_threshold = 100;
    int left_x0 = 96, left_y0 = 192;    // ROI origins on the 512x512 registered grid
    int right_x0 = 288, right_y0 = 192;
    enum class WeaknessMapping { contralateral, ipsilateral };
    WeaknessMapping mapping = WeaknessMapping::contralateral;
    int bins = 256;

    // When set, the left/right ROI origins are read as coordinates on the
    // 512x512 reference grid and rescaled to each volume's in-plane dims.
    bool roi_on_reference_grid = false;

    void validate() const {
        require(hu_lo < hu_hi, "hu window requires lo < hi");
        require(slice_first >= 1 && slice_first <= slice_last,
                "slice range requires 1 <= first <= last");
        require(bins >= 2, "equalization needs at least 2 bins");
        require(bone_threshold > 0, "bone threshold must be positive");
    }
};

/// Default ROI origin for a hemisphere, scaled from the 512-grid defaults
/// to an arbitrary slice size.
inline std::pair<int, int> scaled_roi_origin(Hemisphere h, int width, int height) {
    PreprocConfig d;
    int x = (h == Hemisphere::Left) ? d.left_x0 : d.right_x0;
    int y = (h == Hemisphere::Left) ? d.left_y0 : d.right_y0;
    return {static_cast<int>(std::lround(static_cast<double>(x) * width / 512.0)),
            static_cast<int>(std::lround(static_cast<double>(y) * height / 512.0))};
}

inline RoiSpec roi_for(const PreprocConfig& cfg, Hemisphere h) {
    RoiSpec spec;
    spec.hemisphere = h;
    spec.x0 = (h == Hemisphere::Left) ? cfg.left_x0 : cfg.right_x0;
    spec.y0 = (h == Hemisphere::Left) ? cfg.left_y0 : cfg.right_y0;
    return spec;
}

// ---------------------------------------------------------------------------
// Skull stripping
// ---------------------------------------------------------------------------

namespace detail {

/// 4-connected components over a binary grid; returns the pixel indices of
/// the largest component that does not touch the image border, or empty.
inline std::vector<std::size_t> largest_interior_component(const std::vector<uint8_t>& grid,
                                                           int w, int h) {
    std::vector<int32_t> label(grid.size(), -1);
    std::vector<std::size_t> best, current, stack;
    for (std::size_t start = 0; start < grid.size(); ++start) {
        if (!grid[start] || label[start] >= 0) continue;
        current.clear();
        stack.clear();
        stack.push_back(start);
        label[start] = 1;
        bool touches = false;
        while (!stack.empty()) {
            std::size_t i = stack.back();
            stack.pop_back();
            current.push_back(i);
            int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) touches = true;
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
                std::size_t j = static_cast<std::size_t>(ny[k]) * w + nx[k];
                if (grid[j] && label[j] < 0) {
                    label[j] = 1;
                    stack.push_back(j);
                }
            }
        }
        if (!touches && current.size() > best.size()) best = current;
    }
    return best;
}

/// 3x3 erosion (all 9 neighbors set, border counts as unset).
inline void erode3x3(std::vector<uint8_t>& grid, int w, int h) {
    std::vector<uint8_t> src = grid;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            uint8_t keep = 1;
            for (int dy = -1; dy <= 1 && keep; ++dy)
                for (int dx = -1; dx <= 1 && keep; ++dx) {
                    int xx = x + dx, yy = y + dy;
                    if (xx < 0 || yy < 0 || xx >= w || yy >= h || !src[static_cast<std::size_t>(yy) * w + xx])
                        keep = 0;
                }
            grid[static_cast<std::size_t>(y) * w + x] = keep;
        }
}

/// 3x3 dilation.
inline void dilate3x3(std::vector<uint8_t>& grid, int w, int h) {
    std::vector<uint8_t> src = grid;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            uint8_t hit = 0;
            for (int dy = -1; dy <= 1 && !hit; ++dy)
                for (int dx = -1; dx <= 1 && !hit; ++dx) {
                    int xx = x + dx, yy = y + dy;
                    if (xx >= 0 && yy >= 0 && xx < w && yy < h && src[static_cast<std::size_t>(yy) * w + xx])
                        hit = 1;
                }
            grid[static_cast<std::size_t>(y) * w + x] = hit;
        }
}

}  // namespace detail

/// Brain mask: per slice, the largest 4-connected soft-tissue component
/// (0 < HU < bone_threshold) not touching the border, then one erosion and
/// two dilations with a 3x3 element. Slices with no candidate stay empty;
/// a volume with no candidate on any slice is an error.
inline MaskVolume strip_skull(const CtVolume& vol, double bone_threshold = 100.0) {
    vol.validate();
    MaskVolume mask(vol.nx, vol.ny, vol.nz, 0, vol.sx, vol.sy, vol.sz);
    const int w = vol.nx, h = vol.ny;
    bool any = false;
    std::vector<uint8_t> soft(static_cast<std::size_t>(w) * h);
    for (int z = 0; z < vol.nz; ++z) {
        const int16_t* plane = vol.voxels.data() + vol.index(0, 0, z);
        for (std::size_t i = 0; i < soft.size(); ++i)
            soft[i] = (plane[i] > 0 && plane[i] < bone_threshold) ? 1 : 0;
        std::vector<std::size_t> comp = detail::largest_interior_component(soft, w, h);
        if (comp.empty()) continue;
        any = true;
        std::vector<uint8_t> grid(soft.size(), 0);
        for (std::size_t i : comp) grid[i] = 1;
        detail::erode3x3(grid, w, h);
        detail::dilate3x3(grid, w, h);
        detail::dilate3x3(grid, w, h);
        uint8_t* out = mask.voxels.data() + mask.index(0, 0, z);
        std::copy(grid.begin(), grid.end(), out);
    }
    require(any, "no brain found: no interior soft-tissue component on any slice");
    return mask;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace detail {

inline double sample_bilinear(const Slice2D& s, double x, double y, double fill) {
    if (x < 0 || y < 0 || x > s.width - 1 || y > s.height - 1) return fill;
    int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    int x1 = std::min(x0 + 1, s.width - 1), y1 = std::min(y0 + 1, s.height - 1);
    double fx = x - x0, fy = y - y0;
    double v00 = s.at(x0, y0), v10 = s.at(x1, y0), v01 = s.at(x0, y1), v11 = s.at(x1, y1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

inline double sample_nearest(const Slice2D& s, double x, double y, double fill) {
    long xi = std::lround(x), yi = std::lround(y);
    if (xi < 0 || yi < 0 || xi >= s.width || yi >= s.height) return fill;
    return s.at(static_cast<int>(xi), static_cast<int>(yi));
}

}  // namespace detail

/// Resamples by inverse mapping: out(p) = in(F^-1(p)). Out-of-bounds reads
/// fill with the input image minimum.
inline Slice2D apply_rigid(const Slice2D& s, const RigidTransform2D& t,
                           Resample mode = Resample::bilinear) {
    require(s.width > 0 && s.height > 0, "apply_rigid: empty slice");
    double fill = *std::min_element(s.pixels.begin(), s.pixels.end());
    Slice2D out(s.width, s.height);
    double c = std::cos(t.theta), sn = std::sin(t.theta);
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
            double dx = x - t.cx - t.tx, dy = y - t.cy - t.ty;
            double sx = c * dx + sn * dy + t.cx;
            double sy = -sn * dx + c * dy + t.cy;
            out.at(x, y) = (mode == Resample::bilinear)
                               ? detail::sample_bilinear(s, sx, sy, fill)
                               : detail::sample_nearest(s, sx, sy, fill);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Symmetry registration
// ---------------------------------------------------------------------------

struct RegistrationResult {
    RigidTransform2D transform;
    double score = 0;           // symmetry NCC of the returned transform
    double identity_score = 0;  // symmetry NCC of the identity transform
    bool degenerate = false;    // flat image: identity returned with a warning
};

namespace detail {

struct SymmetryObjective {
    const Slice2D* slice = nullptr;
    std::vector<std::pair<int, int>> support;  // fixed pixel set (brain mask)
    double fill = 0;
    double mirror_w = 0;  // W-1, the mirror maps x to W-1-x

    /// NCC between the warped slice and its horizontal mirror over the
    /// support set. Both sides resample the input, so the score is exact at
    /// the optimum rather than biased by interpolation of a warped copy.
    double ncc(const RigidTransform2D& t) const {
        double c = std::cos(t.theta), sn = std::sin(t.theta);
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (auto [qx, qy] : support) {
            double dx = qx - t.cx - t.tx, dy = qy - t.cy - t.ty;
            double a = sample_bilinear(*slice, c * dx + sn * dy + t.cx, -sn * dx + c * dy + t.cy, fill);
            double mx = mirror_w - qx;
            double ex = mx - t.cx - t.tx, ey = qy - t.cy - t.ty;
            double b = sample_bilinear(*slice, c * ex + sn * ey + t.cx, -sn * ex + c * ey + t.cy, fill);
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
        }
        double n = static_cast<double>(support.size());
        double va = n * saa - sa * sa, vb = n * sbb - sb * sb;
        if (va <= 1e-9 || vb <= 1e-9) return -2.0;
        return (n * sab - sa * sb) / std::sqrt(va * vb);
    }
};

}  // namespace detail

/// Estimates the rigid transform that makes the slice horizontally
/// symmetric: coarse grid search (theta +-15 deg step 1, horizontal shift
/// +-20 px step 2 around the centroid-centering baseline) followed by
/// pattern refinement with steps halving to 0.1 deg / 0.25 px. Rotation
/// center is the brain-mask centroid. Mirroring commutes with vertical
/// translation, so no mirror-symmetry score can observe the vertical
/// shift: searching it would only fit interpolation noise. It is instead
/// fixed by convention, mapping the mask centroid onto the image center
/// row; the horizontal baseline does the same and the search refines it.
inline RegistrationResult symmetry_register(const Slice2D& s, const Slice2D& brain_mask_slice) {
    require(s.width == brain_mask_slice.width && s.height == brain_mask_slice.height,
            "symmetry_register: slice/mask dims differ");
    detail::SymmetryObjective obj;
    obj.slice = &s;
    obj.fill = *std::min_element(s.pixels.begin(), s.pixels.end());
    obj.mirror_w = s.width - 1.0;

    double cx = 0, cy = 0;
    std::size_t count = 0;
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x)
            if (brain_mask_slice.at(x, y) > 0.5) {
                obj.support.emplace_back(x, y);
                cx += x;
                cy += y;
                ++count;
            }
    require(count > 0, "symmetry_register: empty brain mask");
    cx /= static_cast<double>(count);
    cy /= static_cast<double>(count);

    RigidTransform2D identity;
    identity.cx = cx;
    identity.cy = cy;

    RegistrationResult result;
    result.identity_score = obj.ncc(identity);
    if (result.identity_score <= -2.0) {  // no variance over the brain mask
        result.transform = identity;
        result.score = result.identity_score;
        result.degenerate = true;
        return result;
    }

    // Baseline: center the mask centroid. The search explores offsets from
    // this pose; the penalty keeps unobservable directions at the baseline.
    const double base_tx = (s.width - 1.0) / 2.0 - cx;
    const double base_ty = (s.height - 1.0) / 2.0 - cy;
    const double kPenalty = 1e-6;
    const double kDeg = 3.14159265358979323846 / 180.0;

    auto penalized = [&](const detail::SymmetryObjective& o, double th_deg, double dx) {
        RigidTransform2D t;
        t.theta = th_deg * kDeg;
        t.tx = base_tx + dx;
        t.ty = base_ty;
        t.cx = cx;
        t.cy = cy;
        double raw = o.ncc(t);
        return raw - kPenalty * (th_deg * th_deg + dx * dx);
    };

    // coarse pass on a subsampled support set
    detail::SymmetryObjective coarse = obj;
    {
        std::size_t target = 3000;
        if (coarse.support.size() > target) {
            std::size_t stride = (coarse.support.size() + target - 1) / target;
            std::vector<std::pair<int, int>> sub;
            for (std::size_t i = 0; i < coarse.support.size(); i += stride)
                sub.push_back(coarse.support[i]);
            coarse.support = std::move(sub);
        }
    }
    double best_th = 0, best_dx = 0;
    double best = -3;
    for (int th = -15; th <= 15; ++th)
        for (int dx = -20; dx <= 20; dx += 2) {
            double score = penalized(coarse, th, dx);
            if (score > best) {
                best = score;
                best_th = th;
                best_dx = dx;
            }
        }

    // refinement on the full support, pattern search with halving steps
    const double th_steps[] = {1.0, 0.5, 0.25, 0.1};
    const double t_steps[] = {2.0, 1.0, 0.5, 0.25};
    best = penalized(obj, best_th, best_dx);
    for (int level = 0; level < 4; ++level) {
        double ts = th_steps[level], xs = t_steps[level];
        for (int iter = 0; iter < 40; ++iter) {
            double cand_th = best_th, cand_dx = best_dx, cand = best;
            const double moves[4][2] = {{ts, 0}, {-ts, 0}, {0, xs}, {0, -xs}};
            for (auto& m : moves) {
                double score = penalized(obj, best_th + m[0], best_dx + m[1]);
                if (score > cand) {
                    cand = score;
                    cand_th = best_th + m[0];
                    cand_dx = best_dx + m[1];
                }
            }
            if (cand <= best) break;
            best = cand;
            best_th = cand_th;
            best_dx = cand_dx;
        }
    }

    RigidTransform2D found;
    found.theta = best_th * kDeg;
    found.tx = base_tx + best_dx;
    found.ty = base_ty;
    found.cx = cx;
    found.cy = cy;
    result.transform = found;
    result.score = obj.ncc(found);
    if (result.score < result.identity_score) {  // never return a worse pose
        result.transform = identity;
        result.score = result.identity_score;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Intensity mapping
// ---------------------------------------------------------------------------

/// Linear HU window onto [0,1]: clamp((v - lo) / (hi - lo), 0, 1).
inline Slice2D window_hu(const Slice2D& s, double lo, double hi) {
    require(lo < hi, "window_hu: requires lo < hi");
    Slice2D out(s.width, s.height);
    double scale = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < s.pixels.size(); ++i)
        out.pixels[i] = std::clamp((s.pixels[i] - lo) * scale, 0.0, 1.0);
    return out;
}

/// Histogram equalization over masked pixels: quantize to `bins` levels,
/// map level v to (CDF(v) - CDF_min) / (1 - CDF_min). Unmasked pixels
/// become 0. A single-level histogram returns the image unchanged.
inline Slice2D equalize_histogram(const Slice2D& s, const Slice2D& mask, int bins = 256) {
    require(bins >= 2, "equalize_histogram: bins must be >= 2");
    require(s.width == mask.width && s.height == mask.height,
            "equalize_histogram: slice/mask dims differ");
    for (double m : mask.pixels)
        require(m == 0.0 || m == 1.0, "equalize_histogram: mask must be binary");

    auto level_of = [&](double v) {
        return std::min(bins - 1, static_cast<int>(std::floor(v * bins)));
    };

    std::vector<std::size_t> hist(static_cast<std::size_t>(bins), 0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
        if (mask.pixels[i] == 0.0) continue;
        double v = s.pixels[i];
        require(v >= 0.0 && v <= 1.0, "equalize_histogram: masked pixel outside [0,1]");
        hist[static_cast<std::size_t>(level_of(v))]++;
        ++count;
    }
    require(count > 0, "equalize_histogram: empty mask");

    int occupied = 0;
    for (std::size_t c : hist)
        if (c > 0) ++occupied;
    if (occupied == 1) return s;

    std::vector<double> map(static_cast<std::size_t>(bins), 0.0);
    double cdf = 0, cdf_min = 0;
    bool first = true;
    for (int l = 0; l < bins; ++l) {
        cdf += static_cast<double>(hist[static_cast<std::size_t>(l)]) / static_cast<double>(count);
        if (first && hist[static_cast<std::size_t>(l)] > 0) {
            cdf_min = cdf;
            first = false;
        }
        map[static_cast<std::size_t>(l)] = cdf;
    }
    Slice2D out(s.width, s.height);
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
        if (mask.pixels[i] == 0.0) continue;
        double c = map[static_cast<std::size_t>(level_of(s.pixels[i]))];
        out.pixels[i] = std::clamp((c - cdf_min) / (1.0 - cdf_min), 0.0, 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Slice / hemisphere / ROI selection
// ---------------------------------------------------------------------------

inline std::vector<int> select_slices(const CtVolume& vol, const PreprocConfig& cfg) {
    cfg.validate();
    require(cfg.slice_last <= vol.nz,
            "slice range [" + std::to_string(cfg.slice_first) + ", " + std::to_string(cfg.slice_last) +
                "] exceeds volume depth " + std::to_string(vol.nz));
    std::vector<int> out;
    for (int k = cfg.slice_first; k <= cfg.slice_last; ++k) out.push_back(k);
    return out;
}

/// Weakness side to scanned hemispheres. Contralateral mapping sends left
/// weakness to the right hemisphere and vice versa; Both uses both; None
/// contributes nothing.
inline std::vector<Hemisphere> hemispheres_for(const CaseRecord& rec, const PreprocConfig& cfg) {
    bool contra = cfg.mapping == PreprocConfig::WeaknessMapping::contralateral;
    switch (rec.weakness) {
        case Weakness::None: return {};
        case Weakness::Both: return {Hemisphere::Left, Hemisphere::Right};
        case Weakness::Left: return {contra ? Hemisphere::Right : Hemisphere::Left};
        case Weakness::Right: return {contra ? Hemisphere::Left : Hemisphere::Right};
    }
    return {};
}

/// 128x128 crop at the spec origin, clamped to keep the box inside.
inline Slice2D extract_roi(const Slice2D& s, const RoiSpec& spec) {
    const int k = RoiSpec::kSize;
    require(s.width >= k && s.height >= k,
            "extract_roi: slice " + std::to_string(s.width) + "x" + std::to_string(s.height) +
                " smaller than the " + std::to_string(k) + "x" + std::to_string(k) + " ROI");
    int x0 = std::clamp(spec.x0, 0, s.width - k);
    int y0 = std::clamp(spec.y0, 0, s.height - k);
    Slice2D out(k, k);
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x)
            out.at(x, y) = s.at(x0 + x, y0 + y);
    return out;
}

// ---------------------------------------------------------------------------
// Whole-case pipeline
// ---------------------------------------------------------------------------

/// Full preprocessing for one case: skull strip, register the middle
/// selected slice, apply the transform to every selected slice plus masks,
/// window, equalize over the brain, then per hemisphere extract the ROI
/// and equalize again. Sample count = |slices| x |hemispheres|.
inline std::vector<TrainingSample> preprocess_case(const CaseRecord& rec, const PreprocConfig& cfg) {
    cfg.validate();
    std::vector<Hemisphere> hemis = hemispheres_for(rec, cfg);
    if (hemis.empty()) return {};

    try {
        CtVolume vol = volume::read_ct(rec.volume_path);
        MaskVolume gt;
        if (!rec.mask_path.empty()) {
            gt = volume::read_mask(rec.mask_path);
            require(gt.nx == vol.nx && gt.ny == vol.ny && gt.nz == vol.nz,
                    "ground-truth mask dims do not match the volume");
        } else {
            gt = MaskVolume(vol.nx, vol.ny, vol.nz, 0, vol.sx, vol.sy, vol.sz);
        }

        std::vector<int> slices = select_slices(vol, cfg);
        MaskVolume brain = strip_skull(vol, cfg.bone_threshold);

        int mid = slices[slices.size() / 2];
        Slice2D mid_mask = volume::slice_at(brain, mid);
        RegistrationResult reg = symmetry_register(volume::slice_at(vol, mid), mid_mask);

        std::vector<RoiSpec> rois;
        for (Hemisphere hemi : hemis) {
            RoiSpec spec = roi_for(cfg, hemi);
            if (cfg.roi_on_reference_grid) {
                spec.x0 = static_cast<int>(std::lround(spec.x0 * vol.nx / 512.0));
                spec.y0 = static_cast<int>(std::lround(spec.y0 * vol.ny / 512.0));
            }
            rois.push_back(spec);
        }

        Slice2D ones(RoiSpec::kSize, RoiSpec::kSize, 1.0);
        std::vector<TrainingSample> samples;
        samples.reserve(slices.size() * hemis.size());
        for (int k : slices) {
            try {
                Slice2D img = apply_rigid(volume::slice_at(vol, k), reg.transform, Resample::bilinear);
                Slice2D brn = apply_rigid(volume::slice_at(brain, k), reg.transform, Resample::nearest);
                Slice2D tgt = apply_rigid(volume::slice_at(gt, k), reg.transform, Resample::nearest);
                Slice2D win = window_hu(img, cfg.hu_lo, cfg.hu_hi);
                Slice2D eq = equalize_histogram(win, brn, cfg.bins);
                for (const RoiSpec& spec : rois) {
                    Slice2D roi = equalize_histogram(extract_roi(eq, spec), ones, cfg.bins);
                    Slice2D roi_tgt = extract_roi(tgt, spec);

                    TrainingSample sample;
                    sample.case_id = rec.case_id;
                    sample.slice_index = k;
                    sample.hemisphere = spec.hemisphere;
                    sample.image.resize(roi.pixels.size());
                    sample.target.resize(roi_tgt.pixels.size());
                    for (std::size_t i = 0; i < roi.pixels.size(); ++i)
                        sample.image[i] = static_cast<float>(roi.pixels[i]);
                    for (std::size_t i = 0; i < roi_tgt.pixels.size(); ++i)
                        sample.target[i] = roi_tgt.pixels[i] > 0.5 ? 1 : 0;
                    sample.validate();
                    samples.push_back(std::move(sample));
                }
            } catch (const std::exception& e) {
                throw data_error("slice " + std::to_string(k) + ": " + e.what());
            }
        }
        return samples;
    } catch (const std::exception& e) {
        throw data_error("case " + rec.case_id + ": " + e.what());
    }
}

}  // namespace mcadot::preproc

#endif
