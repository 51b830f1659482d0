#ifndef MCADOT_AUGMENT_HPP
#define MCADOT_AUGMENT_HPP

#include <cmath>

#include "mcadot/cohort.hpp"
#include "mcadot/common.hpp"

// Stochastic training-time augmentation: horizontal flip, rotation, zoom,
// and shift, applied with one composed resampling pass to the image
// (bilinear) and mask (nearest) of a training sample.

namespace mcadot::augment {

using trainer::TrainingSample;

struct AugmentConfig {
    double zoom_lo = 0.9, zoom_hi = 1.1;
    double max_shift_px = 10;
    double max_rotation_deg = 10;
    bool hflip = true;

    void validate() const {
        require(zoom_lo > 0 && zoom_lo <= zoom_hi, "zoom range requires 0 < lo <= hi");
        require(max_shift_px >= 0, "shift range must be nonnegative");
        require(max_rotation_deg >= 0, "rotation range must be nonnegative");
    }

    static AugmentConfig identity() { return {1.0, 1.0, 0.0, 0.0, false}; }
};

struct AugmentSpec {
    double zoom = 1.0;
    double dx = 0, dy = 0;
    double rotation_deg = 0;
    bool hflip = false;

    bool is_identity() const {
        return zoom == 1.0 && dx == 0 && dy == 0 && rotation_deg == 0 && !hflip;
    }
};

/// Draws one spec. Every call consumes the same five draws regardless of
/// the configured ranges, so the stream position never depends on the
/// config and equal seeds give equal spec sequences.
inline AugmentSpec sample_spec(Rng& rng, const AugmentConfig& cfg) {
    cfg.validate();
    AugmentSpec spec;
    spec.zoom = rng.uniform(cfg.zoom_lo, cfg.zoom_hi);
    spec.dx = rng.uniform(-cfg.max_shift_px, cfg.max_shift_px);
    spec.dy = rng.uniform(-cfg.max_shift_px, cfg.max_shift_px);
    spec.rotation_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    bool flip = rng.bernoulli(0.5);
    spec.hflip = cfg.hflip && flip;
    return spec;
}

/// Applies flip, then rotation, then zoom, then shift, all about the image
/// center, as one composed inverse-mapped resampling. The image samples
/// bilinearly, the mask nearest-neighbor; out-of-bounds reads fill with 0.
inline TrainingSample apply(const TrainingSample& sample, const AugmentSpec& spec) {
    sample.validate();
    const int k = TrainingSample::kSize;
    const double c = (k - 1) / 2.0;
    const double theta = spec.rotation_deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);

    TrainingSample out = sample;  // keeps case/slice/hemisphere provenance
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            // invert shift, zoom, rotation, then flip to find the source point
            double qx = (x - spec.dx - c) / spec.zoom;
            double qy = (y - spec.dy - c) / spec.zoom;
            double sx = cs * qx + sn * qy + c;
            double sy = -sn * qx + cs * qy + c;
            if (spec.hflip) sx = (k - 1) - sx;

            std::size_t i = static_cast<std::size_t>(y) * k + x;
            if (sx < 0 || sy < 0 || sx > k - 1 || sy > k - 1) {
                out.image[i] = 0.0f;
                out.target[i] = 0;
                continue;
            }
            int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            int x1 = x0 + 1 < k ? x0 + 1 : k - 1, y1 = y0 + 1 < k ? y0 + 1 : k - 1;
            double fx = sx - x0, fy = sy - y0;
            auto img = [&](int xx, int yy) {
                return static_cast<double>(sample.image[static_cast<std::size_t>(yy) * k + xx]);
            };
            out.image[i] = static_cast<float>((1 - fy) * ((1 - fx) * img(x0, y0) + fx * img(x1, y0)) +
                                              fy * ((1 - fx) * img(x0, y1) + fx * img(x1, y1)));
            int xn = static_cast<int>(std::lround(sx)), yn = static_cast<int>(std::lround(sy));
            out.target[i] = sample.target[static_cast<std::size_t>(yn) * k + xn];
        }
    return out;
}

}  // namespace mcadot::augment

#endif
