#pragma once

// Preprocessing chain: resample to the 0.2 mm/px reference grid, collapse to
// 8-bit, normalize to unit scale, crop fixed-size patches around a joint
// center, resize to the model input, and training-time affine augmentation.
// Chain order is load-bearing and pinned by tests.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "klp/common.hpp"
#include "klp/raster.hpp"

namespace klp {

constexpr double kReferenceSpacing = 0.2;  // mm per pixel
constexpr std::size_t kPatchSize = 700;    // px at reference spacing, 140 mm

namespace detail {

// Catmull-Rom cubic kernel (a = -0.5).
inline double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

// Bicubic sample with indices clamped to the image border.
inline double sample_bicubic_clamped(const Raster& img, double x, double y) {
    const long x0 = static_cast<long>(std::floor(x));
    const long y0 = static_cast<long>(std::floor(y));
    double acc = 0.0;
    for (long j = -1; j <= 2; ++j) {
        const double wy = cubic_weight(y - static_cast<double>(y0 + j));
        if (wy == 0.0) continue;
        const long yc = std::clamp<long>(y0 + j, 0, static_cast<long>(img.height) - 1);
        for (long i = -1; i <= 2; ++i) {
            const double wx = cubic_weight(x - static_cast<double>(x0 + i));
            if (wx == 0.0) continue;
            const long xc = std::clamp<long>(x0 + i, 0, static_cast<long>(img.width) - 1);
            acc += wx * wy * img.samples[static_cast<std::size_t>(yc) * img.width +
                                         static_cast<std::size_t>(xc)];
        }
    }
    return acc;
}

// Bicubic sample treating everything outside the image as zero.
inline double sample_bicubic_zerofill(const Raster& img, double x, double y) {
    const long x0 = static_cast<long>(std::floor(x));
    const long y0 = static_cast<long>(std::floor(y));
    double acc = 0.0;
    for (long j = -1; j <= 2; ++j) {
        const double wy = cubic_weight(y - static_cast<double>(y0 + j));
        if (wy == 0.0) continue;
        const long yc = y0 + j;
        if (yc < 0 || yc >= static_cast<long>(img.height)) continue;
        for (long i = -1; i <= 2; ++i) {
            const double wx = cubic_weight(x - static_cast<double>(x0 + i));
            if (wx == 0.0) continue;
            const long xc = x0 + i;
            if (xc < 0 || xc >= static_cast<long>(img.width)) continue;
            acc += wx * wy * img.samples[static_cast<std::size_t>(yc) * img.width +
                                         static_cast<std::size_t>(xc)];
        }
    }
    return acc;
}

}  // namespace detail

// Bicubic resize to explicit output dimensions. Pixel centers are aligned so
// that equal input and output dimensions reproduce the input exactly.
inline Raster resize_bicubic(const Raster& img, std::size_t out_w, std::size_t out_h,
                             double out_spacing) {
    if (out_w == 0 || out_h == 0) throw std::invalid_argument("resize_bicubic: zero-sized output");
    Raster out(out_w, out_h, out_spacing);
    const double rx = static_cast<double>(img.width) / static_cast<double>(out_w);
    const double ry = static_cast<double>(img.height) / static_cast<double>(out_h);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double sy = (static_cast<double>(y) + 0.5) * ry - 0.5;
        for (std::size_t x = 0; x < out_w; ++x) {
            const double sx = (static_cast<double>(x) + 0.5) * rx - 0.5;
            out.samples[y * out_w + x] = detail::sample_bicubic_clamped(img, sx, sy);
        }
    }
    return out;
}

// Resample onto the 0.2 mm/px reference grid.
inline Raster resample_to_reference(const Raster& img) {
    if (img.spacing <= 0.0) throw std::invalid_argument("resample_to_reference: spacing must be positive");
    const auto out_w = static_cast<std::size_t>(
        std::llround(static_cast<double>(img.width) * img.spacing / kReferenceSpacing));
    const auto out_h = static_cast<std::size_t>(
        std::llround(static_cast<double>(img.height) * img.spacing / kReferenceSpacing));
    if (out_w == 0 || out_h == 0) {
        throw std::invalid_argument("resample_to_reference: output would be zero-sized");
    }
    if (out_w == img.width && out_h == img.height) {
        Raster out = img;
        out.spacing = kReferenceSpacing;
        return out;
    }
    return resize_bicubic(img, out_w, out_h, kReferenceSpacing);
}

// Per-image min-max rescale to [0,255], rounded half-up. A flat image maps
// to all zeros.
inline Raster to_8bit(const Raster& img) {
    Raster out(img.width, img.height, img.spacing);
    const auto [lo_it, hi_it] = std::minmax_element(img.samples.begin(), img.samples.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) return out;
    const double scale = 255.0 / (hi - lo);
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
        out.samples[i] = std::floor((img.samples[i] - lo) * scale + 0.5);
    }
    return out;
}

// Divide by the image maximum, then subtract the population standard
// deviation of the unit-scaled image.
inline Raster normalize(const Raster& img) {
    const double mx = *std::max_element(img.samples.begin(), img.samples.end());
    if (mx <= 0.0) throw std::invalid_argument("normalize: image maximum must be positive");
    Raster out(img.width, img.height, img.spacing);
    const double n = static_cast<double>(img.samples.size());
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
        const double y = img.samples[i] / mx;
        out.samples[i] = y;
        sum += y;
        sumsq += y * y;
    }
    const double mean = sum / n;
    const double var = std::max(0.0, sumsq / n - mean * mean);
    const double sd = std::sqrt(var);
    for (double& v : out.samples) v -= sd;
    return out;
}

// Axis-aligned size x size crop centered at (cx, cy); out-of-bounds regions
// are zero. The center itself must lie inside the image.
inline Raster crop_patch(const Raster& img, double cx, double cy, std::size_t size = kPatchSize) {
    if (cx < 0.0 || cy < 0.0 || cx >= static_cast<double>(img.width) ||
        cy >= static_cast<double>(img.height)) {
        throw std::invalid_argument("crop_patch: center outside image bounds");
    }
    const long x0 = std::lround(cx) - static_cast<long>(size) / 2;
    const long y0 = std::lround(cy) - static_cast<long>(size) / 2;
    Raster out(size, size, img.spacing);
    for (std::size_t y = 0; y < size; ++y) {
        const long sy = y0 + static_cast<long>(y);
        if (sy < 0 || sy >= static_cast<long>(img.height)) continue;
        const long lo = std::max<long>(0, -x0);
        const long hi = std::min<long>(static_cast<long>(size), static_cast<long>(img.width) - x0);
        for (long x = lo; x < hi; ++x) {
            out.samples[y * size + static_cast<std::size_t>(x)] =
                img.samples[static_cast<std::size_t>(sy) * img.width +
                            static_cast<std::size_t>(x0 + x)];
        }
    }
    return out;
}

// Square bicubic resize of a cropped patch to the model input size.
inline Raster resize_patch(const Raster& img, std::size_t target) {
    if (img.width != img.height) {
        throw std::invalid_argument("resize_patch: expected a square patch");
    }
    if (img.width == target) return img;
    const double out_spacing = img.spacing * static_cast<double>(img.width) / static_cast<double>(target);
    return resize_bicubic(img, target, target, out_spacing);
}

// ---------------------------------------------------------------------------
// Training-time augmentation
// ---------------------------------------------------------------------------

struct AugmentSpec {
    double flip_prob = 0.5;
    double rotation_deg = 10.0;
    double translate_frac = 0.05;  // of patch side, per axis
    double scale_lo = 0.9;
    double scale_hi = 1.1;
    double shear_deg = 5.0;
};

// 2x3 affine map from output pixel coordinates to source coordinates.
struct AffineMap {
    double m[2][2] = {{1.0, 0.0}, {0.0, 1.0}};
    double t[2] = {0.0, 0.0};

    void apply(double x, double y, double& sx, double& sy) const {
        sx = m[0][0] * x + m[0][1] * y + t[0];
        sy = m[1][0] * x + m[1][1] * y + t[1];
    }
};

namespace detail {

// Builds the output-to-source map for one view. The forward transform about
// the patch center is flip, then scale, then shear, then rotation, then
// translation; sampling needs its inverse.
inline AffineMap make_augment_map(std::size_t side, bool flip, double rot_deg, double tx, double ty,
                                  double scl, double shear_deg) {
    const double c = (static_cast<double>(side) - 1.0) / 2.0;
    const double th = rot_deg * 3.14159265358979323846 / 180.0;
    const double sh = std::tan(shear_deg * 3.14159265358979323846 / 180.0);
    // forward = R * Sh * S * F (about center), then translate by (tx, ty)
    double f = flip ? -1.0 : 1.0;
    double a00 = std::cos(th), a01 = -std::sin(th);
    double a10 = std::sin(th), a11 = std::cos(th);
    // compose shear (x' = x + sh*y)
    double b00 = a00 * 1.0 + a01 * 0.0, b01 = a00 * sh + a01 * 1.0;
    double b10 = a10 * 1.0 + a11 * 0.0, b11 = a10 * sh + a11 * 1.0;
    // compose isotropic scale and flip of x
    b00 *= scl * f;
    b10 *= scl * f;
    b01 *= scl;
    b11 *= scl;
    // invert the 2x2
    const double det = b00 * b11 - b01 * b10;
    if (std::abs(det) < 1e-12) throw std::logic_error("make_augment_map: singular transform");
    AffineMap inv;
    inv.m[0][0] = b11 / det;
    inv.m[0][1] = -b01 / det;
    inv.m[1][0] = -b10 / det;
    inv.m[1][1] = b00 / det;
    // source = inv * (out - center - t) + center
    const double ox = -(c + tx), oy = -(c + ty);
    inv.t[0] = inv.m[0][0] * ox + inv.m[0][1] * oy + c;
    inv.t[1] = inv.m[1][0] * ox + inv.m[1][1] * oy + c;
    return inv;
}

}  // namespace detail

inline Raster warp_affine(const Raster& img, const AffineMap& map) {
    Raster out(img.width, img.height, img.spacing);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            double sx, sy;
            map.apply(static_cast<double>(x), static_cast<double>(y), sx, sy);
            out.samples[y * img.width + x] = detail::sample_bicubic_zerofill(img, sx, sy);
        }
    }
    return out;
}

// Draws one transform per view from the spec. The flip decision is drawn
// once and shared so the left/right anatomy of the two views of a knee stays
// consistent.
struct AugmentDraw {
    bool flip = false;
    double rot = 0.0, tx = 0.0, ty = 0.0, scale = 1.0, shear = 0.0;
};

inline AugmentDraw draw_view_params(const AugmentSpec& spec, std::size_t side, Rng& rng, bool flip) {
    AugmentDraw d;
    d.flip = flip;
    d.rot = rng.uniform(-spec.rotation_deg, spec.rotation_deg);
    const double t = spec.translate_frac * static_cast<double>(side);
    d.tx = rng.uniform(-t, t);
    d.ty = rng.uniform(-t, t);
    d.scale = rng.uniform(spec.scale_lo, spec.scale_hi);
    d.shear = rng.uniform(-spec.shear_deg, spec.shear_deg);
    return d;
}

inline Raster apply_augment(const Raster& img, const AugmentDraw& d) {
    const AffineMap map =
        detail::make_augment_map(img.width, d.flip, d.rot, d.tx, d.ty, d.scale, d.shear);
    return warp_affine(img, map);
}

inline std::pair<Raster, Raster> augment_pair(const Raster& pa, const Raster& lat,
                                              const AugmentSpec& spec, Rng& rng) {
    if (pa.width != pa.height || lat.width != lat.height) {
        throw std::invalid_argument("augment_pair: patches must be square");
    }
    const bool flip = rng.bernoulli(spec.flip_prob);
    const AugmentDraw dpa = draw_view_params(spec, pa.width, rng, flip);
    const AugmentDraw dlat = draw_view_params(spec, lat.width, rng, flip);
    return {apply_augment(pa, dpa), apply_augment(lat, dlat)};
}

}  // namespace klp
