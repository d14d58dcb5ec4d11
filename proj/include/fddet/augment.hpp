#pragma once

// BBoxMixUp: pool same-category boxes across images, pair each target box
// with a candidate from a different image, and blend the candidate region
// into the target region with a Beta-sampled ratio. Labels never change;
// same-class mixing keeps every annotation valid as-is.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fddet/core.hpp"
#include "fddet/dataset.hpp"
#include "fddet/parallel.hpp"
#include "fddet/raster.hpp"
#include "fddet/rng.hpp"

namespace fddet {

struct MixParams {
    double alpha = 1.0;       // Beta shape for the target weight
    double beta = 1.0;        // Beta shape for the candidate weight
    double apply_prob = 0.5;  // per-box probability of mixing
    std::uint64_t seed = 0;
    bool defects_only = false;  // skip normal-condition boxes entirely
    std::optional<double> lambda_override;  // fixed mixing ratio; skips the Beta draw

    void validate() const {
        if (!(alpha > 0.0) || !(beta > 0.0)) {
            throw ValidationError("MixParams: alpha and beta must be positive");
        }
        if (!(apply_prob >= 0.0 && apply_prob <= 1.0)) {
            throw ValidationError("MixParams: apply_prob must be in [0, 1]");
        }
        if (lambda_override && !(*lambda_override >= 0.0 && *lambda_override <= 1.0)) {
            throw ValidationError("MixParams: lambda_override must be in [0, 1]");
        }
    }
};

struct PoolRef {
    std::int64_t image_id = 0;
    std::int64_t annotation_id = 0;

    bool operator==(const PoolRef&) const = default;
};

/// Same-category box references, keyed by full category name (food and
/// condition must both match).
struct ClassPool {
    std::map<std::string, std::vector<PoolRef>> pools;
};

/// Pools every annotation by its full category. Reference order follows the
/// dataset's annotation order, so pools are deterministic.
inline ClassPool build_class_pools(const Dataset& d) {
    ClassPool pool;
    for (std::size_t i = 0; i < d.annotations.size(); ++i) {
        const AnnotationRecord& a = d.annotations[i];
        const Category cat = d.registry.category_of(a.category_id);
        pool.pools[cat.name()].push_back(PoolRef{a.image_id, a.id});
    }
    return pool;
}

/// Uniform draw of a same-category reference from a different image, or
/// nullopt when no such reference exists.
inline std::optional<PoolRef> select_candidate(const ClassPool& pool, const Annotation& target,
                                               RngStream& rng) {
    const auto it = pool.pools.find(target.category.name());
    if (it == pool.pools.end()) {
        return std::nullopt;
    }
    std::vector<const PoolRef*> eligible;
    eligible.reserve(it->second.size());
    for (const PoolRef& ref : it->second) {
        if (ref.image_id != target.image_id) {
            eligible.push_back(&ref);
        }
    }
    if (eligible.empty()) {
        return std::nullopt;
    }
    return *eligible[rng.bounded(eligible.size())];
}

/// One Beta(alpha, beta) variate; the mixing weight of the target region.
inline double sample_mix_ratio(const MixParams& params, RngStream& rng) {
    if (!(params.alpha > 0.0) || !(params.beta > 0.0)) {
        throw ValidationError("sample_mix_ratio: alpha and beta must be positive");
    }
    return rng.beta(params.alpha, params.beta);
}

namespace detail {

struct PixelRect {
    int x = 0, y = 0, w = 0, h = 0;
};

/// Integer pixel rect for a real-valued box: edges rounded to nearest,
/// dimensions at least 1.
inline PixelRect pixel_rect(const BBox& box) {
    PixelRect r;
    r.x = static_cast<int>(std::llround(box.x));
    r.y = static_cast<int>(std::llround(box.y));
    r.w = std::max(1, static_cast<int>(std::llround(box.w)));
    r.h = std::max(1, static_cast<int>(std::llround(box.h)));
    return r;
}

inline void require_inside(const PixelRect& r, const Raster& raster, const char* what) {
    if (r.x < 0 || r.y < 0 || r.x + r.w > raster.width || r.y + r.h > raster.height) {
        throw GeometryError(std::string(what) + ": box [" + std::to_string(r.x) + ", " +
                            std::to_string(r.y) + ", " + std::to_string(r.w) + ", " +
                            std::to_string(r.h) + "] lies outside the " +
                            std::to_string(raster.width) + "x" + std::to_string(raster.height) +
                            " raster");
    }
}

/// Round half away from zero, clamped to the 8-bit channel range.
inline std::uint8_t to_channel(double v) {
    const long long r = std::llround(v);
    return static_cast<std::uint8_t>(std::clamp(r, 0LL, 255LL));
}

}  // namespace detail

/// Bilinear resample of the cropped box region to (out_w, out_h).
inline Raster resize_region(const Raster& src, const BBox& src_box, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) {
        throw ValidationError("resize_region: output dimensions must be at least 1");
    }
    const detail::PixelRect crop = detail::pixel_rect(src_box);
    detail::require_inside(crop, src, "resize_region");

    Raster out;
    out.width = out_w;
    out.height = out_h;
    out.pixels.resize(static_cast<std::size_t>(out_w) * out_h * 3);

    const double sx_scale = static_cast<double>(crop.w) / out_w;
    const double sy_scale = static_cast<double>(crop.h) / out_h;
    for (int oy = 0; oy < out_h; ++oy) {
        const double sy = (oy + 0.5) * sy_scale - 0.5;
        int y0 = static_cast<int>(std::floor(sy));
        double fy = sy - y0;
        if (y0 < 0) { y0 = 0; fy = 0.0; }
        if (y0 > crop.h - 1) { y0 = crop.h - 1; fy = 0.0; }
        const int y1 = std::min(y0 + 1, crop.h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            const double sx = (ox + 0.5) * sx_scale - 0.5;
            int x0 = static_cast<int>(std::floor(sx));
            double fx = sx - x0;
            if (x0 < 0) { x0 = 0; fx = 0.0; }
            if (x0 > crop.w - 1) { x0 = crop.w - 1; fx = 0.0; }
            const int x1 = std::min(x0 + 1, crop.w - 1);

            const std::uint8_t* p00 = src.at(crop.x + x0, crop.y + y0);
            const std::uint8_t* p01 = src.at(crop.x + x1, crop.y + y0);
            const std::uint8_t* p10 = src.at(crop.x + x0, crop.y + y1);
            const std::uint8_t* p11 = src.at(crop.x + x1, crop.y + y1);
            std::uint8_t* dst = out.at(ox, oy);
            for (int c = 0; c < 3; ++c) {
                // Incremental form keeps constant regions bit-exact.
                const double top = p00[c] + fx * (static_cast<double>(p01[c]) - p00[c]);
                const double bot = p10[c] + fx * (static_cast<double>(p11[c]) - p10[c]);
                dst[c] = detail::to_channel(top + fy * (bot - top));
            }
        }
    }
    return out;
}

/// Blends `patch` into `target_box`: out = round(lambda*target +
/// (1-lambda)*patch) per channel inside the box; pixels outside are
/// untouched. Patch dimensions must equal the box's integer pixel rect.
inline Raster mix_region(const Raster& target, const BBox& target_box, const Raster& patch,
                         double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ValidationError("mix_region: lambda must be in [0, 1]");
    }
    const detail::PixelRect rect = detail::pixel_rect(target_box);
    detail::require_inside(rect, target, "mix_region");
    if (patch.width != rect.w || patch.height != rect.h) {
        throw ValidationError("mix_region: patch is " + std::to_string(patch.width) + "x" +
                              std::to_string(patch.height) + " but the target region is " +
                              std::to_string(rect.w) + "x" + std::to_string(rect.h));
    }

    Raster out = target;
    for (int y = 0; y < rect.h; ++y) {
        for (int x = 0; x < rect.w; ++x) {
            const std::uint8_t* t = target.at(rect.x + x, rect.y + y);
            const std::uint8_t* p = patch.at(x, y);
            std::uint8_t* o = out.at(rect.x + x, rect.y + y);
            for (int c = 0; c < 3; ++c) {
                o[c] = detail::to_channel(lambda * t[c] + (1.0 - lambda) * p[c]);
            }
        }
    }
    return out;
}

using RasterStore = std::map<std::int64_t, Raster>;

/// Applies BBoxMixUp across the dataset. Annotations are never modified.
/// Candidate patches are always cropped from the
/// input rasters, and each image draws from its own derived substream, so
/// the result is identical regardless of the parallel schedule. Within one
/// image, boxes are processed in ascending annotation-id order and later
/// blends read the already-mixed raster.
inline RasterStore apply_bboxmixup(const Dataset& d, const RasterStore& rasters,
                                   const MixParams& params, int jobs = 1) {
    params.validate();

    std::map<std::int64_t, const AnnotationRecord*> ann_by_id;
    std::map<std::int64_t, std::vector<const AnnotationRecord*>> anns_by_image;
    for (const auto& a : d.annotations) {
        ann_by_id[a.id] = &a;
        anns_by_image[a.image_id].push_back(&a);
    }
    for (auto& [image_id, anns] : anns_by_image) {
        std::sort(anns.begin(), anns.end(),
                  [](const AnnotationRecord* a, const AnnotationRecord* b) { return a->id < b->id; });
    }
    for (const auto& im : d.images) {
        if (!rasters.count(im.id)) {
            throw IoError("no raster for image id " + std::to_string(im.id) + " ('" +
                          im.file_name + "')");
        }
    }

    const ClassPool pool = build_class_pools(d);
    RasterStore out = rasters;

    detail::parallel_for(d.images.size(), jobs, [&](std::size_t idx) {
        const ImageRecord& im = d.images[idx];
        const auto anns_it = anns_by_image.find(im.id);
        if (anns_it == anns_by_image.end()) {
            return;  // image has no boxes; raster passes through
        }
        RngStream rng = RngStream::derive(params.seed, "bboxmixup", im.id);
        Raster work = rasters.at(im.id);
        bool touched = false;
        for (const AnnotationRecord* rec : anns_it->second) {
            const Annotation target{rec->id, rec->image_id, rec->box,
                                    d.registry.category_of(rec->category_id)};
            if (params.defects_only && target.category.is_normal()) {
                continue;
            }
            if (!(rng.uniform() < params.apply_prob)) {
                continue;
            }
            const auto cand = select_candidate(pool, target, rng);
            if (!cand) {
                continue;  // absence is a value, not an error
            }
            const double lambda = params.lambda_override ? *params.lambda_override
                                                         : sample_mix_ratio(params, rng);
            const AnnotationRecord& cand_rec = *ann_by_id.at(cand->annotation_id);
            const Raster& cand_raster = rasters.at(cand->image_id);
            const detail::PixelRect rect = detail::pixel_rect(target.box);
            const Raster patch = resize_region(cand_raster, cand_rec.box, rect.w, rect.h);
            work = mix_region(work, target.box, patch, lambda);
            touched = true;
        }
        if (touched) {
            // at() never inserts; workers write distinct pre-existing slots.
            out.at(im.id) = std::move(work);
        }
    });
    return out;
}

}  // namespace fddet
