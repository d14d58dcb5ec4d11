#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "fddet/augment.hpp"
#include "testutil.hpp"

using namespace fddet;

namespace {

Dataset make_dataset(const std::vector<std::pair<std::int64_t, std::string>>& anns_by_image,
                     int img_w = 64, int img_h = 64) {
    Dataset d;
    d.registry = testutil::basic_registry();
    std::set<std::int64_t> image_ids;
    for (const auto& [img, _] : anns_by_image) image_ids.insert(img);
    for (const auto id : image_ids) {
        d.images.push_back({id, "img_" + std::to_string(id) + ".ppm", img_w, img_h,
                            json::object()});
    }
    std::int64_t next = 1;
    for (const auto& [img, cat_name] : anns_by_image) {
        d.annotations.push_back({next++, img, d.registry.find_by_name(cat_name)->id,
                                 BBox{8, 8, 16, 16}, std::nullopt, json::object()});
    }
    return d;
}

RasterStore constant_rasters(const Dataset& d, std::uint8_t base = 100) {
    RasterStore store;
    std::uint8_t v = base;
    for (const auto& im : d.images) {
        store[im.id] = Raster::filled(im.width, im.height, {v, v, v});
        v = static_cast<std::uint8_t>(v + 50);
    }
    return store;
}

bool inside_rect(int x, int y, const BBox& b) {
    const auto rx = static_cast<int>(std::llround(b.x));
    const auto ry = static_cast<int>(std::llround(b.y));
    const auto rw = std::max(1, static_cast<int>(std::llround(b.w)));
    const auto rh = std::max(1, static_cast<int>(std::llround(b.h)));
    return x >= rx && x < rx + rw && y >= ry && y < ry + rh;
}

}  // namespace

TEST_CASE("build_class_pools groups by full category") {
    const Dataset d = make_dataset({{1, "apple__rot"}, {2, "apple__rot"}, {3, "pear__bruise"}});
    const ClassPool pool = build_class_pools(d);
    REQUIRE(pool.pools.size() == 2);
    CHECK(pool.pools.at("apple__rot").size() == 2);
    CHECK(pool.pools.at("pear__bruise").size() == 1);

    CHECK(build_class_pools(Dataset{}).pools.empty());

    const Dataset same = make_dataset({{1, "apple__rot"}, {2, "apple__rot"}, {3, "apple__rot"}});
    const ClassPool sp = build_class_pools(same);
    REQUIRE(sp.pools.size() == 1);
    CHECK(sp.pools.at("apple__rot").size() == 3);
}

TEST_CASE("pools separate same food with different conditions") {
    const Dataset d = make_dataset({{1, "apple__rot"}, {2, "apple__mold"}});
    const ClassPool pool = build_class_pools(d);
    CHECK(pool.pools.size() == 2);
}

TEST_CASE("select_candidate draws uniformly from other images") {
    RngStream rng = RngStream::derive(41, "select");

    SECTION("forced choice") {
        const Dataset d = make_dataset({{1, "apple__rot"}, {2, "apple__rot"}});
        const ClassPool pool = build_class_pools(d);
        const Annotation target = d.annotation_at(0);
        for (int i = 0; i < 20; ++i) {
            const auto ref = select_candidate(pool, target, rng);
            REQUIRE(ref.has_value());
            CHECK(ref->image_id == 2);
            CHECK(ref->annotation_id == 2);
        }
    }
    SECTION("sole member yields none") {
        const Dataset d = make_dataset({{1, "apple__rot"}, {2, "pear__bruise"}});
        const ClassPool pool = build_class_pools(d);
        CHECK_FALSE(select_candidate(pool, d.annotation_at(0), rng).has_value());
    }
    SECTION("same-image references are excluded") {
        const Dataset d = make_dataset({{1, "apple__rot"}, {1, "apple__rot"}});
        const ClassPool pool = build_class_pools(d);
        CHECK_FALSE(select_candidate(pool, d.annotation_at(0), rng).has_value());
    }
    SECTION("two candidates split 50/50 over 10k draws") {
        const Dataset d =
            make_dataset({{1, "apple__rot"}, {2, "apple__rot"}, {3, "apple__rot"}});
        const ClassPool pool = build_class_pools(d);
        const Annotation target = d.annotation_at(0);
        std::map<std::int64_t, int> counts;
        for (int i = 0; i < 10000; ++i) {
            const auto ref = select_candidate(pool, target, rng);
            REQUIRE(ref.has_value());
            ++counts[ref->image_id];
        }
        CHECK(counts.size() == 2);
        CHECK(counts[2] > 4800);
        CHECK(counts[2] < 5200);
    }
}

TEST_CASE("sample_mix_ratio follows Beta moments") {
    RngStream rng = RngStream::derive(42, "mixratio");
    const int n = 10000;

    SECTION("Beta(1,1) is uniform") {
        MixParams p;
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            const double l = sample_mix_ratio(p, rng);
            REQUIRE(l >= 0.0);
            REQUIRE(l <= 1.0);
            sum += l;
        }
        CHECK(sum / n == Catch::Approx(0.5).margin(0.02));
    }
    SECTION("Beta(2,2) mean and variance") {
        MixParams p;
        p.alpha = 2.0;
        p.beta = 2.0;
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double l = sample_mix_ratio(p, rng);
            sum += l;
            sumsq += l * l;
        }
        const double mean = sum / n;
        const double var = sumsq / n - mean * mean;
        CHECK(mean == Catch::Approx(0.5).margin(0.02));
        CHECK(var == Catch::Approx(0.05).margin(0.01));  // a*b/((a+b)^2 (a+b+1))
    }
    SECTION("non-positive shapes are rejected") {
        MixParams p;
        p.alpha = 0.0;
        CHECK_THROWS_AS(sample_mix_ratio(p, rng), ValidationError);
    }
}

TEST_CASE("resize_region identity and constancy") {
    RngStream rng = RngStream::derive(43, "resize");
    Raster src;
    src.width = 20;
    src.height = 20;
    src.pixels.resize(20 * 20 * 3);
    for (auto& p : src.pixels) p = static_cast<std::uint8_t>(rng.bounded(256));

    SECTION("identity resample returns the exact crop") {
        const BBox box{4, 5, 8, 8};
        const Raster out = resize_region(src, box, 8, 8);
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                for (int c = 0; c < 3; ++c) {
                    REQUIRE(out.at(x, y)[c] == src.at(4 + x, 5 + y)[c]);
                }
            }
        }
    }
    SECTION("checkerboard 2x2 to 1x1 center sample is 128") {
        Raster cb;
        cb.width = 2;
        cb.height = 2;
        cb.pixels = {0,   0,   0,   255, 255, 255,
                     255, 255, 255, 0,   0,   0};
        const Raster out = resize_region(cb, BBox{0, 0, 2, 2}, 1, 1);
        CHECK(out.pixels == std::vector<std::uint8_t>{128, 128, 128});
    }
    SECTION("constant region stays constant at any size") {
        const Raster flat = Raster::filled(10, 10, {37, 91, 200});
        for (const auto& [w, h] : std::vector<std::pair<int, int>>{{1, 1}, {3, 7}, {16, 2}}) {
            const Raster out = resize_region(flat, BBox{2, 2, 6, 6}, w, h);
            for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
                REQUIRE(out.pixels[i] == 37);
                REQUIRE(out.pixels[i + 1] == 91);
                REQUIRE(out.pixels[i + 2] == 200);
            }
        }
    }
    SECTION("box outside raster is a geometry error") {
        CHECK_THROWS_AS(resize_region(src, BBox{15, 15, 10, 10}, 4, 4), GeometryError);
        CHECK_THROWS_AS(resize_region(src, BBox{-2, 0, 5, 5}, 4, 4), GeometryError);
        CHECK_THROWS_AS(resize_region(src, BBox{0, 0, 5, 5}, 0, 4), ValidationError);
    }
}

TEST_CASE("mix_region endpoints and arithmetic") {
    const Raster target = Raster::filled(10, 10, {100, 100, 100});
    const BBox box{2, 2, 4, 4};
    const Raster patch = Raster::filled(4, 4, {200, 200, 200});

    SECTION("lambda=1 returns the target unchanged") {
        CHECK(mix_region(target, box, patch, 1.0) == target);
    }
    SECTION("lambda=0 replaces the region with the patch") {
        const Raster out = mix_region(target, box, patch, 0.0);
        for (int y = 0; y < 10; ++y) {
            for (int x = 0; x < 10; ++x) {
                const std::uint8_t want = inside_rect(x, y, box) ? 200 : 100;
                REQUIRE(out.at(x, y)[0] == want);
            }
        }
    }
    SECTION("lambda=0.5 blends 100 and 200 to 150") {
        const Raster out = mix_region(target, box, patch, 0.5);
        CHECK(out.at(3, 3)[0] == 150);
        CHECK(out.at(0, 0)[0] == 100);
    }
    SECTION("dimension mismatch is rejected") {
        const Raster bad = Raster::filled(3, 4, {0, 0, 0});
        CHECK_THROWS_AS(mix_region(target, box, bad, 0.5), ValidationError);
    }
    SECTION("lambda outside [0,1] is rejected") {
        CHECK_THROWS_AS(mix_region(target, box, patch, 1.5), ValidationError);
        CHECK_THROWS_AS(mix_region(target, box, patch, -0.1), ValidationError);
    }
}

TEST_CASE("apply_bboxmixup no-op endpoints") {
    const Dataset d = make_dataset({{1, "apple__rot"}, {2, "apple__rot"}});
    const RasterStore store = constant_rasters(d);

    SECTION("apply_prob=0 leaves rasters byte-identical") {
        MixParams p;
        p.apply_prob = 0.0;
        CHECK(apply_bboxmixup(d, store, p) == store);
    }
    SECTION("singleton categories force a skip") {
        const Dataset lone = make_dataset({{1, "apple__rot"}, {2, "pear__bruise"}});
        const RasterStore ls = constant_rasters(lone);
        MixParams p;
        p.apply_prob = 1.0;
        CHECK(apply_bboxmixup(lone, ls, p) == ls);
    }
    SECTION("missing raster is an I/O error naming the image") {
        RasterStore partial = store;
        partial.erase(2);
        MixParams p;
        CHECK_THROWS_AS(apply_bboxmixup(d, partial, p), IoError);
        CHECK_THROWS_WITH(apply_bboxmixup(d, partial, p),
                          Catch::Matchers::ContainsSubstring("image id 2"));
    }
}

TEST_CASE("apply_bboxmixup blends constant regions per the fixed lambda") {
    // Two images, constant 100 and 200; boxes cover [8,24) squares.
    const Dataset d = make_dataset({{1, "apple__rot"}, {2, "apple__rot"}});
    RasterStore store;
    store[1] = Raster::filled(64, 64, {100, 100, 100});
    store[2] = Raster::filled(64, 64, {200, 200, 200});

    MixParams p;
    p.apply_prob = 1.0;
    p.lambda_override = 0.5;
    const RasterStore out = apply_bboxmixup(d, store, p);

    const BBox box{8, 8, 16, 16};
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const std::uint8_t got1 = out.at(1).at(x, y)[0];
            const std::uint8_t got2 = out.at(2).at(x, y)[0];
            if (inside_rect(x, y, box)) {
                REQUIRE(got1 == 150);
                REQUIRE(got2 == 150);
            } else {
                REQUIRE(got1 == 100);
                REQUIRE(got2 == 200);
            }
        }
    }
}

TEST_CASE("apply_bboxmixup property suite over randomized fixtures") {
    RngStream meta = RngStream::derive(44, "augment-props");
    for (int trial = 0; trial < 40; ++trial) {
        // Random small dataset: 2-5 images, 1-4 boxes each.
        const int n_images = 2 + static_cast<int>(meta.bounded(4));
        Dataset d;
        d.registry = testutil::basic_registry();
        RasterStore store;
        const std::vector<std::string> names = {"apple__rot", "apple__mold", "pear__bruise",
                                                "apple__normal"};
        std::int64_t next_ann = 1;
        for (int i = 1; i <= n_images; ++i) {
            const int w = 24 + static_cast<int>(meta.bounded(24));
            const int h = 24 + static_cast<int>(meta.bounded(24));
            d.images.push_back({i, "img.ppm", w, h, json::object()});
            Raster r;
            r.width = w;
            r.height = h;
            r.pixels.resize(static_cast<std::size_t>(w) * h * 3);
            for (auto& px : r.pixels) px = static_cast<std::uint8_t>(meta.bounded(256));
            store[i] = std::move(r);
            const int n_boxes = 1 + static_cast<int>(meta.bounded(4));
            for (int b = 0; b < n_boxes; ++b) {
                d.annotations.push_back({next_ann++, i,
                                         d.registry.find_by_name(names[meta.bounded(4)])->id,
                                         testutil::random_box(meta, w, h, 2), std::nullopt,
                                         json::object()});
            }
        }

        MixParams p;
        p.apply_prob = 0.8;
        p.alpha = 0.5 + meta.uniform() * 3.0;
        p.beta = 0.5 + meta.uniform() * 3.0;
        p.seed = meta.next_u64();

        const auto annotations_before = d.annotations;
        const RasterStore out = apply_bboxmixup(d, store, p);

        // Label preservation.
        REQUIRE(d.annotations == annotations_before);

        // Determinism: same seed, and any parallel schedule, reproduce bytes.
        REQUIRE(apply_bboxmixup(d, store, p) == out);
        REQUIRE(apply_bboxmixup(d, store, p, 3) == out);

        // Locality: pixels outside every box on an image are unchanged.
        for (const auto& im : d.images) {
            const Raster& before = store.at(im.id);
            const Raster& after = out.at(im.id);
            REQUIRE(after.width == before.width);
            REQUIRE(after.height == before.height);
            for (int y = 0; y < before.height; ++y) {
                for (int x = 0; x < before.width; ++x) {
                    bool in_any = false;
                    for (const auto& a : d.annotations) {
                        if (a.image_id == im.id && inside_rect(x, y, a.box)) {
                            in_any = true;
                            break;
                        }
                    }
                    if (!in_any) {
                        for (int c = 0; c < 3; ++c) {
                            REQUIRE(after.at(x, y)[c] == before.at(x, y)[c]);
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("mix convexity bound holds after rounding") {
    RngStream rng = RngStream::derive(45, "convexity");
    for (int trial = 0; trial < 200; ++trial) {
        const int w = 4 + static_cast<int>(rng.bounded(8));
        const int h = 4 + static_cast<int>(rng.bounded(8));
        Raster target, patch;
        target.width = patch.width = w;
        target.height = patch.height = h;
        target.pixels.resize(static_cast<std::size_t>(w) * h * 3);
        patch.pixels.resize(target.pixels.size());
        for (auto& px : target.pixels) px = static_cast<std::uint8_t>(rng.bounded(256));
        for (auto& px : patch.pixels) px = static_cast<std::uint8_t>(rng.bounded(256));

        const double lambda = rng.uniform();
        const Raster out = mix_region(target, BBox{0, 0, static_cast<double>(w),
                                                   static_cast<double>(h)},
                                      patch, lambda);
        for (std::size_t i = 0; i < out.pixels.size(); ++i) {
            const int lo = std::min(target.pixels[i], patch.pixels[i]);
            const int hi = std::max(target.pixels[i], patch.pixels[i]);
            REQUIRE(out.pixels[i] >= lo);
            REQUIRE(out.pixels[i] <= hi);
        }
    }
}
