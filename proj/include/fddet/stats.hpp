#pragma once

// Dataset statistics and the image-level train/test split.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fddet/dataset.hpp"
#include "fddet/rng.hpp"

namespace fddet {

struct DatasetStats {
    std::size_t num_images = 0;
    std::size_t num_instances = 0;
    double avg_instances_per_image = 0.0;  // 0 for an empty dataset
    std::map<std::string, std::size_t> per_category_counts;  // keyed by category name
    double defective_image_fraction = 0.0;
    // Bins: [0, 32^2), [32^2, 96^2), [96^2, 256^2), [256^2, inf)
    static constexpr std::array<double, 3> kAreaEdges{32.0 * 32.0, 96.0 * 96.0, 256.0 * 256.0};
    std::array<std::size_t, 4> box_area_histogram{0, 0, 0, 0};
};

/// An image counts as defective iff it carries at least one annotation whose
/// condition is not "normal".
inline DatasetStats compute_stats(const Dataset& d) {
    DatasetStats s;
    s.num_images = d.images.size();
    s.num_instances = d.annotations.size();
    s.avg_instances_per_image =
        s.num_images == 0 ? 0.0
                          : static_cast<double>(s.num_instances) / static_cast<double>(s.num_images);

    for (const auto& e : d.registry.entries()) {
        s.per_category_counts[e.name] = 0;
    }
    std::set<std::int64_t> defective_images;
    for (const auto& a : d.annotations) {
        const Category cat = d.registry.category_of(a.category_id);
        ++s.per_category_counts[cat.name()];
        if (!cat.is_normal()) {
            defective_images.insert(a.image_id);
        }
        const double area = a.box.area();
        std::size_t bin = DatasetStats::kAreaEdges.size();
        for (std::size_t i = 0; i < DatasetStats::kAreaEdges.size(); ++i) {
            if (area < DatasetStats::kAreaEdges[i]) {
                bin = i;
                break;
            }
        }
        ++s.box_area_histogram[bin];
    }
    s.defective_image_fraction =
        s.num_images == 0 ? 0.0
                          : static_cast<double>(defective_images.size()) /
                                static_cast<double>(s.num_images);
    return s;
}

inline json stats_to_json(const DatasetStats& s) {
    json per_cat = json::object();
    for (const auto& [name, count] : s.per_category_counts) {
        per_cat[name] = count;
    }
    return json{{"num_images", s.num_images},
                {"num_instances", s.num_instances},
                {"avg_instances_per_image", s.avg_instances_per_image},
                {"defective_image_fraction", s.defective_image_fraction},
                {"per_category_counts", per_cat},
                {"box_area_histogram",
                 {{"edges", json::array({DatasetStats::kAreaEdges[0], DatasetStats::kAreaEdges[1],
                                         DatasetStats::kAreaEdges[2]})},
                  {"counts", json::array({s.box_area_histogram[0], s.box_area_histogram[1],
                                          s.box_area_histogram[2], s.box_area_histogram[3]})}}}};
}

inline std::string stats_table(const DatasetStats& s) {
    std::ostringstream out;
    out << "images:                " << s.num_images << "\n";
    out << "instances:             " << s.num_instances << "\n";
    out << "avg instances/image:   " << s.avg_instances_per_image << "\n";
    out << "defective image frac:  " << s.defective_image_fraction << "\n";
    out << "box area histogram:    <32^2: " << s.box_area_histogram[0]
        << "  <96^2: " << s.box_area_histogram[1] << "  <256^2: " << s.box_area_histogram[2]
        << "  >=256^2: " << s.box_area_histogram[3] << "\n";
    out << "per-category counts:\n";
    for (const auto& [name, count] : s.per_category_counts) {
        out << "  " << name << ": " << count << "\n";
    }
    return out.str();
}

/// Image-level random partition; annotations follow their image. The train
/// side gets round(train_fraction * |images|) images. Original image order
/// is preserved within each side.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction,
                                                 RngStream& rng) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValidationError("split_dataset: train_fraction must be in (0, 1)");
    }
    const std::size_t n = d.images.size();
    const auto n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates
        const std::size_t j = rng.bounded(i);
        std::swap(order[i - 1], order[j]);
    }

    std::vector<bool> in_train(n, false);
    for (std::size_t i = 0; i < n_train && i < n; ++i) {
        in_train[order[i]] = true;
    }

    Dataset train, test;
    train.registry = d.registry;
    test.registry = d.registry;
    train.category_extra = d.category_extra;
    test.category_extra = d.category_extra;
    train.extra = d.extra;
    test.extra = d.extra;

    std::set<std::int64_t> train_ids;
    for (std::size_t i = 0; i < n; ++i) {
        (in_train[i] ? train : test).images.push_back(d.images[i]);
        if (in_train[i]) train_ids.insert(d.images[i].id);
    }
    for (const auto& a : d.annotations) {
        (train_ids.count(a.image_id) ? train : test).annotations.push_back(a);
    }
    return {std::move(train), std::move(test)};
}

}  // namespace fddet
