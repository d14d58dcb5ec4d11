#pragma once

// COCO-subset annotation model and its JSON round-trip. Known keys are
// parsed into typed fields; unknown keys are carried through verbatim so a
// load/save cycle preserves them. Saving always emits known keys first in a
// fixed order, which makes consecutive saves byte-identical.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fddet/core.hpp"
#include "fddet/raster.hpp"

namespace fddet {

using json = nlohmann::ordered_json;

struct ImageRecord {
    std::int64_t id = 0;
    std::string file_name;
    int width = 0;
    int height = 0;
    json extra = json::object();  // unknown keys, original order

    bool operator==(const ImageRecord&) const = default;
};

struct AnnotationRecord {
    std::int64_t id = 0;
    std::int64_t image_id = 0;
    std::int64_t category_id = 0;
    BBox box;
    std::optional<double> score;  // present => record is a pseudo-label
    json extra = json::object();

    bool operator==(const AnnotationRecord&) const = default;
};

struct Dataset {
    std::vector<ImageRecord> images;
    std::vector<AnnotationRecord> annotations;
    CategoryRegistry registry;
    std::map<std::int64_t, json> category_extra;  // by category id, when present
    json extra = json::object();                  // unknown top-level keys

    const ImageRecord* find_image(std::int64_t id) const {
        for (const auto& im : images) {
            if (im.id == id) return &im;
        }
        return nullptr;
    }

    /// Resolves an annotation record into the domain Annotation type.
    Annotation annotation_at(std::size_t i) const {
        const AnnotationRecord& r = annotations.at(i);
        return Annotation{r.id, r.image_id, r.box, registry.category_of(r.category_id)};
    }

    /// Resolves a scored record into a PseudoLabel; throws if no score.
    PseudoLabel pseudo_label_at(std::size_t i) const {
        const AnnotationRecord& r = annotations.at(i);
        if (!r.score) {
            throw ValidationError("annotation id " + std::to_string(r.id) +
                                  " has no score; not a pseudo-label");
        }
        return PseudoLabel{r.image_id, r.box, registry.category_of(r.category_id), *r.score};
    }

    /// Cross-reference and uniqueness checks; throws ValidationError naming
    /// the first offending record and field.
    void validate() const {
        std::set<std::int64_t> image_ids;
        for (const auto& im : images) {
            if (!image_ids.insert(im.id).second) {
                throw ValidationError("duplicate image id " + std::to_string(im.id));
            }
            if (im.width < 1 || im.height < 1) {
                throw ValidationError("image id " + std::to_string(im.id) +
                                      ": width/height must be positive");
            }
        }
        std::set<std::int64_t> ann_ids;
        for (const auto& a : annotations) {
            const std::string who = "annotation id " + std::to_string(a.id);
            if (!ann_ids.insert(a.id).second) {
                throw ValidationError("duplicate annotation id " + std::to_string(a.id));
            }
            if (!image_ids.count(a.image_id)) {
                throw ValidationError(who + ": image_id " + std::to_string(a.image_id) +
                                      " does not resolve");
            }
            if (!registry.find_by_id(a.category_id)) {
                throw ValidationError(who + ": category_id " + std::to_string(a.category_id) +
                                      " does not resolve");
            }
            if (!(a.box.w > 0.0 && a.box.h > 0.0)) {
                throw ValidationError(who + ": bbox has non-positive width or height");
            }
            const ImageRecord* im = find_image(a.image_id);
            if (a.box.x < 0.0 || a.box.y < 0.0 || a.box.x2() > im->width ||
                a.box.y2() > im->height) {
                throw ValidationError(who + ": bbox extends outside image bounds");
            }
            if (a.score && !(*a.score >= 0.0 && *a.score <= 1.0)) {
                throw ValidationError(who + ": score must be in [0, 1]");
            }
        }
    }

    bool operator==(const Dataset& other) const {
        return images == other.images && annotations == other.annotations &&
               registry.entries() == other.registry.entries() &&
               category_extra == other.category_extra && extra == other.extra;
    }
};

inline bool operator==(const CategoryEntry& a, const CategoryEntry& b) {
    return a.id == b.id && a.name == b.name && a.supercategory == b.supercategory;
}

namespace detail {

inline FormatError field_error(const std::string& who, const std::string& what) {
    return FormatError(who + ": " + what);
}

inline std::int64_t require_int(const json& obj, const char* key, const std::string& who) {
    if (!obj.contains(key)) throw field_error(who, std::string("missing field '") + key + "'");
    const json& v = obj.at(key);
    if (!v.is_number_integer()) {
        throw field_error(who, std::string("field '") + key + "' must be an integer");
    }
    return v.get<std::int64_t>();
}

inline std::string require_string(const json& obj, const char* key, const std::string& who) {
    if (!obj.contains(key)) throw field_error(who, std::string("missing field '") + key + "'");
    const json& v = obj.at(key);
    if (!v.is_string()) {
        throw field_error(who, std::string("field '") + key + "' must be a string");
    }
    return v.get<std::string>();
}

inline json collect_extra(const json& obj, std::initializer_list<const char*> known) {
    json extra = json::object();
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find_if(known.begin(), known.end(), [&](const char* k) {
                return it.key() == k;
            }) == known.end()) {
            extra[it.key()] = it.value();
        }
    }
    return extra;
}

}  // namespace detail

/// Builds a Dataset from parsed JSON. Boxes reaching past image bounds are
/// clamped; every clamp is reported through `clamp_log` when given. Boxes
/// that end up empty after clamping are rejected.
inline Dataset dataset_from_json(const json& root, std::vector<std::string>* clamp_log = nullptr) {
    if (!root.is_object()) {
        throw FormatError("top level: expected a JSON object");
    }
    for (const char* key : {"images", "annotations", "categories"}) {
        if (!root.contains(key)) {
            throw FormatError(std::string("top level: missing field '") + key + "'");
        }
        if (!root.at(key).is_array()) {
            throw FormatError(std::string("top level: field '") + key + "' must be an array");
        }
    }

    Dataset d;
    d.extra = detail::collect_extra(root, {"images", "annotations", "categories"});

    for (const json& j : root.at("images")) {
        if (!j.is_object()) throw FormatError("images: entries must be objects");
        ImageRecord im;
        im.id = detail::require_int(j, "id", "image");
        const std::string who = "image id " + std::to_string(im.id);
        im.file_name = detail::require_string(j, "file_name", who);
        im.width = static_cast<int>(detail::require_int(j, "width", who));
        im.height = static_cast<int>(detail::require_int(j, "height", who));
        if (im.width < 1 || im.height < 1) {
            throw detail::field_error(who, "width/height must be positive");
        }
        im.extra = detail::collect_extra(j, {"id", "file_name", "width", "height"});
        d.images.push_back(std::move(im));
    }
    std::map<std::int64_t, const ImageRecord*> images_by_id;
    for (const auto& im : d.images) {
        if (!images_by_id.emplace(im.id, &im).second) {
            throw FormatError("duplicate image id " + std::to_string(im.id));
        }
    }

    std::vector<CategoryEntry> entries;
    for (const json& j : root.at("categories")) {
        if (!j.is_object()) throw FormatError("categories: entries must be objects");
        CategoryEntry e;
        e.id = detail::require_int(j, "id", "category");
        const std::string who = "category id " + std::to_string(e.id);
        e.name = detail::require_string(j, "name", who);
        e.supercategory = detail::require_string(j, "supercategory", who);
        json extra = detail::collect_extra(j, {"id", "name", "supercategory"});
        if (!extra.empty()) {
            d.category_extra[e.id] = std::move(extra);
        }
        entries.push_back(std::move(e));
    }
    try {
        d.registry = CategoryRegistry::from_entries(std::move(entries));
    } catch (const Error& e) {
        throw FormatError(std::string("categories: ") + e.what());
    }

    std::set<std::int64_t> ann_ids;
    for (const json& j : root.at("annotations")) {
        if (!j.is_object()) throw FormatError("annotations: entries must be objects");
        AnnotationRecord a;
        a.id = detail::require_int(j, "id", "annotation");
        const std::string who = "annotation id " + std::to_string(a.id);
        if (!ann_ids.insert(a.id).second) {
            throw FormatError("duplicate annotation id " + std::to_string(a.id));
        }
        a.image_id = detail::require_int(j, "image_id", who);
        a.category_id = detail::require_int(j, "category_id", who);
        const auto img_it = images_by_id.find(a.image_id);
        if (img_it == images_by_id.end()) {
            throw detail::field_error(who, "image_id " + std::to_string(a.image_id) +
                                               " references a missing image");
        }
        if (!d.registry.find_by_id(a.category_id)) {
            throw detail::field_error(who, "category_id " + std::to_string(a.category_id) +
                                               " references a missing category");
        }
        if (!j.contains("bbox") || !j.at("bbox").is_array() || j.at("bbox").size() != 4 ||
            !std::all_of(j.at("bbox").begin(), j.at("bbox").end(),
                         [](const json& v) { return v.is_number(); })) {
            throw detail::field_error(who, "bbox must be an array of 4 numbers");
        }
        const json& bb = j.at("bbox");
        BBox raw{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                 bb[3].get<double>()};
        if (!(raw.w > 0.0 && raw.h > 0.0)) {
            throw detail::field_error(who, "bbox has non-positive width or height");
        }

        // Clamp to image bounds; web-sourced boxes commonly overflow by a pixel.
        const ImageRecord& im = *img_it->second;
        const double x1 = std::clamp(raw.x, 0.0, static_cast<double>(im.width));
        const double y1 = std::clamp(raw.y, 0.0, static_cast<double>(im.height));
        const double x2 = std::clamp(raw.x2(), 0.0, static_cast<double>(im.width));
        const double y2 = std::clamp(raw.y2(), 0.0, static_cast<double>(im.height));
        BBox clamped{x1, y1, x2 - x1, y2 - y1};
        if (!(clamped.w > 0.0 && clamped.h > 0.0)) {
            throw detail::field_error(who, "bbox lies entirely outside image bounds");
        }
        if (clamped != raw && clamp_log) {
            char buf[200];
            std::snprintf(buf, sizeof(buf),
                          "annotation id %lld: bbox clamped from "
                          "[%g, %g, %g, %g] to [%g, %g, %g, %g]",
                          static_cast<long long>(a.id), raw.x, raw.y, raw.w, raw.h, clamped.x,
                          clamped.y, clamped.w, clamped.h);
            clamp_log->push_back(buf);
        }
        a.box = clamped;

        if (j.contains("score")) {
            if (!j.at("score").is_number()) {
                throw detail::field_error(who, "score must be a number");
            }
            const double s = j.at("score").get<double>();
            if (!(s >= 0.0 && s <= 1.0)) {
                throw detail::field_error(who, "score must be in [0, 1]");
            }
            a.score = s;
        }
        a.extra = detail::collect_extra(j, {"id", "image_id", "category_id", "bbox", "score"});
        d.annotations.push_back(std::move(a));
    }

    return d;
}

inline json dataset_to_json(const Dataset& d) {
    json root = json::object();
    root["images"] = json::array();
    for (const auto& im : d.images) {
        json j{{"id", im.id}, {"file_name", im.file_name}, {"width", im.width},
               {"height", im.height}};
        for (auto it = im.extra.begin(); it != im.extra.end(); ++it) {
            j[it.key()] = it.value();
        }
        root["images"].push_back(std::move(j));
    }
    root["annotations"] = json::array();
    for (const auto& a : d.annotations) {
        json j{{"id", a.id},
               {"image_id", a.image_id},
               {"category_id", a.category_id},
               {"bbox", json::array({a.box.x, a.box.y, a.box.w, a.box.h})}};
        if (a.score) {
            j["score"] = *a.score;
        }
        for (auto it = a.extra.begin(); it != a.extra.end(); ++it) {
            j[it.key()] = it.value();
        }
        root["annotations"].push_back(std::move(j));
    }
    root["categories"] = json::array();
    for (const auto& e : d.registry.entries()) {
        json j{{"id", e.id}, {"name", e.name}, {"supercategory", e.supercategory}};
        const auto it = d.category_extra.find(e.id);
        if (it != d.category_extra.end()) {
            for (auto kv = it->second.begin(); kv != it->second.end(); ++kv) {
                j[kv.key()] = kv.value();
            }
        }
        root["categories"].push_back(std::move(j));
    }
    for (auto it = d.extra.begin(); it != d.extra.end(); ++it) {
        root[it.key()] = it.value();
    }
    return root;
}

inline Dataset load_dataset(const std::filesystem::path& path,
                            std::vector<std::string>* clamp_log = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open dataset file '" + path.string() + "'");
    }
    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError("'" + path.string() + "': malformed JSON: " + e.what());
    }
    try {
        return dataset_from_json(root, clamp_log);
    } catch (const FormatError& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    }
}

/// Validates and writes the dataset. Output is written to a temp file and
/// renamed, and key order is fixed, so consecutive saves are byte-identical.
inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    d.validate();
    detail::write_bytes_atomic(path, dataset_to_json(d).dump(2) + "\n");
}

}  // namespace fddet
