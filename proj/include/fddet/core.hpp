#pragma once

// Shared domain types: axis-aligned boxes, the food/condition category
// algebra, annotations and pseudo-labels, and the error hierarchy used
// across the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fddet {

// ---------------------------------------------------------------------------
// Errors
//
// ValidationError and its subclasses signal bad arguments or violated
// invariants (CLI exit code 1). IoError and subclasses signal missing or
// malformed external inputs (CLI exit code 2).

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class GeometryError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public IoError {
public:
    using IoError::IoError;
};

// ---------------------------------------------------------------------------
// Box geometry
//
// Boxes are stored in xywh top-left convention matching COCO annotation
// files; corner (xyxy) form exists only transiently inside geometry code.

struct BBox {
    double x = 0.0;  // left edge, pixels
    double y = 0.0;  // top edge, pixels
    double w = 0.0;  // width, pixels
    double h = 0.0;  // height, pixels

    double x2() const { return x + w; }
    double y2() const { return y + h; }
    double area() const { return w * h; }

    bool operator==(const BBox&) const = default;
};

/// Intersection-over-union of two boxes. Throws GeometryError if either
/// box has non-positive area.
inline double iou(const BBox& a, const BBox& b) {
    if (!(a.w > 0.0 && a.h > 0.0)) {
        throw GeometryError("iou: first box has non-positive area");
    }
    if (!(b.w > 0.0 && b.h > 0.0)) {
        throw GeometryError("iou: second box has non-positive area");
    }
    const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
    const double inter = ix * iy;
    if (inter <= 0.0) {
        return 0.0;
    }
    const double uni = a.area() + b.area() - inter;
    return inter / uni;
}

/// Canonical string key for a box within an image, used for feature lookup
/// and order-free tie-breaking: "<image_id>:<x>:<y>:<w>:<h>" with the box
/// values rendered at two decimal places.
inline std::string box_digest(std::int64_t image_id, const BBox& box) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld:%.2f:%.2f:%.2f:%.2f",
                  static_cast<long long>(image_id), box.x, box.y, box.w, box.h);
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// Categories
//
// A category is a (food type, condition) pair. The 13 food types are fixed;
// condition tokens come from the dataset's category registry, with "normal"
// designating a defect-free instance. Registry names follow the convention
// "<food>__<condition>" with a double underscore separator.

enum class FoodType : int {
    Apple = 0,
    Apricot,
    Banana,
    Cantaloupe,
    Cherry,
    Lychee,
    Mango,
    Orange,
    Peach,
    Pear,
    Plum,
    Strawberry,
    Watermelon,
};

inline constexpr int kNumFoodTypes = 13;

inline constexpr std::array<std::string_view, kNumFoodTypes> kFoodNames = {
    "apple",  "apricot", "banana", "cantaloupe", "cherry",     "lychee",    "mango",
    "orange", "peach",   "pear",   "plum",       "strawberry", "watermelon",
};

inline std::string_view food_name(FoodType f) {
    return kFoodNames[static_cast<int>(f)];
}

inline std::optional<FoodType> food_from_name(std::string_view name) {
    for (int i = 0; i < kNumFoodTypes; ++i) {
        if (kFoodNames[i] == name) {
            return static_cast<FoodType>(i);
        }
    }
    return std::nullopt;
}

inline constexpr std::string_view kNormalCondition = "normal";

struct Category {
    FoodType food = FoodType::Apple;
    std::string condition{kNormalCondition};  // "normal" or a defect token

    bool is_normal() const { return condition == kNormalCondition; }

    std::string name() const {
        std::string out(food_name(food));
        out += "__";
        out += condition;
        return out;
    }

    bool operator==(const Category&) const = default;

    // Food tokens are alphabetical and none is a prefix of another, so the
    // (food, condition) tuple order equals lexicographic order on name().
    auto operator<=>(const Category& other) const {
        if (auto c = food <=> other.food; c != 0) return c;
        return condition <=> other.condition;
    }
};

// ---------------------------------------------------------------------------
// Category registry

struct CategoryEntry {
    std::int64_t id = 0;
    std::string name;           // "<food>__<condition>"
    std::string supercategory;  // food token, kept redundantly
};

namespace detail {

/// Structural split of "<food>__<condition>". Validates the food token and
/// non-empty condition but not registry membership.
inline std::pair<FoodType, std::string> split_category_name(std::string_view name) {
    const auto sep = name.find("__");
    if (sep == std::string_view::npos) {
        throw ParseError("category name '" + std::string(name) +
                         "' is missing the '__' separator");
    }
    const std::string_view food_tok = name.substr(0, sep);
    const std::string_view cond_tok = name.substr(sep + 2);
    const auto food = food_from_name(food_tok);
    if (!food) {
        throw ParseError("unknown food token '" + std::string(food_tok) +
                         "' in category name '" + std::string(name) + "'");
    }
    if (cond_tok.empty()) {
        throw ParseError("empty condition token in category name '" + std::string(name) + "'");
    }
    return {*food, std::string(cond_tok)};
}

}  // namespace detail

/// Immutable lookup table over the dataset's category entries. Construction
/// validates structural invariants: unique ids, unique names, parseable
/// names, and supercategory matching the food token.
class CategoryRegistry {
public:
    CategoryRegistry() = default;

    static CategoryRegistry from_entries(std::vector<CategoryEntry> entries) {
        CategoryRegistry reg;
        reg.entries_ = std::move(entries);
        for (std::size_t i = 0; i < reg.entries_.size(); ++i) {
            const CategoryEntry& e = reg.entries_[i];
            auto [food, cond] = detail::split_category_name(e.name);
            if (e.supercategory != food_name(food)) {
                throw ParseError("category id " + std::to_string(e.id) + " ('" + e.name +
                                 "'): supercategory '" + e.supercategory +
                                 "' does not match food token '" + std::string(food_name(food)) +
                                 "'");
            }
            if (!reg.by_id_.emplace(e.id, i).second) {
                throw ValidationError("duplicate category id " + std::to_string(e.id));
            }
            if (!reg.by_name_.emplace(e.name, i).second) {
                throw ValidationError("duplicate category name '" + e.name + "'");
            }
        }
        return reg;
    }

    const std::vector<CategoryEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    const CategoryEntry* find_by_id(std::int64_t id) const {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &entries_[it->second];
    }

    const CategoryEntry* find_by_name(std::string_view name) const {
        auto it = by_name_.find(std::string(name));
        return it == by_name_.end() ? nullptr : &entries_[it->second];
    }

    bool contains(const Category& c) const { return find_by_name(c.name()) != nullptr; }

    Category category_of(std::int64_t id) const {
        const CategoryEntry* e = find_by_id(id);
        if (!e) {
            throw ValidationError("unknown category id " + std::to_string(id));
        }
        auto [food, cond] = detail::split_category_name(e->name);
        return Category{food, std::move(cond)};
    }

    std::int64_t id_of(const Category& c) const {
        const CategoryEntry* e = find_by_name(c.name());
        if (!e) {
            throw ValidationError("category '" + c.name() + "' is not in the registry");
        }
        return e->id;
    }

private:
    std::vector<CategoryEntry> entries_;
    std::map<std::int64_t, std::size_t> by_id_;
    std::map<std::string, std::size_t> by_name_;
};

/// Parses "<food>__<condition>" against a registry. The "normal" condition
/// is always accepted; defect tokens must name a registry entry.
inline Category parse_category_name(std::string_view name, const CategoryRegistry& registry) {
    auto [food, cond] = detail::split_category_name(name);
    Category cat{food, std::move(cond)};
    if (!cat.is_normal() && !registry.contains(cat)) {
        throw ParseError("unknown condition token '" + cat.condition + "' for food '" +
                         std::string(food_name(food)) + "': '" + cat.name() +
                         "' is not in the registry");
    }
    return cat;
}

// ---------------------------------------------------------------------------
// Labels

struct Annotation {
    std::int64_t id = 0;
    std::int64_t image_id = 0;
    BBox box;
    Category category;

    bool operator==(const Annotation&) const = default;
};

struct PseudoLabel {
    std::int64_t image_id = 0;
    BBox box;
    Category category;
    double confidence = 0.0;  // in [0, 1]

    bool operator==(const PseudoLabel&) const = default;
};

}  // namespace fddet
