#pragma once

// Region features for visual-semantic calibration. The builtin provider is
// an 8x8x8 joint RGB histogram over the box's pixels; the external provider
// ingests precomputed embeddings (any backbone) from a JSON file keyed by
// box digest. Either way every vector is L2-normalized, so cosine
// similarity is a plain dot product.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fddet/augment.hpp"
#include "fddet/core.hpp"
#include "fddet/raster.hpp"

namespace fddet {

struct RegionFeature {
    std::string key;          // box digest
    std::vector<double> vec;  // unit L2 norm
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ValidationError("cosine: vector lengths differ (" + std::to_string(a.size()) +
                              " vs " + std::to_string(b.size()) + ")");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
    }
    return dot;
}

namespace detail {

inline void l2_normalize(std::vector<double>& v, const std::string& who) {
    double norm_sq = 0.0;
    for (const double x : v) norm_sq += x * x;
    const double norm = std::sqrt(norm_sq);
    if (!(norm > 0.0)) {
        throw ValidationError(who + ": feature vector has zero norm");
    }
    for (double& x : v) x /= norm;
}

}  // namespace detail

class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;

    /// L2-normalized feature vector for the label's region. May be called
    /// concurrently from calibration workers; implementations must be safe
    /// for concurrent reads.
    virtual std::vector<double> feature_for(const PseudoLabel& label) = 0;
};

/// Builtin provider: 512-bin joint RGB histogram (8 levels per channel)
/// over the box's pixel rect, L1-normalized then L2-normalized.
class HistogramFeatureProvider : public FeatureProvider {
public:
    explicit HistogramFeatureProvider(const RasterStore& rasters) : rasters_(&rasters) {}

    std::vector<double> feature_for(const PseudoLabel& label) override {
        const auto it = rasters_->find(label.image_id);
        if (it == rasters_->end()) {
            throw IoError("no raster for image id " + std::to_string(label.image_id));
        }
        const Raster& raster = it->second;
        const detail::PixelRect rect = detail::pixel_rect(label.box);
        detail::require_inside(rect, raster, "region feature");
        if (rect.w < 1 || rect.h < 1) {
            throw GeometryError("region feature: zero-area region");
        }

        std::vector<double> hist(512, 0.0);
        for (int y = rect.y; y < rect.y + rect.h; ++y) {
            for (int x = rect.x; x < rect.x + rect.w; ++x) {
                const std::uint8_t* px = raster.at(x, y);
                const int bin = (px[0] >> 5) * 64 + (px[1] >> 5) * 8 + (px[2] >> 5);
                hist[bin] += 1.0;
            }
        }
        const double total = static_cast<double>(rect.w) * rect.h;
        for (double& v : hist) v /= total;  // L1
        detail::l2_normalize(hist, box_digest(label.image_id, label.box));
        return hist;
    }

private:
    const RasterStore* rasters_;
};

/// External provider: JSON object mapping box digests to equal-length float
/// arrays. Vectors are L2-normalized on load.
class ExternalFeatureProvider : public FeatureProvider {
public:
    static ExternalFeatureProvider load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw IoError("cannot open feature file '" + path.string() + "'");
        }
        nlohmann::json root;
        try {
            root = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("'" + path.string() + "': malformed JSON: " + e.what());
        }
        if (!root.is_object()) {
            throw FormatError("'" + path.string() + "': expected a JSON object of key -> array");
        }
        ExternalFeatureProvider provider;
        provider.source_ = path.string();
        std::size_t dim = 0;
        for (auto it = root.begin(); it != root.end(); ++it) {
            if (!it.value().is_array() || it.value().empty()) {
                throw FormatError("'" + path.string() + "': key '" + it.key() +
                                  "' must map to a non-empty array of numbers");
            }
            std::vector<double> vec;
            vec.reserve(it.value().size());
            for (const auto& v : it.value()) {
                if (!v.is_number()) {
                    throw FormatError("'" + path.string() + "': key '" + it.key() +
                                      "' contains a non-numeric entry");
                }
                vec.push_back(v.get<double>());
            }
            if (dim == 0) {
                dim = vec.size();
            } else if (vec.size() != dim) {
                throw FormatError("'" + path.string() + "': key '" + it.key() + "' has length " +
                                  std::to_string(vec.size()) + " but previous entries have " +
                                  std::to_string(dim));
            }
            try {
                detail::l2_normalize(vec, it.key());
            } catch (const ValidationError& e) {
                throw FormatError("'" + path.string() + "': " + e.what());
            }
            provider.features_.emplace(it.key(), std::move(vec));
        }
        return provider;
    }

    std::vector<double> feature_for(const PseudoLabel& label) override {
        const std::string key = box_digest(label.image_id, label.box);
        const auto it = features_.find(key);
        if (it == features_.end()) {
            throw FormatError("feature file '" + source_ + "' has no entry for key '" + key +
                              "'");
        }
        return it->second;
    }

private:
    std::map<std::string, std::vector<double>> features_;
    std::string source_;
};

/// One feature per label, keyed by box digest.
inline std::map<std::string, RegionFeature> compute_region_features(
    FeatureProvider& provider, const std::vector<PseudoLabel>& labels) {
    std::map<std::string, RegionFeature> out;
    for (const PseudoLabel& label : labels) {
        const std::string key = box_digest(label.image_id, label.box);
        if (!out.count(key)) {
            out.emplace(key, RegionFeature{key, provider.feature_for(label)});
        }
    }
    return out;
}

}  // namespace fddet
