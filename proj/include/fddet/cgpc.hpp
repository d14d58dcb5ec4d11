#pragma once

// Consistency-Guided Pseudo-Label Calibration. Per image the pipeline is:
// confidence filter -> context-semantic food unification -> spatial dedup ->
// visual-semantic peer voting -> spatial dedup. Stages are pure functions
// over label lists; boxes and confidences are never modified, only
// categories and set membership change. All tie-breaks are order-free so
// the pipeline result does not depend on input list order.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fddet/core.hpp"
#include "fddet/features.hpp"
#include "fddet/parallel.hpp"

namespace fddet {

struct CgpcConfig {
    double confidence_threshold = 0.35;  // tau
    double similarity_threshold = 0.85;  // theta_sim, cosine
    double iou_threshold = 0.65;         // theta_iou

    void validate() const {
        if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
            throw ValidationError("CgpcConfig: confidence_threshold must be in [0, 1]");
        }
        if (!(similarity_threshold >= -1.0 && similarity_threshold <= 1.0)) {
            throw ValidationError("CgpcConfig: similarity_threshold must be in [-1, 1]");
        }
        if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
            throw ValidationError("CgpcConfig: iou_threshold must be in [0, 1]");
        }
    }
};

/// Keeps exactly the labels with confidence >= tau (inclusive), preserving
/// input order.
inline std::vector<PseudoLabel> filter_by_confidence(const std::vector<PseudoLabel>& preds,
                                                     double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw ValidationError("filter_by_confidence: tau must be in [0, 1]");
    }
    std::vector<PseudoLabel> kept;
    kept.reserve(preds.size());
    for (const PseudoLabel& p : preds) {
        if (p.confidence >= tau) {
            kept.push_back(p);
        }
    }
    return kept;
}

namespace detail {

inline void require_single_image(const std::vector<PseudoLabel>& labels, const char* who) {
    for (const PseudoLabel& l : labels) {
        if (l.image_id != labels.front().image_id) {
            throw ValidationError(std::string(who) + ": labels span multiple images (" +
                                  std::to_string(labels.front().image_id) + " and " +
                                  std::to_string(l.image_id) + ")");
        }
    }
}

/// Winner under the modal-vote tie-break chain: highest count, then highest
/// summed confidence, then lexicographically smallest name. Order-free by
/// construction (std::map iterates names in sorted order).
inline std::string modal_winner(const std::map<std::string, std::pair<std::size_t, double>>& votes) {
    std::string best;
    std::size_t best_count = 0;
    double best_conf = 0.0;
    for (const auto& [name, cv] : votes) {
        const auto& [count, conf] = cv;
        if (best.empty() || count > best_count ||
            (count == best_count && conf > best_conf)) {
            best = name;
            best_count = count;
            best_conf = conf;
        }
    }
    return best;
}

}  // namespace detail

/// Rewrites the food component of every label to the modal food type over
/// the image. Conditions and boxes are untouched; when the registry lacks
/// `<new food>__<condition>` the label falls back to `<new food>__normal`
/// and a remap note is recorded.
inline std::vector<PseudoLabel> context_semantic_calibrate(
    const std::vector<PseudoLabel>& labels, const CategoryRegistry& registry,
    std::vector<std::string>* warnings = nullptr) {
    if (labels.empty()) {
        return {};
    }
    detail::require_single_image(labels, "context_semantic_calibrate");

    std::map<std::string, std::pair<std::size_t, double>> votes;
    for (const PseudoLabel& l : labels) {
        auto& [count, conf] = votes[std::string(food_name(l.category.food))];
        ++count;
        conf += l.confidence;
    }
    const std::string winner = detail::modal_winner(votes);
    const FoodType food = *food_from_name(winner);

    std::vector<PseudoLabel> out;
    out.reserve(labels.size());
    for (const PseudoLabel& l : labels) {
        PseudoLabel rewritten = l;
        rewritten.category.food = food;
        if (!rewritten.category.is_normal() && !registry.contains(rewritten.category)) {
            const Category fallback{food, std::string(kNormalCondition)};
            if (!registry.contains(fallback)) {
                throw ValidationError("context_semantic_calibrate: registry has neither '" +
                                      rewritten.category.name() + "' nor '" + fallback.name() +
                                      "'");
            }
            if (warnings) {
                warnings->push_back("remapped '" + l.category.name() + "' to '" +
                                    fallback.name() + "': no '" + rewritten.category.name() +
                                    "' in registry");
            }
            rewritten.category = fallback;
        }
        out.push_back(std::move(rewritten));
    }
    return out;
}

/// For each label, peers are all labels whose region features have cosine
/// similarity >= theta_sim (self always included). The label's category is
/// replaced by the modal category over its peers, computed simultaneously
/// from the input labels.
inline std::vector<PseudoLabel> visual_semantic_calibrate(
    const std::vector<PseudoLabel>& labels,
    const std::map<std::string, RegionFeature>& features, double theta_sim) {
    std::vector<const std::vector<double>*> vecs;
    vecs.reserve(labels.size());
    for (const PseudoLabel& l : labels) {
        const auto it = features.find(box_digest(l.image_id, l.box));
        if (it == features.end()) {
            throw ValidationError("visual_semantic_calibrate: missing feature for key '" +
                                  box_digest(l.image_id, l.box) + "'");
        }
        vecs.push_back(&it->second.vec);
    }

    std::vector<PseudoLabel> out;
    out.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::map<std::string, std::pair<std::size_t, double>> votes;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            const bool peer = (i == j) || cosine(*vecs[i], *vecs[j]) >= theta_sim;
            if (peer) {
                auto& [count, conf] = votes[labels[j].category.name()];
                ++count;
                conf += labels[j].confidence;
            }
        }
        const std::string winner = detail::modal_winner(votes);
        PseudoLabel rewritten = labels[i];
        auto [food, cond] = detail::split_category_name(winner);
        rewritten.category = Category{food, std::move(cond)};
        out.push_back(std::move(rewritten));
    }
    return out;
}

/// Greedy category-scoped NMS: sort by confidence descending (ties by box
/// digest, then category name), keep the head, suppress remaining labels of
/// the same category with IoU >= theta_iou against a kept label. Output
/// order is the kept order, which is canonical regardless of input order.
inline std::vector<PseudoLabel> spatial_dedup(const std::vector<PseudoLabel>& labels,
                                              double theta_iou) {
    if (labels.empty()) {
        return {};
    }
    detail::require_single_image(labels, "spatial_dedup");

    std::vector<std::size_t> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (labels[a].confidence != labels[b].confidence) {
            return labels[a].confidence > labels[b].confidence;
        }
        const std::string da = box_digest(labels[a].image_id, labels[a].box);
        const std::string db = box_digest(labels[b].image_id, labels[b].box);
        if (da != db) {
            return da < db;
        }
        return labels[a].category.name() < labels[b].category.name();
    });

    std::vector<PseudoLabel> kept;
    std::vector<bool> suppressed(labels.size(), false);
    for (const std::size_t i : order) {
        if (suppressed[i]) continue;
        kept.push_back(labels[i]);
        for (const std::size_t j : order) {
            if (j == i || suppressed[j]) continue;
            if (labels[j].category == labels[i].category &&
                iou(labels[j].box, labels[i].box) >= theta_iou) {
                suppressed[j] = true;
            }
        }
    }
    return kept;
}

struct StageTrace {
    std::int64_t image_id = 0;
    std::string stage;
    std::vector<PseudoLabel> before;
    std::vector<PseudoLabel> after;
    std::vector<std::string> notes;
};

struct CgpcResult {
    std::map<std::int64_t, std::vector<PseudoLabel>> per_image;
    std::vector<StageTrace> trace;  // populated when record_trace is set
};

/// Full per-image pipeline over a multi-image prediction set. Images are
/// independent; `jobs` bounds worker parallelism.
inline CgpcResult run_cgpc(const std::vector<PseudoLabel>& preds, FeatureProvider& provider,
                           const CategoryRegistry& registry, const CgpcConfig& cfg,
                           bool record_trace = false, int jobs = 1) {
    cfg.validate();

    std::map<std::int64_t, std::vector<PseudoLabel>> by_image;
    for (const PseudoLabel& p : preds) {
        by_image[p.image_id].push_back(p);
    }
    std::vector<std::int64_t> image_ids;
    image_ids.reserve(by_image.size());
    for (const auto& [id, _] : by_image) image_ids.push_back(id);

    CgpcResult result;
    for (const auto id : image_ids) {
        result.per_image[id] = {};  // pre-size so workers never insert
    }
    std::vector<std::vector<StageTrace>> traces(image_ids.size());

    detail::parallel_for(image_ids.size(), jobs, [&](std::size_t idx) {
        const std::int64_t image_id = image_ids[idx];
        const std::vector<PseudoLabel>& input = by_image.at(image_id);
        std::vector<StageTrace>& trace = traces[idx];

        auto run_stage = [&](const char* name, const std::vector<PseudoLabel>& before,
                             std::vector<PseudoLabel> after, std::vector<std::string> notes = {}) {
            if (record_trace) {
                trace.push_back(StageTrace{image_id, name, before, after, std::move(notes)});
            }
            return after;
        };

        std::vector<PseudoLabel> labels =
            run_stage("confidence_filter", input,
                      filter_by_confidence(input, cfg.confidence_threshold));

        // Features are computed once, after filtering; no later stage
        // changes a box, so the digests stay valid.
        const auto features = compute_region_features(provider, labels);

        std::vector<std::string> remap_notes;
        labels = run_stage("context_semantic", labels,
                           context_semantic_calibrate(labels, registry, &remap_notes),
                           std::move(remap_notes));
        labels = run_stage("spatial_dedup_1", labels, spatial_dedup(labels, cfg.iou_threshold));
        labels = run_stage("visual_semantic", labels,
                           visual_semantic_calibrate(labels, features, cfg.similarity_threshold));
        labels = run_stage("spatial_dedup_2", labels, spatial_dedup(labels, cfg.iou_threshold));

        result.per_image.at(image_id) = std::move(labels);
    });

    for (auto& t : traces) {
        result.trace.insert(result.trace.end(), std::make_move_iterator(t.begin()),
                            std::make_move_iterator(t.end()));
    }
    return result;
}

inline json pseudo_label_to_json(const PseudoLabel& p) {
    return json{{"image_id", p.image_id},
                {"bbox", json::array({p.box.x, p.box.y, p.box.w, p.box.h})},
                {"category", p.category.name()},
                {"confidence", p.confidence}};
}

/// One audit-trace record, suitable for JSON-lines output.
inline json trace_to_json(const StageTrace& t) {
    json before = json::array();
    for (const auto& p : t.before) before.push_back(pseudo_label_to_json(p));
    json after = json::array();
    for (const auto& p : t.after) after.push_back(pseudo_label_to_json(p));
    json rec{{"image_id", t.image_id},
             {"stage", t.stage},
             {"before", std::move(before)},
             {"after", std::move(after)}};
    if (!t.notes.empty()) {
        rec["notes"] = t.notes;
    }
    return rec;
}

}  // namespace fddet
