#pragma once

// Desk-scale mean-teacher simulation. The detector is a nearest-centroid
// classifier over pre-extracted region features with running
// mean/variance buffers standing in for normalization statistics. The
// teacher normalizes features with its own buffers at prediction time;
// when those buffers go stale under a labeled/unlabeled domain shift, its
// filtered pseudo-label yield drops to zero and training collapses.
// Enabling buffer EMA lets the teacher's normalization track the
// student's, which is the fix being demonstrated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fddet/cgpc.hpp"
#include "fddet/core.hpp"
#include "fddet/dataset.hpp"
#include "fddet/rng.hpp"

namespace fddet {

// ---------------------------------------------------------------------------
// Model

struct ToyModel {
    std::vector<Category> categories;                // registry order
    std::vector<std::vector<double>> centroids;      // [category][dim]
    std::vector<double> buffer_mean;                 // running feature mean
    std::vector<double> buffer_var;                  // running feature variance, > 0
    double temperature = 1.0;

    std::size_t dim() const { return buffer_mean.size(); }

    void check_shapes() const {
        if (centroids.size() != categories.size()) {
            throw ValidationError("ToyModel: one centroid per category required");
        }
        if (buffer_var.size() != buffer_mean.size()) {
            throw ValidationError("ToyModel: buffer mean/var lengths differ");
        }
        for (const auto& c : centroids) {
            if (c.size() != buffer_mean.size()) {
                throw ValidationError("ToyModel: centroid length does not match buffers");
            }
        }
        for (const double v : buffer_var) {
            if (!(v > 0.0)) {
                throw ValidationError("ToyModel: running variance must be strictly positive");
            }
        }
        if (!(temperature > 0.0)) {
            throw ValidationError("ToyModel: temperature must be positive");
        }
    }
};

struct EmaConfig {
    double momentum = 0.999;
    bool update_buffers = true;

    void validate() const {
        if (!(momentum >= 0.0 && momentum <= 1.0)) {
            throw ValidationError("EmaConfig: momentum must be in [0, 1]");
        }
    }
};

/// Teacher update t' = m*t + (1-m)*s per element, written as s + m*(t-s) so
/// the teacher==student fixed point and the m=0 endpoint are exact; m=1 is
/// special-cased for exactness too. Buffers follow the same rule iff
/// cfg.update_buffers, else they are carried over from the teacher.
/// Temperature is copied from the student.
inline ToyModel ema_update(const ToyModel& teacher, const ToyModel& student,
                           const EmaConfig& cfg) {
    cfg.validate();
    teacher.check_shapes();
    student.check_shapes();
    if (teacher.categories != student.categories || teacher.dim() != student.dim()) {
        throw ValidationError("ema_update: teacher/student shapes do not match");
    }

    const double m = cfg.momentum;
    auto blend = [m](const std::vector<double>& t, const std::vector<double>& s) {
        if (m == 1.0) return t;
        std::vector<double> out(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
            out[i] = s[i] + m * (t[i] - s[i]);
        }
        return out;
    };

    ToyModel out;
    out.categories = teacher.categories;
    out.centroids.reserve(teacher.centroids.size());
    for (std::size_t c = 0; c < teacher.centroids.size(); ++c) {
        out.centroids.push_back(blend(teacher.centroids[c], student.centroids[c]));
    }
    if (cfg.update_buffers) {
        out.buffer_mean = blend(teacher.buffer_mean, student.buffer_mean);
        out.buffer_var = blend(teacher.buffer_var, student.buffer_var);
    } else {
        out.buffer_mean = teacher.buffer_mean;
        out.buffer_var = teacher.buffer_var;
    }
    out.temperature = student.temperature;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SyntheticRegion {
    BBox box;
    std::vector<double> feature;
    Category truth;  // hidden from the student's loss on unlabeled scenes

    bool operator==(const SyntheticRegion&) const = default;
};

struct SyntheticScene {
    std::int64_t image_id = 0;
    std::vector<SyntheticRegion> regions;

    bool operator==(const SyntheticScene&) const = default;
};

struct StreamSpec {
    int feature_dim = 8;
    int num_foods = 3;            // foods taken from the front of the food list
    int conditions_per_food = 2;  // "normal" plus defect tokens
    int labeled_scenes = 30;
    int unlabeled_scenes = 60;
    int heldout_scenes = 30;
    int regions_per_scene = 4;
    double cluster_sep = 3.0;    // distance of category means from the origin
    double cluster_sigma = 0.5;  // per-dimension feature noise
    double shift_offset = 4.0;   // L2 magnitude of the domain-shift offset
    double shift_scale = 1.0;    // multiplicative domain shift
    std::uint64_t seed = 1;

    int num_categories() const { return num_foods * conditions_per_food; }

    void validate() const {
        if (feature_dim < 1) throw ValidationError("StreamSpec: feature_dim must be >= 1");
        if (num_foods < 1 || num_foods > kNumFoodTypes) {
            throw ValidationError("StreamSpec: num_foods must be in [1, 13]");
        }
        if (conditions_per_food < 1 || conditions_per_food > 8) {
            throw ValidationError("StreamSpec: conditions_per_food must be in [1, 8]");
        }
        if (labeled_scenes < 0 || unlabeled_scenes < 0 || heldout_scenes < 0) {
            throw ValidationError("StreamSpec: scene counts must be non-negative");
        }
        if (regions_per_scene < 1 || regions_per_scene > 16) {
            throw ValidationError("StreamSpec: regions_per_scene must be in [1, 16]");
        }
        if (!(cluster_sigma > 0.0)) throw ValidationError("StreamSpec: cluster_sigma must be > 0");
        if (cluster_sep < 0.0) throw ValidationError("StreamSpec: cluster_sep must be >= 0");
        if (!(shift_scale > 0.0)) throw ValidationError("StreamSpec: shift_scale must be > 0");
    }
};

struct SyntheticStream {
    CategoryRegistry registry;
    std::vector<SyntheticScene> labeled;
    std::vector<SyntheticScene> unlabeled;  // shifted
    std::vector<SyntheticScene> heldout;    // shifted
};

namespace detail {

inline constexpr std::array<std::string_view, 8> kSimConditions = {
    "normal", "rot", "bruise", "mold", "cut", "scar", "crack", "spot"};

inline std::vector<std::vector<double>> category_means(const StreamSpec& spec) {
    const int c_total = spec.num_categories();
    std::vector<std::vector<double>> means(c_total, std::vector<double>(spec.feature_dim, 0.0));
    RngStream rng = RngStream::derive(spec.seed, "category-means");
    // Random unit directions keep the per-dimension feature variance
    // roughly isotropic, which the buffer model assumes.
    for (int c = 0; c < c_total; ++c) {
        double norm_sq = 0.0;
        for (auto& v : means[c]) {
            v = rng.gauss();
            norm_sq += v * v;
        }
        const double norm = std::sqrt(norm_sq);
        for (auto& v : means[c]) v = v / norm * spec.cluster_sep;
    }
    return means;
}

}  // namespace detail

/// Generates the labeled/unlabeled/held-out scene streams. Scenes are
/// food-homogeneous (matching the context prior) and category-balanced via
/// round-robin assignment; the unlabeled and held-out streams get the
/// domain shift applied. Deterministic under the spec seed.
inline SyntheticStream gen_synthetic_stream(const StreamSpec& spec) {
    spec.validate();

    SyntheticStream stream;
    std::vector<CategoryEntry> entries;
    std::vector<Category> categories;
    std::int64_t next_id = 1;
    for (int f = 0; f < spec.num_foods; ++f) {
        for (int c = 0; c < spec.conditions_per_food; ++c) {
            const Category cat{static_cast<FoodType>(f),
                               std::string(detail::kSimConditions[c])};
            entries.push_back({next_id++, cat.name(), std::string(food_name(cat.food))});
            categories.push_back(cat);
        }
    }
    stream.registry = CategoryRegistry::from_entries(std::move(entries));

    const auto means = detail::category_means(spec);

    // Domain-shift offset: a seed-derived random unit direction scaled to
    // the requested magnitude.
    std::vector<double> offset(spec.feature_dim, 0.0);
    if (spec.shift_offset != 0.0) {
        RngStream dir_rng = RngStream::derive(spec.seed, "shift-direction");
        double norm_sq = 0.0;
        for (auto& v : offset) {
            v = dir_rng.gauss();
            norm_sq += v * v;
        }
        const double norm = std::sqrt(norm_sq);
        for (auto& v : offset) v = v / norm * spec.shift_offset;
    }

    auto make_scenes = [&](std::string_view tag, std::int64_t id_base, int count, bool shifted) {
        std::vector<SyntheticScene> scenes;
        scenes.reserve(count);
        for (int i = 0; i < count; ++i) {
            SyntheticScene scene;
            scene.image_id = id_base + i;
            RngStream rng = RngStream::derive(spec.seed, tag, scene.image_id);
            const int food = i % spec.num_foods;
            for (int j = 0; j < spec.regions_per_scene; ++j) {
                const int cond = (i * spec.regions_per_scene + j) % spec.conditions_per_food;
                const int cat_index = food * spec.conditions_per_food + cond;
                SyntheticRegion region;
                region.truth = categories[cat_index];
                region.box = BBox{8.0 + (j % 4) * 60.0, 8.0 + (j / 4) * 60.0, 40.0, 40.0};
                region.feature.resize(spec.feature_dim);
                for (int d = 0; d < spec.feature_dim; ++d) {
                    double v = means[cat_index][d] + spec.cluster_sigma * rng.gauss();
                    if (shifted) {
                        v = spec.shift_scale * v + offset[d];
                    }
                    region.feature[d] = v;
                }
                scene.regions.push_back(std::move(region));
            }
            scenes.push_back(std::move(scene));
        }
        return scenes;
    };

    stream.labeled = make_scenes("labeled", 1000000, spec.labeled_scenes, false);
    stream.unlabeled = make_scenes("unlabeled", 2000000, spec.unlabeled_scenes, true);
    stream.heldout = make_scenes("heldout", 3000000, spec.heldout_scenes, true);
    return stream;
}

// ---------------------------------------------------------------------------
// Prediction and training

/// One pseudo-label per region: the feature is normalized by the model's
/// own buffers, scored against every centroid by negative Euclidean
/// distance, and converted to confidences by a temperature-scaled softmax.
inline std::vector<PseudoLabel> toy_predict(const ToyModel& model, const SyntheticScene& scene) {
    model.check_shapes();
    std::vector<PseudoLabel> out;
    out.reserve(scene.regions.size());
    std::vector<double> scores(model.categories.size());
    for (const SyntheticRegion& region : scene.regions) {
        if (region.feature.size() != model.dim()) {
            throw ValidationError("toy_predict: region feature length does not match model");
        }
        for (std::size_t c = 0; c < model.categories.size(); ++c) {
            double dist_sq = 0.0;
            for (std::size_t d = 0; d < model.dim(); ++d) {
                const double z =
                    (region.feature[d] - model.buffer_mean[d]) / std::sqrt(model.buffer_var[d]);
                const double diff = z - model.centroids[c][d];
                dist_sq += diff * diff;
            }
            scores[c] = -std::sqrt(dist_sq);
        }
        const std::size_t best =
            static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                     scores.begin());
        double denom = 0.0;
        for (const double s : scores) {
            denom += std::exp((s - scores[best]) / model.temperature);
        }
        out.push_back(PseudoLabel{scene.image_id, region.box, model.categories[best],
                                  1.0 / denom});
    }
    return out;
}

/// A scene entering a student batch: `targets` aligns with the scene's
/// regions; nullopt regions carry no assignment but still contribute to the
/// batch's buffer statistics (they pass through the forward pass).
struct TrainScene {
    const SyntheticScene* scene = nullptr;
    std::vector<std::optional<Category>> targets;
};

inline constexpr double kStudentBufferMomentum = 0.9;

/// Supervised step: centroids move toward the per-category means of the
/// assigned regions (normalized with the pre-step buffers) by `lr`, then
/// the buffers refresh from the batch's raw feature statistics. An empty
/// batch is a no-op.
inline ToyModel student_step(const ToyModel& student, const std::vector<TrainScene>& batch,
                             double lr) {
    student.check_shapes();
    if (!(lr >= 0.0)) {
        throw ValidationError("student_step: lr must be non-negative");
    }

    std::size_t total_regions = 0;
    for (const TrainScene& ts : batch) {
        if (!ts.scene) throw ValidationError("student_step: null scene in batch");
        if (ts.targets.size() != ts.scene->regions.size()) {
            throw ValidationError("student_step: targets length does not match scene regions");
        }
        total_regions += ts.scene->regions.size();
    }
    if (total_regions == 0) {
        return student;
    }

    std::map<std::string, std::size_t> cat_index;
    for (std::size_t c = 0; c < student.categories.size(); ++c) {
        cat_index[student.categories[c].name()] = c;
    }

    const std::size_t dim = student.dim();
    std::vector<double> batch_mean(dim, 0.0), batch_var(dim, 0.0);
    std::vector<std::vector<double>> target_sum(student.categories.size(),
                                                std::vector<double>(dim, 0.0));
    std::vector<std::size_t> target_count(student.categories.size(), 0);

    for (const TrainScene& ts : batch) {
        for (std::size_t r = 0; r < ts.scene->regions.size(); ++r) {
            const SyntheticRegion& region = ts.scene->regions[r];
            if (region.feature.size() != dim) {
                throw ValidationError("student_step: region feature length does not match model");
            }
            for (std::size_t d = 0; d < dim; ++d) {
                batch_mean[d] += region.feature[d];
            }
            if (ts.targets[r]) {
                const auto it = cat_index.find(ts.targets[r]->name());
                if (it == cat_index.end()) {
                    throw ValidationError("student_step: assignment category '" +
                                          ts.targets[r]->name() + "' is not in the model");
                }
                ++target_count[it->second];
                for (std::size_t d = 0; d < dim; ++d) {
                    // Normalized with the pre-step buffers.
                    const double z = (region.feature[d] - student.buffer_mean[d]) /
                                     std::sqrt(student.buffer_var[d]);
                    target_sum[it->second][d] += z;
                }
            }
        }
    }
    for (std::size_t d = 0; d < dim; ++d) {
        batch_mean[d] /= static_cast<double>(total_regions);
    }
    for (const TrainScene& ts : batch) {
        for (const SyntheticRegion& region : ts.scene->regions) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = region.feature[d] - batch_mean[d];
                batch_var[d] += diff * diff;
            }
        }
    }
    for (std::size_t d = 0; d < dim; ++d) {
        batch_var[d] = std::max(batch_var[d] / static_cast<double>(total_regions), 1e-8);
    }

    ToyModel out = student;
    for (std::size_t c = 0; c < out.centroids.size(); ++c) {
        if (target_count[c] == 0) continue;
        for (std::size_t d = 0; d < dim; ++d) {
            const double target = target_sum[c][d] / static_cast<double>(target_count[c]);
            out.centroids[c][d] += lr * (target - out.centroids[c][d]);
        }
    }
    for (std::size_t d = 0; d < dim; ++d) {
        out.buffer_mean[d] = kStudentBufferMomentum * student.buffer_mean[d] +
                             (1.0 - kStudentBufferMomentum) * batch_mean[d];
        out.buffer_var[d] = kStudentBufferMomentum * student.buffer_var[d] +
                            (1.0 - kStudentBufferMomentum) * batch_var[d];
    }
    return out;
}

/// Fits buffers to the labeled stream's feature statistics and centroids to
/// the per-category means of the normalized labeled features. Every registry
/// category must appear in the labeled stream.
inline ToyModel init_toy_model(const SyntheticStream& stream, double temperature) {
    if (stream.labeled.empty() || stream.labeled.front().regions.empty()) {
        throw ValidationError("init_toy_model: labeled stream is empty");
    }
    const std::size_t dim = stream.labeled.front().regions.front().feature.size();

    ToyModel model;
    model.temperature = temperature;
    for (const auto& e : stream.registry.entries()) {
        model.categories.push_back(stream.registry.category_of(e.id));
    }

    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    std::size_t n = 0;
    for (const auto& scene : stream.labeled) {
        for (const auto& region : scene.regions) {
            for (std::size_t d = 0; d < dim; ++d) mean[d] += region.feature[d];
            ++n;
        }
    }
    for (std::size_t d = 0; d < dim; ++d) mean[d] /= static_cast<double>(n);
    for (const auto& scene : stream.labeled) {
        for (const auto& region : scene.regions) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = region.feature[d] - mean[d];
                var[d] += diff * diff;
            }
        }
    }
    for (std::size_t d = 0; d < dim; ++d) {
        var[d] = std::max(var[d] / static_cast<double>(n), 1e-8);
    }
    model.buffer_mean = mean;
    model.buffer_var = var;

    std::map<std::string, std::size_t> cat_index;
    for (std::size_t c = 0; c < model.categories.size(); ++c) {
        cat_index[model.categories[c].name()] = c;
    }
    model.centroids.assign(model.categories.size(), std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(model.categories.size(), 0);
    for (const auto& scene : stream.labeled) {
        for (const auto& region : scene.regions) {
            const std::size_t c = cat_index.at(region.truth.name());
            ++counts[c];
            for (std::size_t d = 0; d < dim; ++d) {
                model.centroids[c][d] += (region.feature[d] - mean[d]) / std::sqrt(var[d]);
            }
        }
    }
    for (std::size_t c = 0; c < model.centroids.size(); ++c) {
        if (counts[c] == 0) {
            throw ValidationError("init_toy_model: category '" + model.categories[c].name() +
                                  "' has no labeled regions");
        }
        for (double& v : model.centroids[c]) v /= static_cast<double>(counts[c]);
    }
    model.check_shapes();
    return model;
}

// ---------------------------------------------------------------------------
// Simulation loop

struct SimConfig {
    StreamSpec stream;
    EmaConfig ema{0.9, true};
    double tau = 0.35;  // pseudo-label confidence threshold
    bool use_cgpc = false;
    CgpcConfig cgpc;
    int iterations = 40;
    int collapse_k = 5;  // consecutive zero-yield iterations that flag collapse
    double lr = 0.5;
    double temperature = 1.0;
    int labeled_batch = 10;
    int unlabeled_batch = 20;

    void validate() const {
        stream.validate();
        ema.validate();
        cgpc.validate();
        if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("SimConfig: tau must be in [0, 1]");
        if (iterations < 0) throw ValidationError("SimConfig: iterations must be >= 0");
        if (collapse_k < 1) throw ValidationError("SimConfig: collapse_k must be >= 1");
        if (!(lr >= 0.0)) throw ValidationError("SimConfig: lr must be >= 0");
        if (!(temperature > 0.0)) throw ValidationError("SimConfig: temperature must be > 0");
        if (labeled_batch < 1 || unlabeled_batch < 1) {
            throw ValidationError("SimConfig: batch sizes must be >= 1");
        }
    }
};

struct IterationRecord {
    int iteration = 0;
    std::size_t yield = 0;                  // pseudo-labels surviving filtering
    std::optional<double> precision;        // vs hidden truth; absent when yield is 0
    double heldout_accuracy = 0.0;          // student accuracy on the held-out stream
    bool collapse_flag = false;             // trailing collapse_k iterations all zero-yield
};

struct SimulationReport {
    std::vector<IterationRecord> iterations;
    bool collapsed = false;
    std::optional<int> first_collapse_iteration;
    double final_accuracy = 0.0;
};

namespace detail {

inline double heldout_accuracy(const ToyModel& model,
                               const std::vector<SyntheticScene>& heldout) {
    std::size_t correct = 0, total = 0;
    for (const auto& scene : heldout) {
        const auto preds = toy_predict(model, scene);
        for (std::size_t r = 0; r < scene.regions.size(); ++r) {
            ++total;
            if (preds[r].category == scene.regions[r].truth) ++correct;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

/// Feature provider over synthetic scenes: each region's feature,
/// L2-normalized, keyed by box digest.
class SceneFeatureProvider : public FeatureProvider {
public:
    explicit SceneFeatureProvider(const std::vector<SyntheticScene>& scenes) {
        for (const auto& scene : scenes) {
            for (const auto& region : scene.regions) {
                std::vector<double> v = region.feature;
                l2_normalize(v, "scene feature");
                features_.emplace(box_digest(scene.image_id, region.box), std::move(v));
            }
        }
    }

    std::vector<double> feature_for(const PseudoLabel& label) override {
        const auto it = features_.find(box_digest(label.image_id, label.box));
        if (it == features_.end()) {
            throw ValidationError("SceneFeatureProvider: no feature for '" +
                                  box_digest(label.image_id, label.box) + "'");
        }
        return it->second;
    }

private:
    std::map<std::string, std::vector<double>> features_;
};

}  // namespace detail

/// Mean-teacher loop: the teacher predicts on unlabeled scenes, predictions
/// are confidence-filtered (and optionally CGPC-calibrated), the student
/// takes a supervised step on labeled plus pseudo-labeled scenes, and the
/// teacher EMA-tracks the student. Unlabeled scenes enter the student batch
/// even when they carry no surviving pseudo-labels: the forward pass still
/// feeds the buffer statistics, which is what lets (or fails to let) the
/// teacher adapt.
inline SimulationReport run_ssl_simulation(const SimConfig& cfg) {
    cfg.validate();
    if (cfg.stream.labeled_scenes < 1 || cfg.stream.unlabeled_scenes < 1 ||
        cfg.stream.heldout_scenes < 1) {
        throw ValidationError("run_ssl_simulation: all three streams must be non-empty");
    }

    const SyntheticStream stream = gen_synthetic_stream(cfg.stream);
    ToyModel student = init_toy_model(stream, cfg.temperature);
    ToyModel teacher = student;

    detail::SceneFeatureProvider provider(stream.unlabeled);
    CgpcConfig cgpc_cfg = cfg.cgpc;
    cgpc_cfg.confidence_threshold = cfg.tau;  // one threshold drives filtering

    SimulationReport report;
    int consecutive_zero = 0;
    const std::size_t n_labeled = stream.labeled.size();
    const std::size_t n_unlabeled = stream.unlabeled.size();
    const std::size_t labeled_batch = std::min<std::size_t>(cfg.labeled_batch, n_labeled);
    const std::size_t unlabeled_batch = std::min<std::size_t>(cfg.unlabeled_batch, n_unlabeled);

    for (int it = 0; it < cfg.iterations; ++it) {
        // Round-robin batch of unlabeled scenes.
        std::vector<const SyntheticScene*> unlabeled;
        unlabeled.reserve(unlabeled_batch);
        for (std::size_t j = 0; j < unlabeled_batch; ++j) {
            unlabeled.push_back(
                &stream.unlabeled[(static_cast<std::size_t>(it) * unlabeled_batch + j) %
                                  n_unlabeled]);
        }

        // Teacher predictions, filtered (and optionally calibrated).
        std::size_t yield = 0, correct = 0;
        std::vector<TrainScene> batch;
        for (const SyntheticScene* scene : unlabeled) {
            const std::vector<PseudoLabel> raw = toy_predict(teacher, *scene);
            std::vector<PseudoLabel> kept;
            if (cfg.use_cgpc) {
                CgpcResult res = run_cgpc(raw, provider, stream.registry, cgpc_cfg);
                if (!res.per_image.empty()) {
                    kept = std::move(res.per_image.begin()->second);
                }
            } else {
                kept = filter_by_confidence(raw, cfg.tau);
            }

            TrainScene ts;
            ts.scene = scene;
            ts.targets.assign(scene->regions.size(), std::nullopt);
            std::map<std::string, std::size_t> region_by_digest;
            for (std::size_t r = 0; r < scene->regions.size(); ++r) {
                region_by_digest[box_digest(scene->image_id, scene->regions[r].box)] = r;
            }
            for (const PseudoLabel& p : kept) {
                const std::size_t r = region_by_digest.at(box_digest(p.image_id, p.box));
                ts.targets[r] = p.category;
                ++yield;
                if (p.category == scene->regions[r].truth) ++correct;
            }
            batch.push_back(std::move(ts));
        }

        // Labeled scenes with their true assignments.
        for (std::size_t j = 0; j < labeled_batch; ++j) {
            const SyntheticScene& scene =
                stream.labeled[(static_cast<std::size_t>(it) * labeled_batch + j) % n_labeled];
            TrainScene ts;
            ts.scene = &scene;
            for (const auto& region : scene.regions) {
                ts.targets.emplace_back(region.truth);
            }
            batch.push_back(std::move(ts));
        }

        student = student_step(student, batch, cfg.lr);
        teacher = ema_update(teacher, student, cfg.ema);

        IterationRecord rec;
        rec.iteration = it;
        rec.yield = yield;
        if (yield > 0) {
            rec.precision = static_cast<double>(correct) / static_cast<double>(yield);
        }
        rec.heldout_accuracy = detail::heldout_accuracy(student, stream.heldout);

        consecutive_zero = yield == 0 ? consecutive_zero + 1 : 0;
        rec.collapse_flag = consecutive_zero >= cfg.collapse_k;
        if (rec.collapse_flag && !report.collapsed) {
            report.collapsed = true;
            report.first_collapse_iteration = it;
        }
        report.iterations.push_back(std::move(rec));
    }

    report.final_accuracy = detail::heldout_accuracy(student, stream.heldout);
    return report;
}

/// Supervised reference run: the same student update on labeled batches
/// only, no teacher, no pseudo-labels.
inline SimulationReport run_labeled_baseline(const SimConfig& cfg) {
    cfg.validate();
    if (cfg.stream.labeled_scenes < 1 || cfg.stream.heldout_scenes < 1) {
        throw ValidationError("run_labeled_baseline: labeled and held-out streams required");
    }

    const SyntheticStream stream = gen_synthetic_stream(cfg.stream);
    ToyModel student = init_toy_model(stream, cfg.temperature);

    SimulationReport report;
    const std::size_t n_labeled = stream.labeled.size();
    const std::size_t labeled_batch = std::min<std::size_t>(cfg.labeled_batch, n_labeled);
    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<TrainScene> batch;
        for (std::size_t j = 0; j < labeled_batch; ++j) {
            const SyntheticScene& scene =
                stream.labeled[(static_cast<std::size_t>(it) * labeled_batch + j) % n_labeled];
            TrainScene ts;
            ts.scene = &scene;
            for (const auto& region : scene.regions) {
                ts.targets.emplace_back(region.truth);
            }
            batch.push_back(std::move(ts));
        }
        student = student_step(student, batch, cfg.lr);

        IterationRecord rec;
        rec.iteration = it;
        rec.heldout_accuracy = detail::heldout_accuracy(student, stream.heldout);
        report.iterations.push_back(std::move(rec));
    }
    report.final_accuracy = detail::heldout_accuracy(student, stream.heldout);
    return report;
}

// ---------------------------------------------------------------------------
// Serialization

inline json iteration_record_to_json(const IterationRecord& r) {
    json j{{"iteration", r.iteration},
           {"yield", r.yield},
           {"precision", r.precision ? json(*r.precision) : json(nullptr)},
           {"heldout_accuracy", r.heldout_accuracy},
           {"collapse", r.collapse_flag}};
    return j;
}

inline json report_summary_to_json(const SimulationReport& report) {
    double mean_yield = 0.0;
    for (const auto& r : report.iterations) mean_yield += static_cast<double>(r.yield);
    if (!report.iterations.empty()) mean_yield /= static_cast<double>(report.iterations.size());
    return json{{"iterations", report.iterations.size()},
                {"collapsed", report.collapsed},
                {"first_collapse_iteration", report.first_collapse_iteration
                                                 ? json(*report.first_collapse_iteration)
                                                 : json(nullptr)},
                {"mean_yield", mean_yield},
                {"final_accuracy", report.final_accuracy}};
}

/// Scenario JSON: every field optional, unknown keys rejected. Flat keys
/// mirror the struct fields.
inline SimConfig sim_config_from_json(const json& j) {
    SimConfig cfg;
    if (!j.is_object()) {
        throw FormatError("scenario: expected a JSON object");
    }
    const std::map<std::string, std::function<void(const json&)>> setters = {
        {"feature_dim", [&](const json& v) { cfg.stream.feature_dim = v.get<int>(); }},
        {"num_foods", [&](const json& v) { cfg.stream.num_foods = v.get<int>(); }},
        {"conditions_per_food",
         [&](const json& v) { cfg.stream.conditions_per_food = v.get<int>(); }},
        {"labeled_scenes", [&](const json& v) { cfg.stream.labeled_scenes = v.get<int>(); }},
        {"unlabeled_scenes", [&](const json& v) { cfg.stream.unlabeled_scenes = v.get<int>(); }},
        {"heldout_scenes", [&](const json& v) { cfg.stream.heldout_scenes = v.get<int>(); }},
        {"regions_per_scene",
         [&](const json& v) { cfg.stream.regions_per_scene = v.get<int>(); }},
        {"cluster_sep", [&](const json& v) { cfg.stream.cluster_sep = v.get<double>(); }},
        {"cluster_sigma", [&](const json& v) { cfg.stream.cluster_sigma = v.get<double>(); }},
        {"shift_offset", [&](const json& v) { cfg.stream.shift_offset = v.get<double>(); }},
        {"shift_scale", [&](const json& v) { cfg.stream.shift_scale = v.get<double>(); }},
        {"seed", [&](const json& v) { cfg.stream.seed = v.get<std::uint64_t>(); }},
        {"ema_momentum", [&](const json& v) { cfg.ema.momentum = v.get<double>(); }},
        {"update_buffers", [&](const json& v) { cfg.ema.update_buffers = v.get<bool>(); }},
        {"tau", [&](const json& v) { cfg.tau = v.get<double>(); }},
        {"use_cgpc", [&](const json& v) { cfg.use_cgpc = v.get<bool>(); }},
        {"theta_sim", [&](const json& v) { cfg.cgpc.similarity_threshold = v.get<double>(); }},
        {"theta_iou", [&](const json& v) { cfg.cgpc.iou_threshold = v.get<double>(); }},
        {"iterations", [&](const json& v) { cfg.iterations = v.get<int>(); }},
        {"collapse_k", [&](const json& v) { cfg.collapse_k = v.get<int>(); }},
        {"lr", [&](const json& v) { cfg.lr = v.get<double>(); }},
        {"temperature", [&](const json& v) { cfg.temperature = v.get<double>(); }},
        {"labeled_batch", [&](const json& v) { cfg.labeled_batch = v.get<int>(); }},
        {"unlabeled_batch", [&](const json& v) { cfg.unlabeled_batch = v.get<int>(); }},
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto setter = setters.find(it.key());
        if (setter == setters.end()) {
            throw FormatError("scenario: unknown key '" + it.key() + "'");
        }
        try {
            setter->second(it.value());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("scenario: bad value for '" + it.key() + "': " + e.what());
        }
    }
    return cfg;
}

inline json sim_config_to_json(const SimConfig& cfg) {
    return json{{"feature_dim", cfg.stream.feature_dim},
                {"num_foods", cfg.stream.num_foods},
                {"conditions_per_food", cfg.stream.conditions_per_food},
                {"labeled_scenes", cfg.stream.labeled_scenes},
                {"unlabeled_scenes", cfg.stream.unlabeled_scenes},
                {"heldout_scenes", cfg.stream.heldout_scenes},
                {"regions_per_scene", cfg.stream.regions_per_scene},
                {"cluster_sep", cfg.stream.cluster_sep},
                {"cluster_sigma", cfg.stream.cluster_sigma},
                {"shift_offset", cfg.stream.shift_offset},
                {"shift_scale", cfg.stream.shift_scale},
                {"seed", cfg.stream.seed},
                {"ema_momentum", cfg.ema.momentum},
                {"update_buffers", cfg.ema.update_buffers},
                {"tau", cfg.tau},
                {"use_cgpc", cfg.use_cgpc},
                {"theta_sim", cfg.cgpc.similarity_threshold},
                {"theta_iou", cfg.cgpc.iou_threshold},
                {"iterations", cfg.iterations},
                {"collapse_k", cfg.collapse_k},
                {"lr", cfg.lr},
                {"temperature", cfg.temperature},
                {"labeled_batch", cfg.labeled_batch},
                {"unlabeled_batch", cfg.unlabeled_batch}};
}

}  // namespace fddet
