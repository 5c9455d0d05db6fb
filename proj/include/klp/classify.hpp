#pragma once

// KL-grade classifier: one conv branch per radiographic view, channel
// concatenation, a shared conv trunk, global average pooling and a two-layer
// head emitting 5 grade scores. Single-view variants reuse the same trunk
// and head over one branch. Training draws class-balanced batches, holds
// augmentation off for a warmup phase, and early-stops on accuracy over a
// fixed balanced validation subset.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "klp/common.hpp"
#include "klp/optim.hpp"
#include "klp/preprocess.hpp"
#include "klp/raster.hpp"
#include "klp/serialize.hpp"
#include "klp/tensor.hpp"

namespace klp {

inline constexpr int kGradeClasses = 5;

enum class ViewMode { multi, pa_only, lat_only };

inline std::string to_string(ViewMode m) {
    switch (m) {
        case ViewMode::multi: return "multi";
        case ViewMode::pa_only: return "pa_only";
        case ViewMode::lat_only: return "lat_only";
    }
    throw std::logic_error("unreachable");
}

inline ViewMode view_mode_from_string(const std::string& s) {
    if (s == "multi") return ViewMode::multi;
    if (s == "pa_only") return ViewMode::pa_only;
    if (s == "lat_only") return ViewMode::lat_only;
    throw std::invalid_argument("unknown view mode: " + s);
}

struct ClassifierConfig {
    std::size_t input_px = 256;  // square patch side per branch
    std::vector<std::size_t> branch_widths = {16, 32, 64};
    std::vector<std::size_t> trunk_widths = {128, 128};
    std::size_t fc_dim = 128;
    double lr = 1e-5;
    std::size_t batch_size = 16;
    int patience = 20;
    int max_epochs = 500;
    int warmup_epochs = 10;      // augmentation starts after this many epochs
    int batches_per_epoch = 0;   // 0: one pass worth of balanced draws
    std::size_t restarts = 10;
    AugmentSpec augment;
    std::uint64_t seed = 0;
};

inline void validate_classifier_config(const ClassifierConfig& cfg) {
    if (cfg.input_px < 2) throw std::invalid_argument("classifier: input too small");
    if (cfg.branch_widths.empty() || cfg.trunk_widths.empty() || cfg.fc_dim == 0) {
        throw std::invalid_argument("classifier: empty architecture");
    }
    if (cfg.lr <= 0.0) throw std::invalid_argument("classifier: lr must be positive");
    if (cfg.batch_size < 2) {
        throw std::invalid_argument("classifier: batch must be >= 2 for batchnorm");
    }
    if (cfg.patience < 1 || cfg.max_epochs < 1 || cfg.warmup_epochs < 0) {
        throw std::invalid_argument("classifier: bad schedule");
    }
    if (cfg.restarts < 1) throw std::invalid_argument("classifier: needs at least one restart");
}

// A conv/batchnorm/relu/maxpool stack; pooling is skipped once the spatial
// side drops below 2 so tiny gradient-check inputs stay usable.
struct ConvStack {
    std::vector<ConvParams> convs;
    std::vector<BatchNormState> norms;
};

namespace detail {

inline ConvStack make_stack(std::size_t in_ch, const std::vector<std::size_t>& widths,
                            Rng& rng) {
    ConvStack s;
    for (std::size_t w : widths) {
        s.convs.push_back(make_conv(in_ch, w, 3, rng, 1, 1));
        s.norms.emplace_back(w);
        in_ch = w;
    }
    return s;
}

inline Tensor stack_forward(ConvStack& s, Tensor h) {
    for (std::size_t i = 0; i < s.convs.size(); ++i) {
        h = conv2d(h, s.convs[i]);
        h = batchnorm2d(h, s.norms[i]);
        h = relu(h);
        if (h.dim(2) >= 2 && h.dim(3) >= 2) h = maxpool2d(h, 2, 2);
    }
    return h;
}

inline void collect_params(ConvStack& s, std::vector<Tensor>& out) {
    for (std::size_t i = 0; i < s.convs.size(); ++i) {
        out.push_back(s.convs[i].weight);
        out.push_back(s.convs[i].bias);
        out.push_back(s.norms[i].gamma);
        out.push_back(s.norms[i].beta);
    }
}

}  // namespace detail

struct KlClassifier {
    ClassifierConfig config;
    ViewMode mode = ViewMode::multi;
    std::vector<ConvStack> branches;  // PA then LAT for multi; single otherwise
    ConvStack trunk;
    Tensor fc1_weight, fc1_bias;  // (fc_dim, trunk_out), (fc_dim)
    Tensor fc2_weight, fc2_bias;  // (5, fc_dim), (5); zero-initialized

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        for (auto& b : branches) detail::collect_params(b, out);
        detail::collect_params(trunk, out);
        out.push_back(fc1_weight);
        out.push_back(fc1_bias);
        out.push_back(fc2_weight);
        out.push_back(fc2_bias);
        return out;
    }

    void set_mode(BatchNormMode m) {
        for (auto& b : branches)
            for (auto& bn : b.norms) bn.mode = m;
        for (auto& bn : trunk.norms) bn.mode = m;
    }

    std::vector<double> save_state() {
        std::vector<double> flat = flatten_params(parameters());
        auto push_buffers = [&flat](const ConvStack& s) {
            for (const auto& bn : s.norms) {
                flat.insert(flat.end(), bn.running_mean.begin(), bn.running_mean.end());
                flat.insert(flat.end(), bn.running_var.begin(), bn.running_var.end());
            }
        };
        for (const auto& b : branches) push_buffers(b);
        push_buffers(trunk);
        return flat;
    }

    void load_state(const std::vector<double>& flat) {
        auto params = parameters();
        std::size_t param_count = 0;
        for (const auto& p : params) param_count += p.size();
        if (flat.size() < param_count) {
            throw std::invalid_argument("classifier: state snapshot too short");
        }
        restore_params(params, std::vector<double>(flat.begin(), flat.begin() + param_count));
        std::size_t off = param_count;
        auto pull_buffers = [&flat, &off](ConvStack& s) {
            for (auto& bn : s.norms) {
                for (double& v : bn.running_mean) v = flat.at(off++);
                for (double& v : bn.running_var) v = flat.at(off++);
            }
        };
        for (auto& b : branches) pull_buffers(b);
        pull_buffers(trunk);
        if (off != flat.size()) {
            throw std::invalid_argument("classifier: state snapshot too long");
        }
    }
};

inline KlClassifier make_classifier(const ClassifierConfig& cfg, ViewMode mode) {
    validate_classifier_config(cfg);
    KlClassifier m;
    m.config = cfg;
    m.mode = mode;
    Rng rng(hash_mix(cfg.seed, "classifier_init"));
    const std::size_t n_branches = mode == ViewMode::multi ? 2 : 1;
    for (std::size_t b = 0; b < n_branches; ++b) {
        m.branches.push_back(detail::make_stack(1, cfg.branch_widths, rng));
    }
    m.trunk = detail::make_stack(cfg.branch_widths.back() * n_branches, cfg.trunk_widths, rng);
    const std::size_t trunk_out = cfg.trunk_widths.back();
    m.fc1_weight = Tensor::randn({cfg.fc_dim, trunk_out}, rng,
                                 std::sqrt(2.0 / static_cast<double>(trunk_out)), true);
    m.fc1_bias = Tensor::zeros({cfg.fc_dim}, true);
    // zero head: a fresh model scores every grade equally
    m.fc2_weight = Tensor::zeros({static_cast<std::size_t>(kGradeClasses), cfg.fc_dim}, true);
    m.fc2_bias = Tensor::zeros({static_cast<std::size_t>(kGradeClasses)}, true);
    return m;
}

// (N,1,S,S) per present view -> (N,5) logits. For single-view modes only the
// matching input is consumed.
inline Tensor classifier_logits(KlClassifier& model, const Tensor& pa, const Tensor& lat) {
    auto check = [&model](const Tensor& t, const char* name) {
        if (t.shape().size() != 4 || t.dim(1) != 1 || t.dim(2) != model.config.input_px ||
            t.dim(3) != model.config.input_px) {
            throw std::invalid_argument(std::string("classifier: ") + name + " batch must be (N,1," +
                                        std::to_string(model.config.input_px) + "," +
                                        std::to_string(model.config.input_px) + "), got " +
                                        shape_str(t.shape()));
        }
    };
    Tensor features;
    if (model.mode == ViewMode::multi) {
        check(pa, "PA");
        check(lat, "LAT");
        if (pa.dim(0) != lat.dim(0)) {
            throw std::invalid_argument("classifier: PA and LAT batches differ in size");
        }
        const Tensor a = detail::stack_forward(model.branches[0], pa);
        const Tensor b = detail::stack_forward(model.branches[1], lat);
        features = channel_concat(a, b);
    } else if (model.mode == ViewMode::pa_only) {
        check(pa, "PA");
        features = detail::stack_forward(model.branches[0], pa);
    } else {
        check(lat, "LAT");
        features = detail::stack_forward(model.branches[0], lat);
    }
    Tensor h = detail::stack_forward(model.trunk, features);
    h = global_avg_pool(h);
    h = relu(linear(h, model.fc1_weight, model.fc1_bias));
    return linear(h, model.fc2_weight, model.fc2_bias);
}

inline int argmax_grade(const double* scores) {
    int best = 0;
    for (int k = 1; k < kGradeClasses; ++k) {
        if (scores[k] > scores[best]) best = k;  // ties resolve to the lower grade
    }
    return best;
}

struct ClassifyResult {
    std::array<double, kGradeClasses> scores{};  // softmax, sums to 1
    int grade = 0;
};

inline Tensor patch_to_tensor(const Raster& patch, std::size_t input_px) {
    if (patch.width != input_px || patch.height != input_px) {
        throw std::invalid_argument("classifier: patch is " + std::to_string(patch.width) + "x" +
                                    std::to_string(patch.height) + ", model expects " +
                                    std::to_string(input_px) + "x" + std::to_string(input_px));
    }
    std::vector<double> data = patch.samples;
    return Tensor({1, 1, input_px, input_px}, std::move(data), false);
}

inline ClassifyResult classify_forward(KlClassifier& model, const Raster& pa_patch,
                                       const Raster& lat_patch) {
    model.set_mode(BatchNormMode::eval);
    const std::size_t s = model.config.input_px;
    Tensor pa, lat;
    if (model.mode != ViewMode::lat_only) pa = patch_to_tensor(pa_patch, s);
    if (model.mode != ViewMode::pa_only) lat = patch_to_tensor(lat_patch, s);
    const Tensor logits = classifier_logits(model, pa, lat);
    const std::vector<double> soft = softmax_rows(logits);
    ClassifyResult r;
    std::copy(soft.begin(), soft.end(), r.scores.begin());
    r.grade = argmax_grade(r.scores.data());
    return r;
}

// Crop a square neighborhood around the joint center from a normalized
// reference-spacing image and bring it to the model's input resolution.
inline Raster crop_view_patch(const Raster& normalized, double cx, double cy, std::size_t crop_px,
                              std::size_t input_px) {
    return resize_patch(crop_patch(normalized, cx, cy, crop_px), input_px);
}

// ---------------------------------------------------------------------------
// Balanced sampling
// ---------------------------------------------------------------------------

class BalancedSampler {
  public:
    BalancedSampler(const std::vector<int>& grades, std::uint64_t seed)
        : rng_(hash_mix(seed, "balanced_sampler")) {
        for (std::size_t i = 0; i < grades.size(); ++i) {
            if (grades[i] < 0 || grades[i] >= kGradeClasses) {
                throw std::invalid_argument("balanced sampler: grade outside 0..4");
            }
            by_class_[static_cast<std::size_t>(grades[i])].push_back(i);
        }
        for (int g = 0; g < kGradeClasses; ++g) {
            if (by_class_[static_cast<std::size_t>(g)].empty()) {
                throw std::invalid_argument("balanced sampler: class " + std::to_string(g) +
                                            " has no cases");
            }
        }
    }

    // class ~ Uniform{0..4}, then a case uniform within the class
    std::size_t draw() {
        const auto& bucket = by_class_[rng_.uniform_int(kGradeClasses)];
        return bucket[rng_.uniform_int(bucket.size())];
    }

    std::vector<std::size_t> batch(std::size_t n) {
        std::vector<std::size_t> out(n);
        for (auto& v : out) v = draw();
        return out;
    }

  private:
    std::array<std::vector<std::size_t>, kGradeClasses> by_class_;
    Rng rng_;
};

// Per class, a seeded sample without replacement of min-class-count cases;
// built once and reused across epochs and restarts.
inline std::vector<std::size_t> build_balanced_validation(const std::vector<int>& grades,
                                                          std::uint64_t seed) {
    std::array<std::vector<std::size_t>, kGradeClasses> by_class;
    for (std::size_t i = 0; i < grades.size(); ++i) {
        if (grades[i] < 0 || grades[i] >= kGradeClasses) {
            throw std::invalid_argument("balanced validation: grade outside 0..4");
        }
        by_class[static_cast<std::size_t>(grades[i])].push_back(i);
    }
    std::size_t min_count = grades.size();
    for (int g = 0; g < kGradeClasses; ++g) {
        if (by_class[static_cast<std::size_t>(g)].empty()) {
            throw std::invalid_argument("balanced validation: class " + std::to_string(g) +
                                        " has no cases");
        }
        min_count = std::min(min_count, by_class[static_cast<std::size_t>(g)].size());
    }
    Rng rng(hash_mix(seed, "balanced_validation"));
    std::vector<std::size_t> out;
    for (int g = 0; g < kGradeClasses; ++g) {
        auto& bucket = by_class[static_cast<std::size_t>(g)];
        rng.shuffle(bucket);
        out.insert(out.end(), bucket.begin(), bucket.begin() + static_cast<std::ptrdiff_t>(min_count));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct CaseSample {
    std::string case_id;
    Raster pa;   // patch at the model input resolution
    Raster lat;  // patch at the model input resolution
    int grade = 0;
};

struct ClassifierTrainResult {
    KlClassifier model;
    double best_val_accuracy = 0.0;
    std::vector<EpochLogRow> log;
};

namespace detail {

inline Tensor view_batch(const std::vector<const Raster*>& patches, std::size_t input_px) {
    const std::size_t plane = input_px * input_px;
    std::vector<double> data(patches.size() * plane);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (patches[i]->width != input_px || patches[i]->height != input_px) {
            throw std::invalid_argument("classifier: training patch size mismatch");
        }
        std::copy(patches[i]->samples.begin(), patches[i]->samples.end(),
                  data.begin() + static_cast<std::ptrdiff_t>(i * plane));
    }
    return Tensor({patches.size(), 1, input_px, input_px}, std::move(data), false);
}

}  // namespace detail

// Accuracy over a fixed case list, evaluated in small batches.
inline double classifier_accuracy(KlClassifier& model, const std::vector<CaseSample>& cases,
                                  const std::vector<std::size_t>& subset) {
    if (subset.empty()) throw std::invalid_argument("classifier accuracy: empty subset");
    model.set_mode(BatchNormMode::eval);
    const std::size_t chunk = 16;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < subset.size(); start += chunk) {
        const std::size_t count = std::min(chunk, subset.size() - start);
        std::vector<const Raster*> pa, lat;
        for (std::size_t i = 0; i < count; ++i) {
            const CaseSample& c = cases[subset[start + i]];
            pa.push_back(&c.pa);
            lat.push_back(&c.lat);
        }
        Tensor xp, xl;
        if (model.mode != ViewMode::lat_only) xp = detail::view_batch(pa, model.config.input_px);
        if (model.mode != ViewMode::pa_only) xl = detail::view_batch(lat, model.config.input_px);
        const Tensor logits = classifier_logits(model, xp, xl);
        const std::vector<double> soft = softmax_rows(logits);
        for (std::size_t i = 0; i < count; ++i) {
            const int pred = argmax_grade(soft.data() + i * kGradeClasses);
            if (pred == cases[subset[start + i]].grade) ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(subset.size());
}

// Single training run: balanced batches, augmentation after the warmup
// epochs, early stop on balanced-validation accuracy, best snapshot
// restored on exit.
inline ClassifierTrainResult train_classifier(const ClassifierConfig& cfg, ViewMode mode,
                                              const std::vector<CaseSample>& train,
                                              const std::vector<CaseSample>& val) {
    validate_classifier_config(cfg);
    if (val.empty()) throw std::invalid_argument("train_classifier: empty validation set");
    std::vector<int> train_grades;
    for (const auto& c : train) train_grades.push_back(c.grade);
    BalancedSampler sampler(train_grades, cfg.seed);  // rejects absent classes

    ClassifierTrainResult result;
    result.model = make_classifier(cfg, mode);
    KlClassifier& model = result.model;
    auto params = model.parameters();
    Adam adam(params, cfg.lr);
    EarlyStopMonitor monitor(cfg.patience, EarlyStopMonitor::Direction::maximize);

    std::vector<std::size_t> val_subset(val.size());
    for (std::size_t i = 0; i < val.size(); ++i) val_subset[i] = i;

    const std::size_t batches_per_epoch =
        cfg.batches_per_epoch > 0
            ? static_cast<std::size_t>(cfg.batches_per_epoch)
            : std::max<std::size_t>(1, (train.size() + cfg.batch_size - 1) / cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const bool augmenting = epoch > cfg.warmup_epochs;
        model.set_mode(BatchNormMode::train);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const auto idx = sampler.batch(cfg.batch_size);
            std::vector<Raster> aug_pa(idx.size()), aug_lat(idx.size());
            std::vector<const Raster*> pa, lat;
            std::vector<int> labels;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const CaseSample& c = train[idx[i]];
                labels.push_back(c.grade);
                if (augmenting) {
                    Rng aug_rng(hash_mix(hash_mix(hash_mix(cfg.seed, "augment"),
                                                  static_cast<std::uint64_t>(epoch)),
                                         b * cfg.batch_size + i));
                    auto [ap, al] = augment_pair(c.pa, c.lat, cfg.augment, aug_rng);
                    aug_pa[i] = std::move(ap);
                    aug_lat[i] = std::move(al);
                    pa.push_back(&aug_pa[i]);
                    lat.push_back(&aug_lat[i]);
                } else {
                    pa.push_back(&c.pa);
                    lat.push_back(&c.lat);
                }
            }
            Tensor xp, xl;
            if (mode != ViewMode::lat_only) xp = detail::view_batch(pa, cfg.input_px);
            if (mode != ViewMode::pa_only) xl = detail::view_batch(lat, cfg.input_px);
            Tensor loss = softmax_cross_entropy(classifier_logits(model, xp, xl), labels);
            adam.zero_grad();
            loss.backward();
            adam.step();
            loss_sum += loss.value();
        }

        const double val_acc = classifier_accuracy(model, val, val_subset);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back({epoch, augmenting ? "augment" : "warmup",
                              loss_sum / static_cast<double>(batches_per_epoch), val_acc,
                              seconds});
        if (monitor.update(val_acc, [&] { return model.save_state(); })) break;
    }
    model.load_state(monitor.best_snapshot());
    result.best_val_accuracy = monitor.best_score();
    return result;
}

// The paper's scheme: several independently seeded trainings, keep the best
// validation performer.
inline ClassifierTrainResult train_classifier_restarts(
    const ClassifierConfig& cfg, ViewMode mode, const std::vector<CaseSample>& train,
    const std::vector<CaseSample>& val,
    const std::function<void(std::size_t, const std::string&)>& on_error = {}) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
        seeds.push_back(hash_mix(hash_mix(cfg.seed, "restart"), r));
    }
    auto train_fn = [&](std::uint64_t restart_seed) {
        ClassifierConfig c = cfg;
        c.seed = restart_seed;
        ClassifierTrainResult r = train_classifier(c, mode, train, val);
        const double score = r.best_val_accuracy;
        return std::make_pair(std::move(r), score);
    };
    auto restart = multi_restart_train(
        train_fn, seeds, [&](std::size_t i, std::uint64_t, const std::string& what) {
            if (on_error) on_error(i, what);
        });
    return std::move(restart.model);
}

// ---------------------------------------------------------------------------
// Checkpoint bridging
// ---------------------------------------------------------------------------

namespace detail {

inline void stack_tensors(const std::string& prefix, ConvStack& s,
                          std::vector<NamedTensor>& out) {
    for (std::size_t i = 0; i < s.convs.size(); ++i) {
        const std::string p = prefix + std::to_string(i) + ".";
        out.push_back(snapshot_tensor(p + "conv.weight", s.convs[i].weight));
        out.push_back(snapshot_tensor(p + "conv.bias", s.convs[i].bias));
        out.push_back(snapshot_tensor(p + "bn.gamma", s.norms[i].gamma));
        out.push_back(snapshot_tensor(p + "bn.beta", s.norms[i].beta));
        out.push_back({p + "bn.running_mean", {s.norms[i].running_mean.size()},
                       s.norms[i].running_mean});
        out.push_back(
            {p + "bn.running_var", {s.norms[i].running_var.size()}, s.norms[i].running_var});
    }
}

inline void load_stack(const std::string& prefix, const Checkpoint& ckpt, ConvStack& s) {
    for (std::size_t i = 0; i < s.convs.size(); ++i) {
        const std::string p = prefix + std::to_string(i) + ".";
        load_tensor(ckpt.tensor(p + "conv.weight"), s.convs[i].weight);
        load_tensor(ckpt.tensor(p + "conv.bias"), s.convs[i].bias);
        load_tensor(ckpt.tensor(p + "bn.gamma"), s.norms[i].gamma);
        load_tensor(ckpt.tensor(p + "bn.beta"), s.norms[i].beta);
        s.norms[i].running_mean = ckpt.tensor(p + "bn.running_mean").data;
        s.norms[i].running_var = ckpt.tensor(p + "bn.running_var").data;
    }
}

}  // namespace detail

inline nlohmann::json classifier_meta(const ClassifierConfig& cfg, ViewMode mode) {
    return {{"input_px", cfg.input_px},
            {"branch_widths", cfg.branch_widths},
            {"trunk_widths", cfg.trunk_widths},
            {"fc_dim", cfg.fc_dim},
            {"lr", cfg.lr},
            {"batch_size", cfg.batch_size},
            {"patience", cfg.patience},
            {"max_epochs", cfg.max_epochs},
            {"warmup_epochs", cfg.warmup_epochs},
            {"batches_per_epoch", cfg.batches_per_epoch},
            {"restarts", cfg.restarts},
            {"seed", cfg.seed},
            {"view_mode", to_string(mode)}};
}

inline void save_classifier(const std::string& path, KlClassifier& model) {
    std::vector<NamedTensor> tensors;
    for (std::size_t b = 0; b < model.branches.size(); ++b) {
        detail::stack_tensors("branch" + std::to_string(b) + ".stage", model.branches[b],
                              tensors);
    }
    detail::stack_tensors("trunk.stage", model.trunk, tensors);
    tensors.push_back(snapshot_tensor("fc1.weight", model.fc1_weight));
    tensors.push_back(snapshot_tensor("fc1.bias", model.fc1_bias));
    tensors.push_back(snapshot_tensor("fc2.weight", model.fc2_weight));
    tensors.push_back(snapshot_tensor("fc2.bias", model.fc2_bias));
    write_checkpoint(path, "classifier", classifier_meta(model.config, model.mode), tensors);
}

inline KlClassifier load_classifier(const Checkpoint& ckpt) {
    if (ckpt.kind != "classifier") {
        throw std::invalid_argument("load_classifier: checkpoint kind is '" + ckpt.kind + "'");
    }
    ClassifierConfig cfg;
    cfg.input_px = ckpt.meta.at("input_px").get<std::size_t>();
    cfg.branch_widths = ckpt.meta.at("branch_widths").get<std::vector<std::size_t>>();
    cfg.trunk_widths = ckpt.meta.at("trunk_widths").get<std::vector<std::size_t>>();
    cfg.fc_dim = ckpt.meta.at("fc_dim").get<std::size_t>();
    cfg.lr = ckpt.meta.at("lr").get<double>();
    cfg.batch_size = ckpt.meta.at("batch_size").get<std::size_t>();
    cfg.patience = ckpt.meta.at("patience").get<int>();
    cfg.max_epochs = ckpt.meta.at("max_epochs").get<int>();
    cfg.warmup_epochs = ckpt.meta.at("warmup_epochs").get<int>();
    cfg.batches_per_epoch = ckpt.meta.at("batches_per_epoch").get<int>();
    cfg.restarts = ckpt.meta.at("restarts").get<std::size_t>();
    cfg.seed = ckpt.meta.at("seed").get<std::uint64_t>();
    KlClassifier model =
        make_classifier(cfg, view_mode_from_string(ckpt.meta.at("view_mode").get<std::string>()));
    for (std::size_t b = 0; b < model.branches.size(); ++b) {
        detail::load_stack("branch" + std::to_string(b) + ".stage", ckpt, model.branches[b]);
    }
    detail::load_stack("trunk.stage", ckpt, model.trunk);
    load_tensor(ckpt.tensor("fc1.weight"), model.fc1_weight);
    load_tensor(ckpt.tensor("fc1.bias"), model.fc1_bias);
    load_tensor(ckpt.tensor("fc2.weight"), model.fc2_weight);
    load_tensor(ckpt.tensor("fc2.bias"), model.fc2_bias);
    model.set_mode(BatchNormMode::eval);
    return model;
}

inline KlClassifier load_classifier(const std::string& path) {
    return load_classifier(read_checkpoint(path));
}

}  // namespace klp
