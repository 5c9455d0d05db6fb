#pragma once

// Joint-center localization as a single-scale grid proposal: a small conv
// backbone maps the downscaled image to a G x G grid, each cell carrying an
// objectness logit and two in-cell offsets. Boxes are fixed-size squares
// around the predicted center, so the detector never regresses box sizes;
// evaluation is IoU against the same fixed-size box at the true center.

#include <algorithm>
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

struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

inline Box box_around(double cx, double cy, double side) {
    if (!(side > 0.0)) throw std::invalid_argument("box_around: side must be positive");
    return {cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0};
}

inline double iou(const Box& a, const Box& b) {
    if (a.x1 <= a.x0 || a.y1 <= a.y0 || b.x1 <= b.x0 || b.y1 <= b.y0) {
        throw std::invalid_argument("iou: degenerate box");
    }
    const double ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    const double area_a = (a.x1 - a.x0) * (a.y1 - a.y0);
    const double area_b = (b.x1 - b.x0) * (b.y1 - b.y0);
    return inter / (area_a + area_b - inter);
}

struct Detection {
    double cx = 0, cy = 0;
    double score = 0;
    Box box;
};

// 1000 px at the 0.2 mm/px reference grid, i.e. a 200 mm square.
inline constexpr double kDetectionBoxPx = 1000.0;

struct DetectorConfig {
    std::size_t input_px = 512;  // longest image side after downscale
    std::vector<std::size_t> widths = {4, 8, 16, 16, 16};  // one conv/pool stage each
    double box_px = kDetectionBoxPx;  // fixed box side in image px at reference spacing
    double lr = 1e-4;
    std::size_t batch_size = 4;
    int patience = 20;
    int max_epochs = 300;
    double offset_loss_weight = 1.0;
    std::uint64_t seed = 0;

    std::size_t grid() const { return input_px >> widths.size(); }
};

inline void validate_detector_config(const DetectorConfig& cfg) {
    if (cfg.widths.empty()) throw std::invalid_argument("detector: needs at least one stage");
    if (cfg.input_px == 0 || (cfg.input_px & ((1u << cfg.widths.size()) - 1)) != 0) {
        throw std::invalid_argument(
            "detector: input_px must be divisible by 2^stages, got " +
            std::to_string(cfg.input_px) + " with " + std::to_string(cfg.widths.size()) +
            " stages");
    }
    if (cfg.grid() < 2) throw std::invalid_argument("detector: grid collapses below 2x2");
    if (cfg.box_px <= 0.0) throw std::invalid_argument("detector: box side must be positive");
    if (cfg.lr <= 0.0) throw std::invalid_argument("detector: lr must be positive");
    if (cfg.batch_size < 2) {
        throw std::invalid_argument("detector: batch must be >= 2 for batchnorm");
    }
    if (cfg.patience < 1 || cfg.max_epochs < 1) {
        throw std::invalid_argument("detector: patience and max_epochs must be >= 1");
    }
}

struct GridDetector {
    DetectorConfig config;
    std::vector<ConvParams> convs;
    std::vector<BatchNormState> norms;
    ConvParams head;  // widths.back() -> {objectness, dx, dy}

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            out.push_back(convs[i].weight);
            out.push_back(convs[i].bias);
            out.push_back(norms[i].gamma);
            out.push_back(norms[i].beta);
        }
        out.push_back(head.weight);
        out.push_back(head.bias);
        return out;
    }

    void set_mode(BatchNormMode mode) {
        for (auto& bn : norms) bn.mode = mode;
    }

    // Parameters plus batchnorm running buffers: everything the
    // early-stopping snapshot has to capture.
    std::vector<double> save_state() {
        std::vector<double> flat = flatten_params(parameters());
        for (const auto& bn : norms) {
            flat.insert(flat.end(), bn.running_mean.begin(), bn.running_mean.end());
            flat.insert(flat.end(), bn.running_var.begin(), bn.running_var.end());
        }
        return flat;
    }

    void load_state(const std::vector<double>& flat) {
        auto params = parameters();
        std::size_t param_count = 0;
        for (const auto& p : params) param_count += p.size();
        if (flat.size() < param_count) {
            throw std::invalid_argument("detector: state snapshot too short");
        }
        restore_params(params, std::vector<double>(flat.begin(), flat.begin() + param_count));
        std::size_t off = param_count;
        for (auto& bn : norms) {
            for (double& v : bn.running_mean) v = flat.at(off++);
            for (double& v : bn.running_var) v = flat.at(off++);
        }
        if (off != flat.size()) throw std::invalid_argument("detector: state snapshot too long");
    }
};

inline GridDetector make_grid_detector(const DetectorConfig& cfg) {
    validate_detector_config(cfg);
    GridDetector m;
    m.config = cfg;
    Rng rng(hash_mix(cfg.seed, "detector_init"));
    std::size_t in_ch = 1;
    for (std::size_t w : cfg.widths) {
        m.convs.push_back(make_conv(in_ch, w, 3, rng, 1, 1));
        m.norms.emplace_back(w);
        in_ch = w;
    }
    m.head = make_conv(in_ch, 3, 3, rng, 1, 1);
    return m;
}

// Backbone + head on a prepared batch: (N,1,S,S) -> (N,3,G,G).
inline Tensor detector_head_forward(GridDetector& model, const Tensor& x) {
    Tensor h = x;
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        h = conv2d(h, model.convs[i]);
        h = batchnorm2d(h, model.norms[i]);
        h = relu(h);
        h = maxpool2d(h, 2, 2);
    }
    return conv2d(h, model.head);
}

// Grid coordinates -> original image pixels. The image was scaled by
// input_px / max(w,h) and padded bottom/right, so the inverse is a single
// multiplication.
inline std::pair<double, double> map_cell_to_image(std::size_t gx, std::size_t gy, double ox,
                                                   double oy, std::size_t grid,
                                                   std::size_t input_px, std::size_t orig_w,
                                                   std::size_t orig_h) {
    const double cell = static_cast<double>(input_px) / static_cast<double>(grid);
    const double back =
        static_cast<double>(std::max(orig_w, orig_h)) / static_cast<double>(input_px);
    return {(static_cast<double>(gx) + ox) * cell * back,
            (static_cast<double>(gy) + oy) * cell * back};
}

struct CellTarget {
    std::size_t gx = 0, gy = 0;
    double ox = 0.0, oy = 0.0;  // in [0,1)
};

inline CellTarget target_cell_for_center(double cx, double cy, std::size_t grid,
                                         std::size_t input_px, std::size_t orig_w,
                                         std::size_t orig_h) {
    if (!(cx >= 0.0) || !(cy >= 0.0) || cx >= static_cast<double>(orig_w) ||
        cy >= static_cast<double>(orig_h)) {
        throw std::invalid_argument("detector: center annotation outside the image");
    }
    const double fwd =
        static_cast<double>(input_px) / static_cast<double>(std::max(orig_w, orig_h));
    const double cell = static_cast<double>(input_px) / static_cast<double>(grid);
    CellTarget t;
    const double gx_f = std::min(cx * fwd / cell, static_cast<double>(grid) - 1e-9);
    const double gy_f = std::min(cy * fwd / cell, static_cast<double>(grid) - 1e-9);
    t.gx = static_cast<std::size_t>(gx_f);
    t.gy = static_cast<std::size_t>(gy_f);
    t.ox = gx_f - static_cast<double>(t.gx);
    t.oy = gy_f - static_cast<double>(t.gy);
    return t;
}

namespace detail {

// Downscale so the longest side is input_px, zero-pad bottom/right to
// square, flatten row-major. Returned buffer has input_px^2 entries.
inline std::vector<double> detector_pixels(const DetectorConfig& cfg, const Raster& img) {
    if (img.width == 0 || img.height == 0) {
        throw std::invalid_argument("detector: empty image");
    }
    const std::size_t longest = std::max(img.width, img.height);
    const double scale = static_cast<double>(cfg.input_px) / static_cast<double>(longest);
    const std::size_t rw = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(static_cast<double>(img.width) * scale)));
    const std::size_t rh = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(static_cast<double>(img.height) * scale)));
    const Raster small = resize_bicubic(img, rw, rh, img.spacing / scale);
    std::vector<double> out(cfg.input_px * cfg.input_px, 0.0);
    for (std::size_t y = 0; y < rh; ++y) {
        std::copy(small.samples.begin() + static_cast<std::ptrdiff_t>(y * rw),
                  small.samples.begin() + static_cast<std::ptrdiff_t>((y + 1) * rw),
                  out.begin() + static_cast<std::ptrdiff_t>(y * cfg.input_px));
    }
    return out;
}

inline Tensor batch_from_pixels(const DetectorConfig& cfg,
                                const std::vector<const std::vector<double>*>& images) {
    const std::size_t plane = cfg.input_px * cfg.input_px;
    std::vector<double> data(images.size() * plane);
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::copy(images[i]->begin(), images[i]->end(),
                  data.begin() + static_cast<std::ptrdiff_t>(i * plane));
    }
    return Tensor({images.size(), 1, cfg.input_px, cfg.input_px}, std::move(data), false);
}

inline std::vector<Detection> detections_from_head(const GridDetector& model,
                                                   const std::vector<double>& head,
                                                   std::size_t orig_w, std::size_t orig_h) {
    const std::size_t g = model.config.grid();
    const std::size_t plane = g * g;
    std::vector<Detection> out;
    out.reserve(plane);
    auto squash = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
            const std::size_t i = gy * g + gx;
            Detection d;
            d.score = squash(head[i]);
            const double ox = squash(head[plane + i]);
            const double oy = squash(head[2 * plane + i]);
            std::tie(d.cx, d.cy) = map_cell_to_image(gx, gy, ox, oy, g, model.config.input_px,
                                                     orig_w, orig_h);
            d.box = box_around(d.cx, d.cy, model.config.box_px);
            out.push_back(d);
        }
    }
    return out;
}

}  // namespace detail

// One candidate per grid cell, row-major, with centers mapped back to the
// image frame. Expects a reference-spacing, normalized image.
inline std::vector<Detection> detector_forward(GridDetector& model, const Raster& image) {
    const auto pixels = detail::detector_pixels(model.config, image);
    model.set_mode(BatchNormMode::eval);
    const Tensor x = detail::batch_from_pixels(model.config, {&pixels});
    const Tensor head = detector_head_forward(model, x);
    return detail::detections_from_head(model, head.data(), image.width, image.height);
}

inline Detection select_detection(const std::vector<Detection>& candidates) {
    if (candidates.empty()) throw std::invalid_argument("select_detection: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        if (candidates[i].score > candidates[best].score) best = i;
    }
    return candidates[best];
}

struct AnnotatedImage {
    Raster image;  // reference spacing, normalized
    double cx = 0.0, cy = 0.0;
};

// Downscaled pixels plus the original frame geometry: everything training
// and evaluation need, at a fraction of the full raster's footprint.
struct PreparedSample {
    std::vector<double> pixels;  // input_px^2, row-major, zero-padded
    double cx = 0.0, cy = 0.0;   // annotation in original-image pixels
    std::size_t raw_w = 0, raw_h = 0;
};

inline PreparedSample prepare_sample(const DetectorConfig& cfg, const Raster& image, double cx,
                                     double cy) {
    if (!(cx >= 0.0) || !(cy >= 0.0) || cx >= static_cast<double>(image.width) ||
        cy >= static_cast<double>(image.height)) {
        throw std::invalid_argument("detector: center annotation outside the image");
    }
    PreparedSample s;
    s.pixels = detail::detector_pixels(cfg, image);
    s.cx = cx;
    s.cy = cy;
    s.raw_w = image.width;
    s.raw_h = image.height;
    return s;
}

inline PreparedSample prepare_sample(const DetectorConfig& cfg, const AnnotatedImage& a) {
    return prepare_sample(cfg, a.image, a.cx, a.cy);
}

inline std::vector<Detection> detector_forward(GridDetector& model, const PreparedSample& s) {
    if (s.pixels.size() != model.config.input_px * model.config.input_px) {
        throw std::invalid_argument("detector: sample prepared for a different input size");
    }
    model.set_mode(BatchNormMode::eval);
    const Tensor x = detail::batch_from_pixels(model.config, {&s.pixels});
    const Tensor head = detector_head_forward(model, x);
    return detail::detections_from_head(model, head.data(), s.raw_w, s.raw_h);
}

struct DetectionStats {
    std::size_t n = 0;
    double fraction_at_075 = 0.0;
    double mean_iou_100 = 0.0;  // 0-100 scale
    double std_iou_100 = 0.0;
};

inline DetectionStats detection_stats_from_ious(const std::vector<double>& ious) {
    if (ious.empty()) throw std::invalid_argument("detection stats: empty sample");
    DetectionStats s;
    s.n = ious.size();
    double sum = 0.0;
    std::size_t hits = 0;
    for (double v : ious) {
        sum += v;
        if (v >= 0.75) ++hits;
    }
    const double mean = sum / static_cast<double>(s.n);
    double var = 0.0;
    for (double v : ious) var += (v - mean) * (v - mean);
    var /= static_cast<double>(s.n);
    s.fraction_at_075 = static_cast<double>(hits) / static_cast<double>(s.n);
    s.mean_iou_100 = 100.0 * mean;
    s.std_iou_100 = 100.0 * std::sqrt(var);
    return s;
}

inline double detection_iou(GridDetector& model, const PreparedSample& sample) {
    const Detection det = select_detection(detector_forward(model, sample));
    const Box truth = box_around(sample.cx, sample.cy, model.config.box_px);
    return iou(det.box, truth);
}

inline double detection_iou(GridDetector& model, const AnnotatedImage& sample) {
    return detection_iou(model, prepare_sample(model.config, sample));
}

inline DetectionStats evaluate_detection(GridDetector& model,
                                         const std::vector<PreparedSample>& test) {
    std::vector<double> ious;
    ious.reserve(test.size());
    for (const auto& s : test) ious.push_back(detection_iou(model, s));
    return detection_stats_from_ious(ious);
}

inline DetectionStats evaluate_detection(GridDetector& model,
                                         const std::vector<AnnotatedImage>& test) {
    std::vector<double> ious;
    ious.reserve(test.size());
    for (const auto& s : test) ious.push_back(detection_iou(model, s));
    return detection_stats_from_ious(ious);
}

struct DetectorTrainResult {
    GridDetector model;
    double best_val_iou = 0.0;
    std::vector<EpochLogRow> log;
};

// BCE over all cells (positive cell and the negatives each carry half the
// weight) plus squared error on the positive cell's sigmoid offsets.
// Validation metric and stopping criterion: mean IoU of the selected
// detection against the true-center box.
inline DetectorTrainResult train_detector(const DetectorConfig& cfg,
                                          const std::vector<PreparedSample>& train,
                                          const std::vector<PreparedSample>& val) {
    validate_detector_config(cfg);
    if (train.size() < cfg.batch_size) {
        throw std::invalid_argument("train_detector: fewer training images than one batch");
    }
    if (val.empty()) throw std::invalid_argument("train_detector: empty validation set");

    const std::size_t g = cfg.grid();
    const std::size_t plane = g * g;
    const std::size_t want = cfg.input_px * cfg.input_px;

    std::vector<CellTarget> targets(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train[i].pixels.size() != want) {
            throw std::invalid_argument("train_detector: sample prepared for a different input size");
        }
        targets[i] = target_cell_for_center(train[i].cx, train[i].cy, g, cfg.input_px,
                                            train[i].raw_w, train[i].raw_h);
    }

    DetectorTrainResult result;
    result.model = make_grid_detector(cfg);
    GridDetector& model = result.model;
    auto params = model.parameters();
    Adam adam(params, cfg.lr);
    EarlyStopMonitor monitor(cfg.patience, EarlyStopMonitor::Direction::maximize);

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng(hash_mix(hash_mix(cfg.seed, "detector_epoch"),
                                 static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        model.set_mode(BatchNormMode::train);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start + 2 <= order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            if (count < 2) break;  // batchnorm needs at least two images
            std::vector<const std::vector<double>*> images;
            std::vector<double> target(count * plane, 0.0);
            std::vector<double> weight(count * plane, 0.0);
            std::vector<double> off_target(count * 2 * plane, 0.0);
            std::vector<double> off_mask(count * 2 * plane, 0.0);
            for (std::size_t bi = 0; bi < count; ++bi) {
                const std::size_t idx = order[start + bi];
                images.push_back(&train[idx].pixels);
                const CellTarget& t = targets[idx];
                const std::size_t cell = t.gy * g + t.gx;
                // Cells bordering the positive one carry half of the negative
                // weight: argmax decoding breaks on near-tie neighbours, so a
                // neighbour false positive must cost more than a distant one.
                std::vector<std::size_t> near;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        const int ny = static_cast<int>(t.gy) + dy;
                        const int nx = static_cast<int>(t.gx) + dx;
                        if (ny < 0 || nx < 0 || ny >= static_cast<int>(g) ||
                            nx >= static_cast<int>(g))
                            continue;
                        near.push_back(static_cast<std::size_t>(ny) * g +
                                       static_cast<std::size_t>(nx));
                    }
                }
                const std::size_t far_count = plane - 1 - near.size();
                const double near_total = far_count == 0 ? 0.5 : 0.25;
                const double far_weight =
                    far_count == 0 ? 0.0
                                   : 0.25 / static_cast<double>(far_count);
                for (std::size_t ci = 0; ci < plane; ++ci)
                    weight[bi * plane + ci] = far_weight;
                for (const std::size_t ci : near)
                    weight[bi * plane + ci] =
                        near_total / static_cast<double>(near.size());
                target[bi * plane + cell] = 1.0;
                weight[bi * plane + cell] = 0.5;
                off_target[bi * 2 * plane + cell] = t.ox;
                off_target[bi * 2 * plane + plane + cell] = t.oy;
                off_mask[bi * 2 * plane + cell] = 1.0;
                off_mask[bi * 2 * plane + plane + cell] = 1.0;
            }
            const Tensor x = detail::batch_from_pixels(cfg, images);
            const Tensor head = detector_head_forward(model, x);
            const Tensor obj = channel_slice(head, 0, 1);
            const Tensor bce = weighted_bce_with_logits(
                obj, Tensor({count, 1, g, g}, std::move(target), false),
                Tensor({count, 1, g, g}, std::move(weight), false));
            const Tensor offs = sigmoid(channel_slice(head, 1, 3));
            const Tensor diff =
                mul(sub(offs, Tensor({count, 2, g, g}, std::move(off_target), false)),
                    Tensor({count, 2, g, g}, std::move(off_mask), false));
            const Tensor off_loss =
                scale(sum(mul(diff, diff)),
                      cfg.offset_loss_weight / static_cast<double>(count));
            Tensor loss = add(bce, off_loss);
            adam.zero_grad();
            loss.backward();
            adam.step();
            loss_sum += loss.value();
            ++batches;
        }

        double val_iou = 0.0;
        for (const auto& s : val) val_iou += detection_iou(model, s);
        val_iou /= static_cast<double>(val.size());

        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back({epoch, "train",
                              batches ? loss_sum / static_cast<double>(batches) : 0.0, val_iou,
                              seconds});
        if (monitor.update(val_iou, [&] { return model.save_state(); })) break;
    }
    model.load_state(monitor.best_snapshot());
    result.best_val_iou = monitor.best_score();
    return result;
}

inline DetectorTrainResult train_detector(const DetectorConfig& cfg,
                                          const std::vector<AnnotatedImage>& train,
                                          const std::vector<AnnotatedImage>& val) {
    std::vector<PreparedSample> ptrain, pval;
    ptrain.reserve(train.size());
    pval.reserve(val.size());
    for (const auto& a : train) ptrain.push_back(prepare_sample(cfg, a));
    for (const auto& a : val) pval.push_back(prepare_sample(cfg, a));
    return train_detector(cfg, ptrain, pval);
}

// ---------------------------------------------------------------------------
// Checkpoint bridging
// ---------------------------------------------------------------------------

inline std::vector<NamedTensor> detector_tensors(GridDetector& model) {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        const std::string p = "stage" + std::to_string(i) + ".";
        out.push_back(snapshot_tensor(p + "conv.weight", model.convs[i].weight));
        out.push_back(snapshot_tensor(p + "conv.bias", model.convs[i].bias));
        out.push_back(snapshot_tensor(p + "bn.gamma", model.norms[i].gamma));
        out.push_back(snapshot_tensor(p + "bn.beta", model.norms[i].beta));
        out.push_back({p + "bn.running_mean", {model.norms[i].running_mean.size()},
                       model.norms[i].running_mean});
        out.push_back({p + "bn.running_var", {model.norms[i].running_var.size()},
                       model.norms[i].running_var});
    }
    out.push_back(snapshot_tensor("head.weight", model.head.weight));
    out.push_back(snapshot_tensor("head.bias", model.head.bias));
    return out;
}

inline nlohmann::json detector_meta(const DetectorConfig& cfg) {
    return {{"input_px", cfg.input_px}, {"widths", cfg.widths},       {"box_px", cfg.box_px},
            {"lr", cfg.lr},             {"batch_size", cfg.batch_size}, {"patience", cfg.patience},
            {"max_epochs", cfg.max_epochs}, {"offset_loss_weight", cfg.offset_loss_weight},
            {"seed", cfg.seed}};
}

inline void save_detector(const std::string& path, GridDetector& model) {
    write_checkpoint(path, "detector", detector_meta(model.config), detector_tensors(model));
}

inline GridDetector load_detector(const Checkpoint& ckpt) {
    if (ckpt.kind != "detector") {
        throw std::invalid_argument("load_detector: checkpoint kind is '" + ckpt.kind + "'");
    }
    DetectorConfig cfg;
    cfg.input_px = ckpt.meta.at("input_px").get<std::size_t>();
    cfg.widths = ckpt.meta.at("widths").get<std::vector<std::size_t>>();
    cfg.box_px = ckpt.meta.at("box_px").get<double>();
    cfg.lr = ckpt.meta.at("lr").get<double>();
    cfg.batch_size = ckpt.meta.at("batch_size").get<std::size_t>();
    cfg.patience = ckpt.meta.at("patience").get<int>();
    cfg.max_epochs = ckpt.meta.at("max_epochs").get<int>();
    cfg.offset_loss_weight = ckpt.meta.at("offset_loss_weight").get<double>();
    cfg.seed = ckpt.meta.at("seed").get<std::uint64_t>();
    GridDetector model = make_grid_detector(cfg);
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        const std::string p = "stage" + std::to_string(i) + ".";
        load_tensor(ckpt.tensor(p + "conv.weight"), model.convs[i].weight);
        load_tensor(ckpt.tensor(p + "conv.bias"), model.convs[i].bias);
        load_tensor(ckpt.tensor(p + "bn.gamma"), model.norms[i].gamma);
        load_tensor(ckpt.tensor(p + "bn.beta"), model.norms[i].beta);
        model.norms[i].running_mean = ckpt.tensor(p + "bn.running_mean").data;
        model.norms[i].running_var = ckpt.tensor(p + "bn.running_var").data;
    }
    load_tensor(ckpt.tensor("head.weight"), model.head.weight);
    load_tensor(ckpt.tensor("head.bias"), model.head.bias);
    model.set_mode(BatchNormMode::eval);
    return model;
}

inline GridDetector load_detector(const std::string& path) {
    return load_detector(read_checkpoint(path));
}

}  // namespace klp
