#pragma once

// End-to-end inference: preprocess raw views to the reference grid, localize
// the joint per view with the matching (view, side) detector, crop fixed-size
// patches at the selected centers, and grade with the classifier. A
// ground-truth-center mode bypasses the detectors to ablate localization
// error.

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "klp/classify.hpp"
#include "klp/detect.hpp"
#include "klp/manifest.hpp"
#include "klp/preprocess.hpp"

namespace klp {

// Full preprocessing of a raw view: reference spacing, 8-bit collapse,
// unit-scale normalization.
inline Raster preprocess_view(const Raster& raw) {
    return normalize(to_8bit(resample_to_reference(raw)));
}

struct DetectorSet {
    std::map<std::pair<View, Side>, GridDetector> by_key;

    GridDetector& at(View view, Side side) {
        auto it = by_key.find({view, side});
        if (it == by_key.end()) {
            throw std::invalid_argument("detector set: no model for view " + to_string(view) +
                                        " side " + to_string(side));
        }
        return it->second;
    }
};

struct ExamInput {
    std::string exam_id;
    Side side = Side::left;
    std::optional<Raster> pa;   // raw, with native pixel spacing
    std::optional<Raster> lat;
    // annotated joint centers in raw-image pixels, used when bypassing the
    // detectors
    std::optional<std::pair<double, double>> pa_center;
    std::optional<std::pair<double, double>> lat_center;
};

struct PipelineOptions {
    bool use_truth_centers = false;
    std::size_t crop_px = kPatchSize;
};

struct PipelinePrediction {
    std::string exam_id;
    int grade = 0;
    std::array<double, kGradeClasses> scores{};
    // selected centers on the reference grid, per present view
    std::optional<Detection> pa_detection;
    std::optional<Detection> lat_detection;
};

namespace detail {

// Either runs the view's detector or scales the annotation onto the
// reference grid.
inline Detection locate_joint(const Raster& reference, const Raster& raw,
                              std::optional<std::pair<double, double>> annotated,
                              GridDetector* detector, const PipelineOptions& opt,
                              const std::string& exam_id, const char* view_name) {
    if (opt.use_truth_centers) {
        if (!annotated) {
            throw std::invalid_argument("exam " + exam_id + ": no annotated " + view_name +
                                        " center for ground-truth-center mode");
        }
        const double scale = raw.spacing / kReferenceSpacing;
        Detection d;
        d.cx = annotated->first * scale;
        d.cy = annotated->second * scale;
        d.score = 1.0;
        d.box = box_around(d.cx, d.cy, kDetectionBoxPx);
        return d;
    }
    if (detector == nullptr) {
        throw std::invalid_argument("exam " + exam_id + ": no detector for the " + view_name +
                                    " view");
    }
    const Detection d = select_detection(detector_forward(*detector, reference));
    if (d.cx < 0.0 || d.cy < 0.0 || d.cx >= static_cast<double>(reference.width) ||
        d.cy >= static_cast<double>(reference.height)) {
        throw std::runtime_error("exam " + exam_id + ": " + view_name +
                                 " detection outside image bounds");
    }
    return d;
}

}  // namespace detail

inline PipelinePrediction predict_exam(DetectorSet& detectors, KlClassifier& classifier,
                                       const ExamInput& exam, const PipelineOptions& opt = {}) {
    const bool need_pa = classifier.mode != ViewMode::lat_only;
    const bool need_lat = classifier.mode != ViewMode::pa_only;
    if (need_pa && !exam.pa) {
        throw std::invalid_argument("exam " + exam.exam_id + ": PA view required but missing");
    }
    if (need_lat && !exam.lat) {
        throw std::invalid_argument("exam " + exam.exam_id + ": LAT view required but missing");
    }

    PipelinePrediction out;
    out.exam_id = exam.exam_id;
    Raster pa_patch, lat_patch;
    const std::size_t input_px = classifier.config.input_px;
    if (need_pa) {
        const Raster ref = preprocess_view(*exam.pa);
        GridDetector* det = opt.use_truth_centers ? nullptr : &detectors.at(View::PA, exam.side);
        const Detection d =
            detail::locate_joint(ref, *exam.pa, exam.pa_center, det, opt, exam.exam_id, "PA");
        out.pa_detection = d;
        pa_patch = crop_view_patch(ref, d.cx, d.cy, opt.crop_px, input_px);
    }
    if (need_lat) {
        const Raster ref = preprocess_view(*exam.lat);
        GridDetector* det = opt.use_truth_centers ? nullptr : &detectors.at(View::LAT, exam.side);
        const Detection d =
            detail::locate_joint(ref, *exam.lat, exam.lat_center, det, opt, exam.exam_id, "LAT");
        out.lat_detection = d;
        lat_patch = crop_view_patch(ref, d.cx, d.cy, opt.crop_px, input_px);
    }

    const ClassifyResult r = classify_forward(classifier, pa_patch, lat_patch);
    out.grade = r.grade;
    out.scores = r.scores;
    return out;
}

struct PipelineFailure {
    std::string exam_id;
    std::string message;
};

struct PipelineBatchResult {
    std::vector<PipelinePrediction> predictions;
    std::vector<PipelineFailure> failures;
};

// A failed exam is recorded and skipped; the batch keeps going.
inline PipelineBatchResult predict_batch(DetectorSet& detectors, KlClassifier& classifier,
                                         const std::vector<ExamInput>& exams,
                                         const PipelineOptions& opt = {}) {
    PipelineBatchResult out;
    for (const ExamInput& exam : exams) {
        try {
            out.predictions.push_back(predict_exam(detectors, classifier, exam, opt));
        } catch (const std::exception& e) {
            out.failures.push_back({exam.exam_id, e.what()});
        }
    }
    return out;
}

}  // namespace klp
