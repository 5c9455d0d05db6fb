#pragma once

// Stage orchestration behind the CLI. Each run_* function reads its upstream
// artifacts from the run directory, produces this stage's outputs, and writes
// a report.json recording the stage seed, counts, metrics and artifact paths.
// Reports carry no wall-clock data, so identical config + seed + thread cap
// give byte-identical reports; timings go to the epoch CSVs only.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "klp/config.hpp"
#include "klp/evalstats.hpp"
#include "klp/pipeline.hpp"

namespace klp {

// ---------------------------------------------------------------------------
// Stage reports
// ---------------------------------------------------------------------------

struct StageReport {
    std::string stage;
    std::uint64_t seed = 0;
    std::map<std::string, double> metrics;
    std::map<std::string, std::int64_t> counts;
    std::map<std::string, std::string> artifacts;  // paths relative to the run dir
};

inline json stage_report_json(const StageReport& r) {
    json j;
    j["stage"] = r.stage;
    j["seed"] = r.seed;
    j["metrics"] = json::object();
    for (const auto& [k, v] : r.metrics) j["metrics"][k] = v;
    j["counts"] = json::object();
    for (const auto& [k, v] : r.counts) j["counts"][k] = v;
    j["artifacts"] = json::object();
    for (const auto& [k, v] : r.artifacts) j["artifacts"][k] = v;
    return j;
}

inline void write_stage_report(const std::filesystem::path& stage_dir, const StageReport& r) {
    std::filesystem::create_directories(stage_dir);
    const std::filesystem::path p = stage_dir / "report.json";
    std::ofstream out(p);
    if (!out) throw std::runtime_error(r.stage + ": cannot write " + p.string());
    out << stage_report_json(r).dump(2) << "\n";
    if (!out) throw std::runtime_error(r.stage + ": short write to " + p.string());
}

// Directory under the run dir that a stage writes its report into.
inline std::string stage_dir_name(const std::string& stage) {
    if (stage == "generate") return "generate";
    if (stage == "curate") return "curate";
    if (stage == "train-detector") return "detect";
    if (stage == "train-classifier") return "classify";
    if (stage == "infer") return "infer";
    if (stage == "eval") return "eval";
    if (stage == "reader-study") return "reader_study";
    throw std::invalid_argument("unknown stage: " + stage);
}

// The four detector slots, in the order they train and report.
inline const std::array<std::pair<View, Side>, 4> kViewSideOrder = {
    {{View::PA, Side::left},
     {View::PA, Side::right},
     {View::LAT, Side::left},
     {View::LAT, Side::right}}};

namespace detail {

inline std::filesystem::path run_path(const RunConfig& cfg, const std::string& rel) {
    return std::filesystem::path(cfg.output_dir) / rel;
}

inline std::ifstream open_artifact(const std::filesystem::path& p, const std::string& stage) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error(stage + ": missing upstream artifact " + p.string());
    return in;
}

inline std::ofstream open_output(const std::filesystem::path& p, const std::string& stage) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error(stage + ": cannot write " + p.string());
    return out;
}

inline void require_artifact(const std::filesystem::path& p, const std::string& stage) {
    if (!std::filesystem::exists(p)) {
        throw std::runtime_error(stage + ": missing upstream artifact " + p.string());
    }
}

inline std::string view_side_key(View v, Side s) { return to_string(v) + "_" + to_string(s); }

}  // namespace detail

// ---------------------------------------------------------------------------
// generate: render the phantom cohort
// ---------------------------------------------------------------------------

inline StageReport run_generate(const RunConfig& cfg) {
    const std::uint64_t seed = stage_seed(cfg, "generate");
    const PhantomConfig pcfg = make_phantom_config(cfg.canvas_px, seed);
    const CohortOutput out =
        generate_cohort(pcfg, cfg.cohort, detail::run_path(cfg, "cohort").string());

    StageReport r;
    r.stage = "generate";
    r.seed = seed;
    r.counts["manifest_rows"] = static_cast<std::int64_t>(out.manifest.size());
    r.counts["truth_rows"] = static_cast<std::int64_t>(out.truth.size());
    r.counts["patients"] = static_cast<std::int64_t>(cfg.cohort.n_patients);
    r.artifacts["images"] = "cohort/images";
    r.artifacts["manifest"] = "cohort/manifest.csv";
    r.artifacts["truth"] = "cohort/truth.csv";
    write_stage_report(detail::run_path(cfg, "generate"), r);
    return r;
}

// ---------------------------------------------------------------------------
// curate: exclusions, grade mapping, patient-level split
// ---------------------------------------------------------------------------

inline StageReport run_curate(const RunConfig& cfg) {
    const std::uint64_t seed = stage_seed(cfg, "curate");
    auto in = detail::open_artifact(detail::run_path(cfg, "cohort/manifest.csv"), "curate");
    const std::vector<ExamRecord> raw = read_manifest_csv(in);
    const CurationResult cur = apply_exclusions(raw, seed);
    const std::vector<ExamRecord> curated = map_grades(cur.records);
    const SplitAssignment assignment = split_by_patient(curated, cfg.split_fractions, seed);

    {
        auto out = detail::open_output(detail::run_path(cfg, "curate/curated.csv"), "curate");
        write_manifest_csv(out, curated);
    }
    {
        auto out = detail::open_output(detail::run_path(cfg, "curate/split.csv"), "curate");
        write_split_csv(out, assignment);
    }
    {
        auto out =
            detail::open_output(detail::run_path(cfg, "curate/exclusion_report.csv"), "curate");
        write_exclusion_report(out, cur.report);
    }

    const std::array<std::size_t, 3> patients = split_counts(assignment);
    StageReport r;
    r.stage = "curate";
    r.seed = seed;
    r.counts["input_rows"] = static_cast<std::int64_t>(raw.size());
    r.counts["curated_rows"] = static_cast<std::int64_t>(curated.size());
    r.counts["knee_visits"] = static_cast<std::int64_t>(count_knee_visits(curated));
    r.counts["excluded_flagged"] = cur.report.flagged;
    r.counts["excluded_missing_subgrade"] = cur.report.missing_subgrade;
    r.counts["excluded_unpaired_view"] = cur.report.unpaired_view;
    r.counts["removed_duplicate_rows"] = cur.report.duplicate_image;
    r.counts["train_patients"] = static_cast<std::int64_t>(patients[0]);
    r.counts["validation_patients"] = static_cast<std::int64_t>(patients[1]);
    r.counts["test_patients"] = static_cast<std::int64_t>(patients[2]);
    r.artifacts["curated"] = "curate/curated.csv";
    r.artifacts["split"] = "curate/split.csv";
    r.artifacts["exclusions"] = "curate/exclusion_report.csv";
    write_stage_report(detail::run_path(cfg, "curate"), r);
    return r;
}

// ---------------------------------------------------------------------------
// train-detector: one localizer per (view, side) on annotated truth centers
// ---------------------------------------------------------------------------

namespace detail {

struct AnnotationRow {
    View view = View::PA;
    Side side = Side::left;
    std::string role;  // train / validation / test
    std::string image_path;
    double center_x = 0.0;  // raw-image pixels
    double center_y = 0.0;
    double pixel_spacing = 0.2;
};

inline const std::string kAnnotationHeader =
    "view,side,role,image_path,center_x,center_y,pixel_spacing";

inline void write_annotation_csv(std::ostream& out, const std::vector<AnnotationRow>& rows) {
    out << kAnnotationHeader << "\n";
    for (const AnnotationRow& a : rows) {
        out << to_string(a.view) << "," << to_string(a.side) << "," << a.role << ","
            << a.image_path << "," << format_double(a.center_x) << "," << format_double(a.center_y)
            << "," << format_double(a.pixel_spacing) << "\n";
    }
}

inline std::vector<AnnotationRow> read_annotation_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("annotation csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kAnnotationHeader) {
        throw std::invalid_argument("annotation csv: unexpected header: " + line);
    }
    std::vector<AnnotationRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 7) {
            throw std::invalid_argument("annotation csv line " + std::to_string(lineno) +
                                        ": expected 7 fields");
        }
        AnnotationRow a;
        a.view = view_from_string(f[0]);
        a.side = side_from_string(f[1]);
        a.role = f[2];
        a.image_path = f[3];
        a.center_x = parse_double(f[4], "center_x");
        a.center_y = parse_double(f[5], "center_y");
        a.pixel_spacing = parse_double(f[6], "pixel_spacing");
        rows.push_back(std::move(a));
    }
    return rows;
}

// Loads one annotated raw image, carries it to the reference grid and scales
// the annotated center with it.
inline PreparedSample prepare_annotation(const DetectorConfig& cfg,
                                         const std::filesystem::path& cohort_dir,
                                         const AnnotationRow& row) {
    const Raster raw = read_pgm((cohort_dir / row.image_path).string(), row.pixel_spacing);
    const double scale = raw.spacing / kReferenceSpacing;
    return prepare_sample(cfg, preprocess_view(raw), row.center_x * scale, row.center_y * scale);
}

}  // namespace detail

inline StageReport run_train_detector(const RunConfig& cfg) {
    const std::uint64_t seed = stage_seed(cfg, "train-detector");
    const std::filesystem::path cohort = detail::run_path(cfg, "cohort");
    std::vector<TruthRow> truth;
    {
        auto in = detail::open_artifact(cohort / "truth.csv", "train-detector");
        truth = read_truth_csv(in);
    }
    std::map<std::string, double> spacing;
    {
        auto in = detail::open_artifact(cohort / "manifest.csv", "train-detector");
        for (const ExamRecord& m : read_manifest_csv(in)) spacing[m.image_path] = m.pixel_spacing;
    }

    const std::size_t need = cfg.detect_train_knees + cfg.detect_val_knees + cfg.detect_test_knees;
    struct ModelPlan {
        View view = View::PA;
        Side side = Side::left;
        std::vector<detail::AnnotationRow> train, val;
    };
    std::vector<ModelPlan> plans;
    std::vector<detail::AnnotationRow> split_rows;
    for (const auto& [view, side] : kViewSideOrder) {
        std::vector<const TruthRow*> candidates;
        for (const TruthRow& t : truth) {
            if (t.view == view && t.side == side) candidates.push_back(&t);
        }
        const std::string key = detail::view_side_key(view, side);
        if (candidates.size() < need) {
            throw std::runtime_error("train-detector: need " + std::to_string(need) +
                                     " annotated " + key + " images, cohort has " +
                                     std::to_string(candidates.size()));
        }
        std::vector<std::size_t> order(candidates.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(hash_mix(seed, "split_" + key));
        rng.shuffle(order);
        ModelPlan plan;
        plan.view = view;
        plan.side = side;
        for (std::size_t i = 0; i < need; ++i) {
            const TruthRow& t = *candidates[order[i]];
            const auto sp = spacing.find(t.image_path);
            if (sp == spacing.end()) {
                throw std::runtime_error("train-detector: " + t.image_path + " not in manifest");
            }
            detail::AnnotationRow a;
            a.view = view;
            a.side = side;
            a.role = i < cfg.detect_train_knees ? "train"
                     : i < cfg.detect_train_knees + cfg.detect_val_knees ? "validation"
                                                                         : "test";
            a.image_path = t.image_path;
            a.center_x = t.center_x;
            a.center_y = t.center_y;
            a.pixel_spacing = sp->second;
            if (a.role == "train") plan.train.push_back(a);
            if (a.role == "validation") plan.val.push_back(a);
            split_rows.push_back(std::move(a));
        }
        plans.push_back(std::move(plan));
    }
    {
        auto out = detail::open_output(detail::run_path(cfg, "detect/annotation_split.csv"),
                                       "train-detector");
        detail::write_annotation_csv(out, split_rows);
    }

    // The four models are independent; exceptions are carried out of the
    // worker threads by hand because run_tasks cannot.
    struct Outcome {
        DetectorTrainResult result;
        std::string error;
    };
    std::vector<Outcome> outcomes(plans.size());
    run_tasks(plans.size(), thread_cap(), [&](std::size_t i) {
        try {
            const ModelPlan& plan = plans[i];
            DetectorConfig dcfg = cfg.detector;
            dcfg.seed = hash_mix(seed, "model_" + detail::view_side_key(plan.view, plan.side));
            std::vector<PreparedSample> train, val;
            train.reserve(plan.train.size());
            val.reserve(plan.val.size());
            for (const auto& row : plan.train) {
                train.push_back(detail::prepare_annotation(dcfg, cohort, row));
            }
            for (const auto& row : plan.val) {
                val.push_back(detail::prepare_annotation(dcfg, cohort, row));
            }
            outcomes[i].result = train_detector(dcfg, train, val);
        } catch (const std::exception& e) {
            outcomes[i].error = e.what();
        }
    });

    StageReport r;
    r.stage = "train-detector";
    r.seed = seed;
    r.counts["train_images_per_model"] = static_cast<std::int64_t>(cfg.detect_train_knees);
    r.counts["val_images_per_model"] = static_cast<std::int64_t>(cfg.detect_val_knees);
    r.counts["test_images_per_model"] = static_cast<std::int64_t>(cfg.detect_test_knees);
    r.artifacts["annotation_split"] = "detect/annotation_split.csv";
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const std::string key = detail::view_side_key(plans[i].view, plans[i].side);
        if (!outcomes[i].error.empty()) {
            throw std::runtime_error("train-detector: " + key + ": " + outcomes[i].error);
        }
        DetectorTrainResult& res = outcomes[i].result;
        save_detector(detail::run_path(cfg, "detect/detector_" + key + ".bin").string(),
                      res.model);
        auto out = detail::open_output(detail::run_path(cfg, "detect/epochs_" + key + ".csv"),
                                       "train-detector");
        write_epoch_log(out, res.log);
        r.metrics["best_val_iou_" + key] = res.best_val_iou;
        r.counts["epochs_" + key] = static_cast<std::int64_t>(res.log.size());
        r.artifacts["detector_" + key] = "detect/detector_" + key + ".bin";
        r.artifacts["epochs_" + key] = "detect/epochs_" + key + ".csv";
    }
    write_stage_report(detail::run_path(cfg, "detect"), r);
    return r;
}

// ---------------------------------------------------------------------------
// train-classifier: patch preparation plus one training per view mode
// ---------------------------------------------------------------------------

namespace detail {

struct KneeCase {
    KneeKey key;
    const ExamRecord* pa = nullptr;
    const ExamRecord* lat = nullptr;
    int grade = 0;
};

// Curated rows grouped into knee-visits; curation guarantees the PA/LAT pair,
// this re-checks it so a hand-edited manifest cannot slip through.
inline std::vector<KneeCase> group_knees(const std::vector<ExamRecord>& records,
                                         const std::string& stage) {
    std::map<KneeKey, KneeCase> by_key;
    for (const ExamRecord& rec : records) {
        KneeCase& k = by_key[knee_of(rec)];
        k.key = knee_of(rec);
        if (rec.view == View::PA) {
            k.pa = &rec;
        } else {
            k.lat = &rec;
        }
        k.grade = static_cast<int>(rec.kl_grade);
    }
    std::vector<KneeCase> out;
    out.reserve(by_key.size());
    for (auto& [key, k] : by_key) {
        if (k.pa == nullptr || k.lat == nullptr) {
            throw std::runtime_error(stage + ": knee " + key.str() + " lacks a PA/LAT pair");
        }
        out.push_back(k);
    }
    return out;
}

inline std::map<std::string, std::pair<double, double>> truth_centers(
    const std::filesystem::path& cohort_dir, const std::string& stage) {
    auto in = open_artifact(cohort_dir / "truth.csv", stage);
    std::map<std::string, std::pair<double, double>> centers;
    for (const TruthRow& t : read_truth_csv(in)) {
        centers[t.image_path] = {t.center_x, t.center_y};
    }
    return centers;
}

inline DetectorSet load_detector_set(const RunConfig& cfg, const std::string& stage) {
    DetectorSet set;
    for (const auto& [view, side] : kViewSideOrder) {
        const std::string key = view_side_key(view, side);
        const std::filesystem::path p = run_path(cfg, "detect/detector_" + key + ".bin");
        require_artifact(p, stage);
        set.by_key.emplace(std::make_pair(view, side), load_detector(p.string()));
    }
    return set;
}

struct PatchOutcome {
    CaseSample sample;
    std::optional<Detection> pa_detection, lat_detection;
    std::string error;  // non-empty marks a failed knee
};

// Both fixed-size patches for one knee-visit: preprocess each view, pick the
// joint center (annotation or detector), crop at crop_px and resize to the
// model input. Centers travel in raw-image pixels and scale with resampling.
inline PatchOutcome prepare_knee(const std::filesystem::path& cohort_dir, const KneeCase& knee,
                                 std::size_t crop_px, std::size_t input_px,
                                 const std::map<std::string, std::pair<double, double>>& centers,
                                 DetectorSet* detectors) {
    PatchOutcome out;
    out.sample.case_id = knee.key.str();
    out.sample.grade = knee.grade;
    try {
        for (View view : {View::PA, View::LAT}) {
            const ExamRecord& rec = view == View::PA ? *knee.pa : *knee.lat;
            const Raster raw = read_pgm((cohort_dir / rec.image_path).string(),
                                        rec.pixel_spacing);
            const Raster ref = preprocess_view(raw);
            Detection det;
            if (detectors == nullptr) {
                const auto it = centers.find(rec.image_path);
                if (it == centers.end()) {
                    throw std::runtime_error("no annotated center for " + rec.image_path);
                }
                const double scale = raw.spacing / kReferenceSpacing;
                det.cx = it->second.first * scale;
                det.cy = it->second.second * scale;
                det.score = 1.0;
                det.box = box_around(det.cx, det.cy, kDetectionBoxPx);
            } else {
                det = select_detection(detector_forward(detectors->at(view, rec.side), ref));
            }
            Raster patch = crop_view_patch(ref, det.cx, det.cy, crop_px, input_px);
            if (view == View::PA) {
                out.pa_detection = det;
                out.sample.pa = std::move(patch);
            } else {
                out.lat_detection = det;
                out.sample.lat = std::move(patch);
            }
        }
    } catch (const std::exception& e) {
        out.error = e.what();
    }
    return out;
}

}  // namespace detail

inline StageReport run_train_classifier(const RunConfig& cfg) {
    const std::uint64_t seed = stage_seed(cfg, "train-classifier");
    const std::filesystem::path cohort = detail::run_path(cfg, "cohort");
    std::vector<ExamRecord> curated;
    {
        auto in = detail::open_artifact(detail::run_path(cfg, "curate/curated.csv"),
                                        "train-classifier");
        curated = read_manifest_csv(in);
    }
    SplitAssignment assignment;
    {
        auto in = detail::open_artifact(detail::run_path(cfg, "curate/split.csv"),
                                        "train-classifier");
        assignment = read_split_csv(in);
    }
    const auto centers = detail::truth_centers(cohort, "train-classifier");
    std::optional<DetectorSet> detectors;
    if (!cfg.use_truth_centers) {
        detectors = detail::load_detector_set(cfg, "train-classifier");
    }

    const std::vector<detail::KneeCase> knees = detail::group_knees(curated, "train-classifier");
    std::vector<CaseSample> train_cases, val_cases;
    std::int64_t dropped = 0;
    for (const detail::KneeCase& knee : knees) {
        const Split split = assignment.at(knee.key.patient_id);
        if (split == Split::test) continue;
        detail::PatchOutcome p =
            detail::prepare_knee(cohort, knee, cfg.crop_px, cfg.classifier.input_px, centers,
                                 detectors ? &*detectors : nullptr);
        if (!p.error.empty()) {
            ++dropped;
            continue;
        }
        (split == Split::train ? train_cases : val_cases).push_back(std::move(p.sample));
    }
    if (train_cases.empty()) throw std::runtime_error("train-classifier: empty training split");
    if (val_cases.empty()) throw std::runtime_error("train-classifier: empty validation split");

    // Early stopping scores a class-balanced subset of the validation split,
    // frozen once per run.
    std::vector<int> val_grades;
    val_grades.reserve(val_cases.size());
    for (const CaseSample& c : val_cases) val_grades.push_back(c.grade);
    std::vector<CaseSample> balanced_val;
    for (std::size_t i : build_balanced_validation(val_grades,
                                                   hash_mix(seed, "balanced_validation"))) {
        balanced_val.push_back(val_cases[i]);
    }

    struct Outcome {
        ClassifierTrainResult result;
        std::string error;
    };
    std::vector<Outcome> outcomes(cfg.view_modes.size());
    run_tasks(cfg.view_modes.size(), thread_cap(), [&](std::size_t i) {
        try {
            ClassifierConfig ccfg = cfg.classifier;
            ccfg.seed = hash_mix(seed, "mode_" + to_string(cfg.view_modes[i]));
            outcomes[i].result =
                train_classifier_restarts(ccfg, cfg.view_modes[i], train_cases, balanced_val);
        } catch (const std::exception& e) {
            outcomes[i].error = e.what();
        }
    });

    StageReport r;
    r.stage = "train-classifier";
    r.seed = seed;
    r.counts["train_cases"] = static_cast<std::int64_t>(train_cases.size());
    r.counts["validation_cases"] = static_cast<std::int64_t>(val_cases.size());
    r.counts["balanced_validation_cases"] = static_cast<std::int64_t>(balanced_val.size());
    r.counts["dropped_cases"] = dropped;
    r.counts["restarts"] = static_cast<std::int64_t>(cfg.classifier.restarts);
    r.counts["truth_centers"] = cfg.use_truth_centers ? 1 : 0;
    std::filesystem::create_directories(detail::run_path(cfg, "classify"));
    for (std::size_t i = 0; i < cfg.view_modes.size(); ++i) {
        const std::string mode = to_string(cfg.view_modes[i]);
        if (!outcomes[i].error.empty()) {
            throw std::runtime_error("train-classifier: " + mode + ": " + outcomes[i].error);
        }
        ClassifierTrainResult& res = outcomes[i].result;
        save_classifier(detail::run_path(cfg, "classify/classifier_" + mode + ".bin").string(),
                        res.model);
        auto out = detail::open_output(detail::run_path(cfg, "classify/epochs_" + mode + ".csv"),
                                       "train-classifier");
        write_epoch_log(out, res.log);
        r.metrics["best_val_accuracy_" + mode] = res.best_val_accuracy;
        r.counts["epochs_" + mode] = static_cast<std::int64_t>(res.log.size());
        r.artifacts["classifier_" + mode] = "classify/classifier_" + mode + ".bin";
        r.artifacts["epochs_" + mode] = "classify/epochs_" + mode + ".csv";
    }
    write_stage_report(detail::run_path(cfg, "classify"), r);
    return r;
}

// ---------------------------------------------------------------------------
// infer: grade the test split with every trained view mode
// ---------------------------------------------------------------------------

namespace detail {

struct PredictionRow {
    std::string case_id;
    int truth_grade = 0;
    int pred_grade = 0;
    std::array<double, kGradeClasses> scores{};
};

inline const std::string kPredictionHeader =
    "case_id,truth_grade,pred_grade,score_0,score_1,score_2,score_3,score_4";

inline void write_predictions_csv(std::ostream& out, const std::vector<PredictionRow>& rows) {
    out << kPredictionHeader << "\n";
    for (const PredictionRow& p : rows) {
        out << p.case_id << "," << p.truth_grade << "," << p.pred_grade;
        for (double s : p.scores) out << "," << format_double(s);
        out << "\n";
    }
}

inline std::vector<PredictionRow> read_predictions_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("predictions csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kPredictionHeader) {
        throw std::invalid_argument("predictions csv: unexpected header: " + line);
    }
    std::vector<PredictionRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 8) {
            throw std::invalid_argument("predictions csv line " + std::to_string(lineno) +
                                        ": expected 8 fields");
        }
        PredictionRow p;
        p.case_id = f[0];
        p.truth_grade = parse_int(f[1], "truth_grade");
        p.pred_grade = parse_int(f[2], "pred_grade");
        for (std::size_t i = 0; i < kGradeClasses; ++i) {
            p.scores[i] = parse_double(f[3 + i], "score");
        }
        rows.push_back(std::move(p));
    }
    return rows;
}

}  // namespace detail

inline StageReport run_infer(const RunConfig& cfg) {
    const std::uint64_t seed = stage_seed(cfg, "infer");
    const std::filesystem::path cohort = detail::run_path(cfg, "cohort");
    std::vector<ExamRecord> curated;
    {
        auto in = detail::open_artifact(detail::run_path(cfg, "curate/curated.csv"), "infer");
        curated = read_manifest_csv(in);
    }
    SplitAssignment assignment;
    {
        auto in = detail::open_artifact(detail::run_path(cfg, "curate/split.csv"), "infer");
        assignment = read_split_csv(in);
    }
    const auto centers = detail::truth_centers(cohort, "infer");
    std::optional<DetectorSet> detectors;
    if (!cfg.use_truth_centers) detectors = detail::load_detector_set(cfg, "infer");

    std::vector<detail::KneeCase> test_knees;
    for (const detail::KneeCase& knee : detail::group_knees(curated, "infer")) {
        if (assignment.at(knee.key.patient_id) == Split::test) test_knees.push_back(knee);
    }
    if (test_knees.empty()) throw std::runtime_error("infer: test split is empty");

    StageReport r;
    r.stage = "infer";
    r.seed = seed;
    r.counts["test_cases"] = static_cast<std::int64_t>(test_knees.size());
    r.counts["truth_centers"] = cfg.use_truth_centers ? 1 : 0;
    for (const ViewMode mode : cfg.view_modes) {
        const std::string name = to_string(mode);
        const std::filesystem::path model_path =
            detail::run_path(cfg, "classify/classifier_" + name + ".bin");
        detail::require_artifact(model_path, "infer");
        KlClassifier model = load_classifier(model_path.string());
        if (model.mode != mode) {
            throw std::runtime_error("infer: " + model_path.string() + " was trained in mode " +
                                     to_string(model.mode));
        }

        std::vector<detail::PredictionRow> predictions;
        std::vector<PipelineFailure> failures;
        for (const detail::KneeCase& knee : test_knees) {
            detail::PatchOutcome p =
                detail::prepare_knee(cohort, knee, cfg.crop_px, model.config.input_px, centers,
                                     detectors ? &*detectors : nullptr);
            if (!p.error.empty()) {
                failures.push_back({knee.key.str(), p.error});
                continue;
            }
            const ClassifyResult c = classify_forward(model, p.sample.pa, p.sample.lat);
            detail::PredictionRow row;
            row.case_id = p.sample.case_id;
            row.truth_grade = p.sample.grade;
            row.pred_grade = c.grade;
            row.scores = c.scores;
            predictions.push_back(std::move(row));
        }
        {
            auto out = detail::open_output(
                detail::run_path(cfg, "infer/predictions_" + name + ".csv"), "infer");
            detail::write_predictions_csv(out, predictions);
        }
        {
            auto out = detail::open_output(
                detail::run_path(cfg, "infer/failures_" + name + ".csv"), "infer");
            out << "case_id,error\n";
            for (const PipelineFailure& f : failures) out << f.exam_id << "," << f.message << "\n";
        }
        r.counts["predicted_" + name] = static_cast<std::int64_t>(predictions.size());
        r.counts["failed_" + name] = static_cast<std::int64_t>(failures.size());
        r.artifacts["predictions_" + name] = "infer/predictions_" + name + ".csv";
        r.artifacts["failures_" + name] = "infer/failures_" + name + ".csv";
    }
    write_stage_report(detail::run_path(cfg, "infer"), r);
    return r;
}

// ---------------------------------------------------------------------------
// eval: accuracy/kappa table, confusion matrices, detection table
// ---------------------------------------------------------------------------

namespace detail {

// Table rows keep the fixed order LAT / PA / PA+LAT.
inline std::string variant_label(ViewMode mode) {
    switch (mode) {
        case ViewMode::lat_only: return "LAT";
        case ViewMode::pa_only: return "PA";
        case ViewMode::multi: return "PA+LAT";
    }
    throw std::logic_error("unreachable");
}

inline std::vector<ViewMode> eval_mode_order(const std::vector<ViewMode>& configured) {
    std::vector<ViewMode> out;
    for (ViewMode m : {ViewMode::lat_only, ViewMode::pa_only, ViewMode::multi}) {
        if (std::find(configured.begin(), configured.end(), m) != configured.end()) {
            out.push_back(m);
        }
    }
    return out;
}

inline void write_confusion_csv(std::ostream& out, const ConfusionCounts& counts) {
    out << "truth,pred_0,pred_1,pred_2,pred_3,pred_4\n";
    for (int i = 0; i < kGradeCount; ++i) {
        out << i;
        for (int j = 0; j < kGradeCount; ++j) out << "," << counts[i][j];
        out << "\n";
    }
}

inline void write_confusion_normalized_csv(
    std::ostream& out, const std::array<std::array<double, kGradeCount>, kGradeCount>& m) {
    out << "truth,pred_0,pred_1,pred_2,pred_3,pred_4\n";
    for (int i = 0; i < kGradeCount; ++i) {
        out << i;
        for (int j = 0; j < kGradeCount; ++j) out << "," << format_double(m[i][j]);
        out << "\n";
    }
}

// 5x5 grayscale heatmap, brightest cell = largest value.
inline Raster confusion_heatmap(const std::array<std::array<double, kGradeCount>, kGradeCount>& m) {
    Raster img(kGradeCount, kGradeCount, 1.0);
    double mx = 0.0;
    for (int i = 0; i < kGradeCount; ++i)
        for (int j = 0; j < kGradeCount; ++j) mx = std::max(mx, m[i][j]);
    if (mx <= 0.0) return img;
    for (int i = 0; i < kGradeCount; ++i)
        for (int j = 0; j < kGradeCount; ++j) {
            img.at(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) =
                255.0 * m[i][j] / mx;
        }
    return img;
}

}  // namespace detail

inline StageReport run_eval(const RunConfig& cfg) {
    const std::uint64_t seed = stage_seed(cfg, "eval");
    StageReport r;
    r.stage = "eval";
    r.seed = seed;

    // Grading metrics per view mode.
    std::ostringstream accuracy_table;
    accuracy_table << "variant,accuracy,quadratic_kappa\n";
    for (const ViewMode mode : detail::eval_mode_order(cfg.view_modes)) {
        const std::string name = to_string(mode);
        auto in = detail::open_artifact(
            detail::run_path(cfg, "infer/predictions_" + name + ".csv"), "eval");
        const std::vector<detail::PredictionRow> rows = detail::read_predictions_csv(in);
        if (rows.empty()) {
            throw std::runtime_error("eval: no predictions for view mode " + name);
        }
        std::vector<int> truth, pred;
        truth.reserve(rows.size());
        pred.reserve(rows.size());
        for (const auto& p : rows) {
            truth.push_back(p.truth_grade);
            pred.push_back(p.pred_grade);
        }
        const double acc = accuracy(pred, truth);
        const double qwk = kappa(pred, truth, WeightScheme::quadratic);
        accuracy_table << detail::variant_label(mode) << "," << format_double(acc) << ","
                       << format_double(qwk) << "\n";

        const ConfusionCounts counts = confusion(pred, truth);
        const auto normalized = confusion_normalized(counts);
        {
            auto out = detail::open_output(
                detail::run_path(cfg, "eval/confusion_" + name + ".csv"), "eval");
            detail::write_confusion_csv(out, counts);
        }
        {
            auto out = detail::open_output(
                detail::run_path(cfg, "eval/confusion_" + name + "_normalized.csv"), "eval");
            detail::write_confusion_normalized_csv(out, normalized);
        }
        std::array<std::array<double, kGradeCount>, kGradeCount> raw{};
        for (int i = 0; i < kGradeCount; ++i)
            for (int j = 0; j < kGradeCount; ++j) raw[i][j] = static_cast<double>(counts[i][j]);
        write_pgm8(detail::run_path(cfg, "eval/confusion_" + name + ".pgm").string(),
                   detail::confusion_heatmap(raw));
        write_pgm8(detail::run_path(cfg, "eval/confusion_" + name + "_normalized.pgm").string(),
                   detail::confusion_heatmap(normalized));

        r.metrics["accuracy_" + name] = acc;
        r.metrics["quadratic_kappa_" + name] = qwk;
        r.counts["cases_" + name] = static_cast<std::int64_t>(rows.size());
        r.artifacts["confusion_" + name] = "eval/confusion_" + name + ".csv";
        r.artifacts["confusion_" + name + "_normalized"] =
            "eval/confusion_" + name + "_normalized.csv";
        r.artifacts["confusion_" + name + "_heatmap"] = "eval/confusion_" + name + ".pgm";
        r.artifacts["confusion_" + name + "_normalized_heatmap"] =
            "eval/confusion_" + name + "_normalized.pgm";
    }
    {
        auto out = detail::open_output(detail::run_path(cfg, "eval/table_accuracy.csv"), "eval");
        out << accuracy_table.str();
    }
    r.artifacts["table_accuracy"] = "eval/table_accuracy.csv";

    // Detection metrics on the held-out annotation split.
    const std::filesystem::path cohort = detail::run_path(cfg, "cohort");
    std::vector<detail::AnnotationRow> annotations;
    {
        auto in = detail::open_artifact(detail::run_path(cfg, "detect/annotation_split.csv"),
                                        "eval");
        annotations = detail::read_annotation_csv(in);
    }
    std::ostringstream detection_table;
    detection_table << "view,side,images,fraction_iou_ge_075,mean_iou,std_iou\n";
    for (const auto& [view, side] : kViewSideOrder) {
        const std::string key = detail::view_side_key(view, side);
        const std::filesystem::path model_path =
            detail::run_path(cfg, "detect/detector_" + key + ".bin");
        detail::require_artifact(model_path, "eval");
        GridDetector detector = load_detector(model_path.string());
        std::vector<PreparedSample> test;
        for (const detail::AnnotationRow& a : annotations) {
            if (a.view == view && a.side == side && a.role == "test") {
                test.push_back(detail::prepare_annotation(detector.config, cohort, a));
            }
        }
        if (test.empty()) {
            throw std::runtime_error("eval: annotation split has no test images for " + key);
        }
        const DetectionStats stats = evaluate_detection(detector, test);
        detection_table << to_string(view) << "," << to_string(side) << "," << stats.n << ","
                        << format_double(stats.fraction_at_075) << ","
                        << format_double(stats.mean_iou_100) << ","
                        << format_double(stats.std_iou_100) << "\n";
        r.metrics["fraction075_" + key] = stats.fraction_at_075;
        r.metrics["mean_iou_" + key] = stats.mean_iou_100;
        r.metrics["std_iou_" + key] = stats.std_iou_100;
        r.counts["detection_test_images_" + key] = static_cast<std::int64_t>(stats.n);
    }
    {
        auto out = detail::open_output(detail::run_path(cfg, "eval/table_detection.csv"), "eval");
        out << detection_table.str();
    }
    r.artifacts["table_detection"] = "eval/table_detection.csv";

    write_stage_report(detail::run_path(cfg, "eval"), r);
    return r;
}

// ---------------------------------------------------------------------------
// reader-study: simulated panel against reference truth and the model
// ---------------------------------------------------------------------------

inline StageReport run_reader_study(const RunConfig& cfg) {
    const std::uint64_t seed = stage_seed(cfg, "reader-study");
    // The model column comes from the strongest configured view mode.
    const std::vector<ViewMode> order = detail::eval_mode_order(cfg.view_modes);
    if (order.empty()) throw std::runtime_error("reader-study: no view modes configured");
    const ViewMode model_mode = order.back();
    const std::string model_name = to_string(model_mode);

    std::vector<detail::PredictionRow> rows;
    {
        auto in = detail::open_artifact(
            detail::run_path(cfg, "infer/predictions_" + model_name + ".csv"), "reader-study");
        rows = detail::read_predictions_csv(in);
    }
    if (cfg.reader_cases > rows.size()) {
        throw std::runtime_error("reader-study: requested " + std::to_string(cfg.reader_cases) +
                                 " cases but only " + std::to_string(rows.size()) +
                                 " test predictions exist");
    }
    std::vector<std::size_t> order_idx(rows.size());
    for (std::size_t i = 0; i < order_idx.size(); ++i) order_idx[i] = i;
    Rng rng(hash_mix(seed, "case_subset"));
    rng.shuffle(order_idx);
    order_idx.resize(cfg.reader_cases);
    std::sort(order_idx.begin(), order_idx.end());

    std::vector<SimulatedReaderModel> panel = default_reader_panel(hash_mix(seed, "panel"));
    for (SimulatedReaderModel& m : panel) m.noise_scale *= cfg.reader_noise_scale;

    std::vector<RatingRow> ratings;
    std::int64_t reader_labels = 0;
    for (const std::size_t i : order_idx) {
        const detail::PredictionRow& p = rows[i];
        for (const SimulatedReaderModel& m : panel) {
            ratings.push_back({p.case_id, m.reader_id, RaterRole::reader,
                               simulate_reader(m, p.case_id, p.truth_grade)});
            ++reader_labels;
        }
        ratings.push_back({p.case_id, "reference", RaterRole::reference, p.truth_grade});
        ratings.push_back({p.case_id, "model", RaterRole::model, p.pred_grade});
    }
    {
        auto out = detail::open_output(detail::run_path(cfg, "reader_study/ratings.csv"),
                                       "reader-study");
        write_ratings_csv(out, ratings);
    }

    const RatingsTable table = make_ratings_table(ratings);
    StageReport r;
    r.stage = "reader-study";
    r.seed = seed;
    std::ostringstream summary_csv;
    summary_csv << "scheme,mean_reader_pair,mean_model_reader,mean_reader_reference\n";
    for (const auto& [scheme, name] :
         {std::pair{WeightScheme::none, std::string("none")},
          std::pair{WeightScheme::linear, std::string("linear")},
          std::pair{WeightScheme::quadratic, std::string("quadratic")}}) {
        const auto matrix = pairwise_kappa_matrix(table, scheme);
        auto out = detail::open_output(detail::run_path(cfg, "reader_study/kappa_" + name + ".csv"),
                                       "reader-study");
        out << "rater";
        for (const std::string& id : table.rater_ids) out << "," << id;
        out << "\n";
        for (std::size_t i = 0; i < matrix.size(); ++i) {
            out << table.rater_ids[i];
            for (double v : matrix[i]) out << "," << format_double(v);
            out << "\n";
        }
        const ReaderStudySummary s = reader_study_summary(matrix, table.roles);
        summary_csv << name << "," << format_double(s.mean_reader_pair) << ","
                    << format_double(s.mean_model_reader) << ","
                    << format_double(s.mean_reader_reference) << "\n";
        r.metrics[name + "_mean_reader_pair"] = s.mean_reader_pair;
        r.metrics[name + "_mean_model_reader"] = s.mean_model_reader;
        r.metrics[name + "_mean_reader_reference"] = s.mean_reader_reference;
        r.artifacts["kappa_" + name] = "reader_study/kappa_" + name + ".csv";
    }
    {
        auto out = detail::open_output(detail::run_path(cfg, "reader_study/summary.csv"),
                                       "reader-study");
        out << summary_csv.str();
    }
    r.counts["cases"] = static_cast<std::int64_t>(cfg.reader_cases);
    r.counts["reader_labels"] = reader_labels;
    r.counts["raters"] = static_cast<std::int64_t>(table.rater_count());
    r.counts["model_view_mode_is_" + model_name] = 1;
    r.artifacts["ratings"] = "reader_study/ratings.csv";
    r.artifacts["summary"] = "reader_study/summary.csv";
    write_stage_report(detail::run_path(cfg, "reader_study"), r);
    return r;
}

}  // namespace klp
