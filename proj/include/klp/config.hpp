#pragma once

// Run configuration: one JSON document drives every pipeline stage. Sections
// mirror the module configs; any field left out keeps its default, unknown
// keys anywhere are an error so typos cannot silently fall back to defaults.
// Also hosts the structural JSON-schema validator used to check report.json
// against the schema shipped in schemas/.

#include <array>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "klp/classify.hpp"
#include "klp/curate.hpp"
#include "klp/detect.hpp"
#include "klp/phantom.hpp"

namespace klp {

using nlohmann::json;

struct RunConfig {
    // phantom
    std::size_t canvas_px = 1400;
    CohortSpec cohort;

    // curate
    std::array<double, 3> split_fractions = kDefaultSplitFractions;

    // detect
    DetectorConfig detector;
    std::size_t detect_train_knees = 210;
    std::size_t detect_val_knees = 45;
    std::size_t detect_test_knees = 45;

    // classify
    ClassifierConfig classifier;
    std::size_t crop_px = kPatchSize;
    bool use_truth_centers = false;
    std::vector<ViewMode> view_modes = {ViewMode::lat_only, ViewMode::pa_only, ViewMode::multi};

    // eval
    std::size_t reader_cases = 204;
    double reader_noise_scale = 1.0;

    std::uint64_t master_seed = 0;
    std::string output_dir = "run";
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& path, const std::string& what) {
    throw std::invalid_argument("config: " + path + ": " + what);
}

inline void require_known_keys(const json& obj, const std::string& path,
                               const std::set<std::string>& known) {
    for (const auto& [key, value] : obj.items()) {
        if (!known.count(key)) config_error(path, "unknown key '" + key + "'");
    }
}

template <typename T>
void assign(const json& obj, const std::string& path, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception& e) {
        config_error(path + "." + key, e.what());
    }
}

inline void assign_fractions(const json& obj, const std::string& path, const char* key,
                             std::array<double, 3>& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (!it->is_array() || it->size() != 3) {
        config_error(path + "." + key, "expected an array of 3 fractions");
    }
    for (std::size_t i = 0; i < 3; ++i) out[i] = (*it)[i].get<double>();
}

inline void assign_distribution(const json& obj, const std::string& path, const char* key,
                                std::array<double, 5>& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (!it->is_array() || it->size() != 5) {
        config_error(path + "." + key, "expected an array of 5 weights");
    }
    for (std::size_t i = 0; i < 5; ++i) out[i] = (*it)[i].get<double>();
}

inline void parse_augment(const json& obj, const std::string& path, AugmentSpec& spec) {
    require_known_keys(obj, path,
                       {"flip_prob", "rotation_deg", "translate_frac", "scale_lo", "scale_hi",
                        "shear_deg"});
    assign(obj, path, "flip_prob", spec.flip_prob);
    assign(obj, path, "rotation_deg", spec.rotation_deg);
    assign(obj, path, "translate_frac", spec.translate_frac);
    assign(obj, path, "scale_lo", spec.scale_lo);
    assign(obj, path, "scale_hi", spec.scale_hi);
    assign(obj, path, "shear_deg", spec.shear_deg);
}

}  // namespace detail

inline RunConfig parse_run_config(const json& doc) {
    if (!doc.is_object()) throw std::invalid_argument("config: document must be a JSON object");
    detail::require_known_keys(
        doc, "$", {"phantom", "curate", "detect", "classify", "eval", "seeds", "output_dir"});

    RunConfig cfg;
    if (auto it = doc.find("phantom"); it != doc.end()) {
        const json& p = *it;
        detail::require_known_keys(p, "phantom",
                                   {"canvas_px", "n_patients", "visits_per_patient",
                                    "grade_distribution", "flag_fraction",
                                    "missing_subgrade_fraction", "unpaired_fraction",
                                    "duplicate_fraction"});
        detail::assign(p, "phantom", "canvas_px", cfg.canvas_px);
        detail::assign(p, "phantom", "n_patients", cfg.cohort.n_patients);
        detail::assign(p, "phantom", "visits_per_patient", cfg.cohort.visits_per_patient);
        detail::assign_distribution(p, "phantom", "grade_distribution",
                                    cfg.cohort.grade_distribution);
        detail::assign(p, "phantom", "flag_fraction", cfg.cohort.flag_fraction);
        detail::assign(p, "phantom", "missing_subgrade_fraction",
                       cfg.cohort.missing_subgrade_fraction);
        detail::assign(p, "phantom", "unpaired_fraction", cfg.cohort.unpaired_fraction);
        detail::assign(p, "phantom", "duplicate_fraction", cfg.cohort.duplicate_fraction);
    }
    if (auto it = doc.find("curate"); it != doc.end()) {
        detail::require_known_keys(*it, "curate", {"split_fractions"});
        detail::assign_fractions(*it, "curate", "split_fractions", cfg.split_fractions);
    }
    if (auto it = doc.find("detect"); it != doc.end()) {
        const json& d = *it;
        detail::require_known_keys(d, "detect",
                                   {"input_px", "widths", "box_px", "lr", "batch_size",
                                    "patience", "max_epochs", "offset_loss_weight",
                                    "train_knees", "val_knees", "test_knees"});
        detail::assign(d, "detect", "input_px", cfg.detector.input_px);
        detail::assign(d, "detect", "widths", cfg.detector.widths);
        detail::assign(d, "detect", "box_px", cfg.detector.box_px);
        detail::assign(d, "detect", "lr", cfg.detector.lr);
        detail::assign(d, "detect", "batch_size", cfg.detector.batch_size);
        detail::assign(d, "detect", "patience", cfg.detector.patience);
        detail::assign(d, "detect", "max_epochs", cfg.detector.max_epochs);
        detail::assign(d, "detect", "offset_loss_weight", cfg.detector.offset_loss_weight);
        detail::assign(d, "detect", "train_knees", cfg.detect_train_knees);
        detail::assign(d, "detect", "val_knees", cfg.detect_val_knees);
        detail::assign(d, "detect", "test_knees", cfg.detect_test_knees);
    }
    if (auto it = doc.find("classify"); it != doc.end()) {
        const json& c = *it;
        detail::require_known_keys(
            c, "classify",
            {"input_px", "branch_widths", "trunk_widths", "fc_dim", "lr", "batch_size",
             "patience", "max_epochs", "warmup_epochs", "batches_per_epoch", "restarts",
             "augment", "crop_px", "use_truth_centers", "view_modes"});
        detail::assign(c, "classify", "input_px", cfg.classifier.input_px);
        detail::assign(c, "classify", "branch_widths", cfg.classifier.branch_widths);
        detail::assign(c, "classify", "trunk_widths", cfg.classifier.trunk_widths);
        detail::assign(c, "classify", "fc_dim", cfg.classifier.fc_dim);
        detail::assign(c, "classify", "lr", cfg.classifier.lr);
        detail::assign(c, "classify", "batch_size", cfg.classifier.batch_size);
        detail::assign(c, "classify", "patience", cfg.classifier.patience);
        detail::assign(c, "classify", "max_epochs", cfg.classifier.max_epochs);
        detail::assign(c, "classify", "warmup_epochs", cfg.classifier.warmup_epochs);
        detail::assign(c, "classify", "batches_per_epoch", cfg.classifier.batches_per_epoch);
        detail::assign(c, "classify", "restarts", cfg.classifier.restarts);
        if (auto a = c.find("augment"); a != c.end()) {
            detail::parse_augment(*a, "classify.augment", cfg.classifier.augment);
        }
        detail::assign(c, "classify", "crop_px", cfg.crop_px);
        detail::assign(c, "classify", "use_truth_centers", cfg.use_truth_centers);
        if (auto v = c.find("view_modes"); v != c.end()) {
            if (!v->is_array() || v->empty()) {
                detail::config_error("classify.view_modes", "expected a non-empty array");
            }
            cfg.view_modes.clear();
            for (const auto& m : *v) {
                try {
                    cfg.view_modes.push_back(view_mode_from_string(m.get<std::string>()));
                } catch (const std::exception& e) {
                    detail::config_error("classify.view_modes", e.what());
                }
            }
        }
    }
    if (auto it = doc.find("eval"); it != doc.end()) {
        detail::require_known_keys(*it, "eval", {"reader_cases", "reader_noise_scale"});
        detail::assign(*it, "eval", "reader_cases", cfg.reader_cases);
        detail::assign(*it, "eval", "reader_noise_scale", cfg.reader_noise_scale);
    }
    if (auto it = doc.find("seeds"); it != doc.end()) {
        detail::require_known_keys(*it, "seeds", {"master"});
        detail::assign(*it, "seeds", "master", cfg.master_seed);
    }
    detail::assign(doc, "$", "output_dir", cfg.output_dir);

    if (cfg.crop_px == 0) detail::config_error("classify.crop_px", "must be positive");
    if (cfg.reader_cases == 0) detail::config_error("eval.reader_cases", "must be positive");
    if (cfg.reader_noise_scale < 0.0) {
        detail::config_error("eval.reader_noise_scale", "must be non-negative");
    }
    if (cfg.detect_train_knees == 0 || cfg.detect_val_knees == 0 || cfg.detect_test_knees == 0) {
        detail::config_error("detect", "split sizes must be positive");
    }
    validate_detector_config(cfg.detector);
    validate_classifier_config(cfg.classifier);
    return cfg;
}

inline json load_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::invalid_argument("config: " + path + ": " + e.what());
    }
    return doc;
}

inline RunConfig load_run_config(const std::string& path) {
    return parse_run_config(load_config_json(path));
}

// Per-stage seeds all derive from the master seed so one --seed reshuffles
// the whole run coherently.
inline std::uint64_t stage_seed(const RunConfig& cfg, const std::string& stage) {
    return hash_mix(cfg.master_seed, "stage:" + stage);
}

// ---------------------------------------------------------------------------
// Structural JSON-schema validation (the subset the shipped schemas use:
// type, enum, properties, required, additionalProperties, items).
// ---------------------------------------------------------------------------

namespace detail {

inline bool matches_type(const json& value, const std::string& type) {
    if (type == "object") return value.is_object();
    if (type == "array") return value.is_array();
    if (type == "string") return value.is_string();
    if (type == "number") return value.is_number();
    if (type == "integer") return value.is_number_integer();
    if (type == "boolean") return value.is_boolean();
    if (type == "null") return value.is_null();
    throw std::invalid_argument("schema: unsupported type '" + type + "'");
}

}  // namespace detail

inline void validate_against_schema(const json& schema, const json& value,
                                    const std::string& path = "$") {
    if (!schema.is_object()) throw std::invalid_argument("schema: node at " + path + " must be an object");

    if (auto it = schema.find("type"); it != schema.end()) {
        if (!detail::matches_type(value, it->get<std::string>())) {
            throw std::invalid_argument(path + ": expected type " + it->get<std::string>());
        }
    }
    if (auto it = schema.find("enum"); it != schema.end()) {
        bool hit = false;
        for (const auto& candidate : *it) hit = hit || candidate == value;
        if (!hit) throw std::invalid_argument(path + ": value not in enum");
    }
    if (value.is_object()) {
        if (auto req = schema.find("required"); req != schema.end()) {
            for (const auto& key : *req) {
                if (!value.contains(key.get<std::string>())) {
                    throw std::invalid_argument(path + ": missing required key '" +
                                                key.get<std::string>() + "'");
                }
            }
        }
        const json props = schema.value("properties", json::object());
        for (const auto& [key, sub] : value.items()) {
            if (auto p = props.find(key); p != props.end()) {
                validate_against_schema(*p, sub, path + "." + key);
            } else if (auto ap = schema.find("additionalProperties"); ap != schema.end()) {
                if (ap->is_boolean()) {
                    if (!ap->get<bool>()) {
                        throw std::invalid_argument(path + ": unexpected key '" + key + "'");
                    }
                } else {
                    validate_against_schema(*ap, sub, path + "." + key);
                }
            }
        }
    }
    if (value.is_array()) {
        if (auto items = schema.find("items"); items != schema.end()) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                validate_against_schema(*items, value[i], path + "[" + std::to_string(i) + "]");
            }
        }
    }
}

}  // namespace klp
