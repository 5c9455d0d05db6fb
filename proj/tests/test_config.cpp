#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "klp/config.hpp"

using klp::json;
using klp::RunConfig;
using klp::ViewMode;

TEST_CASE("empty config keeps every default", "[config]") {
    const RunConfig cfg = klp::parse_run_config(json::object());
    CHECK(cfg.canvas_px == 1400);
    CHECK(cfg.cohort.n_patients == 10);
    CHECK(cfg.cohort.visits_per_patient == 2);
    CHECK(cfg.split_fractions == klp::kDefaultSplitFractions);
    CHECK(cfg.detector.input_px == 512);
    CHECK(cfg.detector.widths == std::vector<std::size_t>{4, 8, 16, 16, 16});
    CHECK(cfg.detector.box_px == 1000.0);
    CHECK(cfg.detect_train_knees == 210);
    CHECK(cfg.detect_val_knees == 45);
    CHECK(cfg.detect_test_knees == 45);
    CHECK(cfg.classifier.input_px == 256);
    CHECK(cfg.classifier.branch_widths == std::vector<std::size_t>{16, 32, 64});
    CHECK(cfg.classifier.trunk_widths == std::vector<std::size_t>{128, 128});
    CHECK(cfg.classifier.fc_dim == 128);
    CHECK(cfg.classifier.lr == 1e-5);
    CHECK(cfg.classifier.restarts == 10);
    CHECK(cfg.crop_px == klp::kPatchSize);
    CHECK_FALSE(cfg.use_truth_centers);
    REQUIRE(cfg.view_modes.size() == 3);
    CHECK(cfg.view_modes[0] == ViewMode::lat_only);
    CHECK(cfg.view_modes[1] == ViewMode::pa_only);
    CHECK(cfg.view_modes[2] == ViewMode::multi);
    CHECK(cfg.reader_cases == 204);
    CHECK(cfg.reader_noise_scale == 1.0);
    CHECK(cfg.master_seed == 0);
    CHECK(cfg.output_dir == "run");
}

TEST_CASE("every section overrides its fields", "[config]") {
    const json doc = {
        {"phantom",
         {{"canvas_px", 320},
          {"n_patients", 25},
          {"visits_per_patient", 1},
          {"grade_distribution", {1, 1, 1, 1, 1}},
          {"flag_fraction", 0.1},
          {"missing_subgrade_fraction", 0.0},
          {"unpaired_fraction", 0.0},
          {"duplicate_fraction", 0.0}}},
        {"curate", {{"split_fractions", {0.5, 0.3, 0.2}}}},
        {"detect",
         {{"input_px", 64},
          {"widths", {4, 8}},
          {"box_px", 50.0},
          {"lr", 3e-4},
          {"batch_size", 8},
          {"patience", 5},
          {"max_epochs", 12},
          {"offset_loss_weight", 2.0},
          {"train_knees", 20},
          {"val_knees", 5},
          {"test_knees", 5}}},
        {"classify",
         {{"input_px", 64},
          {"branch_widths", {8, 12}},
          {"trunk_widths", {16}},
          {"fc_dim", 24},
          {"lr", 3e-4},
          {"batch_size", 8},
          {"patience", 7},
          {"max_epochs", 40},
          {"warmup_epochs", 4},
          {"batches_per_epoch", 11},
          {"restarts", 2},
          {"augment", {{"flip_prob", 0.25}, {"rotation_deg", 5.0}}},
          {"crop_px", 350},
          {"use_truth_centers", true},
          {"view_modes", {"multi", "pa_only"}}}},
        {"eval", {{"reader_cases", 32}, {"reader_noise_scale", 0.0}}},
        {"seeds", {{"master", 99}}},
        {"output_dir", "elsewhere"},
    };
    const RunConfig cfg = klp::parse_run_config(doc);
    CHECK(cfg.canvas_px == 320);
    CHECK(cfg.cohort.n_patients == 25);
    CHECK(cfg.cohort.visits_per_patient == 1);
    CHECK(cfg.cohort.grade_distribution == std::array<double, 5>{1, 1, 1, 1, 1});
    CHECK(cfg.cohort.flag_fraction == 0.1);
    CHECK(cfg.split_fractions == std::array<double, 3>{0.5, 0.3, 0.2});
    CHECK(cfg.detector.input_px == 64);
    CHECK(cfg.detector.widths == std::vector<std::size_t>{4, 8});
    CHECK(cfg.detector.box_px == 50.0);
    CHECK(cfg.detect_train_knees == 20);
    CHECK(cfg.classifier.branch_widths == std::vector<std::size_t>{8, 12});
    CHECK(cfg.classifier.trunk_widths == std::vector<std::size_t>{16});
    CHECK(cfg.classifier.augment.flip_prob == 0.25);
    CHECK(cfg.classifier.augment.rotation_deg == 5.0);
    CHECK(cfg.classifier.augment.translate_frac == 0.05);  // untouched default
    CHECK(cfg.classifier.restarts == 2);
    CHECK(cfg.crop_px == 350);
    CHECK(cfg.use_truth_centers);
    REQUIRE(cfg.view_modes.size() == 2);
    CHECK(cfg.view_modes[0] == ViewMode::multi);
    CHECK(cfg.view_modes[1] == ViewMode::pa_only);
    CHECK(cfg.reader_cases == 32);
    CHECK(cfg.reader_noise_scale == 0.0);
    CHECK(cfg.master_seed == 99);
    CHECK(cfg.output_dir == "elsewhere");
}

TEST_CASE("unknown keys are rejected with their path", "[config]") {
    CHECK_THROWS_WITH(klp::parse_run_config({{"phantoms", json::object()}}),
                      Catch::Matchers::ContainsSubstring("$") &&
                          Catch::Matchers::ContainsSubstring("unknown key 'phantoms'"));
    CHECK_THROWS_WITH(klp::parse_run_config({{"phantom", {{"canvas", 100}}}}),
                      Catch::Matchers::ContainsSubstring("phantom") &&
                          Catch::Matchers::ContainsSubstring("unknown key 'canvas'"));
    CHECK_THROWS_WITH(
        klp::parse_run_config({{"classify", {{"augment", {{"flips", 0.5}}}}}}),
        Catch::Matchers::ContainsSubstring("classify.augment") &&
            Catch::Matchers::ContainsSubstring("unknown key 'flips'"));
}

TEST_CASE("type and range errors carry the offending path", "[config]") {
    CHECK_THROWS_WITH(klp::parse_run_config({{"classify", {{"lr", "fast"}}}}),
                      Catch::Matchers::ContainsSubstring("classify.lr"));
    CHECK_THROWS_WITH(klp::parse_run_config({{"curate", {{"split_fractions", {0.5, 0.5}}}}}),
                      Catch::Matchers::ContainsSubstring("curate.split_fractions"));
    CHECK_THROWS_WITH(klp::parse_run_config({{"classify", {{"crop_px", 0}}}}),
                      Catch::Matchers::ContainsSubstring("classify.crop_px"));
    CHECK_THROWS_WITH(klp::parse_run_config({{"eval", {{"reader_cases", 0}}}}),
                      Catch::Matchers::ContainsSubstring("eval.reader_cases"));
    CHECK_THROWS_WITH(klp::parse_run_config({{"eval", {{"reader_noise_scale", -0.5}}}}),
                      Catch::Matchers::ContainsSubstring("eval.reader_noise_scale"));
    CHECK_THROWS_WITH(klp::parse_run_config({{"detect", {{"train_knees", 0}}}}),
                      Catch::Matchers::ContainsSubstring("detect"));
    CHECK_THROWS_WITH(klp::parse_run_config({{"classify", {{"view_modes", json::array()}}}}),
                      Catch::Matchers::ContainsSubstring("classify.view_modes"));
    CHECK_THROWS_WITH(klp::parse_run_config({{"classify", {{"view_modes", {"frontal"}}}}}),
                      Catch::Matchers::ContainsSubstring("classify.view_modes"));
    CHECK_THROWS_AS(klp::parse_run_config(json::array()), std::invalid_argument);
}

TEST_CASE("stage seeds derive from the master seed", "[config]") {
    RunConfig a;
    a.master_seed = 7;
    RunConfig b;
    b.master_seed = 8;
    CHECK(klp::stage_seed(a, "generate") == klp::stage_seed(a, "generate"));
    CHECK(klp::stage_seed(a, "generate") != klp::stage_seed(a, "curate"));
    CHECK(klp::stage_seed(a, "generate") != klp::stage_seed(b, "generate"));
}

TEST_CASE("schema validator enforces the structural subset", "[config]") {
    const json schema = {
        {"type", "object"},
        {"required", {"name", "values"}},
        {"additionalProperties", false},
        {"properties",
         {{"name", {{"type", "string"}, {"enum", {"alpha", "beta"}}}},
          {"values", {{"type", "array"}, {"items", {{"type", "number"}}}}},
          {"extra", {{"type", "object"}, {"additionalProperties", {{"type", "integer"}}}}}}},
    };

    CHECK_NOTHROW(klp::validate_against_schema(
        schema, {{"name", "alpha"}, {"values", {1.0, 2.5}}, {"extra", {{"k", 3}}}}));
    CHECK_THROWS_WITH(klp::validate_against_schema(schema, {{"name", "alpha"}}),
                      Catch::Matchers::ContainsSubstring("missing required key 'values'"));
    CHECK_THROWS_WITH(
        klp::validate_against_schema(schema, {{"name", "gamma"}, {"values", json::array()}}),
        Catch::Matchers::ContainsSubstring("$.name") &&
            Catch::Matchers::ContainsSubstring("enum"));
    CHECK_THROWS_WITH(
        klp::validate_against_schema(schema,
                                     {{"name", "alpha"}, {"values", {1.0, "two"}}}),
        Catch::Matchers::ContainsSubstring("$.values[1]"));
    CHECK_THROWS_WITH(
        klp::validate_against_schema(
            schema, {{"name", "alpha"}, {"values", json::array()}, {"rogue", 1}}),
        Catch::Matchers::ContainsSubstring("unexpected key 'rogue'"));
    CHECK_THROWS_WITH(
        klp::validate_against_schema(
            schema,
            {{"name", "alpha"}, {"values", json::array()}, {"extra", {{"k", 0.5}}}}),
        Catch::Matchers::ContainsSubstring("$.extra.k"));
}

TEST_CASE("shipped report schema accepts stage reports and rejects drift", "[config]") {
    std::ifstream in(std::string(KLP_SOURCE_DIR) + "/schemas/report.schema.json");
    REQUIRE(in);
    json schema;
    in >> schema;

    json report = {
        {"stage", "curate"},
        {"seed", 12345},
        {"metrics", {{"accuracy_multi", 0.7}}},
        {"counts", {{"cases", 42}}},
        {"artifacts", {{"split", "curate/split.csv"}}},
    };
    CHECK_NOTHROW(klp::validate_against_schema(schema, report));

    json bad_stage = report;
    bad_stage["stage"] = "mystery";
    CHECK_THROWS_AS(klp::validate_against_schema(schema, bad_stage), std::invalid_argument);

    json missing = report;
    missing.erase("artifacts");
    CHECK_THROWS_AS(klp::validate_against_schema(schema, missing), std::invalid_argument);

    json extra = report;
    extra["elapsed_seconds"] = 1.5;
    CHECK_THROWS_AS(klp::validate_against_schema(schema, extra), std::invalid_argument);

    json bad_metric = report;
    bad_metric["metrics"]["note"] = "fast";
    CHECK_THROWS_AS(klp::validate_against_schema(schema, bad_metric), std::invalid_argument);

    json bad_count = report;
    bad_count["counts"]["cases"] = 1.5;
    CHECK_THROWS_AS(klp::validate_against_schema(schema, bad_count), std::invalid_argument);
}

TEST_CASE("config file loading reports unreadable or invalid JSON", "[config]") {
    CHECK_THROWS_WITH(klp::load_run_config("/nonexistent/config.json"),
                      Catch::Matchers::ContainsSubstring("cannot open"));
    const auto path =
        (std::filesystem::temp_directory_path() / "klp_bad_config.json").string();
    {
        std::ofstream out(path);
        out << "{ not json";
    }
    CHECK_THROWS_AS(klp::load_run_config(path), std::invalid_argument);
    std::filesystem::remove(path);
}
