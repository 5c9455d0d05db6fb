#pragma once

// Synthetic knee-radiograph generator. Two bone silhouettes around a joint
// gap whose geometry is driven by a latent severity s in [0,4]: the gap
// narrows, marginal bumps appear and grow, and a subchondral bright band
// strengthens. The LAT view is rendered with attenuated bump contrast, extra
// noise and occlusion blobs so it carries less usable signal than the PA
// view, plus one LAT-only posterior bump so the two views together carry
// more than either alone. Every draw comes from a stream derived from
// (seed, patient, visit, side, view), so generation order and thread count
// cannot change a single output byte.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "klp/common.hpp"
#include "klp/manifest.hpp"
#include "klp/raster.hpp"

namespace klp {

struct PhantomConfig {
    std::size_t canvas_px = 1400;
    double spacing = 0.2;    // mm per pixel
    double jitter_px = 150;  // center offset range, per axis
    double box_px = 1000;    // downstream detection box; canvas must contain it at any jitter

    // severity ramps, in pixels at the configured spacing
    double gap_max_px = 40;  // joint-space width at s = 0
    double gap_min_px = 10;  // at s = 4
    double bone_halfwidth_px = 330;
    double bone_length_px = 520;
    double condyle_curve_px = 26;  // femoral edge bow
    double plateau_curve_px = 9;   // tibial edge bow
    double edge_soft_px = 2.5;

    double background_level = 6000;  // 16-bit intensity units
    double bone_level = 30000;

    double osteo_base_px = 5;  // bump radius at s = 1
    double osteo_grow_px = 3;  // extra radius per severity unit
    double osteo_contrast = 11000;
    double scler_coef = 2200;  // band amplitude per severity unit
    double scler_band_px = 14;
    double noise_sigma = 700;

    // LAT degradation and its private signal
    double lat_osteo_atten = 0.35;
    double lat_noise_mult = 2.2;
    int lat_occlusion_count = 4;
    double lat_occlusion_depth = 0.55;     // fraction of bone level removed at blob center
    double lat_posterior_contrast = 2600;  // per severity unit

    std::uint64_t seed = 0;
};

// Scales every geometric field of the default configuration by
// canvas_px / 1400 so small canvases keep the same scene proportions.
inline PhantomConfig make_phantom_config(std::size_t canvas_px, std::uint64_t seed) {
    PhantomConfig cfg;
    const double f = static_cast<double>(canvas_px) / static_cast<double>(cfg.canvas_px);
    cfg.canvas_px = canvas_px;
    cfg.seed = seed;
    for (double* field : {&cfg.jitter_px, &cfg.box_px, &cfg.gap_max_px, &cfg.gap_min_px,
                          &cfg.bone_halfwidth_px, &cfg.bone_length_px, &cfg.condyle_curve_px,
                          &cfg.plateau_curve_px, &cfg.edge_soft_px, &cfg.osteo_base_px,
                          &cfg.osteo_grow_px, &cfg.scler_band_px}) {
        *field *= f;
    }
    return cfg;
}

inline void validate_phantom_config(const PhantomConfig& cfg) {
    if (cfg.canvas_px == 0 || cfg.spacing <= 0.0) {
        throw std::invalid_argument("phantom: canvas and spacing must be positive");
    }
    if (!(cfg.gap_max_px > cfg.gap_min_px) || cfg.gap_min_px <= 0.0) {
        throw std::invalid_argument("phantom: gap ramp needs gap_max > gap_min > 0");
    }
    if (static_cast<double>(cfg.canvas_px) < cfg.box_px + 2.0 * cfg.jitter_px) {
        throw std::invalid_argument(
            "phantom: canvas cannot contain the detection box at maximal jitter");
    }
}

// Joint-space width (px) for severity s: a linear ramp from gap_max to gap_min.
inline double joint_gap_px(const PhantomConfig& cfg, double s) {
    return cfg.gap_max_px - (cfg.gap_max_px - cfg.gap_min_px) * s / 4.0;
}

struct PhantomExam {
    std::string patient_id;
    int visit = 0;
    Side side = Side::left;
    double latent_s = 0.0;
    int kl_grade = 0;
    double center_x[2] = {0, 0};  // indexed by View
    double center_y[2] = {0, 0};
    Raster image[2];  // indexed by View

    const Raster& view(View v) const { return image[static_cast<int>(v)]; }
    double cx(View v) const { return center_x[static_cast<int>(v)]; }
    double cy(View v) const { return center_y[static_cast<int>(v)]; }
};

namespace detail {

inline double smooth_step(double t) { return 1.0 / (1.0 + std::exp(-t)); }

inline void render_view(const PhantomConfig& cfg, View view, double s, Rng& rng, Raster& img,
                        double& out_cx, double& out_cy) {
    const double n = static_cast<double>(cfg.canvas_px);
    img = Raster(cfg.canvas_px, cfg.canvas_px, cfg.spacing);

    const double cx = n / 2.0 + rng.uniform(-cfg.jitter_px, cfg.jitter_px);
    const double cy = n / 2.0 + rng.uniform(-cfg.jitter_px, cfg.jitter_px);
    const double intensity_scale = rng.uniform(0.9, 1.1);
    out_cx = cx;
    out_cy = cy;

    const double gap_half = joint_gap_px(cfg, s) / 2.0;
    const double hw = cfg.bone_halfwidth_px;
    const double len = cfg.bone_length_px;
    const double soft = cfg.edge_soft_px;
    const double bone_add = cfg.bone_level - cfg.background_level;

    // marginal bumps: ceil(s) of them, alternating corners, jittered
    struct Bump {
        double x, y, r, contrast;
    };
    std::vector<Bump> bumps;
    const int n_osteo = static_cast<int>(std::ceil(s));
    const double osteo_r = cfg.osteo_base_px + cfg.osteo_grow_px * s;
    const double osteo_c =
        cfg.osteo_contrast * (view == View::LAT ? cfg.lat_osteo_atten : 1.0);
    for (int k = 0; k < n_osteo; ++k) {
        const double side_sign = (k % 2 == 0) ? 1.0 : -1.0;   // lateral / medial margin
        const double bone_sign = (k / 2 % 2 == 0) ? -1.0 : 1.0;  // femur / tibia corner
        const double edge_gap =
            gap_half + (bone_sign < 0 ? cfg.condyle_curve_px : cfg.plateau_curve_px);
        Bump b;
        b.x = cx + side_sign * hw + rng.uniform(-3.0, 3.0);
        b.y = cy + bone_sign * edge_gap + rng.uniform(-3.0, 3.0);
        b.r = osteo_r;
        b.contrast = osteo_c;
        bumps.push_back(b);
    }
    if (view == View::LAT) {
        // posterior bump: the one feature the PA projection does not carry
        Bump b;
        b.x = cx - hw * 0.55 + rng.uniform(-4.0, 4.0);
        b.y = cy + gap_half + cfg.plateau_curve_px * 0.3 + rng.uniform(-4.0, 4.0);
        b.r = 4.0 + 2.5 * s;
        b.contrast = cfg.lat_posterior_contrast * s;
        bumps.push_back(b);
    }

    struct Occlusion {
        double x, y, r, depth;
    };
    std::vector<Occlusion> occlusions;
    if (view == View::LAT) {
        for (int k = 0; k < cfg.lat_occlusion_count; ++k) {
            Occlusion o;
            o.x = cx + rng.uniform(-hw, hw);
            // concentrated around the joint line, where they do the most damage
            o.y = cy + rng.uniform(-len * 0.4, len * 0.4);
            o.r = n * rng.uniform(0.05, 0.1);
            o.depth = cfg.lat_occlusion_depth * cfg.bone_level * rng.uniform(0.6, 1.0);
            occlusions.push_back(o);
        }
    }

    const double scler_amp = cfg.scler_coef * s;
    const double noise_sigma =
        cfg.noise_sigma * (view == View::LAT ? cfg.lat_noise_mult : 1.0);

    for (std::size_t yi = 0; yi < cfg.canvas_px; ++yi) {
        const double y = static_cast<double>(yi);
        double* row = img.samples.data() + yi * cfg.canvas_px;
        for (std::size_t xi = 0; xi < cfg.canvas_px; ++xi) {
            const double x = static_cast<double>(xi);
            double v = cfg.background_level;
            const double u = (x - cx) / hw;
            if (std::abs(u) < 1.0 + 8.0 * soft / hw) {
                const double edge_x = smooth_step((hw - std::abs(x - cx)) / (2.0 * soft));
                const double gap_f = gap_half + cfg.condyle_curve_px * u * u;
                const double gap_t = gap_half + cfg.plateau_curve_px * u * u;
                // femur: from cy-len up to the curved lower edge
                const double femur = smooth_step((y - (cy - len)) / (4.0 * soft)) *
                                     smooth_step(((cy - gap_f) - y) / soft);
                // tibia: from the curved upper edge down to cy+len
                const double tibia = smooth_step((y - (cy + gap_t)) / soft) *
                                     smooth_step(((cy + len) - y) / (4.0 * soft));
                double bone = femur + tibia;
                if (bone > 1.0) bone = 1.0;
                v += bone_add * bone * edge_x;
                // subchondral band below the tibial edge
                if (scler_amp > 0.0) {
                    const double d = y - (cy + gap_t + cfg.scler_band_px);
                    v += scler_amp * edge_x * tibia *
                         std::exp(-d * d / (2.0 * cfg.scler_band_px * cfg.scler_band_px));
                }
            }
            for (const auto& b : bumps) {
                const double dx = x - b.x, dy = y - b.y;
                const double d2 = dx * dx + dy * dy;
                if (d2 < 9.0 * b.r * b.r) v += b.contrast * std::exp(-d2 / (2.0 * b.r * b.r));
            }
            for (const auto& o : occlusions) {
                const double dx = x - o.x, dy = y - o.y;
                const double d2 = dx * dx + dy * dy;
                if (d2 < 9.0 * o.r * o.r) v -= o.depth * std::exp(-d2 / (2.0 * o.r * o.r));
            }
            row[xi] = v * intensity_scale;
        }
    }
    for (double& v : img.samples) {
        v += rng.normal(0.0, noise_sigma);
        v = std::clamp(v, 0.0, 65535.0);
    }
}

inline std::uint64_t exam_stream(const PhantomConfig& cfg, const std::string& patient_id,
                                 int visit, Side side, std::uint64_t salt) {
    std::uint64_t h = hash_mix(cfg.seed, patient_id);
    h = hash_mix(h, static_cast<std::uint64_t>(visit));
    h = hash_mix(h, static_cast<std::uint64_t>(side));
    return hash_mix(h, salt);
}

}  // namespace detail

// Renders both views of one knee at one visit. `salt` distinguishes repeat
// acquisitions of the same knee (duplicate manifest rows).
inline PhantomExam generate_exam(const PhantomConfig& cfg, const std::string& patient_id,
                                 int visit, Side side, double s, std::uint64_t salt = 0) {
    validate_phantom_config(cfg);
    if (s < 0.0 || s > 4.0) {
        throw std::invalid_argument("generate_exam: latent severity outside [0,4]");
    }
    PhantomExam exam;
    exam.patient_id = patient_id;
    exam.visit = visit;
    exam.side = side;
    exam.latent_s = s;
    exam.kl_grade = std::clamp(static_cast<int>(std::lround(s)), 0, 4);
    const std::uint64_t base = detail::exam_stream(cfg, patient_id, visit, side, salt);
    for (View view : {View::PA, View::LAT}) {
        const int vi = static_cast<int>(view);
        Rng rng(hash_mix(base, static_cast<std::uint64_t>(vi) + 17));
        detail::render_view(cfg, view, s, rng, exam.image[vi], exam.center_x[vi],
                            exam.center_y[vi]);
    }
    return exam;
}

// ---------------------------------------------------------------------------
// Fixed pixel-statistic probe: estimates the joint gap width in a band
// around a known center, then bins it on the configured severity ramp. Not
// learned; used to compare how much grade signal each view exposes.
// ---------------------------------------------------------------------------

inline double estimate_gap_width(const Raster& img, double cx, double cy) {
    const long half_cols = std::max<long>(3, static_cast<long>(img.width) / 24);
    const long half_rows = std::max<long>(8, static_cast<long>(img.height) / 12);
    const long x0 = std::max<long>(0, static_cast<long>(std::lround(cx)) - half_cols);
    const long x1 = std::min<long>(static_cast<long>(img.width) - 1,
                                   static_cast<long>(std::lround(cx)) + half_cols);
    const long y0 = std::max<long>(0, static_cast<long>(std::lround(cy)) - half_rows);
    const long y1 = std::min<long>(static_cast<long>(img.height) - 1,
                                   static_cast<long>(std::lround(cy)) + half_rows);
    if (x1 <= x0 || y1 <= y0) throw std::invalid_argument("estimate_gap_width: window empty");
    // Threshold halfway between the dark floor (2nd percentile, the gap) and
    // the median (bone fills most of the window). Percentiles rather than
    // min/max keep bright bumps and bands from dragging the threshold up.
    std::vector<double> window;
    window.reserve(static_cast<std::size_t>((x1 - x0 + 1) * (y1 - y0 + 1)));
    for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x)
            window.push_back(img.samples[static_cast<std::size_t>(y) * img.width +
                                         static_cast<std::size_t>(x)]);
    auto percentile = [&window](double p) {
        const auto k = static_cast<std::size_t>(p * static_cast<double>(window.size() - 1));
        std::nth_element(window.begin(), window.begin() + k, window.end());
        return window[k];
    };
    // midpoint of gap floor and bone plateau: the 50% crossing of a logistic
    // edge sits at the nominal edge position, so the count tracks the
    // geometric gap independently of edge softness
    const double floor_v = percentile(0.02);
    const double thr = floor_v + 0.5 * (percentile(0.5) - floor_v);
    double total = 0.0;
    for (long x = x0; x <= x1; ++x) {
        long count = 0;
        for (long y = y0; y <= y1; ++y) {
            if (img.samples[static_cast<std::size_t>(y) * img.width +
                            static_cast<std::size_t>(x)] < thr)
                ++count;
        }
        total += static_cast<double>(count);
    }
    return total / static_cast<double>(x1 - x0 + 1);
}

inline int grade_from_gap_width(const PhantomConfig& cfg, double width_px) {
    const double s_hat =
        (cfg.gap_max_px - width_px) / (cfg.gap_max_px - cfg.gap_min_px) * 4.0;
    return std::clamp(static_cast<int>(std::lround(s_hat)), 0, 4);
}

// ---------------------------------------------------------------------------
// Simulated readers
// ---------------------------------------------------------------------------

struct SimulatedReaderModel {
    std::string reader_id;
    double boundary01_swap = 0.25;  // 0<->1 boundary, the hardest call
    double boundary_swap = 0.12;    // every other adjacent boundary
    double noise_scale = 1.0;       // multiplies both swap probabilities
    double bias = 0.0;              // shifts swaps toward higher (+) or lower (-) grades
    std::uint64_t seed = 0;
};

// One read of one case. Swaps move at most one grade, decided by a draw from
// the (reader seed, case id) stream, so the same reader rereads a case
// identically.
inline int simulate_reader(const SimulatedReaderModel& model, const std::string& case_id,
                           int true_grade) {
    if (true_grade < 0 || true_grade > 4) {
        throw std::invalid_argument("simulate_reader: grade outside the scale");
    }
    auto boundary = [&model](int lower_grade) {
        return lower_grade == 0 ? model.boundary01_swap : model.boundary_swap;
    };
    double p_down = true_grade > 0 ? boundary(true_grade - 1) * model.noise_scale : 0.0;
    double p_up = true_grade < 4 ? boundary(true_grade) * model.noise_scale : 0.0;
    if (p_down > 0.0) p_down = std::max(0.0, p_down - model.bias);
    if (p_up > 0.0) p_up = std::max(0.0, p_up + model.bias);
    const double total = p_down + p_up;
    if (total > 0.9) {  // keep "no swap" the single most likely outcome
        p_down *= 0.9 / total;
        p_up *= 0.9 / total;
    }
    Rng rng(hash_mix(model.seed, case_id));
    const double u = rng.uniform01();
    if (u < p_down) return true_grade - 1;
    if (u < p_down + p_up) return true_grade + 1;
    return true_grade;
}

// Five readers with spread-out noise levels and small biases; the spread is
// tuned so their mean pairwise quadratic-weighted agreement sits in the
// 0.7-0.8 band over a grade mix like the training distribution.
inline std::vector<SimulatedReaderModel> default_reader_panel(std::uint64_t seed) {
    const double noise[5] = {1.5, 1.8, 2.1, 2.4, 2.7};
    const double bias[5] = {0.02, -0.02, 0.0, 0.01, -0.01};
    std::vector<SimulatedReaderModel> panel;
    for (int i = 0; i < 5; ++i) {
        SimulatedReaderModel m;
        m.reader_id = "reader_" + std::to_string(i + 1);
        m.noise_scale = noise[i];
        m.bias = bias[i];
        m.seed = hash_mix(seed, static_cast<std::uint64_t>(i) + 101);
        panel.push_back(std::move(m));
    }
    return panel;
}

// ---------------------------------------------------------------------------
// Cohort generation
// ---------------------------------------------------------------------------

struct CohortSpec {
    std::size_t n_patients = 10;
    int visits_per_patient = 2;
    // proportional to the training-set grade mix of the source dataset
    std::array<double, 5> grade_distribution = {5600, 1951, 2228, 2475, 1150};
    double flag_fraction = 0.02;
    double missing_subgrade_fraction = 0.02;
    double unpaired_fraction = 0.02;
    double duplicate_fraction = 0.01;
};

struct TruthRow {
    std::string image_path;
    std::string patient_id;
    int visit = 0;
    Side side = Side::left;
    View view = View::PA;
    double center_x = 0.0;
    double center_y = 0.0;
    double latent_s = 0.0;
    int kl_grade = 0;
};

inline const std::string kTruthHeader =
    "image_path,patient_id,visit,side,view,center_x,center_y,latent_s,kl_grade";

inline void write_truth_csv(std::ostream& out, const std::vector<TruthRow>& rows) {
    out << kTruthHeader << "\n";
    for (const TruthRow& t : rows) {
        out << t.image_path << "," << t.patient_id << "," << t.visit << "," << to_string(t.side)
            << "," << to_string(t.view) << "," << format_double(t.center_x) << ","
            << format_double(t.center_y) << "," << format_double(t.latent_s) << "," << t.kl_grade
            << "\n";
    }
}

inline std::vector<TruthRow> read_truth_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("truth csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kTruthHeader) throw std::invalid_argument("truth csv: unexpected header: " + line);
    std::vector<TruthRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 9) {
            throw std::invalid_argument("truth csv line " + std::to_string(lineno) +
                                        ": expected 9 fields");
        }
        TruthRow t;
        t.image_path = f[0];
        t.patient_id = f[1];
        t.visit = parse_int(f[2], "visit");
        t.side = side_from_string(f[3]);
        t.view = view_from_string(f[4]);
        t.center_x = parse_double(f[5], "center_x");
        t.center_y = parse_double(f[6], "center_y");
        t.latent_s = parse_double(f[7], "latent_s");
        t.kl_grade = parse_int(f[8], "kl_grade");
        rows.push_back(std::move(t));
    }
    return rows;
}

struct CohortOutput {
    std::vector<ExamRecord> manifest;
    std::vector<TruthRow> truth;
};

// Renders a full cohort under out_dir: images/, manifest.csv and a
// truth.csv sidecar carrying what the pinned manifest schema cannot (true
// centers and the latent severity). A small configurable fraction of
// knee-visits carries curation hazards: exclusion flags, missing subgrades,
// a missing LAT view, or duplicate acquisitions.
inline CohortOutput generate_cohort(const PhantomConfig& cfg, const CohortSpec& spec,
                                    const std::string& out_dir) {
    validate_phantom_config(cfg);
    if (spec.n_patients == 0) throw std::invalid_argument("generate_cohort: needs patients");
    if (spec.visits_per_patient < 1) throw std::invalid_argument("generate_cohort: needs visits");
    double dist_total = 0.0;
    for (double w : spec.grade_distribution) {
        if (w < 0.0) throw std::invalid_argument("generate_cohort: negative grade weight");
        dist_total += w;
    }
    if (dist_total <= 0.0) throw std::invalid_argument("generate_cohort: empty grade distribution");

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    if (ec) {
        throw std::runtime_error("generate_cohort: cannot create " + out_dir + ": " + ec.message());
    }

    struct Job {
        std::string patient_id;
        int visit;
        Side side;
        double s;
        bool flagged, missing_subgrade, unpaired, duplicated;
    };
    std::vector<Job> jobs;
    for (std::size_t p = 0; p < spec.n_patients; ++p) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "P%05zu", p);
        const std::string patient_id(buf);
        for (int visit = 1; visit <= spec.visits_per_patient; ++visit) {
            for (Side side : {Side::left, Side::right}) {
                Rng draw(hash_mix(detail::exam_stream(cfg, patient_id, visit, side, 0), 7001));
                double pick = draw.uniform01() * dist_total;
                int grade = 0;
                for (int g = 0; g < 5; ++g) {
                    pick -= spec.grade_distribution[g];
                    if (pick < 0.0) {
                        grade = g;
                        break;
                    }
                }
                Job job;
                job.patient_id = patient_id;
                job.visit = visit;
                job.side = side;
                job.s = std::clamp(grade + draw.uniform(-0.45, 0.45), 0.0, 4.0);
                job.flagged = draw.bernoulli(spec.flag_fraction);
                job.missing_subgrade = draw.bernoulli(spec.missing_subgrade_fraction);
                job.unpaired = draw.bernoulli(spec.unpaired_fraction);
                job.duplicated = draw.bernoulli(spec.duplicate_fraction);
                jobs.push_back(std::move(job));
            }
        }
    }

    struct JobResult {
        std::vector<ExamRecord> rows;
        std::vector<TruthRow> truth;
    };
    std::vector<JobResult> results(jobs.size());
    run_tasks(jobs.size(), thread_cap(), [&](std::size_t ji) {
        const Job& job = jobs[ji];
        JobResult& res = results[ji];
        const int grade = std::clamp(static_cast<int>(std::lround(job.s)), 0, 4);
        const int subgrade = std::clamp(static_cast<int>(std::lround(job.s * 0.75)), 0, 3);
        const std::string stem = job.patient_id + "_v" + std::to_string(job.visit) + "_" +
                                 to_string(job.side);
        const int copies = job.duplicated ? 2 : 1;
        for (int copy = 0; copy < copies; ++copy) {
            const PhantomExam exam = generate_exam(cfg, job.patient_id, job.visit, job.side,
                                                   job.s, static_cast<std::uint64_t>(copy));
            for (View view : {View::PA, View::LAT}) {
                if (view == View::LAT && job.unpaired) continue;
                // the repeat acquisition only exists for the PA view
                if (view == View::LAT && copy > 0) continue;
                const std::string name = stem + "_" + to_string(view) +
                                         (copy > 0 ? "_r" + std::to_string(copy) : "") + ".pgm";
                const std::string rel = "images/" + name;
                write_pgm16((std::filesystem::path(out_dir) / rel).string(), exam.view(view));
                ExamRecord rec;
                rec.patient_id = job.patient_id;
                rec.visit = job.visit;
                rec.side = job.side;
                rec.view = view;
                rec.image_path = rel;
                rec.pixel_spacing = cfg.spacing;
                rec.kl_grade = grade;
                if (!job.missing_subgrade) {
                    rec.jsn_grade = subgrade;
                    rec.osteo_grade = subgrade;
                }
                if (job.flagged) rec.flags = {"poor_quality"};
                res.rows.push_back(std::move(rec));
                TruthRow t;
                t.image_path = rel;
                t.patient_id = job.patient_id;
                t.visit = job.visit;
                t.side = job.side;
                t.view = view;
                t.center_x = exam.cx(view);
                t.center_y = exam.cy(view);
                t.latent_s = job.s;
                t.kl_grade = grade;
                res.truth.push_back(std::move(t));
            }
        }
    });

    CohortOutput out;
    for (const JobResult& res : results) {
        out.manifest.insert(out.manifest.end(), res.rows.begin(), res.rows.end());
        out.truth.insert(out.truth.end(), res.truth.begin(), res.truth.end());
    }
    {
        std::ofstream mf((std::filesystem::path(out_dir) / "manifest.csv").string());
        if (!mf) throw std::runtime_error("generate_cohort: cannot write manifest.csv");
        write_manifest_csv(mf, out.manifest);
    }
    {
        std::ofstream tf((std::filesystem::path(out_dir) / "truth.csv").string());
        if (!tf) throw std::runtime_error("generate_cohort: cannot write truth.csv");
        write_truth_csv(tf, out.truth);
    }
    return out;
}

}  // namespace klp
