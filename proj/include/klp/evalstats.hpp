#pragma once

// Classification metrics and rater-agreement statistics over the 5-point
// grade scale: accuracy, confusion matrices, the weighted-kappa family, the
// pairwise rater agreement matrix and its reader-study summary.

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "klp/common.hpp"

namespace klp {

constexpr int kGradeCount = 5;  // KL grades 0..4

inline void require_valid_grades(const std::vector<int>& v, const char* who) {
    for (int g : v) {
        if (g < 0 || g >= kGradeCount) {
            throw std::invalid_argument(std::string(who) + ": grade " + std::to_string(g) +
                                        " outside [0," + std::to_string(kGradeCount) + ")");
        }
    }
}

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.empty() || predictions.size() != labels.size()) {
        throw std::invalid_argument("accuracy: inputs must be non-empty and of equal length");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

using ConfusionCounts = std::array<std::array<std::int64_t, kGradeCount>, kGradeCount>;

// counts[label][prediction]
inline ConfusionCounts confusion(const std::vector<int>& predictions,
                                 const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) {
        throw std::invalid_argument("confusion: length mismatch");
    }
    require_valid_grades(predictions, "confusion");
    require_valid_grades(labels, "confusion");
    ConfusionCounts counts{};
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        ++counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
    }
    return counts;
}

// Row-normalized form; zero rows stay zero.
inline std::array<std::array<double, kGradeCount>, kGradeCount> confusion_normalized(
    const ConfusionCounts& counts) {
    std::array<std::array<double, kGradeCount>, kGradeCount> out{};
    for (int i = 0; i < kGradeCount; ++i) {
        std::int64_t row = 0;
        for (int j = 0; j < kGradeCount; ++j) row += counts[i][j];
        if (row == 0) continue;
        for (int j = 0; j < kGradeCount; ++j)
            out[i][j] = static_cast<double>(counts[i][j]) / static_cast<double>(row);
    }
    return out;
}

enum class WeightScheme { none, linear, quadratic };

inline WeightScheme weight_scheme_from_string(const std::string& s) {
    if (s == "none") return WeightScheme::none;
    if (s == "linear") return WeightScheme::linear;
    if (s == "quadratic") return WeightScheme::quadratic;
    throw std::invalid_argument("unknown weight scheme: " + s);
}

// Weighted inter-rater agreement over the fixed 5-grade scale:
//   kappa = 1 - sum(w*O) / sum(w*E)
// with O the joint count matrix and E the outer product of the marginals.
// All accumulation is integer: the weights' common denominator (1, K-1 or
// (K-1)^2) cancels in the ratio, and E is scaled by n. One double division at
// the end makes symmetry exact and, for binary-valued inputs, all three
// schemes bit-identical (only w01 = w10 is ever touched and the integer
// sums coincide).
inline double kappa(const std::vector<int>& a, const std::vector<int>& b, WeightScheme scheme) {
    if (a.empty() || a.size() != b.size()) {
        throw std::invalid_argument("kappa: inputs must be non-empty and of equal length");
    }
    require_valid_grades(a, "kappa");
    require_valid_grades(b, "kappa");
    std::array<std::array<std::int64_t, kGradeCount>, kGradeCount> joint{};
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++joint[static_cast<std::size_t>(a[i])][static_cast<std::size_t>(b[i])];
    }
    std::array<std::int64_t, kGradeCount> row{}, col{};
    for (int i = 0; i < kGradeCount; ++i)
        for (int j = 0; j < kGradeCount; ++j) {
            row[i] += joint[i][j];
            col[j] += joint[i][j];
        }
    auto weight_numer = [scheme](int i, int j) -> std::int64_t {
        const int d = i > j ? i - j : j - i;
        switch (scheme) {
            case WeightScheme::none:
                return d == 0 ? 0 : 1;
            case WeightScheme::linear:
                return d;
            case WeightScheme::quadratic:
                return static_cast<std::int64_t>(d) * d;
        }
        return 0;
    };
    std::int64_t observed = 0, expected = 0;
    for (int i = 0; i < kGradeCount; ++i)
        for (int j = 0; j < kGradeCount; ++j) {
            const std::int64_t w = weight_numer(i, j);
            if (w == 0) continue;
            observed += w * joint[i][j];
            expected += w * row[i] * col[j];
        }
    if (expected == 0) {
        // both raters constant on the same grade: perfect agreement by convention
        return 1.0;
    }
    const std::int64_t n = static_cast<std::int64_t>(a.size());
    return 1.0 - static_cast<double>(n * observed) / static_cast<double>(expected);
}

// ---------------------------------------------------------------------------
// Ratings tables and the reader study
// ---------------------------------------------------------------------------

enum class RaterRole { reader, reference, model };

inline RaterRole rater_role_from_string(const std::string& s) {
    if (s == "reader") return RaterRole::reader;
    if (s == "reference") return RaterRole::reference;
    if (s == "model") return RaterRole::model;
    throw std::invalid_argument("unknown rater role: " + s);
}

inline std::string to_string(RaterRole r) {
    switch (r) {
        case RaterRole::reader: return "reader";
        case RaterRole::reference: return "reference";
        case RaterRole::model: return "model";
    }
    return "";
}

struct RatingRow {
    std::string case_id;
    std::string rater_id;
    RaterRole role = RaterRole::reader;
    int grade = 0;
};

// Complete case x rater grade table. Raters keep first-appearance order.
struct RatingsTable {
    std::vector<std::string> rater_ids;
    std::vector<RaterRole> roles;
    std::vector<std::string> case_ids;
    std::vector<std::vector<int>> grades;  // [case][rater]

    std::size_t rater_count() const { return rater_ids.size(); }
    std::size_t case_count() const { return case_ids.size(); }

    std::vector<int> column(std::size_t rater) const {
        std::vector<int> out(grades.size());
        for (std::size_t c = 0; c < grades.size(); ++c) out[c] = grades[c][rater];
        return out;
    }
};

inline RatingsTable make_ratings_table(const std::vector<RatingRow>& rows) {
    RatingsTable t;
    std::map<std::string, std::size_t> rater_index, case_index;
    for (const RatingRow& r : rows) {
        if (r.grade < 0 || r.grade >= kGradeCount) {
            throw std::invalid_argument("ratings: grade " + std::to_string(r.grade) + " for case " +
                                        r.case_id + " outside the scale");
        }
        auto [rit, rnew] = rater_index.try_emplace(r.rater_id, t.rater_ids.size());
        if (rnew) {
            t.rater_ids.push_back(r.rater_id);
            t.roles.push_back(r.role);
        } else if (t.roles[rit->second] != r.role) {
            throw std::invalid_argument("ratings: rater " + r.rater_id + " has conflicting roles");
        }
        auto [cit, cnew] = case_index.try_emplace(r.case_id, t.case_ids.size());
        if (cnew) t.case_ids.push_back(r.case_id);
        (void)cit;
    }
    t.grades.assign(t.case_count(), std::vector<int>(t.rater_count(), -1));
    for (const RatingRow& r : rows) {
        int& cell = t.grades[case_index[r.case_id]][rater_index[r.rater_id]];
        if (cell != -1) {
            throw std::invalid_argument("ratings: duplicate cell for case " + r.case_id +
                                        ", rater " + r.rater_id);
        }
        cell = r.grade;
    }
    std::string missing;
    for (std::size_t c = 0; c < t.case_count(); ++c)
        for (std::size_t r = 0; r < t.rater_count(); ++r)
            if (t.grades[c][r] == -1) {
                if (!missing.empty()) missing += ", ";
                missing += t.case_ids[c] + "/" + t.rater_ids[r];
            }
    if (!missing.empty()) {
        throw std::invalid_argument("ratings: table incomplete, missing cells: " + missing);
    }
    return t;
}

// Symmetric rater x rater agreement matrix; unit diagonal.
inline std::vector<std::vector<double>> pairwise_kappa_matrix(const RatingsTable& table,
                                                              WeightScheme scheme) {
    const std::size_t r = table.rater_count();
    if (r == 0 || table.case_count() == 0) {
        throw std::invalid_argument("pairwise_kappa_matrix: empty table");
    }
    std::vector<std::vector<double>> m(r, std::vector<double>(r, 1.0));
    for (std::size_t i = 0; i < r; ++i) {
        const auto ci = table.column(i);
        for (std::size_t j = i + 1; j < r; ++j) {
            const double k = kappa(ci, table.column(j), scheme);
            m[i][j] = k;
            m[j][i] = k;
        }
    }
    return m;
}

struct ReaderStudySummary {
    double mean_reader_pair = 0.0;       // all C(readers,2) pairs
    double mean_model_reader = 0.0;      // model against each reader
    double mean_reader_reference = 0.0;  // each reader against the reference
};

inline ReaderStudySummary reader_study_summary(const std::vector<std::vector<double>>& matrix,
                                               const std::vector<RaterRole>& roles) {
    if (matrix.size() != roles.size()) {
        throw std::invalid_argument("reader_study_summary: matrix and role list disagree");
    }
    std::vector<std::size_t> readers, models, references;
    for (std::size_t i = 0; i < roles.size(); ++i) {
        switch (roles[i]) {
            case RaterRole::reader: readers.push_back(i); break;
            case RaterRole::model: models.push_back(i); break;
            case RaterRole::reference: references.push_back(i); break;
        }
    }
    if (readers.size() < 2 || models.empty() || references.empty()) {
        throw std::invalid_argument(
            "reader_study_summary: needs at least two readers, a model and a reference");
    }
    ReaderStudySummary s;
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < readers.size(); ++i)
        for (std::size_t j = i + 1; j < readers.size(); ++j) {
            acc += matrix[readers[i]][readers[j]];
            ++n;
        }
    s.mean_reader_pair = acc / static_cast<double>(n);
    acc = 0.0;
    n = 0;
    for (std::size_t m : models)
        for (std::size_t r : readers) {
            acc += matrix[m][r];
            ++n;
        }
    s.mean_model_reader = acc / static_cast<double>(n);
    acc = 0.0;
    n = 0;
    for (std::size_t ref : references)
        for (std::size_t r : readers) {
            acc += matrix[ref][r];
            ++n;
        }
    s.mean_reader_reference = acc / static_cast<double>(n);
    return s;
}

// ---------------------------------------------------------------------------
// Reader-study CSV: case_id,rater_id,role,grade
// ---------------------------------------------------------------------------

inline std::vector<RatingRow> read_ratings_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("ratings csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "case_id,rater_id,role,grade") {
        throw std::invalid_argument("ratings csv: unexpected header: " + line);
    }
    std::vector<RatingRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != 4) {
            throw std::invalid_argument("ratings csv: line " + std::to_string(lineno) +
                                        " has " + std::to_string(fields.size()) + " fields");
        }
        RatingRow r;
        r.case_id = fields[0];
        r.rater_id = fields[1];
        r.role = rater_role_from_string(fields[2]);
        try {
            std::size_t used = 0;
            r.grade = std::stoi(fields[3], &used);
            if (used != fields[3].size()) throw std::invalid_argument("trailing chars");
        } catch (const std::exception&) {
            throw std::invalid_argument("ratings csv: bad grade '" + fields[3] + "' on line " +
                                        std::to_string(lineno));
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_ratings_csv(std::ostream& out, const std::vector<RatingRow>& rows) {
    out << "case_id,rater_id,role,grade\n";
    for (const RatingRow& r : rows) {
        out << r.case_id << "," << r.rater_id << "," << to_string(r.role) << "," << r.grade << "\n";
    }
}

}  // namespace klp
