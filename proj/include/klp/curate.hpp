#pragma once

// Manifest curation: exclusion rules, the 1.9 grade mapping, and the
// patient-level split. Exclusions act on whole knee-visits (a knee can be
// dropped at one visit and kept at another); the duplicate rule acts on rows
// within surviving knee-visits. Reasons are mutually exclusive and applied
// in a fixed order, so report counts in knee-visits always reconcile with
// the number of knee-visits removed.

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "klp/common.hpp"
#include "klp/manifest.hpp"

namespace klp {

enum class Split { train, validation, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    throw std::logic_error("unreachable");
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split: " + s);
}

// Patient fractions matching the source dataset's 2040/259/503 split.
inline constexpr std::array<double, 3> kDefaultSplitFractions = {0.728, 0.092, 0.180};

struct ExclusionReport {
    // knee-visits removed, counted once under the first matching reason
    std::int64_t flagged = 0;
    std::int64_t missing_subgrade = 0;
    std::int64_t unpaired_view = 0;
    // extra rows removed inside knee-visits that survive
    std::int64_t duplicate_image = 0;

    std::int64_t knee_visits_removed() const { return flagged + missing_subgrade + unpaired_view; }
};

inline void write_exclusion_report(std::ostream& out, const ExclusionReport& r) {
    out << "reason,count\n";
    out << "flagged," << r.flagged << "\n";
    out << "missing_subgrade," << r.missing_subgrade << "\n";
    out << "unpaired_view," << r.unpaired_view << "\n";
    out << "duplicate_image," << r.duplicate_image << "\n";
}

struct CurationResult {
    std::vector<ExamRecord> records;
    ExclusionReport report;
};

inline std::size_t count_knee_visits(const std::vector<ExamRecord>& records) {
    std::set<KneeKey> keys;
    for (const ExamRecord& r : records) keys.insert(knee_of(r));
    return keys.size();
}

// Drops flagged knee-visits, then knee-visits missing either auxiliary
// grade, then knee-visits lacking a PA/LAT pair. Among surviving duplicates
// for one (knee, visit, view) a seeded draw keeps exactly one row. Output
// preserves manifest row order. Running the result through again removes
// nothing.
inline CurationResult apply_exclusions(const std::vector<ExamRecord>& records,
                                       std::uint64_t seed) {
    std::map<KneeKey, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
        groups[knee_of(records[i])].push_back(i);
    }

    CurationResult out;
    std::vector<bool> keep(records.size(), false);
    for (const auto& [key, rows] : groups) {
        bool any_flag = false, any_missing = false;
        for (std::size_t i : rows) {
            if (!records[i].flags.empty()) any_flag = true;
            if (!records[i].jsn_grade || !records[i].osteo_grade) any_missing = true;
        }
        if (any_flag) {
            out.report.flagged++;
            continue;
        }
        if (any_missing) {
            out.report.missing_subgrade++;
            continue;
        }
        // one row per view, seeded pick among duplicates
        std::array<std::vector<std::size_t>, 2> by_view;
        for (std::size_t i : rows) {
            by_view[static_cast<std::size_t>(records[i].view)].push_back(i);
        }
        if (by_view[0].empty() || by_view[1].empty()) {
            out.report.unpaired_view++;
            continue;
        }
        for (std::size_t vi = 0; vi < 2; ++vi) {
            auto& candidates = by_view[vi];
            std::size_t pick = 0;
            if (candidates.size() > 1) {
                Rng rng(hash_mix(hash_mix(seed, key.str()), vi + 31));
                pick = static_cast<std::size_t>(rng.uniform_int(candidates.size()));
                out.report.duplicate_image +=
                    static_cast<std::int64_t>(candidates.size()) - 1;
            }
            keep[candidates[pick]] = true;
        }
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (keep[i]) out.records.push_back(records[i]);
    }
    return out;
}

// 1.9 reads as grade 2; everything else must already be an integer grade.
inline std::vector<ExamRecord> map_grades(const std::vector<ExamRecord>& records) {
    std::vector<ExamRecord> out;
    out.reserve(records.size());
    for (const ExamRecord& r : records) {
        ExamRecord m = r;
        if (m.kl_grade == 1.9) {
            m.kl_grade = 2.0;
        } else if (m.kl_grade != 0.0 && m.kl_grade != 1.0 && m.kl_grade != 2.0 &&
                   m.kl_grade != 3.0 && m.kl_grade != 4.0) {
            throw std::invalid_argument("map_grades: " + m.patient_id + " visit " +
                                        std::to_string(m.visit) + " has grade " +
                                        format_double(m.kl_grade) +
                                        " outside {0,1,1.9,2,3,4}");
        }
        out.push_back(std::move(m));
    }
    return out;
}

struct SplitAssignment {
    std::map<std::string, Split> by_patient;

    Split at(const std::string& patient_id) const {
        const auto it = by_patient.find(patient_id);
        if (it == by_patient.end()) {
            throw std::invalid_argument("split assignment: unknown patient " + patient_id);
        }
        return it->second;
    }
};

inline std::array<std::size_t, 3> split_counts(const SplitAssignment& a) {
    std::array<std::size_t, 3> n = {0, 0, 0};
    for (const auto& [id, s] : a.by_patient) n[static_cast<std::size_t>(s)]++;
    return n;
}

// Shuffles the distinct patients with a seeded RNG and partitions them by
// the rounded fractions; the tail absorbs rounding so every patient lands
// in exactly one split.
inline SplitAssignment split_by_patient(const std::vector<ExamRecord>& records,
                                        const std::array<double, 3>& fractions,
                                        std::uint64_t seed) {
    if (records.empty()) throw std::invalid_argument("split_by_patient: empty manifest");
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw std::invalid_argument("split_by_patient: negative fraction");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw std::invalid_argument("split_by_patient: fractions must sum to 1");
    }
    std::set<std::string> unique;
    for (const ExamRecord& r : records) unique.insert(r.patient_id);
    std::vector<std::string> patients(unique.begin(), unique.end());
    Rng rng(hash_mix(seed, "patient_split"));
    rng.shuffle(patients);

    const auto total = static_cast<double>(patients.size());
    std::size_t n_train = static_cast<std::size_t>(std::lround(fractions[0] * total));
    n_train = std::min(n_train, patients.size());
    std::size_t n_val = static_cast<std::size_t>(std::lround(fractions[1] * total));
    n_val = std::min(n_val, patients.size() - n_train);

    SplitAssignment out;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        const Split s = i < n_train                ? Split::train
                        : i < n_train + n_val      ? Split::validation
                                                   : Split::test;
        out.by_patient[patients[i]] = s;
    }
    return out;
}

inline std::vector<ExamRecord> records_in_split(const std::vector<ExamRecord>& records,
                                                const SplitAssignment& assignment, Split split) {
    std::vector<ExamRecord> out;
    for (const ExamRecord& r : records) {
        if (assignment.at(r.patient_id) == split) out.push_back(r);
    }
    return out;
}

inline const std::string kSplitHeader = "patient_id,split";

inline void write_split_csv(std::ostream& out, const SplitAssignment& a) {
    out << kSplitHeader << "\n";
    for (const auto& [id, s] : a.by_patient) out << id << "," << to_string(s) << "\n";
}

inline SplitAssignment read_split_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("split csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kSplitHeader) throw std::invalid_argument("split csv: unexpected header: " + line);
    SplitAssignment out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 2 || f[0].empty()) {
            throw std::invalid_argument("split csv line " + std::to_string(lineno) +
                                        ": expected patient_id,split");
        }
        if (out.by_patient.count(f[0])) {
            throw std::invalid_argument("split csv line " + std::to_string(lineno) +
                                        ": duplicate patient " + f[0]);
        }
        out.by_patient[f[0]] = split_from_string(f[1]);
    }
    return out;
}

}  // namespace klp
