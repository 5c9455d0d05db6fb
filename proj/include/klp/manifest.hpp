#pragma once

// Exam manifest: one row per image, the interchange schema between the
// generator, curation, and both training stages. Column set is pinned:
// patient_id,visit,side,view,image_path,pixel_spacing,kl_grade,jsn_grade,osteo_grade,flags

#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "klp/common.hpp"

namespace klp {

enum class Side { left, right };
enum class View { PA, LAT };

inline std::string to_string(Side s) { return s == Side::left ? "left" : "right"; }
inline std::string to_string(View v) { return v == View::PA ? "PA" : "LAT"; }

inline Side side_from_string(const std::string& s) {
    if (s == "left") return Side::left;
    if (s == "right") return Side::right;
    throw std::invalid_argument("unknown side: " + s);
}

inline View view_from_string(const std::string& s) {
    if (s == "PA") return View::PA;
    if (s == "LAT") return View::LAT;
    throw std::invalid_argument("unknown view: " + s);
}

struct ExamRecord {
    std::string patient_id;
    int visit = 0;
    Side side = Side::left;
    View view = View::PA;
    std::string image_path;
    double pixel_spacing = 0.2;
    double kl_grade = 0.0;  // may be 1.9 before grade mapping
    std::optional<int> jsn_grade;
    std::optional<int> osteo_grade;
    std::vector<std::string> flags;
};

// A knee at one visit: the granularity at which exclusions apply.
struct KneeKey {
    std::string patient_id;
    int visit = 0;
    Side side = Side::left;

    friend bool operator<(const KneeKey& a, const KneeKey& b) {
        return std::tie(a.patient_id, a.visit, a.side) < std::tie(b.patient_id, b.visit, b.side);
    }
    friend bool operator==(const KneeKey& a, const KneeKey& b) {
        return std::tie(a.patient_id, a.visit, a.side) == std::tie(b.patient_id, b.visit, b.side);
    }
    std::string str() const {
        return patient_id + "_v" + std::to_string(visit) + "_" + klp::to_string(side);
    }
};

inline KneeKey knee_of(const ExamRecord& r) { return {r.patient_id, r.visit, r.side}; }

inline const std::string kManifestHeader =
    "patient_id,visit,side,view,image_path,pixel_spacing,kl_grade,jsn_grade,osteo_grade,flags";

inline void write_manifest_csv(std::ostream& out, const std::vector<ExamRecord>& records) {
    out << kManifestHeader << "\n";
    for (const ExamRecord& r : records) {
        out << r.patient_id << "," << r.visit << "," << to_string(r.side) << ","
            << to_string(r.view) << "," << r.image_path << "," << format_double(r.pixel_spacing)
            << "," << format_double(r.kl_grade) << ",";
        if (r.jsn_grade) out << *r.jsn_grade;
        out << ",";
        if (r.osteo_grade) out << *r.osteo_grade;
        out << ",";
        for (std::size_t i = 0; i < r.flags.size(); ++i) {
            if (i) out << ";";
            out << r.flags[i];
        }
        out << "\n";
    }
}

inline std::vector<ExamRecord> read_manifest_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("manifest: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader) {
        throw std::invalid_argument("manifest: unexpected header: " + line);
    }
    std::vector<ExamRecord> records;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line, ',');
        try {
            if (f.size() != 10) {
                throw std::invalid_argument("expected 10 fields, got " + std::to_string(f.size()));
            }
            ExamRecord r;
            r.patient_id = f[0];
            if (r.patient_id.empty()) throw std::invalid_argument("empty patient_id");
            r.visit = parse_int(f[1], "visit");
            r.side = side_from_string(f[2]);
            r.view = view_from_string(f[3]);
            r.image_path = f[4];
            r.pixel_spacing = parse_double(f[5], "pixel_spacing");
            if (r.pixel_spacing <= 0.0) throw std::invalid_argument("pixel_spacing must be > 0");
            r.kl_grade = parse_double(f[6], "kl_grade");
            if (!f[7].empty()) r.jsn_grade = parse_int(f[7], "jsn_grade");
            if (!f[8].empty()) r.osteo_grade = parse_int(f[8], "osteo_grade");
            if (!f[9].empty()) r.flags = split(f[9], ';');
            records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace klp
