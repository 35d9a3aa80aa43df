#pragma once

#include "promptleak/error.hpp"
#include "promptleak/log.hpp"
#include "promptleak/verifier.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <compare>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace promptleak {

struct CellKey {
    std::string model;
    std::string dataset;
    std::string condition;

    auto operator<=>(const CellKey&) const = default;
    bool operator==(const CellKey&) const = default;
};

struct Cell {
    double rate = 0.0;
    std::size_t n = 0;
    std::size_t successes = 0;

    friend bool operator==(const Cell&, const Cell&) = default;
};

/// Success rates per (model, dataset, condition), optionally with deltas
/// against an undefended baseline.
struct EvaluationReport {
    std::map<CellKey, Cell> cells;
    std::map<CellKey, double> deltas;
    std::map<std::string, std::string> metadata;

    friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

/// Per-prompt outcome: did any attack extract it.
struct GroupOutcome {
    CellKey key;
    std::string prompt_id;
    bool success = false;
};

/// Fraction of prompts per cell with a successful extraction. Keys listed in
/// `expected` but holding no prompt are left out with a warning.
inline EvaluationReport success_table(const std::vector<GroupOutcome>& outcomes,
                                      const std::vector<CellKey>& expected = {}) {
    EvaluationReport report;
    std::set<std::pair<CellKey, std::string>> seen;
    for (const auto& o : outcomes) {
        if (!seen.emplace(o.key, o.prompt_id).second)
            throw InvalidInput("prompt '" + o.prompt_id + "' appears twice in cell " + o.key.model + "/" +
                               o.key.dataset + "/" + o.key.condition);
        auto& cell = report.cells[o.key];
        ++cell.n;
        if (o.success) ++cell.successes;
    }
    for (auto& [key, cell] : report.cells)
        cell.rate = static_cast<double>(cell.successes) / static_cast<double>(cell.n);
    for (const auto& key : expected)
        if (!report.cells.contains(key))
            log::warn("cell " + key.model + "/" + key.dataset + "/" + key.condition + " has no prompts; omitted");
    return report;
}

/// Defended minus undefended rate. Cells pair up on (model, dataset); the
/// condition labels are expected to differ. Every pair must be one-to-one.
inline EvaluationReport defense_delta(const EvaluationReport& undefended, const EvaluationReport& defended) {
    auto index = [](const EvaluationReport& r, const char* which) {
        std::map<std::pair<std::string, std::string>, const std::pair<const CellKey, Cell>*> out;
        for (const auto& entry : r.cells)
            if (!out.emplace(std::make_pair(entry.first.model, entry.first.dataset), &entry).second)
                throw ReportError(std::string(which) + " report has several conditions for " + entry.first.model + "/" +
                                  entry.first.dataset);
        return out;
    };
    const auto base = index(undefended, "undefended");
    const auto def = index(defended, "defended");
    if (base.size() != def.size())
        throw ReportError("reports cover different (model, dataset) pairs");

    EvaluationReport out;
    out.metadata = defended.metadata;
    for (const auto& [md, entry] : def) {
        auto it = base.find(md);
        if (it == base.end()) throw ReportError("no undefended cell for " + md.first + "/" + md.second);
        out.cells[entry->first] = entry->second;
        out.deltas[entry->first] = entry->second.rate - it->second->second.rate;
    }
    if (auto it = undefended.metadata.find("config_digest"); it != undefended.metadata.end())
        out.metadata["baseline_config_digest"] = it->second;
    return out;
}

struct PRPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0;

    friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

struct PRCurve {
    /// One point per distinct score, ascending threshold; decisions use >=.
    std::vector<PRPoint> points;
    double operating_threshold = 0.0;
    /// Empty when nothing scores at or above the operating threshold, since
    /// precision is undefined there.
    std::optional<PRPoint> operating_point;

    friend bool operator==(const PRCurve&, const PRCurve&) = default;
};

inline PRCurve precision_recall(const std::vector<double>& scores, const std::vector<bool>& labels,
                                double operating_threshold) {
    if (scores.empty() || scores.size() != labels.size())
        throw InvalidInput("precision_recall needs equally many scores and labels, at least one");
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    if (positives == 0) throw ReportError("recall is undefined without positive labels");

    std::vector<std::pair<double, bool>> ranked;
    ranked.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) ranked.emplace_back(scores[i], labels[i]);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    PRCurve curve;
    curve.operating_threshold = operating_threshold;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        (ranked[i].second ? tp : fp) += 1;
        if (i + 1 < ranked.size() && ranked[i + 1].first == ranked[i].first) continue;
        PRPoint p;
        p.threshold = ranked[i].first;
        p.tp = tp;
        p.fp = fp;
        p.fn = positives - tp;
        p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        p.recall = static_cast<double>(tp) / static_cast<double>(positives);
        curve.points.push_back(p);
    }
    std::reverse(curve.points.begin(), curve.points.end());

    PRPoint op;
    op.threshold = operating_threshold;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] >= operating_threshold) (labels[i] ? op.tp : op.fp) += 1;
    }
    op.fn = positives - op.tp;
    if (op.tp + op.fp == 0) {
        log::warn("no score reaches the operating threshold; its precision is undefined and the point is omitted");
    } else {
        op.precision = static_cast<double>(op.tp) / static_cast<double>(op.tp + op.fp);
        op.recall = static_cast<double>(op.tp) / static_cast<double>(positives);
        curve.operating_point = op;
    }
    return curve;
}

/// Curve over confidence scores; the operating threshold is the method's own.
inline PRCurve precision_recall(const std::vector<ConfidenceScore>& scores, const std::vector<bool>& labels) {
    if (scores.empty()) throw InvalidInput("precision_recall needs at least one score");
    std::vector<double> values;
    values.reserve(scores.size());
    for (const auto& s : scores) values.push_back(s.value);
    return precision_recall(values, labels, scores.front().threshold);
}

// Rendering.

inline nlohmann::json to_json(const EvaluationReport& r) {
    nlohmann::json cells = nlohmann::json::array(), deltas = nlohmann::json::array();
    for (const auto& [k, c] : r.cells)
        cells.push_back({{"model", k.model}, {"dataset", k.dataset}, {"condition", k.condition},
                         {"rate", c.rate},   {"n", c.n},             {"successes", c.successes}});
    for (const auto& [k, d] : r.deltas)
        deltas.push_back({{"model", k.model}, {"dataset", k.dataset}, {"condition", k.condition}, {"delta", d}});
    return {{"cells", cells}, {"deltas", deltas}, {"metadata", r.metadata}};
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
    EvaluationReport r;
    try {
        for (const auto& c : j.at("cells")) {
            CellKey k{c.at("model"), c.at("dataset"), c.at("condition")};
            r.cells[k] = {c.at("rate").get<double>(), c.at("n").get<std::size_t>(),
                          c.value("successes", std::size_t{0})};
        }
        for (const auto& d : j.at("deltas")) r.deltas[{d.at("model"), d.at("dataset"), d.at("condition")}] = d.at("delta");
        if (j.contains("metadata")) r.metadata = j["metadata"].get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ReportError(std::string("malformed report JSON: ") + e.what());
    }
    return r;
}

inline nlohmann::json to_json(const PRCurve& c) {
    auto point = [](const PRPoint& p) {
        return nlohmann::json{{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall},
                              {"tp", p.tp},               {"fp", p.fp},               {"fn", p.fn}};
    };
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c.points) pts.push_back(point(p));
    return {{"points", pts},
            {"operating_threshold", c.operating_threshold},
            {"operating_point", c.operating_point ? point(*c.operating_point) : nlohmann::json(nullptr)}};
}

namespace detail {

inline std::string fmt_double(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    return out + "\"";
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ReportError("cannot write '" + path + "'");
    out << content;
    if (!out) throw ReportError("write to '" + path + "' failed");
}

} // namespace detail

/// One row per cell, rates rendered as percentages.
inline std::string report_csv(const EvaluationReport& r) {
    std::string out = "model,dataset,condition,rate_pct,n,delta_pct\n";
    for (const auto& [k, c] : r.cells) {
        out += detail::csv_field(k.model) + "," + detail::csv_field(k.dataset) + "," + detail::csv_field(k.condition) +
               "," + detail::fmt_double("%.1f", c.rate * 100.0) + "," + std::to_string(c.n) + ",";
        if (auto it = r.deltas.find(k); it != r.deltas.end()) out += detail::fmt_double("%+.1f", it->second * 100.0);
        out += "\n";
    }
    return out;
}

/// Plot-ready rows; the operating point, when defined, is the last row.
inline std::string curve_csv(const PRCurve& c) {
    std::string out = "threshold,precision,recall,kind\n";
    auto row = [](const PRPoint& p, const char* kind) {
        return detail::fmt_double("%.6g", p.threshold) + "," + detail::fmt_double("%.6g", p.precision) + "," +
               detail::fmt_double("%.6g", p.recall) + "," + kind + "\n";
    };
    for (const auto& p : c.points) out += row(p, "sweep");
    if (c.operating_point) out += row(*c.operating_point, "operating_point");
    return out;
}

inline void emit_report(const EvaluationReport& r, const std::string& json_path, const std::string& csv_path) {
    detail::write_file(json_path, to_json(r).dump(2) + "\n");
    detail::write_file(csv_path, report_csv(r));
}

inline void emit_curve(const PRCurve& c, const std::string& json_path, const std::string& csv_path) {
    detail::write_file(json_path, to_json(c).dump(2) + "\n");
    detail::write_file(csv_path, curve_csv(c));
}

} // namespace promptleak
