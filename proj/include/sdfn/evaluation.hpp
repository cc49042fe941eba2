#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdfn/error.hpp"
#include "sdfn/labels.hpp"
#include "sdfn/metrics.hpp"

namespace sdfn {

/// Per-class test AUCs of one model.
struct MethodScores {
    std::string name;
    std::array<double, kNumClasses> auc{};
    double mean = 0.0;
};

/// Paired t-test of method `a` against method `b`.
struct Comparison {
    std::string a;
    std::string b;
    TTestResult test;
    std::size_t pairs = 0;
};

struct EvalReport {
    std::size_t test_images = 0;
    std::vector<MethodScores> methods;
    std::vector<Comparison> comparisons;
    std::vector<std::vector<std::string>> folds;  // image ids per fold
    std::vector<std::pair<std::string, std::array<RocCurve, kNumClasses>>> roc;

    const MethodScores& method(const std::string& name) const {
        for (const auto& m : methods)
            if (m.name == name) return m;
        throw Error("eval report has no method '" + name + "'");
    }
};

/// Scores and labels for one method as label vectors per image.
struct MethodPredictions {
    std::string name;
    std::vector<LabelVector> probs;
};

namespace detail {

inline std::vector<int> class_labels(const std::vector<LabelVector>& labels, std::size_t c, const std::vector<std::size_t>* subset = nullptr) {
    std::vector<int> y;
    const std::size_t n = subset ? subset->size() : labels.size();
    for (std::size_t k = 0; k < n; ++k) y.push_back(labels[subset ? (*subset)[k] : k][c] != 0.0 ? 1 : 0);
    return y;
}

inline std::vector<double> class_scores(const std::vector<LabelVector>& probs, std::size_t c, const std::vector<std::size_t>* subset = nullptr) {
    std::vector<double> s;
    const std::size_t n = subset ? subset->size() : probs.size();
    for (std::size_t k = 0; k < n; ++k) s.push_back(probs[subset ? (*subset)[k] : k][c]);
    return s;
}

inline bool both_classes(const std::vector<int>& y) {
    std::size_t pos = 0;
    for (int v : y) pos += static_cast<std::size_t>(v);
    return pos > 0 && pos < y.size();
}

}  // namespace detail

/// Per-class AUCs on the whole test set, plus paired t-tests over the
/// (class, fold) AUCs of every method pair. Folds are patient-grouped; a
/// (class, fold) cell is skipped when that fold lacks positives or negatives.
inline EvalReport evaluate_predictions(const std::vector<MethodPredictions>& methods, const std::vector<LabelVector>& labels,
                                       const std::vector<std::string>& ids, const std::vector<std::string>& groups, int folds,
                                       std::uint64_t fold_seed) {
    if (methods.empty()) throw Error("evaluate: no methods");
    for (const auto& m : methods)
        if (m.probs.size() != labels.size()) throw ShapeError("evaluate: prediction count differs from label count");
    EvalReport report;
    report.test_images = labels.size();
    for (std::size_t c = 0; c < kNumClasses; ++c)
        if (!detail::both_classes(detail::class_labels(labels, c)))
            throw NumericError("evaluate: class '" + std::string(kClassNames[c]) +
                               "' has no positive or no negative test images, so its AUC is undefined; enlarge the corpus");

    for (const auto& m : methods) {
        MethodScores s;
        s.name = m.name;
        std::array<RocCurve, kNumClasses> curves;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            auto r = roc_auc(detail::class_scores(m.probs, c), detail::class_labels(labels, c));
            s.auc[c] = r.auc;
            curves[c] = std::move(r.curve);
        }
        s.mean = mean_auc(s.auc);
        report.methods.push_back(s);
        report.roc.emplace_back(m.name, std::move(curves));
    }

    const auto fold_idx = kfold_split(groups, static_cast<std::size_t>(folds), fold_seed);
    for (const auto& f : fold_idx) {
        report.folds.emplace_back();
        for (auto i : f) report.folds.back().push_back(ids[i]);
    }
    // cell[m] lists AUCs of method m for every defined (class, fold) cell.
    std::vector<std::vector<double>> cells(methods.size());
    for (std::size_t c = 0; c < kNumClasses; ++c)
        for (const auto& f : fold_idx) {
            const auto y = detail::class_labels(labels, c, &f);
            if (!detail::both_classes(y)) continue;
            for (std::size_t m = 0; m < methods.size(); ++m)
                cells[m].push_back(roc_auc(detail::class_scores(methods[m].probs, c, &f), y).auc);
        }
    for (std::size_t a = methods.size(); a-- > 0;)
        for (std::size_t b = a; b-- > 0;) {
            Comparison cmp;
            cmp.a = methods[a].name;
            cmp.b = methods[b].name;
            cmp.pairs = cells[a].size();
            if (cmp.pairs >= 2) cmp.test = paired_t_test(cells[a], cells[b]);
            report.comparisons.push_back(cmp);
        }
    return report;
}

namespace detail {

inline std::string fixed(double v, int digits = 6) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string general(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::ofstream open_report(const std::filesystem::path& path) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

}  // namespace detail

/// One row per class in canonical order plus a Mean row; one column per method.
inline void write_eval_csv(const std::filesystem::path& path, const EvalReport& r) {
    auto out = detail::open_report(path);
    out << "pathology";
    for (const auto& m : r.methods) out << ',' << m.name;
    out << "\n";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        out << kClassTitles[c];
        for (const auto& m : r.methods) out << ',' << detail::fixed(m.auc[c]);
        out << "\n";
    }
    out << "Mean";
    for (const auto& m : r.methods) out << ',' << detail::fixed(m.mean);
    out << "\n";
}

inline void write_ttest_csv(const std::filesystem::path& path, const EvalReport& r) {
    auto out = detail::open_report(path);
    out << "method_a,method_b,pairs,t,p_two_tailed,dof,degenerate\n";
    for (const auto& c : r.comparisons)
        out << c.a << ',' << c.b << ',' << c.pairs << ',' << detail::general(c.test.t) << ',' << detail::general(c.test.p) << ','
            << c.test.dof << ',' << (c.test.degenerate ? 1 : 0) << "\n";
}

inline nlohmann::ordered_json eval_json(const EvalReport& r) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["test_images"] = r.test_images;
    j["classes"] = ordered_json::array();
    for (auto name : kClassNames) j["classes"].push_back(std::string(name));
    j["methods"] = ordered_json::array();
    for (const auto& m : r.methods) {
        ordered_json e;
        e["name"] = m.name;
        e["auc"] = m.auc;
        e["mean_auc"] = m.mean;
        j["methods"].push_back(e);
    }
    j["t_tests"] = ordered_json::array();
    for (const auto& c : r.comparisons) {
        ordered_json e;
        e["a"] = c.a;
        e["b"] = c.b;
        e["pairs"] = c.pairs;
        e["t"] = std::isfinite(c.test.t) ? ordered_json(c.test.t) : ordered_json(detail::general(c.test.t));
        e["p_two_tailed"] = c.test.p;
        e["dof"] = c.test.dof;
        e["degenerate"] = c.test.degenerate;
        j["t_tests"].push_back(e);
    }
    j["folds"] = r.folds;
    return j;
}

inline void write_eval_json(const std::filesystem::path& path, const EvalReport& r) {
    auto out = detail::open_report(path);
    out << eval_json(r).dump(2) << "\n";
}

inline void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
    auto out = detail::open_report(path);
    out << "threshold,fpr,tpr\n";
    for (const auto& p : curve.points)
        out << detail::general(p.threshold) << ',' << detail::general(p.fpr) << ',' << detail::general(p.tpr) << "\n";
}

/// eval.csv, eval.json, ttests.csv and roc/<method>_<class>.csv under `dir`.
inline void write_eval_report(const std::filesystem::path& dir, const EvalReport& r) {
    write_eval_csv(dir / "eval.csv", r);
    write_eval_json(dir / "eval.json", r);
    write_ttest_csv(dir / "ttests.csv", r);
    for (const auto& [name, curves] : r.roc)
        for (std::size_t c = 0; c < kNumClasses; ++c)
            write_roc_csv(dir / "roc" / (name + "_" + std::string(kClassNames[c]) + ".csv"), curves[c]);
}

}  // namespace sdfn
