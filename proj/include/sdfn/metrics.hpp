#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "sdfn/error.hpp"
#include "sdfn/image.hpp"
#include "sdfn/labels.hpp"
#include "sdfn/random.hpp"

namespace sdfn {

// ---------------------------------------------------------------------------
// Overlap metrics

namespace detail {
inline void require_same_extent(const BinaryMask& x, const BinaryMask& y, const char* what) {
    if (x.width != y.width || x.height != y.height)
        throw ShapeError(std::string(what) + ": mask extents differ (" + std::to_string(x.width) + "x" +
                         std::to_string(x.height) + " vs " + std::to_string(y.width) + "x" + std::to_string(y.height) + ")");
}

struct Overlap {
    std::size_t x = 0, y = 0, both = 0;
};

inline Overlap overlap(const BinaryMask& x, const BinaryMask& y) {
    Overlap o;
    for (std::size_t i = 0; i < x.bits.size(); ++i) {
        const bool a = x.bits[i] != 0, b = y.bits[i] != 0;
        o.x += a;
        o.y += b;
        o.both += a && b;
    }
    return o;
}
}  // namespace detail

/// 2|X∩Y| / (|X|+|Y|); two empty masks agree perfectly.
inline double dice(const BinaryMask& x, const BinaryMask& y) {
    detail::require_same_extent(x, y, "dice");
    const auto o = detail::overlap(x, y);
    if (o.x + o.y == 0) return 1.0;
    return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.x + o.y);
}

/// |X∩Y| / |X∪Y|; two empty masks agree perfectly.
inline double iou(const BinaryMask& x, const BinaryMask& y) {
    detail::require_same_extent(x, y, "iou");
    const auto o = detail::overlap(x, y);
    const std::size_t uni = o.x + o.y - o.both;
    if (uni == 0) return 1.0;
    return static_cast<double>(o.both) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// ROC / AUC

struct RocPoint {
    double threshold;
    double fpr;
    double tpr;
};

/// Tie-aware ROC curve: one point per distinct score (descending), anchored
/// at (0,0) with threshold +inf and ending at (1,1).
struct RocCurve {
    std::vector<RocPoint> points;

    double trapezoid_area() const {
        double a = 0.0;
        for (std::size_t i = 1; i < points.size(); ++i)
            a += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
        return a;
    }
};

struct RocResult {
    RocCurve curve;
    double auc = 0.0;
};

/// AUC by the rank-sum statistic with midranks for tied scores.
inline RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw Error("roc_auc: labels must be 0 or 1");
        if (!std::isfinite(scores[i])) throw NumericError("roc_auc: non-finite score");
        n_pos += static_cast<std::size_t>(labels[i]);
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw NumericError("roc_auc: AUC undefined without both positive and negative labels");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Ascending midranks; the positive rank sum gives the Mann-Whitney U.
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += midrank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    RocResult out;
    out.auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);

    out.curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = order.size(); i > 0;) {
        std::size_t j = i;
        const double s = scores[order[i - 1]];
        while (j > 0 && scores[order[j - 1]] == s) {
            if (labels[order[j - 1]] == 1)
                ++tp;
            else
                ++fp;
            --j;
        }
        out.curve.points.push_back({s, static_cast<double>(fp) / nn, static_cast<double>(tp) / np});
        i = j;
    }
    return out;
}

inline double mean_auc(std::span<const double> per_class) {
    if (per_class.size() != kNumClasses)
        throw ShapeError("mean_auc: expected " + std::to_string(kNumClasses) + " per-class values, got " +
                         std::to_string(per_class.size()));
    double s = 0.0;
    for (double v : per_class) {
        if (!std::isfinite(v)) throw NumericError("mean_auc: non-finite per-class AUC");
        s += v;
    }
    return s / static_cast<double>(kNumClasses);
}

// ---------------------------------------------------------------------------
// Paired t-test

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t dof = 0;
    bool degenerate = false;  // zero spread with nonzero mean difference
};

/// Two-tailed Student-t probability P(|T| >= |t|) with `dof` degrees of freedom.
inline double student_t_two_tailed(double t, double dof) {
    if (!std::isfinite(t)) return 0.0;
    const double x = dof / (dof + t * t);
    return boost::math::ibeta(dof / 2.0, 0.5, x);
}

inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("paired_t_test: samples differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw ShapeError("paired_t_test: need at least two pairs");
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    TTestResult r;
    r.dof = n - 1;
    if (sd == 0.0) {
        if (mean == 0.0) return r;
        r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        r.degenerate = true;
        return r;
    }
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p = student_t_two_tailed(r.t, static_cast<double>(r.dof));
    return r;
}

// ---------------------------------------------------------------------------
// Grouped k-fold split

/// Partitions item indices into k folds so that items sharing a group key
/// always land in the same fold. Groups are shuffled by seed, then placed
/// largest first into the currently smallest fold.
inline std::vector<std::vector<std::size_t>> kfold_split(std::span<const std::string> group_keys, std::size_t k,
                                                         std::uint64_t seed) {
    if (k < 2) throw ConfigError("kfold_split: k must be at least 2");
    std::map<std::string, std::vector<std::size_t>> by_group;
    for (std::size_t i = 0; i < group_keys.size(); ++i) by_group[group_keys[i]].push_back(i);
    if (by_group.size() < k)
        throw ConfigError("kfold_split: " + std::to_string(by_group.size()) + " groups cannot fill " + std::to_string(k) +
                          " folds");
    std::vector<const std::vector<std::size_t>*> groups;
    for (const auto& [key, items] : by_group) groups.push_back(&items);
    Rng rng(seed);
    rng.shuffle(groups);
    std::stable_sort(groups.begin(), groups.end(), [](const auto* a, const auto* b) { return a->size() > b->size(); });

    std::vector<std::vector<std::size_t>> folds(k);
    for (const auto* g : groups) {
        auto smallest = std::min_element(folds.begin(), folds.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
        smallest->insert(smallest->end(), g->begin(), g->end());
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

}  // namespace sdfn
