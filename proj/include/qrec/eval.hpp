#pragma once

// Ranking quality: DCG / NDCG@5, average precision, interpolated
// precision-recall curves and the paired Wilcoxon signed-rank test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "qrec/common.hpp"
#include "qrec/taxonomy.hpp"

namespace qrec::eval {

struct GradedItem {
    std::string q2;
    double score = 0.0;  // one of 0, 0.5, 3, 7, 10
    bool relevant = false;
};

struct GradedRanking {
    std::string q1;
    std::vector<GradedItem> items;
};

inline constexpr double kRelevantScore = 7.0;

inline GradedItem graded_item(std::string q2, double sim) {
    double s = grade(sim).score;
    return {std::move(q2), s, s >= kRelevantScore};
}

/// g_1 + sum_{r=2}^{R} g_r / log2 r.
inline double dcg_at(const std::vector<double>& gains, std::size_t cutoff) {
    if (cutoff < 1) throw Error("DCG cutoff must be >= 1");
    double d = 0.0;
    const std::size_t n = std::min(cutoff, gains.size());
    for (std::size_t r = 1; r <= n; ++r) d += r == 1 ? gains[0] : gains[r - 1] / std::log2(static_cast<double>(r));
    return d;
}

inline std::vector<double> gains_of(const GradedRanking& g) {
    std::vector<double> out;
    out.reserve(g.items.size());
    for (const auto& it : g.items) out.push_back(it.score);
    return out;
}

inline double dcg_at(const GradedRanking& g, std::size_t cutoff) { return dcg_at(gains_of(g), cutoff); }

struct MetricValue {
    double value = 0.0;
    bool degenerate = false;  // no gain / no relevant item: scored 0
};

inline MetricValue ndcg_at(const GradedRanking& g, std::size_t cutoff) {
    auto gains = gains_of(g);
    auto ideal = gains;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double best = dcg_at(ideal, cutoff);
    if (best <= 0.0) return {0.0, true};
    return {dcg_at(gains, cutoff) / best, false};
}

inline MetricValue ndcg5(const GradedRanking& g) { return ndcg_at(g, 5); }

inline MetricValue average_precision(const GradedRanking& g) {
    double hits = 0.0, sum = 0.0;
    for (std::size_t j = 0; j < g.items.size(); ++j) {
        if (!g.items[j].relevant) continue;
        hits += 1.0;
        sum += hits / static_cast<double>(j + 1);
    }
    if (hits == 0.0) return {0.0, true};
    return {sum / hits, false};
}

inline double mean_average_precision(const std::vector<GradedRanking>& rankings) {
    if (rankings.empty()) throw Error("MAP of an empty ranking set");
    double s = 0.0;
    for (const auto& r : rankings) s += average_precision(r).value;
    return s / static_cast<double>(rankings.size());
}

struct CurvePoint {
    double recall = 0.0;
    double precision = 0.0;
};

/// Interpolated precision at `points` evenly spaced recall levels in [0, 1],
/// averaged over the rankings that contain at least one relevant item.
inline std::vector<CurvePoint> precision_recall_curve(const std::vector<GradedRanking>& rankings, std::size_t points) {
    if (points < 2) throw Error("precision-recall curve needs at least 2 points");
    std::vector<CurvePoint> curve(points);
    for (std::size_t k = 0; k < points; ++k)
        curve[k].recall = static_cast<double>(k) / static_cast<double>(points - 1);

    std::size_t used = 0;
    for (const auto& g : rankings) {
        std::size_t total_rel = 0;
        for (const auto& it : g.items) total_rel += it.relevant;
        if (total_rel == 0) continue;
        ++used;
        // suffix maximum of precision, indexed by number of retrieved relevant items
        std::vector<double> prec, rec;
        std::size_t hits = 0;
        for (std::size_t j = 0; j < g.items.size(); ++j) {
            hits += g.items[j].relevant;
            prec.push_back(static_cast<double>(hits) / static_cast<double>(j + 1));
            rec.push_back(static_cast<double>(hits) / static_cast<double>(total_rel));
        }
        for (std::size_t j = prec.size() - 1; j-- > 0;) prec[j] = std::max(prec[j], prec[j + 1]);
        for (auto& pt : curve) {
            auto it = std::lower_bound(rec.begin(), rec.end(), pt.recall);
            if (it != rec.end()) pt.precision += prec[static_cast<std::size_t>(it - rec.begin())];
        }
    }
    if (used > 0)
        for (auto& pt : curve) pt.precision /= static_cast<double>(used);
    return curve;
}

// ---------------------------------------------------------------------------

struct WilcoxonResult {
    double statistic = 0.0;  // W+, the sum of ranks of positive differences
    double p_value = 1.0;    // two-sided
    std::size_t n = 0;       // nonzero differences
    bool exact = false;
};

inline constexpr std::size_t kWilcoxonMinPairs = 6;
inline constexpr std::size_t kWilcoxonExactLimit = 25;

inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("Wilcoxon test needs paired samples of equal length");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
    const std::size_t n = d.size();
    if (n < kWilcoxonMinPairs)
        throw Error("Wilcoxon test needs at least " + std::to_string(kWilcoxonMinPairs) + " nonzero differences, got " +
                    std::to_string(n));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });

    // doubled average ranks stay integral: ranks i..j average to (i + j) / 2
    std::vector<std::int64_t> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        auto r2 = static_cast<std::int64_t>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
        double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    std::int64_t w2 = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) w2 += rank2[i];

    WilcoxonResult res;
    res.n = n;
    res.statistic = static_cast<double>(w2) / 2.0;

    if (n <= kWilcoxonExactLimit) {
        res.exact = true;
        std::int64_t max2 = 0;
        for (auto r : rank2) max2 += r;
        std::vector<double> ways(static_cast<std::size_t>(max2) + 1, 0.0);
        ways[0] = 1.0;
        for (auto r : rank2)
            for (std::int64_t s = max2; s >= r; --s) ways[s] += ways[s - r];
        const double total = std::ldexp(1.0, static_cast<int>(n));
        double lower = 0.0, upper = 0.0;
        for (std::int64_t s = 0; s <= max2; ++s) {
            if (s <= w2) lower += ways[s];
            if (s >= w2) upper += ways[s];
        }
        res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / total);
    } else {
        const double nn = static_cast<double>(n);
        const double mean = nn * (nn + 1.0) / 4.0;
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        if (var <= 0.0) {
            res.p_value = 1.0;
        } else {
            double z = std::max(0.0, std::abs(res.statistic - mean) - 0.5) / std::sqrt(var);
            res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
        }
    }
    return res;
}

// ---------------------------------------------------------------------------

struct MethodMetrics {
    std::string method;
    double ndcg5 = 0.0;
    double map = 0.0;
};

inline void write_metrics(std::ostream& out, const std::vector<MethodMetrics>& rows) {
    out << "method\tNDCG5\tMAP\n";
    for (const auto& r : rows) out << r.method << '\t' << fmt_num::sig(r.ndcg5, 6) << '\t' << fmt_num::sig(r.map, 6) << '\n';
}

inline void write_curve(std::ostream& out, const std::string& method, const std::vector<CurvePoint>& curve) {
    for (const auto& p : curve)
        out << method << '\t' << fmt_num::sig(p.recall, 6) << '\t' << fmt_num::sig(p.precision, 6) << '\n';
}

}  // namespace qrec::eval
