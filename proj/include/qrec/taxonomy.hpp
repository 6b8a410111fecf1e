#pragma once

// Query categorization against a local categorized-site index, category
// path similarities, graded labels, and trivial-variant clustering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qrec/common.hpp"
#include "qrec/log_core.hpp"

namespace qrec {

class CategoryPath {
public:
    CategoryPath() = default;

    explicit CategoryPath(std::vector<std::string> components) : components_(std::move(components)) {
        if (components_.empty()) throw Error("category path must have at least one component");
        for (const auto& c : components_)
            if (c.empty()) throw Error("category path has an empty component");
    }

    /// Parse "A/B/C"; components are whitespace-trimmed.
    static CategoryPath parse(std::string_view s) {
        std::vector<std::string> parts;
        for (auto p : text::split(s, '/')) parts.push_back(text::normalize_ws(p));
        return CategoryPath(std::move(parts));
    }

    std::size_t depth() const { return components_.size(); }
    const std::vector<std::string>& components() const { return components_; }

    std::string str() const {
        std::string out;
        for (std::size_t i = 0; i < components_.size(); ++i) {
            if (i) out += '/';
            out += components_[i];
        }
        return out;
    }

    friend bool operator==(const CategoryPath& a, const CategoryPath& b) { return a.components_ == b.components_; }
    /// Ordered by joined path string, which is also the tie-break order for voting.
    friend bool operator<(const CategoryPath& a, const CategoryPath& b) { return a.str() < b.str(); }

private:
    std::vector<std::string> components_;
};

struct CategorizedSite {
    std::string url;
    std::string title;
    std::string description;
    CategoryPath category;
};

struct CategoryAssignment {
    std::string query;
    std::optional<CategoryPath> category;
    std::map<CategoryPath, std::size_t> votes;
};

/// Taxonomy file: `url<TAB>title<TAB>description<TAB>category_path`.
inline std::vector<CategorizedSite> read_taxonomy(std::istream& in) {
    std::vector<CategorizedSite> sites;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::normalize_ws(line).empty()) continue;
        auto f = text::split(line, '\t');
        if (f.size() != 4 || f[0].empty())
            throw Error("taxonomy line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
        sites.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2]), CategoryPath::parse(f[3])});
    }
    return sites;
}

inline void write_taxonomy(std::ostream& out, const std::vector<CategorizedSite>& sites) {
    for (const auto& s : sites)
        out << s.url << '\t' << s.title << '\t' << s.description << '\t' << s.category.str() << '\n';
}

/// AND-retrieval: every chunk of `q` must occur in title + " " + description.
/// Each retrieved site votes for its category.
inline CategoryAssignment assign_category(const std::string& q, const std::vector<CategorizedSite>& index) {
    CategoryAssignment a;
    a.query = q;
    auto terms = text::chunks(q);
    if (terms.empty()) return a;
    for (const auto& site : index) {
        std::string hay = site.title + " " + site.description;
        bool all = std::all_of(terms.begin(), terms.end(),
                               [&](std::string_view t) { return hay.find(t) != std::string::npos; });
        if (all) ++a.votes[site.category];
    }
    // map order is path-string order, so the first maximum is the lexicographic tie-break
    std::size_t best = 0;
    for (const auto& [path, n] : a.votes)
        if (n > best) {
            best = n;
            a.category = path;
        }
    return a;
}

using AssignmentTable = std::map<std::string, CategoryAssignment>;

inline void write_assignments(std::ostream& out, const AssignmentTable& table) {
    for (const auto& [q, a] : table) {
        out << q << '\t' << (a.category ? a.category->str() : std::string("-")) << '\t'
            << (a.category ? a.votes.at(*a.category) : 0) << '\n';
    }
}

inline double sim_prefix(const CategoryPath& d1, const CategoryPath& d2) {
    const auto& a = d1.components();
    const auto& b = d2.components();
    std::size_t n = 0;
    while (n < a.size() && n < b.size() && a[n] == b[n]) ++n;
    return static_cast<double>(n) / static_cast<double>(std::max(a.size(), b.size()));
}

/// Number of shared components, counted as a multiset intersection.
inline std::size_t common_components(const CategoryPath& d1, const CategoryPath& d2) {
    std::map<std::string_view, int> bag;
    for (const auto& c : d1.components()) ++bag[c];
    std::size_t n = 0;
    for (const auto& c : d2.components()) {
        auto it = bag.find(c);
        if (it != bag.end() && it->second > 0) {
            --it->second;
            ++n;
        }
    }
    return n;
}

inline double sim_substring(const CategoryPath& d1, const CategoryPath& d2) {
    return static_cast<double>(common_components(d1, d2)) /
           static_cast<double>(std::max(d1.depth(), d2.depth()));
}

/// Max sim_substring over all voted category pairs; absent when either side
/// has no votes.
inline std::optional<double> query_similarity(const CategoryAssignment& a1, const CategoryAssignment& a2) {
    if (a1.votes.empty() || a2.votes.empty()) return std::nullopt;
    double best = 0.0;
    for (const auto& [c1, n1] : a1.votes)
        for (const auto& [c2, n2] : a2.votes) best = std::max(best, sim_substring(c1, c2));
    return best;
}

inline std::optional<double> query_similarity(const std::string& q1, const std::string& q2,
                                              const AssignmentTable& table) {
    auto i1 = table.find(q1);
    auto i2 = table.find(q2);
    if (i1 == table.end() || i2 == table.end()) return std::nullopt;
    return query_similarity(i1->second, i2->second);
}

enum class GradeLabel { Poor, Fair, Good, Excellent, Perfect };

inline std::string_view to_string(GradeLabel g) {
    switch (g) {
        case GradeLabel::Poor: return "poor";
        case GradeLabel::Fair: return "fair";
        case GradeLabel::Good: return "good";
        case GradeLabel::Excellent: return "excellent";
        case GradeLabel::Perfect: return "perfect";
    }
    return "?";
}

struct Grade {
    GradeLabel label;
    double score;
};

/// Five-grade judgement; intervals are lower-exclusive, upper-inclusive.
inline Grade grade(double sim) {
    if (!(sim >= 0.0 && sim <= 1.0)) throw Error("similarity outside [0,1]: " + fmt_num::sig(sim));
    if (sim > 0.75) return {GradeLabel::Perfect, 10.0};
    if (sim > 0.5) return {GradeLabel::Excellent, 7.0};
    if (sim > 0.25) return {GradeLabel::Good, 3.0};
    if (sim > 0.0) return {GradeLabel::Fair, 0.5};
    return {GradeLabel::Poor, 0.0};
}

// ---------------------------------------------------------------------------
// Trivial-variant clustering

using ClusterMap = std::map<std::string, std::size_t>;

inline constexpr double kDefaultVariantThreshold = 0.9;

namespace detail {

using SparseVec = std::map<std::string, double>;

inline double sparse_cosine(const SparseVec& a, double norm_a, const SparseVec& b, double norm_b) {
    if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
    const SparseVec& small = a.size() <= b.size() ? a : b;
    const SparseVec& large = a.size() <= b.size() ? b : a;
    double dot = 0.0;
    for (const auto& [k, v] : small) {
        auto it = large.find(k);
        if (it != large.end()) dot += v * it->second;
    }
    return dot / (norm_a * norm_b);
}

}  // namespace detail

/// Online single-pass clustering of queries by click vectors. Queries are
/// visited by descending click count (ties by query string); each joins the
/// first centroid within `threshold` cosine or founds a new cluster. A
/// centroid is the frequency-weighted mean of its members' click
/// distributions, i.e. their summed click vectors up to scale.
inline ClusterMap cluster_trivial_variants(const ClickStats& stats, double threshold = kDefaultVariantThreshold) {
    std::vector<std::pair<std::string, std::int64_t>> order(stats.cnt_q.begin(), stats.cnt_q.end());
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

    struct Centroid {
        detail::SparseVec sum;
        double norm = 0.0;
    };
    std::vector<Centroid> centroids;
    // url -> clusters whose centroid touches it
    std::map<std::string, std::vector<std::size_t>> touching;
    ClusterMap out;

    for (const auto& [q, c] : order) {
        detail::SparseVec v;
        double sq = 0.0;
        for (const auto& u : stats.urls_of(q)) {
            double x = static_cast<double>(stats.pair_count(u, q));
            v[u] = x;
            sq += x * x;
        }
        double norm = std::sqrt(sq);

        std::vector<std::size_t> cand;
        for (const auto& [u, x] : v) {
            auto it = touching.find(u);
            if (it != touching.end()) cand.insert(cand.end(), it->second.begin(), it->second.end());
        }
        std::sort(cand.begin(), cand.end());
        cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

        std::optional<std::size_t> joined;
        for (std::size_t id : cand) {
            if (detail::sparse_cosine(v, norm, centroids[id].sum, centroids[id].norm) >= threshold) {
                joined = id;
                break;
            }
        }
        if (!joined) {
            joined = centroids.size();
            centroids.emplace_back();
        }
        auto& cen = centroids[*joined];
        for (const auto& [u, x] : v) {
            auto [it, fresh] = cen.sum.try_emplace(u, 0.0);
            if (fresh) touching[u].push_back(*joined);
            it->second += x;
        }
        double s = 0.0;
        for (const auto& [u, x] : cen.sum) s += x * x;
        cen.norm = std::sqrt(s);
        out[q] = *joined;
    }
    return out;
}

inline bool same_cluster(const ClusterMap& clusters, const std::string& a, const std::string& b) {
    auto ia = clusters.find(a);
    auto ib = clusters.find(b);
    return ia != clusters.end() && ib != clusters.end() && ia->second == ib->second;
}

}  // namespace qrec
