#pragma once

// Candidate recommendation extractors: best-rank co-click, co-topic (facet
// expansion) and co-session relations, each with its strength estimate.

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "qrec/common.hpp"
#include "qrec/log_core.hpp"

namespace qrec {

enum class RelationKind { CoClick = 0, CoTopic = 1, CoSession = 2 };

inline std::string_view to_string(RelationKind k) {
    switch (k) {
        case RelationKind::CoClick: return "CoClick";
        case RelationKind::CoTopic: return "CoTopic";
        case RelationKind::CoSession: return "CoSession";
    }
    return "?";
}

inline RelationKind relation_from_string(std::string_view s) {
    if (s == "CoClick") return RelationKind::CoClick;
    if (s == "CoTopic") return RelationKind::CoTopic;
    if (s == "CoSession") return RelationKind::CoSession;
    throw Error("unknown relation kind: '" + std::string(s) + "'");
}

struct CandidatePair {
    std::string q1;
    std::string q2;
    RelationKind kind = RelationKind::CoClick;
    double strength = 0.0;
};

// ---------------------------------------------------------------------------
// Best-rank co-click

/// Union over the clicked URLs of `q` of the queries that rank that URL best.
/// All minimizers are kept; `q` itself is excluded.
inline std::set<std::string> brccq(const std::string& q, const ClickStats& stats) {
    std::set<std::string> out;
    for (const auto& u : stats.urls_of(q)) {
        int best = 0;
        std::vector<const std::string*> winners;
        for (const auto& other : stats.queries_of(u)) {
            int r = stats.rank_of(u, other);
            if (winners.empty() || r < best) {
                best = r;
                winners.assign(1, &other);
            } else if (r == best) {
                winners.push_back(&other);
            }
        }
        for (const auto* w : winners)
            if (*w != q) out.insert(*w);
    }
    return out;
}

/// Per-URL set of best-ranking queries, precomputed once for bulk extraction.
struct BestRankIndex {
    std::map<std::string, std::vector<std::string>> winners;  // url -> argmin queries
};

inline BestRankIndex build_best_rank_index(const ClickStats& stats) {
    BestRankIndex idx;
    for (const auto& [u, queries] : stats.qc) {
        int best = 0;
        std::vector<std::string> w;
        for (const auto& q : queries) {
            int r = stats.rank_of(u, q);
            if (w.empty() || r < best) {
                best = r;
                w.assign(1, q);
            } else if (r == best) {
                w.push_back(q);
            }
        }
        idx.winners.emplace(u, std::move(w));
    }
    return idx;
}

inline std::set<std::string> brccq(const std::string& q, const ClickStats& stats, const BestRankIndex& idx) {
    std::set<std::string> out;
    for (const auto& u : stats.urls_of(q)) {
        auto it = idx.winners.find(u);
        if (it == idx.winners.end()) continue;
        for (const auto& w : it->second)
            if (w != q) out.insert(w);
    }
    return out;
}

/// Co-click strength: sum over u in UC_q1 of P(u|q1) P(q2) P(u|q2) / P(u).
inline double p_cc(const std::string& q1, const std::string& q2, const ClickStats& stats) {
    if (!stats.has_query(q1)) throw UnknownQuery(q1);
    double sum = 0.0;
    const double pq2 = stats.p_query(q2);
    for (const auto& u : stats.urls_of(q1)) {
        double pu_q2 = stats.p_url_given_query(u, q2);
        if (pu_q2 == 0.0) continue;
        sum += stats.p_url_given_query(u, q1) * pq2 * pu_q2 / stats.p_url(u);
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Co-topic

struct FacetLexicon {
    std::map<std::string, std::size_t> facets;  // facet word -> distinct qualifying queries
    std::size_t min_distinct = 5;
    std::int64_t min_query_freq = 10;

    bool contains(std::string_view w) const { return facets.find(std::string(w)) != facets.end(); }
};

/// A word is a facet directive when it ends at least `min_distinct` distinct
/// multi-chunk queries, each clicked at least `min_query_freq` times.
inline FacetLexicon detect_facets(const ClickStats& stats, std::size_t min_distinct = 5,
                                  std::int64_t min_query_freq = 10) {
    FacetLexicon lex;
    lex.min_distinct = min_distinct;
    lex.min_query_freq = min_query_freq;
    std::map<std::string, std::size_t> tally;
    for (const auto& [q, c] : stats.cnt_q) {
        if (c < min_query_freq) continue;
        auto parts = text::chunks(q);
        if (parts.size() < 2) continue;
        ++tally[std::string(parts.back())];
    }
    for (auto& [w, n] : tally)
        if (n >= min_distinct) lex.facets.emplace(w, n);
    return lex;
}

/// Logged queries of the form `q1 + " " + facet`.
inline std::set<std::string> ctq(const std::string& q1, const FacetLexicon& lex, const ClickStats& stats) {
    std::set<std::string> out;
    for (const auto& [w, n] : lex.facets) {
        std::string q2 = q1 + " " + w;
        if (stats.query_count(q2) > 0) out.insert(std::move(q2));
    }
    return out;
}

/// cnt(q1) + sum of cnt over the co-topic expansions of q1.
inline std::int64_t topic_frequency(const std::string& q1, const FacetLexicon& lex, const ClickStats& stats) {
    std::int64_t total = stats.query_count(q1);
    for (const auto& q2 : ctq(q1, lex, stats)) total += stats.query_count(q2);
    return total;
}

inline double p_ct(const std::string& q1, const std::string& q2, const FacetLexicon& lex, const ClickStats& stats) {
    auto expansions = ctq(q1, lex, stats);
    if (expansions.count(q2) == 0) throw Error("'" + q2 + "' is not a co-topic expansion of '" + q1 + "'");
    std::int64_t denom = stats.query_count(q1);
    for (const auto& e : expansions) denom += stats.query_count(e);
    return static_cast<double>(stats.query_count(q2)) / static_cast<double>(denom);
}

// ---------------------------------------------------------------------------
// Co-session

/// Adjacency counts over all sessions. An "occurrence" is one session event;
/// an adjacency is an ordered pair of consecutive events in one session.
struct SessionGraph {
    std::map<std::string, std::int64_t> occurrences;
    std::map<std::string, std::map<std::string, std::int64_t>> successors;
    std::map<std::string, std::int64_t> out_degree;  // adjacencies with this predecessor
    std::map<std::string, std::int64_t> in_degree;   // adjacencies with this successor
    std::int64_t adjacencies = 0;

    std::int64_t occurrence_count(const std::string& q) const {
        auto it = occurrences.find(q);
        return it == occurrences.end() ? 0 : it->second;
    }
    std::int64_t adjacent(const std::string& q1, const std::string& q2) const {
        auto it = successors.find(q1);
        if (it == successors.end()) return 0;
        auto jt = it->second.find(q2);
        return jt == it->second.end() ? 0 : jt->second;
    }
    std::int64_t predecessor_total(const std::string& q) const {
        auto it = out_degree.find(q);
        return it == out_degree.end() ? 0 : it->second;
    }
    std::int64_t successor_total(const std::string& q) const {
        auto it = in_degree.find(q);
        return it == in_degree.end() ? 0 : it->second;
    }
};

inline SessionGraph build_session_graph(const std::vector<Session>& sessions) {
    SessionGraph g;
    for (const auto& s : sessions) {
        for (std::size_t i = 0; i < s.queries.size(); ++i) {
            ++g.occurrences[s.queries[i].query];
            if (i + 1 < s.queries.size()) {
                const auto& a = s.queries[i].query;
                const auto& b = s.queries[i + 1].query;
                ++g.successors[a][b];
                ++g.out_degree[a];
                ++g.in_degree[b];
                ++g.adjacencies;
            }
        }
    }
    return g;
}

inline std::set<std::string> csq(const std::string& q1, const SessionGraph& g) {
    std::set<std::string> out;
    auto it = g.successors.find(q1);
    if (it == g.successors.end()) return out;
    for (const auto& [q2, n] : it->second)
        if (q2 != q1 && n > 0) out.insert(q2);
    return out;
}

inline std::set<std::string> csq(const std::string& q1, const std::vector<Session>& sessions) {
    return csq(q1, build_session_graph(sessions));
}

/// Fraction of session occurrences of q1 immediately followed by q2.
inline double p_cs(const std::string& q1, const std::string& q2, const SessionGraph& g) {
    auto occ = g.occurrence_count(q1);
    if (occ == 0) return 0.0;
    return static_cast<double>(g.adjacent(q1, q2)) / static_cast<double>(occ);
}

inline double p_cs(const std::string& q1, const std::string& q2, const std::vector<Session>& sessions) {
    return p_cs(q1, q2, build_session_graph(sessions));
}

// ---------------------------------------------------------------------------

struct CandidateContext {
    const ClickStats& stats;
    const SessionGraph& sessions;
    const FacetLexicon& facets;
    const BestRankIndex* best_rank = nullptr;  // optional accelerator for brccq
};

/// All three extractors for one original query, ordered by kind, then
/// strength descending, then q2.
inline std::vector<CandidatePair> generate_all(const std::string& q1, const CandidateContext& ctx) {
    std::vector<CandidatePair> out;
    if (ctx.stats.has_query(q1))
        for (const auto& q2 : ctx.best_rank ? brccq(q1, ctx.stats, *ctx.best_rank) : brccq(q1, ctx.stats))
            out.push_back({q1, q2, RelationKind::CoClick, p_cc(q1, q2, ctx.stats)});

    auto topic = ctq(q1, ctx.facets, ctx.stats);
    if (!topic.empty()) {
        double denom = static_cast<double>(topic_frequency(q1, ctx.facets, ctx.stats));
        for (const auto& q2 : topic)
            if (q2 != q1)
                out.push_back({q1, q2, RelationKind::CoTopic,
                               static_cast<double>(ctx.stats.query_count(q2)) / denom});
    }

    for (const auto& q2 : csq(q1, ctx.sessions))
        out.push_back({q1, q2, RelationKind::CoSession, p_cs(q1, q2, ctx.sessions)});

    std::sort(out.begin(), out.end(), [](const CandidatePair& a, const CandidatePair& b) {
        return std::tuple(static_cast<int>(a.kind), -a.strength, std::string_view(a.q2)) <
               std::tuple(static_cast<int>(b.kind), -b.strength, std::string_view(b.q2));
    });
    return out;
}

inline void write_candidates(std::ostream& out, const std::vector<CandidatePair>& pairs) {
    for (const auto& p : pairs)
        out << p.q1 << '\t' << p.q2 << '\t' << to_string(p.kind) << '\t' << fmt_num::sig(p.strength, 12) << '\n';
}

}  // namespace qrec
