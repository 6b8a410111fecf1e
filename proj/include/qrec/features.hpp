#pragma once

// Pairwise features for a (q1, q2) recommendation candidate.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "qrec/candidates.hpp"
#include "qrec/common.hpp"
#include "qrec/log_core.hpp"

namespace qrec {

/// Shannon entropy in bits of a count distribution. Zero counts are ignored.
template <class Counts>
double entropy_bits(const Counts& counts) {
    double total = 0.0;
    for (auto c : counts) total += static_cast<double>(c);
    if (total <= 0.0) return 0.0;
    double h = 0.0;
    for (auto c : counts) {
        if (c <= 0) continue;
        double p = static_cast<double>(c) / total;
        h -= p * std::log2(p);
    }
    return h;
}

inline double click_entropy(const std::string& q, const ClickStats& stats) {
    if (stats.query_count(q) <= 0) throw UnknownQuery(q);
    std::vector<std::int64_t> counts;
    for (const auto& u : stats.urls_of(q)) counts.push_back(stats.pair_count(u, q));
    return entropy_bits(counts);
}

inline double next_query_entropy(const std::string& q1, const SessionGraph& g) {
    auto it = g.successors.find(q1);
    if (it == g.successors.end()) return 0.0;
    std::vector<std::int64_t> counts;
    for (const auto& [q2, n] : it->second) counts.push_back(n);
    return entropy_bits(counts);
}

inline double next_query_entropy(const std::string& q1, const std::vector<Session>& sessions) {
    return next_query_entropy(q1, build_session_graph(sessions));
}

/// G^2 = 2 sum O ln(O/E) on a 2x2 table [[k11, k12], [k21, k22]].
inline double g_squared(double k11, double k12, double k21, double k22) {
    const double n = k11 + k12 + k21 + k22;
    if (n <= 0.0) return 0.0;
    const double r1 = k11 + k12, r2 = k21 + k22;
    const double c1 = k11 + k21, c2 = k12 + k22;
    auto term = [n](double o, double r, double c) {
        if (o <= 0.0) return 0.0;
        return o * std::log(o * n / (r * c));
    };
    double g = 2.0 * (term(k11, r1, c1) + term(k12, r1, c2) + term(k21, r2, c1) + term(k22, r2, c2));
    return std::max(0.0, g);
}

/// Log-likelihood ratio of q2 following q1, over all session-adjacent pairs.
inline double llr(const std::string& q1, const std::string& q2, const SessionGraph& g) {
    if (g.adjacencies <= 0) throw Error("llr needs at least one session-adjacent pair");
    const auto k11 = g.adjacent(q1, q2);
    const auto k12 = g.predecessor_total(q1) - k11;
    const auto k21 = g.successor_total(q2) - k11;
    const auto k22 = g.adjacencies - k11 - k12 - k21;
    return g_squared(static_cast<double>(k11), static_cast<double>(k12), static_cast<double>(k21),
                     static_cast<double>(k22));
}

inline double llr(const std::string& q1, const std::string& q2, const std::vector<Session>& sessions) {
    return llr(q1, q2, build_session_graph(sessions));
}

enum class EditUnit { CodePoint, Byte };

namespace detail {

template <class Seq>
std::size_t edit_distance(const Seq& a, const Seq& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

inline std::size_t levenshtein(std::string_view a, std::string_view b, EditUnit unit) {
    if (unit == EditUnit::Byte) return detail::edit_distance(a, b);
    return detail::edit_distance(text::utf8_decode(a), text::utf8_decode(b));
}

enum class BagUnit { Chunk, CharBigram };

namespace detail {

inline std::map<std::u32string, int> make_bag(std::string_view s, BagUnit unit) {
    std::map<std::u32string, int> bag;
    if (unit == BagUnit::Chunk) {
        for (auto c : text::chunks(s)) ++bag[text::utf8_decode(c)];
        return bag;
    }
    std::u32string cps;
    for (char32_t c : text::utf8_decode(s))
        if (!(c < 0x80 && text::is_space(static_cast<char>(c)))) cps.push_back(c);
    for (std::size_t i = 0; i + 1 < cps.size(); ++i) ++bag[cps.substr(i, 2)];
    return bag;
}

}  // namespace detail

inline double bag_cosine(std::string_view a, std::string_view b, BagUnit unit) {
    auto ba = detail::make_bag(a, unit);
    auto bb = detail::make_bag(b, unit);
    if (ba.empty() || bb.empty()) return 0.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [k, v] : ba) {
        na += static_cast<double>(v) * v;
        auto it = bb.find(k);
        if (it != bb.end()) dot += static_cast<double>(v) * it->second;
    }
    for (const auto& [k, v] : bb) nb += static_cast<double>(v) * v;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

// ---------------------------------------------------------------------------

inline constexpr std::size_t kNumFeatures = 23;

inline const std::array<std::string_view, kNumFeatures>& feature_names() {
    static const std::array<std::string_view, kNumFeatures> names = {
        "P_cc",       "P_ct",        "P_cs",   "Freq.q1", "Freq.q2",   "Freq.topic",
        "Len.q1",     "Len.q2",      "CLen.q1", "CLen.q2", "delta.Len", "delta.Len.Rel",
        "delta.CLen", "delta.CLen.Rel", "mb.Leven", "Leven", "CCos",     "BCos",
        "Ent.q1",     "Ent.q2",      "delta.Ent", "Next.Ent", "LLR"};
    return names;
}

inline constexpr std::string_view kTargetName = "Sim";

struct FeatureVector {
    double p_cc = 0, p_ct = 0, p_cs = 0;
    double freq_q1 = 0, freq_q2 = 0, freq_topic = 0;
    double len_q1 = 0, len_q2 = 0, clen_q1 = 0, clen_q2 = 0;
    double delta_len = 0, delta_len_rel = 0, delta_clen = 0, delta_clen_rel = 0;
    double mb_leven = 0, leven = 0;
    double ccos = 0, bcos = 0;
    double ent_q1 = 0, ent_q2 = 0, delta_ent = 0;
    double next_ent = 0, llr = 0;
    double sim = 0;  // training target

    /// The 23 model inputs in canonical column order.
    std::array<double, kNumFeatures> values() const {
        return {p_cc,      p_ct,          p_cs,       freq_q1,        freq_q2,  freq_topic, len_q1,   len_q2,
                clen_q1,   clen_q2,       delta_len,  delta_len_rel,  delta_clen, delta_clen_rel, mb_leven, leven,
                ccos,      bcos,          ent_q1,     ent_q2,         delta_ent, next_ent,   llr};
    }

    static FeatureVector from_values(const std::array<double, kNumFeatures>& v, double target) {
        FeatureVector f;
        double* fields[kNumFeatures] = {&f.p_cc,      &f.p_ct,      &f.p_cs,         &f.freq_q1,    &f.freq_q2,
                                        &f.freq_topic, &f.len_q1,    &f.len_q2,       &f.clen_q1,    &f.clen_q2,
                                        &f.delta_len, &f.delta_len_rel, &f.delta_clen, &f.delta_clen_rel,
                                        &f.mb_leven,  &f.leven,     &f.ccos,         &f.bcos,       &f.ent_q1,
                                        &f.ent_q2,    &f.delta_ent, &f.next_ent,     &f.llr};
        for (std::size_t i = 0; i < kNumFeatures; ++i) *fields[i] = v[i];
        f.sim = target;
        return f;
    }
};

/// Everything build_features reads. All members are immutable during use.
struct FeatureContext {
    const ClickStats& stats;
    const SessionGraph& sessions;
    const FacetLexicon& facets;
};

/// Relation strengths of a pair; zero where the pair is not in the relation.
struct RelationStrengths {
    double p_cc = 0, p_ct = 0, p_cs = 0;
};

/// Strengths looked up directly from the extractors' relation definitions.
inline RelationStrengths relation_strengths(const std::string& q1, const std::string& q2, const FeatureContext& ctx) {
    RelationStrengths s;
    if (q1 == q2) return s;
    if (ctx.stats.has_query(q1) && brccq(q1, ctx.stats).count(q2)) s.p_cc = p_cc(q1, q2, ctx.stats);
    if (ctq(q1, ctx.facets, ctx.stats).count(q2)) s.p_ct = p_ct(q1, q2, ctx.facets, ctx.stats);
    s.p_cs = p_cs(q1, q2, ctx.sessions);
    return s;
}

/// Full feature vector. Click-derived features of a query with no clicks
/// (seen only in sessions) are 0.
inline FeatureVector build_features(const std::string& q1, const std::string& q2, const RelationStrengths& rel,
                                    const FeatureContext& ctx) {
    if (!ctx.stats.has_query(q1) && ctx.sessions.occurrence_count(q1) == 0) throw UnknownQuery(q1);
    FeatureVector f;
    f.p_cc = rel.p_cc;
    f.p_ct = rel.p_ct;
    f.p_cs = rel.p_cs;
    f.freq_q1 = static_cast<double>(ctx.stats.query_count(q1));
    f.freq_q2 = static_cast<double>(ctx.stats.query_count(q2));
    f.freq_topic = static_cast<double>(topic_frequency(q1, ctx.facets, ctx.stats));

    f.len_q1 = static_cast<double>(text::utf8_decode(q1).size());
    f.len_q2 = static_cast<double>(text::utf8_decode(q2).size());
    f.clen_q1 = static_cast<double>(text::chunks(q1).size());
    f.clen_q2 = static_cast<double>(text::chunks(q2).size());
    f.delta_len = f.len_q2 - f.len_q1;
    f.delta_len_rel = f.delta_len / f.len_q1;
    f.delta_clen = f.clen_q2 - f.clen_q1;
    f.delta_clen_rel = f.delta_clen / f.clen_q1;
    f.mb_leven = static_cast<double>(levenshtein(q1, q2, EditUnit::CodePoint));
    f.leven = static_cast<double>(levenshtein(q1, q2, EditUnit::Byte));
    f.ccos = bag_cosine(q1, q2, BagUnit::Chunk);
    f.bcos = bag_cosine(q1, q2, BagUnit::CharBigram);

    f.ent_q1 = ctx.stats.has_query(q1) ? click_entropy(q1, ctx.stats) : 0.0;
    f.ent_q2 = ctx.stats.has_query(q2) ? click_entropy(q2, ctx.stats) : 0.0;
    f.delta_ent = f.ent_q1 - f.ent_q2;
    f.next_ent = next_query_entropy(q1, ctx.sessions);
    f.llr = ctx.sessions.adjacencies > 0 ? llr(q1, q2, ctx.sessions) : 0.0;
    return f;
}

inline FeatureVector build_features(const std::string& q1, const std::string& q2, const FeatureContext& ctx) {
    return build_features(q1, q2, relation_strengths(q1, q2, ctx), ctx);
}

// ---------------------------------------------------------------------------
// Feature matrix file

struct FeatureRow {
    std::string q1;
    std::string q2;
    std::string kind;  // comma-joined relation kinds, or "Random"
    FeatureVector features;
};

inline void write_feature_header(std::ostream& out) {
    out << "q1\tq2\tkind";
    for (auto n : feature_names()) out << '\t' << n;
    out << '\t' << kTargetName << '\n';
}

inline void write_feature_row(std::ostream& out, const FeatureRow& row) {
    out << row.q1 << '\t' << row.q2 << '\t' << row.kind;
    for (double v : row.features.values()) out << '\t' << fmt_num::sig(v, 12);
    out << '\t' << fmt_num::sig(row.features.sim, 12) << '\n';
}

inline void write_feature_matrix(std::ostream& out, const std::vector<FeatureRow>& rows) {
    write_feature_header(out);
    for (const auto& r : rows) write_feature_row(out, r);
}

inline std::vector<FeatureRow> read_feature_matrix(std::istream& in) {
    std::vector<FeatureRow> rows;
    std::string line;
    if (!std::getline(in, line)) throw Error("feature matrix: missing header");
    auto header = text::split(line, '\t');
    if (header.size() != kNumFeatures + 4) throw Error("feature matrix: header has wrong column count");
    for (std::size_t i = 0; i < kNumFeatures; ++i)
        if (header[3 + i] != feature_names()[i])
            throw Error("feature matrix: unexpected column '" + std::string(header[3 + i]) + "'");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = text::split(line, '\t');
        if (f.size() != kNumFeatures + 4)
            throw Error("feature matrix line " + std::to_string(lineno) + ": wrong column count");
        std::array<double, kNumFeatures> v{};
        for (std::size_t i = 0; i < kNumFeatures; ++i) v[i] = fmt_num::parse_double(f[3 + i]);
        rows.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2]),
                        FeatureVector::from_values(v, fmt_num::parse_double(f[3 + kNumFeatures]))});
    }
    return rows;
}

}  // namespace qrec
