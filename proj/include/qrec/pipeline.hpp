#pragma once

// End-to-end orchestration: a synthetic topic-structured click world, dataset
// assembly with random negative pairs, and two-fold cross-validation of the
// learned ranker against the single-signal rankings.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qrec/candidates.hpp"
#include "qrec/common.hpp"
#include "qrec/eval.hpp"
#include "qrec/features.hpp"
#include "qrec/gbdt.hpp"
#include "qrec/log_core.hpp"
#include "qrec/taxonomy.hpp"

namespace qrec::pipeline {

// ---------------------------------------------------------------------------
// Configuration

struct SynthConfig {
    std::size_t n_topics = 240;
    std::size_t n_queries = 1080;  // topic queries plus facet expansions
    std::size_t n_urls = 2200;
    std::size_t n_users = 3000;
    std::size_t n_events = 45000;  // search actions; each yields one or two clicks
    std::vector<std::string> facet_vocab = {"recipe", "restaurant", "map", "hotel", "price", "review", "news"};
    std::uint64_t seed = 42;
    std::int64_t session_gap_s = 60;  // mean gap between queries inside a session

    void validate() const {
        if (n_topics < 1 || n_queries < 1 || n_urls < 1 || n_users < 1 || n_events < 1)
            throw Error("synthetic world sizes must all be >= 1");
        if (facet_vocab.empty()) throw Error("facet vocabulary is empty");
        if (n_queries < n_topics) throw Error("n_queries must be >= n_topics");
        if (session_gap_s < 1) throw Error("session_gap_s must be >= 1");
    }
};

struct PipelineConfig {
    SynthConfig synth;
    gbdt::TrainConfig train;
    std::int64_t session_timeout = kDefaultSessionTimeout;
    double neg_ratio = 1.0;
    double variant_threshold = kDefaultVariantThreshold;
    std::size_t facet_min_distinct = 5;
    std::int64_t facet_min_freq = 10;
    std::int64_t min_q1_freq = 10;
    std::size_t pr_points = 11;
};

/// Apply one `key=value` setting. Unknown keys are an error.
inline void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    auto as_size = [&]() {
        std::size_t v = 0;
        if (!fmt_num::parse_int(value, v)) throw Error("config: '" + key + "' expects a non-negative integer");
        return v;
    };
    auto as_int = [&]() {
        std::int64_t v = 0;
        if (!fmt_num::parse_int(value, v)) throw Error("config: '" + key + "' expects an integer");
        return v;
    };
    auto as_double = [&]() { return fmt_num::parse_double(value); };

    if (key == "seed") cfg.synth.seed = as_size();
    else if (key == "n_topics") cfg.synth.n_topics = as_size();
    else if (key == "n_queries") cfg.synth.n_queries = as_size();
    else if (key == "n_urls") cfg.synth.n_urls = as_size();
    else if (key == "n_users") cfg.synth.n_users = as_size();
    else if (key == "n_events") cfg.synth.n_events = as_size();
    else if (key == "session_gap_s") cfg.synth.session_gap_s = as_int();
    else if (key == "facets") {
        cfg.synth.facet_vocab.clear();
        for (auto w : text::split(value, ','))
            if (auto t = text::normalize_ws(w); !t.empty()) cfg.synth.facet_vocab.push_back(t);
    }
    else if (key == "session_timeout") cfg.session_timeout = as_int();
    else if (key == "neg_ratio") cfg.neg_ratio = as_double();
    else if (key == "variant_threshold") cfg.variant_threshold = as_double();
    else if (key == "facet_min_distinct") cfg.facet_min_distinct = as_size();
    else if (key == "facet_min_freq") cfg.facet_min_freq = as_int();
    else if (key == "min_q1_freq") cfg.min_q1_freq = as_int();
    else if (key == "pr_points") cfg.pr_points = as_size();
    else if (key == "n_trees") cfg.train.n_trees = static_cast<int>(as_int());
    else if (key == "shrinkage") cfg.train.shrinkage = as_double();
    else if (key == "max_depth") cfg.train.max_depth = static_cast<int>(as_int());
    else if (key == "min_leaf") cfg.train.min_leaf = static_cast<int>(as_int());
    else if (key == "patience") cfg.train.patience = static_cast<int>(as_int());
    else throw Error("config: unknown key '" + key + "'");
}

/// Plain-text `key=value` lines; `#` starts a comment.
inline void read_config(std::istream& in, PipelineConfig& cfg) {
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto t = text::normalize_ws(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key=value");
        apply_setting(cfg, text::normalize_ws(t.substr(0, eq)), text::normalize_ws(t.substr(eq + 1)));
    }
}

// ---------------------------------------------------------------------------
// Synthetic world

namespace detail {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }
    double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    bool chance(double p) { return unit() < p; }
    std::int64_t between(std::int64_t lo, std::int64_t hi) { return lo + static_cast<std::int64_t>(below(static_cast<std::size_t>(hi - lo + 1))); }

    /// Index drawn proportionally to `cumulative` (a running sum of weights).
    std::size_t weighted(const std::vector<double>& cumulative) {
        double x = unit() * cumulative.back();
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
        return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 gen_;
};

inline const std::array<std::string_view, 24> kSyllables = {"ka", "mo", "ra", "be", "lu", "no", "ti", "su", "ze", "pa", "ri", "do",
                                                            "ga", "he", "ni", "lo", "ve", "shi", "to", "mi", "fu", "ya", "ko", "we"};
inline const std::array<std::string_view, 8> kTops = {"Arts", "Recreation", "Food", "Science",
                                                      "Sports", "Business", "Health", "Travel"};
inline const std::array<std::string_view, 6> kFillers = {"guide", "official", "info", "portal", "club", "world"};

inline std::string capitalize(std::string s) {
    if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
}

/// Unique pseudo-words, none a substring of another or of a reserved word,
/// so that substring AND-retrieval never matches across words.
inline std::vector<std::string> make_words(Rng& rng, std::size_t n, const std::vector<std::string>& reserved) {
    std::vector<std::string> words;
    auto clashes = [&](const std::string& w) {
        for (const auto& r : reserved)
            if (r.find(w) != std::string::npos || w.find(r) != std::string::npos) return true;
        for (const auto& o : words)
            if (o.find(w) != std::string::npos || w.find(o) != std::string::npos) return true;
        return false;
    };
    std::size_t attempts = 0;
    while (words.size() < n) {
        if (++attempts > 1000 * (n + 10)) throw Error("could not generate enough distinct synthetic words");
        std::size_t syl = 3 + rng.below(2);
        std::string w;
        for (std::size_t i = 0; i < syl; ++i) w += kSyllables[rng.below(kSyllables.size())];
        if (!clashes(w)) words.push_back(std::move(w));
    }
    return words;
}

}  // namespace detail

struct SynthOutput {
    std::vector<ClickRecord> log;
    std::vector<CategorizedSite> taxonomy;
};

/// Generate a topic-structured click log and a matching taxonomy.
///
/// Topics are grouped four to a sub-category and sub-categories spread over
/// a handful of top categories. Each topic has a query, some facet
/// expansions ("topic facet"), general URLs, one URL per expansion and a URL
/// shared with its sibling topics; a few portal URLs with navigational
/// queries are clicked from everywhere. A few orphan queries have no
/// categorized site at all. Expansions rank their own URL first,
/// which plants co-click pairs; sessions mix drill-downs, moves to sibling
/// topics and unrelated noise.
inline SynthOutput synth_logs(const SynthConfig& cfg) {
    cfg.validate();
    detail::Rng rng(cfg.seed);
    const std::size_t n_facets = cfg.facet_vocab.size();
    const std::size_t max_expansions = cfg.n_topics * n_facets;
    const std::size_t n_expansions = std::min(cfg.n_queries - cfg.n_topics, max_expansions);
    constexpr std::size_t kTopicsPerSub = 4;
    constexpr std::size_t kHubs = 6;
    const std::size_t n_orphans = std::max<std::size_t>(1, cfg.n_topics / 12);

    std::vector<std::string> reserved(cfg.facet_vocab.begin(), cfg.facet_vocab.end());
    for (auto f : detail::kFillers) reserved.emplace_back(f);
    auto words = detail::make_words(rng, cfg.n_topics + kHubs + n_orphans, reserved);
    auto at = [&](std::size_t k) { return words.begin() + static_cast<std::ptrdiff_t>(k); };
    std::vector<std::string> topic_word(words.begin(), at(cfg.n_topics));
    std::vector<std::string> hub_word(at(cfg.n_topics), at(cfg.n_topics + kHubs));
    // orphan queries have their own pages but no categorized site
    std::vector<std::string> orphan_word(at(cfg.n_topics + kHubs), words.end());

    const std::size_t n_subs = (cfg.n_topics + kTopicsPerSub - 1) / kTopicsPerSub;
    auto sub_of = [&](std::size_t t) { return t / kTopicsPerSub; };
    auto sub_name = [&](std::size_t s) {
        return std::string(detail::kTops[s % detail::kTops.size()]) + " Section " + std::to_string(s / detail::kTops.size() + 1);
    };
    auto topic_path = [&](std::size_t t) {
        std::size_t s = sub_of(t);
        return std::vector<std::string>{std::string(detail::kTops[s % detail::kTops.size()]), sub_name(s),
                                        detail::capitalize(topic_word[t])};
    };

    // Facet expansions: every topic gets at least one when budget allows,
    // the rest are spread at random.
    std::vector<std::vector<std::size_t>> facets_of(cfg.n_topics);
    {
        std::vector<std::pair<std::size_t, std::size_t>> slots;
        for (std::size_t t = 0; t < cfg.n_topics; ++t)
            for (std::size_t f = 0; f < n_facets; ++f) slots.emplace_back(t, f);
        rng.shuffle(slots);
        std::stable_partition(slots.begin(), slots.end(), [&, seen = std::vector<char>(cfg.n_topics, 0)](const auto& s) mutable {
            if (seen[s.first]) return false;
            seen[s.first] = 1;
            return true;
        });
        for (std::size_t i = 0; i < n_expansions; ++i) facets_of[slots[i].first].push_back(slots[i].second);
        for (auto& v : facets_of) std::sort(v.begin(), v.end());
    }

    // URLs
    const std::size_t fixed_urls = n_expansions + n_subs + kHubs;
    const std::size_t general_per_topic =
        std::max<std::size_t>(2, cfg.n_urls > fixed_urls ? (cfg.n_urls - fixed_urls) / cfg.n_topics : 2);
    auto general_url = [&](std::size_t t, std::size_t k) {
        return "http://" + topic_word[t] + ".example/" + std::to_string(k);
    };
    auto facet_url = [&](std::size_t t, std::size_t f) {
        return "http://" + topic_word[t] + ".example/" + cfg.facet_vocab[f];
    };
    auto sub_url = [&](std::size_t s) { return "http://compare.example/section" + std::to_string(s); };
    auto hub_url = [&](std::size_t h) { return "http://" + hub_word[h] + ".example/"; };

    // Queries
    enum class QKind { Topic, Expansion, Nav, Orphan };
    struct Query {
        QKind kind;
        std::size_t topic;  // or hub / orphan index
        std::size_t facet;
        std::string text;
    };
    std::vector<Query> queries;
    std::vector<std::size_t> topic_query(cfg.n_topics);
    std::vector<std::map<std::size_t, std::size_t>> expansion_query(cfg.n_topics);
    for (std::size_t t = 0; t < cfg.n_topics; ++t) {
        topic_query[t] = queries.size();
        queries.push_back({QKind::Topic, t, 0, topic_word[t]});
        for (auto f : facets_of[t]) {
            expansion_query[t][f] = queries.size();
            queries.push_back({QKind::Expansion, t, f, topic_word[t] + " " + cfg.facet_vocab[f]});
        }
    }
    std::vector<std::size_t> nav_query(kHubs);
    for (std::size_t h = 0; h < kHubs; ++h) {
        nav_query[h] = queries.size();
        queries.push_back({QKind::Nav, h, 0, hub_word[h]});
    }
    std::vector<std::size_t> orphan_query(n_orphans);
    for (std::size_t o = 0; o < n_orphans; ++o) {
        orphan_query[o] = queries.size();
        queries.push_back({QKind::Orphan, o, 0, orphan_word[o]});
    }
    auto orphan_url = [&](std::size_t o) { return "http://" + orphan_word[o] + ".example/"; };

    // Per-(query, url) result positions are fixed properties of the world.
    std::map<std::pair<std::size_t, std::string>, int> position;
    auto pos = [&](std::size_t q, const std::string& u, int lo, int hi) {
        auto [it, fresh] = position.try_emplace({q, u}, 0);
        if (fresh) it->second = static_cast<int>(rng.between(lo, hi));
        return it->second;
    };

    // Topic popularity: Zipf-like weights over a random permutation.
    std::vector<double> topic_cum(cfg.n_topics);
    {
        std::vector<std::size_t> perm(cfg.n_topics);
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(perm);
        double acc = 0.0;
        std::vector<double> w(cfg.n_topics);
        for (std::size_t i = 0; i < perm.size(); ++i) w[perm[i]] = 1.0 / std::pow(static_cast<double>(i + 1), 0.6);
        for (std::size_t t = 0; t < cfg.n_topics; ++t) topic_cum[t] = (acc += w[t]);
    }
    auto random_topic = [&]() { return rng.weighted(topic_cum); };
    auto sibling_of = [&](std::size_t t) -> std::optional<std::size_t> {
        std::size_t s = sub_of(t);
        std::vector<std::size_t> sib;
        for (std::size_t o = s * kTopicsPerSub; o < std::min(cfg.n_topics, (s + 1) * kTopicsPerSub); ++o)
            if (o != t) sib.push_back(o);
        if (sib.empty()) return std::nullopt;
        return sib[rng.below(sib.size())];
    };
    auto random_expansion = [&](std::size_t t) -> std::optional<std::size_t> {
        if (facets_of[t].empty()) return std::nullopt;
        return expansion_query[t].at(facets_of[t][rng.below(facets_of[t].size())]);
    };

    // One click: choose a URL and its displayed position for query q.
    auto click = [&](std::size_t qi) -> std::pair<std::string, int> {
        const Query& q = queries[qi];
        double x = rng.unit();
        if (q.kind == QKind::Orphan) {
            if (x < 0.9) return {orphan_url(q.topic), 1};
            std::size_t h = rng.below(kHubs);
            return {hub_url(h), pos(qi, hub_url(h), 3, 8)};
        }
        if (q.kind == QKind::Nav) {
            if (x < 0.95) return {hub_url(q.topic), 1};
            std::size_t h = rng.below(kHubs);
            return {hub_url(h), pos(qi, hub_url(h), 3, 6)};
        }
        const std::size_t t = q.topic;
        if (q.kind == QKind::Topic) {
            if (x < 0.62) {
                std::size_t k = std::min(rng.below(general_per_topic), rng.below(general_per_topic));
                return {general_url(t, k), static_cast<int>(k) + 1};
            }
            if (x < 0.80 && !facets_of[t].empty()) {
                std::size_t f = facets_of[t][rng.below(facets_of[t].size())];
                return {facet_url(t, f), pos(qi, facet_url(t, f), 4, 9)};
            }
            if (x < 0.90) return {sub_url(sub_of(t)), pos(qi, sub_url(sub_of(t)), 2, 10)};
            std::size_t h = rng.below(kHubs);
            return {hub_url(h), pos(qi, hub_url(h), 5, 10)};
        }
        // expansion
        if (x < 0.62) return {facet_url(t, q.facet), 1};
        if (x < 0.84) {
            std::size_t k = rng.below(general_per_topic);
            return {general_url(t, k), pos(qi, general_url(t, k), 2, 8)};
        }
        if (x < 0.90) return {sub_url(sub_of(t)), pos(qi, sub_url(sub_of(t)), 2, 10)};
        std::size_t h = rng.below(kHubs);
        return {hub_url(h), pos(qi, hub_url(h), 5, 10)};
    };

    auto start_query = [&]() -> std::size_t {
        double x = rng.unit();
        std::size_t t = random_topic();
        if (x < 0.62) return topic_query[t];
        if (x < 0.88) {
            if (auto e = random_expansion(t)) return *e;
            return topic_query[t];
        }
        if (x < 0.96) return nav_query[rng.below(kHubs)];
        return orphan_query[rng.below(n_orphans)];
    };
    auto next_query = [&](std::size_t cur) -> std::size_t {
        const Query& q = queries[cur];
        double x = rng.unit();
        if (q.kind == QKind::Orphan) return x < 0.5 ? topic_query[random_topic()] : orphan_query[rng.below(n_orphans)];
        if (q.kind == QKind::Nav) {
            if (x < 0.8) return topic_query[random_topic()];
            return nav_query[rng.below(kHubs)];
        }
        const std::size_t t = q.topic;
        if (q.kind == QKind::Topic) {
            if (x < 0.38) {
                if (auto e = random_expansion(t)) return *e;
            } else if (x < 0.62) {
                if (auto s = sibling_of(t)) return topic_query[*s];
            } else if (x < 0.72) {
                // a topic in a neighbouring section of the same top category
                std::size_t s2 = (sub_of(t) + detail::kTops.size()) % n_subs;
                std::size_t o = std::min(cfg.n_topics - 1, s2 * kTopicsPerSub + rng.below(kTopicsPerSub));
                return topic_query[o];
            } else if (x < 0.83) {
                return topic_query[random_topic()];
            } else if (x < 0.95) {
                return nav_query[rng.below(kHubs)];
            } else {
                return orphan_query[rng.below(n_orphans)];
            }
            return topic_query[random_topic()];
        }
        // expansion
        if (x < 0.30) {
            if (auto e = random_expansion(t)) return *e;
        } else if (x < 0.45) {
            return topic_query[t];
        } else if (x < 0.62) {
            if (auto s = sibling_of(t)) {
                auto it = expansion_query[*s].find(q.facet);
                return it != expansion_query[*s].end() ? it->second : topic_query[*s];
            }
        } else if (x < 0.86) {
            return topic_query[random_topic()];
        } else {
            return nav_query[rng.below(kHubs)];
        }
        return topic_query[random_topic()];
    };

    SynthOutput out;
    std::vector<std::int64_t> clock(cfg.n_users);
    for (auto& c : clock) c = rng.between(1'300'000'000, 1'300'000'000 + 86'400);
    std::size_t events = 0;
    while (events < cfg.n_events) {
        std::size_t user = rng.below(cfg.n_users);
        std::string uid = "u" + std::to_string(user);
        std::int64_t& now = clock[user];
        now += rng.between(1'000, 40'000);
        std::size_t q = start_query();
        std::size_t len = 1;
        while (len < 6 && rng.chance(len == 1 ? 0.75 : 0.55)) ++len;
        for (std::size_t step = 0; step < len && events < cfg.n_events; ++step) {
            if (step > 0) {
                q = next_query(q);
                now += rng.between(5, 2 * cfg.session_gap_s);
            }
            ++events;
            std::size_t n_clicks = rng.chance(0.35) ? 2 : 1;
            std::set<std::string> clicked;
            for (std::size_t c = 0; c < n_clicks; ++c) {
                auto [url, rank] = click(q);
                if (!clicked.insert(url).second) continue;
                if (rng.chance(0.15)) ++rank;
                out.log.push_back({now + static_cast<std::int64_t>(c) * 7, uid, queries[q].text, url, rank});
            }
        }
    }

    // Taxonomy: general topic sites, one site per expansion filed under a
    // facet sub-category, and the portals.
    for (std::size_t t = 0; t < cfg.n_topics; ++t) {
        auto base = topic_path(t);
        for (std::size_t k = 0; k < 3; ++k) {
            std::string filler(detail::kFillers[(t + k) % detail::kFillers.size()]);
            out.taxonomy.push_back({general_url(t, k), topic_word[t] + " " + filler, "all about " + topic_word[t],
                                    CategoryPath(base)});
        }
        for (auto f : facets_of[t]) {
            auto path = base;
            path.push_back(detail::capitalize(cfg.facet_vocab[f]));
            out.taxonomy.push_back({facet_url(t, f), topic_word[t] + " " + cfg.facet_vocab[f], "selected " + cfg.facet_vocab[f],
                                    CategoryPath(path)});
        }
    }
    for (std::size_t h = 0; h < kHubs; ++h)
        out.taxonomy.push_back({hub_url(h), hub_word[h] + " portal", "web portal",
                                CategoryPath({"Computers", "Internet", "Portals"})});
    return out;
}

// ---------------------------------------------------------------------------
// Corpus context

/// Everything derived from a click log that later stages read.
struct Corpus {
    std::vector<ClickRecord> raw;
    std::size_t skipped = 0;
    std::vector<ClickRecord> cleaned;
    ClickStats stats;
    std::vector<Session> sessions;
    SessionGraph graph;
    FacetLexicon facets;
    BestRankIndex best_rank;
    ClusterMap clusters;

    CandidateContext candidate_context() const { return {stats, graph, facets, &best_rank}; }
    FeatureContext feature_context() const { return {stats, graph, facets}; }
};

/// Click counts come from the cleaned log; sessions are cut from every
/// parsed event, since cleaning removes clicks but not the fact that a query
/// was issued.
inline Corpus build_corpus(std::vector<ClickRecord> records, const PipelineConfig& cfg, std::size_t skipped = 0) {
    Corpus c;
    c.raw = std::move(records);
    c.skipped = skipped;
    c.cleaned = clean_log(c.raw);
    c.stats = build_click_stats(c.cleaned);
    c.sessions = segment_sessions(c.raw, cfg.session_timeout);
    c.graph = build_session_graph(c.sessions);
    c.facets = detect_facets(c.stats, cfg.facet_min_distinct, cfg.facet_min_freq);
    c.best_rank = build_best_rank_index(c.stats);
    c.clusters = cluster_trivial_variants(c.stats, cfg.variant_threshold);
    return c;
}

/// Original queries: clicked at least `min_q1_freq` times.
inline std::vector<std::string> original_queries(const Corpus& c, std::int64_t min_q1_freq) {
    std::vector<std::string> out;
    for (const auto& [q, n] : c.stats.cnt_q)
        if (n >= min_q1_freq) out.push_back(q);
    return out;
}

inline std::vector<CandidatePair> all_candidates(const Corpus& c, const std::vector<std::string>& q1s) {
    std::vector<CandidatePair> out;
    auto ctx = c.candidate_context();
    for (const auto& q1 : q1s) {
        auto part = generate_all(q1, ctx);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

/// Category assignment for every query seen in clicks or sessions.
inline AssignmentTable assign_all(const Corpus& c, const std::vector<CategorizedSite>& index) {
    std::set<std::string> all;
    for (const auto& [q, n] : c.stats.cnt_q) all.insert(q);
    for (const auto& [q, n] : c.graph.occurrences) all.insert(q);
    AssignmentTable table;
    for (const auto& q : all) table.emplace(q, assign_category(q, index));
    return table;
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetRow {
    std::string q1;
    std::string q2;
    std::set<RelationKind> kinds;  // empty for random negative pairs
    FeatureVector features;        // features.sim is the target
    int fold = 0;

    bool negative() const { return kinds.empty(); }
};

struct Dataset {
    std::vector<DatasetRow> rows;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t dropped_uncategorized = 0;
    std::size_t dropped_variants = 0;
};

inline std::string kind_label(const std::set<RelationKind>& kinds) {
    if (kinds.empty()) return "Random";
    std::string s;
    for (auto k : kinds) {
        if (!s.empty()) s += ',';
        s += to_string(k);
    }
    return s;
}

inline std::set<RelationKind> parse_kind_label(std::string_view label) {
    std::set<RelationKind> kinds;
    if (label == "Random") return kinds;
    for (auto part : text::split(label, ',')) kinds.insert(relation_from_string(part));
    return kinds;
}

/// Fold of an original query: a function of q1 alone.
inline int fold_of(const std::string& q1) { return static_cast<int>(text::fnv1a(q1) & 1u); }

struct DatasetContext {
    const AssignmentTable& assignments;
    const ClusterMap& clusters;
    FeatureContext features;
};

/// Join candidate pairs per (q1, q2), filter uncategorized pairs and trivial
/// variants, then add ceil(neg_ratio * positives) random pairs between an
/// original query and any categorized query.
inline Dataset build_dataset(const std::vector<CandidatePair>& pairs, const DatasetContext& ctx, double neg_ratio,
                             std::uint64_t seed) {
    if (!(neg_ratio >= 0.0)) throw Error("neg_ratio must be >= 0");
    Dataset ds;

    struct Joined {
        std::set<RelationKind> kinds;
        RelationStrengths s;
    };
    std::map<std::pair<std::string, std::string>, Joined> joined;
    for (const auto& p : pairs) {
        if (p.q1 == p.q2) continue;
        auto& j = joined[{p.q1, p.q2}];
        j.kinds.insert(p.kind);
        switch (p.kind) {
            case RelationKind::CoClick: j.s.p_cc = p.strength; break;
            case RelationKind::CoTopic: j.s.p_ct = p.strength; break;
            case RelationKind::CoSession: j.s.p_cs = p.strength; break;
        }
    }

    auto categorized = [&](const std::string& q) {
        auto it = ctx.assignments.find(q);
        return it != ctx.assignments.end() && it->second.category.has_value();
    };

    std::set<std::pair<std::string, std::string>> taken;
    std::set<std::string> originals;
    for (const auto& [key, j] : joined) {
        const auto& [q1, q2] = key;
        taken.insert(key);
        if (!categorized(q1) || !categorized(q2)) {
            ++ds.dropped_uncategorized;
            continue;
        }
        if (same_cluster(ctx.clusters, q1, q2)) {
            ++ds.dropped_variants;
            continue;
        }
        DatasetRow row{q1, q2, j.kinds, build_features(q1, q2, j.s, ctx.features), fold_of(q1)};
        row.features.sim = *query_similarity(q1, q2, ctx.assignments);
        ds.rows.push_back(std::move(row));
        originals.insert(q1);
    }
    ds.positives = ds.rows.size();

    const auto needed = static_cast<std::size_t>(std::ceil(neg_ratio * static_cast<double>(ds.positives)));
    if (needed > 0) {
        std::vector<std::string> pool;
        for (const auto& [q, a] : ctx.assignments)
            if (a.category) pool.push_back(q);
        std::vector<std::string> q1s(originals.begin(), originals.end());

        auto eligible = [&](const std::string& q1, const std::string& q2) {
            return q1 != q2 && !taken.count({q1, q2}) && !same_cluster(ctx.clusters, q1, q2);
        };
        std::size_t available = 0;
        for (const auto& q1 : q1s)
            for (const auto& q2 : pool) available += eligible(q1, q2);
        if (available < needed)
            throw Error("not enough categorized queries for negative sampling: need " + std::to_string(needed) +
                        " random pairs, only " + std::to_string(available) + " available (short by " +
                        std::to_string(needed - available) + ")");

        detail::Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
        std::vector<std::pair<std::string, std::string>> chosen;
        if (needed * 2 > available) {
            for (const auto& q1 : q1s)
                for (const auto& q2 : pool)
                    if (eligible(q1, q2)) chosen.emplace_back(q1, q2);
            rng.shuffle(chosen);
            chosen.resize(needed);
        } else {
            std::set<std::pair<std::string, std::string>> picked;
            while (chosen.size() < needed) {
                const auto& q1 = q1s[rng.below(q1s.size())];
                const auto& q2 = pool[rng.below(pool.size())];
                if (!eligible(q1, q2) || !picked.insert({q1, q2}).second) continue;
                chosen.emplace_back(q1, q2);
            }
        }
        for (auto& [q1, q2] : chosen) {
            DatasetRow row{q1, q2, {}, build_features(q1, q2, RelationStrengths{}, ctx.features), fold_of(q1)};
            row.features.sim = *query_similarity(q1, q2, ctx.assignments);
            ds.rows.push_back(std::move(row));
        }
        ds.negatives = chosen.size();
    }

    std::sort(ds.rows.begin(), ds.rows.end(), [](const DatasetRow& a, const DatasetRow& b) {
        return std::tie(a.q1, a.q2) < std::tie(b.q1, b.q2);
    });
    return ds;
}

inline std::vector<FeatureRow> to_feature_rows(const Dataset& ds) {
    std::vector<FeatureRow> rows;
    rows.reserve(ds.rows.size());
    for (const auto& r : ds.rows) rows.push_back({r.q1, r.q2, kind_label(r.kinds), r.features});
    return rows;
}

inline Dataset from_feature_rows(const std::vector<FeatureRow>& rows) {
    Dataset ds;
    for (const auto& r : rows) {
        DatasetRow row{r.q1, r.q2, parse_kind_label(r.kind), r.features, fold_of(r.q1)};
        (row.negative() ? ds.negatives : ds.positives) += 1;
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

/// Log and taxonomy to labelled dataset: corpus statistics, candidates for
/// the original queries, category assignment and negative sampling.
inline Dataset dataset_from_log(std::vector<ClickRecord> records, const std::vector<CategorizedSite>& taxonomy,
                                const PipelineConfig& cfg) {
    auto corpus = build_corpus(std::move(records), cfg);
    auto pairs = all_candidates(corpus, original_queries(corpus, cfg.min_q1_freq));
    auto table = assign_all(corpus, taxonomy);
    return build_dataset(pairs, {table, corpus.clusters, corpus.feature_context()}, cfg.neg_ratio, cfg.synth.seed);
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Ranking methods in report order.
inline const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names = {"P_cc",      "P_ct",      "P_cs",           "P_cc+P_ct",
                                                   "P_cc+P_cs", "P_ct+P_cs", "P_cc+P_ct+P_cs", "GBDT"};
    return names;
}

struct SignificanceRow {
    std::string baseline;
    std::string metric;  // "NDCG5" or "AP"
    eval::WilcoxonResult test;
    std::string error;   // set when the test could not run
};

struct CrossvalReport {
    std::vector<eval::MethodMetrics> metrics;
    std::vector<SignificanceRow> significance;
    std::vector<std::pair<std::string, double>> importance;  // sorted descending
    std::map<std::string, std::vector<eval::CurvePoint>> curves;
    std::map<std::string, std::vector<double>> per_query_ndcg;  // aligned with `queries`
    std::map<std::string, std::vector<double>> per_query_ap;
    std::vector<std::string> queries;
    std::size_t rows = 0;
    std::size_t degenerate_ndcg = 0;
    std::size_t degenerate_ap = 0;
    std::array<std::size_t, 2> fold_rows{};
};

namespace detail {

struct MinMax {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double norm(double v) const { return hi > lo ? (v - lo) / (hi - lo) : 0.0; }
};

}  // namespace detail

/// Two-fold cross-validation by q1. Each fold's model is trained on the
/// other fold; per-query metrics are pooled over both test folds.
inline CrossvalReport run_crossval(const Dataset& ds, const gbdt::TrainConfig& cfg, std::size_t pr_points = 11) {
    CrossvalReport rep;
    rep.rows = ds.rows.size();
    for (const auto& r : ds.rows) ++rep.fold_rows[static_cast<std::size_t>(r.fold)];
    if (rep.fold_rows[0] == 0 || rep.fold_rows[1] == 0)
        throw Error("degenerate fold split: fold sizes " + std::to_string(rep.fold_rows[0]) + " and " +
                    std::to_string(rep.fold_rows[1]));

    std::vector<std::string> feat_names;
    for (auto n : feature_names()) feat_names.emplace_back(n);
    const auto& methods = method_names();

    // q1 -> per-method graded ranking
    std::map<std::string, std::map<std::string, eval::GradedRanking>> per_query;
    std::vector<double> importance_sum(kNumFeatures, 0.0);

    for (int test_fold = 0; test_fold < 2; ++test_fold) {
        gbdt::Matrix X;
        std::vector<double> y;
        for (const auto& r : ds.rows) {
            if (r.fold == test_fold) continue;
            auto v = r.features.values();
            X.push_row(v);
            y.push_back(r.features.sim);
        }
        auto model = gbdt::fit(X, y, cfg, feat_names);
        for (std::size_t f = 0; f < kNumFeatures; ++f) importance_sum[f] += model.importance[f];

        std::array<detail::MinMax, 3> mm;
        std::map<std::string, std::vector<const DatasetRow*>> by_q1;
        for (const auto& r : ds.rows) {
            if (r.fold != test_fold) continue;
            by_q1[r.q1].push_back(&r);
            mm[0].add(r.features.p_cc);
            mm[1].add(r.features.p_ct);
            mm[2].add(r.features.p_cs);
        }

        for (const auto& [q1, rows] : by_q1) {
            auto score_of = [&](const std::string& method, const DatasetRow& r) {
                const auto& f = r.features;
                double cc = mm[0].norm(f.p_cc), ct = mm[1].norm(f.p_ct), cs = mm[2].norm(f.p_cs);
                if (method == "P_cc") return f.p_cc;
                if (method == "P_ct") return f.p_ct;
                if (method == "P_cs") return f.p_cs;
                if (method == "P_cc+P_ct") return cc + ct;
                if (method == "P_cc+P_cs") return cc + cs;
                if (method == "P_ct+P_cs") return ct + cs;
                if (method == "P_cc+P_ct+P_cs") return cc + ct + cs;
                return gbdt::predict(model, f);
            };
            for (const auto& method : methods) {
                std::vector<std::pair<double, const DatasetRow*>> scored;
                for (const auto* r : rows) scored.emplace_back(score_of(method, *r), r);
                std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                    if (a.first != b.first) return a.first > b.first;
                    return a.second->q2 < b.second->q2;
                });
                eval::GradedRanking g{q1, {}};
                for (const auto& [s, r] : scored) g.items.push_back(eval::graded_item(r->q2, r->features.sim));
                per_query[q1][method] = std::move(g);
            }
        }
    }

    for (const auto& [q1, rankings] : per_query) {
        rep.queries.push_back(q1);
        for (const auto& method : methods) {
            const auto& g = rankings.at(method);
            auto n = eval::ndcg5(g);
            auto ap = eval::average_precision(g);
            rep.per_query_ndcg[method].push_back(n.value);
            rep.per_query_ap[method].push_back(ap.value);
            if (method == "GBDT") {
                rep.degenerate_ndcg += n.degenerate;
                rep.degenerate_ap += ap.degenerate;
            }
        }
    }
    for (const auto& method : methods) {
        std::vector<eval::GradedRanking> all;
        for (const auto& q1 : rep.queries) all.push_back(per_query.at(q1).at(method));
        const auto& nd = rep.per_query_ndcg[method];
        double mean_ndcg = 0.0;
        for (double v : nd) mean_ndcg += v;
        mean_ndcg /= static_cast<double>(nd.size());
        rep.metrics.push_back({method, mean_ndcg, eval::mean_average_precision(all)});
        rep.curves[method] = eval::precision_recall_curve(all, pr_points);
    }

    for (const auto& method : methods) {
        if (method == "GBDT") continue;
        for (const auto& [metric, table] :
             {std::pair<std::string, const std::map<std::string, std::vector<double>>*>{"NDCG5", &rep.per_query_ndcg},
              {"AP", &rep.per_query_ap}}) {
            SignificanceRow row{method, metric, {}, {}};
            try {
                row.test = eval::wilcoxon_signed_rank(table->at("GBDT"), table->at(method));
            } catch (const Error& e) {
                row.error = e.what();
            }
            rep.significance.push_back(std::move(row));
        }
    }

    double top = *std::max_element(importance_sum.begin(), importance_sum.end());
    for (std::size_t f = 0; f < kNumFeatures; ++f)
        rep.importance.emplace_back(std::string(feature_names()[f]), top > 0.0 ? importance_sum[f] / top * 100.0 : 0.0);
    std::stable_sort(rep.importance.begin(), rep.importance.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return rep;
}

inline const eval::MethodMetrics& metrics_for(const CrossvalReport& rep, const std::string& method) {
    for (const auto& m : rep.metrics)
        if (m.method == method) return m;
    throw Error("no metrics for method '" + method + "'");
}

inline void write_significance(std::ostream& out, const CrossvalReport& rep) {
    out << "baseline\tmetric\tW+\tn\tp\n";
    for (const auto& s : rep.significance) {
        if (!s.error.empty()) {
            out << "GBDT vs " << s.baseline << '\t' << s.metric << "\t-\t-\t-\n";
            continue;
        }
        out << "GBDT vs " << s.baseline << '\t' << s.metric << '\t' << fmt_num::sig(s.test.statistic, 12) << '\t'
            << s.test.n << '\t' << fmt_num::sig(s.test.p_value, 6) << '\n';
    }
}

inline void write_importance(std::ostream& out, const CrossvalReport& rep) {
    out << "rank\tfeature\timportance\n";
    std::size_t k = 0;
    for (const auto& [name, v] : rep.importance) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        out << ++k << '\t' << name << '\t' << buf << '\n';
    }
}

inline void write_curves(std::ostream& out, const CrossvalReport& rep) {
    out << "method\trecall\tprecision\n";
    for (const auto& method : method_names()) eval::write_curve(out, method, rep.curves.at(method));
}

/// Human-readable summary combining every table.
inline void write_report(std::ostream& out, const CrossvalReport& rep) {
    out << "# rows\t" << rep.rows << "\n# queries\t" << rep.queries.size() << "\n# fold rows\t" << rep.fold_rows[0]
        << '\t' << rep.fold_rows[1] << "\n# degenerate NDCG5 queries\t" << rep.degenerate_ndcg
        << "\n# degenerate AP queries\t" << rep.degenerate_ap << "\n\n";
    eval::write_metrics(out, rep.metrics);
    out << '\n';
    write_significance(out, rep);
    out << '\n';
    write_importance(out, rep);
}

}  // namespace qrec::pipeline
