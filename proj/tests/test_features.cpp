#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "qrec/candidates.hpp"
#include "qrec/features.hpp"

using namespace qrec;

namespace {

std::string random_ascii(std::mt19937_64& rng, std::size_t max_len) {
    static const std::string alphabet = "abcde ";
    std::string s;
    std::size_t n = rng() % (max_len + 1);
    for (std::size_t i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
    return s;
}

std::string random_mixed(std::mt19937_64& rng, std::size_t max_len) {
    static const std::vector<std::string> units = {"a", "b", "\xe3\x81\x82", "\xe3\x81\x84", "\xc3\xa9", " "};
    std::string s;
    std::size_t n = rng() % (max_len + 1);
    for (std::size_t i = 0; i < n; ++i) s += units[rng() % units.size()];
    return s;
}

}  // namespace

TEST(Entropy, ThreeToOneSplit) {
    std::vector<int> counts = {3, 1};
    double want = -(0.75 * std::log2(0.75) + 0.25 * std::log2(0.25));
    EXPECT_NEAR(entropy_bits(counts), want, 1e-15);
    EXPECT_NEAR(entropy_bits(counts), 0.8113, 1e-4);
}

TEST(Entropy, ClickEntropyOfQuery) {
    std::vector<ClickRecord> recs = {{1, "u", "q", "a", 1}, {2, "u", "q", "a", 1}, {3, "u", "q", "a", 1},
                                     {4, "u", "q", "b", 1}, {5, "u", "r", "a", 1}};
    auto st = build_click_stats(recs);
    EXPECT_NEAR(click_entropy("q", st), 0.8113, 1e-4);
    EXPECT_EQ(click_entropy("r", st), 0.0);
    EXPECT_THROW(click_entropy("zz", st), UnknownQuery);
}

TEST(Entropy, BoundedAndLabelInvariant) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> c(1 + rng() % 8);
        for (auto& x : c) x = static_cast<double>(rng() % 20);
        if (std::all_of(c.begin(), c.end(), [](double x) { return x == 0; })) c[0] = 1;
        double h = entropy_bits(c);
        EXPECT_NEAR(h, oracle::entropy(c), 1e-12);
        EXPECT_GE(h, 0.0);
        EXPECT_LE(h, std::log2(static_cast<double>(c.size())) + 1e-12);
        auto shuffled = c;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        EXPECT_NEAR(entropy_bits(shuffled), h, 1e-12);
    }
}

TEST(NextEntropy, SuccessorDistribution) {
    std::vector<Session> s;
    for (int i = 0; i < 3; ++i) s.push_back({"u", {{0, 0, "a"}, {1, 1, "b"}}, 0});
    s.push_back({"u", {{0, 0, "a"}, {1, 1, "c"}}, 0});
    EXPECT_NEAR(next_query_entropy("a", s), 0.8113, 1e-4);
    EXPECT_EQ(next_query_entropy("b", s), 0.0);
}

TEST(GSquared, PerfectAssociation) {
    EXPECT_NEAR(g_squared(10, 0, 0, 10), 40.0 * std::log(2.0), 1e-12);
    EXPECT_NEAR(g_squared(10, 0, 0, 10), 27.726, 1e-3);
}

TEST(GSquared, ZeroOnProportionalTables) {
    for (double a = 1; a <= 6; ++a)
        for (double b = 0; b <= 6; ++b)
            for (double k = 1; k <= 4; ++k) EXPECT_NEAR(g_squared(a, b, k * a, k * b), 0.0, 1e-9);
}

TEST(GSquared, MatchesEntropyForm) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 1000; ++t) {
        double k[4];
        for (auto& x : k) x = static_cast<double>(rng() % 50);
        if (k[0] + k[1] + k[2] + k[3] == 0) continue;
        double g = g_squared(k[0], k[1], k[2], k[3]);
        EXPECT_GE(g, 0.0);
        EXPECT_NEAR(g, std::max(0.0, oracle::g_squared(k[0], k[1], k[2], k[3])), 1e-9);
    }
}

TEST(Llr, UsesSessionAdjacencies) {
    std::vector<Session> s;
    for (int i = 0; i < 10; ++i) s.push_back({"u", {{0, 0, "a"}, {1, 1, "b"}}, 0});
    for (int i = 0; i < 10; ++i) s.push_back({"u", {{0, 0, "c"}, {1, 1, "d"}}, 0});
    EXPECT_NEAR(llr("a", "b", s), 27.726, 1e-3);
    EXPECT_THROW(llr("a", "b", std::vector<Session>{}), Error);
}

TEST(Levenshtein, Fixtures) {
    EXPECT_EQ(levenshtein("curry", "curry recipe", EditUnit::CodePoint), 7u);
    EXPECT_EQ(levenshtein("curry", "curry recipe", EditUnit::Byte), 7u);
    std::string jp = "\xe3\x82\xab\xe3\x83\xac\xe3\x83\xbc";
    EXPECT_EQ(levenshtein(jp, "", EditUnit::CodePoint), 3u);
    EXPECT_EQ(levenshtein(jp, "", EditUnit::Byte), 9u);
}

TEST(Levenshtein, MatchesDpOracle) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 1000; ++t) {
        auto a = random_mixed(rng, 10), b = random_mixed(rng, 10);
        EXPECT_EQ(levenshtein(a, b, EditUnit::Byte), oracle::levenshtein(a, b));
        EXPECT_EQ(levenshtein(a, b, EditUnit::CodePoint),
                  oracle::levenshtein(text::utf8_decode(a), text::utf8_decode(b)));
    }
}

TEST(Levenshtein, MetricAxioms) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 1000; ++t) {
        auto a = random_mixed(rng, 8), b = random_mixed(rng, 8), c = random_mixed(rng, 8);
        for (auto unit : {EditUnit::Byte, EditUnit::CodePoint}) {
            auto ab = levenshtein(a, b, unit), ba = levenshtein(b, a, unit);
            EXPECT_EQ(ab, ba);
            EXPECT_EQ(ab == 0, a == b);
            EXPECT_LE(levenshtein(a, c, unit), ab + levenshtein(b, c, unit));
        }
    }
}

TEST(Levenshtein, AsciiUnitsAgree) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 500; ++t) {
        auto a = random_ascii(rng, 12), b = random_ascii(rng, 12);
        EXPECT_EQ(levenshtein(a, b, EditUnit::Byte), levenshtein(a, b, EditUnit::CodePoint));
    }
}

TEST(BagCosine, CurryRecipe) {
    EXPECT_NEAR(bag_cosine("curry", "curry recipe", BagUnit::Chunk), 1.0 / std::sqrt(2.0), 1e-12);
    // "curry": cu ur rr ry; "curryrecipe": cu ur rr ry yr re ec ci ip pe
    double dot = 4.0, na = 2.0, nb = std::sqrt(10.0);
    EXPECT_NEAR(bag_cosine("curry", "curry recipe", BagUnit::CharBigram), dot / (na * nb), 1e-12);
    EXPECT_EQ(bag_cosine("a", "a", BagUnit::CharBigram), 0.0);
    EXPECT_EQ(bag_cosine("", "x y", BagUnit::Chunk), 0.0);
}

TEST(BagCosine, BoundedSymmetricScaleInvariant) {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 500; ++t) {
        auto a = random_ascii(rng, 12), b = random_ascii(rng, 12);
        for (auto unit : {BagUnit::Chunk}) {
            double v = bag_cosine(a, b, unit);
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            EXPECT_NEAR(v, bag_cosine(b, a, unit), 1e-15);
            EXPECT_NEAR(v, bag_cosine(a + " " + a, b + " " + b + " " + b, unit), 1e-12);
        }
        double w = bag_cosine(a, b, BagUnit::CharBigram);
        EXPECT_GE(w, 0.0);
        EXPECT_LE(w, 1.0);
        EXPECT_NEAR(w, bag_cosine(b, a, BagUnit::CharBigram), 1e-15);
    }
}

TEST(FeatureNames, TableOrder) {
    const auto& n = feature_names();
    EXPECT_EQ(n.size(), 23u);
    EXPECT_EQ(n.front(), "P_cc");
    EXPECT_EQ(n[14], "mb.Leven");
    EXPECT_EQ(n.back(), "LLR");
}

TEST(BuildFeatures, MatchesStraightLineRecomputation) {
    auto raw = oracle::random_log(77, 3000);
    auto recs = clean_log(raw);
    auto st = build_click_stats(recs);
    auto lex = detect_facets(st, 2, 2);
    auto sessions = segment_sessions(raw, 300);
    auto g = build_session_graph(sessions);
    FeatureContext ctx{st, g, lex};
    std::set<std::string> words;
    for (const auto& [w, n] : lex.facets) words.insert(w);

    int checked = 0;
    for (const auto& q1 : oracle::queries(recs))
        for (const auto& q2 : oracle::queries(recs)) {
            if (q1 == q2 || ++checked % 3) continue;
            auto f = build_features(q1, q2, ctx);
            auto bq = oracle::brccq(q1, recs);
            EXPECT_NEAR(f.p_cc, bq.count(q2) ? oracle::p_cc(q1, q2, recs) : 0.0, 1e-12);
            auto cq = oracle::ctq(q1, words, recs);
            EXPECT_NEAR(f.p_ct, cq.count(q2) ? oracle::p_ct(q1, q2, words, recs) : 0.0, 1e-12);
            EXPECT_NEAR(f.p_cs, oracle::p_cs(q1, q2, sessions), 1e-12);
            EXPECT_EQ(f.freq_q1, oracle::count_query(recs, q1));
            EXPECT_EQ(f.freq_q2, oracle::count_query(recs, q2));
            double topic = static_cast<double>(oracle::count_query(recs, q1));
            for (const auto& e : cq) topic += static_cast<double>(oracle::count_query(recs, e));
            EXPECT_EQ(f.freq_topic, topic);
            EXPECT_EQ(f.len_q1, static_cast<double>(q1.size()));
            EXPECT_EQ(f.len_q2, static_cast<double>(q2.size()));
            EXPECT_EQ(f.clen_q1, static_cast<double>(oracle::words(q1).size()));
            EXPECT_EQ(f.clen_q2, static_cast<double>(oracle::words(q2).size()));
            EXPECT_EQ(f.delta_len, f.len_q2 - f.len_q1);
            EXPECT_DOUBLE_EQ(f.delta_len_rel, (f.len_q2 - f.len_q1) / f.len_q1);
            EXPECT_EQ(f.delta_clen, f.clen_q2 - f.clen_q1);
            EXPECT_DOUBLE_EQ(f.delta_clen_rel, (f.clen_q2 - f.clen_q1) / f.clen_q1);
            EXPECT_EQ(f.leven, static_cast<double>(oracle::levenshtein(q1, q2)));
            EXPECT_EQ(f.mb_leven, f.leven);
            std::vector<double> e1, e2;
            for (const auto& u : st.urls_of(q1)) e1.push_back(static_cast<double>(oracle::count_pair(recs, u, q1)));
            for (const auto& u : st.urls_of(q2)) e2.push_back(static_cast<double>(oracle::count_pair(recs, u, q2)));
            EXPECT_NEAR(f.ent_q1, oracle::entropy(e1), 1e-12);
            EXPECT_NEAR(f.ent_q2, oracle::entropy(e2), 1e-12);
            EXPECT_NEAR(f.delta_ent, f.ent_q1 - f.ent_q2, 1e-12);
            std::map<std::string, double> succ;
            double k11 = 0, row = 0, col = 0, n = 0;
            for (const auto& s : sessions)
                for (std::size_t i = 0; i + 1 < s.queries.size(); ++i) {
                    const auto& a = s.queries[i].query;
                    const auto& b = s.queries[i + 1].query;
                    if (a == q1) succ[b] += 1, row += 1;
                    if (b == q2) col += 1;
                    if (a == q1 && b == q2) k11 += 1;
                    n += 1;
                }
            std::vector<double> sv;
            for (const auto& [q, c] : succ) sv.push_back(c);
            EXPECT_NEAR(f.next_ent, oracle::entropy(sv), 1e-12);
            EXPECT_NEAR(f.llr, std::max(0.0, oracle::g_squared(k11, row - k11, col - k11, n - row - col + k11)), 1e-8);
        }
    EXPECT_GT(checked, 50);
}

TEST(BuildFeatures, SessionOnlyQueryHasZeroClickFeatures) {
    std::vector<ClickRecord> raw = {{0, "u1", "a", "x", 1}, {10, "u2", "a", "x", 1}, {20, "u2", "b", "y", 1}};
    auto recs = clean_log(raw);
    auto st = build_click_stats(recs);
    auto g = build_session_graph(segment_sessions(raw, 300));
    FacetLexicon lex;
    FeatureContext ctx{st, g, lex};
    auto f = build_features("b", "a", ctx);
    EXPECT_EQ(f.freq_q1, 0.0);
    EXPECT_EQ(f.ent_q1, 0.0);
    EXPECT_THROW(build_features("zz", "a", ctx), UnknownQuery);
}

TEST(FeatureMatrix, RoundTrip) {
    FeatureRow r{"curry", "curry recipe", "CoTopic", {}};
    std::array<double, kNumFeatures> v{};
    for (std::size_t i = 0; i < kNumFeatures; ++i) v[i] = 0.125 * static_cast<double>(i) - 1.0;
    r.features = FeatureVector::from_values(v, 0.6);
    std::stringstream ss;
    write_feature_matrix(ss, {r, r});
    auto back = read_feature_matrix(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].features.values(), v);
    EXPECT_EQ(back[0].features.sim, 0.6);
    EXPECT_EQ(back[1].kind, "CoTopic");
    std::stringstream bad("q1\tq2\tkind\tnope\n");
    EXPECT_THROW(read_feature_matrix(bad), Error);
}
