#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "qrec/taxonomy.hpp"

using namespace qrec;

namespace {

CategoryPath P(const std::string& s) { return CategoryPath::parse(s); }

CategoryPath random_path(std::mt19937_64& rng) {
    static const std::vector<std::string> vocab = {"A", "B", "C", "D", "E", "F"};
    std::vector<std::string> c;
    std::size_t depth = 1 + rng() % 6;
    for (std::size_t i = 0; i < depth; ++i) c.push_back(vocab[rng() % vocab.size()]);
    return CategoryPath(c);
}

std::size_t multiset_common(const CategoryPath& a, const CategoryPath& b) {
    std::vector<std::string> x = a.components(), y = b.components();
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    std::vector<std::string> both;
    std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(both));
    return both.size();
}

}  // namespace

TEST(CategoryPath, ParsesAndTrims) {
    auto p = P("Regional / Countries / Spain");
    EXPECT_EQ(p.depth(), 3u);
    EXPECT_EQ(p.str(), "Regional/Countries/Spain");
    EXPECT_THROW(P("A//B"), Error);
    EXPECT_THROW(CategoryPath(std::vector<std::string>{}), Error);
}

TEST(SimPrefix, SpainBarcelona) {
    auto spain = P("Regional/Countries/Spain");
    auto barcelona = P("Regional/Countries/Spain/Autonomous Communities/Catalonia/Cities/Barcelona");
    EXPECT_EQ(sim_prefix(spain, barcelona), 3.0 / 7.0);
}

TEST(SimSubstring, SameSubcategoryUnderDifferentTops) {
    auto a = P("Maps/By region/Countries/Spain");
    auto b = P("Recreation/Travel/By region/Countries/Spain");
    EXPECT_EQ(common_components(a, b), 3u);
    EXPECT_DOUBLE_EQ(sim_substring(a, b), 0.6);
    EXPECT_DOUBLE_EQ(sim_prefix(a, b), 0.0);
}

TEST(SimSubstring, CountsRepeatedComponentsAsMultiset) {
    EXPECT_EQ(common_components(P("A/A/B"), P("A/C")), 1u);
    EXPECT_EQ(common_components(P("A/A/B"), P("B/A/A")), 3u);
    EXPECT_DOUBLE_EQ(sim_substring(P("A/A/B"), P("B/A/A")), 1.0);
}

TEST(Similarity, PropertiesOnRandomPairs) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 10000; ++i) {
        auto a = random_path(rng), b = random_path(rng);
        double sp = sim_prefix(a, b), ss = sim_substring(a, b);
        EXPECT_GE(ss, sp);
        EXPECT_EQ(sp, sim_prefix(b, a));
        EXPECT_EQ(ss, sim_substring(b, a));
        EXPECT_GE(sp, 0.0);
        EXPECT_LE(ss, 1.0);
        EXPECT_EQ(common_components(a, b), multiset_common(a, b));
        EXPECT_EQ(sp == 1.0, a == b);
        auto x = a.components(), y = b.components();
        std::sort(x.begin(), x.end());
        std::sort(y.begin(), y.end());
        EXPECT_EQ(ss == 1.0, x == y);
    }
}

TEST(AssignCategory, VotesAndTieBreak) {
    std::vector<CategorizedSite> index = {
        {"u1", "curry house", "spicy food", P("Food/Curry")},
        {"u2", "curry recipes", "cooking", P("Food/Cooking")},
        {"u3", "curry shop", "curry food", P("Food/Curry")},
        {"u4", "tea", "green tea", P("Food/Tea")},
    };
    auto a = assign_category("curry", index);
    ASSERT_TRUE(a.category);
    EXPECT_EQ(a.category->str(), "Food/Curry");
    EXPECT_EQ(a.votes.at(P("Food/Curry")), 2u);

    auto b = assign_category("curry cooking", index);
    ASSERT_TRUE(b.category);
    EXPECT_EQ(b.category->str(), "Food/Cooking");

    std::vector<CategorizedSite> tie = {{"x", "zeta", "", P("B/Z")}, {"y", "zeta", "", P("A/Z")}};
    EXPECT_EQ(assign_category("zeta", tie).category->str(), "A/Z");
}

TEST(AssignCategory, NoMatchIsAbsent) {
    std::vector<CategorizedSite> index = {{"u1", "curry", "", P("Food/Curry")}};
    EXPECT_FALSE(assign_category("sushi", index).category);
    AssignmentTable t;
    t["curry"] = assign_category("curry", index);
    t["sushi"] = assign_category("sushi", index);
    EXPECT_FALSE(query_similarity("curry", "sushi", t));
}

TEST(AssignCategory, WinnerStableUnderUniformDuplication) {
    std::vector<CategorizedSite> index = {{"a", "kiwi one", "", P("X/Y")}, {"b", "kiwi two", "", P("X/Z")},
                                          {"c", "kiwi three", "", P("X/Z")}};
    auto base = assign_category("kiwi", index);
    auto doubled = index;
    doubled.insert(doubled.end(), index.begin(), index.end());
    auto twice = assign_category("kiwi", doubled);
    EXPECT_EQ(*base.category, *twice.category);
    EXPECT_EQ(twice.votes.at(*twice.category), 2 * base.votes.at(*base.category));
}

TEST(QuerySimilarity, MaxOverVotedPairs) {
    CategoryAssignment a{"q1", P("A/B"), {{P("A/B"), 1}}};
    CategoryAssignment b{"q2", P("A/C"), {{P("A/C"), 1}}};
    EXPECT_DOUBLE_EQ(*query_similarity(a, b), 0.5);
    b.votes[P("A/B/X")] = 1;
    EXPECT_DOUBLE_EQ(*query_similarity(a, b), 2.0 / 3.0);
}

TEST(Grade, PaperScores) {
    EXPECT_EQ(grade(0.8).score, 10.0);
    EXPECT_EQ(grade(0.6).score, 7.0);
    EXPECT_EQ(grade(0.3).score, 3.0);
    EXPECT_EQ(grade(0.1).score, 0.5);
    EXPECT_EQ(grade(0.0).score, 0.0);
    EXPECT_EQ(grade(0.8).label, GradeLabel::Perfect);
    EXPECT_EQ(grade(0.5).label, GradeLabel::Good);
    EXPECT_EQ(grade(0.0).label, GradeLabel::Poor);
    EXPECT_THROW(grade(1.5), Error);
    EXPECT_THROW(grade(-0.1), Error);
}

TEST(Grade, MonotoneOverFineGrid) {
    double prev = -1.0;
    std::set<double> seen;
    for (int i = 0; i <= 10000; ++i) {
        double s = grade(i / 10000.0).score;
        EXPECT_GE(s, prev);
        prev = s;
        seen.insert(s);
    }
    EXPECT_EQ(seen, (std::set<double>{0.0, 0.5, 3.0, 7.0, 10.0}));
}

TEST(Clusters, NearIdenticalClickVectorsMerge) {
    std::vector<ClickRecord> recs;
    auto add = [&](const std::string& q, const std::string& u, int n) {
        for (int i = 0; i < n; ++i) recs.push_back({i, "u", q, u, 1});
    };
    add("q1", "a", 9);
    add("q1", "b", 1);
    add("q2", "a", 8);
    add("q2", "b", 2);
    add("q3", "c", 5);
    auto st = build_click_stats(recs);
    double cos = (9.0 * 8 + 1.0 * 2) / (std::sqrt(82.0) * std::sqrt(68.0));
    EXPECT_NEAR(cos, 0.99099, 1e-5);
    EXPECT_GE(cos, 0.9);
    auto cl = cluster_trivial_variants(st, 0.9);
    EXPECT_TRUE(same_cluster(cl, "q1", "q2"));
    EXPECT_FALSE(same_cluster(cl, "q1", "q3"));
    EXPECT_EQ(cl.size(), 3u);
}

TEST(Clusters, PartitionOfAllQueries) {
    std::mt19937_64 rng(9);
    std::vector<ClickRecord> recs;
    for (int i = 0; i < 3000; ++i)
        recs.push_back({i, "u", "q" + std::to_string(rng() % 80), "http://" + std::to_string(rng() % 15), 1});
    auto st = build_click_stats(recs);
    auto cl = cluster_trivial_variants(st, 0.9);
    EXPECT_EQ(cl.size(), st.cnt_q.size());
    for (const auto& [q, n] : st.cnt_q) EXPECT_TRUE(cl.count(q));
    EXPECT_EQ(cluster_trivial_variants(st, 0.9), cl);
}

TEST(TaxonomyFile, RoundTrip) {
    std::vector<CategorizedSite> sites = {{"http://a", "t a", "d a", P("X/Y")}, {"http://b", "t b", "", P("Z")}};
    std::stringstream ss;
    write_taxonomy(ss, sites);
    auto back = read_taxonomy(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].category, sites[0].category);
    EXPECT_EQ(back[1].title, "t b");
    std::stringstream bad("only\ttwo\n");
    EXPECT_THROW(read_taxonomy(bad), Error);
}
