#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <sstream>

#include "qrec/gbdt.hpp"

using namespace qrec;
using namespace qrec::gbdt;

namespace {

struct Problem {
    Matrix X;
    std::vector<double> y;
};

Problem random_problem(std::uint64_t seed, std::size_t n, std::size_t d) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Problem p;
    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : row) v = u(rng);
        p.X.push_row(row);
        p.y.push_back(std::sin(3 * row[0]) + (d > 1 ? row[1] * row[1] : 0.0) + 0.1 * u(rng));
    }
    return p;
}

double sse(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST(SplitGain, FormulaFixture) { EXPECT_DOUBLE_EQ(split_gain(1, 0, 1, 2), 2.0); }

TEST(SplitGain, EqualsSquaredErrorDecrease) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0.0, 3.0);
    for (int t = 0; t < 1000; ++t) {
        std::size_t n = 2 + rng() % 40;
        std::vector<double> all(n);
        for (auto& v : all) v = nd(rng);
        std::size_t k = 1 + rng() % (n - 1);
        std::vector<double> l(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
        std::vector<double> r(all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
        double ml = 0, mr = 0;
        for (double x : l) ml += x;
        for (double x : r) mr += x;
        ml /= static_cast<double>(l.size());
        mr /= static_cast<double>(r.size());
        EXPECT_NEAR(split_gain(static_cast<double>(l.size()), ml, static_cast<double>(r.size()), mr),
                    sse(all) - sse(l) - sse(r), 1e-9);
    }
}

TEST(Fit, StumpOnSeparableData) {
    Matrix X;
    std::vector<double> y;
    for (int i = 0; i < 20; ++i) {
        double x = i / 19.0;
        X.push_row(std::vector<double>{x});
        y.push_back(x > 0.5 ? 1.0 : 0.0);
    }
    TrainConfig cfg{1, 1.0, 1, 1, 0};
    auto m = fit(X, y, cfg);
    ASSERT_EQ(m.trees.size(), 1u);
    const auto& root = m.trees[0].nodes[0];
    EXPECT_EQ(root.feature, 0);
    EXPECT_GT(root.threshold, 9 / 19.0);
    EXPECT_LT(root.threshold, 10 / 19.0);
    EXPECT_LT(m.train_mse.back(), 1e-30);
    EXPECT_DOUBLE_EQ(m.base, 0.5);
    EXPECT_DOUBLE_EQ(m.trees[0].nodes[m.trees[0].nodes[0].left].value, -0.5);
}

TEST(Fit, MseNonIncreasing) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        auto p = random_problem(s, 150, 3);
        TrainConfig cfg{60, 0.3, 3, 5, 0};
        auto m = fit(p.X, p.y, cfg);
        ASSERT_EQ(m.train_mse.size(), m.trees.size() + 1);
        for (std::size_t i = 1; i < m.train_mse.size(); ++i) EXPECT_LE(m.train_mse[i], m.train_mse[i - 1]);
    }
}

TEST(Fit, FullTreeMemorizes) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto p = random_problem(100 + s, 80, 2);
        TrainConfig cfg{1, 1.0, kUnlimitedDepth, 1, 0};
        auto m = fit(p.X, p.y, cfg);
        EXPECT_LT(m.train_mse.back(), 1e-12);
        double mse = 0.0;
        for (std::size_t i = 0; i < p.y.size(); ++i) {
            double e = predict(m, p.X.row(i)) - p.y[i];
            mse += e * e;
        }
        EXPECT_LT(mse / static_cast<double>(p.y.size()), 1e-12);
    }
}

TEST(Fit, PredictionMatchesTrainingTrajectory) {
    auto p = random_problem(3, 120, 3);
    auto m = fit(p.X, p.y, TrainConfig{30, 0.2, 3, 4, 0});
    double mse = 0.0;
    for (std::size_t i = 0; i < p.y.size(); ++i) {
        double e = predict(m, p.X.row(i)) - p.y[i];
        mse += e * e;
    }
    EXPECT_NEAR(mse / static_cast<double>(p.y.size()), m.train_mse.back(), 1e-12);
}

TEST(Fit, RespectsMinLeafAndDepth) {
    auto p = random_problem(4, 200, 3);
    auto m = fit(p.X, p.y, TrainConfig{10, 0.5, 2, 30, 0});
    for (const auto& t : m.trees) {
        // count training rows reaching each leaf
        std::map<int, int> hits;
        for (std::size_t i = 0; i < p.y.size(); ++i) {
            int k = 0, depth = 0;
            auto x = p.X.row(i);
            while (!t.nodes[k].is_leaf()) {
                k = x[t.nodes[k].feature] <= t.nodes[k].threshold ? t.nodes[k].left : t.nodes[k].right;
                ++depth;
            }
            EXPECT_LE(depth, 2);
            ++hits[k];
        }
        for (auto [leaf, n] : hits) EXPECT_GE(n, 30);
    }
}

TEST(Fit, TieBreaksToLowestFeature) {
    Matrix X;
    std::vector<double> y;
    for (int i = 0; i < 10; ++i) {
        X.push_row(std::vector<double>{static_cast<double>(i), static_cast<double>(i)});
        y.push_back(i < 5 ? 0.0 : 1.0);
    }
    auto m = fit(X, y, TrainConfig{1, 1.0, 1, 1, 0});
    EXPECT_EQ(m.trees[0].nodes[0].feature, 0);
    EXPECT_DOUBLE_EQ(m.trees[0].nodes[0].threshold, 4.5);
}

TEST(Fit, ConstantTargetStopsEarly) {
    Matrix X;
    std::vector<double> y;
    for (int i = 0; i < 10; ++i) {
        X.push_row(std::vector<double>{static_cast<double>(i)});
        y.push_back(2.5);
    }
    auto m = fit(X, y, TrainConfig{});
    EXPECT_TRUE(m.trees.empty());
    EXPECT_EQ(predict(m, std::vector<double>{3.0}), 2.5);
    EXPECT_EQ(m.importance, std::vector<double>{0.0});
}

TEST(Fit, ImportanceMaxIsHundred) {
    auto p = random_problem(5, 200, 4);
    auto m = fit(p.X, p.y, TrainConfig{40, 0.1, 3, 5, 0});
    double top = 0.0;
    for (double v : m.importance) {
        EXPECT_GE(v, 0.0);
        top = std::max(top, v);
    }
    EXPECT_EQ(top, 100.0);
    EXPECT_EQ(m.importance[0], 100.0);
}

TEST(Fit, EarlyStopTruncatesToBestValidation) {
    auto p = random_problem(6, 200, 2);
    auto v = random_problem(7, 100, 2);
    auto m = fit(p.X, p.y, TrainConfig{300, 0.5, 4, 2, 5}, {}, Validation{v.X, v.y});
    EXPECT_LT(m.trees.size(), 300u);
    EXPECT_EQ(m.train_mse.size(), m.trees.size() + 1);
}

TEST(Fit, RejectsBadInput) {
    Matrix X;
    EXPECT_THROW(fit(X, {}, TrainConfig{}), Error);
    X.push_row(std::vector<double>{1.0});
    EXPECT_THROW(fit(X, {1.0, 2.0}, TrainConfig{}), Error);
    EXPECT_THROW(fit(X, {1.0}, TrainConfig{}), Error);
    X.push_row(std::vector<double>{2.0});
    EXPECT_THROW(fit(X, {1.0, 2.0}, TrainConfig{0, 0.1, 4, 10, 0}), Error);
    EXPECT_THROW(fit(X, {1.0, 2.0}, TrainConfig{10, 0.0, 4, 10, 0}), Error);
    EXPECT_THROW(fit(X, {1.0, 2.0}, TrainConfig{}, {"a", "b"}), Error);
}

TEST(Predict, DimensionMismatchThrows) {
    auto p = random_problem(8, 50, 3);
    auto m = fit(p.X, p.y, TrainConfig{5, 0.1, 2, 2, 0});
    EXPECT_THROW(predict(m, std::vector<double>{1.0}), Error);
}

TEST(ModelFile, RoundTripIsBitExact) {
    auto p = random_problem(9, 300, 5);
    auto m = fit(p.X, p.y, TrainConfig{50, 0.1, 4, 3, 0}, {"a", "b", "c", "d", "e"});
    std::stringstream s1;
    save(s1, m);
    auto back = load(s1);
    std::stringstream s2;
    save(s2, back);
    EXPECT_EQ(s1.str(), s2.str());
    EXPECT_EQ(back.feature_names, m.feature_names);
    EXPECT_EQ(back.importance, m.importance);
    for (std::size_t i = 0; i < p.y.size(); ++i) EXPECT_TRUE(same_bits(predict(m, p.X.row(i)), predict(back, p.X.row(i))));
}

TEST(ModelFile, RejectsCorruption) {
    auto p = random_problem(10, 60, 2);
    auto m = fit(p.X, p.y, TrainConfig{3, 0.1, 2, 2, 0});
    std::stringstream s;
    save(s, m);
    auto text = s.str();
    for (auto [from, to] : std::vector<std::pair<std::string, std::string>>{
             {"gbdt-model\t1", "gbdt-model\t9"}, {"\nend\n", "\n"}, {"\tsplit\t", "\tbogus\t"}}) {
        auto broken = text;
        broken.replace(broken.find(from), from.size(), to);
        std::stringstream in(broken);
        EXPECT_THROW(load(in), Error) << from;
    }
    std::stringstream truncated(text.substr(0, text.size() / 2));
    EXPECT_THROW(load(truncated), Error);
}

TEST(Rank, SortsDropsVariantsAndSelf) {
    auto fv = [](double x) {
        FeatureVector f;
        f.p_cc = x;
        return f;
    };
    Matrix X23;
    std::vector<double> y;
    for (int i = 0; i < 20; ++i) {
        X23.push_row(fv(i).values());
        y.push_back(i);
    }
    auto m23 = fit(X23, y, TrainConfig{50, 0.5, 3, 1, 0});
    ClusterMap clusters{{"q", 0}, {"twin", 0}, {"a", 1}, {"b", 2}, {"c", 3}};
    std::vector<RankInput> cands = {{"a", fv(3)}, {"b", fv(15)}, {"twin", fv(19)}, {"q", fv(10)}, {"c", fv(15)}};
    auto r = rank(m23, "q", cands, &clusters);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r[0].q2, "b");
    EXPECT_EQ(r[1].q2, "c");
    EXPECT_EQ(r[2].q2, "a");
    auto shuffled = cands;
    std::reverse(shuffled.begin(), shuffled.end());
    auto r2 = rank(m23, "q", shuffled, &clusters);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i].q2, r2[i].q2);
}
