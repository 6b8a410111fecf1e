#pragma once

// Gradient-boosted regression trees with squared loss.
//
// F_0 is the target mean; each iteration fits a depth-bounded tree to the
// current residuals (the negative gradient of squared loss) by greedy
// splitting on the weighted mean-difference criterion, stores leaf means
// and adds the tree scaled by the shrinkage factor.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qrec/common.hpp"
#include "qrec/features.hpp"
#include "qrec/taxonomy.hpp"

namespace qrec::gbdt {

inline constexpr int kUnlimitedDepth = std::numeric_limits<int>::max();

struct TrainConfig {
    int n_trees = 200;
    double shrinkage = 0.1;
    int max_depth = 4;
    int min_leaf = 10;
    /// Early stop on a validation MSE plateau of this many iterations; 0 = off.
    int patience = 0;

    void validate() const {
        if (n_trees < 1) throw Error("n_trees must be >= 1");
        if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw Error("shrinkage must be in (0, 1]");
        if (max_depth < 1) throw Error("max_depth must be >= 1");
        if (min_leaf < 1) throw Error("min_leaf must be >= 1");
        if (patience < 0) throw Error("patience must be >= 0");
    }
};

/// Dense row-major matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    void push_row(std::span<const double> values) {
        if (rows_ == 0 && cols_ == 0) cols_ = values.size();
        if (values.size() != cols_) throw Error("row has wrong width");
        data_.insert(data_.end(), values.begin(), values.end());
        ++rows_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// A node of a regression tree. Internal nodes send x left iff
/// x[feature] <= threshold.
struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    double value = 0.0;
    int left = -1;
    int right = -1;

    bool is_leaf() const { return feature < 0; }
};

/// Nodes stored in pre-order; node 0 is the root.
struct Tree {
    std::vector<TreeNode> nodes;
    double weight = 1.0;

    double eval(std::span<const double> x) const {
        int i = 0;
        while (!nodes[i].is_leaf()) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
        return nodes[i].value;
    }
};

struct Ensemble {
    double base = 0.0;
    double shrinkage = 0.1;
    std::vector<Tree> trees;
    std::vector<std::string> feature_names;
    std::vector<double> importance;  // max-normalized to 100
    std::vector<double> train_mse;   // entry m is the MSE after m trees; not persisted

    std::size_t n_features() const { return feature_names.size(); }
};

/// i^2 improvement of splitting a region into (left, right).
inline double split_gain(double w_left, double mean_left, double w_right, double mean_right) {
    double d = mean_left - mean_right;
    return w_left * w_right / (w_left + w_right) * d * d;
}

inline double predict(const Ensemble& model, std::span<const double> x) {
    if (x.size() != model.n_features())
        throw Error("feature vector has " + std::to_string(x.size()) + " values, model expects " +
                    std::to_string(model.n_features()));
    double f = model.base;
    for (const auto& t : model.trees) f += t.weight * t.eval(x);
    return f;
}

inline double predict(const Ensemble& model, const FeatureVector& fv) {
    auto v = fv.values();
    return predict(model, std::span<const double>(v));
}

namespace detail {

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

class TreeBuilder {
public:
    TreeBuilder(const Matrix& X, const std::vector<double>& residual, const TrainConfig& cfg,
                std::vector<double>& importance)
        : X_(X), r_(residual), cfg_(cfg), importance_(importance), leaf_value_(X.rows()) {}

    /// `sorted[f]` lists the node's rows ordered by feature f.
    Tree build(std::vector<std::vector<std::uint32_t>> sorted) {
        Tree t;
        grow(t, std::move(sorted), 0);
        return t;
    }

    const std::vector<double>& leaf_values() const { return leaf_value_; }

private:
    int grow(Tree& t, std::vector<std::vector<std::uint32_t>> sorted, int depth) {
        const auto& rows = sorted.front();
        const std::size_t n = rows.size();
        double sum = 0.0;
        for (auto i : rows) sum += r_[i];
        const double mean = sum / static_cast<double>(n);

        int id = static_cast<int>(t.nodes.size());
        t.nodes.push_back({});

        Split best;
        if (depth < cfg_.max_depth && n >= 2 * static_cast<std::size_t>(cfg_.min_leaf)) best = find_split(sorted, sum);
        if (best.feature < 0) {
            t.nodes[id].value = mean;
            for (auto i : rows) leaf_value_[i] = mean;
            return id;
        }

        importance_[best.feature] += best.gain;
        std::vector<char> goes_left(X_.rows(), 0);
        for (auto i : rows) goes_left[i] = X_(i, best.feature) <= best.threshold;

        std::vector<std::vector<std::uint32_t>> left(sorted.size()), right(sorted.size());
        for (std::size_t f = 0; f < sorted.size(); ++f) {
            for (auto i : sorted[f]) (goes_left[i] ? left[f] : right[f]).push_back(i);
        }
        sorted.clear();
        sorted.shrink_to_fit();

        int l = grow(t, std::move(left), depth + 1);
        int r = grow(t, std::move(right), depth + 1);
        auto& node = t.nodes[id];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.value = mean;
        node.left = l;
        node.right = r;
        return id;
    }

    Split find_split(const std::vector<std::vector<std::uint32_t>>& sorted, double total) const {
        Split best;
        const std::size_t n = sorted.front().size();
        const std::size_t min_leaf = static_cast<std::size_t>(cfg_.min_leaf);
        for (std::size_t f = 0; f < sorted.size(); ++f) {
            const auto& order = sorted[f];
            double left_sum = 0.0;
            for (std::size_t k = 1; k < n; ++k) {
                left_sum += r_[order[k - 1]];
                if (k < min_leaf || n - k < min_leaf) continue;
                double lo = X_(order[k - 1], f), hi = X_(order[k], f);
                if (!(lo < hi)) continue;
                double wl = static_cast<double>(k), wr = static_cast<double>(n - k);
                double gain = split_gain(wl, left_sum / wl, wr, (total - left_sum) / wr);
                if (gain > best.gain) {
                    double thr = lo + (hi - lo) / 2.0;
                    if (!(thr < hi)) thr = lo;
                    best = {static_cast<int>(f), thr, gain};
                }
            }
        }
        return best;
    }

    const Matrix& X_;
    const std::vector<double>& r_;
    const TrainConfig& cfg_;
    std::vector<double>& importance_;
    std::vector<double> leaf_value_;
};

inline double mse(const std::vector<double>& y, const std::vector<double>& f) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - f[i]) * (y[i] - f[i]);
    return s / static_cast<double>(y.size());
}

}  // namespace detail

struct Validation {
    const Matrix& X;
    const std::vector<double>& y;
};

inline Ensemble fit(const Matrix& X, const std::vector<double>& y, const TrainConfig& cfg,
                    std::vector<std::string> feature_names = {}, std::optional<Validation> validation = {}) {
    cfg.validate();
    if (X.rows() == 0) throw Error("cannot fit on an empty matrix");
    if (X.rows() != y.size()) throw Error("feature matrix and target differ in length");
    if (X.rows() < 2) throw Error("need at least two training rows");
    if (feature_names.empty())
        for (std::size_t f = 0; f < X.cols(); ++f) feature_names.push_back("f" + std::to_string(f));
    if (feature_names.size() != X.cols()) throw Error("feature name count does not match matrix width");

    const std::size_t n = X.rows();
    Ensemble model;
    model.shrinkage = cfg.shrinkage;
    model.feature_names = std::move(feature_names);
    model.base = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    std::vector<double> raw_importance(X.cols(), 0.0);
    std::vector<std::vector<double>> tree_gains;  // per kept tree, per feature

    std::vector<std::vector<std::uint32_t>> presorted(X.cols());
    for (std::size_t f = 0; f < X.cols(); ++f) {
        auto& order = presorted[f];
        order.resize(n);
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return X(a, f) < X(b, f); });
    }

    std::vector<double> F(n, model.base), residual(n);
    model.train_mse.push_back(detail::mse(y, F));

    std::vector<double> val_f;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_trees = 0;
    if (validation) val_f.assign(validation->y.size(), model.base);

    for (int m = 0; m < cfg.n_trees; ++m) {
        for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - F[i];
        std::vector<double> gains(X.cols(), 0.0);
        detail::TreeBuilder builder(X, residual, cfg, gains);
        Tree tree = builder.build(presorted);
        // no admissible split: residual means are already zero everywhere
        if (tree.nodes.size() == 1) break;
        tree.weight = cfg.shrinkage;
        const auto& leaf = builder.leaf_values();
        for (std::size_t i = 0; i < n; ++i) F[i] += tree.weight * leaf[i];
        model.train_mse.push_back(detail::mse(y, F));

        if (validation) {
            for (std::size_t i = 0; i < val_f.size(); ++i) val_f[i] += tree.weight * tree.eval(validation->X.row(i));
        }
        model.trees.push_back(std::move(tree));
        tree_gains.push_back(std::move(gains));
        if (validation && cfg.patience > 0) {
            double v = detail::mse(validation->y, val_f);
            if (v < best_val) {
                best_val = v;
                best_trees = model.trees.size();
            } else if (model.trees.size() - best_trees >= static_cast<std::size_t>(cfg.patience)) {
                break;
            }
        }
    }
    if (validation && cfg.patience > 0 && best_trees < model.trees.size()) {
        model.trees.resize(best_trees);
        model.train_mse.resize(best_trees + 1);
    }

    for (std::size_t t = 0; t < model.trees.size(); ++t)
        for (std::size_t f = 0; f < X.cols(); ++f) raw_importance[f] += tree_gains[t][f];
    double top = raw_importance.empty() ? 0.0 : *std::max_element(raw_importance.begin(), raw_importance.end());
    model.importance.assign(raw_importance.size(), 0.0);
    if (top > 0.0)
        for (std::size_t f = 0; f < raw_importance.size(); ++f) model.importance[f] = raw_importance[f] / top * 100.0;
    return model;
}

// ---------------------------------------------------------------------------
// Ranking

struct RankInput {
    std::string q2;
    FeatureVector features;
};

struct Ranked {
    std::string q2;
    double score = 0.0;
};

/// Score candidates, drop trivial variants of q1, sort by score descending
/// then q2.
inline std::vector<Ranked> rank(const Ensemble& model, const std::string& q1, const std::vector<RankInput>& candidates,
                                const ClusterMap* clusters = nullptr) {
    std::vector<Ranked> out;
    for (const auto& c : candidates) {
        if (c.q2 == q1) continue;
        if (clusters && same_cluster(*clusters, q1, c.q2)) continue;
        out.push_back({c.q2, predict(model, c.features)});
    }
    std::sort(out.begin(), out.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.q2 < b.q2;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Model file

inline void save(std::ostream& out, const Ensemble& m) {
    out << "gbdt-model\t1\n";
    out << "n_trees\t" << m.trees.size() << '\n';
    out << "shrinkage\t" << fmt_num::exact(m.shrinkage) << '\n';
    out << "base\t" << fmt_num::exact(m.base) << '\n';
    out << "features";
    for (const auto& f : m.feature_names) out << '\t' << f;
    out << '\n';
    for (std::size_t t = 0; t < m.trees.size(); ++t) {
        const auto& tree = m.trees[t];
        out << "tree\t" << t << '\t' << fmt_num::exact(tree.weight) << '\t' << tree.nodes.size() << '\n';
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
            const auto& n = tree.nodes[k];
            if (n.is_leaf())
                out << k << "\tleaf\t" << fmt_num::exact(n.value) << "\t-\t-\t-\n";
            else
                out << k << "\tsplit\t" << n.feature << '\t' << fmt_num::exact(n.threshold) << '\t' << n.left << '\t'
                    << n.right << '\n';
        }
    }
    for (std::size_t f = 0; f < m.importance.size(); ++f)
        out << "importance\t" << m.feature_names[f] << '\t' << fmt_num::exact(m.importance[f]) << '\n';
    out << "end\n";
}

inline Ensemble load(std::istream& in) {
    auto fail = [](const std::string& what) -> Error { return Error("model file: " + what); };
    auto next = [&](std::string& line) {
        if (!std::getline(in, line)) throw fail("unexpected end of file");
        return text::split(line, '\t');
    };
    auto expect_key = [&](const std::vector<std::string_view>& f, std::string_view key, std::size_t n) {
        if (f.empty() || f[0] != key || f.size() != n) throw fail("expected '" + std::string(key) + "' line");
    };

    Ensemble m;
    std::string l0, l1, l2, l3, l4;
    auto h = next(l0);
    expect_key(h, "gbdt-model", 2);
    if (h[1] != "1") throw fail("unsupported version");
    auto nt = next(l1);
    expect_key(nt, "n_trees", 2);
    std::size_t n_trees = 0;
    if (!fmt_num::parse_int(nt[1], n_trees)) throw fail("bad n_trees");
    auto sh = next(l2);
    expect_key(sh, "shrinkage", 2);
    m.shrinkage = fmt_num::parse_double(sh[1]);
    auto b = next(l3);
    expect_key(b, "base", 2);
    m.base = fmt_num::parse_double(b[1]);
    auto fs = next(l4);
    if (fs.empty() || fs[0] != "features") throw fail("expected 'features' line");
    for (std::size_t i = 1; i < fs.size(); ++i) m.feature_names.emplace_back(fs[i]);
    const int n_feat = static_cast<int>(m.feature_names.size());

    for (std::size_t t = 0; t < n_trees; ++t) {
        std::string line;
        auto th = next(line);
        expect_key(th, "tree", 4);
        Tree tree;
        tree.weight = fmt_num::parse_double(th[2]);
        std::size_t n_nodes = 0;
        if (!fmt_num::parse_int(th[3], n_nodes) || n_nodes == 0) throw fail("bad node count");
        tree.nodes.resize(n_nodes);
        for (std::size_t k = 0; k < n_nodes; ++k) {
            std::string nl;
            auto f = next(nl);
            std::size_t id = 0;
            if (f.size() != 6 || !fmt_num::parse_int(f[0], id) || id != k) throw fail("bad node line");
            auto& node = tree.nodes[k];
            if (f[1] == "leaf") {
                node.value = fmt_num::parse_double(f[2]);
            } else if (f[1] == "split") {
                if (!fmt_num::parse_int(f[2], node.feature) || node.feature < 0 || node.feature >= n_feat)
                    throw fail("bad split feature");
                node.threshold = fmt_num::parse_double(f[3]);
                if (!fmt_num::parse_int(f[4], node.left) || !fmt_num::parse_int(f[5], node.right) ||
                    node.left <= static_cast<int>(k) || node.right <= static_cast<int>(k) ||
                    node.left >= static_cast<int>(n_nodes) || node.right >= static_cast<int>(n_nodes))
                    throw fail("bad child index");
            } else {
                throw fail("unknown node kind '" + std::string(f[1]) + "'");
            }
        }
        m.trees.push_back(std::move(tree));
    }
    m.importance.assign(m.feature_names.size(), 0.0);
    for (std::size_t f = 0; f < m.feature_names.size(); ++f) {
        std::string line;
        auto im = next(line);
        expect_key(im, "importance", 3);
        if (im[1] != m.feature_names[f]) throw fail("importance block out of order");
        m.importance[f] = fmt_num::parse_double(im[2]);
    }
    std::string line;
    auto e = next(line);
    if (e.empty() || e[0] != "end") throw fail("missing end marker");
    return m;
}

}  // namespace qrec::gbdt
