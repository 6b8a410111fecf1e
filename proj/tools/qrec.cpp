// qrec: command-line front end for the query recommendation toolkit.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qrec/candidates.hpp"
#include "qrec/eval.hpp"
#include "qrec/features.hpp"
#include "qrec/gbdt.hpp"
#include "qrec/log_core.hpp"
#include "qrec/pipeline.hpp"
#include "qrec/taxonomy.hpp"

namespace fs = std::filesystem;
using namespace qrec;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    return in;
}

std::ofstream open_out(const Globals& g, const std::string& name) {
    fs::create_directories(g.out);
    auto path = (fs::path(g.out) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    return out;
}

void close_out(std::ofstream& out, const Globals& g, const std::string& name) {
    out.close();
    if (!out) throw Error("failed writing '" + (fs::path(g.out) / name).string() + "'");
}

template <class Fn>
void emit(const Globals& g, const std::string& name, Fn&& fn) {
    auto out = open_out(g, name);
    fn(out);
    close_out(out, g, name);
}

pipeline::PipelineConfig load_config(const Globals& g) {
    pipeline::PipelineConfig cfg;
    if (!g.config.empty()) {
        auto in = open_in(g.config);
        pipeline::read_config(in, cfg);
    }
    if (g.seed) cfg.synth.seed = *g.seed;
    return cfg;
}

ParseResult load_log(const std::string& path) {
    auto in = open_in(path);
    auto res = read_log(in);
    if (res.skipped > 0) std::cerr << "qrec: skipped " << res.skipped << " malformed log lines\n";
    return res;
}

std::vector<CategorizedSite> load_taxonomy(const std::string& path) {
    auto in = open_in(path);
    return read_taxonomy(in);
}

pipeline::Dataset load_dataset(const std::string& path) {
    auto in = open_in(path);
    return pipeline::from_feature_rows(read_feature_matrix(in));
}

void write_crossval(const Globals& g, const pipeline::CrossvalReport& rep) {
    emit(g, "metrics.tsv", [&](std::ostream& o) { eval::write_metrics(o, rep.metrics); });
    emit(g, "significance.tsv", [&](std::ostream& o) { pipeline::write_significance(o, rep); });
    emit(g, "importance.tsv", [&](std::ostream& o) { pipeline::write_importance(o, rep); });
    emit(g, "curves.tsv", [&](std::ostream& o) { pipeline::write_curves(o, rep); });
    emit(g, "report.txt", [&](std::ostream& o) { pipeline::write_report(o, rep); });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Query recommendation mining and ranking toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "key=value configuration file");
    app.add_option("--seed", g.seed, "random seed");
    app.add_option("--out", g.out, "output directory");

    std::string log_path, taxonomy_path, features_path, model_path, ranking_path, method = "GBDT";

    auto* synth = app.add_subcommand("synth", "generate a synthetic click log and taxonomy");

    auto* ingest = app.add_subcommand("ingest", "clean a click log and segment sessions");
    ingest->add_option("--log", log_path, "click log TSV")->required();

    auto* candidates = app.add_subcommand("candidates", "extract candidate recommendation pairs");
    candidates->add_option("--log", log_path, "click log TSV")->required();

    auto* assign = app.add_subcommand("assign", "assign categories and cluster trivial variants");
    assign->add_option("--log", log_path, "click log TSV")->required();
    assign->add_option("--taxonomy", taxonomy_path, "categorized site TSV")->required();

    auto* features = app.add_subcommand("features", "build the labelled feature matrix");
    features->add_option("--log", log_path, "click log TSV")->required();
    features->add_option("--taxonomy", taxonomy_path, "categorized site TSV")->required();

    auto* train = app.add_subcommand("train", "train a GBDT model on a feature matrix");
    train->add_option("--features", features_path, "feature matrix TSV")->required();

    auto* rank = app.add_subcommand("rank", "rank candidates with a trained model");
    rank->add_option("--model", model_path, "model file")->required();
    rank->add_option("--features", features_path, "feature matrix TSV")->required();

    auto* evaluate = app.add_subcommand("eval", "score a ranking file");
    evaluate->add_option("--ranking", ranking_path, "ranking TSV (q1, q2, score, Sim)")->required();
    evaluate->add_option("--method", method, "method label for the report");

    auto* crossval = app.add_subcommand("crossval", "two-fold cross-validation against single-signal baselines");
    crossval->add_option("--features", features_path, "feature matrix TSV");
    crossval->add_option("--log", log_path, "click log TSV");
    crossval->add_option("--taxonomy", taxonomy_path, "categorized site TSV");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "qrec: error: " << e.what() << '\n';
        return 2;
    }

    try {
        auto cfg = load_config(g);

        if (*synth) {
            auto world = pipeline::synth_logs(cfg.synth);
            emit(g, "log.tsv", [&](std::ostream& o) { write_log(o, world.log); });
            emit(g, "taxonomy.tsv", [&](std::ostream& o) { write_taxonomy(o, world.taxonomy); });
            std::cout << world.log.size() << " click records, " << world.taxonomy.size() << " categorized sites\n";
        } else if (*ingest) {
            auto parsed = load_log(log_path);
            auto cleaned = clean_log(parsed.records);
            auto sessions = segment_sessions(parsed.records, cfg.session_timeout);
            emit(g, "clean.tsv", [&](std::ostream& o) { write_log(o, cleaned); });
            emit(g, "sessions.tsv", [&](std::ostream& o) { write_sessions(o, sessions); });
            auto stats = build_click_stats(cleaned);
            std::cout << parsed.records.size() << " parsed, " << cleaned.size() << " after cleaning, "
                      << stats.cnt_q.size() << " queries, " << stats.cnt_u.size() << " urls, " << sessions.size()
                      << " sessions\n";
        } else if (*candidates) {
            auto corpus = pipeline::build_corpus(load_log(log_path).records, cfg);
            auto q1s = pipeline::original_queries(corpus, cfg.min_q1_freq);
            auto pairs = pipeline::all_candidates(corpus, q1s);
            emit(g, "candidates.tsv", [&](std::ostream& o) { write_candidates(o, pairs); });
            std::cout << q1s.size() << " original queries, " << pairs.size() << " candidate pairs, "
                      << corpus.facets.facets.size() << " facet words\n";
        } else if (*assign) {
            auto corpus = pipeline::build_corpus(load_log(log_path).records, cfg);
            auto table = pipeline::assign_all(corpus, load_taxonomy(taxonomy_path));
            emit(g, "assignments.tsv", [&](std::ostream& o) { write_assignments(o, table); });
            emit(g, "clusters.tsv", [&](std::ostream& o) {
                for (const auto& [q, id] : corpus.clusters) o << q << '\t' << id << '\n';
            });
            std::size_t categorized = 0;
            for (const auto& [q, a] : table) categorized += a.category.has_value();
            std::cout << categorized << " of " << table.size() << " queries categorized\n";
        } else if (*features) {
            auto ds = pipeline::dataset_from_log(load_log(log_path).records, load_taxonomy(taxonomy_path), cfg);
            emit(g, "features.tsv", [&](std::ostream& o) { write_feature_matrix(o, pipeline::to_feature_rows(ds)); });
            std::cout << ds.positives << " candidate rows, " << ds.negatives << " random rows, "
                      << ds.dropped_uncategorized << " uncategorized and " << ds.dropped_variants
                      << " trivial-variant pairs dropped\n";
        } else if (*train) {
            auto ds = load_dataset(features_path);
            gbdt::Matrix X;
            std::vector<double> y;
            for (const auto& r : ds.rows) {
                X.push_row(r.features.values());
                y.push_back(r.features.sim);
            }
            std::vector<std::string> names(feature_names().begin(), feature_names().end());
            auto model = gbdt::fit(X, y, cfg.train, names);
            emit(g, "model.txt", [&](std::ostream& o) { gbdt::save(o, model); });
            std::cout << model.trees.size() << " trees, training MSE "
                      << fmt_num::sig(model.train_mse.empty() ? 0.0 : model.train_mse.back(), 6) << '\n';
        } else if (*rank) {
            auto in = open_in(model_path);
            auto model = gbdt::load(in);
            auto ds = load_dataset(features_path);
            std::map<std::string, std::vector<gbdt::RankInput>> by_q1;
            std::map<std::pair<std::string, std::string>, double> sim;
            for (const auto& r : ds.rows) {
                by_q1[r.q1].push_back({r.q2, r.features});
                sim[{r.q1, r.q2}] = r.features.sim;
            }
            emit(g, "ranking.tsv", [&](std::ostream& o) {
                o << "q1\tq2\tscore\tSim\n";
                for (const auto& [q1, cands] : by_q1)
                    for (const auto& r : gbdt::rank(model, q1, cands))
                        o << q1 << '\t' << r.q2 << '\t' << fmt_num::sig(r.score, 12) << '\t'
                          << fmt_num::sig(sim.at({q1, r.q2}), 12) << '\n';
            });
            std::cout << by_q1.size() << " queries ranked\n";
        } else if (*evaluate) {
            auto in = open_in(ranking_path);
            std::map<std::string, std::vector<std::pair<double, eval::GradedItem>>> by_q1;
            std::string line;
            if (!std::getline(in, line) || line != "q1\tq2\tscore\tSim") throw Error("ranking file: bad header");
            std::size_t lineno = 1;
            while (std::getline(in, line)) {
                ++lineno;
                if (line.empty()) continue;
                auto f = text::split(line, '\t');
                if (f.size() != 4) throw Error("ranking line " + std::to_string(lineno) + ": expected 4 fields");
                by_q1[std::string(f[0])].emplace_back(fmt_num::parse_double(f[2]),
                                                      eval::graded_item(std::string(f[1]), fmt_num::parse_double(f[3])));
            }
            if (by_q1.empty()) throw Error("ranking file has no rows");
            std::vector<eval::GradedRanking> rankings;
            double ndcg = 0.0;
            for (auto& [q1, items] : by_q1) {
                std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
                    if (a.first != b.first) return a.first > b.first;
                    return a.second.q2 < b.second.q2;
                });
                eval::GradedRanking gr{q1, {}};
                for (auto& [s, it] : items) gr.items.push_back(it);
                ndcg += eval::ndcg5(gr).value;
                rankings.push_back(std::move(gr));
            }
            std::vector<eval::MethodMetrics> m{
                {method, ndcg / static_cast<double>(rankings.size()), eval::mean_average_precision(rankings)}};
            emit(g, "metrics.tsv", [&](std::ostream& o) { eval::write_metrics(o, m); });
            emit(g, "curve.tsv", [&](std::ostream& o) {
                o << "method\trecall\tprecision\n";
                eval::write_curve(o, method, eval::precision_recall_curve(rankings, cfg.pr_points));
            });
            eval::write_metrics(std::cout, m);
        } else if (*crossval) {
            pipeline::Dataset ds;
            if (!features_path.empty()) {
                ds = load_dataset(features_path);
            } else if (!log_path.empty() || !taxonomy_path.empty()) {
                if (log_path.empty() || taxonomy_path.empty()) throw Error("crossval needs both --log and --taxonomy");
                ds = pipeline::dataset_from_log(load_log(log_path).records, load_taxonomy(taxonomy_path), cfg);
            } else {
                auto world = pipeline::synth_logs(cfg.synth);
                ds = pipeline::dataset_from_log(std::move(world.log), world.taxonomy, cfg);
            }
            auto rep = pipeline::run_crossval(ds, cfg.train, cfg.pr_points);
            write_crossval(g, rep);
            eval::write_metrics(std::cout, rep.metrics);
        }
    } catch (const std::exception& e) {
        std::cerr << "qrec: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
