// tten: train LightGCN embeddings with BPR/SSM and evaluate test-time
// embedding normalization, popularity-group metrics, and p-sweeps.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "tten/dataset.hpp"
#include "tten/evaluation.hpp"
#include "tten/graph.hpp"
#include "tten/model.hpp"
#include "tten/scoring.hpp"
#include "tten/training.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string train_file, test_file, embeddings, out;
    std::string loss = "ssm";
    int dim = 64, layers = 3, batch_size = 4096, epochs = 300, patience = 5, eval_every = 5;
    int k = 20, groups = 5, threads = 1;
    double lr = 1e-3, temperature = 0.1, l2 = -1.0;  // -1: pick the loss default
    double p = 1.0, val_fraction = 0.5;
    uint64_t seed = 0;
    std::string p_grid = "0.0:1.0:0.1";
    // synthetic generation
    int users = 2000, items = 1000, latent_dim = 16, train_per_user = 40, test_per_user = 5;
    double pop_exponent = 1.0, pop_mix = 0.5;
};

// Expands `--config FILE` (key = value lines, '#' comments) into ordinary
// flags before CLI11 parses: a key becomes `--key value` unless that flag is
// already on the command line, giving flag > config file > default precedence.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw std::runtime_error("--config needs a file path");
            path = args[i + 1];
            args.erase(args.begin() + i, args.begin() + i + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + i);
            break;
        }
    }
    if (path.empty()) return args;

    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        if (eq == std::string::npos) {
            if (!trim(line).empty())
                throw std::runtime_error(path + ":" + std::to_string(lineno)
                                         + ": expected key = value");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw std::runtime_error(path + ":" + std::to_string(lineno)
                                     + ": expected key = value");
        const std::string flag = "--" + key;
        bool given = false;
        for (const auto& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
        if (!given) {
            args.push_back(flag);
            args.push_back(value);
        }
    }
    return args;
}

void add_common_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config")
        ->description("read defaults from a key = value file")
        ->type_name("FILE");
    cmd->add_option("--train-file", o.train_file);
    cmd->add_option("--test-file", o.test_file);
    cmd->add_option("--loss", o.loss)->check(CLI::IsMember({"bpr", "ssm"}));
    cmd->add_option("--dim", o.dim);
    cmd->add_option("--layers", o.layers);
    cmd->add_option("--lr", o.lr);
    cmd->add_option("--batch-size", o.batch_size);
    cmd->add_option("--epochs", o.epochs);
    cmd->add_option("--patience", o.patience);
    cmd->add_option("--eval-every", o.eval_every);
    cmd->add_option("--temperature", o.temperature);
    cmd->add_option("--l2", o.l2);
    cmd->add_option("--p", o.p);
    cmd->add_option("--k", o.k);
    cmd->add_option("--groups", o.groups);
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--out", o.out);
    cmd->add_option("--threads", o.threads);
    cmd->add_option("--embeddings", o.embeddings);
    cmd->add_option("--p-grid", o.p_grid);
    cmd->add_option("--val-fraction", o.val_fraction);
    cmd->add_option("--users", o.users);
    cmd->add_option("--items", o.items);
    cmd->add_option("--latent-dim", o.latent_dim);
    cmd->add_option("--pop-exponent", o.pop_exponent);
    cmd->add_option("--pop-mix", o.pop_mix);
    cmd->add_option("--train-per-user", o.train_per_user);
    cmd->add_option("--test-per-user", o.test_per_user);
}

fs::path make_out_dir(const std::string& out, const std::string& cmd) {
    fs::path dir;
    if (!out.empty()) {
        dir = out;
        if (fs::exists(dir) && !fs::is_empty(dir))
            throw std::runtime_error("output directory already exists and is not empty: "
                                     + dir.string());
    } else {
        dir = fs::path("runs") / (cmd + "-" + std::to_string(std::time(nullptr)));
    }
    fs::create_directories(dir);
    return dir;
}

tten::InteractionDataset load_from_opts(const CommonOpts& o) {
    if (o.train_file.empty() || o.test_file.empty())
        throw std::runtime_error("--train-file and --test-file are required");
    return tten::load_dataset(o.train_file, o.test_file, o.val_fraction, o.seed);
}

tten::TrainConfig train_config(const CommonOpts& o) {
    tten::TrainConfig c;
    c.loss_kind = o.loss == "bpr" ? tten::LossKind::BPR : tten::LossKind::SSM;
    c.learning_rate = o.lr;
    c.batch_size = o.batch_size;
    c.max_epochs = o.epochs;
    c.patience = o.patience;
    c.eval_every = o.eval_every;
    c.temperature = o.temperature;
    c.l2_coeff = o.l2 >= 0.0 ? o.l2 : (c.loss_kind == tten::LossKind::BPR ? 1e-5 : 1e-7);
    c.num_layers = o.layers;
    c.dim = o.dim;
    c.eval_k = o.k;
    c.eval_p = o.p;
    c.seed = o.seed;
    return c;
}

std::vector<double> parse_p_grid(const std::string& s) {
    double start, stop, step;
    if (std::sscanf(s.c_str(), "%lf:%lf:%lf", &start, &stop, &step) != 3 || step <= 0.0)
        throw std::runtime_error("--p-grid must be start:stop:step with step > 0");
    std::vector<double> grid;
    for (int i = 0;; ++i) {
        const double p = start + i * step;
        if (p > stop + 1e-12) break;
        grid.push_back(p);
    }
    if (grid.empty()) throw std::runtime_error("--p-grid produced an empty grid");
    return grid;
}

json nan_safe(double x) { return std::isnan(x) ? json(nullptr) : json(x); }

json report_to_json(const tten::EvalReport& r) {
    json j;
    j["recall"] = r.recall;
    j["ndcg"] = r.ndcg;
    j["k"] = r.k;
    j["p"] = r.p;
    j["users_evaluated"] = r.users_evaluated;
    j["group_frequency"] = r.group_frequency;
    json gr = json::array();
    for (double v : r.group_recall) gr.push_back(nan_safe(v));
    j["group_recall"] = gr;
    return j;
}

void write_text(const fs::path& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << body;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

int cmd_generate(const CommonOpts& o) {
    tten::SyntheticSpec spec;
    spec.num_users = o.users;
    spec.num_items = o.items;
    spec.latent_dim = o.latent_dim;
    spec.popularity_exponent = o.pop_exponent;
    spec.popularity_mix = o.pop_mix;
    spec.interactions_per_user = o.train_per_user;
    spec.test_items_per_user = o.test_per_user;
    spec.seed = o.seed;

    const auto [ds, gt] = tten::generate_synthetic(spec);
    const auto dir = make_out_dir(o.out, "generate");
    tten::write_interactions((dir / "train.txt").string(), ds.train);
    tten::write_interactions((dir / "test.txt").string(), ds.test);

    // Ground-truth sidecar: item prior and latent vectors for diagnostics.
    std::ofstream side(dir / "ground_truth.txt");
    side << "TTEN-SYN 1 " << spec.num_users << ' ' << spec.num_items << ' ' << spec.latent_dim
         << '\n';
    char buf[64];
    for (int32_t i = 0; i < spec.num_items; ++i) {
        std::snprintf(buf, sizeof(buf), "pi %d %.9g\n", i, gt.item_prior[i]);
        side << buf;
    }
    auto dump_latents = [&](const char* tag, const tten::Mat& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            side << tag << ' ' << r;
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                std::snprintf(buf, sizeof(buf), " %.9g", m(r, c));
                side << buf;
            }
            side << '\n';
        }
    };
    dump_latents("user", gt.user_latents);
    dump_latents("item", gt.item_latents);
    std::cout << "wrote " << (dir / "train.txt").string() << ", test.txt, ground_truth.txt\n";
    return 0;
}

int cmd_train(const CommonOpts& o) {
    const auto ds = load_from_opts(o);
    const auto config = train_config(o);
    const auto [model, report] = tten::train(ds, config);

    const auto dir = make_out_dir(o.out, "train");
    tten::save_embeddings(model.base, ds.num_users, ds.num_items,
                          (dir / "base_embeddings.txt").string());
    const auto adj = tten::build_norm_adjacency(ds);
    const auto fe = tten::forward(model, adj);
    tten::save_embeddings(fe.final, ds.num_users, ds.num_items,
                          (dir / "final_embeddings.txt").string());

    json j;
    j["loss"] = o.loss;
    j["seed"] = o.seed;
    j["best_epoch"] = report.best_epoch;
    j["best_recall"] = report.best_recall;
    j["stop_reason"] = report.stop_reason;
    j["epoch_losses"] = report.epoch_losses;
    json hist = json::array();
    for (const auto& e : report.history)
        hist.push_back({{"epoch", e.epoch}, {"recall", e.recall}, {"loss", e.loss_mean}});
    j["history"] = hist;
    write_json(dir / "train_report.json", j);
    std::cout << "best epoch " << report.best_epoch << ", validation recall "
              << report.best_recall << ", outputs in " << dir.string() << "\n";
    return 0;
}

struct EvalInputs {
    tten::InteractionDataset ds;
    tten::Mat final_emb;
};

EvalInputs load_eval_inputs(const CommonOpts& o) {
    if (o.embeddings.empty()) throw std::runtime_error("--embeddings is required");
    auto ds = load_from_opts(o);
    auto emb = tten::load_embeddings(o.embeddings);
    if (emb.num_users != ds.num_users || emb.num_items != ds.num_items)
        throw std::runtime_error("embedding file shape does not match the dataset");
    return {std::move(ds), std::move(emb.table)};
}

int cmd_evaluate(const CommonOpts& o) {
    const auto in = load_eval_inputs(o);
    const auto groups = tten::assign_groups(in.ds.popularity, o.groups);
    const auto rep = tten::evaluate(in.final_emb, in.ds, groups, o.k, o.p);

    const auto dir = make_out_dir(o.out, "evaluate");
    write_json(dir / "eval_report.json", report_to_json(rep));

    std::string csv = "group,frequency,recall\n";
    for (int g = 0; g < groups.num_groups; ++g) {
        csv += std::to_string(g + 1) + "," + std::to_string(rep.group_frequency[g]) + ",";
        if (!std::isnan(rep.group_recall[g])) csv += std::to_string(rep.group_recall[g]);
        csv += "\n";
    }
    write_text(dir / "group_metrics.csv", csv);
    std::cout << "recall@" << o.k << " " << rep.recall << ", ndcg@" << o.k << " " << rep.ndcg
              << " at p=" << o.p << "\n";
    return 0;
}

int cmd_analyze(const CommonOpts& o) {
    const auto in = load_eval_inputs(o);
    const double corr = tten::magnitude_popularity_correlation(in.final_emb, in.ds.num_users,
                                                               in.ds.num_items,
                                                               in.ds.popularity);
    const auto stats = tten::cosine_quadrant_analysis(in.final_emb, in.ds, 0.2);

    const auto dir = make_out_dir(o.out, "analyze");
    json j;
    j["magnitude_popularity_correlation"] = nan_safe(corr);
    const char* names[4] = {"positive_popular", "negative_popular", "positive_unpopular",
                            "negative_unpopular"};
    for (int q = 0; q < 4; ++q) j["histograms"][names[q]] = stats.histograms[q];
    write_json(dir / "analysis.json", j);

    std::string csv = "user,positive_popular,negative_popular,positive_unpopular,"
                      "negative_unpopular\n";
    const std::vector<double>* cols[4] = {&stats.positive_popular, &stats.negative_popular,
                                          &stats.positive_unpopular, &stats.negative_unpopular};
    for (int32_t u = 0; u < in.ds.num_users; ++u) {
        csv += std::to_string(u);
        for (int q = 0; q < 4; ++q) {
            csv += ",";
            if (!std::isnan((*cols[q])[u])) csv += std::to_string((*cols[q])[u]);
        }
        csv += "\n";
    }
    write_text(dir / "cosine_quadrants.csv", csv);
    std::cout << "magnitude-popularity correlation " << corr << "\n";
    return 0;
}

int cmd_sweep(const CommonOpts& o) {
    const auto in = load_eval_inputs(o);
    const auto groups = tten::assign_groups(in.ds.popularity, o.groups);
    const auto grid = parse_p_grid(o.p_grid);
    const auto reports = tten::p_sweep(in.final_emb, in.ds, groups, grid, o.k);

    std::string csv = "p,recall,ndcg";
    for (int g = 1; g <= groups.num_groups; ++g) csv += ",freq_g" + std::to_string(g);
    for (int g = 1; g <= groups.num_groups; ++g) csv += ",recall_g" + std::to_string(g);
    csv += "\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return std::string(buf);
    };
    for (const auto& r : reports) {
        csv += num(r.p) + "," + num(r.recall) + "," + num(r.ndcg);
        for (double v : r.group_frequency) csv += "," + num(v);
        for (double v : r.group_recall) csv += "," + (std::isnan(v) ? "" : num(v));
        csv += "\n";
    }
    const auto dir = make_out_dir(o.out, "sweep");
    write_text(dir / "sweep.csv", csv);
    std::cout << "wrote " << (dir / "sweep.csv").string() << " with " << reports.size()
              << " rows\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LightGCN trainer with test-time embedding normalization"};
    app.require_subcommand(1);

    CommonOpts opts;
    auto* generate = app.add_subcommand("generate", "write a synthetic dataset");
    auto* train = app.add_subcommand("train", "train embeddings");
    auto* evaluate = app.add_subcommand("evaluate", "evaluate an embedding file");
    auto* analyze = app.add_subcommand("analyze", "popularity-bias analyses");
    auto* sweep = app.add_subcommand("sweep", "evaluate across a grid of p values");
    for (auto* cmd : {generate, train, evaluate, analyze, sweep}) add_common_flags(cmd, opts);

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

#ifdef _OPENMP
    omp_set_num_threads(std::max(1, opts.threads));
#endif

    try {
        if (generate->parsed()) return cmd_generate(opts);
        if (train->parsed()) return cmd_train(opts);
        if (evaluate->parsed()) return cmd_evaluate(opts);
        if (analyze->parsed()) return cmd_analyze(opts);
        if (sweep->parsed()) return cmd_sweep(opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
