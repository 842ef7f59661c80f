#pragma once

// Operator surface: a single binary with subcommands covering the full
// pipeline (data generation, pretraining, adapter training, evaluation,
// weight analysis, method comparison, rank sweeps). Every command accepts an
// optional flat key=value config file; explicitly passed flags win. Each
// successful run writes a manifest naming its exact configuration, input
// hashes, and output files.

#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "scalpel/baselines.hpp"
#include "scalpel/manifest.hpp"
#include "scalpel/svg.hpp"
#include "scalpel/train.hpp"

namespace scalpel {
namespace cli_detail {

inline const std::vector<std::string> kTaskNames = {"mapping", "ioi", "analogy", "parity",
                                                    "agreement"};

struct Global {
    u64 seed = 0;
    std::string precision = "f32";
    i64 threads = 1;
    std::string root = ".";
};

inline std::filesystem::path task_file(const std::filesystem::path& dir, const std::string& name,
                                       const std::string& split) {
    return dir / (name + "." + split + ".jsonl");
}

inline std::filesystem::path corpus_file(const std::filesystem::path& dir,
                                         const std::string& split) {
    return dir / ("general." + split + ".txt");
}

inline TaskData load_task(const std::filesystem::path& dir, const std::string& name) {
    TaskData t;
    t.name = name;
    t.train = load_jsonl(task_file(dir, name, "train"));
    t.dev = load_jsonl(task_file(dir, name, "dev"));
    t.test = load_jsonl(task_file(dir, name, "test"));
    t.kind = t.train.kind;
    return t;
}

inline std::vector<std::string> load_corpus(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot read corpus file " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line)) out.push_back(line);
    if (out.empty()) throw DataError("corpus file " + path.string() + " is empty");
    return out;
}

inline void save_corpus(const std::filesystem::path& path, std::span<const std::string> texts) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path.string());
    for (const auto& t : texts) os << t << '\n';
}

inline std::string fmt_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Effective-parameter resolution: an explicitly passed flag beats the config
// file, which beats the built-in default already sitting in the variable.
struct ParamSet {
    CLI::App* cmd;
    Config file;   // parsed --config contents (empty when absent)
    Config snap;   // effective values, recorded for the manifest

    void finish_i64(const std::string& flag, const std::string& key, i64& var) {
        if (!cmd->count(flag) && file.has(key)) var = file.get_i64(key);
        snap.set(key, std::to_string(var));
    }
    void finish_u64(const std::string& flag, const std::string& key, u64& var) {
        if (!cmd->count(flag) && file.has(key)) var = file.get_u64(key);
        snap.set(key, std::to_string(var));
    }
    void finish_f64(const std::string& flag, const std::string& key, double& var) {
        if (!cmd->count(flag) && file.has(key)) var = file.get_f64(key);
        snap.set(key, fmt_f64(var));
    }
    void finish_str(const std::string& flag, const std::string& key, std::string& var) {
        if (!cmd->count(flag) && file.has(key)) var = file.get_string(key);
        snap.set(key, var);
    }
};

inline void record_global(Config& snap, const Global& g) {
    snap.set("seed", std::to_string(g.seed));
    snap.set("precision", g.precision);
    snap.set("threads", std::to_string(g.threads));
}

inline std::string cluster_kind(const std::string& label) {
    const auto dash = label.rfind('-');
    return dash == std::string::npos ? label : label.substr(0, dash);
}

// ------------------------------------------------------------ commands

inline void cmd_gen_data(const Global& g, const std::string& kind, i64 size,
                         const std::filesystem::path& out_dir) {
    if (size < 10) throw ConfigError("gen-data: size must be at least 10");
    std::filesystem::create_directories(out_dir);

    RunManifest man;
    man.command = "gen-data";
    record_global(man.config, g);
    man.config.set("kind", kind);
    man.config.set("size", std::to_string(size));
    man.config.set("out_dir", out_dir.string());

    std::vector<std::string> kinds;
    if (kind == "all") {
        kinds = kTaskNames;
        kinds.push_back("general");
    } else {
        kinds.push_back(kind);
    }

    for (const auto& k : kinds) {
        const auto it = std::find(kTaskNames.begin(), kTaskNames.end(), k);
        if (it != kTaskNames.end()) {
            const u64 task_seed =
                derive_seed(g.seed, 100 + static_cast<u64>(it - kTaskNames.begin()));
            TaskData td = prepare_task(k, size, task_seed);
            for (const auto& [split, ds] :
                 {std::pair<const char*, const Dataset*>{"train", &td.train},
                  {"dev", &td.dev},
                  {"test", &td.test}}) {
                const auto path = task_file(out_dir, k, split);
                save_jsonl(path, *ds);
                man.add_output(path);
            }
        } else if (k == "general") {
            auto corpus = generate_general(size, derive_seed(g.seed, 105));
            const std::size_t n = corpus.size();
            const std::size_t n_dev = std::max<std::size_t>(1, n / 10);
            const std::size_t n_train = n - 2 * n_dev;
            std::span<const std::string> all(corpus);
            const auto train_path = corpus_file(out_dir, "train");
            const auto dev_path = corpus_file(out_dir, "dev");
            const auto test_path = corpus_file(out_dir, "test");
            save_corpus(train_path, all.subspan(0, n_train));
            save_corpus(dev_path, all.subspan(n_train, n_dev));
            save_corpus(test_path, all.subspan(n_train + n_dev, n_dev));
            man.add_output(train_path);
            man.add_output(dev_path);
            man.add_output(test_path);
        } else {
            throw ConfigError("gen-data: unknown kind '" + k + "'");
        }
    }

    man.save(out_dir / "gen-data.manifest.json");
    std::cout << "gen-data: wrote " << man.outputs.size() << " files to " << out_dir.string()
              << "\n";
}

template <typename S>
void cmd_pretrain(const Global& g, ParamSet& ps, const std::filesystem::path& data_dir,
                  const std::filesystem::path& out, const std::vector<std::string>& task_names,
                  ModelConfig mcfg, PretrainConfig pcfg) {
    RunManifest man;
    man.command = "pretrain";
    record_global(man.config, g);

    std::vector<TaskData> tasks;
    std::vector<std::string> fit_texts;
    for (const auto& name : task_names) {
        tasks.push_back(load_task(data_dir, name));
        for (const auto* split : {&tasks.back().train, &tasks.back().dev, &tasks.back().test})
            for (auto& t : split->all_texts()) fit_texts.push_back(std::move(t));
        for (const auto& split : {"train", "dev", "test"})
            man.add_input(task_file(data_dir, name, split));
    }
    auto corpus_train = load_corpus(corpus_file(data_dir, "train"));
    auto corpus_dev = load_corpus(corpus_file(data_dir, "dev"));
    auto corpus_test = load_corpus(corpus_file(data_dir, "test"));
    for (const auto& split : {"train", "dev", "test"}) man.add_input(corpus_file(data_dir, split));
    for (const auto& pool : {corpus_train, corpus_dev, corpus_test})
        fit_texts.insert(fit_texts.end(), pool.begin(), pool.end());

    Tokenizer tk = Tokenizer::fit(fit_texts);
    pcfg.seed = g.seed;

    auto outcome = pretrain<S>(mcfg, tk, tasks, corpus_train, corpus_dev, pcfg);
    std::filesystem::create_directories(out.parent_path().empty() ? "." : out.parent_path());
    outcome.model.save(out);

    man.config = ps.snap;
    record_global(man.config, g);
    man.add_output(out);
    man.save(out.string() + ".manifest.json");

    std::cout << "pretrain: mastered after " << outcome.steps << " steps; baseline ppl "
              << detail::fmt_metric(outcome.baseline_ppl) << "\n";
    for (const auto& [name, acc] : outcome.dev_accuracy)
        std::cout << "  dev " << name << " = " << detail::fmt_metric(acc) << "\n";
}

template <typename S>
void cmd_ablate(const Global& g, ParamSet& ps, const std::filesystem::path& checkpoint,
                const std::string& task, const std::filesystem::path& data_dir,
                const std::filesystem::path& out, TrainConfig tcfg) {
    RunManifest man;
    man.command = "ablate";
    man.add_input(checkpoint);

    Model<S> m = Model<S>::load(checkpoint);
    m.set_requires_grad(false);
    TaskData target = load_task(data_dir, task);
    for (const auto& split : {"train", "dev", "test"}) man.add_input(task_file(data_dir, task, split));

    std::vector<TaskData> others;
    for (const auto& name : kTaskNames) {
        if (name == task) continue;
        others.push_back(load_task(data_dir, name));
        for (const auto& split : {"train", "dev", "test"})
            man.add_input(task_file(data_dir, name, split));
    }
    std::vector<const TaskData*> held;
    for (const auto& t : others) held.push_back(&t);

    auto pool = load_corpus(corpus_file(data_dir, "train"));
    man.add_input(corpus_file(data_dir, "train"));

    tcfg.seed = g.seed;
    auto result = ablate(m, target, std::span<const std::string>(pool), held, tcfg);
    result.adapter.task_label = task;

    std::filesystem::create_directories(out.parent_path().empty() ? "." : out.parent_path());
    result.adapter.save(out, m.cfg);
    const auto steps_csv = out.string() + ".steps.csv";
    const auto epochs_csv = out.string() + ".epochs.csv";
    result.log.save_steps_csv(steps_csv);
    result.log.save_epochs_csv(epochs_csv);

    man.config = ps.snap;
    record_global(man.config, g);
    man.add_output(out);
    man.add_output(steps_csv);
    man.add_output(epochs_csv);
    man.save(out.string() + ".manifest.json");

    const auto& best = result.log.epochs[static_cast<std::size_t>(result.log.best_epoch - 1)];
    std::cout << "ablate " << task << ": best epoch " << result.log.best_epoch << " accd "
              << detail::fmt_metric(best.accuracy_drop) << " cap "
              << detail::fmt_metric(best.capability) << "\n";
}

template <typename S>
void cmd_eval(const Global& g, ParamSet& ps, const std::filesystem::path& checkpoint,
              const std::filesystem::path& adapter_path,
              const std::filesystem::path& data_dir, const std::vector<std::string>& task_names,
              const std::string& split, const std::filesystem::path& out) {
    if (split != "dev" && split != "test") throw ConfigError("eval: split must be dev or test");

    RunManifest man;
    man.command = "eval";
    man.add_input(checkpoint);

    Model<S> m = Model<S>::load(checkpoint);
    m.set_requires_grad(false);
    std::optional<Adapter<S>> ad;
    if (!adapter_path.empty()) {
        ad = Adapter<S>::load(adapter_path, m.cfg);
        man.add_input(adapter_path);
    }
    const Adapter<S>* adp = ad ? &*ad : nullptr;

    std::vector<TaskData> tasks;
    for (const auto& name : task_names) {
        tasks.push_back(load_task(data_dir, name));
        for (const auto& sp : {"train", "dev", "test"}) man.add_input(task_file(data_dir, name, sp));
    }
    auto corpus = load_corpus(corpus_file(data_dir, split));
    man.add_input(corpus_file(data_dir, split));

    auto split_of = [&](const TaskData& t) -> const Dataset& {
        return split == "dev" ? t.dev : t.test;
    };

    std::ofstream os(out);
    if (!os) throw InputError("cannot write " + out.string());
    os << MetricReport::csv_header() << '\n';
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        std::vector<const Dataset*> held;
        for (std::size_t j = 0; j < tasks.size(); ++j)
            if (j != i) held.push_back(&split_of(tasks[j]));
        if (held.empty()) held.push_back(&split_of(tasks[i]));  // lone task: capability on itself
        const double base_acc = task_accuracy<S>(m, nullptr, split_of(tasks[i]));
        MetricReport r = metric_report(m, adp, tasks[i].name, split_of(tasks[i]), base_acc,
                                       std::span<const std::string>(corpus), held);
        os << r.csv_row() << '\n';
        std::cout << r.csv_row() << "\n";
    }
    os.close();

    man.config = ps.snap;
    record_global(man.config, g);
    man.add_output(out);
    man.save(out.string() + ".manifest.json");
}

template <typename S>
void cmd_analyze(const Global& g, ParamSet& ps, const std::filesystem::path& checkpoint,
                 const std::vector<std::string>& adapter_specs,
                 const std::filesystem::path& out_dir) {
    if (adapter_specs.empty()) throw ConfigError("analyze: need at least one --adapter name=path");

    RunManifest man;
    man.command = "analyze";
    man.add_input(checkpoint);

    Model<S> m = Model<S>::load(checkpoint);
    std::filesystem::create_directories(out_dir);

    std::vector<std::pair<std::string, Adapter<S>>> adapters;
    for (const auto& spec : adapter_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
            throw ConfigError("analyze: --adapter expects name=path, got '" + spec + "'");
        const std::string name = spec.substr(0, eq);
        const std::filesystem::path path = spec.substr(eq + 1);
        adapters.emplace_back(name, Adapter<S>::load(path, m.cfg));
        man.add_input(path);
    }

    for (const auto& [name, ad] : adapters) {
        ImportanceReport rep = layer_importance(ad);
        const auto csv = out_dir / (name + ".importance.csv");
        const auto svg = out_dir / (name + ".importance.svg");
        rep.save_csv(csv);
        importance_svg(rep, svg);
        man.add_output(csv);
        man.add_output(svg);
        std::cout << "analyze " << name << ": peak layer " << rep.peak_layer << "\n";
    }

    if (adapters.size() >= 2) {
        std::vector<std::pair<std::string, const Adapter<S>*>> refs;
        for (const auto& [name, ad] : adapters) refs.emplace_back(name, &ad);
        SimilarityMatrix sm = task_similarity<S>(refs);
        const auto sim_csv = out_dir / "similarity.csv";
        sm.save_csv(sim_csv);
        man.add_output(sim_csv);

        Embedding2D emb = mds_embed(sm);
        const auto mds_csv = out_dir / "mds.csv";
        const auto mds_plot = out_dir / "mds.svg";
        emb.save_csv(mds_csv);
        mds_svg(emb, mds_plot);
        man.add_output(mds_csv);
        man.add_output(mds_plot);

        std::vector<std::string> kinds;
        for (const auto& [name, ad] : adapters) kinds.push_back(cluster_kind(name));
        ClusterReport cr = cluster_report(sm, kinds);
        nlohmann::json j;
        j["intra"] = cr.intra ? nlohmann::json(*cr.intra) : nlohmann::json();
        j["inter"] = cr.inter ? nlohmann::json(*cr.inter) : nlohmann::json();
        j["ratio"] = cr.ratio ? nlohmann::json(*cr.ratio) : nlohmann::json();
        const auto cluster_path = out_dir / "clusters.json";
        std::ofstream cj(cluster_path);
        cj << j.dump(2) << '\n';
        cj.close();
        man.add_output(cluster_path);
        std::cout << "analyze: mds stress " << detail::fmt_metric(emb.stress) << "\n";
    }

    man.config = ps.snap;
    record_global(man.config, g);
    man.save(out_dir / "analyze.manifest.json");
}

template <typename S>
void cmd_compare(const Global& g, ParamSet& ps, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& adapter_path, const std::string& task,
                 const std::filesystem::path& data_dir, const std::vector<std::string>& methods,
                 const std::vector<double>& eps_grid, i64 top_k, i64 ig_steps,
                 const std::filesystem::path& out) {
    RunManifest man;
    man.command = "compare";
    man.add_input(checkpoint);
    man.add_input(adapter_path);

    Model<S> m = Model<S>::load(checkpoint);
    m.set_requires_grad(false);
    Adapter<S> ad = Adapter<S>::load(adapter_path, m.cfg);

    TaskData target = load_task(data_dir, task);
    for (const auto& sp : {"train", "dev", "test"}) man.add_input(task_file(data_dir, task, sp));
    std::vector<TaskData> others;
    for (const auto& name : kTaskNames) {
        if (name == task) continue;
        others.push_back(load_task(data_dir, name));
        for (const auto& sp : {"train", "dev", "test"}) man.add_input(task_file(data_dir, name, sp));
    }
    std::vector<const TaskData*> held;
    for (const auto& t : others) held.push_back(&t);
    auto corpus_test = load_corpus(corpus_file(data_dir, "test"));
    man.add_input(corpus_file(data_dir, "test"));

    if (top_k < 1) throw ConfigError("compare: top-k must be positive");

    auto rows = compare<S>(m, ad, target, held, corpus_test, methods, eps_grid,
                           static_cast<std::size_t>(top_k), g.seed, ig_steps);

    std::filesystem::create_directories(out.parent_path().empty() ? "." : out.parent_path());
    save_compare_csv(rows, out);
    const auto plot = out.string() + ".svg";
    tradeoff_svg(rows, plot);

    man.config = ps.snap;
    record_global(man.config, g);
    man.add_output(out);
    man.add_output(plot);
    man.save(out.string() + ".manifest.json");

    for (const auto& r : rows) {
        if (r.ok)
            std::cout << r.method << ": accd " << detail::fmt_metric(r.accuracy_drop) << " ppl "
                      << detail::fmt_metric(r.perplexity) << " cap "
                      << detail::fmt_metric(r.capability) << " product "
                      << detail::fmt_metric(r.product) << " eps " << detail::fmt_metric(r.eps)
                      << "\n";
        else
            std::cout << r.method << ": failed (" << r.error << ")\n";
    }
}

template <typename S>
void cmd_sweep(const Global& g, ParamSet& ps, const std::filesystem::path& checkpoint,
               const std::string& task, const std::filesystem::path& data_dir,
               const std::vector<i64>& ranks, TrainConfig base_cfg, i64 jobs,
               const std::filesystem::path& out) {
    if (ranks.empty()) throw ConfigError("sweep: need at least one rank");
    if (jobs < 1) throw ConfigError("sweep: jobs must be positive");

    RunManifest man;
    man.command = "sweep";
    man.add_input(checkpoint);

    Model<S> m = Model<S>::load(checkpoint);
    m.set_requires_grad(false);
    TaskData target = load_task(data_dir, task);
    for (const auto& sp : {"train", "dev", "test"}) man.add_input(task_file(data_dir, task, sp));
    std::vector<TaskData> others;
    for (const auto& name : kTaskNames) {
        if (name == task) continue;
        others.push_back(load_task(data_dir, name));
        for (const auto& sp : {"train", "dev", "test"}) man.add_input(task_file(data_dir, name, sp));
    }
    std::vector<const TaskData*> held;
    for (const auto& t : others) held.push_back(&t);
    auto pool = load_corpus(corpus_file(data_dir, "train"));
    man.add_input(corpus_file(data_dir, "train"));

    base_cfg.seed = g.seed;
    std::vector<SweepCell> cells;
    for (i64 r : ranks) {
        SweepCell cell;
        cell.label = "rank" + std::to_string(r);
        cell.config = base_cfg;
        cell.config.rank = r;
        cells.push_back(std::move(cell));
    }

    auto rows = sweep(m, target, std::span<const std::string>(pool), held, cells);
    std::filesystem::create_directories(out.parent_path().empty() ? "." : out.parent_path());
    save_sweep_csv(rows, out);

    man.config = ps.snap;
    record_global(man.config, g);
    man.add_output(out);
    man.save(out.string() + ".manifest.json");

    for (const auto& r : rows) {
        if (r.ok)
            std::cout << r.label << ": accd " << detail::fmt_metric(r.accuracy_drop) << " cap "
                      << detail::fmt_metric(r.capability) << " product "
                      << detail::fmt_metric(r.product) << "\n";
        else
            std::cout << r.label << ": failed (" << r.error << ")\n";
    }
}

}  // namespace cli_detail

// Entry point shared by the tool binary and the test harness. Returns the
// process exit status: 0 success, 2 configuration error, 3 data error,
// 4 training failure, 5 internal invariant violation.
inline int cli_main(int argc, const char* const* argv) {
    using namespace cli_detail;

    CLI::App app{"desk-scale behavioral-ablation laboratory"};
    app.require_subcommand(1);

    Global g;
    if (const char* env = std::getenv("SCALPEL_ROOT")) g.root = env;
    app.add_option("--seed", g.seed, "master random seed")->capture_default_str();
    app.add_option("--precision", g.precision, "floating point width")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
    app.add_option("--threads", g.threads, "reserved; computation is single-threaded")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--root", g.root, "default data/checkpoint root (env SCALPEL_ROOT)")
        ->capture_default_str();

    // ---- gen-data
    auto* gen = app.add_subcommand("gen-data", "generate task datasets and the general corpus");
    std::string gd_kind = "all";
    i64 gd_size = 400;
    std::string gd_out;
    gen->add_option("--kind", gd_kind, "task kind or 'general' or 'all'")
        ->check(CLI::IsMember({"mapping", "ioi", "analogy", "parity", "agreement", "general",
                               "all"}))
        ->capture_default_str();
    gen->add_option("--size", gd_size, "examples per task / corpus documents")
        ->capture_default_str();
    gen->add_option("--out-dir", gd_out, "output directory (default <root>/data)");

    // ---- shared flags builder for train-like commands
    struct TrainFlags {
        std::string config_path;
        double lr = 1e-3, weight_decay = 1e-3, clip = 1.0, alpha = 16.0;
        double lambda_text = 1.0, lambda_norm = 1e-3, lambda_sparsity = 1e-4;
        i64 batch_size = 32, epochs = 20, rank = 2;
    };
    auto add_train_flags = [](CLI::App* cmd, TrainFlags& f) {
        cmd->add_option("--config", f.config_path, "key=value config file");
        cmd->add_option("--lr", f.lr, "adapter learning rate")->capture_default_str();
        cmd->add_option("--batch-size", f.batch_size, "examples per step")->capture_default_str();
        cmd->add_option("--epochs", f.epochs, "training epochs")->capture_default_str();
        cmd->add_option("--weight-decay", f.weight_decay, "decoupled weight decay")
            ->capture_default_str();
        cmd->add_option("--clip", f.clip, "global gradient norm limit")->capture_default_str();
        cmd->add_option("--rank", f.rank, "adapter rank")->capture_default_str();
        cmd->add_option("--alpha", f.alpha, "adapter scaling numerator")->capture_default_str();
        cmd->add_option("--lambda-text", f.lambda_text, "general-text drift penalty weight")
            ->capture_default_str();
        cmd->add_option("--lambda-norm", f.lambda_norm, "update magnitude penalty weight")
            ->capture_default_str();
        cmd->add_option("--lambda-sparsity", f.lambda_sparsity, "update sparsity penalty weight")
            ->capture_default_str();
    };
    auto resolve_train = [](ParamSet& ps, TrainFlags& f) {
        ps.finish_f64("--lr", "lr", f.lr);
        ps.finish_i64("--batch-size", "batch_size", f.batch_size);
        ps.finish_i64("--epochs", "epochs", f.epochs);
        ps.finish_f64("--weight-decay", "weight_decay", f.weight_decay);
        ps.finish_f64("--clip", "clip", f.clip);
        ps.finish_i64("--rank", "rank", f.rank);
        ps.finish_f64("--alpha", "alpha", f.alpha);
        ps.finish_f64("--lambda-text", "lambda_text", f.lambda_text);
        ps.finish_f64("--lambda-norm", "lambda_norm", f.lambda_norm);
        ps.finish_f64("--lambda-sparsity", "lambda_sparsity", f.lambda_sparsity);
        TrainConfig cfg;
        cfg.learning_rate = f.lr;
        cfg.batch_size = f.batch_size;
        cfg.epochs = f.epochs;
        cfg.weight_decay = f.weight_decay;
        cfg.grad_clip_norm = f.clip;
        cfg.rank = f.rank;
        cfg.alpha = f.alpha;
        cfg.weights = LossWeights{f.lambda_text, f.lambda_norm, f.lambda_sparsity};
        return cfg;
    };

    // ---- pretrain
    auto* pre = app.add_subcommand("pretrain", "train the base model to task mastery");
    std::string pre_config, pre_data, pre_out, pre_tasks = "mapping,ioi,analogy,parity,agreement";
    i64 pre_dmodel = 64, pre_layers = 4, pre_heads = 4, pre_dff = 128, pre_maxseq = 64;
    double pre_lr = 1e-3, pre_mastery = 0.9, pre_clip = 1.0, pre_wd = 0.0;
    i64 pre_batch = 32, pre_steps = 8000, pre_eval = 250;
    pre->add_option("--config", pre_config, "key=value config file");
    pre->add_option("--data-dir", pre_data, "dataset directory (default <root>/data)");
    pre->add_option("--out", pre_out, "model checkpoint path (default <root>/ckpt/model.ckpt)");
    pre->add_option("--tasks", pre_tasks, "comma-separated task list")->capture_default_str();
    pre->add_option("--d-model", pre_dmodel, "residual width")->capture_default_str();
    pre->add_option("--n-layers", pre_layers, "transformer blocks")->capture_default_str();
    pre->add_option("--n-heads", pre_heads, "attention heads")->capture_default_str();
    pre->add_option("--d-ff", pre_dff, "feed-forward width")->capture_default_str();
    pre->add_option("--max-seq-len", pre_maxseq, "position table size")->capture_default_str();
    pre->add_option("--lr", pre_lr, "learning rate")->capture_default_str();
    pre->add_option("--batch-size", pre_batch, "sequences per step")->capture_default_str();
    pre->add_option("--max-steps", pre_steps, "step budget")->capture_default_str();
    pre->add_option("--eval-every", pre_eval, "mastery check cadence")->capture_default_str();
    pre->add_option("--mastery", pre_mastery, "required dev accuracy per task")
        ->capture_default_str();
    pre->add_option("--clip", pre_clip, "global gradient norm limit")->capture_default_str();

    // ---- ablate
    auto* abl = app.add_subcommand("ablate", "train a suppression adapter for one task");
    std::string abl_ckpt, abl_task, abl_data, abl_out;
    TrainFlags abl_flags;
    abl->add_option("--checkpoint", abl_ckpt, "base model checkpoint")->required();
    abl->add_option("--task", abl_task, "target task name")
        ->check(CLI::IsMember(kTaskNames))
        ->required();
    abl->add_option("--data-dir", abl_data, "dataset directory (default <root>/data)");
    abl->add_option("--out", abl_out, "adapter checkpoint path")->required();
    add_train_flags(abl, abl_flags);

    // ---- eval
    auto* ev = app.add_subcommand("eval", "metric table for a model, with or without adapters");
    std::string ev_ckpt, ev_adapter, ev_data, ev_tasks = "mapping,ioi,analogy,parity,agreement";
    std::string ev_split = "test", ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "base model checkpoint")->required();
    ev->add_option("--adapter", ev_adapter, "adapter checkpoint (omit for base model)");
    ev->add_option("--data-dir", ev_data, "dataset directory (default <root>/data)");
    ev->add_option("--tasks", ev_tasks, "comma-separated task list")->capture_default_str();
    ev->add_option("--split", ev_split, "dev or test")->capture_default_str();
    ev->add_option("--out", ev_out, "metrics CSV path")->required();

    // ---- analyze
    auto* an = app.add_subcommand("analyze", "adapter weight analysis: importance, similarity, map");
    std::string an_ckpt, an_out;
    std::vector<std::string> an_adapters;
    an->add_option("--checkpoint", an_ckpt, "base model checkpoint (for geometry)")->required();
    an->add_option("--adapter", an_adapters, "name=path, repeatable")->required();
    an->add_option("--out-dir", an_out, "report directory")->required();

    // ---- compare
    auto* cp = app.add_subcommand("compare", "adapter vs noise-based localization methods");
    std::string cp_ckpt, cp_adapter, cp_task, cp_data, cp_out;
    std::string cp_methods = "diffmean,logitlens,intgrad,probing";
    std::string cp_grid = "0.1,0.2,0.5,1.0,2.0";
    i64 cp_topk = 10, cp_igsteps = 64;
    cp->add_option("--checkpoint", cp_ckpt, "base model checkpoint")->required();
    cp->add_option("--adapter", cp_adapter, "trained adapter checkpoint")->required();
    cp->add_option("--task", cp_task, "target task")->check(CLI::IsMember(kTaskNames))->required();
    cp->add_option("--data-dir", cp_data, "dataset directory (default <root>/data)");
    cp->add_option("--methods", cp_methods, "comma-separated scoring methods")
        ->capture_default_str();
    cp->add_option("--eps-grid", cp_grid, "noise levels tuned on dev")->capture_default_str();
    cp->add_option("--top-k", cp_topk, "components each method may corrupt")
        ->capture_default_str();
    cp->add_option("--ig-steps", cp_igsteps, "integration steps")->capture_default_str();
    cp->add_option("--out", cp_out, "comparison CSV path")->required();

    // ---- sweep
    auto* sw = app.add_subcommand("sweep", "adapter rank sweep on one task");
    std::string sw_ckpt, sw_task, sw_data, sw_ranks = "1,2,4,8", sw_out;
    i64 sw_jobs = 1;
    TrainFlags sw_flags;
    sw->add_option("--checkpoint", sw_ckpt, "base model checkpoint")->required();
    sw->add_option("--task", sw_task, "target task")->check(CLI::IsMember(kTaskNames))->required();
    sw->add_option("--data-dir", sw_data, "dataset directory (default <root>/data)");
    sw->add_option("--ranks", sw_ranks, "comma-separated adapter ranks")->capture_default_str();
    sw->add_option("--jobs", sw_jobs, "accepted for interface compatibility; cells run sequentially")
        ->capture_default_str();
    sw->add_option("--out", sw_out, "sweep CSV path")->required();
    add_train_flags(sw, sw_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const std::filesystem::path root = g.root;
    auto split_list = [](const std::string& csv) {
        std::vector<std::string> out;
        std::stringstream ss(csv);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(item);
        return out;
    };

    auto dispatch = [&](auto run) -> int {
        try {
            if (g.precision == "f64")
                run(double{});
            else
                run(float{});
            return 0;
        } catch (const ConfigError& e) {
            std::cerr << "scalpel-error category=config message=\"" << e.what() << "\"\n";
            return 2;
        } catch (const TrainError& e) {
            std::cerr << "scalpel-error category=training message=\"" << e.what() << "\"\n";
            return 4;
        } catch (const DataError& e) {
            std::cerr << "scalpel-error category=data message=\"" << e.what() << "\"\n";
            return 3;
        } catch (const InputError& e) {
            std::cerr << "scalpel-error category=data message=\"" << e.what() << "\"\n";
            return 3;
        } catch (const ScalpelError& e) {
            std::cerr << "scalpel-error category=internal message=\"" << e.what() << "\"\n";
            return 5;
        } catch (const std::exception& e) {
            std::cerr << "scalpel-error category=internal message=\"" << e.what() << "\"\n";
            return 5;
        }
    };

    if (gen->parsed()) {
        return dispatch([&](auto) {
            const std::filesystem::path out_dir = gd_out.empty() ? root / "data" : std::filesystem::path(gd_out);
            cmd_gen_data(g, gd_kind, gd_size, out_dir);
        });
    }

    if (pre->parsed()) {
        return dispatch([&](auto tag) {
            using S = decltype(tag);
            ParamSet ps{pre, pre_config.empty() ? Config{} : Config::load(pre_config), Config{}};
            ps.finish_str("--tasks", "tasks", pre_tasks);
            ps.finish_i64("--d-model", "d_model", pre_dmodel);
            ps.finish_i64("--n-layers", "n_layers", pre_layers);
            ps.finish_i64("--n-heads", "n_heads", pre_heads);
            ps.finish_i64("--d-ff", "d_ff", pre_dff);
            ps.finish_i64("--max-seq-len", "max_seq_len", pre_maxseq);
            ps.finish_f64("--lr", "lr", pre_lr);
            ps.finish_i64("--batch-size", "batch_size", pre_batch);
            ps.finish_i64("--max-steps", "max_steps", pre_steps);
            ps.finish_i64("--eval-every", "eval_every", pre_eval);
            ps.finish_f64("--mastery", "mastery", pre_mastery);
            ps.finish_f64("--clip", "clip", pre_clip);
            ps.finish_str("--data-dir", "data_dir", pre_data);
            ps.finish_str("--out", "out", pre_out);

            ModelConfig mcfg;
            mcfg.d_model = pre_dmodel;
            mcfg.n_layers = pre_layers;
            mcfg.n_heads = pre_heads;
            mcfg.d_ff = pre_dff;
            mcfg.max_seq_len = pre_maxseq;
            PretrainConfig pcfg;
            pcfg.learning_rate = pre_lr;
            pcfg.batch_size = pre_batch;
            pcfg.max_steps = pre_steps;
            pcfg.eval_every = pre_eval;
            pcfg.mastery = pre_mastery;
            pcfg.grad_clip_norm = pre_clip;

            const std::filesystem::path data_dir = pre_data.empty() ? root / "data" : std::filesystem::path(pre_data);
            const std::filesystem::path out =
                pre_out.empty() ? root / "ckpt" / "model.ckpt" : std::filesystem::path(pre_out);
            cmd_pretrain<S>(g, ps, data_dir, out, split_list(pre_tasks), mcfg, pcfg);
        });
    }

    if (abl->parsed()) {
        return dispatch([&](auto tag) {
            using S = decltype(tag);
            ParamSet ps{abl, abl_flags.config_path.empty() ? Config{}
                                                           : Config::load(abl_flags.config_path),
                        Config{}};
            TrainConfig tcfg = resolve_train(ps, abl_flags);
            ps.snap.set("task", abl_task);
            ps.snap.set("checkpoint", abl_ckpt);
            ps.snap.set("out", abl_out);
            const std::filesystem::path data_dir = abl_data.empty() ? root / "data" : std::filesystem::path(abl_data);
            ps.snap.set("data_dir", data_dir.string());
            cmd_ablate<S>(g, ps, abl_ckpt, abl_task, data_dir, abl_out, tcfg);
        });
    }

    if (ev->parsed()) {
        return dispatch([&](auto tag) {
            using S = decltype(tag);
            ParamSet ps{ev, Config{}, Config{}};
            ps.snap.set("checkpoint", ev_ckpt);
            ps.snap.set("adapter", ev_adapter);
            ps.snap.set("tasks", ev_tasks);
            ps.snap.set("split", ev_split);
            ps.snap.set("out", ev_out);
            const std::filesystem::path data_dir = ev_data.empty() ? root / "data" : std::filesystem::path(ev_data);
            ps.snap.set("data_dir", data_dir.string());
            cmd_eval<S>(g, ps, ev_ckpt, ev_adapter, data_dir, split_list(ev_tasks), ev_split,
                        ev_out);
        });
    }

    if (an->parsed()) {
        return dispatch([&](auto tag) {
            using S = decltype(tag);
            ParamSet ps{an, Config{}, Config{}};
            ps.snap.set("checkpoint", an_ckpt);
            for (std::size_t i = 0; i < an_adapters.size(); ++i)
                ps.snap.set("adapter." + std::to_string(i), an_adapters[i]);
            ps.snap.set("out_dir", an_out);
            cmd_analyze<S>(g, ps, an_ckpt, an_adapters, an_out);
        });
    }

    if (cp->parsed()) {
        return dispatch([&](auto tag) {
            using S = decltype(tag);
            ParamSet ps{cp, Config{}, Config{}};
            ps.snap.set("checkpoint", cp_ckpt);
            ps.snap.set("adapter", cp_adapter);
            ps.snap.set("task", cp_task);
            ps.snap.set("methods", cp_methods);
            ps.snap.set("eps_grid", cp_grid);
            ps.snap.set("top_k", std::to_string(cp_topk));
            ps.snap.set("ig_steps", std::to_string(cp_igsteps));
            ps.snap.set("out", cp_out);
            std::vector<double> grid;
            for (const auto& s : split_list(cp_grid)) grid.push_back(std::stod(s));
            const std::filesystem::path data_dir = cp_data.empty() ? root / "data" : std::filesystem::path(cp_data);
            ps.snap.set("data_dir", data_dir.string());
            cmd_compare<S>(g, ps, cp_ckpt, cp_adapter, cp_task, data_dir, split_list(cp_methods),
                           grid, cp_topk, cp_igsteps, cp_out);
        });
    }

    if (sw->parsed()) {
        return dispatch([&](auto tag) {
            using S = decltype(tag);
            ParamSet ps{sw, sw_flags.config_path.empty() ? Config{}
                                                         : Config::load(sw_flags.config_path),
                        Config{}};
            TrainConfig tcfg = resolve_train(ps, sw_flags);
            ps.finish_str("--ranks", "ranks", sw_ranks);
            ps.finish_i64("--jobs", "jobs", sw_jobs);
            ps.snap.set("task", sw_task);
            ps.snap.set("checkpoint", sw_ckpt);
            ps.snap.set("out", sw_out);
            std::vector<i64> ranks;
            for (const auto& s : split_list(sw_ranks)) ranks.push_back(std::stoll(s));
            const std::filesystem::path data_dir = sw_data.empty() ? root / "data" : std::filesystem::path(sw_data);
            ps.snap.set("data_dir", data_dir.string());
            cmd_sweep<S>(g, ps, sw_ckpt, sw_task, data_dir, ranks, tcfg, sw_jobs, sw_out);
        });
    }

    std::cerr << "scalpel-error category=config message=\"no subcommand\"\n";
    return 2;
}

}  // namespace scalpel
