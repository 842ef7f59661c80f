#pragma once

// Two training phases: language-model pretraining of the base transformer on
// a task/general-text mixture until every task is mastered, and adapter
// training ("ablation") that drives the correct/wrong answer gap toward zero
// under the regularized objective.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>

#include "scalpel/eval.hpp"
#include "scalpel/optim.hpp"

namespace scalpel {

// --------------------------------------------------------------- pretrain

struct PretrainConfig {
    double learning_rate = 1e-3;
    i64 batch_size = 32;
    i64 max_steps = 8000;
    i64 eval_every = 250;       // mastery check cadence, in steps
    double mastery = 0.9;       // required dev accuracy on every task
    double grad_clip_norm = 1.0;
    double weight_decay = 0.0;  // decoupled; aids rule formation on copy tasks
    u64 seed = 0;

    void validate() const {
        if (!(learning_rate > 0)) throw ConfigError("pretrain: learning rate must be positive");
        if (batch_size < 2) throw ConfigError("pretrain: batch size must be at least 2");
        if (max_steps < 1) throw ConfigError("pretrain: step budget must be at least 1");
        if (eval_every < 1) throw ConfigError("pretrain: eval cadence must be at least 1");
        if (!(mastery > 0 && mastery <= 1)) throw ConfigError("pretrain: mastery must be in (0, 1]");
        if (!(grad_clip_norm > 0)) throw ConfigError("pretrain: clip norm must be positive");
        if (weight_decay < 0) throw ConfigError("pretrain: weight decay must be non-negative");
    }
};

template <typename S>
struct PretrainOutcome {
    Model<S> model;  // frozen: no parameter requires grad
    i64 steps = 0;
    std::vector<std::pair<std::string, double>> dev_accuracy;
    double baseline_ppl = 0;  // on the held-out corpus split
};

namespace detail {

// Text the language model trains on: the answer the task deems correct,
// in context.
inline std::vector<std::string> lm_texts(const Dataset& ds) {
    std::vector<std::string> out;
    if (ds.kind == TaskKind::token)
        for (const auto& e : ds.token_examples) out.push_back(e.prompt + e.correct);
    else
        for (const auto& e : ds.sentence_examples) out.push_back(e.good);
    return out;
}

template <typename S>
std::vector<std::pair<std::string, double>> dev_accuracies(const Model<S>& m,
                                                           std::span<const TaskData> tasks) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& t : tasks)
        out.emplace_back(t.name, task_accuracy(m, static_cast<const Adapter<S>*>(nullptr), t.dev));
    return out;
}

}  // namespace detail

// Mixes general-corpus and task text 50/50 per batch and stops as soon as
// every task's dev accuracy reaches the mastery threshold. Exhausting the
// step budget first is an error that reports where each task got stuck.
template <typename S>
PretrainOutcome<S> pretrain(ModelConfig cfg, const Tokenizer& tk, std::span<const TaskData> tasks,
                            std::span<const std::string> corpus_train,
                            std::span<const std::string> corpus_dev,
                            const PretrainConfig& pcfg) {
    pcfg.validate();
    if (tasks.empty()) throw ContractError("pretrain: no tasks");
    if (corpus_train.empty() || corpus_dev.empty()) throw ContractError("pretrain: empty corpus");

    cfg.vocab_size = tk.vocab_size();
    cfg.validate();

    PretrainOutcome<S> out;
    out.model = Model<S>::init(cfg, tk, derive_seed(pcfg.seed, 0));

    std::vector<std::string> task_texts;
    for (const auto& t : tasks)
        for (auto& s : detail::lm_texts(t.train)) task_texts.push_back(std::move(s));
    if (task_texts.empty()) throw ContractError("pretrain: tasks have no training text");

    AdamW<S> opt(out.model.params(), {pcfg.learning_rate, 0.9, 0.999, 1e-8, pcfg.weight_decay});
    Rng rng(derive_seed(pcfg.seed, 1));
    const i64 n_general = pcfg.batch_size / 2;

    bool mastered = false;
    for (i64 step = 1; step <= pcfg.max_steps; ++step) {
        std::vector<std::string> batch;
        for (i64 i = 0; i < n_general; ++i)
            batch.push_back(corpus_train[rng.uniform_below(corpus_train.size())]);
        for (i64 i = n_general; i < pcfg.batch_size; ++i)
            batch.push_back(task_texts[rng.uniform_below(task_texts.size())]);

        Tape<S> tp;
        Tensor<S> loss;
        try {
            loss = lm_loss<S>(tp, out.model, batch);
        } catch (const NumericError& e) {
            throw TrainError("pretrain step " + std::to_string(step) + ": " + e.what());
        }
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value))
            throw TrainError("pretrain step " + std::to_string(step) + ": non-finite loss");
        tp.backward(loss);
        clip_global_norm(out.model.params(), pcfg.grad_clip_norm);
        opt.step();
        opt.zero_grad();
        out.steps = step;

        if (step % pcfg.eval_every == 0 || step == pcfg.max_steps) {
            out.dev_accuracy = detail::dev_accuracies(out.model, tasks);
            mastered = std::all_of(out.dev_accuracy.begin(), out.dev_accuracy.end(),
                                   [&](const auto& p) { return p.second >= pcfg.mastery; });
            if (mastered) break;
        }
    }
    if (!mastered) {
        std::string msg = "pretraining budget exhausted after " + std::to_string(out.steps) +
                          " steps; dev accuracy:";
        for (const auto& [name, acc] : out.dev_accuracy)
            msg += " " + name + "=" + detail::fmt_metric(acc);
        throw TrainError(msg);
    }

    out.model.set_requires_grad(false);
    out.baseline_ppl = perplexity(out.model, static_cast<const Adapter<S>*>(nullptr), corpus_dev);
    return out;
}

// ----------------------------------------------------------------- ablate

struct TrainConfig {
    double learning_rate = 1e-3;
    i64 batch_size = 32;
    i64 epochs = 20;
    double weight_decay = 1e-3;
    double grad_clip_norm = 1.0;
    u64 seed = 0;
    LossWeights weights;
    i64 rank = 2;
    double alpha = 16.0;

    void validate() const {
        // learning_rate == 0 is allowed as an explicit no-op mode
        if (!(learning_rate >= 0)) throw ConfigError("ablate: learning rate must be >= 0");
        if (batch_size < 1) throw ConfigError("ablate: batch size must be at least 1");
        if (epochs < 1) throw ConfigError("ablate: epochs must be at least 1");
        if (!(grad_clip_norm > 0)) throw ConfigError("ablate: clip norm must be positive");
        if (rank < 1) throw ConfigError("ablate: rank must be at least 1");
        if (weights.text < 0 || weights.norm < 0 || weights.sparsity < 0)
            throw ConfigError("ablate: loss weights must be non-negative");
    }
};

struct StepRecord {
    i64 step = 0;
    double target = 0, textreg = 0, normreg = 0, sparsityreg = 0;
    double total = 0, mean_abs_gap = 0;
};

struct EpochRecord {
    i64 epoch = 0;  // 1-based
    double accuracy = 0, accuracy_drop = 0, capability = 0, product = 0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    i64 best_epoch = 0;  // epoch whose adapter snapshot was returned

    void save_steps_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw InputError("cannot write " + path.string());
        os << "step,target,textreg,normreg,sparsityreg,total,mean_abs_gap\n";
        for (const auto& r : steps)
            os << r.step << ',' << detail::fmt_metric(r.target) << ','
               << detail::fmt_metric(r.textreg) << ',' << detail::fmt_metric(r.normreg) << ','
               << detail::fmt_metric(r.sparsityreg) << ',' << detail::fmt_metric(r.total) << ','
               << detail::fmt_metric(r.mean_abs_gap) << '\n';
    }

    void save_epochs_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw InputError("cannot write " + path.string());
        os << "epoch,acc,accd,cap,product\n";
        for (const auto& r : epochs)
            os << r.epoch << ',' << detail::fmt_metric(r.accuracy) << ','
               << detail::fmt_metric(r.accuracy_drop) << ',' << detail::fmt_metric(r.capability)
               << ',' << detail::fmt_metric(r.product) << '\n';
    }
};

template <typename S>
struct AblateResult {
    Adapter<S> adapter;
    TrainLog log;
};

namespace detail {

inline Dataset shuffled_dataset(const Dataset& ds, Rng& rng) {
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    Dataset out;
    out.kind = ds.kind;
    for (std::size_t i : order) {
        if (ds.kind == TaskKind::token)
            out.token_examples.push_back(ds.token_examples[i]);
        else
            out.sentence_examples.push_back(ds.sentence_examples[i]);
    }
    return out;
}

}  // namespace detail

// Trains adapters on the frozen model to equalize the target task's answer
// probabilities. Per step: one target batch plus an equal-size general batch,
// one backward pass into the adapters only, global-norm clipping, AdamW.
// Dev metrics run each epoch and the snapshot maximizing accuracy-drop x
// capability is returned.
template <typename S>
AblateResult<S> ablate(const Model<S>& m, const TaskData& target,
                       std::span<const std::string> general_pool,
                       std::span<const TaskData* const> held_out, const TrainConfig& cfg) {
    cfg.validate();
    if (target.train.size() == 0) throw ContractError("ablate: target task has no train split");
    if (general_pool.empty()) throw ContractError("ablate: empty general pool");
    if (held_out.empty()) throw ContractError("ablate: no held-out tasks");
    for (const auto& [name, t] : m.named_params())
        if (t.requires_grad())
            throw ContractError("ablate: base parameter '" + name + "' is not frozen");

    AblateResult<S> out;
    out.adapter = Adapter<S>::init(m.cfg, cfg.rank, cfg.alpha, derive_seed(cfg.seed, 2));

    std::vector<const Dataset*> held_out_devs;
    for (const TaskData* t : held_out) held_out_devs.push_back(&t->dev);
    const double base_acc = task_accuracy(m, static_cast<const Adapter<S>*>(nullptr), target.dev);

    std::optional<AdamW<S>> opt;
    if (cfg.learning_rate > 0)
        opt.emplace(out.adapter.params(),
                    AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
    Rng rng(derive_seed(cfg.seed, 3));

    Adapter<S> best;
    double best_product = -std::numeric_limits<double>::infinity();
    i64 step = 0;
    const i64 n = static_cast<i64>(target.train.size());
    const i64 bs = std::min(cfg.batch_size, n);

    for (i64 epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Dataset train = detail::shuffled_dataset(target.train, rng);
        for (i64 b0 = 0; b0 < n; b0 += bs) {
            const i64 b1 = std::min(n, b0 + bs);
            std::vector<std::string> general;
            for (i64 i = b0; i < b1; ++i)
                general.push_back(general_pool[rng.uniform_below(general_pool.size())]);

            Tape<S> tp;
            ++step;
            AblationLoss<S> loss;
            try {
                loss = ablation_loss<S>(tp, m, out.adapter, train,
                                        static_cast<std::size_t>(b0),
                                        static_cast<std::size_t>(b1), general, cfg.weights);
            } catch (const NumericError& e) {
                // overflow inside the forward pass surfaces before the loss
                // value exists; report it as the training failure it is
                throw TrainError("ablation step " + std::to_string(step) + ": " + e.what());
            }
            if (!std::isfinite(loss.total_value))
                throw TrainError("ablation step " + std::to_string(step) +
                                 ": non-finite loss (target=" + detail::fmt_metric(loss.target) +
                                 " textreg=" + detail::fmt_metric(loss.textreg) +
                                 " normreg=" + detail::fmt_metric(loss.normreg) +
                                 " sparsityreg=" + detail::fmt_metric(loss.sparsityreg) + ")");
            tp.backward(loss.total);
            clip_global_norm(out.adapter.params(), cfg.grad_clip_norm);
            if (opt) {
                opt->step();
                opt->zero_grad();
            } else {
                for (auto& p : out.adapter.params()) p.zero_grad();
            }
            out.log.steps.push_back({step, loss.target, loss.textreg, loss.normreg,
                                     loss.sparsityreg, loss.total_value, loss.mean_abs_gap});
        }

        EpochRecord er;
        er.epoch = epoch;
        er.accuracy = task_accuracy(m, &out.adapter, target.dev);
        er.accuracy_drop = base_acc - er.accuracy;
        er.capability = overall_capability(m, &out.adapter, held_out_devs);
        er.product = er.accuracy_drop * er.capability;
        out.log.epochs.push_back(er);
        if (er.product > best_product) {
            best_product = er.product;
            best = out.adapter.clone();
            out.log.best_epoch = epoch;
        }
    }

    out.adapter = std::move(best);
    return out;
}

// ------------------------------------------------------------------ sweep

struct SweepCell {
    std::string label;
    TrainConfig config;
};

struct SweepRow {
    std::string label;
    bool ok = false;
    std::string error;
    double accuracy_drop = 0, capability = 0, product = 0;
};

// Trains one adapter per cell and ranks the cells by the dev-set
// accuracy-drop x capability product; failures become marked rows at the end
// instead of aborting the sweep.
template <typename S>
std::vector<SweepRow> sweep(const Model<S>& m, const TaskData& target,
                            std::span<const std::string> general_pool,
                            std::span<const TaskData* const> held_out,
                            std::span<const SweepCell> cells) {
    if (cells.empty()) throw ContractError("sweep: empty grid");
    std::vector<SweepRow> rows;
    for (const auto& cell : cells) {
        SweepRow row;
        row.label = cell.label;
        try {
            auto res = ablate<S>(m, target, general_pool, held_out, cell.config);
            const auto& best = res.log.epochs.at(static_cast<std::size_t>(res.log.best_epoch - 1));
            row.ok = true;
            row.accuracy_drop = best.accuracy_drop;
            row.capability = best.capability;
            row.product = best.product;
        } catch (const ScalpelError& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.ok != b.ok) return a.ok;
        return a.product > b.product;
    });
    return rows;
}

inline void save_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path.string());
    os << "label,accd,cap,product,error\n";
    for (const auto& r : rows) {
        if (r.ok)
            os << r.label << ',' << detail::fmt_metric(r.accuracy_drop) << ','
               << detail::fmt_metric(r.capability) << ',' << detail::fmt_metric(r.product)
               << ",\n";
        else
            os << r.label << ",,,,\"" << r.error << "\"\n";
    }
}

}  // namespace scalpel
