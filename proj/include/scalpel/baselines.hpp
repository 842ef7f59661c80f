#pragma once

// Comparison importance-scoring methods over the frozen base model (activation
// difference, logit lens, integrated gradients, linear probing) and the
// weighted-noise corruption they all share as an intervention.

#include <algorithm>
#include <cmath>

#include "scalpel/analysis.hpp"
#include "scalpel/train.hpp"

namespace scalpel {

struct ComponentId {
    i64 layer = 0;
    int site = 0;
};

struct ImportanceScores {
    std::string method;
    std::vector<double> scores;  // layer-major, site order; n_layers * 7 entries

    double at(i64 layer, int site) const {
        return scores.at(static_cast<std::size_t>(layer * kSitesPerLayer + site));
    }
};

namespace detail {

// The two context sets every scoring method contrasts: text ending in the
// answer the task prefers, and text ending in the answer it rejects.
inline std::pair<std::vector<std::string>, std::vector<std::string>> continuation_texts(
    const Dataset& ds) {
    std::pair<std::vector<std::string>, std::vector<std::string>> out;
    if (ds.kind == TaskKind::token) {
        for (const auto& e : ds.token_examples) {
            out.first.push_back(e.prompt + e.correct);
            out.second.push_back(e.prompt + e.wrong);
        }
    } else {
        for (const auto& e : ds.sentence_examples) {
            out.first.push_back(e.good);
            out.second.push_back(e.bad);
        }
    }
    return out;
}

// Mean input activation per site at the final real position, over texts.
template <typename S>
std::vector<std::vector<double>> final_site_input_means(const Model<S>& m,
                                                        std::span<const std::string> texts,
                                                        std::size_t batch_size = 32) {
    const std::size_t n_sites = static_cast<std::size_t>(m.cfg.n_layers * kSitesPerLayer);
    std::vector<std::vector<double>> sums(n_sites);
    for (i64 l = 0; l < m.cfg.n_layers; ++l)
        for (int s = 0; s < kSitesPerLayer; ++s)
            sums[static_cast<std::size_t>(l * kSitesPerLayer + s)]
                .assign(static_cast<std::size_t>(m.cfg.site_dims(s).first), 0.0);

    for (std::size_t at = 0; at < texts.size(); at += batch_size) {
        const std::size_t take = std::min(batch_size, texts.size() - at);
        PaddedBatch pb = pad_batch(m.tokenizer, texts.subspan(at, take), false);
        Tape<S> tp(false);
        ForwardTrace<S> trace;
        (void)m.forward(tp, pb.tokens, pb.batch, pb.seq, nullptr, &trace);
        for (std::size_t site = 0; site < n_sites; ++site) {
            const auto& x = trace.site_inputs[site];
            const i64 d = x.dim(1);
            for (i64 b = 0; b < pb.batch; ++b) {
                const i64 row = b * pb.seq + pb.lengths[b] - 1;
                for (i64 j = 0; j < d; ++j)
                    sums[site][static_cast<std::size_t>(j)] +=
                        static_cast<double>(x.data()[row * d + j]);
            }
        }
    }
    for (auto& v : sums)
        for (double& x : v) x /= static_cast<double>(texts.size());
    return sums;
}

}  // namespace detail

// Score = L2 distance between the mean site input under correct continuations
// and under wrong ones, at the final position.
template <typename S>
ImportanceScores score_diffmean(const Model<S>& m, const Dataset& ds) {
    if (ds.size() == 0) throw InputError("diffmean: empty split");
    auto [correct, wrong] = detail::continuation_texts(ds);
    auto mc = detail::final_site_input_means(m, std::span<const std::string>(correct));
    auto mw = detail::final_site_input_means(m, std::span<const std::string>(wrong));
    ImportanceScores out;
    out.method = "diffmean";
    for (std::size_t site = 0; site < mc.size(); ++site) {
        double sq = 0;
        for (std::size_t j = 0; j < mc[site].size(); ++j) {
            const double d = mc[site][j] - mw[site][j];
            sq += d * d;
        }
        out.scores.push_back(std::sqrt(sq));
    }
    return out;
}

// ------------------------------------------------------------- logit lens

namespace detail {

// Mean correct-vs-wrong gap when a residual stream tensor is pushed through
// the final norm + unembedding. Raw logits, not log probabilities.
template <typename S>
double projected_gap(const Model<S>& m, Tape<S>& tp, const Tensor<S>& resid,
                     const PaddedBatch& pb, const Dataset& ds) {
    Tensor<S> proj =
        linear(tp, rms_norm(tp, resid, m.final_gain, static_cast<S>(m.cfg.norm_eps)), m.unembed);
    const i64 v = proj.dim(1);
    auto val = proj.data();
    if (ds.kind == TaskKind::token) {
        double acc = 0;
        for (i64 b = 0; b < pb.batch; ++b) {
            const i64 row = b * pb.seq + pb.lengths[b] - 1;
            const auto& e = ds.token_examples[static_cast<std::size_t>(b)];
            acc += static_cast<double>(val[row * v + single_token_id(m, e.correct)]) -
                   static_cast<double>(val[row * v + single_token_id(m, e.wrong)]);
        }
        return acc / static_cast<double>(pb.batch);
    }
    // sentence mode: goods occupy the first half of the batch, bads the rest
    const i64 half = pb.batch / 2;
    double acc = 0;
    for (i64 b = 0; b < pb.batch; ++b) {
        double mean_logit = 0;
        for (i64 j = 0; j + 1 < pb.lengths[b]; ++j)
            mean_logit += static_cast<double>(
                val[(b * pb.seq + j) * v + pb.tokens[b * pb.seq + j + 1]]);
        mean_logit /= static_cast<double>(pb.lengths[b] - 1);
        acc += (b < half) ? mean_logit : -mean_logit;
    }
    return acc / static_cast<double>(half);
}

// Mean gap at every residual depth: entry 0 is the embedding stream, entry
// n_layers is the final stream the model actually uses.
template <typename S>
std::vector<double> lens_gap_profile(const Model<S>& m, const Dataset& ds) {
    if (ds.size() == 0) throw InputError("logit lens: empty split");
    std::vector<std::string> texts;
    if (ds.kind == TaskKind::token) {
        for (const auto& e : ds.token_examples) texts.push_back(e.prompt);
    } else {
        for (const auto& e : ds.sentence_examples) texts.push_back(e.good);
        for (const auto& e : ds.sentence_examples) texts.push_back(e.bad);
    }
    PaddedBatch pb = pad_batch(m.tokenizer, texts, false);
    Tape<S> tp(false);
    ForwardTrace<S> trace;
    (void)m.forward(tp, pb.tokens, pb.batch, pb.seq, nullptr, &trace);
    std::vector<double> gaps;
    for (const auto& resid : trace.residuals)
        gaps.push_back(projected_gap(m, tp, resid, pb, ds));
    return gaps;
}

}  // namespace detail

// Per-layer score = |mean gap added between the layer's input stream and its
// output stream|; the layer's seven sites inherit it.
template <typename S>
ImportanceScores score_logit_lens(const Model<S>& m, const Dataset& ds) {
    ImportanceScores out;
    out.method = "logitlens";
    if (m.cfg.n_layers == 0) return out;
    auto gaps = detail::lens_gap_profile(m, ds);
    for (i64 l = 0; l < m.cfg.n_layers; ++l) {
        const double delta = gaps[static_cast<std::size_t>(l) + 1] - gaps[static_cast<std::size_t>(l)];
        for (int s = 0; s < kSitesPerLayer; ++s) out.scores.push_back(std::abs(delta));
    }
    return out;
}

// ---------------------------------------------------- integrated gradients

namespace detail {

// Mean correct-minus-wrong logit gap as a differentiable scalar.
template <typename S>
Tensor<S> logit_gap_scalar(Tape<S>& tp, const Model<S>& m, const Dataset& ds) {
    if (ds.size() == 0) throw InputError("gap: empty split");
    if (ds.kind == TaskKind::token) {
        std::vector<std::string> prompts;
        for (const auto& e : ds.token_examples) prompts.push_back(e.prompt);
        PaddedBatch pb = pad_batch(m.tokenizer, prompts, false);
        Tensor<S> logits = m.forward(tp, pb.tokens, pb.batch, pb.seq);
        std::vector<i64> rows, ccols, wcols;
        for (i64 b = 0; b < pb.batch; ++b) {
            rows.push_back(b * pb.seq + pb.lengths[b] - 1);
            ccols.push_back(single_token_id(m, ds.token_examples[static_cast<std::size_t>(b)].correct));
            wcols.push_back(single_token_id(m, ds.token_examples[static_cast<std::size_t>(b)].wrong));
        }
        return mean(tp, sub(tp, gather_rc(tp, logits, rows, ccols),
                            gather_rc(tp, logits, rows, wcols)));
    }
    const i64 n = static_cast<i64>(ds.sentence_examples.size());
    std::vector<std::string> texts;
    for (const auto& e : ds.sentence_examples) texts.push_back(e.good);
    for (const auto& e : ds.sentence_examples) texts.push_back(e.bad);
    PaddedBatch pb = pad_batch(m.tokenizer, texts, false);
    Tensor<S> logits = m.forward(tp, pb.tokens, pb.batch, pb.seq);
    std::vector<i64> rows, cols, seg;
    for (i64 b = 0; b < pb.batch; ++b)
        for (i64 j = 0; j + 1 < pb.lengths[b]; ++j) {
            rows.push_back(b * pb.seq + j);
            cols.push_back(pb.tokens[b * pb.seq + j + 1]);
            seg.push_back(b);
        }
    Tensor<S> per_seq = segment_mean(tp, gather_rc(tp, logits, rows, cols), seg, pb.batch);
    Tensor<S> stacked = reshape(tp, per_seq, {2, n});
    return mean(tp, sub(tp, reshape(tp, take_rows(tp, stacked, {0}), {n}),
                        reshape(tp, take_rows(tp, stacked, {1}), {n})));
}

}  // namespace detail

template <typename S>
struct IgAttribution {
    std::vector<double> attributions;  // signed, per component
    double gap_full = 0;               // gap with the original weights
    double gap_zero = 0;               // gap with all site weights zeroed
};

// Joint straight-line path from zeroed projection weights to the real ones,
// midpoint Riemann sum. Embeddings, norms and the unembedding stay fixed.
template <typename S>
IgAttribution<S> ig_attributions(const Model<S>& m, const Dataset& ds, i64 steps) {
    if (steps < 8) throw ConfigError("integrated gradients: need at least 8 steps");
    Model<S> path = m.clone();
    path.set_requires_grad(false);

    std::vector<Tensor<S>> weights;
    std::vector<std::vector<S>> originals;
    for (i64 l = 0; l < m.cfg.n_layers; ++l)
        for (int s = 0; s < kSitesPerLayer; ++s) {
            Tensor<S> w = path.site_weight(l, s);
            w.set_requires_grad(true);
            weights.push_back(w);
            auto src = m.site_weight(l, s).data();
            originals.emplace_back(src.begin(), src.end());
        }

    IgAttribution<S> out;
    out.attributions.assign(weights.size(), 0.0);

    auto set_scale = [&](double t) {
        for (std::size_t c = 0; c < weights.size(); ++c) {
            auto dst = weights[c].data();
            for (std::size_t j = 0; j < dst.size(); ++j)
                dst[j] = static_cast<S>(t * static_cast<double>(originals[c][j]));
        }
    };

    for (i64 i = 0; i < steps; ++i) {
        set_scale((static_cast<double>(i) + 0.5) / static_cast<double>(steps));
        for (auto& w : weights) w.zero_grad();
        Tape<S> tp;
        Tensor<S> gap = detail::logit_gap_scalar(tp, path, ds);
        tp.backward(gap);
        for (std::size_t c = 0; c < weights.size(); ++c) {
            auto g = weights[c].grad();
            double dot = 0;
            for (std::size_t j = 0; j < g.size(); ++j)
                dot += static_cast<double>(g[j]) * static_cast<double>(originals[c][j]);
            out.attributions[c] += dot / static_cast<double>(steps);
        }
    }

    Tape<S> quiet(false);
    set_scale(1.0);
    out.gap_full = static_cast<double>(detail::logit_gap_scalar(quiet, path, ds).item());
    set_scale(0.0);
    out.gap_zero = static_cast<double>(detail::logit_gap_scalar(quiet, path, ds).item());
    return out;
}

template <typename S>
ImportanceScores score_integrated_gradients(const Model<S>& m, const Dataset& ds, i64 steps = 64) {
    auto ig = ig_attributions(m, ds, steps);
    ImportanceScores out;
    out.method = "intgrad";
    for (double a : ig.attributions) out.scores.push_back(std::abs(a));
    return out;
}

// ---------------------------------------------------------------- probing

struct ProbeConfig {
    i64 iterations = 300;
    double lr = 0.5;
    double dev_fraction = 0.25;
    u64 seed = 0;
};

namespace detail {

// Full-batch logistic regression from zero weights; returns dev accuracy with
// boundary cases scored as wrong.
inline double logistic_probe(const std::vector<std::vector<double>>& train_x,
                             const std::vector<int>& train_y,
                             const std::vector<std::vector<double>>& dev_x,
                             const std::vector<int>& dev_y, const ProbeConfig& pc) {
    const std::size_t n = train_x.size(), d = train_x[0].size();
    // standardize by train statistics for conditioning
    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (const auto& x : train_x)
        for (std::size_t j = 0; j < d; ++j) mu[j] += x[j];
    for (double& v : mu) v /= static_cast<double>(n);
    for (const auto& x : train_x)
        for (std::size_t j = 0; j < d; ++j) sd[j] += (x[j] - mu[j]) * (x[j] - mu[j]);
    for (double& v : sd) v = std::sqrt(v / static_cast<double>(n));
    for (double& v : sd)
        if (v == 0) v = 1.0;

    std::vector<double> w(d, 0.0);
    double b = 0;
    for (i64 it = 0; it < pc.iterations; ++it) {
        std::vector<double> gw(d, 0.0);
        double gb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = b;
            for (std::size_t j = 0; j < d; ++j) z += w[j] * (train_x[i][j] - mu[j]) / sd[j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double err = p - static_cast<double>(train_y[i]);
            for (std::size_t j = 0; j < d; ++j) gw[j] += err * (train_x[i][j] - mu[j]) / sd[j];
            gb += err;
        }
        for (std::size_t j = 0; j < d; ++j) w[j] -= pc.lr * gw[j] / static_cast<double>(n);
        b -= pc.lr * gb / static_cast<double>(n);
    }

    std::size_t hits = 0;
    for (std::size_t i = 0; i < dev_x.size(); ++i) {
        double z = b;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * (dev_x[i][j] - mu[j]) / sd[j];
        if ((z > 0 && dev_y[i] == 1) || (z < 0 && dev_y[i] == 0)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(dev_x.size());
}

// Final-position residual activations per layer depth for each text.
// Result: [n_layers][text] vectors of d_model doubles.
template <typename S>
std::vector<std::vector<std::vector<double>>> final_residuals(const Model<S>& m,
                                                              std::span<const std::string> texts,
                                                              std::size_t batch_size = 32) {
    std::vector<std::vector<std::vector<double>>> out(
        static_cast<std::size_t>(m.cfg.n_layers));
    for (std::size_t at = 0; at < texts.size(); at += batch_size) {
        const std::size_t take = std::min(batch_size, texts.size() - at);
        PaddedBatch pb = pad_batch(m.tokenizer, texts.subspan(at, take), false);
        Tape<S> tp(false);
        ForwardTrace<S> trace;
        (void)m.forward(tp, pb.tokens, pb.batch, pb.seq, nullptr, &trace);
        for (i64 l = 0; l < m.cfg.n_layers; ++l) {
            const auto& resid = trace.residuals[static_cast<std::size_t>(l) + 1];
            const i64 d = resid.dim(1);
            for (i64 b = 0; b < pb.batch; ++b) {
                const i64 row = b * pb.seq + pb.lengths[b] - 1;
                std::vector<double> v(static_cast<std::size_t>(d));
                for (i64 j = 0; j < d; ++j)
                    v[static_cast<std::size_t>(j)] = static_cast<double>(resid.data()[row * d + j]);
                out[static_cast<std::size_t>(l)].push_back(std::move(v));
            }
        }
    }
    return out;
}

}  // namespace detail

// Per layer, a logistic probe classifies correct-vs-wrong continuation
// contexts from the layer's final-position activations; score = dev accuracy
// above chance, clamped at zero. Sites inherit their layer's score.
template <typename S>
ImportanceScores score_probing(const Model<S>& m, const Dataset& ds, const ProbeConfig& pc = {}) {
    const std::size_t n = ds.size();
    if (n < 40) throw InputError("probing: split must have at least 40 examples");
    auto [correct, wrong] = detail::continuation_texts(ds);
    auto feat_c = detail::final_residuals(m, std::span<const std::string>(correct));
    auto feat_w = detail::final_residuals(m, std::span<const std::string>(wrong));

    // example-level split keeps the paired contexts on the same side
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(pc.seed, 71));
    rng.shuffle(order);
    const std::size_t n_dev = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                           static_cast<double>(n) * pc.dev_fraction));

    ImportanceScores out;
    out.method = "probing";
    for (i64 l = 0; l < m.cfg.n_layers; ++l) {
        std::vector<std::vector<double>> tx, dx;
        std::vector<int> ty, dy;
        for (std::size_t i = 0; i < n; ++i) {
            const bool is_dev = i < n_dev;
            const std::size_t ex = order[i];
            auto& xs = is_dev ? dx : tx;
            auto& ys = is_dev ? dy : ty;
            xs.push_back(feat_c[static_cast<std::size_t>(l)][ex]);
            ys.push_back(1);
            xs.push_back(feat_w[static_cast<std::size_t>(l)][ex]);
            ys.push_back(0);
        }
        if (std::all_of(ty.begin(), ty.end(), [&](int y) { return y == ty[0]; }))
            throw InputError("probing: degenerate single-class split");
        const double acc = detail::logistic_probe(tx, ty, dx, dy, pc);
        const double score = std::max(0.0, acc - 0.5);
        for (int s = 0; s < kSitesPerLayer; ++s) out.scores.push_back(score);
    }
    return out;
}

// ------------------------------------------------------------- corruption

// Copy of the model with the k most important components perturbed by
// score-weighted Gaussian noise scaled to each matrix's own entry spread:
// W += eps * (score / max selected score) * std(W) * G.
template <typename S>
Model<S> corrupt(const Model<S>& m, const ImportanceScores& scores, std::size_t k, double eps,
                 u64 seed) {
    const std::size_t n_comp = static_cast<std::size_t>(m.cfg.n_layers * kSitesPerLayer);
    if (scores.scores.size() != n_comp)
        throw ContractError("corrupt: score table does not cover the components");
    if (eps < 0) throw ConfigError("corrupt: noise level must be non-negative");
    if (k > n_comp) throw ConfigError("corrupt: top-k exceeds component count");

    std::vector<std::size_t> order(n_comp);
    for (std::size_t i = 0; i < n_comp; ++i) order[i] = i;
    // ties resolve to the earlier (layer, site) pair
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores.scores[a] > scores.scores[b];
    });

    Model<S> out = m.clone();
    out.set_requires_grad(false);
    if (k == 0) return out;

    double max_sel = 0;
    for (std::size_t i = 0; i < k; ++i) max_sel = std::max(max_sel, scores.scores[order[i]]);
    if (max_sel == 0) return out;  // nothing informative to perturb

    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t c = order[i];
        const i64 layer = static_cast<i64>(c) / kSitesPerLayer;
        const int site = static_cast<int>(c % kSitesPerLayer);
        Tensor<S> w = out.site_weight(layer, site);
        auto val = w.data();

        double mean = 0;
        for (S v : val) mean += static_cast<double>(v);
        mean /= static_cast<double>(val.size());
        double var = 0;
        for (S v : val) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
        const double sigma = std::sqrt(var / static_cast<double>(val.size()));

        const double weight = eps * (scores.scores[c] / max_sel) * sigma;
        Rng rng(derive_seed(seed, static_cast<u64>(c)));
        for (S& v : val) v += static_cast<S>(weight * rng.gaussian(0.0, 1.0));
    }
    return out;
}

// -------------------------------------------------------------- comparison

struct CompareRow {
    std::string method;
    bool ok = true;
    std::string error;
    double accuracy_drop = 0, perplexity = 0, capability = 0, product = 0, eps = 0;
};

inline void save_compare_csv(std::span<const CompareRow> rows,
                             const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path.string());
    os << "method,accd,ppl,cap,product,eps\n";
    for (const auto& r : rows) {
        if (r.ok)
            os << r.method << ',' << detail::fmt_metric(r.accuracy_drop) << ','
               << detail::fmt_metric(r.perplexity) << ',' << detail::fmt_metric(r.capability)
               << ',' << detail::fmt_metric(r.product) << ',' << detail::fmt_metric(r.eps)
               << '\n';
        else
            os << r.method << ",,,,,\"" << r.error << "\"\n";
    }
}

// Runs each scoring method, tunes its noise level on dev by the
// accuracy-drop x capability product, and reports test metrics. The adapter
// row holds the trained equalizer to the same top-k component budget by
// zeroing every other site.
template <typename S>
std::vector<CompareRow> compare(const Model<S>& m, const Adapter<S>& adapter,
                                const TaskData& target,
                                std::span<const TaskData* const> held_out,
                                std::span<const std::string> corpus_test,
                                std::span<const std::string> methods,
                                std::span<const double> eps_grid, std::size_t top_k, u64 seed,
                                i64 ig_steps = 64) {
    if (eps_grid.empty()) throw ContractError("compare: empty noise grid");
    std::vector<const Dataset*> devs, tests;
    for (const TaskData* t : held_out) {
        devs.push_back(&t->dev);
        tests.push_back(&t->test);
    }
    const Adapter<S>* no_ad = nullptr;
    const double base_dev_acc = task_accuracy(m, no_ad, target.dev);
    const double base_test_acc = task_accuracy(m, no_ad, target.test);

    std::vector<CompareRow> rows;

    CompareRow base;
    base.method = "base";
    base.perplexity = perplexity(m, no_ad, corpus_test);
    base.capability = overall_capability(m, no_ad, tests);
    rows.push_back(base);

    {
        CompareRow row;
        row.method = "scalpel";
        Adapter<S> cut = truncate_to_top_sites(adapter, top_k);
        row.accuracy_drop = base_test_acc - task_accuracy(m, &cut, target.test);
        row.perplexity = perplexity(m, &cut, corpus_test);
        row.capability = overall_capability(m, &cut, tests);
        row.product = row.accuracy_drop * row.capability;
        rows.push_back(row);
    }

    for (const auto& method : methods) {
        CompareRow row;
        row.method = method;
        try {
            ImportanceScores scores;
            if (method == "diffmean")
                scores = score_diffmean(m, target.dev);
            else if (method == "logitlens")
                scores = score_logit_lens(m, target.dev);
            else if (method == "intgrad")
                scores = score_integrated_gradients(m, target.dev, ig_steps);
            else if (method == "probing")
                scores = score_probing(m, target.dev, ProbeConfig{300, 0.5, 0.25, seed});
            else
                throw ConfigError("unknown scoring method '" + method + "'");

            double best_product = -std::numeric_limits<double>::infinity();
            double best_eps = eps_grid[0];
            for (double eps : eps_grid) {
                Model<S> corrupted = corrupt(m, scores, top_k, eps, derive_seed(seed, 17));
                const double accd = base_dev_acc - task_accuracy(corrupted, no_ad, target.dev);
                const double cap = overall_capability(corrupted, no_ad, devs);
                const double product = accd * cap;
                if (product > best_product) {
                    best_product = product;
                    best_eps = eps;
                }
            }

            Model<S> chosen = corrupt(m, scores, top_k, best_eps, derive_seed(seed, 17));
            row.eps = best_eps;
            row.accuracy_drop = base_test_acc - task_accuracy(chosen, no_ad, target.test);
            row.perplexity = perplexity(chosen, no_ad, corpus_test);
            row.capability = overall_capability(chosen, no_ad, tests);
            row.product = row.accuracy_drop * row.capability;
        } catch (const ScalpelError& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace scalpel
