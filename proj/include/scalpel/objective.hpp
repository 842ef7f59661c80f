#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "scalpel/data.hpp"
#include "scalpel/model.hpp"
#include "scalpel/tensor.hpp"

// Training objectives. The ablation target drives the log-probability gap
// between paired answers toward zero:
//   token tasks     g_i = log p(correct | prompt) - log p(wrong | prompt)
//   sentence tasks  g_i = (1/|good|) sum_t log p(good_t) -
//                         (1/|bad|)  sum_t log p(bad_t)
// and the loss is mean(g^2). Three regularizers keep the adapter small and
// the language model intact: an activation penalty on the adapter's output
// deltas over general text, a mean squared Frobenius penalty, and a mean L1
// penalty over the adapter matrices.

namespace scalpel {

struct PaddedBatch {
    std::vector<i64> tokens;   // [batch * seq], right-padded
    std::vector<i64> lengths;  // real rows per sequence, BOS included
    i64 batch = 0, seq = 0;
};

// Encodes each text as BOS + characters (+ optional EOS) and right-pads.
inline PaddedBatch pad_batch(const Tokenizer& tk, std::span<const std::string> texts,
                             bool append_eos) {
    PaddedBatch pb;
    pb.batch = static_cast<i64>(texts.size());
    std::vector<std::vector<i64>> rows;
    for (const auto& t : texts) {
        std::vector<i64> ids{Tokenizer::kBos};
        for (i64 id : tk.encode(t)) ids.push_back(id);
        if (append_eos) ids.push_back(Tokenizer::kEos);
        pb.seq = std::max<i64>(pb.seq, static_cast<i64>(ids.size()));
        rows.push_back(std::move(ids));
    }
    pb.tokens.assign(static_cast<std::size_t>(pb.batch * pb.seq), Tokenizer::kPad);
    for (i64 b = 0; b < pb.batch; ++b) {
        pb.lengths.push_back(static_cast<i64>(rows[b].size()));
        for (std::size_t j = 0; j < rows[b].size(); ++j)
            pb.tokens[b * pb.seq + static_cast<i64>(j)] = rows[b][j];
    }
    return pb;
}

namespace detail {

template <typename S>
i64 single_token_id(const Model<S>& m, const std::string& answer) {
    auto ids = m.tokenizer.encode(answer);
    if (ids.size() != 1)
        throw InputError("answer '" + answer + "' does not encode to exactly one token");
    return ids[0];
}

}  // namespace detail

// Per-example log-probability gap at the final prompt position: [batch].
template <typename S>
Tensor<S> token_gap(Tape<S>& tp, const Model<S>& m, const Adapter<S>* ad,
                    std::span<const TokenExample> batch) {
    if (batch.empty()) throw ContractError("token_gap: empty batch");
    std::vector<std::string> prompts;
    for (const auto& e : batch) prompts.push_back(e.prompt);
    PaddedBatch pb = pad_batch(m.tokenizer, prompts, false);

    Tensor<S> logits = m.forward(tp, pb.tokens, pb.batch, pb.seq, ad);
    std::vector<i64> final_rows;
    for (i64 b = 0; b < pb.batch; ++b) final_rows.push_back(b * pb.seq + pb.lengths[b] - 1);
    Tensor<S> last = take_rows(tp, logits, final_rows);
    Tensor<S> lp = log_softmax(tp, last);

    std::vector<i64> rows, correct_cols, wrong_cols;
    for (i64 b = 0; b < pb.batch; ++b) {
        rows.push_back(b);
        correct_cols.push_back(detail::single_token_id(m, batch[b].correct));
        wrong_cols.push_back(detail::single_token_id(m, batch[b].wrong));
    }
    return sub(tp, gather_rc(tp, lp, rows, correct_cols), gather_rc(tp, lp, rows, wrong_cols));
}

// Per-example gap of length-normalized sentence log-probabilities: [batch].
template <typename S>
Tensor<S> sentence_gap(Tape<S>& tp, const Model<S>& m, const Adapter<S>* ad,
                       std::span<const SentenceExample> batch) {
    if (batch.empty()) throw ContractError("sentence_gap: empty batch");
    const i64 B = static_cast<i64>(batch.size());
    std::vector<std::string> texts;
    for (const auto& e : batch) texts.push_back(e.good);
    for (const auto& e : batch) texts.push_back(e.bad);
    PaddedBatch pb = pad_batch(m.tokenizer, texts, false);

    Tensor<S> logits = m.forward(tp, pb.tokens, pb.batch, pb.seq, ad);
    Tensor<S> lp = log_softmax(tp, logits);
    std::vector<i64> rows, cols, seg;
    for (i64 r = 0; r < pb.batch; ++r)
        for (i64 j = 0; j + 1 < pb.lengths[r]; ++j) {
            rows.push_back(r * pb.seq + j);
            cols.push_back(pb.tokens[r * pb.seq + j + 1]);
            seg.push_back(r);
        }
    Tensor<S> per_tok = gather_rc(tp, lp, rows, cols);
    Tensor<S> per_seq = segment_mean(tp, per_tok, seg, pb.batch);  // [2B]
    Tensor<S> stacked = reshape(tp, per_seq, {2, B});
    Tensor<S> good = take_rows(tp, stacked, {0});
    Tensor<S> bad = take_rows(tp, stacked, {1});
    return reshape(tp, sub(tp, good, bad), {B});
}

template <typename S>
struct TargetResult {
    Tensor<S> loss;          // mean squared gap
    double mean_abs_gap = 0; // diagnostic, same batch
};

template <typename S>
TargetResult<S> target_loss(Tape<S>& tp, const Model<S>& m, const Adapter<S>* ad,
                            const Dataset& ds, std::size_t begin, std::size_t end) {
    Tensor<S> gaps;
    if (ds.kind == TaskKind::token)
        gaps = token_gap<S>(tp, m, ad,
                            std::span<const TokenExample>(ds.token_examples.data() + begin,
                                                          end - begin));
    else
        gaps = sentence_gap<S>(tp, m, ad,
                               std::span<const SentenceExample>(ds.sentence_examples.data() + begin,
                                                                end - begin));
    TargetResult<S> out;
    double abs_sum = 0;
    for (S g : gaps.data()) abs_sum += std::abs(static_cast<double>(g));
    out.mean_abs_gap = abs_sum / static_cast<double>(gaps.numel());
    out.loss = mean(tp, mul(tp, gaps, gaps));
    return out;
}

// Mean squared L2 norm of the adapter's output delta, over samples, adapted
// sites and real token positions of general text.
template <typename S>
Tensor<S> textreg_loss(Tape<S>& tp, const Model<S>& m, const Adapter<S>& ad,
                       std::span<const std::string> texts) {
    if (texts.empty()) throw ContractError("textreg_loss: empty batch");
    PaddedBatch pb = pad_batch(m.tokenizer, texts, false);
    ForwardTrace<S> trace;
    (void)m.forward(tp, pb.tokens, pb.batch, pb.seq, &ad, &trace);
    const std::size_t n_sites = trace.lora_deltas.size();
    if (n_sites == 0) throw ContractError("textreg_loss: adapter has no sites");

    // weight per row: 1 / (sites * sample length * batch); zero on padding
    Tensor<S> w = Tensor<S>::zeros({pb.batch * pb.seq});
    for (i64 b = 0; b < pb.batch; ++b)
        for (i64 j = 0; j < pb.lengths[b]; ++j)
            w.data()[b * pb.seq + j] =
                S(1) / static_cast<S>(static_cast<double>(n_sites) *
                                      static_cast<double>(pb.lengths[b]) *
                                      static_cast<double>(pb.batch));

    Tensor<S> acc;
    for (const auto& delta : trace.lora_deltas) {
        Tensor<S> sq = row_sum(tp, mul(tp, delta, delta));
        Tensor<S> term = sum(tp, mul(tp, sq, w));
        acc = acc.defined() ? add(tp, acc, term) : term;
    }
    return acc;
}

// Mean squared Frobenius norm over all adapter matrices (A and B alike).
template <typename S>
Tensor<S> normreg_loss(Tape<S>& tp, const Adapter<S>& ad) {
    Tensor<S> acc;
    std::size_t count = 0;
    for (const auto& layer : ad.layers)
        for (const auto& p : layer) {
            for (const Tensor<S>& t : {p.A, p.B}) {
                Tensor<S> term = l2_norm_sq(tp, t);
                acc = acc.defined() ? add(tp, acc, term) : term;
                ++count;
            }
        }
    if (!acc.defined()) throw ContractError("normreg_loss: adapter has no matrices");
    return scale(tp, acc, S(1) / static_cast<S>(count));
}

// Mean L1 norm over all adapter matrices.
template <typename S>
Tensor<S> sparsity_loss(Tape<S>& tp, const Adapter<S>& ad) {
    Tensor<S> acc;
    std::size_t count = 0;
    for (const auto& layer : ad.layers)
        for (const auto& p : layer) {
            for (const Tensor<S>& t : {p.A, p.B}) {
                Tensor<S> term = l1_norm(tp, t);
                acc = acc.defined() ? add(tp, acc, term) : term;
                ++count;
            }
        }
    if (!acc.defined()) throw ContractError("sparsity_loss: adapter has no matrices");
    return scale(tp, acc, S(1) / static_cast<S>(count));
}

// Coefficients of the three regularizers in the assembled objective.
struct LossWeights {
    double text = 1.0;
    double norm = 1e-3;
    double sparsity = 1e-4;
};

template <typename S>
struct AblationLoss {
    Tensor<S> total;
    // unweighted component values plus the weighted sum, for logging
    double target = 0, textreg = 0, normreg = 0, sparsityreg = 0;
    double total_value = 0, mean_abs_gap = 0;
};

// total = mean squared gap + w.text * textreg + w.norm * normreg
//       + w.sparsity * sparsityreg.  Zero-weight terms are skipped entirely
// (textreg costs a second forward pass).
template <typename S>
AblationLoss<S> ablation_loss(Tape<S>& tp, const Model<S>& m, const Adapter<S>& ad,
                              const Dataset& ds, std::size_t begin, std::size_t end,
                              std::span<const std::string> general, const LossWeights& w) {
    AblationLoss<S> out;
    auto tgt = target_loss<S>(tp, m, &ad, ds, begin, end);
    out.target = static_cast<double>(tgt.loss.item());
    out.mean_abs_gap = tgt.mean_abs_gap;
    out.total = tgt.loss;
    if (w.text != 0) {
        Tensor<S> t = textreg_loss<S>(tp, m, ad, general);
        out.textreg = static_cast<double>(t.item());
        out.total = add(tp, out.total, scale(tp, t, static_cast<S>(w.text)));
    }
    if (w.norm != 0) {
        Tensor<S> t = normreg_loss(tp, ad);
        out.normreg = static_cast<double>(t.item());
        out.total = add(tp, out.total, scale(tp, t, static_cast<S>(w.norm)));
    }
    if (w.sparsity != 0) {
        Tensor<S> t = sparsity_loss(tp, ad);
        out.sparsityreg = static_cast<double>(t.item());
        out.total = add(tp, out.total, scale(tp, t, static_cast<S>(w.sparsity)));
    }
    out.total_value = static_cast<double>(out.total.item());
    return out;
}

// Next-token cross entropy over BOS + text + EOS sequences, averaged over
// predicted tokens. Used for pretraining.
template <typename S>
Tensor<S> lm_loss(Tape<S>& tp, const Model<S>& m, std::span<const std::string> texts) {
    if (texts.empty()) throw ContractError("lm_loss: empty batch");
    PaddedBatch pb = pad_batch(m.tokenizer, texts, true);
    Tensor<S> logits = m.forward(tp, pb.tokens, pb.batch, pb.seq);
    Tensor<S> lp = log_softmax(tp, logits);
    std::vector<i64> rows, cols;
    for (i64 b = 0; b < pb.batch; ++b)
        for (i64 j = 0; j + 1 < pb.lengths[b]; ++j) {
            rows.push_back(b * pb.seq + j);
            cols.push_back(pb.tokens[b * pb.seq + j + 1]);
        }
    Tensor<S> picked = gather_rc(tp, lp, rows, cols);
    return scale(tp, mean(tp, picked), S(-1));
}

// ----------------------------------------------------------- eval plumbing

struct PairLogProb {
    double first = 0, second = 0;  // correct/wrong or good/bad
};

template <typename S>
std::vector<PairLogProb> token_pair_logprobs(const Model<S>& m, const Adapter<S>* ad,
                                             std::span<const TokenExample> examples,
                                             std::size_t batch_size = 64) {
    std::vector<PairLogProb> out;
    Tape<S> tp(false);
    for (std::size_t at = 0; at < examples.size(); at += batch_size) {
        const std::size_t n = std::min(batch_size, examples.size() - at);
        std::vector<std::string> prompts;
        for (std::size_t i = 0; i < n; ++i) prompts.push_back(examples[at + i].prompt);
        PaddedBatch pb = pad_batch(m.tokenizer, prompts, false);
        Tensor<S> logits = m.forward(tp, pb.tokens, pb.batch, pb.seq, ad);
        std::vector<i64> final_rows;
        for (i64 b = 0; b < pb.batch; ++b) final_rows.push_back(b * pb.seq + pb.lengths[b] - 1);
        Tensor<S> lp = log_softmax(tp, take_rows(tp, logits, final_rows));
        for (std::size_t i = 0; i < n; ++i) {
            const i64 c = detail::single_token_id(m, examples[at + i].correct);
            const i64 w = detail::single_token_id(m, examples[at + i].wrong);
            const i64 V = m.cfg.vocab_size;
            out.push_back({static_cast<double>(lp.data()[static_cast<i64>(i) * V + c]),
                           static_cast<double>(lp.data()[static_cast<i64>(i) * V + w])});
        }
    }
    return out;
}

template <typename S>
std::vector<PairLogProb> sentence_pair_logprobs(const Model<S>& m, const Adapter<S>* ad,
                                                std::span<const SentenceExample> examples,
                                                std::size_t batch_size = 32) {
    std::vector<PairLogProb> out;
    Tape<S> tp(false);
    for (std::size_t at = 0; at < examples.size(); at += batch_size) {
        const std::size_t n = std::min(batch_size, examples.size() - at);
        std::vector<std::string> texts;
        for (std::size_t i = 0; i < n; ++i) texts.push_back(examples[at + i].good);
        for (std::size_t i = 0; i < n; ++i) texts.push_back(examples[at + i].bad);
        PaddedBatch pb = pad_batch(m.tokenizer, texts, false);
        Tensor<S> logits = m.forward(tp, pb.tokens, pb.batch, pb.seq, ad);
        Tensor<S> lp = log_softmax(tp, logits);
        const i64 V = m.cfg.vocab_size;
        auto seq_mean = [&](i64 r) {
            double acc = 0;
            i64 cnt = 0;
            for (i64 j = 0; j + 1 < pb.lengths[r]; ++j) {
                acc += static_cast<double>(
                    lp.data()[(r * pb.seq + j) * V + pb.tokens[r * pb.seq + j + 1]]);
                ++cnt;
            }
            return acc / static_cast<double>(cnt);
        };
        for (std::size_t i = 0; i < n; ++i)
            out.push_back({seq_mean(static_cast<i64>(i)), seq_mean(static_cast<i64>(n + i))});
    }
    return out;
}

template <typename S>
std::vector<PairLogProb> pair_logprobs(const Model<S>& m, const Adapter<S>* ad,
                                       const Dataset& ds) {
    if (ds.kind == TaskKind::token)
        return token_pair_logprobs(m, ad, std::span<const TokenExample>(ds.token_examples));
    return sentence_pair_logprobs(m, ad, std::span<const SentenceExample>(ds.sentence_examples));
}

// Total negative log likelihood and predicted-token count over texts,
// the raw material for perplexity.
template <typename S>
std::pair<double, i64> lm_nll_sum(const Model<S>& m, const Adapter<S>* ad,
                                  std::span<const std::string> texts,
                                  std::size_t batch_size = 32) {
    double total = 0;
    i64 count = 0;
    Tape<S> tp(false);
    for (std::size_t at = 0; at < texts.size(); at += batch_size) {
        const std::size_t n = std::min(batch_size, texts.size() - at);
        std::vector<std::string> chunk(texts.begin() + at, texts.begin() + at + n);
        PaddedBatch pb = pad_batch(m.tokenizer, chunk, true);
        Tensor<S> logits = m.forward(tp, pb.tokens, pb.batch, pb.seq, ad);
        Tensor<S> lp = log_softmax(tp, logits);
        const i64 V = m.cfg.vocab_size;
        for (i64 b = 0; b < pb.batch; ++b)
            for (i64 j = 0; j + 1 < pb.lengths[b]; ++j) {
                total -= static_cast<double>(
                    lp.data()[(b * pb.seq + j) * V + pb.tokens[b * pb.seq + j + 1]]);
                ++count;
            }
    }
    return {total, count};
}

}  // namespace scalpel
