#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "scalpel/checkpoint.hpp"
#include "scalpel/common.hpp"
#include "scalpel/rng.hpp"
#include "scalpel/tensor.hpp"
#include "scalpel/tokenizer.hpp"

// Decoder-only transformer, pre-norm with RMSNorm, SiLU-gated MLP, learned
// positional embeddings and an untied unembedding. Low-rank adapters can be
// attached to the seven projection sites of every block (q, k, v, o, gate,
// up, down); adapted projections compute W0 x + (alpha/rank) * B A x with B
// zero-initialized so a fresh adapter is an exact no-op.

namespace scalpel {

inline constexpr int kSitesPerLayer = 7;
inline constexpr std::array<const char*, kSitesPerLayer> kSiteNames = {
    "q", "k", "v", "o", "gate", "up", "down"};

struct ModelConfig {
    i64 vocab_size = 0;
    i64 d_model = 64;
    i64 n_layers = 4;
    i64 n_heads = 4;
    i64 d_ff = 128;
    i64 max_seq_len = 64;
    double norm_eps = 1e-5;

    void validate() const {
        if (vocab_size < 4) throw ConfigError("vocab_size must be at least 4 (3 reserved ids)");
        if (d_model < 1 || d_ff < 1 || n_heads < 1 || max_seq_len < 1)
            throw ConfigError("model dimensions must be positive");
        if (n_layers < 0) throw ConfigError("n_layers must be non-negative");
        if (d_model % n_heads != 0)
            throw ConfigError("d_model " + std::to_string(d_model) +
                              " is not divisible by n_heads " + std::to_string(n_heads));
    }

    // (d_in, d_out) of each adaptable projection site.
    std::pair<i64, i64> site_dims(int site) const {
        switch (site) {
            case 0:
            case 1:
            case 2:
            case 3: return {d_model, d_model};          // q k v o
            case 4:
            case 5: return {d_model, d_ff};             // gate up
            case 6: return {d_ff, d_model};             // down
            default: throw InternalError("site index out of range");
        }
    }
};

template <typename S>
struct LoraPair {
    Tensor<S> A;  // [rank x d_in]
    Tensor<S> B;  // [d_out x rank]
};

template <typename S>
struct Adapter {
    i64 rank = 2;
    double alpha = 16.0;
    std::string task_label;  // which behavior this adapter suppresses; persisted
    std::vector<std::array<LoraPair<S>, kSitesPerLayer>> layers;

    S scaling() const { return static_cast<S>(alpha / static_cast<double>(rank)); }

    static Adapter init(const ModelConfig& cfg, i64 rank, double alpha, u64 seed) {
        if (rank < 1) throw ConfigError("adapter rank must be positive");
        Adapter ad;
        ad.rank = rank;
        ad.alpha = alpha;
        ad.layers.resize(static_cast<std::size_t>(cfg.n_layers));
        u64 stream = 0;
        for (auto& layer : ad.layers)
            for (int s = 0; s < kSitesPerLayer; ++s) {
                auto [din, dout] = cfg.site_dims(s);
                Rng rng(derive_seed(seed, stream++));
                layer[s].A = Tensor<S>::randn({rank, din}, rng, 0.02, true);
                layer[s].B = Tensor<S>::zeros({dout, rank}, true);
            }
        return ad;
    }

    std::vector<Tensor<S>> params() const {
        std::vector<Tensor<S>> out;
        for (const auto& layer : layers)
            for (const auto& p : layer) {
                out.push_back(p.A);
                out.push_back(p.B);
            }
        return out;
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        for (std::size_t l = 0; l < layers.size(); ++l)
            for (int s = 0; s < kSitesPerLayer; ++s) {
                const std::string base =
                    "layers." + std::to_string(l) + "." + kSiteNames[s] + ".";
                out.emplace_back(base + "A", layers[l][s].A);
                out.emplace_back(base + "B", layers[l][s].B);
            }
        return out;
    }

    Adapter clone() const {
        Adapter c;
        c.rank = rank;
        c.alpha = alpha;
        c.task_label = task_label;
        c.layers.resize(layers.size());
        for (std::size_t l = 0; l < layers.size(); ++l)
            for (int s = 0; s < kSitesPerLayer; ++s) {
                c.layers[l][s].A = layers[l][s].A.clone();
                c.layers[l][s].B = layers[l][s].B.clone();
            }
        return c;
    }

    // Canonical flattening used by weight-space analysis: layer-major, site
    // order as declared, A before B, each matrix row-major.
    std::vector<double> flatten() const {
        std::vector<double> out;
        for (const auto& layer : layers)
            for (const auto& p : layer) {
                for (S v : p.A.data()) out.push_back(static_cast<double>(v));
                for (S v : p.B.data()) out.push_back(static_cast<double>(v));
            }
        return out;
    }

    void save(const std::filesystem::path& path, const ModelConfig& cfg) const {
        Checkpoint ck;
        ck.meta["kind"] = "adapter";
        ck.meta["rank"] = rank;
        ck.meta["alpha"] = alpha;
        ck.meta["task_label"] = task_label;
        ck.meta["n_layers"] = cfg.n_layers;
        ck.meta["d_model"] = cfg.d_model;
        ck.meta["d_ff"] = cfg.d_ff;
        for (std::size_t l = 0; l < layers.size(); ++l)
            for (int s = 0; s < kSitesPerLayer; ++s) {
                const std::string base =
                    "layers." + std::to_string(l) + "." + kSiteNames[s] + ".";
                add_tensor(ck, base + "A", layers[l][s].A);
                add_tensor(ck, base + "B", layers[l][s].B);
            }
        ck.save(path);
    }

    static Adapter load(const std::filesystem::path& path, const ModelConfig& cfg) {
        Checkpoint ck = Checkpoint::load(path);
        if (ck.meta.value("kind", "") != "adapter")
            throw CorruptionError("not an adapter checkpoint: " + path.string());
        if (ck.meta.value("n_layers", i64(-1)) != cfg.n_layers ||
            ck.meta.value("d_model", i64(-1)) != cfg.d_model ||
            ck.meta.value("d_ff", i64(-1)) != cfg.d_ff)
            throw ConfigError("adapter was trained for a different model geometry");
        Adapter ad;
        ad.rank = ck.meta.value("rank", i64(0));
        ad.alpha = ck.meta.value("alpha", 0.0);
        ad.task_label = ck.meta.value("task_label", "");
        if (ad.rank < 1) throw CorruptionError("adapter checkpoint has invalid rank");
        ad.layers.resize(static_cast<std::size_t>(cfg.n_layers));
        for (i64 l = 0; l < cfg.n_layers; ++l)
            for (int s = 0; s < kSitesPerLayer; ++s) {
                auto [din, dout] = cfg.site_dims(s);
                const std::string base =
                    "layers." + std::to_string(l) + "." + kSiteNames[s] + ".";
                ad.layers[l][s].A =
                    read_tensor(ck, base + "A", {ad.rank, din});
                ad.layers[l][s].B =
                    read_tensor(ck, base + "B", {dout, ad.rank});
                ad.layers[l][s].A.set_requires_grad(true);
                ad.layers[l][s].B.set_requires_grad(true);
            }
        return ad;
    }

private:
    static void add_tensor(Checkpoint& ck, const std::string& name, const Tensor<S>& t) {
        std::vector<float> data(t.numel());
        for (std::size_t i = 0; i < t.numel(); ++i) data[i] = static_cast<float>(t.data()[i]);
        ck.add(name, t.shape(), std::move(data));
    }
    static Tensor<S> read_tensor(const Checkpoint& ck, const std::string& name,
                                 std::vector<i64> want_shape) {
        const TensorRecord& r = ck.require(name);
        if (r.shape != want_shape)
            throw CorruptionError("tensor '" + name + "' has shape " + shape_str(r.shape) +
                                  ", expected " + shape_str(want_shape));
        std::vector<S> data(r.data.size());
        for (std::size_t i = 0; i < r.data.size(); ++i) data[i] = static_cast<S>(r.data[i]);
        return Tensor<S>::from(std::move(want_shape), std::move(data));
    }
};

// Optional forward-pass captures for analysis passes. All vectors fill in
// visit order: layer-major, sites q k v o gate up down within a layer.
template <typename S>
struct ForwardTrace {
    std::vector<Tensor<S>> site_inputs;   // activation entering each projection site
    std::vector<Tensor<S>> lora_deltas;   // (alpha/r) B A x term per site, when adapted
    std::vector<Tensor<S>> residuals;     // stream entering layer 0, then after each block
};

namespace detail {

template <typename S>
Tensor<S> rms_norm(Tape<S>& tp, const Tensor<S>& x, const Tensor<S>& gain, S eps) {
    auto inv = rsqrt(tp, row_mean(tp, mul(tp, x, x)), eps);
    return col_scale(tp, row_scale(tp, x, inv), gain);
}

template <typename S>
Tensor<S> adapted_linear(Tape<S>& tp, const Tensor<S>& x, const Tensor<S>& w,
                         const LoraPair<S>* lp, S scaling, ForwardTrace<S>* trace) {
    if (trace) trace->site_inputs.push_back(x);
    Tensor<S> base = linear(tp, x, w);
    if (!lp) return base;
    Tensor<S> delta = scale(tp, linear(tp, linear(tp, x, lp->A), lp->B), scaling);
    if (trace) trace->lora_deltas.push_back(delta);
    return add(tp, base, delta);
}

}  // namespace detail

template <typename S>
struct Model {
    ModelConfig cfg;
    Tokenizer tokenizer;

    struct Layer {
        Tensor<S> attn_gain, wq, wk, wv, wo;
        Tensor<S> mlp_gain, wgate, wup, wdown;
    };

    Tensor<S> tok_embed;  // [vocab x d_model]
    Tensor<S> pos_embed;  // [max_seq_len x d_model]
    std::vector<Layer> layers;
    Tensor<S> final_gain;
    Tensor<S> unembed;  // [vocab x d_model]

    static Model init(ModelConfig config, Tokenizer tokenizer, u64 seed) {
        config.vocab_size = tokenizer.vocab_size();
        config.validate();
        Model m;
        m.cfg = config;
        m.tokenizer = std::move(tokenizer);
        u64 stream = 0;
        auto randn = [&](std::vector<i64> shape) {
            Rng rng(derive_seed(seed, stream++));
            return Tensor<S>::randn(std::move(shape), rng, 0.02, true);
        };
        auto ones = [&](i64 n) {
            auto t = Tensor<S>::zeros({n}, true);
            for (auto& v : t.data()) v = S(1);
            return t;
        };
        m.tok_embed = randn({config.vocab_size, config.d_model});
        m.pos_embed = randn({config.max_seq_len, config.d_model});
        m.layers.resize(static_cast<std::size_t>(config.n_layers));
        for (auto& l : m.layers) {
            l.attn_gain = ones(config.d_model);
            l.wq = randn({config.d_model, config.d_model});
            l.wk = randn({config.d_model, config.d_model});
            l.wv = randn({config.d_model, config.d_model});
            l.wo = randn({config.d_model, config.d_model});
            l.mlp_gain = ones(config.d_model);
            l.wgate = randn({config.d_ff, config.d_model});
            l.wup = randn({config.d_ff, config.d_model});
            l.wdown = randn({config.d_model, config.d_ff});
        }
        m.final_gain = ones(config.d_model);
        m.unembed = randn({config.vocab_size, config.d_model});
        return m;
    }

    std::vector<Tensor<S>> params() const {
        std::vector<Tensor<S>> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        out.emplace_back("tok_embed", tok_embed);
        out.emplace_back("pos_embed", pos_embed);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string base = "layers." + std::to_string(l) + ".";
            out.emplace_back(base + "attn_norm.gain", layers[l].attn_gain);
            out.emplace_back(base + "q.weight", layers[l].wq);
            out.emplace_back(base + "k.weight", layers[l].wk);
            out.emplace_back(base + "v.weight", layers[l].wv);
            out.emplace_back(base + "o.weight", layers[l].wo);
            out.emplace_back(base + "mlp_norm.gain", layers[l].mlp_gain);
            out.emplace_back(base + "gate.weight", layers[l].wgate);
            out.emplace_back(base + "up.weight", layers[l].wup);
            out.emplace_back(base + "down.weight", layers[l].wdown);
        }
        out.emplace_back("final_norm.gain", final_gain);
        out.emplace_back("unembed", unembed);
        return out;
    }

    // The base projection matrix of a given (layer, site).
    Tensor<S>& site_weight(i64 layer, int site) {
        auto& l = layers.at(static_cast<std::size_t>(layer));
        switch (site) {
            case 0: return l.wq;
            case 1: return l.wk;
            case 2: return l.wv;
            case 3: return l.wo;
            case 4: return l.wgate;
            case 5: return l.wup;
            case 6: return l.wdown;
            default: throw InternalError("site index out of range");
        }
    }
    const Tensor<S>& site_weight(i64 layer, int site) const {
        return const_cast<Model*>(this)->site_weight(layer, site);
    }

    void set_requires_grad(bool b) {
        for (auto& t : params()) t.set_requires_grad(b);
    }

    Model clone() const {
        Model m;
        m.cfg = cfg;
        m.tokenizer = tokenizer;
        m.tok_embed = tok_embed.clone();
        m.pos_embed = pos_embed.clone();
        for (const auto& l : layers) {
            Layer c;
            c.attn_gain = l.attn_gain.clone();
            c.wq = l.wq.clone();
            c.wk = l.wk.clone();
            c.wv = l.wv.clone();
            c.wo = l.wo.clone();
            c.mlp_gain = l.mlp_gain.clone();
            c.wgate = l.wgate.clone();
            c.wup = l.wup.clone();
            c.wdown = l.wdown.clone();
            m.layers.push_back(std::move(c));
        }
        m.final_gain = final_gain.clone();
        m.unembed = unembed.clone();
        return m;
    }

    // Runs the network over a [batch x seq] token grid flattened row-major.
    // Returns next-token logits [batch*seq x vocab].
    Tensor<S> forward(Tape<S>& tp, const std::vector<i64>& tokens, i64 batch, i64 seq,
                      const Adapter<S>* adapter = nullptr,
                      ForwardTrace<S>* trace = nullptr) const {
        if (static_cast<i64>(tokens.size()) != batch * seq)
            throw ContractError("forward: token count " + std::to_string(tokens.size()) +
                                " does not equal batch*seq " + std::to_string(batch * seq));
        if (seq < 1 || seq > cfg.max_seq_len)
            throw InputError("forward: sequence length " + std::to_string(seq) +
                             " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
        if (adapter && static_cast<i64>(adapter->layers.size()) != cfg.n_layers)
            throw ConfigError("adapter covers " + std::to_string(adapter->layers.size()) +
                              " layers, model has " + std::to_string(cfg.n_layers));

        std::vector<i64> positions(static_cast<std::size_t>(batch * seq));
        for (i64 b = 0; b < batch; ++b)
            for (i64 t = 0; t < seq; ++t) positions[b * seq + t] = t;

        const S eps = static_cast<S>(cfg.norm_eps);
        const S lora_scale = adapter ? adapter->scaling() : S(0);
        const i64 head_dim = cfg.d_model / cfg.n_heads;
        const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(head_dim));

        Tensor<S> x = add(tp, take_rows(tp, tok_embed, tokens), take_rows(tp, pos_embed, positions));
        if (trace) trace->residuals.push_back(x);  // the stream entering layer 0
        for (i64 l = 0; l < cfg.n_layers; ++l) {
            const Layer& ly = layers[static_cast<std::size_t>(l)];
            const auto* lora = adapter ? &adapter->layers[static_cast<std::size_t>(l)] : nullptr;
            auto site = [&](int s) { return lora ? &(*lora)[s] : nullptr; };

            Tensor<S> n1 = detail::rms_norm(tp, x, ly.attn_gain, eps);
            Tensor<S> q = detail::adapted_linear(tp, n1, ly.wq, site(0), lora_scale, trace);
            Tensor<S> k = detail::adapted_linear(tp, n1, ly.wk, site(1), lora_scale, trace);
            Tensor<S> v = detail::adapted_linear(tp, n1, ly.wv, site(2), lora_scale, trace);
            Tensor<S> qh = split_heads(tp, q, batch, seq, cfg.n_heads);
            Tensor<S> kh = split_heads(tp, k, batch, seq, cfg.n_heads);
            Tensor<S> vh = split_heads(tp, v, batch, seq, cfg.n_heads);
            const i64 groups = batch * cfg.n_heads;
            Tensor<S> scores = scale(tp, bmm_nt(tp, qh, kh, groups), inv_sqrt_hd);
            Tensor<S> probs = causal_softmax_rows(tp, scores, seq);
            Tensor<S> ctx = merge_heads(tp, bmm(tp, probs, vh, groups), batch, seq, cfg.n_heads);
            Tensor<S> attn_out = detail::adapted_linear(tp, ctx, ly.wo, site(3), lora_scale, trace);
            x = add(tp, x, attn_out);

            Tensor<S> n2 = detail::rms_norm(tp, x, ly.mlp_gain, eps);
            Tensor<S> g = detail::adapted_linear(tp, n2, ly.wgate, site(4), lora_scale, trace);
            Tensor<S> u = detail::adapted_linear(tp, n2, ly.wup, site(5), lora_scale, trace);
            Tensor<S> h = mul(tp, silu(tp, g), u);
            Tensor<S> mlp_out = detail::adapted_linear(tp, h, ly.wdown, site(6), lora_scale, trace);
            x = add(tp, x, mlp_out);
            if (trace) trace->residuals.push_back(x);
        }
        Tensor<S> xn = detail::rms_norm(tp, x, final_gain, eps);
        return linear(tp, xn, unembed);
    }

    void save(const std::filesystem::path& path) const {
        Checkpoint ck;
        ck.meta["kind"] = "model";
        ck.meta["vocab_alphabet"] = tokenizer.alphabet();
        ck.meta["d_model"] = cfg.d_model;
        ck.meta["n_layers"] = cfg.n_layers;
        ck.meta["n_heads"] = cfg.n_heads;
        ck.meta["d_ff"] = cfg.d_ff;
        ck.meta["max_seq_len"] = cfg.max_seq_len;
        ck.meta["norm_eps"] = cfg.norm_eps;
        for (const auto& [name, t] : const_cast<Model*>(this)->named_params()) {
            std::vector<float> data(t.numel());
            for (std::size_t i = 0; i < t.numel(); ++i) data[i] = static_cast<float>(t.data()[i]);
            ck.add(name, t.shape(), std::move(data));
        }
        ck.save(path);
    }

    static Model load(const std::filesystem::path& path) {
        Checkpoint ck = Checkpoint::load(path);
        if (ck.meta.value("kind", "") != "model")
            throw CorruptionError("not a model checkpoint: " + path.string());
        ModelConfig cfg;
        cfg.d_model = ck.meta.value("d_model", i64(0));
        cfg.n_layers = ck.meta.value("n_layers", i64(0));
        cfg.n_heads = ck.meta.value("n_heads", i64(0));
        cfg.d_ff = ck.meta.value("d_ff", i64(0));
        cfg.max_seq_len = ck.meta.value("max_seq_len", i64(0));
        cfg.norm_eps = ck.meta.value("norm_eps", 1e-5);
        Tokenizer tk = Tokenizer::from_alphabet(ck.meta.value("vocab_alphabet", ""));
        cfg.vocab_size = tk.vocab_size();
        cfg.validate();

        Model m = init(cfg, tk, 0);
        for (auto& [name, t] : m.named_params()) {
            const TensorRecord& r = ck.require(name);
            if (r.shape != t.shape())
                throw CorruptionError("tensor '" + name + "' has shape " + shape_str(r.shape) +
                                      ", expected " + shape_str(t.shape()));
            for (std::size_t i = 0; i < r.data.size(); ++i)
                t.data()[i] = static_cast<S>(r.data[i]);
        }
        return m;
    }
};

}  // namespace scalpel
