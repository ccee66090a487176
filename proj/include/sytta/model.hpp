// Copyright (c) 2026, the sytta authors
// SPDX-License-Identifier: Apache-2.0
//
// Byte-level decoder-only transformer with low-rank adapters on the query
// and value projections. Base weights stay frozen during adaptation; only
// the adapter factors are trainable. Pre-LN blocks, learned absolute
// positions, no biases on the projections.
#pragma once

#include "sytta/common.hpp"
#include "sytta/tensor.hpp"
#include "sytta/tokens.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace sytta {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

class ContextOverflowError : public DimensionError {
public:
    explicit ContextOverflowError(const std::string& msg) : DimensionError(msg) {}
};

struct LmConfig {
    int vocab = kVocabSize;
    int layers = 2;
    int dim = 64;
    int heads = 4;
    int max_context = 256;
    int lora_rank = 8;
    double lora_scale = 2.0; // alpha / rank

    void validate() const {
        if (vocab < 1 || layers < 1 || dim < 1 || heads < 1 || max_context < 1)
            throw ConfigError("LmConfig: all dimensions must be positive");
        if (dim % heads != 0) throw ConfigError("LmConfig: dim must be divisible by heads");
        if (lora_rank < 1) throw ConfigError("LmConfig: lora_rank must be >= 1");
    }

    bool operator==(const LmConfig&) const = default;
};

struct LoraPair {
    Tensor down; // [dim x rank], N(0, 0.02^2) at init
    Tensor up;   // [rank x dim], zero at init so the adapter starts as identity
};

struct LayerWeights {
    Tensor ln1_g, ln1_b;
    Tensor wq, wk, wv, wo;
    Tensor ln2_g, ln2_b;
    Tensor fc_w, proj_w;
};

struct LayerAdapters {
    LoraPair q;
    LoraPair v;
};

// Per-layer q/k/v activations captured during a forward pass, for tests
// that pin down which projections the adapters are allowed to touch.
struct ForwardProbe {
    std::vector<Tensor> q, k, v;
};

class ModelState {
public:
    LmConfig config;
    Tensor tok_emb; // [vocab x dim]
    Tensor pos_emb; // [max_context x dim]
    std::vector<LayerWeights> layers;
    Tensor lnf_g, lnf_b;
    Tensor out_w; // [dim x vocab]
    std::vector<LayerAdapters> adapters;
    std::string snapshot_id;

    static ModelState init(const LmConfig& cfg, uint64_t seed) {
        cfg.validate();
        ModelState s;
        s.config = cfg;
        Rng rng(seed ^ 0x5e11a0f1u);
        const double w0 = 0.02;
        s.tok_emb = Tensor::randn({cfg.vocab, cfg.dim}, rng, w0);
        s.pos_emb = Tensor::randn({cfg.max_context, cfg.dim}, rng, w0);
        for (int l = 0; l < cfg.layers; ++l) {
            LayerWeights lw;
            lw.ln1_g = Tensor::full({cfg.dim}, 1.0);
            lw.ln1_b = Tensor::zeros({cfg.dim});
            lw.wq = Tensor::randn({cfg.dim, cfg.dim}, rng, w0);
            lw.wk = Tensor::randn({cfg.dim, cfg.dim}, rng, w0);
            lw.wv = Tensor::randn({cfg.dim, cfg.dim}, rng, w0);
            lw.wo = Tensor::randn({cfg.dim, cfg.dim}, rng, w0);
            lw.ln2_g = Tensor::full({cfg.dim}, 1.0);
            lw.ln2_b = Tensor::zeros({cfg.dim});
            lw.fc_w = Tensor::randn({cfg.dim, 4 * cfg.dim}, rng, w0);
            lw.proj_w = Tensor::randn({4 * cfg.dim, cfg.dim}, rng, w0);
            s.layers.push_back(std::move(lw));
        }
        s.lnf_g = Tensor::full({cfg.dim}, 1.0);
        s.lnf_b = Tensor::zeros({cfg.dim});
        s.out_w = Tensor::randn({cfg.dim, cfg.vocab}, rng, w0);
        s.init_adapters(rng);
        s.snapshot_id = hex64(fnv1a64(&seed, sizeof(seed), 0x51d ^ static_cast<uint64_t>(cfg.dim)));
        return s;
    }

    // Working copy for one adaptation run: base weights shared read-only,
    // adapter factors deep-copied.
    ModelState fork() const {
        ModelState s = *this;
        s.adapters.clear();
        for (const LayerAdapters& la : adapters) {
            LayerAdapters c;
            c.q.down = la.q.down.detached_copy().mark_trainable();
            c.q.up = la.q.up.detached_copy().mark_trainable();
            c.v.down = la.v.down.detached_copy().mark_trainable();
            c.v.up = la.v.up.detached_copy().mark_trainable();
            s.adapters.push_back(std::move(c));
        }
        return s;
    }

    // Restores the adapter factors to the values captured at init time.
    void reset_to_base() {
        auto ts = adapter_tensors();
        if (adapter_snapshot_.size() != ts.size()) throw InvariantError("adapter snapshot missing");
        for (size_t i = 0; i < ts.size(); ++i) {
            if (adapter_snapshot_[i].size() != ts[i].data().size())
                throw InvariantError("adapter snapshot shape drift");
            ts[i].data() = adapter_snapshot_[i];
            ts[i].zero_grad();
        }
    }

    std::vector<Tensor> adapter_tensors() const {
        std::vector<Tensor> ts;
        for (const LayerAdapters& la : adapters) {
            ts.push_back(la.q.down);
            ts.push_back(la.q.up);
            ts.push_back(la.v.down);
            ts.push_back(la.v.up);
        }
        return ts;
    }

    std::vector<std::pair<std::string, Tensor>> named_base_tensors() const {
        std::vector<std::pair<std::string, Tensor>> ts;
        ts.emplace_back("tok_emb", tok_emb);
        ts.emplace_back("pos_emb", pos_emb);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            const LayerWeights& lw = layers[l];
            ts.emplace_back(p + "ln1_g", lw.ln1_g);
            ts.emplace_back(p + "ln1_b", lw.ln1_b);
            ts.emplace_back(p + "wq", lw.wq);
            ts.emplace_back(p + "wk", lw.wk);
            ts.emplace_back(p + "wv", lw.wv);
            ts.emplace_back(p + "wo", lw.wo);
            ts.emplace_back(p + "ln2_g", lw.ln2_g);
            ts.emplace_back(p + "ln2_b", lw.ln2_b);
            ts.emplace_back(p + "fc_w", lw.fc_w);
            ts.emplace_back(p + "proj_w", lw.proj_w);
        }
        ts.emplace_back("lnf_g", lnf_g);
        ts.emplace_back("lnf_b", lnf_b);
        ts.emplace_back("out_w", out_w);
        return ts;
    }

    std::vector<std::pair<std::string, Tensor>> named_adapter_tensors() const {
        std::vector<std::pair<std::string, Tensor>> ts;
        for (size_t l = 0; l < adapters.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".adapter.";
            const LayerAdapters& la = adapters[l];
            ts.emplace_back(p + "q_down", la.q.down);
            ts.emplace_back(p + "q_up", la.q.up);
            ts.emplace_back(p + "v_down", la.v.down);
            ts.emplace_back(p + "v_up", la.v.up);
        }
        return ts;
    }

    void set_base_trainable(bool on) {
        for (auto& [name, t] : named_base_tensors()) {
            (void)name;
            t.node()->requires_grad = on;
        }
    }

    std::vector<Tensor> base_parameters() const {
        std::vector<Tensor> ts;
        for (auto& [name, t] : named_base_tensors()) {
            (void)name;
            ts.push_back(t);
        }
        return ts;
    }

    uint64_t base_checksum() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& [name, t] : named_base_tensors()) {
            h = fnv1a64(name.data(), name.size(), h);
            h = fnv1a64(t.data(), h);
        }
        return h;
    }

    void save(const std::string& path) const;
    static ModelState load(const std::string& path);

    // Re-captures the adapter snapshot from current values (used after
    // pretraining produces the deployable base state).
    void recapture_adapter_snapshot() {
        adapter_snapshot_.clear();
        for (const Tensor& t : adapter_tensors()) adapter_snapshot_.push_back(t.data());
    }

private:
    std::vector<std::vector<double>> adapter_snapshot_;

    void init_adapters(Rng& rng) {
        adapters.clear();
        for (int l = 0; l < config.layers; ++l) {
            LayerAdapters la;
            la.q.down = Tensor::randn({config.dim, config.lora_rank}, rng, 0.02).mark_trainable();
            la.q.up = Tensor::zeros({config.lora_rank, config.dim}).mark_trainable();
            la.v.down = Tensor::randn({config.dim, config.lora_rank}, rng, 0.02).mark_trainable();
            la.v.up = Tensor::zeros({config.lora_rank, config.dim}).mark_trainable();
            adapters.push_back(std::move(la));
        }
        recapture_adapter_snapshot();
    }
};

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

// Logits for every position: row t predicts token t+1 given tokens <= t.
inline Tensor forward_logits(const ModelState& s, std::span<const int> ids, bool use_adapters = true,
                             ForwardProbe* probe = nullptr) {
    const LmConfig& cfg = s.config;
    const int n = static_cast<int>(ids.size());
    if (n < 1) throw DimensionError("forward_logits: empty context");
    if (n > cfg.max_context)
        throw ContextOverflowError("forward_logits: context length " + std::to_string(n) +
                                   " exceeds max_context " + std::to_string(cfg.max_context));
    for (int t : ids)
        if (t < 0 || t >= cfg.vocab) throw DimensionError("forward_logits: token out of range");

    std::vector<int> idv(ids.begin(), ids.end());
    Tensor x = add(embedding_lookup(s.tok_emb, idv), slice_rows(s.pos_emb, 0, n));

    const int dh = cfg.dim / cfg.heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < cfg.layers; ++l) {
        const LayerWeights& lw = s.layers[static_cast<size_t>(l)];
        Tensor h = layer_norm(x, lw.ln1_g, lw.ln1_b);
        Tensor q = matmul(h, lw.wq);
        Tensor k = matmul(h, lw.wk);
        Tensor v = matmul(h, lw.wv);
        if (use_adapters) {
            const LayerAdapters& la = s.adapters[static_cast<size_t>(l)];
            q = add(q, scale(matmul(matmul(h, la.q.down), la.q.up), cfg.lora_scale));
            v = add(v, scale(matmul(matmul(h, la.v.down), la.v.up), cfg.lora_scale));
        }
        if (probe) {
            probe->q.push_back(q);
            probe->k.push_back(k);
            probe->v.push_back(v);
        }
        std::vector<Tensor> head_ctx;
        head_ctx.reserve(static_cast<size_t>(cfg.heads));
        for (int hd = 0; hd < cfg.heads; ++hd) {
            Tensor qh = slice_cols(q, hd * dh, dh);
            Tensor kh = slice_cols(k, hd * dh, dh);
            Tensor vh = slice_cols(v, hd * dh, dh);
            Tensor att = causal_softmax(scale(matmul(qh, transpose(kh)), att_scale));
            head_ctx.push_back(matmul(att, vh));
        }
        x = add(x, matmul(concat_cols(head_ctx), lw.wo));
        Tensor h2 = layer_norm(x, lw.ln2_g, lw.ln2_b);
        x = add(x, matmul(gelu(matmul(h2, lw.fc_w)), lw.proj_w));
    }
    return matmul(layer_norm(x, s.lnf_g, s.lnf_b), s.out_w);
}

inline Tensor forward_logits(const ModelState& s, const TokenSeq& seq, bool use_adapters = true,
                             ForwardProbe* probe = nullptr) {
    return forward_logits(s, std::span<const int>(seq.ids), use_adapters, probe);
}

namespace detail {

inline int argmax_row(const Tensor& logits, int row) {
    const int v = logits.cols();
    const double* p = logits.data().data() + static_cast<size_t>(row) * v;
    int best = 0;
    for (int j = 1; j < v; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

// Shannon entropy in nats of softmax(logits row), computed via the
// stabilized log-softmax pathway.
inline double row_entropy_nats(const double* logits, int v) {
    double mx = logits[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(logits[j] - mx);
    const double lse = mx + std::log(z);
    double h = 0.0;
    for (int j = 0; j < v; ++j) {
        const double ls = logits[j] - lse;
        h -= std::exp(ls) * ls;
    }
    return h;
}

} // namespace detail

struct DecodeResult {
    TokenSeq seq;                  // generated tokens only
    int passes = 0;                // one full-context evaluation per token
    std::vector<double> entropies; // next-token entropy before committing each token
};

// Greedy decoding; deterministic, ties resolved toward the lower token id.
inline DecodeResult greedy_decode(const ModelState& s, const TokenSeq& x, int max_new, int stop_token,
                                  bool use_adapters = true) {
    if (max_new < 0) throw ConfigError("greedy_decode: max_new must be >= 0");
    NoGradGuard nograd;
    DecodeResult res;
    res.seq.role = TokenRole::response;
    std::vector<int> ctx = x.ids;
    for (int t = 0; t < max_new; ++t) {
        Tensor logits = forward_logits(s, std::span<const int>(ctx), use_adapters);
        ++res.passes;
        const int last = static_cast<int>(ctx.size()) - 1;
        res.entropies.push_back(
            detail::row_entropy_nats(logits.data().data() + static_cast<size_t>(last) * logits.cols(),
                                     logits.cols()));
        const int next = detail::argmax_row(logits, last);
        if (next == stop_token) break;
        res.seq.ids.push_back(next);
        ctx.push_back(next);
        if (static_cast<int>(ctx.size()) > s.config.max_context) break;
    }
    return res;
}

// Exactly k greedily decoded tokens; the adaptation-time prefix.
inline TokenSeq gen_prefix(const ModelState& s, const TokenSeq& x, int k, bool use_adapters = true) {
    if (k < 1) throw ConfigError("gen_prefix: k must be >= 1");
    NoGradGuard nograd;
    TokenSeq prefix;
    prefix.role = TokenRole::prefix;
    std::vector<int> ctx = x.ids;
    for (int t = 0; t < k; ++t) {
        Tensor logits = forward_logits(s, std::span<const int>(ctx), use_adapters);
        const int next = detail::argmax_row(logits, static_cast<int>(ctx.size()) - 1);
        prefix.ids.push_back(next);
        ctx.push_back(next);
    }
    return prefix;
}

// Base-model next-token logits along the prefix: row t is conditioned on
// (x, prefix_<t). Always computed with adapters disabled.
inline Tensor reference_logits(const ModelState& base, const TokenSeq& x, const TokenSeq& prefix) {
    NoGradGuard nograd;
    const int m = x.length();
    const int k = prefix.length();
    if (k < 1) throw DimensionError("reference_logits: empty prefix");
    std::vector<int> ctx = x.ids;
    ctx.insert(ctx.end(), prefix.ids.begin(), prefix.ids.end());
    Tensor logits = forward_logits(base, std::span<const int>(ctx), /*use_adapters=*/false);
    return slice_rows(logits, m - 1, k);
}

// Mean NLL (nats/token) of the m-1 predictable question positions.
inline double question_nll(const ModelState& s, const TokenSeq& x, bool use_adapters = true) {
    if (x.length() < 2) throw DimensionError("question_nll: need at least 2 tokens");
    NoGradGuard nograd;
    Tensor logits = forward_logits(s, x, use_adapters);
    std::vector<int> targets(x.ids.begin() + 1, x.ids.end());
    Tensor rows = slice_rows(logits, 0, x.length() - 1);
    return cross_entropy(rows, targets).item();
}

// ---------------------------------------------------------------------------
// checkpoint io: little-endian f64 arrays after a JSON header
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json config_to_json(const LmConfig& c) {
    return {{"vocab", c.vocab},       {"layers", c.layers},
            {"dim", c.dim},           {"heads", c.heads},
            {"max_context", c.max_context}, {"lora_rank", c.lora_rank},
            {"lora_scale", c.lora_scale}};
}

inline LmConfig config_from_json(const nlohmann::json& j) {
    LmConfig c;
    c.vocab = j.at("vocab").get<int>();
    c.layers = j.at("layers").get<int>();
    c.dim = j.at("dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.max_context = j.at("max_context").get<int>();
    c.lora_rank = j.at("lora_rank").get<int>();
    c.lora_scale = j.at("lora_scale").get<double>();
    return c;
}

} // namespace detail

inline void ModelState::save(const std::string& path) const {
    auto named = named_base_tensors();
    for (auto& nt : named_adapter_tensors()) named.push_back(nt);

    nlohmann::json header;
    header["config"] = detail::config_to_json(config);
    header["snapshot_id"] = snapshot_id;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, t] : named) tensors.push_back({{"name", name}, {"shape", t.shape()}});
    header["tensors"] = tensors;
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint for writing: " + path);
    const char magic[8] = {'S', 'Y', 'T', 'T', 'A', 'M', 'D', 'L'};
    f.write(magic, 8);
    const uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : named)
        f.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    if (!f) throw ConfigError("checkpoint write failed: " + path);
}

inline ModelState ModelState::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "SYTTAMDL", 8) != 0)
        throw ConfigError("not a sytta checkpoint: " + path);
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw ConfigError("truncated checkpoint header: " + path);
    nlohmann::json header = nlohmann::json::parse(hs);

    ModelState s = ModelState::init(detail::config_from_json(header.at("config")), 0);
    s.snapshot_id = header.at("snapshot_id").get<std::string>();

    std::vector<std::pair<std::string, Tensor>> named = s.named_base_tensors();
    for (auto& nt : s.named_adapter_tensors()) named.push_back(nt);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != named.size()) throw ConfigError("checkpoint tensor list mismatch");
    for (size_t i = 0; i < named.size(); ++i) {
        const auto& meta = tensors[i];
        if (meta.at("name").get<std::string>() != named[i].first)
            throw ConfigError("checkpoint tensor order mismatch at " + named[i].first);
        Tensor& t = named[i].second;
        f.read(reinterpret_cast<char*>(t.data().data()),
               static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    }
    if (!f) throw ConfigError("truncated checkpoint data: " + path);
    s.recapture_adapter_snapshot();
    return s;
}

} // namespace sytta
