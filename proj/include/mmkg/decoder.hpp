#pragma once
// Transformer caption decoder over the memory X_0 = [X^T; X^I; X^G].
// Pre-norm layers: causal self-attention, cross-attention over memory,
// ReLU feed-forward. Learned absolute positions on the caption prefix and on
// article rows; every memory row also gets its segment embedding.

#include "mmkg/autodiff.hpp"
#include "mmkg/errors.hpp"
#include "mmkg/gat.hpp"
#include "mmkg/graph.hpp"
#include "mmkg/search.hpp"
#include "mmkg/tensor.hpp"
#include "mmkg/types.hpp"
#include "mmkg/vocab.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mmkg::decoder {

enum class Ablation { Full, WithoutGraph, ImageSubgraphOnly, TextSubgraphOnly };

inline constexpr std::array<const char*, 4> kAblationNames{"full", "no-graph", "image-sg", "text-sg"};

inline const char* ablation_name(Ablation a) { return kAblationNames[std::size_t(a)]; }

inline Ablation parse_ablation(const std::string& s)
{
    for (std::size_t i = 0; i < kAblationNames.size(); ++i) {
        if (s == kAblationNames[i]) {
            return static_cast<Ablation>(i);
        }
    }
    throw ConfigError("unknown ablation '" + s + "' (expected full, no-graph, image-sg or text-sg)");
}

enum Segment : int { kTextSegment = 0, kImageSegment = 1, kGraphSegment = 2 };

struct DecoderConfig {
    std::size_t vocab_size = 4;
    std::size_t d_model = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_ff = 128;
    std::size_t d_e = 1024;
    std::size_t d_v = 2048;
    std::size_t max_article_len = 512;
    std::size_t max_caption_len = 50;

    void validate() const
    {
        if (layers == 0) {
            throw ConfigError("decoder needs at least one layer");
        }
        if (heads == 0 || d_model % heads != 0) {
            throw ConfigError("decoder d_model must be divisible by the head count");
        }
        if (vocab_size < 4) {
            throw ConfigError("vocabulary must hold the four reserved tokens");
        }
    }
};

inline nlohmann::json to_json(const DecoderConfig& c)
{
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"layers", c.layers},
            {"heads", c.heads},           {"d_ff", c.d_ff},       {"d_e", c.d_e},
            {"d_v", c.d_v},               {"max_article_len", c.max_article_len},
            {"max_caption_len", c.max_caption_len}};
}

inline DecoderConfig decoder_config_from_json(const nlohmann::json& j)
{
    DecoderConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.d_e = j.at("d_e").get<std::size_t>();
    c.d_v = j.at("d_v").get<std::size_t>();
    c.max_article_len = j.at("max_article_len").get<std::size_t>();
    c.max_caption_len = j.at("max_caption_len").get<std::size_t>();
    return c;
}

struct DecoderLayer {
    Matrix ln1_g, ln1_b, Wq, Wk, Wv, Wo;
    Matrix ln2_g, ln2_b, Cq, Ck, Cv, Co;
    Matrix ln3_g, ln3_b, W1, b1, W2, b2;

    template <class Self, class F>
    static void visit(Self& s, F& f, const std::string& prefix)
    {
        f(prefix + "ln1_g", s.ln1_g);
        f(prefix + "ln1_b", s.ln1_b);
        f(prefix + "Wq", s.Wq);
        f(prefix + "Wk", s.Wk);
        f(prefix + "Wv", s.Wv);
        f(prefix + "Wo", s.Wo);
        f(prefix + "ln2_g", s.ln2_g);
        f(prefix + "ln2_b", s.ln2_b);
        f(prefix + "Cq", s.Cq);
        f(prefix + "Ck", s.Ck);
        f(prefix + "Cv", s.Cv);
        f(prefix + "Co", s.Co);
        f(prefix + "ln3_g", s.ln3_g);
        f(prefix + "ln3_b", s.ln3_b);
        f(prefix + "W1", s.W1);
        f(prefix + "b1", s.b1);
        f(prefix + "W2", s.W2);
        f(prefix + "b2", s.b2);
    }
};

struct DecoderParams {
    Matrix tok_emb;    // V x d
    Matrix pos_emb;    // (max_caption_len + 1) x d
    Matrix text_proj;  // d x d_e
    Matrix text_pos;   // max_article_len x d
    Matrix image_proj; // d x d_v, applied to X^I rows
    Matrix node_proj;  // d x d_v, raw object/face rows (image-subgraph ablation)
    Matrix seg_emb;    // 3 x d
    std::vector<DecoderLayer> layers;
    Matrix lnf_g, lnf_b;
    Matrix W_out; // V x d
    Matrix b_out; // 1 x V
    std::size_t heads = 4;

    std::size_t vocab_size() const { return std::size_t(W_out.rows()); }
    std::size_t d_model() const { return std::size_t(tok_emb.cols()); }
    std::size_t max_positions() const { return std::size_t(pos_emb.rows()); }

    template <class F>
    void for_each(F&& f)
    {
        visit(*this, f);
    }
    template <class F>
    void for_each(F&& f) const
    {
        visit(*this, f);
    }

    static DecoderParams random(const DecoderConfig& c, std::uint64_t seed)
    {
        c.validate();
        std::mt19937_64 rng(seed);
        const auto d = Eigen::Index(c.d_model);
        auto glorot = [&](std::size_t out, std::size_t in) {
            return gaussian_matrix(Eigen::Index(out), Eigen::Index(in), std::sqrt(2.0 / double(in + out)), rng);
        };
        auto ones = [&] { return Matrix::Ones(1, d); };
        auto zeros = [&] { return Matrix::Zero(1, d); };
        DecoderParams p;
        p.heads = c.heads;
        p.tok_emb = gaussian_matrix(Eigen::Index(c.vocab_size), d, 0.1, rng);
        p.pos_emb = gaussian_matrix(Eigen::Index(c.max_caption_len + 1), d, 0.1, rng);
        p.text_proj = glorot(c.d_model, c.d_e);
        p.text_pos = gaussian_matrix(Eigen::Index(c.max_article_len), d, 0.1, rng);
        p.image_proj = glorot(c.d_model, c.d_v);
        p.node_proj = glorot(c.d_model, c.d_v);
        p.seg_emb = gaussian_matrix(3, d, 0.1, rng);
        for (std::size_t l = 0; l < c.layers; ++l) {
            DecoderLayer L;
            L.ln1_g = ones();
            L.ln1_b = zeros();
            L.Wq = glorot(c.d_model, c.d_model);
            L.Wk = glorot(c.d_model, c.d_model);
            L.Wv = glorot(c.d_model, c.d_model);
            L.Wo = glorot(c.d_model, c.d_model);
            L.ln2_g = ones();
            L.ln2_b = zeros();
            L.Cq = glorot(c.d_model, c.d_model);
            L.Ck = glorot(c.d_model, c.d_model);
            L.Cv = glorot(c.d_model, c.d_model);
            L.Co = glorot(c.d_model, c.d_model);
            L.ln3_g = ones();
            L.ln3_b = zeros();
            L.W1 = glorot(c.d_ff, c.d_model);
            L.b1 = Matrix::Zero(1, Eigen::Index(c.d_ff));
            L.W2 = glorot(c.d_model, c.d_ff);
            L.b2 = zeros();
            p.layers.push_back(std::move(L));
        }
        p.lnf_g = ones();
        p.lnf_b = zeros();
        p.W_out = glorot(c.vocab_size, c.d_model);
        p.b_out = Matrix::Zero(1, Eigen::Index(c.vocab_size));
        return p;
    }

private:
    template <class Self, class F>
    static void visit(Self& s, F& f)
    {
        f("dec.tok_emb", s.tok_emb);
        f("dec.pos_emb", s.pos_emb);
        f("dec.text_proj", s.text_proj);
        f("dec.text_pos", s.text_pos);
        f("dec.image_proj", s.image_proj);
        f("dec.node_proj", s.node_proj);
        f("dec.seg_emb", s.seg_emb);
        for (std::size_t l = 0; l < s.layers.size(); ++l) {
            DecoderLayer::visit(s.layers[l], f, "dec.layer" + std::to_string(l) + ".");
        }
        f("dec.lnf_g", s.lnf_g);
        f("dec.lnf_b", s.lnf_b);
        f("dec.W_out", s.W_out);
        f("dec.b_out", s.b_out);
    }
};

// GAT and decoder trained jointly.
struct CaptionerParams {
    gat::GatParams gat;
    DecoderParams decoder;

    template <class F>
    void for_each(F&& f)
    {
        gat.for_each(f);
        decoder.for_each(f);
    }
    template <class F>
    void for_each(F&& f) const
    {
        gat.for_each(f);
        decoder.for_each(f);
    }
};

// One sample's inputs to the memory: article token features (L_T x d_e),
// global image features (R x d_v) and its multi-modal graph.
struct CaptionInput {
    Matrix article;
    Matrix image;
    MultiModalGraph graph;
};

struct Memory {
    Matrix rows;
    std::vector<int> tags; // Segment per row

    std::size_t size() const { return std::size_t(rows.rows()); }
    std::array<std::size_t, 3> segment_sizes() const
    {
        std::array<std::size_t, 3> s{0, 0, 0};
        for (int t : tags) {
            ++s[std::size_t(t)];
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Tape-level model

namespace detail {

template <ParameterSet P>
ad::Var multi_head_attention(ad::Binder<P>& bind, const Matrix& Wq, const Matrix& Wk, const Matrix& Wv,
                             const Matrix& Wo, ad::Var q_in, ad::Var kv_in, const ad::Mask& mask, std::size_t heads)
{
    ad::Tape& t = bind.tape();
    ad::Var q = ad::matmul_nt(t, q_in, bind(Wq));
    ad::Var k = ad::matmul_nt(t, kv_in, bind(Wk));
    ad::Var v = ad::matmul_nt(t, kv_in, bind(Wv));
    const Eigen::Index dh = Wq.rows() / Eigen::Index(heads);
    const double scale = 1.0 / std::sqrt(double(dh));
    std::vector<ad::Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        const Eigen::Index c0 = Eigen::Index(h) * dh;
        ad::Var qh = ad::slice_cols(t, q, c0, dh);
        ad::Var kh = ad::slice_cols(t, k, c0, dh);
        ad::Var vh = ad::slice_cols(t, v, c0, dh);
        ad::Var s = ad::scale(t, ad::matmul_nt(t, qh, kh), scale);
        outs.push_back(ad::matmul(t, ad::masked_softmax_rows(t, s, mask), vh));
    }
    ad::Var cat = outs.size() == 1 ? outs[0] : ad::concat_cols(t, outs);
    return ad::matmul_nt(t, cat, bind(Wo));
}

inline ad::Mask causal_mask(Eigen::Index n)
{
    ad::Mask m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            m(i, j) = j <= i;
        }
    }
    return m;
}

inline void check_prefix(const DecoderParams& p, std::span<const int> prefix)
{
    if (prefix.empty()) {
        throw LengthError("decoder prefix must start with BOS");
    }
    if (prefix.size() > p.max_positions()) {
        throw LengthError("prefix of " + std::to_string(prefix.size()) + " tokens exceeds " +
                          std::to_string(p.max_positions()) + " positions");
    }
    for (int id : prefix) {
        if (id < 0 || std::size_t(id) >= p.vocab_size()) {
            throw UnknownTokenId("token id " + std::to_string(id) + " outside vocabulary of " +
                                 std::to_string(p.vocab_size()));
        }
    }
}

} // namespace detail

// Logits (T x V) for every prefix position.
template <ParameterSet P>
ad::Var decoder_logits(ad::Binder<P>& bind, const DecoderParams& p, ad::Var memory, std::span<const int> prefix)
{
    detail::check_prefix(p, prefix);
    ad::Tape& t = bind.tape();
    const auto T = Eigen::Index(prefix.size());
    const Eigen::Index M = t.value(memory).rows();
    if (M == 0) {
        throw EmptyMemory("decoder memory has no rows");
    }
    if (t.value(memory).cols() != Eigen::Index(p.d_model())) {
        throw DimensionError("memory width " + std::to_string(t.value(memory).cols()) + " differs from d_model " +
                             std::to_string(p.d_model()));
    }
    ad::Var x = ad::add(t, ad::gather_rows(t, bind(p.tok_emb), prefix), ad::slice_rows(t, bind(p.pos_emb), 0, T));
    const ad::Mask self_mask = detail::causal_mask(T);
    const ad::Mask cross_mask = ad::Mask::Constant(T, M, true);
    for (const DecoderLayer& L : p.layers) {
        ad::Var h = ad::layer_norm_rows(t, x, bind(L.ln1_g), bind(L.ln1_b));
        x = ad::add(t, x, detail::multi_head_attention(bind, L.Wq, L.Wk, L.Wv, L.Wo, h, h, self_mask, p.heads));
        h = ad::layer_norm_rows(t, x, bind(L.ln2_g), bind(L.ln2_b));
        x = ad::add(t, x, detail::multi_head_attention(bind, L.Cq, L.Ck, L.Cv, L.Co, h, memory, cross_mask, p.heads));
        h = ad::layer_norm_rows(t, x, bind(L.ln3_g), bind(L.ln3_b));
        ad::Var f = ad::relu(t, ad::add_row(t, ad::matmul_nt(t, h, bind(L.W1)), bind(L.b1)));
        x = ad::add(t, x, ad::add_row(t, ad::matmul_nt(t, f, bind(L.W2)), bind(L.b2)));
    }
    x = ad::layer_norm_rows(t, x, bind(p.lnf_g), bind(p.lnf_b));
    return ad::add_row(t, ad::matmul_nt(t, x, bind(p.W_out)), bind(p.b_out));
}

// Rows of the graph segment under an ablation, on the tape. Returns an
// invalid Var when the segment is empty.
template <ParameterSet P>
ad::Var graph_segment(ad::Binder<P>& bind, const CaptionerParams& p, const MultiModalGraph& g, Ablation ablation,
                      bool add_reverse_edges)
{
    ad::Tape& t = bind.tape();
    switch (ablation) {
    case Ablation::WithoutGraph:
        return {};
    case Ablation::ImageSubgraphOnly: {
        std::vector<std::vector<float>> rows;
        for (const auto& n : g.nodes) {
            if (is_visual_kind(n.kind)) {
                rows.push_back(n.feature);
            }
        }
        if (rows.empty()) {
            return {};
        }
        Matrix raw = stack_rows(rows, std::size_t(p.decoder.node_proj.cols()));
        return ad::matmul_nt(t, t.constant(std::move(raw)), bind(p.decoder.node_proj));
    }
    case Ablation::TextSubgraphOnly: {
        MultiModalGraph text = graph::induced_subgraph(g, [](const GraphNode& n) { return is_text_kind(n.kind); });
        if (text.nodes.empty()) {
            return {};
        }
        return gat::encode(bind, p.gat, gat::prepare_input(text, p.gat, add_reverse_edges));
    }
    case Ablation::Full:
        break;
    }
    if (g.nodes.empty()) {
        return {};
    }
    return gat::encode(bind, p.gat, gat::prepare_input(g, p.gat, add_reverse_edges));
}

// Memory rows [text; image; graph] with segment embeddings added. Fills
// `tags` with the segment of each row.
template <ParameterSet P>
ad::Var build_memory(ad::Binder<P>& bind, const CaptionerParams& p, const CaptionInput& in, Ablation ablation,
                     std::vector<int>* tags = nullptr, bool add_reverse_edges = false)
{
    ad::Tape& t = bind.tape();
    const DecoderParams& d = p.decoder;
    std::vector<ad::Var> parts;
    std::vector<int> tg;
    ad::Var seg = bind(d.seg_emb);
    auto with_segment = [&](ad::Var rows, int s) {
        tg.insert(tg.end(), std::size_t(t.value(rows).rows()), s);
        parts.push_back(ad::add_row(t, rows, ad::slice_rows(t, seg, s, 1)));
    };
    if (in.article.rows() > 0) {
        if (in.article.cols() != d.text_proj.cols()) {
            throw DimensionError("article features have width " + std::to_string(in.article.cols()) + ", expected " +
                                 std::to_string(d.text_proj.cols()));
        }
        if (in.article.rows() > d.text_pos.rows()) {
            throw DimensionError("article has " + std::to_string(in.article.rows()) + " rows, limit " +
                                 std::to_string(d.text_pos.rows()));
        }
        ad::Var rows = ad::matmul_nt(t, t.constant(in.article), bind(d.text_proj));
        rows = ad::add(t, rows, ad::slice_rows(t, bind(d.text_pos), 0, in.article.rows()));
        with_segment(rows, kTextSegment);
    }
    if (in.image.rows() > 0) {
        if (in.image.cols() != d.image_proj.cols()) {
            throw DimensionError("image features have width " + std::to_string(in.image.cols()) + ", expected " +
                                 std::to_string(d.image_proj.cols()));
        }
        with_segment(ad::matmul_nt(t, t.constant(in.image), bind(d.image_proj)), kImageSegment);
    }
    ad::Var g = graph_segment(bind, p, in.graph, ablation, add_reverse_edges);
    if (g.valid()) {
        if (t.value(g).cols() != Eigen::Index(d.d_model())) {
            throw DimensionError("graph encodings have width " + std::to_string(t.value(g).cols()) +
                                 ", decoder expects " + std::to_string(d.d_model()));
        }
        with_segment(g, kGraphSegment);
    }
    if (parts.empty()) {
        throw EmptyMemory("article, image and graph segments are all empty");
    }
    if (tags) {
        *tags = std::move(tg);
    }
    return parts.size() == 1 ? parts[0] : ad::concat_rows(t, parts);
}

// Teacher-forced negative log-likelihood of `gold` (prefix BOS + gold[:-1]).
// PAD targets are skipped. A trailing EOS does not count towards the
// caption-length limit.
template <ParameterSet P>
ad::Var caption_nll(ad::Binder<P>& bind, const DecoderParams& p, ad::Var memory, std::span<const int> gold,
                    std::size_t max_caption_len)
{
    std::size_t len = gold.size();
    if (len > 0 && gold.back() == Vocabulary::kEos) {
        --len;
    }
    if (len > max_caption_len) {
        throw LengthError("caption of " + std::to_string(len) + " tokens exceeds the limit of " +
                          std::to_string(max_caption_len));
    }
    if (gold.empty()) {
        return bind.tape().constant(Matrix::Zero(1, 1));
    }
    std::vector<int> prefix{Vocabulary::kBos};
    prefix.insert(prefix.end(), gold.begin(), gold.end() - 1);
    std::vector<int> targets(gold.begin(), gold.end());
    for (int& tgt : targets) {
        if (tgt == Vocabulary::kPad) {
            tgt = -1;
        }
    }
    ad::Var logits = decoder_logits(bind, p, memory, prefix);
    return ad::softmax_nll(bind.tape(), logits, targets);
}

// ---------------------------------------------------------------------------
// Value-level API

inline Memory assemble_memory(const CaptionerParams& p, const CaptionInput& in, Ablation ablation,
                              bool add_reverse_edges = false)
{
    ad::Tape t;
    ad::Binder<CaptionerParams> bind(t, p, nullptr);
    Memory m;
    ad::Var v = build_memory(bind, p, in, ablation, &m.tags, add_reverse_edges);
    m.rows = t.value(v);
    return m;
}

inline Matrix decoder_logits(const DecoderParams& p, const Matrix& memory, std::span<const int> prefix)
{
    ad::Tape t;
    ad::Binder<DecoderParams> bind(t, p, nullptr);
    return t.value(decoder_logits(bind, p, t.constant(memory), prefix));
}

inline Vector log_softmax(const Vector& logits)
{
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return (logits.array() - lse).matrix();
}

// Next-token log-probabilities after `prefix`.
inline Vector decoder_log_step(const DecoderParams& p, const Matrix& memory, std::span<const int> prefix)
{
    Matrix logits = decoder_logits(p, memory, prefix);
    return log_softmax(logits.row(logits.rows() - 1).transpose());
}

inline Vector decoder_step(const Matrix& memory, std::span<const int> prefix, const DecoderParams& p)
{
    return decoder_log_step(p, memory, prefix).array().exp().matrix();
}

struct CaptionLoss {
    double loss = 0.0;
    DecoderParams grads;
    Matrix memory_grad;
};

inline CaptionLoss caption_loss(const Matrix& memory, std::span<const int> gold, const DecoderParams& p,
                                std::size_t max_caption_len = 50)
{
    CaptionLoss r{0.0, zeros_like(p), Matrix::Zero(memory.rows(), memory.cols())};
    ad::Tape t;
    ad::Binder<DecoderParams> bind(t, p, &r.grads);
    ad::Var mem = t.constant(memory);
    ad::Var loss = caption_nll(bind, p, mem, gold, max_caption_len);
    r.loss = t.value(loss)(0, 0);
    t.backward(loss);
    r.memory_grad = t.grad(mem);
    return r;
}

struct JointLoss {
    double loss = 0.0;
    CaptionerParams grads;
};

// Loss through memory assembly, so the GAT receives gradients too.
inline JointLoss caption_loss(const CaptionerParams& p, const CaptionInput& in, std::span<const int> gold,
                              Ablation ablation, std::size_t max_caption_len = 50)
{
    JointLoss r{0.0, zeros_like(p)};
    ad::Tape t;
    ad::Binder<CaptionerParams> bind(t, p, &r.grads);
    ad::Var mem = build_memory(bind, p, in, ablation);
    ad::Var loss = caption_nll(bind, p.decoder, mem, gold, max_caption_len);
    r.loss = t.value(loss)(0, 0);
    t.backward(loss);
    return r;
}

struct GenerateOptions {
    std::size_t beam = 1; // 1 = greedy
    std::size_t max_len = 50;
    double length_penalty = 0.0;
};

// Token ids after BOS, without the terminating EOS.
inline std::vector<int> generate(const Matrix& memory, const DecoderParams& p, const GenerateOptions& opt = {})
{
    if (opt.max_len > p.max_positions()) {
        throw LengthError("max_len " + std::to_string(opt.max_len) + " exceeds the decoder's position table");
    }
    auto step = [&](std::span<const int> prefix) { return decoder_log_step(p, memory, prefix); };
    if (opt.beam <= 1) {
        return search::greedy(step, Vocabulary::kBos, Vocabulary::kEos, opt.max_len).tokens;
    }
    return search::beam_search(step, Vocabulary::kBos, Vocabulary::kEos, opt.beam, opt.max_len, opt.length_penalty)
        .tokens;
}

} // namespace mmkg::decoder
