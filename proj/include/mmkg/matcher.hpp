#pragma once
// Cross-modal entity matching: linear projections of entity embeddings and
// visual features into a common space, cosine similarity there, and the
// bidirectional hardest-negative margin loss used to train the projections.

#include "mmkg/errors.hpp"
#include "mmkg/kb.hpp"
#include "mmkg/optim.hpp"
#include "mmkg/tensor.hpp"
#include "mmkg/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace mmkg::matcher {

struct MatcherParams {
    Matrix W_e; // d x d_e
    Matrix W_v; // d x d_v
    double delta = 0.2;

    std::size_t d() const { return static_cast<std::size_t>(W_e.rows()); }
    std::size_t d_e() const { return static_cast<std::size_t>(W_e.cols()); }
    std::size_t d_v() const { return static_cast<std::size_t>(W_v.cols()); }

    template <class F>
    void for_each(F&& f)
    {
        f("W_e", W_e);
        f("W_v", W_v);
    }
    template <class F>
    void for_each(F&& f) const
    {
        f("W_e", W_e);
        f("W_v", W_v);
    }

    static MatcherParams random(std::size_t d, std::size_t d_e, std::size_t d_v, double delta, std::uint64_t seed)
    {
        std::mt19937_64 rng(seed);
        MatcherParams p;
        p.W_e = gaussian_matrix(Eigen::Index(d), Eigen::Index(d_e), 1.0 / std::sqrt(double(d_e)), rng);
        p.W_v = gaussian_matrix(Eigen::Index(d), Eigen::Index(d_v), 1.0 / std::sqrt(double(d_v)), rng);
        p.delta = delta;
        return p;
    }
};

// Cosine of two vectors; 0 when either is the zero vector.
inline double cosine(const Vector& a, const Vector& b)
{
    double na = a.norm();
    double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return a.dot(b) / (na * nb);
}

inline double similarity(const Vector& entity_embedding, const Vector& image_feature, const MatcherParams& p)
{
    if (static_cast<std::size_t>(entity_embedding.size()) != p.d_e() ||
        static_cast<std::size_t>(image_feature.size()) != p.d_v()) {
        throw DimensionError("similarity: inputs of dimension (" + std::to_string(entity_embedding.size()) +
                             ", " + std::to_string(image_feature.size()) + ") do not match the projections (" +
                             std::to_string(p.d_e()) + ", " + std::to_string(p.d_v()) + ")");
    }
    return cosine(p.W_e * entity_embedding, p.W_v * image_feature);
}

inline double similarity(std::span<const float> e, std::span<const float> v, const MatcherParams& p)
{
    return similarity(to_vector(e), to_vector(v), p);
}

// Positive pairs: row i of `entities` belongs with row i of `images`.
// Every other row serves as an in-batch negative.
struct MatchBatch {
    Matrix entities; // B x d_e
    Matrix images;   // B x d_v

    Eigen::Index size() const { return entities.rows(); }
};

struct MarginLossResult {
    double loss = 0.0;
    MatcherParams grads; // delta unused
    // Realized hardest negatives per positive.
    std::vector<Eigen::Index> hardest_entity;
    std::vector<Eigen::Index> hardest_image;
};

// Mean over positives of
//   (delta + max_{e'} sim(e', v) - sim(e, v))_+ + (delta + max_{v'} sim(e, v') - sim(e, v))_+
// with gradients exact for the realized max selections. Ties among
// negatives go to the lowest batch index; a hinge argument of exactly 0
// contributes no gradient.
inline MarginLossResult margin_loss(const MatchBatch& batch, const MatcherParams& p)
{
    const Eigen::Index B = batch.size();
    if (B < 2) {
        throw BatchTooSmall("margin loss needs at least 2 pairs, got " + std::to_string(B));
    }
    if (batch.images.rows() != B || static_cast<std::size_t>(batch.entities.cols()) != p.d_e() ||
        static_cast<std::size_t>(batch.images.cols()) != p.d_v()) {
        throw DimensionError("margin loss: batch shape does not match the projections");
    }
    const Matrix P = batch.entities * p.W_e.transpose(); // B x d
    const Matrix Q = batch.images * p.W_v.transpose();   // B x d
    const Vector np = P.rowwise().norm();
    const Vector nq = Q.rowwise().norm();
    Matrix S = Matrix::Zero(B, B);
    for (Eigen::Index i = 0; i < B; ++i) {
        for (Eigen::Index j = 0; j < B; ++j) {
            if (np[i] > 0.0 && nq[j] > 0.0) {
                S(i, j) = P.row(i).dot(Q.row(j)) / (np[i] * nq[j]);
            }
        }
    }

    MarginLossResult out;
    out.hardest_entity.resize(std::size_t(B));
    out.hardest_image.resize(std::size_t(B));
    Matrix dS = Matrix::Zero(B, B);
    const double w = 1.0 / static_cast<double>(B);
    for (Eigen::Index i = 0; i < B; ++i) {
        Eigen::Index ke = -1;
        Eigen::Index kv = -1;
        for (Eigen::Index k = 0; k < B; ++k) {
            if (k == i) {
                continue;
            }
            if (ke < 0 || S(k, i) > S(ke, i)) {
                ke = k;
            }
            if (kv < 0 || S(i, k) > S(i, kv)) {
                kv = k;
            }
        }
        out.hardest_entity[std::size_t(i)] = ke;
        out.hardest_image[std::size_t(i)] = kv;
        double h_entity = p.delta + S(ke, i) - S(i, i);
        double h_image = p.delta + S(i, kv) - S(i, i);
        if (h_entity > 0.0) {
            out.loss += w * h_entity;
            dS(ke, i) += w;
            dS(i, i) -= w;
        }
        if (h_image > 0.0) {
            out.loss += w * h_image;
            dS(i, kv) += w;
            dS(i, i) -= w;
        }
    }

    Matrix dP = Matrix::Zero(B, P.cols());
    Matrix dQ = Matrix::Zero(B, Q.cols());
    for (Eigen::Index i = 0; i < B; ++i) {
        for (Eigen::Index j = 0; j < B; ++j) {
            if (dS(i, j) == 0.0 || np[i] == 0.0 || nq[j] == 0.0) {
                continue;
            }
            double g = dS(i, j);
            dP.row(i) += g * (Q.row(j) / (np[i] * nq[j]) - S(i, j) * P.row(i) / (np[i] * np[i]));
            dQ.row(j) += g * (P.row(i) / (np[i] * nq[j]) - S(i, j) * Q.row(j) / (nq[j] * nq[j]));
        }
    }
    out.grads.W_e = dP.transpose() * batch.entities;
    out.grads.W_v = dQ.transpose() * batch.images;
    out.grads.delta = p.delta;
    return out;
}

// Fraction of entities whose paired image ranks first among all images of
// the same base (ties resolved toward the lowest index).
inline double recall_at_1(const kb::KnowledgeBase& base, const MatcherParams& p)
{
    if (base.empty()) {
        return 0.0;
    }
    const auto n = static_cast<Eigen::Index>(base.size());
    Matrix P(n, Eigen::Index(p.d()));
    Matrix Q(n, Eigen::Index(p.d()));
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector pe = p.W_e * to_vector(base[std::size_t(i)].entity_embedding);
        Vector qv = p.W_v * to_vector(base[std::size_t(i)].image_feature);
        double a = pe.norm();
        double b = qv.norm();
        P.row(i) = (a > 0.0 ? Vector(pe / a) : Vector(Vector::Zero(pe.size()))).transpose();
        Q.row(i) = (b > 0.0 ? Vector(qv / b) : Vector(Vector::Zero(qv.size()))).transpose();
    }
    const Matrix S = P * Q.transpose();
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < n; ++j) {
            if (S(i, j) > S(i, best)) {
                best = j;
            }
        }
        hits += best == i ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

struct TrainConfig {
    std::size_t d = 512;
    double delta = 0.2;
    std::size_t epochs = 50;
    optim::OptimConfig optim;
    std::uint64_t seed = 0;
};

struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double val_recall_at_1 = 0.0;
};

struct TrainResult {
    MatcherParams params;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_recall_at_1 = 0.0;
};

inline MatchBatch make_batch(const kb::KnowledgeBase& base, std::span<const std::size_t> rows)
{
    MatchBatch b;
    const auto n = static_cast<Eigen::Index>(rows.size());
    b.entities.resize(n, static_cast<Eigen::Index>(base[rows[0]].entity_embedding.size()));
    b.images.resize(n, static_cast<Eigen::Index>(base[rows[0]].image_feature.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
        b.entities.row(i) = to_vector(base[rows[std::size_t(i)]].entity_embedding).transpose();
        b.images.row(i) = to_vector(base[rows[std::size_t(i)]].image_feature).transpose();
    }
    return b;
}

// Trains the projections with Adam on shuffled in-batch minibatches and
// returns the parameters with the best validation recall@1 (the
// initialization counts as epoch 0). A trailing batch of one pair is
// skipped. The learning-rate schedule is stretched over the planned number
// of steps. Selection falls back to the training base when no validation
// base is given.
inline TrainResult train_matcher(const kb::KnowledgeBase& train, const kb::KnowledgeBase& val, const TrainConfig& cfg)
{
    if (train.empty()) {
        throw ConfigError("train_matcher: empty training base");
    }
    if (cfg.optim.batch_size < 2) {
        throw BatchTooSmall("batch size must be at least 2");
    }
    const kb::KnowledgeBase& select_on = val.empty() ? train : val;
    const std::size_t d_e = train[0].entity_embedding.size();
    const std::size_t d_v = train[0].image_feature.size();

    TrainResult result;
    MatcherParams params = MatcherParams::random(cfg.d, d_e, d_v, cfg.delta, cfg.seed);
    result.params = params;
    result.best_recall_at_1 = recall_at_1(select_on, params);
    result.log.push_back({0, 0.0, result.best_recall_at_1});

    const std::size_t batch_size = cfg.optim.batch_size;
    std::size_t batches_per_epoch = train.size() / batch_size;
    if (train.size() % batch_size >= 2) {
        ++batches_per_epoch;
    }
    const long planned = static_cast<long>(batches_per_epoch * cfg.epochs);
    optim::OptimConfig oc = cfg.optim;
    if (planned > 0) {
        oc.total_steps = planned;
        oc.warmup_steps = std::min(oc.warmup_steps, planned - 1);
    }

    optim::AdamState<MatcherParams> state(params);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::size_t count = std::min(batch_size, order.size() - start);
            if (count < 2) {
                continue;
            }
            MatchBatch batch = make_batch(train, std::span(order).subspan(start, count));
            MarginLossResult r = margin_loss(batch, params);
            if (!std::isfinite(r.loss) || !all_finite(r.grads)) {
                throw DivergenceError("non-finite matcher loss at epoch " + std::to_string(epoch));
            }
            optim::clip_gradients(r.grads, oc.clip_norm);
            optim::adam_step(params, r.grads, state, optim::lr_at_step(step, oc), oc);
            ++step;
            loss_sum += r.loss;
            ++batches;
        }
        double recall = recall_at_1(select_on, params);
        result.log.push_back({epoch, batches ? loss_sum / double(batches) : 0.0, recall});
        if (recall > result.best_recall_at_1) {
            result.best_recall_at_1 = recall;
            result.best_epoch = epoch;
            result.params = params;
        }
    }
    return result;
}

struct Match {
    std::string text_node_id;
    std::string visual_node_id;
    double sim = 0.0;
    bool operator==(const Match&) const = default;
};

// All (text, visual) pairs with similarity strictly above `threshold`,
// sorted by (text_node_id, visual_node_id). Text nodes without an embedding
// never match; with `entities_only`, RELATION nodes are skipped.
inline std::vector<Match> match_entities(std::span<const GraphNode> text_nodes,
                                         std::span<const GraphNode> visual_nodes, const MatcherParams& p,
                                         double threshold = 0.4, bool entities_only = false)
{
    if (!(threshold > -1.0 && threshold < 1.0)) {
        throw ConfigError("threshold must lie in (-1, 1)");
    }
    std::vector<std::pair<std::string, Vector>> visual;
    for (const auto& v : visual_nodes) {
        if (v.feature.size() != p.d_v()) {
            throw DimensionError("visual node '" + v.node_id + "' has dimension " +
                                 std::to_string(v.feature.size()) + ", expected " + std::to_string(p.d_v()));
        }
        Vector q = p.W_v * to_vector(v.feature);
        visual.emplace_back(v.node_id, std::move(q));
    }
    std::vector<Match> out;
    for (const auto& t : text_nodes) {
        if (t.feature.empty() || (entities_only && t.kind == NodeKind::Relation)) {
            continue;
        }
        if (t.feature.size() != p.d_e()) {
            throw DimensionError("text node '" + t.node_id + "' has dimension " +
                                 std::to_string(t.feature.size()) + ", expected " + std::to_string(p.d_e()));
        }
        Vector pe = p.W_e * to_vector(t.feature);
        for (const auto& [vid, q] : visual) {
            double s = cosine(pe, q);
            if (s > threshold) {
                out.push_back({t.node_id, vid, s});
            }
        }
    }
    std::sort(out.begin(), out.end(), [](const Match& a, const Match& b) {
        return std::tie(a.text_node_id, a.visual_node_id) < std::tie(b.text_node_id, b.visual_node_id);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: {"header": {d, d_e, d_v, delta, seed}, "tensors": {W_e, W_v}}

struct Checkpoint {
    MatcherParams params;
    std::uint64_t seed = 0;
};

inline void save_checkpoint(const std::filesystem::path& path, const MatcherParams& p, std::uint64_t seed)
{
    nlohmann::json j{{"header", {{"d", p.d()}, {"d_e", p.d_e()}, {"d_v", p.d_v()}, {"delta", p.delta}, {"seed", seed}}},
                     {"tensors", tensor_io::encode_all(p)}};
    std::ofstream out(path);
    if (!out) {
        throw SchemaError("cannot write " + path.string());
    }
    out << j.dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw SchemaError("cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        const auto& h = j.at("header");
        Checkpoint c;
        auto d = h.at("d").get<Eigen::Index>();
        c.params.W_e = Matrix::Zero(d, h.at("d_e").get<Eigen::Index>());
        c.params.W_v = Matrix::Zero(d, h.at("d_v").get<Eigen::Index>());
        c.params.delta = h.at("delta").get<double>();
        c.seed = h.at("seed").get<std::uint64_t>();
        tensor_io::decode_all(c.params, j.at("tensors"));
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.filename().string() + ": " + e.what());
    }
}

} // namespace mmkg::matcher
