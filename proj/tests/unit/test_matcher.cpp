#include "mmkg/matcher.hpp"
#include "oracles/margin_oracle.hpp"
#include "support/fd.hpp"
#include "support/instances.hpp"
#include "support/tmpdir.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace mmkg;
using matcher::MatcherParams;

namespace {

MatcherParams identity(std::size_t d, double delta = 0.2)
{
    MatcherParams p;
    p.W_e = Matrix::Identity(Eigen::Index(d), Eigen::Index(d));
    p.W_v = Matrix::Identity(Eigen::Index(d), Eigen::Index(d));
    p.delta = delta;
    return p;
}

matcher::MatchBatch random_batch(std::mt19937_64& rng, Eigen::Index B, Eigen::Index d_e, Eigen::Index d_v)
{
    matcher::MatchBatch b;
    b.entities = gaussian_matrix(B, d_e, 1.0, rng);
    b.images = gaussian_matrix(B, d_v, 1.0, rng);
    return b;
}

GraphNode node(std::string id, NodeKind k, std::vector<float> f) { return {std::move(id), k, "x", std::move(f), ""}; }

} // namespace

TEST(Similarity, IdenticalUnitVectors)
{
    Vector u = Vector::Zero(5);
    u[0] = 1;
    EXPECT_DOUBLE_EQ(matcher::similarity(u, u, identity(5)), 1.0);
}

TEST(Similarity, Orthogonal)
{
    EXPECT_DOUBLE_EQ(matcher::similarity(Vector::Unit(2, 0), Vector::Unit(2, 1), identity(2)), 0.0);
}

TEST(Similarity, ZeroProjectionGivesZero)
{
    std::mt19937_64 rng(1);
    auto p = MatcherParams::random(4, 6, 8, 0.2, 3);
    EXPECT_EQ(matcher::similarity(Vector::Zero(6), Vector::Ones(8), p), 0.0);
}

TEST(Similarity, MatchesHandComputedCosine)
{
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = MatcherParams::random(16, 16, 16, 0.2, 100 + trial);
        matcher::MatchBatch b = random_batch(rng, 1, 16, 16);
        double expect = oracle::cosine_loops(p.W_e, b.entities, 0, p.W_v, b.images, 0);
        double got = matcher::similarity(Vector(b.entities.row(0).transpose()), Vector(b.images.row(0).transpose()), p);
        EXPECT_NEAR(got, expect, 1e-6);
        EXPECT_LE(std::abs(got), 1.0 + 1e-12);
    }
}

TEST(Similarity, ScaleInvariant)
{
    std::mt19937_64 rng(5);
    auto p = MatcherParams::random(8, 6, 10, 0.2, 9);
    for (double alpha : {1e-3, 0.5, 2.0, 1e4}) {
        Vector e = gaussian_matrix(6, 1, 1.0, rng);
        Vector v = gaussian_matrix(10, 1, 1.0, rng);
        EXPECT_NEAR(matcher::similarity(Vector(alpha * e), v, p), matcher::similarity(e, v, p), 1e-12);
    }
}

TEST(Similarity, DimensionMismatch)
{
    EXPECT_THROW(matcher::similarity(Vector::Ones(3), Vector::Ones(4), identity(4)), DimensionError);
}

TEST(MarginLoss, InactiveHingeGivesZero)
{
    matcher::MatchBatch b;
    b.entities = Matrix::Identity(4, 4);
    b.images = Matrix::Identity(4, 4);
    auto r = matcher::margin_loss(b, identity(4, 0.2));
    EXPECT_EQ(r.loss, 0.0);
    EXPECT_EQ(r.grads.W_e.norm(), 0.0);
    EXPECT_EQ(r.grads.W_v.norm(), 0.0);
}

TEST(MarginLoss, WorkedArithmetic)
{
    // s00 = 0.5, s10 = 0.6, s01 = 0.4, s11 = 1: the first positive pays
    // (0.1 + 0.6 - 0.5) + (0.1 + 0.4 - 0.5) = 0.2, the second pays nothing.
    const double y = 0.4 / std::sqrt(0.75);
    const double z = std::sqrt(1.0 - 0.16 - y * y);
    matcher::MatchBatch b;
    b.entities.resize(2, 3);
    b.images.resize(2, 3);
    b.entities << 1, 0, 0, 0.4, y, z;
    b.images << 0.5, std::sqrt(0.75), 0, 0.4, y, z;
    auto r = matcher::margin_loss(b, identity(3, 0.1));
    EXPECT_NEAR(r.loss, 0.2 / 2, 1e-12);
    EXPECT_EQ(r.hardest_entity[0], 1);
    EXPECT_EQ(r.hardest_image[0], 1);
}

TEST(MarginLoss, BatchTooSmall)
{
    std::mt19937_64 rng(1);
    auto b = random_batch(rng, 1, 4, 4);
    EXPECT_THROW(matcher::margin_loss(b, identity(4)), BatchTooSmall);
}

TEST(MarginLoss, MatchesEnumerationOracle)
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        auto B = Eigen::Index(mmkg::testing::pick(rng, 2, 9));
        auto p = MatcherParams::random(8, 8, 8, 0.05 + 0.1 * (trial % 5), 1000 + trial);
        auto b = random_batch(rng, B, 8, 8);
        EXPECT_NEAR(matcher::margin_loss(b, p).loss, oracle::margin_loss_enumerated(b, p), 1e-9);
    }
}

TEST(MarginLoss, GradientsMatchFiniteDifferences)
{
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        auto p = MatcherParams::random(8, 8, 8, 0.5, 50 + trial);
        auto b = random_batch(rng, 6, 8, 8);
        auto r = matcher::margin_loss(b, p);
        auto rep = mmkg::testing::check_gradients(p, r.grads, [&](const MatcherParams& q) {
            return oracle::margin_loss_enumerated(b, q);
        });
        EXPECT_LE(rep.worst_rel, 1e-4) << rep.worst_tensor;
    }
}

TEST(MarginLoss, NonNegativeAndZeroExactlyWhenSeparated)
{
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        auto p = MatcherParams::random(4, 4, 4, std::uniform_real_distribution<>(0.01, 1.0)(rng), 2000 + trial);
        auto b = random_batch(rng, 4, 4, 4);
        double loss = matcher::margin_loss(b, p).loss;
        EXPECT_GE(loss, 0.0);
        bool separated = true;
        for (Eigen::Index i = 0; i < 4; ++i) {
            double pos = oracle::cosine_loops(p.W_e, b.entities, i, p.W_v, b.images, i);
            for (Eigen::Index j = 0; j < 4; ++j) {
                if (j != i) {
                    separated = separated &&
                                pos >= p.delta + oracle::cosine_loops(p.W_e, b.entities, j, p.W_v, b.images, i) &&
                                pos >= p.delta + oracle::cosine_loops(p.W_e, b.entities, i, p.W_v, b.images, j);
                }
            }
        }
        EXPECT_EQ(loss == 0.0, separated);
    }
}

TEST(MarginLoss, TiesGoToLowestIndex)
{
    // Rows 1 and 2 are identical negatives for positive 0.
    matcher::MatchBatch b;
    b.entities.resize(3, 2);
    b.images.resize(3, 2);
    b.entities << 1, 0, 0.6, 0.8, 0.6, 0.8;
    b.images << 0.8, 0.6, 0.6, 0.8, 0.6, 0.8;
    auto r = matcher::margin_loss(b, identity(2, 0.5));
    EXPECT_EQ(r.hardest_entity[0], 1);
    EXPECT_EQ(r.hardest_image[0], 1);
}

TEST(MatchEntities, NoVisualNodes)
{
    std::vector<GraphNode> text{node("t0", NodeKind::Head, {1, 0})};
    EXPECT_TRUE(matcher::match_entities(text, {}, identity(2)).empty());
}

TEST(MatchEntities, StrictThresholdOnPrecomputedSims)
{
    const float c0 = float(std::sqrt(1 - 0.81 - 0.39 * 0.39));
    const float c1 = float(std::sqrt(1 - 0.41 * 0.41 - 0.04));
    std::vector<GraphNode> text{node("t0", NodeKind::Head, {0.9f, 0.39f, c0, 0}),
                                node("t1", NodeKind::Tail, {0.41f, -0.2f, 0, c1})};
    std::vector<GraphNode> vis{node("v0", NodeKind::Object, {1, 0, 0, 0}), node("v1", NodeKind::Face, {0, 1, 0, 0})};
    auto m = matcher::match_entities(text, vis, identity(4), 0.4);
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[0].text_node_id, "t0");
    EXPECT_EQ(m[0].visual_node_id, "v0");
    EXPECT_NEAR(m[0].sim, 0.9, 1e-6);
    EXPECT_EQ(m[1].text_node_id, "t1");
    EXPECT_EQ(m[1].visual_node_id, "v0");
    EXPECT_NEAR(m[1].sim, 0.41, 1e-6);

    // A pair sitting exactly on the threshold is excluded.
    auto at = matcher::match_entities(text, vis, identity(4), m[1].sim);
    ASSERT_EQ(at.size(), 1u);
    EXPECT_EQ(at[0].text_node_id, "t0");
}

TEST(MatchEntities, MissingEmbeddingsAndEntitiesOnly)
{
    std::vector<GraphNode> text{node("t0", NodeKind::Head, {}), node("r0", NodeKind::Relation, {1, 0})};
    std::vector<GraphNode> vis{node("v0", NodeKind::Object, {1, 0})};
    auto all = matcher::match_entities(text, vis, identity(2));
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0].text_node_id, "r0");
    EXPECT_TRUE(matcher::match_entities(text, vis, identity(2), 0.4, true).empty());
}

TEST(MatchEntities, EqualsAllPairsFilterAndIgnoresOrder)
{
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = MatcherParams::random(6, 5, 7, 0.2, 300 + trial);
        std::vector<GraphNode> text, vis;
        for (int i = 0; i < 10; ++i) {
            text.push_back(node("t" + std::to_string(i), NodeKind::Head, mmkg::testing::random_floats(5, rng)));
            vis.push_back(node("v" + std::to_string(i), NodeKind::Object, mmkg::testing::random_floats(7, rng)));
        }
        std::vector<std::tuple<std::string, std::string>> expect;
        for (const auto& t : text) {
            for (const auto& v : vis) {
                Matrix e = stack_rows({t.feature}, 5), im = stack_rows({v.feature}, 7);
                if (oracle::cosine_loops(p.W_e, e, 0, p.W_v, im, 0) > 0.4) {
                    expect.emplace_back(t.node_id, v.node_id);
                }
            }
        }
        std::sort(expect.begin(), expect.end());
        auto got = matcher::match_entities(text, vis, p, 0.4);
        std::vector<std::tuple<std::string, std::string>> pairs;
        for (const auto& m : got) {
            pairs.emplace_back(m.text_node_id, m.visual_node_id);
        }
        EXPECT_EQ(pairs, expect);

        std::shuffle(text.begin(), text.end(), rng);
        std::shuffle(vis.begin(), vis.end(), rng);
        EXPECT_EQ(matcher::match_entities(text, vis, p, 0.4), got);
    }
}

TEST(MatchEntities, RejectsBadThresholdAndDims)
{
    std::vector<GraphNode> text{node("t0", NodeKind::Head, {1, 0, 0})};
    std::vector<GraphNode> vis{node("v0", NodeKind::Object, {1, 0})};
    EXPECT_THROW(matcher::match_entities(text, vis, identity(2)), DimensionError);
    EXPECT_THROW(matcher::match_entities({}, {}, identity(2), 1.0), ConfigError);
}

namespace {

matcher::TrainConfig quick_config(std::size_t epochs)
{
    matcher::TrainConfig c;
    c.d = 16;
    c.epochs = epochs;
    c.seed = 21;
    c.optim.batch_size = 8;
    c.optim.base_lr = 1e-2;
    c.optim.init_lr = 1e-4;
    c.optim.warmup_steps = 5;
    c.optim.clip_norm = 1.0;
    return c;
}

kb::KnowledgeBase small_kb()
{
    kb::SynthConfig s;
    s.entities = 40;
    return kb::synth_kb(s);
}

} // namespace

TEST(TrainMatcher, ZeroEpochsReturnsInitialization)
{
    auto base = small_kb();
    auto r = matcher::train_matcher(base, {}, quick_config(0));
    auto init = MatcherParams::random(16, 16, 32, 0.2, 21);
    EXPECT_EQ(r.params.W_e, init.W_e);
    EXPECT_EQ(r.params.W_v, init.W_v);
    EXPECT_EQ(r.log.size(), 1u);
}

TEST(TrainMatcher, BitIdenticalAcrossRuns)
{
    auto base = small_kb();
    auto a = matcher::train_matcher(base, {}, quick_config(4));
    auto b = matcher::train_matcher(base, {}, quick_config(4));
    EXPECT_EQ(a.params.W_e, b.params.W_e);
    EXPECT_EQ(a.params.W_v, b.params.W_v);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].mean_loss, b.log[i].mean_loss);
        EXPECT_EQ(a.log[i].val_recall_at_1, b.log[i].val_recall_at_1);
    }
}

TEST(TrainMatcher, LossDecreasesAndBestIsKept)
{
    auto base = small_kb();
    auto r = matcher::train_matcher(base, {}, quick_config(15));
    EXPECT_LT(r.log.back().mean_loss, r.log[1].mean_loss);
    for (const auto& e : r.log) {
        EXPECT_LE(e.val_recall_at_1, r.best_recall_at_1);
    }
    EXPECT_DOUBLE_EQ(matcher::recall_at_1(base, r.params), r.best_recall_at_1);
}

TEST(TrainMatcher, CheckpointRoundTrip)
{
    mmkg::testing::TempDir dir;
    auto p = MatcherParams::random(4, 5, 6, 0.3, 8);
    matcher::save_checkpoint(dir / "m.ckpt", p, 8);
    auto c = matcher::load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(c.seed, 8u);
    EXPECT_EQ(c.params.delta, 0.3);
    EXPECT_EQ(c.params.W_e, p.W_e.cast<float>().cast<double>().eval());
    EXPECT_EQ(c.params.W_v, p.W_v.cast<float>().cast<double>().eval());
}
