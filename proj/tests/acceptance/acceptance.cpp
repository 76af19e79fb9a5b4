// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "mmkg/captioner.hpp"
#include "mmkg/decoder.hpp"
#include "mmkg/gat.hpp"
#include "mmkg/graph.hpp"
#include "mmkg/matcher.hpp"
#include "mmkg/metrics.hpp"
#include "mmkg/optim.hpp"
#include "mmkg/pipeline.hpp"
#include "mmkg/search.hpp"
#include "mmkg/synth.hpp"
#include "oracles/decoder_reference.hpp"
#include "oracles/gat_reference.hpp"
#include "oracles/margin_oracle.hpp"
#include "oracles/text_graph_oracle.hpp"
#include "support/fd.hpp"
#include "support/instances.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <tuple>

using namespace mmkg;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects sub-check failures; the first few are reported.
struct Checks {
    int failed = 0;
    std::ostringstream notes;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            if (failed < 3) {
                notes << (failed ? "; " : "") << what;
            }
            ++failed;
        }
    }
    Outcome done(const std::string& summary) const
    {
        return {failed == 0, failed == 0 ? summary : std::to_string(failed) + " failure(s): " + notes.str()};
    }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome graph_oracle()
{
    auto t0 = Clock::now();
    std::mt19937_64 rng(1001);
    mmkg::testing::ArticleShape shape;
    shape.max_triples = 20;
    shape.max_chains = 5;
    Checks c;
    for (int i = 0; i < 1000; ++i) {
        auto a = mmkg::testing::random_article(rng, shape);
        c.require(graph::build_text_subgraph(a) == oracle::text_subgraph(a), "instance " + std::to_string(i));
    }
    double secs = seconds_since(t0);
    c.require(secs < 10.0, "runtime " + fmt("%.2f s", secs));
    return c.done("1000/1000 structural matches in " + fmt("%.2f s", secs));
}

Outcome threshold_linking()
{
    std::mt19937_64 rng(1002);
    Checks c;
    std::size_t edges = 0;
    for (int trial = 0; trial < 500; ++trial) {
        mmkg::testing::ArticleShape shape;
        shape.max_triples = 6;
        auto a = mmkg::testing::random_article(rng, shape);
        ImageAnnotations img;
        const std::size_t n_det = mmkg::testing::pick(rng, 0, 8);
        for (std::size_t k = 0; k < n_det; ++k) {
            bool face = mmkg::testing::coin(rng, 0.4);
            img.detections.push_back({face ? DetectionKind::Face : DetectionKind::Object,
                                      {1, 1, 2, 2},
                                      0.31 + 0.08 * double(k),
                                      face ? "face" : "car",
                                      mmkg::testing::random_floats(5, rng)});
        }
        auto p = matcher::MatcherParams::random(3, 4, 5, 0.2, 5000 + std::uint64_t(trial));
        auto text = graph::build_text_subgraph(a);
        auto vis = graph::build_image_subgraph(img);
        auto g = graph::build_mmkg(text, vis, p);

        std::set<std::pair<std::string, std::string>> got, expect;
        for (const auto& e : g.edges) {
            if (e.kind == EdgeKind::CrossModal) {
                got.emplace(e.src, e.dst);
            }
        }
        for (const auto& t : text.nodes) {
            for (const auto& v : vis.nodes) {
                if (t.feature.empty()) {
                    continue;
                }
                double s = oracle::cosine_loops(p.W_e, stack_rows({t.feature}, 4), 0, p.W_v, stack_rows({v.feature}, 5), 0);
                if (s > 0.4) {
                    expect.emplace(t.node_id, v.node_id);
                }
            }
        }
        edges += expect.size();
        c.require(got == expect, "instance " + std::to_string(trial));
    }
    return c.done("500 instances, " + std::to_string(edges) + " cross-modal edges, 0 discrepancies");
}

Outcome margin_loss_checks()
{
    std::mt19937_64 rng(1003);
    Checks c;
    double worst_abs = 0.0, worst_rel = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto B = Eigen::Index(mmkg::testing::pick(rng, 2, 6));
        matcher::MatchBatch b{gaussian_matrix(B, 8, 1.0, rng), gaussian_matrix(B, 8, 1.0, rng)};
        auto p = matcher::MatcherParams::random(8, 8, 8, 0.2, 6000 + std::uint64_t(trial));
        auto r = matcher::margin_loss(b, p);
        double diff = std::abs(r.loss - oracle::margin_loss_enumerated(b, p));
        worst_abs = std::max(worst_abs, diff);
        c.require(diff <= 1e-9, "loss mismatch " + fmt("%.3g", diff));
        auto rep = mmkg::testing::check_gradients(p, r.grads, [&](const matcher::MatcherParams& q) {
            return matcher::margin_loss(b, q).loss;
        });
        worst_rel = std::max(worst_rel, rep.worst_rel);
        c.require(rep.worst_rel <= 1e-4, "gradient " + rep.worst_tensor + " rel " + fmt("%.3g", rep.worst_rel) + " (analytic " +
                                                   fmt("%.3g", rep.worst_analytic) + ", numeric " +
                                                   fmt("%.3g", rep.worst_numeric) + ")");
    }
    return c.done("100 instances, |loss - enum| <= " + fmt("%.2g", worst_abs) + ", FD rel <= " + fmt("%.2g", worst_rel));
}

Outcome matcher_learning()
{
    auto t0 = Clock::now();
    auto base = kb::synth_kb({});
    auto [train, held] = kb::split_kb(base, 0.8, 3);
    matcher::TrainConfig cfg;
    cfg.d = 32;
    cfg.epochs = 50;
    cfg.seed = 3;
    cfg.optim.base_lr = 1e-2;
    cfg.optim.init_lr = 1e-4;
    cfg.optim.warmup_steps = 20;
    cfg.optim.batch_size = 16;
    cfg.optim.clip_norm = 1.0;
    auto r = matcher::train_matcher(train, held, cfg);
    double secs = seconds_since(t0);
    Checks c;
    c.require(r.best_recall_at_1 >= 0.95, "held-out recall@1 " + fmt("%.3f", r.best_recall_at_1));
    c.require(secs < 30.0, "runtime " + fmt("%.1f s", secs));
    return c.done("held-out recall@1 " + fmt("%.3f", r.best_recall_at_1) + " (" + std::to_string(held.size()) +
                  " entities, best epoch " + std::to_string(r.best_epoch) + ") in " + fmt("%.1f s", secs));
}

gat::GatConfig acc_gat(std::size_t heads)
{
    gat::GatConfig g;
    g.d_e = 5;
    g.d_v = 7;
    g.d_in = 6;
    g.d_model = 12;
    g.heads = heads;
    return g;
}

Outcome gat_checks()
{
    std::mt19937_64 rng(1004);
    Checks c;
    double worst_row = 0.0, worst_perm = 0.0, worst_ref = 0.0, worst_fd = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto p = gat::GatParams::random(acc_gat(1 + std::size_t(trial) % 3), 7000 + std::uint64_t(trial));
        const std::size_t nt = mmkg::testing::pick(rng, 0, 7), nv = mmkg::testing::pick(rng, 1, 6);
        auto g = mmkg::testing::random_graph(rng, nt, nv, 5, 7, 0.25);
        const bool reverse = trial % 2 == 1;
        auto in = gat::prepare_input(g, p, reverse);
        Matrix h0 = gat::project_inputs(g, p);
        for (const auto& alpha : gat::attention_coefficients(p.layer1, h0, in.neighbors, p.leaky_slope)) {
            worst_row = std::max(worst_row, (alpha.rowwise().sum().array() - 1.0).abs().maxCoeff());
        }
        Matrix h1 = gat::gat_forward_matrix(g, p, reverse);
        worst_ref = std::max(worst_ref, (h1 - oracle::reference_gat(g, p, reverse)).cwiseAbs().maxCoeff());

        std::vector<std::size_t> perm(g.nodes.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix y = gat::gat_forward_matrix(mmkg::testing::permuted(g, perm), p, reverse);
        for (std::size_t i = 0; i < perm.size(); ++i) {
            worst_perm = std::max(worst_perm, (y.row(Eigen::Index(i)) - h1.row(Eigen::Index(perm[i]))).cwiseAbs().maxCoeff());
        }
        if (trial % 10 == 0) {
            Matrix u = gaussian_matrix(h1.rows(), h1.cols(), 1.0, rng);
            auto rep = mmkg::testing::check_gradients(p, gat::gat_backward(g, p, u, reverse), [&](const gat::GatParams& q) {
                return gat::gat_forward_matrix(g, q, reverse).cwiseProduct(u).sum();
            });
            worst_fd = std::max(worst_fd, rep.worst_rel);
            c.require(rep.worst_rel <= 1e-4, "gradient " + rep.worst_tensor + " rel " + fmt("%.3g", rep.worst_rel) + " (analytic " +
                                                   fmt("%.3g", rep.worst_analytic) + ", numeric " +
                                                   fmt("%.3g", rep.worst_numeric) + ")");
        }
    }
    c.require(worst_row <= 1e-6, "row sum error " + fmt("%.3g", worst_row));
    c.require(worst_perm <= 1e-6, "equivariance error " + fmt("%.3g", worst_perm));
    c.require(worst_ref <= 1e-5, "reference error " + fmt("%.3g", worst_ref));
    return c.done("100 graphs: row sums " + fmt("%.1e", worst_row) + ", equivariance " + fmt("%.1e", worst_perm) +
                  ", reference " + fmt("%.1e", worst_ref) + ", FD rel " + fmt("%.1e", worst_fd) + " (10 graphs)");
}

decoder::DecoderConfig acc_decoder(std::size_t vocab)
{
    decoder::DecoderConfig c;
    c.vocab_size = vocab;
    c.d_model = 16;
    c.layers = 2;
    c.heads = 4;
    c.d_ff = 32;
    c.d_e = 8;
    c.d_v = 12;
    c.max_article_len = 16;
    c.max_caption_len = 10;
    return c;
}

std::vector<int> random_tokens(std::mt19937_64& rng, std::size_t len, int vocab)
{
    std::vector<int> t;
    for (std::size_t i = 0; i < len; ++i) {
        t.push_back(int(mmkg::testing::pick(rng, 3, std::size_t(vocab) - 1)));
    }
    return t;
}

Vector log_normalize(Vector p) { return (p / p.sum()).array().log().matrix(); }

// Best finished path over every sequence up to max_len, scored as the beam scores.
template <class F>
search::Hypothesis exhaustive(const F& step, Eigen::Index vocab, std::size_t max_len)
{
    search::Hypothesis best;
    best.log_prob = -std::numeric_limits<double>::infinity();
    std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double lp) {
        std::vector<int> toks(prefix.begin() + 1, prefix.end());
        if (toks.size() == max_len) {
            if (lp > best.log_prob) {
                best = {toks, lp, false};
            }
            return;
        }
        Vector s = step(std::span<const int>(prefix));
        if (lp + s[Vocabulary::kEos] > best.log_prob) {
            best = {toks, lp + s[Vocabulary::kEos], true};
        }
        for (Eigen::Index v = 0; v < vocab; ++v) {
            if (v != Vocabulary::kEos) {
                prefix.push_back(int(v));
                walk(prefix, lp + s[v]);
                prefix.pop_back();
            }
        }
    };
    std::vector<int> start{Vocabulary::kBos};
    walk(start, 0.0);
    return best;
}

// Level-by-level enumeration keeping the `width` best prefixes by cumulative
// score; any finished path (EOS or max_len) leaves the pool. Best finished wins.
template <class F>
search::Hypothesis pruned_enumeration(const F& step, Eigen::Index vocab, std::size_t width, std::size_t max_len)
{
    std::vector<std::pair<std::vector<int>, double>> pool{{{}, 0.0}};
    search::Hypothesis best;
    best.log_prob = -std::numeric_limits<double>::infinity();
    for (std::size_t depth = 0; depth < max_len && !pool.empty(); ++depth) {
        std::vector<std::tuple<double, std::vector<int>, bool>> all;
        for (const auto& [toks, lp] : pool) {
            std::vector<int> prefix{Vocabulary::kBos};
            prefix.insert(prefix.end(), toks.begin(), toks.end());
            Vector s = step(std::span<const int>(prefix));
            for (Eigen::Index v = 0; v < vocab; ++v) {
                auto next = toks;
                if (v != Vocabulary::kEos) {
                    next.push_back(int(v));
                }
                all.emplace_back(lp + s[v], std::move(next), v == Vocabulary::kEos);
            }
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
        pool.clear();
        for (std::size_t i = 0; i < std::min(width, all.size()); ++i) {
            auto& [lp, toks, eos] = all[i];
            if (eos || toks.size() == max_len) {
                if (lp > best.log_prob) {
                    best = {toks, lp, eos};
                }
            } else {
                pool.emplace_back(toks, lp);
            }
        }
    }
    return best;
}

Outcome decoder_checks()
{
    std::mt19937_64 rng(1005);
    Checks c;
    double worst_simplex = 0.0, worst_causal = 0.0, worst_uniform = 0.0;

    for (int trial = 0; trial < 20; ++trial) {
        auto p = decoder::DecoderParams::random(acc_decoder(20), 8000 + std::uint64_t(trial));
        Matrix mem = gaussian_matrix(Eigen::Index(mmkg::testing::pick(rng, 1, 12)), 16, 1.0, rng);
        std::vector<int> prefix{Vocabulary::kBos};
        auto rest = random_tokens(rng, mmkg::testing::pick(rng, 0, 10), 20);
        prefix.insert(prefix.end(), rest.begin(), rest.end());
        Vector probs = decoder::decoder_step(mem, prefix, p);
        worst_simplex = std::max(worst_simplex, std::abs(probs.sum() - 1.0));
        c.require(probs.minCoeff() >= 0.0, "negative probability");
        Matrix ref = oracle::reference_logits(p, mem, prefix);
        c.require((decoder::decoder_logits(p, mem, prefix) - ref).cwiseAbs().maxCoeff() <= 1e-5, "reference logits");
    }

    auto causal_model = decoder::DecoderParams::random(acc_decoder(20), 8100);
    Matrix causal_mem = gaussian_matrix(6, 16, 1.0, rng);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> prefix{Vocabulary::kBos};
        auto rest = random_tokens(rng, 9, 20);
        prefix.insert(prefix.end(), rest.begin(), rest.end());
        const std::size_t k = mmkg::testing::pick(rng, 1, 9);
        auto changed = prefix;
        for (std::size_t t = k; t < changed.size(); ++t) {
            changed[t] = int(mmkg::testing::pick(rng, 3, 19));
        }
        Matrix a = decoder::decoder_logits(causal_model, causal_mem, prefix);
        Matrix b = decoder::decoder_logits(causal_model, causal_mem, changed);
        Matrix h = decoder::decoder_logits(causal_model, causal_mem, std::span<const int>(prefix).first(k));
        const auto K = Eigen::Index(k);
        worst_causal = std::max({worst_causal, (a.topRows(K) - b.topRows(K)).cwiseAbs().maxCoeff(),
                                 (a.topRows(K) - h).cwiseAbs().maxCoeff()});
    }

    for (int trial = 0; trial < 20; ++trial) {
        auto p = decoder::DecoderParams::random(acc_decoder(20), 8200 + std::uint64_t(trial));
        p.W_out.setZero();
        p.b_out.setZero();
        Matrix mem = gaussian_matrix(5, 16, 1.0, rng);
        auto gold = random_tokens(rng, mmkg::testing::pick(rng, 0, 10), 20);
        gold.push_back(Vocabulary::kEos);
        double expect = double(gold.size()) * std::log(20.0);
        worst_uniform = std::max(worst_uniform, std::abs(decoder::caption_loss(mem, gold, p).loss - expect));
    }

    int beam_mismatch = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto p = decoder::DecoderParams::random(acc_decoder(12), 8300 + std::uint64_t(trial));
        Matrix mem = gaussian_matrix(4, 16, 1.0, rng);
        auto step = [&](std::span<const int> pre) { return decoder::decoder_log_step(p, mem, pre); };
        auto g = search::greedy(step, Vocabulary::kBos, Vocabulary::kEos, 10);
        auto b = search::beam_search(step, Vocabulary::kBos, Vocabulary::kEos, 1, 10);
        beam_mismatch += g.tokens != b.tokens || std::abs(g.log_prob - b.log_prob) > 1e-12;
    }

    // |V| = 8, length 3: a table where the greedy first step leads to a flat
    // continuation, plus small random decoders over the same vocabulary.
    std::map<std::vector<int>, Vector> table;
    Vector first = Vector::Constant(8, 0.01);
    first[4] = 0.5;
    first[5] = 0.4;
    table[{Vocabulary::kBos}] = log_normalize(first);
    table[{Vocabulary::kBos, 4}] = log_normalize(Vector::Constant(8, 1.0));
    Vector after5 = Vector::Constant(8, 0.01);
    after5[Vocabulary::kEos] = 0.93;
    table[{Vocabulary::kBos, 5}] = log_normalize(after5);
    auto trap = [&](std::span<const int> pre) {
        auto it = table.find(std::vector<int>(pre.begin(), pre.end()));
        if (it != table.end()) {
            return it->second;
        }
        Vector p = Vector::Constant(8, 0.05);
        p[Vocabulary::kEos] = 0.65;
        return log_normalize(p);
    };
    auto best = exhaustive(trap, 8, 3);
    auto beam3 = search::beam_search(trap, Vocabulary::kBos, Vocabulary::kEos, 3, 3);
    auto greedy3 = search::greedy(trap, Vocabulary::kBos, Vocabulary::kEos, 3);
    c.require(beam3.tokens == best.tokens && std::abs(beam3.log_prob - best.log_prob) < 1e-12,
              "beam(3) misses the exhaustive optimum on the table");
    c.require(greedy3.log_prob < best.log_prob, "table does not separate greedy from the optimum");
    int beam3_hits = 0;
    int pruned_mismatch = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto p = decoder::DecoderParams::random(acc_decoder(8), 8400 + std::uint64_t(trial));
        Matrix mem = gaussian_matrix(4, 16, 1.0, rng);
        auto step = [&](std::span<const int> pre) { return decoder::decoder_log_step(p, mem, pre); };
        auto opt = exhaustive(step, 8, 3);
        auto b = search::beam_search(step, Vocabulary::kBos, Vocabulary::kEos, 3, 3);
        beam3_hits += b.tokens == opt.tokens;
        auto ref = pruned_enumeration(step, 8, 3, 3);
        pruned_mismatch += ref.tokens != b.tokens || std::abs(ref.log_prob - b.log_prob) > 1e-12;
    }

    c.require(worst_simplex <= 1e-6, "simplex error " + fmt("%.3g", worst_simplex));
    c.require(worst_causal == 0.0 || worst_causal < 1e-12, "causality error " + fmt("%.3g", worst_causal));
    c.require(worst_uniform <= 1e-9, "uniform loss error " + fmt("%.3g", worst_uniform));
    c.require(beam_mismatch == 0, std::to_string(beam_mismatch) + " beam(1)/greedy mismatches");
    c.require(pruned_mismatch == 0, std::to_string(pruned_mismatch) + " beam(3)/pruned-enumeration mismatches");
    return c.done("simplex " + fmt("%.1e", worst_simplex) + ", causality " + fmt("%.1e", worst_causal) +
                  " over 100 prefixes, uniform loss " + fmt("%.1e", worst_uniform) +
                  ", beam(1)=greedy on 50 models, beam(3)=exhaustive on the table, beam(3)=pruned enumeration on 20 random decoders (global optimum on " +
                  std::to_string(beam3_hits) + "/20)");
}

// ---------------------------------------------------------------------------

struct ToyRun {
    double token_loss = 0.0;
    double exact = 0.0;
    double entity_f1 = 0.0;
};

ToyRun run_toy(const synth::ToyCorpus& corpus, const pipeline::Dataset& d, const std::vector<MultiModalGraph>& graphs,
               decoder::Ablation ablation)
{
    Vocabulary vocab = Vocabulary::build(pipeline::caption_texts(d));
    auto samples = pipeline::make_samples(d, graphs, vocab);
    auto cfg = captioner::CaptionerConfig::desk(16, 32, vocab.size());
    cfg.decoder.max_article_len = 32;
    cfg.decoder.max_caption_len = 16;
    cfg.ablation = ablation;
    auto model = captioner::CaptionModel::init(cfg, vocab, 5);
    captioner::TrainConfig tc;
    tc.epochs = 60;
    tc.optim.base_lr = 3e-3;
    tc.optim.init_lr = 1e-5;
    tc.optim.warmup_steps = 20;
    tc.optim.batch_size = 8;
    tc.optim.clip_norm = 0.1;
    tc.optim.seed = 5;
    auto trained = captioner::train_captioner(samples, std::move(model), tc).model;

    ToyRun r;
    r.token_loss = captioner::mean_token_loss(trained, samples);
    metrics::Corpus ents;
    std::size_t exact = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::string text = trained.vocab.decode(trained.generate(samples[i].input, {1, 16, 0.0}));
        exact += text == d.captions[i].caption_text;
        ents.push_back({{}, {{}}, metrics::gazetteer_entities(text, corpus.lexicon), corpus.caption_entities[i]});
    }
    r.exact = double(exact) / double(samples.size());
    r.entity_f1 = metrics::entity_f1(ents).f1;
    return r;
}

Outcome end_to_end()
{
    auto t0 = Clock::now();
    auto corpus = synth::make_corpus({});
    auto d = pipeline::toy_dataset(corpus);

    auto [train, held] = kb::split_kb(corpus.kb, 0.8, 3);
    matcher::TrainConfig mc;
    mc.d = 32;
    mc.epochs = 50;
    mc.seed = 3;
    mc.optim.base_lr = 1e-2;
    mc.optim.init_lr = 1e-4;
    mc.optim.warmup_steps = 20;
    mc.optim.batch_size = 16;
    mc.optim.clip_norm = 1.0;
    auto m = matcher::train_matcher(train, held, mc);
    auto graphs = pipeline::build_graphs(d, m.params);
    std::size_t cross = 0;
    for (const auto& g : graphs) {
        cross += graph::graph_stats(g).edges_by_kind[std::size_t(EdgeKind::CrossModal)];
    }

    ToyRun full = run_toy(corpus, d, graphs, decoder::Ablation::Full);
    ToyRun blind = run_toy(corpus, d, graphs, decoder::Ablation::WithoutGraph);
    double secs = seconds_since(t0);

    Checks c;
    c.require(full.token_loss <= 0.1, "token loss " + fmt("%.4f", full.token_loss));
    c.require(full.exact >= 0.9, "exact reproduction " + fmt("%.2f", full.exact));
    c.require(blind.entity_f1 < full.entity_f1,
              "no-graph entity F1 " + fmt("%.3f", blind.entity_f1) + " vs full " + fmt("%.3f", full.entity_f1));
    c.require(secs < 300.0, "runtime " + fmt("%.0f s", secs));
    return c.done("matcher recall@1 " + fmt("%.2f", m.best_recall_at_1) + ", " + std::to_string(cross) +
                  " cross-modal edges; full: loss " + fmt("%.4f", full.token_loss) + ", exact " +
                  fmt("%.2f", full.exact) + ", entity F1 " + fmt("%.3f", full.entity_f1) + "; no-graph: entity F1 " +
                  fmt("%.3f", blind.entity_f1) + ", exact " + fmt("%.2f", blind.exact) + "; " + fmt("%.0f s", secs));
}

// ---------------------------------------------------------------------------

metrics::EvalInstance pair(const std::string& h, const std::string& r)
{
    return {metrics::normalize(h), {metrics::normalize(r)}, {}, {}};
}

Outcome metric_goldens()
{
    using metrics::EntityRef;
    Checks c;
    auto near = [&](double got, double want, double tol, const std::string& what) {
        c.require(std::abs(got - want) <= tol, what + " " + fmt("%.10g", got) + " vs " + fmt("%.10g", want));
    };
    // Frozen from tests/oracles/metrics_oracle.py.
    metrics::Corpus three{pair("a man rides a red bike", "a man rides a bike"),
                          pair("two dogs play in the park", "two dogs run in a park"),
                          pair("a plate of food", "a plate with some food on it")};
    near(metrics::bleu4({pair("the cat sat on the mat", "the cat is on the mat")}), 0.002540663741143586, 1e-6,
         "bleu cat");
    near(metrics::bleu4(three), 0.26589989000816605, 1e-6, "bleu three");
    near(metrics::rouge_l(three), 0.7035984848484848, 1e-6, "rouge three");
    near(metrics::cider_d(three), 3.3683073864083455, 1e-6, "cider three");

    auto P = [](const char* s) { return EntityRef{s, EntityClass::Person}; };
    auto F = [](const char* s) { return EntityRef{s, EntityClass::Facility}; };
    std::vector<metrics::CaptionEntry> h{
        {"i1", "Alonso won the race at Monza", {P("Alonso"), F("Monza")}},
        {"i2", "Hamilton crashed the car at Monaco", {P("Hamilton"), F("Monaco")}},
        {"i3", "Button celebrated the victory", {P("Button")}},
        {"i4", "Webber tested new tyres at Suzuka with Massa", {P("Webber"), F("Suzuka"), P("Massa")}},
        {"i5", "the team signed a contract", {}}};
    std::vector<metrics::CaptionEntry> r{
        {"i1", "Alonso won the race at Monza", {P("Alonso"), F("Monza")}},
        {"i2", "Vettel crashed the car at Silverstone", {P("Vettel"), F("Silverstone")}},
        {"i3", "Button celebrated the victory at Monaco", {P("Button"), F("Monaco")}},
        {"i4", "Webber tested the tyres at Suzuka", {P("Webber"), F("Suzuka")}},
        {"i5", "Rosberg signed the contract at Interlagos", {P("Rosberg"), F("Interlagos")}}};
    auto s = metrics::evaluate_corpus(h, r, metrics::Mode::Standard);
    near(s.bleu4, 0.5053501707096167, 1e-6, "five bleu");
    near(s.rouge_l, 0.7059525806641976, 1e-6, "five rouge");
    near(s.cider_d, 5.2906517500394425, 1e-6, "five cider");
    near(*s.entity_precision, 0.625, 1e-6, "five entity P");
    near(*s.entity_recall, 0.5, 1e-6, "five entity R");
    near(*s.entity_f1, 0.5555555555555556, 1e-6, "five entity F1");
    auto m = metrics::evaluate_corpus(h, r, metrics::Mode::EntityMasked);
    near(m.bleu4, 0.6107410291190805, 1e-6, "masked bleu");
    near(m.rouge_l, 0.7726192473308644, 1e-6, "masked rouge");
    near(m.cider_d, 6.462878154138723, 1e-6, "masked cider");

    std::vector<metrics::CaptionEntry> same{{"i1", "Alonso won the race today", {P("Alonso")}},
                                            {"i2", "Vettel crashed his red car", {P("Vettel")}}};
    auto id = metrics::evaluate_corpus(same, same, metrics::Mode::Standard);
    near(id.bleu4, 1.0, 1e-9, "identical bleu");
    near(id.rouge_l, 1.0, 1e-9, "identical rouge");
    near(id.cider_d, 10.0, 1e-9, "identical cider");
    near(*id.entity_f1, 1.0, 1e-9, "identical entity F1");

    std::vector<metrics::CaptionEntry> renamed{{"i1", "Hamilton won the race today", {P("Hamilton")}},
                                               {"i2", "Button crashed his red car", {P("Button")}}};
    near(metrics::evaluate_corpus(renamed, same, metrics::Mode::EntityMasked).bleu4, 1.0, 1e-9, "masked rename bleu");
    return c.done("23 values match to 1e-6; identical pairs 1/1/10/1; masked renames BLEU-4 = 1");
}

Outcome schedule_and_optimizer()
{
    Checks c;
    optim::OptimConfig cfg;
    c.require(optim::lr_at_step(0, cfg) == 1e-7, "lr(0)");
    c.require(std::abs(optim::lr_at_step(4000, cfg) - 1e-4) < 1e-18, "lr(4000)");
    std::mt19937_64 rng(1006);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        TensorList g{{gaussian_matrix(4, 3, std::pow(10.0, double(i % 5) - 2.0), rng), gaussian_matrix(2, 2, 1.0, rng)}};
        optim::clip_gradients(g, 0.1);
        worst = std::max(worst, optim::global_norm(g) - 0.1);
    }
    c.require(worst <= 1e-9, "clipped norm exceeds 0.1 by " + fmt("%.3g", worst));

    optim::OptimConfig ac;
    ac.weight_decay = 0.01;
    TensorList p{{Matrix::Constant(1, 1, 0.5)}};
    optim::AdamState<TensorList> st(p);
    double x = 0.5, mm = 0.0, vv = 0.0;
    const double lr = 0.05;
    int step = 0;
    for (double g : {0.2, -0.3}) {
        ++step;
        mm = 0.9 * mm + 0.1 * g;
        vv = 0.999 * vv + 0.001 * g * g;
        double upd = (mm / (1 - std::pow(0.9, step))) / (std::sqrt(vv / (1 - std::pow(0.999, step))) + 1e-8);
        x = x - lr * upd - lr * 0.01 * x;
        optim::adam_step(p, TensorList{{Matrix::Constant(1, 1, g)}}, st, lr, ac);
        c.require(std::abs(p.tensors[0](0, 0) - x) <= 1e-12, "Adam step " + std::to_string(step));
    }
    return c.done("lr(0)=1e-7, lr(4000)=1e-4, clip excess " + fmt("%.1e", std::max(worst, 0.0)) +
                  ", two Adam steps within 1e-12");
}

} // namespace

int main()
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"graph builder vs brute-force oracle", graph_oracle},
        {"threshold linking exactness", threshold_linking},
        {"margin loss and gradients", margin_loss_checks},
        {"matcher learning", matcher_learning},
        {"graph attention checks", gat_checks},
        {"decoder checks", decoder_checks},
        {"end-to-end toy run", end_to_end},
        {"metric golden values", metric_goldens},
        {"schedule and optimizer", schedule_and_optimizer},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s  %-38s %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
    return failed == 0 ? 0 : 1;
}
