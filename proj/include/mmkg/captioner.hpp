#pragma once
// Joint training of the GAT and decoder on teacher-forced captions, plus the
// captioning checkpoint format.

#include "mmkg/decoder.hpp"
#include "mmkg/errors.hpp"
#include "mmkg/gat.hpp"
#include "mmkg/optim.hpp"
#include "mmkg/tensor.hpp"
#include "mmkg/types.hpp"
#include "mmkg/vocab.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace mmkg::captioner {

using decoder::Ablation;
using decoder::CaptionInput;
using decoder::CaptionerParams;

struct CaptionerConfig {
    gat::GatConfig gat;
    decoder::DecoderConfig decoder;
    Ablation ablation = Ablation::Full;

    // Desk-scale defaults for the given feature widths and vocabulary.
    static CaptionerConfig desk(std::size_t d_e, std::size_t d_v, std::size_t vocab_size)
    {
        CaptionerConfig c;
        c.decoder.d_e = c.gat.d_e = d_e;
        c.decoder.d_v = c.gat.d_v = d_v;
        c.decoder.vocab_size = vocab_size;
        c.gat.d_in = c.gat.d_model = c.decoder.d_model;
        return c;
    }

    void validate() const
    {
        gat.validate();
        decoder.validate();
        if (gat.d_model != decoder.d_model) {
            throw ConfigError("GAT output width must equal the decoder d_model");
        }
        if (gat.d_e != decoder.d_e || gat.d_v != decoder.d_v) {
            throw ConfigError("GAT and decoder disagree on feature widths");
        }
    }
};

inline nlohmann::json to_json(const CaptionerConfig& c)
{
    return {{"gat", gat::to_json(c.gat)},
            {"decoder", decoder::to_json(c.decoder)},
            {"ablation", decoder::ablation_name(c.ablation)}};
}

inline CaptionerConfig captioner_config_from_json(const nlohmann::json& j)
{
    CaptionerConfig c;
    c.gat = gat::gat_config_from_json(j.at("gat"));
    c.decoder = decoder::decoder_config_from_json(j.at("decoder"));
    c.ablation = decoder::parse_ablation(j.at("ablation").get<std::string>());
    return c;
}

struct CaptionModel {
    CaptionerConfig config;
    Vocabulary vocab;
    CaptionerParams params;
    std::uint64_t seed = 0;

    static CaptionModel init(CaptionerConfig config, Vocabulary vocab, std::uint64_t seed)
    {
        config.decoder.vocab_size = vocab.size();
        config.validate();
        CaptionModel m{config, std::move(vocab), {}, seed};
        m.params.gat = gat::GatParams::random(config.gat, seed);
        m.params.decoder = decoder::DecoderParams::random(config.decoder, seed + 1);
        return m;
    }

    decoder::Memory memory(const CaptionInput& in) const
    {
        return decoder::assemble_memory(params, in, config.ablation, config.gat.add_reverse_edges);
    }

    std::vector<int> generate(const CaptionInput& in, const decoder::GenerateOptions& opt = {}) const
    {
        return decoder::generate(memory(in).rows, params.decoder, opt);
    }
};

// Memory inputs for one (article, image, graph) triple. Articles without
// token features contribute no text rows; likewise for images.
inline CaptionInput make_input(const ArticleAnnotations& a, const ImageAnnotations& img, MultiModalGraph graph)
{
    CaptionInput in;
    in.article = a.token_features ? to_matrix(*a.token_features) : Matrix(0, 0);
    in.image = to_matrix(img.global_features);
    in.graph = std::move(graph);
    return in;
}

struct Sample {
    CaptionInput input;
    std::vector<int> gold; // caption ids, without EOS
};

struct TrainConfig {
    std::size_t epochs = 10;
    optim::OptimConfig optim;
};

struct EpochLog {
    std::size_t epoch = 0;
    double token_loss = 0.0; // mean NLL per target token, EOS included
    std::size_t tokens = 0;
};

struct TrainResult {
    CaptionModel model;
    std::vector<EpochLog> log;
};

inline std::vector<int> with_eos(const std::vector<int>& gold)
{
    std::vector<int> g = gold;
    g.push_back(Vocabulary::kEos);
    return g;
}

inline std::size_t target_count(const std::vector<int>& gold_with_eos)
{
    return std::size_t(std::count_if(gold_with_eos.begin(), gold_with_eos.end(),
                                     [](int t) { return t != Vocabulary::kPad; }));
}

// Mean per-token NLL over a sample set.
inline double mean_token_loss(const CaptionModel& m, const std::vector<Sample>& samples)
{
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& s : samples) {
        auto gold = with_eos(s.gold);
        ad::Tape t;
        ad::Binder<CaptionerParams> bind(t, m.params, nullptr);
        ad::Var mem = decoder::build_memory(bind, m.params, s.input, m.config.ablation, nullptr,
                                            m.config.gat.add_reverse_edges);
        total += t.value(decoder::caption_nll(bind, m.params.decoder, mem, gold, m.config.decoder.max_caption_len))(0, 0);
        tokens += target_count(gold);
    }
    return tokens ? total / double(tokens) : 0.0;
}

// Minibatch Adam over the GAT and decoder. Matcher outputs and input
// features are fixed inputs. Per-batch gradients are the mean over samples
// of the summed token NLL. The learning-rate schedule is stretched over the
// planned number of steps.
inline TrainResult train_captioner(const std::vector<Sample>& samples, CaptionModel model, const TrainConfig& cfg)
{
    TrainResult result{std::move(model), {}};
    if (cfg.epochs == 0) {
        return result;
    }
    if (samples.empty()) {
        throw ConfigError("train_captioner: no training samples");
    }
    CaptionModel& m = result.model;
    const std::size_t batch_size = std::max<std::size_t>(cfg.optim.batch_size, 1);
    const std::size_t batches_per_epoch = (samples.size() + batch_size - 1) / batch_size;
    optim::OptimConfig oc = cfg.optim;
    oc.total_steps = static_cast<long>(batches_per_epoch * cfg.epochs);
    oc.warmup_steps = std::min(oc.warmup_steps, oc.total_steps - 1);

    optim::AdamState<CaptionerParams> state(m.params);
    std::mt19937_64 rng(m.seed ^ 0x5851f42d4c957f2dULL);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t epoch_tokens = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t count = std::min(batch_size, order.size() - start);
            CaptionerParams grads = zeros_like(m.params);
            for (std::size_t k = start; k < start + count; ++k) {
                const Sample& s = samples[order[k]];
                auto gold = with_eos(s.gold);
                ad::Tape t;
                ad::Binder<CaptionerParams> bind(t, m.params, &grads);
                ad::Var mem = decoder::build_memory(bind, m.params, s.input, m.config.ablation, nullptr,
                                                    m.config.gat.add_reverse_edges);
                ad::Var loss = decoder::caption_nll(bind, m.params.decoder, mem, gold, m.config.decoder.max_caption_len);
                const double l = t.value(loss)(0, 0);
                if (!std::isfinite(l)) {
                    throw DivergenceError("non-finite caption loss at epoch " + std::to_string(epoch));
                }
                t.backward(loss);
                epoch_loss += l;
                epoch_tokens += target_count(gold);
            }
            grads.for_each([&](std::string_view, Matrix& g) { g /= double(count); });
            if (!all_finite(grads)) {
                throw DivergenceError("non-finite gradients at epoch " + std::to_string(epoch));
            }
            optim::clip_gradients(grads, oc.clip_norm);
            optim::adam_step(m.params, grads, state, optim::lr_at_step(step, oc), oc);
            ++step;
        }
        result.log.push_back({epoch, epoch_tokens ? epoch_loss / double(epoch_tokens) : 0.0, epoch_tokens});
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint: {"config": ..., "seed": s, "vocab": [...], "tensors": {...}}

inline nlohmann::json checkpoint_json(const CaptionModel& m)
{
    return {{"config", to_json(m.config)},
            {"seed", m.seed},
            {"vocab", m.vocab.tokens()},
            {"tensors", tensor_io::encode_all(m.params)}};
}

inline CaptionModel model_from_json(const nlohmann::json& j)
{
    try {
        CaptionerConfig cfg = captioner_config_from_json(j.at("config"));
        Vocabulary vocab(j.at("vocab").get<std::vector<std::string>>());
        if (vocab.size() != cfg.decoder.vocab_size) {
            throw SchemaError("checkpoint vocabulary size differs from its config");
        }
        CaptionModel m = CaptionModel::init(cfg, std::move(vocab), j.at("seed").get<std::uint64_t>());
        tensor_io::decode_all(m.params, j.at("tensors"));
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("captioning checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const CaptionModel& m)
{
    std::ofstream out(path);
    if (!out) {
        throw SchemaError("cannot write " + path.string());
    }
    out << checkpoint_json(m).dump() << '\n';
}

inline CaptionModel load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw SchemaError("cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.filename().string() + ": " + e.what());
    }
    return model_from_json(j);
}

} // namespace mmkg::captioner
