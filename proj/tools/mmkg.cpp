// Command-line front end for the multi-modal graph captioning pipeline.

#include "mmkg/captioner.hpp"
#include "mmkg/graph.hpp"
#include "mmkg/io.hpp"
#include "mmkg/kb.hpp"
#include "mmkg/matcher.hpp"
#include "mmkg/metrics.hpp"
#include "mmkg/pipeline.hpp"
#include "mmkg/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

namespace fs = std::filesystem;
using namespace mmkg;

namespace {

nlohmann::json read_json(const fs::path& p)
{
    std::ifstream in(p);
    if (!in) {
        throw SchemaError("cannot open " + p.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const nlohmann::json& j)
{
    std::ofstream out(p);
    if (!out) {
        throw SchemaError("cannot write " + p.string());
    }
    out << j.dump(2) << '\n';
}

struct KbOpts {
    std::string path;
    std::size_t dim_e = 1024, dim_v = 2048;
    kb::SynthConfig synth;
    std::string out;
};

struct MatcherOpts {
    std::string kb, out, config;
    std::size_t dim_e = 1024, dim_v = 2048;
    double split = 0.9;
    bool print_config = false;
    matcher::TrainConfig train;
};

struct MatchOpts {
    std::string text, image, matcher;
    double threshold = 0.4;
    bool entities_only = false;
};

struct GraphOpts {
    std::string articles, images, captions, matcher, out;
    double threshold = 0.4;
    bool entities_only = false;
};

struct CaptionOpts {
    std::string data, graphs, matcher, out, ablation = "full", config;
    std::uint64_t seed = 0;
    std::size_t epochs = 60;
    bool print_config = false;
    decoder::DecoderConfig decoder;
    optim::OptimConfig optim;
};

struct GenerateOpts {
    std::string ckpt, graphs, data, out;
    std::size_t beam = 1, max_len = 50;
    double length_penalty = 0.0;
};

struct EvalOpts {
    std::string hyps, refs, entities, mode = "standard", report;
    bool case_fold = false, macro = false;
};

struct SynthCorpusOpts {
    std::string out;
    std::uint64_t seed = 11;
};

int kb_validate(const KbOpts& o)
{
    DataConfig cfg;
    cfg.d_e = o.dim_e;
    cfg.d_v = o.dim_v;
    auto r = kb::load_kb(o.path, cfg);
    std::cout << "entries\t" << r.kb.size() << "\nduplicates\t" << r.duplicates << '\n';
    return 0;
}

int kb_synth(const KbOpts& o)
{
    kb::KnowledgeBase base = kb::synth_kb(o.synth);
    if (o.out.empty()) {
        for (const auto& e : base.entries()) {
            std::cout << kb::to_json(e).dump() << '\n';
        }
    } else {
        kb::save_kb(o.out, base);
    }
    return 0;
}

int train_matcher(MatcherOpts o)
{
    if (!o.config.empty()) {
        nlohmann::json j = read_json(o.config);
        if (j.contains("optim")) {
            optim::update_from_json(o.train.optim, j["optim"]);
        }
        o.train.d = j.value("d", o.train.d);
        o.train.delta = j.value("delta", o.train.delta);
        o.train.epochs = j.value("epochs", o.train.epochs);
    }
    o.train.optim.seed = o.train.seed;
    if (o.print_config) {
        std::cout << nlohmann::json{{"d", o.train.d},
                                    {"delta", o.train.delta},
                                    {"epochs", o.train.epochs},
                                    {"seed", o.train.seed},
                                    {"split", o.split},
                                    {"optim", optim::to_json(o.train.optim)}}
                         .dump(2)
                  << '\n';
        return 0;
    }
    DataConfig cfg;
    cfg.d_e = o.dim_e;
    cfg.d_v = o.dim_v;
    auto loaded = kb::load_kb(o.kb, cfg);
    auto [train, val] = kb::split_kb(loaded.kb, o.split, o.train.seed);
    auto result = matcher::train_matcher(train, val, o.train);
    for (const auto& l : result.log) {
        std::cerr << "epoch " << l.epoch << "\tloss " << l.mean_loss << "\trecall@1 " << l.val_recall_at_1 << '\n';
    }
    std::cout << "best_epoch\t" << result.best_epoch << "\nrecall_at_1\t" << result.best_recall_at_1 << '\n';
    matcher::save_checkpoint(o.out, result.params, o.train.seed);
    return 0;
}

int match(const MatchOpts& o)
{
    auto ck = matcher::load_checkpoint(o.matcher);
    // Either file may be a full graph; only the relevant side is used.
    MultiModalGraph text = graph::induced_subgraph(io::load_graph(o.text), [](const GraphNode& n) { return is_text_kind(n.kind); });
    MultiModalGraph image =
        graph::induced_subgraph(io::load_graph(o.image), [](const GraphNode& n) { return is_visual_kind(n.kind); });
    for (const auto& m : matcher::match_entities(text.nodes, image.nodes, ck.params, o.threshold, o.entities_only)) {
        std::cout << nlohmann::json{{"text_node_id", m.text_node_id},
                                    {"visual_node_id", m.visual_node_id},
                                    {"sim", m.sim}}
                         .dump()
                  << '\n';
    }
    return 0;
}

int build_graph(const GraphOpts& o)
{
    auto ck = matcher::load_checkpoint(o.matcher);
    DataConfig cfg;
    cfg.d_e = ck.params.d_e();
    cfg.d_v = ck.params.d_v();
    pipeline::Dataset d;
    d.articles = io::load_article_annotations(o.articles, cfg);
    d.images = io::load_image_annotations(o.images, cfg);
    if (!o.captions.empty()) {
        d.captions = io::load_captions(o.captions);
    } else {
        if (d.articles.size() != d.images.size()) {
            throw AlignmentError("without --captions, articles and images are paired by line and must be equally many");
        }
        for (std::size_t i = 0; i < d.articles.size(); ++i) {
            d.captions.push_back({d.images[i].image_id, d.articles[i].article_id, {}, ""});
        }
    }
    pipeline::GraphOptions go;
    go.merge.threshold = o.threshold;
    go.merge.entities_only = o.entities_only;
    fs::create_directories(o.out);
    std::ofstream stats(fs::path(o.out) / "stats.tsv");
    stats << "article_id\timage_id\tnodes\tedges\tHEAD\tRELATION\tTAIL\tOBJECT\tFACE\tTRIPLE\tCOREF_REWIRE\tCROSS_MODAL"
             "\tcomponents\n";
    for (const auto& c : d.captions) {
        MultiModalGraph g = pipeline::build_graph(d.article(c.article_id), d.image(c.image_id), ck.params, go);
        io::save_graph(g, fs::path(o.out) / pipeline::graph_filename(c.article_id, c.image_id));
        auto s = graph::graph_stats(g);
        stats << c.article_id << '\t' << c.image_id << '\t' << s.node_count << '\t' << s.edge_count;
        for (auto n : s.nodes_by_kind) {
            stats << '\t' << n;
        }
        for (auto n : s.edges_by_kind) {
            stats << '\t' << n;
        }
        stats << '\t' << s.components << '\n';
    }
    std::cout << "graphs\t" << d.captions.size() << '\n';
    return 0;
}

int train_captioner(CaptionOpts o)
{
    if (!o.config.empty()) {
        nlohmann::json j = read_json(o.config);
        if (j.contains("optim")) {
            optim::update_from_json(o.optim, j["optim"]);
        }
        o.epochs = j.value("epochs", o.epochs);
        if (j.contains("decoder")) {
            const auto& dj = j["decoder"];
            o.decoder.d_model = dj.value("d_model", o.decoder.d_model);
            o.decoder.layers = dj.value("layers", o.decoder.layers);
            o.decoder.heads = dj.value("heads", o.decoder.heads);
            o.decoder.d_ff = dj.value("d_ff", o.decoder.d_ff);
        }
    }
    o.optim.seed = o.seed;
    if (o.print_config) {
        std::cout << nlohmann::json{{"epochs", o.epochs},
                                    {"seed", o.seed},
                                    {"ablation", o.ablation},
                                    {"decoder", decoder::to_json(o.decoder)},
                                    {"optim", optim::to_json(o.optim)}}
                         .dump(2)
                  << '\n';
        return 0;
    }
    DataConfig cfg = pipeline::infer_dims(o.data);
    pipeline::Dataset d = pipeline::load_dataset(o.data, cfg);
    std::vector<MultiModalGraph> graphs;
    std::optional<matcher::Checkpoint> ck;
    for (const auto& c : d.captions) {
        fs::path p = fs::path(o.graphs) / pipeline::graph_filename(c.article_id, c.image_id);
        if (!o.graphs.empty() && fs::exists(p)) {
            graphs.push_back(io::load_graph(p));
            continue;
        }
        if (o.matcher.empty()) {
            throw ConfigError("graph " + p.string() + " missing and no --matcher to build it");
        }
        if (!ck) {
            ck = matcher::load_checkpoint(o.matcher);
        }
        graphs.push_back(pipeline::build_graph(d.article(c.article_id), d.image(c.image_id), ck->params));
    }
    Vocabulary vocab = Vocabulary::build(pipeline::caption_texts(d));
    captioner::CaptionerConfig cc = captioner::CaptionerConfig::desk(cfg.d_e, cfg.d_v, vocab.size());
    cc.decoder.d_model = o.decoder.d_model;
    cc.decoder.layers = o.decoder.layers;
    cc.decoder.heads = o.decoder.heads;
    cc.decoder.d_ff = o.decoder.d_ff;
    cc.decoder.max_article_len = cfg.max_article_len;
    cc.decoder.max_caption_len = cfg.max_caption_len;
    cc.gat.d_in = cc.gat.d_model = cc.decoder.d_model;
    cc.ablation = decoder::parse_ablation(o.ablation);
    auto model = captioner::CaptionModel::init(cc, vocab, o.seed);
    auto samples = pipeline::make_samples(d, graphs, vocab);
    captioner::TrainConfig tc{o.epochs, o.optim};
    auto result = captioner::train_captioner(samples, std::move(model), tc);
    for (const auto& l : result.log) {
        std::cerr << "epoch " << l.epoch << "\ttoken_loss " << l.token_loss << '\n';
    }
    captioner::save_checkpoint(o.out, result.model);
    std::cout << "token_loss\t" << captioner::mean_token_loss(result.model, samples) << '\n';
    return 0;
}

int generate(const GenerateOpts& o)
{
    auto model = captioner::load_checkpoint(o.ckpt);
    DataConfig cfg;
    cfg.d_e = model.config.decoder.d_e;
    cfg.d_v = model.config.decoder.d_v;
    pipeline::Dataset d = pipeline::load_dataset(o.data, cfg);
    auto graphs = pipeline::load_graphs(d, o.graphs);
    std::vector<metrics::CaptionEntry> hyps;
    std::vector<std::string> article_ids;
    for (std::size_t i = 0; i < d.captions.size(); ++i) {
        const auto& c = d.captions[i];
        auto in = captioner::make_input(d.article(c.article_id), d.image(c.image_id), graphs[i]);
        auto ids = model.generate(in, {o.beam, o.max_len, o.length_penalty});
        hyps.push_back({c.image_id, model.vocab.decode(ids), {}});
        article_ids.push_back(c.article_id);
    }
    pipeline::save_hypotheses(o.out, hyps, article_ids);
    std::cout << "captions\t" << hyps.size() << '\n';
    return 0;
}

int evaluate(const EvalOpts& o)
{
    auto hyps = pipeline::load_hypotheses(o.hyps);
    std::vector<metrics::CaptionEntry> refs;
    for (const auto& c : io::load_captions(o.refs)) {
        refs.push_back({c.image_id, c.caption_text, {}});
    }
    if (!o.entities.empty()) {
        auto ents = pipeline::load_entities(o.entities);
        std::vector<metrics::EntityRef> lexicon;
        for (auto& r : refs) {
            auto it = ents.find(r.image_id);
            if (it != ents.end()) {
                r.entities = it->second;
                lexicon.insert(lexicon.end(), it->second.begin(), it->second.end());
            }
        }
        // Hypotheses without their own entity list are tagged with the
        // reference surfaces.
        for (auto& h : hyps) {
            if (h.entities.empty()) {
                h.entities = metrics::gazetteer_entities(h.text, lexicon);
            }
        }
    }
    metrics::EntityF1Options eo{o.case_fold, o.macro};
    auto report = metrics::evaluate_corpus(hyps, refs, metrics::parse_mode(o.mode), eo);
    nlohmann::json j = metrics::to_json(report);
    if (!o.report.empty()) {
        write_json(o.report, j);
    }
    std::cout << j.dump(2) << '\n';
    return 0;
}

int synth_corpus(const SynthCorpusOpts& o)
{
    synth::CorpusConfig cfg;
    cfg.seed = o.seed;
    auto c = synth::make_corpus(cfg);
    fs::path out(o.out);
    pipeline::save_dataset(out, pipeline::toy_dataset(c));
    kb::save_kb(out / "kb.jsonl", c.kb);
    std::vector<std::string> ids;
    for (const auto& cap : c.captions) {
        ids.push_back(cap.image_id);
    }
    pipeline::save_entities(out / "entities.jsonl", ids, c.caption_entities);
    std::cout << "samples\t" << c.captions.size() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multi-modal knowledge graph captioning toolkit"};
    app.require_subcommand(1);

    KbOpts kbo;
    auto* kb_cmd = app.add_subcommand("kb", "Knowledge-base utilities");
    kb_cmd->require_subcommand(1);
    auto* kb_val = kb_cmd->add_subcommand("validate", "Load and validate kb.jsonl");
    kb_val->add_option("--kb,path", kbo.path, "kb.jsonl")->required();
    kb_val->add_option("--dim-e", kbo.dim_e, "Entity embedding width");
    kb_val->add_option("--dim-v", kbo.dim_v, "Image feature width");
    auto* kb_syn = kb_cmd->add_subcommand("synth", "Write a clustered synthetic knowledge base");
    kb_syn->add_option("--entities", kbo.synth.entities);
    kb_syn->add_option("--clusters", kbo.synth.clusters);
    kb_syn->add_option("--dim-e", kbo.synth.d_e);
    kb_syn->add_option("--dim-v", kbo.synth.d_v);
    kb_syn->add_option("--seed", kbo.synth.seed);
    kb_syn->add_option("--out", kbo.out, "Output file (stdout when omitted)");

    MatcherOpts mo;
    mo.train.d = 32;
    mo.train.optim.base_lr = 1e-2;
    mo.train.optim.init_lr = 1e-4;
    mo.train.optim.warmup_steps = 20;
    mo.train.optim.clip_norm = 1.0;
    auto* tm = app.add_subcommand("train-matcher", "Train the cross-modal entity matcher");
    tm->add_option("--kb", mo.kb);
    tm->add_option("--epochs", mo.train.epochs);
    tm->add_option("--batch", mo.train.optim.batch_size);
    tm->add_option("--seed", mo.train.seed);
    tm->add_option("--d", mo.train.d, "Shared projection width");
    tm->add_option("--delta", mo.train.delta, "Margin");
    tm->add_option("--lr", mo.train.optim.base_lr);
    tm->add_option("--split", mo.split, "Training fraction of the KB");
    tm->add_option("--dim-e", mo.dim_e);
    tm->add_option("--dim-v", mo.dim_v);
    tm->add_option("--config", mo.config, "JSON overrides");
    tm->add_option("--out", mo.out);
    tm->add_flag("--print-config", mo.print_config);

    MatchOpts mao;
    auto* ma = app.add_subcommand("match", "List cross-modal matches between two sub-graphs");
    ma->add_option("--graph-text", mao.text)->required();
    ma->add_option("--graph-image", mao.image)->required();
    ma->add_option("--matcher", mao.matcher)->required();
    ma->add_option("--threshold", mao.threshold);
    ma->add_flag("--entities-only", mao.entities_only);

    GraphOpts go;
    auto* bg = app.add_subcommand("build-graph", "Build one multi-modal graph per (article, image) pair");
    bg->add_option("--articles", go.articles)->required();
    bg->add_option("--images", go.images)->required();
    bg->add_option("--captions", go.captions, "Pairs to build (default: pair by line)");
    bg->add_option("--matcher", go.matcher)->required();
    bg->add_option("--threshold", go.threshold);
    bg->add_flag("--entities-only", go.entities_only);
    bg->add_option("--out", go.out)->required();

    CaptionOpts co;
    co.optim.base_lr = 3e-3;
    co.optim.init_lr = 1e-5;
    co.optim.warmup_steps = 20;
    co.optim.batch_size = 8;
    auto* tc = app.add_subcommand("train-captioner", "Jointly train the GAT and caption decoder");
    tc->add_option("--data", co.data);
    tc->add_option("--graphs", co.graphs);
    tc->add_option("--matcher", co.matcher, "Builds graphs missing from --graphs");
    tc->add_option("--ablation", co.ablation)->check(CLI::IsMember({"full", "no-graph", "image-sg", "text-sg"}));
    tc->add_option("--seed", co.seed);
    tc->add_option("--epochs", co.epochs);
    tc->add_option("--batch", co.optim.batch_size);
    tc->add_option("--lr", co.optim.base_lr);
    tc->add_option("--config", co.config, "JSON overrides");
    tc->add_option("--out", co.out);
    tc->add_flag("--print-config", co.print_config);

    GenerateOpts gen;
    auto* ge = app.add_subcommand("generate", "Caption every sample with a trained checkpoint");
    ge->add_option("--ckpt", gen.ckpt)->required();
    ge->add_option("--graphs", gen.graphs)->required();
    ge->add_option("--data", gen.data)->required();
    ge->add_option("--beam", gen.beam);
    ge->add_option("--max-len", gen.max_len);
    ge->add_option("--length-penalty", gen.length_penalty);
    ge->add_option("--out", gen.out)->required();

    EvalOpts eo;
    auto* ev = app.add_subcommand("evaluate", "Score hypotheses against reference captions");
    ev->add_option("--hyps", eo.hyps)->required();
    ev->add_option("--refs", eo.refs)->required();
    ev->add_option("--entities", eo.entities, "Reference entity lists");
    ev->add_option("--mode", eo.mode)->check(CLI::IsMember({"standard", "entity-masked"}));
    ev->add_option("--report", eo.report);
    ev->add_flag("--case-fold", eo.case_fold);
    ev->add_flag("--macro", eo.macro);

    SynthCorpusOpts so;
    auto* sc = app.add_subcommand("synth-corpus", "Write the 50-sample toy corpus and its KB");
    sc->add_option("--out", so.out)->required();
    sc->add_option("--seed", so.seed);

    CLI11_PARSE(app, argc, argv);

    auto need = [](const std::string& v, const char* flag) {
        if (v.empty()) {
            throw ConfigError(std::string(flag) + " is required");
        }
    };
    try {
        if (kb_val->parsed()) {
            return kb_validate(kbo);
        }
        if (kb_syn->parsed()) {
            return kb_synth(kbo);
        }
        if (tm->parsed()) {
            if (!mo.print_config) {
                need(mo.kb, "--kb");
                need(mo.out, "--out");
            }
            return train_matcher(mo);
        }
        if (ma->parsed()) {
            return match(mao);
        }
        if (bg->parsed()) {
            return build_graph(go);
        }
        if (tc->parsed()) {
            if (!co.print_config) {
                need(co.data, "--data");
                need(co.out, "--out");
            }
            return train_captioner(co);
        }
        if (ge->parsed()) {
            return generate(gen);
        }
        if (ev->parsed()) {
            return evaluate(eo);
        }
        if (sc->parsed()) {
            return synth_corpus(so);
        }
    } catch (const mmkg::Error& e) {
        std::cerr << e.what() << '\n';
        return 2;
    }
    return 0;
}
