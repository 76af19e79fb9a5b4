#pragma once
// File-level glue: dataset directories, per-sample graph construction, and
// the caption/entity JSONL files used by generation and evaluation.

#include "mmkg/captioner.hpp"
#include "mmkg/graph.hpp"
#include "mmkg/io.hpp"
#include "mmkg/matcher.hpp"
#include "mmkg/metrics.hpp"
#include "mmkg/synth.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace mmkg::pipeline {

namespace fs = std::filesystem;

// A data directory holds articles.jsonl, images.jsonl and captions.jsonl.
struct Dataset {
    std::vector<ArticleAnnotations> articles;
    std::vector<ImageAnnotations> images;
    std::vector<CaptionRecord> captions;

    const ArticleAnnotations& article(const std::string& id) const
    {
        for (const auto& a : articles) {
            if (a.article_id == id) {
                return a;
            }
        }
        throw ReferenceError("unknown article '" + id + "'");
    }
    const ImageAnnotations& image(const std::string& id) const
    {
        for (const auto& i : images) {
            if (i.image_id == id) {
                return i;
            }
        }
        throw ReferenceError("unknown image '" + id + "'");
    }
};

inline Dataset load_dataset(const fs::path& dir, const DataConfig& cfg)
{
    Dataset d;
    d.articles = io::load_article_annotations(dir / "articles.jsonl", cfg);
    d.images = io::load_image_annotations(dir / "images.jsonl", cfg);
    if (fs::exists(dir / "captions.jsonl")) {
        d.captions = io::load_captions(dir / "captions.jsonl");
    }
    return d;
}

inline void save_dataset(const fs::path& dir, const Dataset& d)
{
    fs::create_directories(dir);
    io::save_articles(dir / "articles.jsonl", d.articles);
    io::save_images(dir / "images.jsonl", d.images);
    io::save_captions(dir / "captions.jsonl", d.captions);
}

// Feature widths inferred from the first records that carry them.
inline DataConfig infer_dims(const fs::path& dir)
{
    DataConfig cfg;
    bool found_e = false, found_v = false;
    auto scan = [](const fs::path& p, auto&& f) {
        std::ifstream in(p);
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            if (f(nlohmann::json::parse(line))) {
                return;
            }
        }
    };
    scan(dir / "articles.jsonl", [&](const nlohmann::json& j) {
        if (j.contains("token_features") && j["token_features"].is_object()) {
            cfg.d_e = j["token_features"].at("cols").get<std::size_t>();
            found_e = true;
            return true;
        }
        for (const auto& e : j.value("entities", nlohmann::json::array())) {
            if (e.contains("embedding") && e["embedding"].is_string()) {
                cfg.d_e = codec::decode_floats(e["embedding"].get<std::string>()).size();
                found_e = true;
                return true;
            }
        }
        return false;
    });
    scan(dir / "images.jsonl", [&](const nlohmann::json& j) {
        if (j.contains("global_features") && j["global_features"].is_object()) {
            cfg.d_v = j["global_features"].at("cols").get<std::size_t>();
            found_v = true;
            return true;
        }
        return false;
    });
    if (!found_e || !found_v) {
        throw SchemaError("cannot infer feature widths from " + dir.string());
    }
    return cfg;
}

inline std::string graph_filename(const std::string& article_id, const std::string& image_id)
{
    return article_id + "__" + image_id + ".graph.json";
}

struct GraphOptions {
    graph::MergeOptions merge;
    graph::ImageLimits limits;
};

inline MultiModalGraph build_graph(const ArticleAnnotations& a, const ImageAnnotations& img,
                                   const matcher::MatcherParams& m, const GraphOptions& opt = {})
{
    MultiModalGraph text = graph::build_text_subgraph(a);
    MultiModalGraph visual = graph::build_image_subgraph(img, opt.limits);
    return graph::build_mmkg(text, visual, m, opt.merge);
}

// One graph per caption record, in caption order.
inline std::vector<MultiModalGraph> build_graphs(const Dataset& d, const matcher::MatcherParams& m,
                                                 const GraphOptions& opt = {})
{
    std::vector<MultiModalGraph> out;
    for (const auto& c : d.captions) {
        out.push_back(build_graph(d.article(c.article_id), d.image(c.image_id), m, opt));
    }
    return out;
}

inline std::vector<MultiModalGraph> load_graphs(const Dataset& d, const fs::path& dir)
{
    std::vector<MultiModalGraph> out;
    for (const auto& c : d.captions) {
        out.push_back(io::load_graph(dir / graph_filename(c.article_id, c.image_id)));
    }
    return out;
}

inline std::vector<captioner::Sample> make_samples(const Dataset& d, const std::vector<MultiModalGraph>& graphs,
                                                   const Vocabulary& vocab)
{
    if (graphs.size() != d.captions.size()) {
        throw AlignmentError("one graph per caption required");
    }
    std::vector<captioner::Sample> out;
    for (std::size_t i = 0; i < d.captions.size(); ++i) {
        const auto& c = d.captions[i];
        out.push_back({captioner::make_input(d.article(c.article_id), d.image(c.image_id), graphs[i]),
                       vocab.encode(c.caption_text)});
    }
    return out;
}

inline std::vector<std::string> caption_texts(const Dataset& d)
{
    std::vector<std::string> out;
    for (const auto& c : d.captions) {
        out.push_back(c.caption_text);
    }
    return out;
}

inline Dataset toy_dataset(const synth::ToyCorpus& c) { return {c.articles, c.images, c.captions}; }

// ---------------------------------------------------------------------------
// Hypotheses: {"image_id", "article_id", "caption"}; entity lists:
// {"image_id", "entities": [{"surface", "class"}]}.

inline nlohmann::json entities_to_json(const std::vector<metrics::EntityRef>& es)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : es) {
        arr.push_back({{"surface", e.surface}, {"class", to_string(e.entity_class)}});
    }
    return arr;
}

inline std::vector<metrics::EntityRef> entities_from_json(const nlohmann::json& arr, const std::string& ctx)
{
    std::vector<metrics::EntityRef> out;
    for (const auto& e : arr) {
        auto cls = parse_entity_class(e.at("class").get<std::string>());
        if (!cls) {
            throw SchemaError(ctx + ": unknown entity class");
        }
        out.push_back({e.at("surface").get<std::string>(), *cls});
    }
    return out;
}

inline void save_hypotheses(const fs::path& path, const std::vector<metrics::CaptionEntry>& hyps,
                            const std::vector<std::string>& article_ids)
{
    std::vector<nlohmann::json> rows;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        nlohmann::json j{{"image_id", hyps[i].image_id},
                         {"article_id", i < article_ids.size() ? article_ids[i] : ""},
                         {"caption", hyps[i].text}};
        if (!hyps[i].entities.empty()) {
            j["entities"] = entities_to_json(hyps[i].entities);
        }
        rows.push_back(std::move(j));
    }
    io::detail::write_lines(path, rows);
}

inline std::vector<metrics::CaptionEntry> load_hypotheses(const fs::path& path)
{
    std::vector<metrics::CaptionEntry> out;
    io::detail::for_each_jsonl_line(path, [&](const nlohmann::json& j, const std::string& ctx) {
        metrics::CaptionEntry e;
        e.image_id = io::detail::get_string(j, "image_id", ctx);
        e.text = io::detail::get_string(j, "caption", ctx);
        if (j.contains("entities")) {
            e.entities = entities_from_json(j.at("entities"), ctx);
        }
        out.push_back(std::move(e));
    });
    return out;
}

inline std::map<std::string, std::vector<metrics::EntityRef>> load_entities(const fs::path& path)
{
    std::map<std::string, std::vector<metrics::EntityRef>> out;
    io::detail::for_each_jsonl_line(path, [&](const nlohmann::json& j, const std::string& ctx) {
        out[io::detail::get_string(j, "image_id", ctx)] = entities_from_json(io::detail::get_array(j, "entities", ctx), ctx);
    });
    return out;
}

inline void save_entities(const fs::path& path, const std::vector<std::string>& image_ids,
                          const std::vector<std::vector<metrics::EntityRef>>& entities)
{
    std::vector<nlohmann::json> rows;
    for (std::size_t i = 0; i < image_ids.size(); ++i) {
        rows.push_back({{"image_id", image_ids[i]}, {"entities", entities_to_json(entities[i])}});
    }
    io::detail::write_lines(path, rows);
}

} // namespace mmkg::pipeline
