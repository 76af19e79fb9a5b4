#pragma once
// JSON / JSONL serialization and validation for the core records.
//
// Files:
//   articles.jsonl  one ArticleAnnotations per line
//   images.jsonl    one ImageAnnotations per line
//   captions.jsonl  {image_id, article_id, caption_text} per line
//   graph.json      {article_id, image_id, nodes[], edges[]}
//
// Vectors are base64 strings of little-endian float32; matrices are
// {"rows", "cols", "data"} objects with a row-major base64 payload.

#include "mmkg/codec.hpp"
#include "mmkg/errors.hpp"
#include "mmkg/types.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace mmkg::io {

using nlohmann::json;

namespace detail {

inline const json& field(const json& j, const char* key, const std::string& ctx)
{
    if (!j.is_object()) {
        throw SchemaError(ctx + ": expected a JSON object");
    }
    auto it = j.find(key);
    if (it == j.end()) {
        throw SchemaError(ctx + ": missing field '" + key + "'");
    }
    return *it;
}

inline bool has_value(const json& j, const char* key)
{
    auto it = j.find(key);
    return it != j.end() && !it->is_null();
}

inline std::string get_string(const json& j, const char* key, const std::string& ctx)
{
    const json& v = field(j, key, ctx);
    if (!v.is_string()) {
        throw SchemaError(ctx + ": field '" + key + "' must be a string");
    }
    return v.get<std::string>();
}

inline double get_number(const json& j, const char* key, const std::string& ctx)
{
    const json& v = field(j, key, ctx);
    if (!v.is_number()) {
        throw SchemaError(ctx + ": field '" + key + "' must be a number");
    }
    return v.get<double>();
}

inline const json& get_array(const json& j, const char* key, const std::string& ctx)
{
    const json& v = field(j, key, ctx);
    if (!v.is_array()) {
        throw SchemaError(ctx + ": field '" + key + "' must be an array");
    }
    return v;
}

inline std::vector<float> get_vector(const json& j, const char* key, const std::string& ctx)
{
    const json& v = field(j, key, ctx);
    if (!v.is_string()) {
        throw SchemaError(ctx + ": field '" + key + "' must be a base64 string");
    }
    return codec::decode_floats(v.get_ref<const std::string&>());
}

inline Span get_span(const json& j, const char* key, const std::string& ctx)
{
    const json& v = get_array(j, key, ctx);
    if (v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned()) {
        throw SchemaError(ctx + ": field '" + key + "' must be [start, end] byte offsets");
    }
    return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

inline FeatureMatrix parse_matrix(const json& j, const std::string& ctx)
{
    FeatureMatrix m;
    const json& rows = field(j, "rows", ctx);
    const json& cols = field(j, "cols", ctx);
    if (!rows.is_number_unsigned() || !cols.is_number_unsigned()) {
        throw SchemaError(ctx + ": matrix rows/cols must be non-negative integers");
    }
    m.rows = rows.get<std::size_t>();
    m.cols = cols.get<std::size_t>();
    m.data = get_vector(j, "data", ctx);
    if (m.data.size() != m.rows * m.cols) {
        throw DimensionError(ctx + ": matrix payload has " + std::to_string(m.data.size()) +
                             " values, expected " + std::to_string(m.rows * m.cols));
    }
    return m;
}

inline json matrix_to_json(const FeatureMatrix& m)
{
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", codec::encode_floats(m.data)}};
}

template <class Fn>
void for_each_jsonl_line(const std::filesystem::path& path, Fn&& fn)
{
    std::ifstream in(path);
    if (!in) {
        throw SchemaError("cannot open " + path.string());
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string ctx = path.filename().string() + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError(ctx + ": " + e.what());
        }
        fn(j, ctx);
    }
}

inline void write_lines(const std::filesystem::path& path, const std::vector<json>& rows)
{
    std::ofstream out(path);
    if (!out) {
        throw SchemaError("cannot write " + path.string());
    }
    for (const auto& r : rows) {
        out << r.dump() << '\n';
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Articles

inline void validate(const ArticleAnnotations& a, const DataConfig& cfg)
{
    const std::string ctx = "article '" + a.article_id + "'";
    std::unordered_map<std::string, const EntityMention*> by_id;
    for (const auto& e : a.entities) {
        if (e.char_span.start >= e.char_span.end) {
            throw SchemaError(ctx + ": entity '" + e.id + "' has an empty or inverted span");
        }
        if (e.char_span.end > a.text.size()) {
            throw SchemaError(ctx + ": entity '" + e.id + "' span exceeds the text");
        }
        if (e.embedding && e.embedding->size() != cfg.d_e) {
            throw DimensionError(ctx + ": entity '" + e.id + "' embedding has dimension " +
                                 std::to_string(e.embedding->size()) + ", expected " +
                                 std::to_string(cfg.d_e));
        }
        if (!by_id.emplace(e.id, &e).second) {
            throw SchemaError(ctx + ": duplicate entity id '" + e.id + "'");
        }
    }
    for (const auto& t : a.triples) {
        if (!by_id.contains(t.head_id)) {
            throw ReferenceError(ctx + ": triple cites unknown head '" + t.head_id + "'");
        }
        if (!by_id.contains(t.tail_id)) {
            throw ReferenceError(ctx + ": triple cites unknown tail '" + t.tail_id + "'");
        }
        if (t.head_id == t.tail_id) {
            throw SchemaError(ctx + ": triple head and tail are both '" + t.head_id + "'");
        }
        if (t.relation_text.empty()) {
            throw SchemaError(ctx + ": triple with empty relation text");
        }
        if (t.relation_embedding && t.relation_embedding->size() != cfg.d_e) {
            throw DimensionError(ctx + ": relation embedding has dimension " +
                                 std::to_string(t.relation_embedding->size()));
        }
    }
    for (const auto& chain : a.coref_chains) {
        if (chain.mention_ids.size() < 2) {
            throw SchemaError(ctx + ": coreference chain shorter than 2");
        }
        std::unordered_set<std::string> seen;
        std::size_t prev_start = 0;
        for (std::size_t i = 0; i < chain.mention_ids.size(); ++i) {
            const auto& id = chain.mention_ids[i];
            auto it = by_id.find(id);
            if (it == by_id.end()) {
                throw ReferenceError(ctx + ": coreference chain cites unknown entity '" + id + "'");
            }
            if (!seen.insert(id).second) {
                throw SchemaError(ctx + ": coreference chain repeats '" + id + "'");
            }
            std::size_t start = it->second->char_span.start;
            if (i > 0 && start < prev_start) {
                throw SchemaError(ctx + ": coreference chain not sorted by span start");
            }
            prev_start = start;
        }
    }
    if (a.token_features) {
        if (a.token_features->rows > cfg.max_article_len) {
            throw SchemaError(ctx + ": " + std::to_string(a.token_features->rows) +
                              " token rows exceed the article limit of " +
                              std::to_string(cfg.max_article_len));
        }
        if (a.token_features->rows > 0 && a.token_features->cols != cfg.d_e) {
            throw DimensionError(ctx + ": token features have dimension " +
                                 std::to_string(a.token_features->cols));
        }
    }
}

inline ArticleAnnotations parse_article(const json& j, const DataConfig& cfg,
                                        const std::string& ctx = "article")
{
    using namespace detail;
    ArticleAnnotations a;
    a.article_id = get_string(j, "article_id", ctx);
    a.text = get_string(j, "text", ctx);
    for (const auto& ej : get_array(j, "entities", ctx)) {
        EntityMention e;
        e.id = get_string(ej, "id", ctx);
        e.surface = get_string(ej, "surface", ctx);
        auto cls = parse_entity_class(get_string(ej, "entity_class", ctx));
        if (!cls) {
            throw SchemaError(ctx + ": unknown entity_class for '" + e.id + "'");
        }
        e.entity_class = *cls;
        e.char_span = get_span(ej, "char_span", ctx);
        if (has_value(ej, "wiki_id")) {
            e.wiki_id = get_string(ej, "wiki_id", ctx);
        }
        if (has_value(ej, "embedding")) {
            e.embedding = get_vector(ej, "embedding", ctx);
        }
        a.entities.push_back(std::move(e));
    }
    if (has_value(j, "triples")) {
        for (const auto& tj : get_array(j, "triples", ctx)) {
            RelationTriple t;
            t.head_id = get_string(tj, "head_id", ctx);
            t.relation_text = get_string(tj, "relation_text", ctx);
            t.relation_span = get_span(tj, "relation_span", ctx);
            t.tail_id = get_string(tj, "tail_id", ctx);
            if (has_value(tj, "relation_embedding")) {
                t.relation_embedding = get_vector(tj, "relation_embedding", ctx);
            }
            a.triples.push_back(std::move(t));
        }
    }
    if (has_value(j, "coref_chains")) {
        for (const auto& cj : get_array(j, "coref_chains", ctx)) {
            if (!cj.is_array()) {
                throw SchemaError(ctx + ": coreference chain must be an array of ids");
            }
            CorefChain chain;
            for (const auto& id : cj) {
                if (!id.is_string()) {
                    throw SchemaError(ctx + ": coreference chain ids must be strings");
                }
                chain.mention_ids.push_back(id.get<std::string>());
            }
            a.coref_chains.push_back(std::move(chain));
        }
    }
    if (has_value(j, "token_features")) {
        a.token_features = parse_matrix(j.at("token_features"), ctx + " token_features");
    }
    validate(a, cfg);
    return a;
}

inline json to_json(const ArticleAnnotations& a)
{
    json entities = json::array();
    for (const auto& e : a.entities) {
        json ej{{"id", e.id},
                {"surface", e.surface},
                {"entity_class", to_string(e.entity_class)},
                {"char_span", {e.char_span.start, e.char_span.end}},
                {"wiki_id", e.wiki_id ? json(*e.wiki_id) : json(nullptr)},
                {"embedding", e.embedding ? json(codec::encode_floats(*e.embedding)) : json(nullptr)}};
        entities.push_back(std::move(ej));
    }
    json triples = json::array();
    for (const auto& t : a.triples) {
        triples.push_back({{"head_id", t.head_id},
                           {"relation_text", t.relation_text},
                           {"relation_span", {t.relation_span.start, t.relation_span.end}},
                           {"tail_id", t.tail_id},
                           {"relation_embedding", t.relation_embedding
                                                      ? json(codec::encode_floats(*t.relation_embedding))
                                                      : json(nullptr)}});
    }
    json chains = json::array();
    for (const auto& c : a.coref_chains) {
        chains.push_back(c.mention_ids);
    }
    return json{{"article_id", a.article_id},
                {"text", a.text},
                {"entities", std::move(entities)},
                {"triples", std::move(triples)},
                {"coref_chains", std::move(chains)},
                {"token_features", a.token_features ? detail::matrix_to_json(*a.token_features)
                                                    : json(nullptr)}};
}

inline std::vector<ArticleAnnotations> load_article_annotations(const std::filesystem::path& path,
                                                                const DataConfig& cfg)
{
    std::vector<ArticleAnnotations> out;
    detail::for_each_jsonl_line(path, [&](const json& j, const std::string& ctx) {
        out.push_back(parse_article(j, cfg, ctx));
    });
    return out;
}

inline void save_articles(const std::filesystem::path& path, const std::vector<ArticleAnnotations>& rows)
{
    std::vector<json> js;
    for (const auto& a : rows) {
        js.push_back(to_json(a));
    }
    detail::write_lines(path, js);
}

// ---------------------------------------------------------------------------
// Images

inline void validate(const ImageAnnotations& img, const DataConfig& cfg)
{
    const std::string ctx = "image '" + img.image_id + "'";
    if (img.global_features.rows > 0 && img.global_features.cols != cfg.d_v) {
        throw DimensionError(ctx + ": global features have dimension " +
                             std::to_string(img.global_features.cols));
    }
    for (const auto& d : img.detections) {
        if (!(d.bbox.w > 0) || !(d.bbox.h > 0)) {
            throw SchemaError(ctx + ": detection with non-positive box size");
        }
        if (!(d.score >= 0.0 && d.score <= 1.0)) {
            throw SchemaError(ctx + ": detection score outside [0, 1]");
        }
        if (d.feature.size() != cfg.d_v) {
            throw DimensionError(ctx + ": detection feature has dimension " +
                                 std::to_string(d.feature.size()) + ", expected " +
                                 std::to_string(cfg.d_v));
        }
    }
}

inline ImageAnnotations parse_image(const json& j, const DataConfig& cfg, const std::string& ctx = "image")
{
    using namespace detail;
    ImageAnnotations img;
    img.image_id = get_string(j, "image_id", ctx);
    img.global_features = parse_matrix(field(j, "global_features", ctx), ctx + " global_features");
    for (const auto& dj : get_array(j, "detections", ctx)) {
        Detection d;
        std::string kind = get_string(dj, "kind", ctx);
        if (kind == "OBJECT") {
            d.kind = DetectionKind::Object;
        } else if (kind == "FACE") {
            d.kind = DetectionKind::Face;
        } else {
            throw SchemaError(ctx + ": unknown detection kind '" + kind + "'");
        }
        const json& bb = get_array(dj, "bbox", ctx);
        if (bb.size() != 4) {
            throw SchemaError(ctx + ": bbox must be [x, y, w, h]");
        }
        for (const auto& v : bb) {
            if (!v.is_number()) {
                throw SchemaError(ctx + ": bbox entries must be numbers");
            }
        }
        d.bbox = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
        d.score = get_number(dj, "score", ctx);
        if (has_value(dj, "class_label")) {
            d.class_label = get_string(dj, "class_label", ctx);
        }
        d.feature = get_vector(dj, "feature", ctx);
        img.detections.push_back(std::move(d));
    }
    validate(img, cfg);
    return img;
}

inline json to_json(const ImageAnnotations& img)
{
    json dets = json::array();
    for (const auto& d : img.detections) {
        dets.push_back({{"kind", to_string(d.kind)},
                        {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}},
                        {"score", d.score},
                        {"class_label", d.class_label},
                        {"feature", codec::encode_floats(d.feature)}});
    }
    return json{{"image_id", img.image_id},
                {"global_features", detail::matrix_to_json(img.global_features)},
                {"detections", std::move(dets)}};
}

inline std::vector<ImageAnnotations> load_image_annotations(const std::filesystem::path& path,
                                                            const DataConfig& cfg)
{
    std::vector<ImageAnnotations> out;
    detail::for_each_jsonl_line(path, [&](const json& j, const std::string& ctx) {
        out.push_back(parse_image(j, cfg, ctx));
    });
    return out;
}

inline void save_images(const std::filesystem::path& path, const std::vector<ImageAnnotations>& rows)
{
    std::vector<json> js;
    for (const auto& r : rows) {
        js.push_back(to_json(r));
    }
    detail::write_lines(path, js);
}

// ---------------------------------------------------------------------------
// Captions (token ids are filled in by the vocabulary, not stored)

inline std::vector<CaptionRecord> load_captions(const std::filesystem::path& path)
{
    std::vector<CaptionRecord> out;
    detail::for_each_jsonl_line(path, [&](const json& j, const std::string& ctx) {
        CaptionRecord c;
        c.image_id = detail::get_string(j, "image_id", ctx);
        c.article_id = detail::has_value(j, "article_id") ? detail::get_string(j, "article_id", ctx) : "";
        c.caption_text = detail::get_string(j, "caption_text", ctx);
        out.push_back(std::move(c));
    });
    return out;
}

inline void save_captions(const std::filesystem::path& path, const std::vector<CaptionRecord>& rows)
{
    std::vector<json> js;
    for (const auto& c : rows) {
        js.push_back({{"image_id", c.image_id}, {"article_id", c.article_id}, {"caption_text", c.caption_text}});
    }
    detail::write_lines(path, js);
}

// ---------------------------------------------------------------------------
// Graphs

inline void validate(const MultiModalGraph& g)
{
    std::unordered_map<std::string, NodeKind> kinds;
    for (const auto& n : g.nodes) {
        if (!kinds.emplace(n.node_id, n.kind).second) {
            throw SchemaError("graph: duplicate node id '" + n.node_id + "'");
        }
    }
    std::set<std::tuple<std::string, std::string, EdgeKind>> seen;
    for (const auto& e : g.edges) {
        auto s = kinds.find(e.src);
        auto d = kinds.find(e.dst);
        if (s == kinds.end() || d == kinds.end()) {
            throw SchemaError("graph: edge " + e.src + " -> " + e.dst + " references a missing node");
        }
        if (!seen.emplace(e.src, e.dst, e.kind).second) {
            throw SchemaError("graph: duplicate edge " + e.src + " -> " + e.dst);
        }
        if (e.kind == EdgeKind::CrossModal && !(is_text_kind(s->second) && is_visual_kind(d->second))) {
            throw SchemaError("graph: cross-modal edge " + e.src + " -> " + e.dst +
                              " must run from a text node to a visual node");
        }
    }
}

inline json to_json(const MultiModalGraph& g)
{
    json nodes = json::array();
    for (const auto& n : g.nodes) {
        nodes.push_back({{"node_id", n.node_id},
                         {"kind", to_string(n.kind)},
                         {"label", n.label},
                         {"feature", n.feature.empty() ? json(nullptr) : json(codec::encode_floats(n.feature))},
                         {"source_ref", n.source_ref}});
    }
    json edges = json::array();
    for (const auto& e : g.edges) {
        edges.push_back({{"src", e.src}, {"dst", e.dst}, {"kind", to_string(e.kind)}});
    }
    return json{{"article_id", g.article_id},
                {"image_id", g.image_id},
                {"nodes", std::move(nodes)},
                {"edges", std::move(edges)}};
}

inline MultiModalGraph parse_graph(const json& j, const std::string& ctx = "graph")
{
    using namespace detail;
    MultiModalGraph g;
    if (has_value(j, "article_id")) {
        g.article_id = get_string(j, "article_id", ctx);
    }
    if (has_value(j, "image_id")) {
        g.image_id = get_string(j, "image_id", ctx);
    }
    for (const auto& nj : get_array(j, "nodes", ctx)) {
        GraphNode n;
        n.node_id = get_string(nj, "node_id", ctx);
        std::string kind = get_string(nj, "kind", ctx);
        bool found = false;
        for (std::size_t i = 0; i < kNodeKindNames.size(); ++i) {
            if (kNodeKindNames[i] == kind) {
                n.kind = static_cast<NodeKind>(i);
                found = true;
            }
        }
        if (!found) {
            throw SchemaError(ctx + ": unknown node kind '" + kind + "'");
        }
        n.label = get_string(nj, "label", ctx);
        if (has_value(nj, "feature")) {
            n.feature = get_vector(nj, "feature", ctx);
        }
        if (has_value(nj, "source_ref")) {
            n.source_ref = get_string(nj, "source_ref", ctx);
        }
        g.nodes.push_back(std::move(n));
    }
    for (const auto& ej : get_array(j, "edges", ctx)) {
        GraphEdge e;
        e.src = get_string(ej, "src", ctx);
        e.dst = get_string(ej, "dst", ctx);
        std::string kind = get_string(ej, "kind", ctx);
        bool found = false;
        for (std::size_t i = 0; i < kEdgeKindNames.size(); ++i) {
            if (kEdgeKindNames[i] == kind) {
                e.kind = static_cast<EdgeKind>(i);
                found = true;
            }
        }
        if (!found) {
            throw SchemaError(ctx + ": unknown edge kind '" + kind + "'");
        }
        g.edges.push_back(std::move(e));
    }
    validate(g);
    return g;
}

inline void save_graph(const MultiModalGraph& g, const std::filesystem::path& path)
{
    validate(g);
    std::ofstream out(path);
    if (!out) {
        throw SchemaError("cannot write " + path.string());
    }
    out << to_json(g).dump(1) << '\n';
}

inline MultiModalGraph load_graph(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw SchemaError("cannot open " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path.filename().string() + ": " + e.what());
    }
    return parse_graph(j, path.filename().string());
}

} // namespace mmkg::io
