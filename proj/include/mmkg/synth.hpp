#pragma once
// Toy captioning corpus in which the person named by each caption can only
// be recovered from the graph. Persons borrow their text embedding and face
// feature from the first KB entries; article tokens that belong to entities
// share a single feature vector, and image features depend only on the event.

#include "mmkg/kb.hpp"
#include "mmkg/metrics.hpp"
#include "mmkg/tensor.hpp"
#include "mmkg/types.hpp"

#include <array>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmkg::synth {

struct Event {
    const char* verb;
    const char* object;
    const char* place;
    const char* org;
};

inline constexpr std::array<const char*, 10> kPersons{"Alonso", "Hamilton", "Vettel", "Button",  "Webber",
                                                      "Raikkonen", "Massa", "Kubica", "Rosberg", "Senna"};

inline constexpr std::array<Event, 5> kEvents{{{"won", "race", "Monza", "Ferrari"},
                                               {"crashed", "car", "Silverstone", "McLaren"},
                                               {"celebrated", "victory", "Monaco", "Renault"},
                                               {"tested", "tyres", "Suzuka", "Williams"},
                                               {"signed", "contract", "Interlagos", "Mercedes"}}};

struct CorpusConfig {
    std::size_t persons = 10;
    std::size_t events = 5;
    kb::SynthConfig kb; // persons are its first entries
    std::uint64_t seed = 11;
};

struct ToyCorpus {
    kb::KnowledgeBase kb;
    std::vector<ArticleAnnotations> articles;
    std::vector<ImageAnnotations> images;
    std::vector<CaptionRecord> captions;
    // Gold entities of each caption, aligned with `captions`.
    std::vector<std::vector<metrics::EntityRef>> caption_entities;
    // Every person and place surface, for recognizing entities in outputs.
    std::vector<metrics::EntityRef> lexicon;
};

namespace detail {

// Deterministic feature per word, keyed by the word itself.
inline std::vector<float> word_vector(const std::string& word, std::size_t dim, std::uint64_t seed)
{
    std::uint64_t h = seed ^ 0xcbf29ce484222325ULL;
    for (unsigned char c : word) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    std::mt19937_64 rng(h);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<float> v(dim);
    for (auto& x : v) {
        x = static_cast<float>(n(rng));
    }
    return v;
}

inline FeatureMatrix rows_to_matrix(const std::vector<std::vector<float>>& rows, std::size_t cols)
{
    FeatureMatrix m;
    m.rows = rows.size();
    m.cols = cols;
    for (const auto& r : rows) {
        m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
}

} // namespace detail

inline ToyCorpus make_corpus(const CorpusConfig& cfg)
{
    if (cfg.persons == 0 || cfg.persons > kPersons.size() || cfg.events == 0 || cfg.events > kEvents.size()) {
        throw ConfigError("toy corpus supports 1-10 persons and 1-5 events");
    }
    if (cfg.kb.entities < cfg.persons) {
        throw ConfigError("knowledge base must hold at least one entry per person");
    }
    ToyCorpus c;
    c.kb = kb::synth_kb(cfg.kb);
    const std::size_t d_e = cfg.kb.d_e;
    const std::size_t d_v = cfg.kb.d_v;
    const auto entity_token = detail::word_vector("<entity>", d_e, cfg.seed);

    for (std::size_t p = 0; p < cfg.persons; ++p) {
        c.lexicon.push_back({kPersons[p], EntityClass::Person});
    }
    for (std::size_t e = 0; e < cfg.events; ++e) {
        c.lexicon.push_back({kEvents[e].place, EntityClass::Facility});
    }

    for (std::size_t p = 0; p < cfg.persons; ++p) {
        const kb::KnowledgeBaseEntry& person = c.kb[p];
        const std::string name = kPersons[p];
        for (std::size_t e = 0; e < cfg.events; ++e) {
            const Event& ev = kEvents[e];
            const std::string sid = "s" + std::to_string(p) + "_" + std::to_string(e);

            // "<Name> <verb> the <object> at <Place> . <Name> thanked <Org> ."
            const std::string verb = ev.verb, object = ev.object, place = ev.place, org = ev.org;
            const std::string s1 = name + " " + verb + " the " + object + " at " + place + " .";
            const std::string text = s1 + " " + name + " thanked " + org + " .";
            ArticleAnnotations a;
            a.article_id = "a_" + sid;
            a.text = text;
            const std::size_t place_at = s1.size() - 2 - place.size();
            const std::size_t name2_at = s1.size() + 1;
            const std::size_t thanked_at = name2_at + name.size() + 1;
            const std::size_t org_at = thanked_at + 8;
            a.entities.push_back({"e1", name, EntityClass::Person, {0, name.size()}, person.wiki_id,
                                  person.entity_embedding});
            a.entities.push_back({"e2", place, EntityClass::Facility, {place_at, place_at + place.size()}, std::nullopt,
                                  detail::word_vector("place:" + place, d_e, cfg.seed)});
            a.entities.push_back({"e3", name, EntityClass::Person, {name2_at, name2_at + name.size()}, person.wiki_id,
                                  person.entity_embedding});
            a.entities.push_back({"e4", org, EntityClass::Org, {org_at, org_at + org.size()}, std::nullopt,
                                  detail::word_vector("org:" + org, d_e, cfg.seed)});
            const std::size_t verb_at = name.size() + 1;
            a.triples.push_back({"e1", verb, {verb_at, verb_at + verb.size()}, "e2", std::nullopt});
            a.triples.push_back({"e3", "thanked", {thanked_at, thanked_at + 7}, "e4", std::nullopt});
            a.coref_chains.push_back({{"e1", "e3"}});

            std::vector<std::vector<float>> token_rows;
            for (const auto& tok : split_whitespace(text)) {
                bool is_entity = tok == name || tok == place || tok == org;
                token_rows.push_back(is_entity ? entity_token : detail::word_vector("tok:" + tok, d_e, cfg.seed));
            }
            a.token_features = detail::rows_to_matrix(token_rows, d_e);

            ImageAnnotations img;
            img.image_id = "i_" + sid;
            img.global_features = detail::rows_to_matrix({detail::word_vector("scene:" + object, d_v, cfg.seed),
                                                          detail::word_vector("scene2:" + object, d_v, cfg.seed)},
                                                         d_v);
            img.detections.push_back({DetectionKind::Object, {10, 10, 50, 40}, 0.9, object,
                                      detail::word_vector("object:" + object, d_v, cfg.seed)});
            img.detections.push_back({DetectionKind::Face, {70, 5, 20, 20}, 0.95, "face", person.image_feature});

            c.articles.push_back(std::move(a));
            c.images.push_back(img);
            c.captions.push_back({img.image_id, "a_" + sid, {}, name + " " + verb + " the " + object + " at " + place});
            c.caption_entities.push_back({{name, EntityClass::Person}, {place, EntityClass::Facility}});
        }
    }
    return c;
}

} // namespace mmkg::synth
