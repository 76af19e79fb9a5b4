#pragma once
// Caption metrics: BLEU-4, ROUGE-L, CIDEr-D, entity F1, plus class-label
// masking of named entities.
//
// Normalization: ASCII letters are lowercased, ASCII punctuation characters
// are deleted, and the result is split on whitespace.

#include "mmkg/errors.hpp"
#include "mmkg/types.hpp"
#include "mmkg/vocab.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace mmkg::metrics {

using Tokens = std::vector<std::string>;

inline Tokens normalize(std::string_view text)
{
    std::string s;
    s.reserve(text.size());
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (std::ispunct(c)) {
            continue;
        }
        s += static_cast<char>(std::tolower(c));
    }
    return split_whitespace(s);
}

struct EntityRef {
    std::string surface;
    EntityClass entity_class = EntityClass::Other;
    bool operator==(const EntityRef&) const = default;
};

struct EvalInstance {
    Tokens hypothesis;
    std::vector<Tokens> references;
    std::vector<EntityRef> hyp_entities;
    std::vector<EntityRef> ref_entities;
};

using Corpus = std::vector<EvalInstance>;

namespace detail {

using NgramCounts = std::map<Tokens, int>;

inline NgramCounts ngrams(const Tokens& t, std::size_t n)
{
    NgramCounts out;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
        ++out[Tokens(t.begin() + std::ptrdiff_t(i), t.begin() + std::ptrdiff_t(i + n))];
    }
    return out;
}

inline void require_non_empty(const Corpus& c, const char* what)
{
    if (c.empty()) {
        throw EmptyCorpus(std::string(what) + " needs at least one instance");
    }
    for (const auto& inst : c) {
        if (inst.references.empty()) {
            throw EmptyCorpus(std::string(what) + ": instance without references");
        }
    }
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b)
{
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

} // namespace detail

// Corpus BLEU-4 with uniform weights. Clipped n-gram matches and totals are
// summed over the corpus; the reference length per instance is the one
// closest to the hypothesis length (shorter on ties). Each precision is
// (matches + 1e-9) / (total + 1e-9), or 1e-9 when there are no hypothesis
// n-grams of that order.
inline double bleu4(const Corpus& corpus)
{
    detail::require_non_empty(corpus, "bleu4");
    constexpr double eps = 1e-9;
    double match[4] = {0, 0, 0, 0};
    double total[4] = {0, 0, 0, 0};
    double hyp_len = 0, ref_len = 0;
    for (const auto& inst : corpus) {
        const Tokens& h = inst.hypothesis;
        hyp_len += double(h.size());
        std::size_t best = inst.references[0].size();
        for (const auto& r : inst.references) {
            auto d = [&](std::size_t len) { return len > h.size() ? len - h.size() : h.size() - len; };
            if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) {
                best = r.size();
            }
        }
        ref_len += double(best);
        for (std::size_t n = 1; n <= 4; ++n) {
            auto hc = detail::ngrams(h, n);
            detail::NgramCounts max_ref;
            for (const auto& r : inst.references) {
                for (const auto& [g, c] : detail::ngrams(r, n)) {
                    max_ref[g] = std::max(max_ref[g], c);
                }
            }
            for (const auto& [g, c] : hc) {
                auto it = max_ref.find(g);
                match[n - 1] += double(std::min(c, it == max_ref.end() ? 0 : it->second));
                total[n - 1] += double(c);
            }
        }
    }
    double log_sum = 0.0;
    for (int n = 0; n < 4; ++n) {
        double p = total[n] > 0 ? (match[n] + eps) / (total[n] + eps) : eps;
        log_sum += std::log(p);
    }
    double bp = hyp_len >= ref_len ? 1.0 : (hyp_len > 0 ? std::exp(1.0 - ref_len / hyp_len) : 0.0);
    return bp * std::exp(log_sum / 4.0);
}

// Per-instance ROUGE-L F-measure (beta = 1.2), averaged. With several
// references, precision and recall are each maximized over references.
inline double rouge_l(const Corpus& corpus, double beta = 1.2)
{
    detail::require_non_empty(corpus, "rouge_l");
    double sum = 0.0;
    for (const auto& inst : corpus) {
        double prec = 0.0, rec = 0.0;
        for (const auto& r : inst.references) {
            double l = double(detail::lcs_length(inst.hypothesis, r));
            if (!inst.hypothesis.empty()) {
                prec = std::max(prec, l / double(inst.hypothesis.size()));
            }
            if (!r.empty()) {
                rec = std::max(rec, l / double(r.size()));
            }
        }
        if (prec > 0.0 && rec > 0.0) {
            sum += (1.0 + beta * beta) * prec * rec / (rec + beta * beta * prec);
        }
    }
    return sum / double(corpus.size());
}

// CIDEr-D as computed by the common captioning scorer: raw-count TF times
// log(N) - log(max(1, df)) with df over the instances' reference sets,
// clipped hypothesis weights, Gaussian length penalty (sigma 6), mean over
// n = 1..4, averaged over references, times 10. Following that scorer the
// length entering the penalty is the number of bigrams.
inline double cider_d(const Corpus& corpus, double sigma = 6.0)
{
    detail::require_non_empty(corpus, "cider_d");
    if (corpus.size() < 2) {
        throw CorpusTooSmall("cider_d needs at least two instances for document frequencies");
    }
    std::map<Tokens, double> df;
    for (const auto& inst : corpus) {
        std::set<Tokens> seen;
        for (const auto& r : inst.references) {
            for (std::size_t n = 1; n <= 4; ++n) {
                for (const auto& [g, c] : detail::ngrams(r, n)) {
                    seen.insert(g);
                }
            }
        }
        for (const auto& g : seen) {
            df[g] += 1.0;
        }
    }
    const double log_n = std::log(double(corpus.size()));

    struct Vec {
        std::map<Tokens, double> w[4];
        double norm[4] = {0, 0, 0, 0};
        double length = 0;
    };
    auto to_vec = [&](const Tokens& t) {
        Vec v;
        for (std::size_t n = 1; n <= 4; ++n) {
            for (const auto& [g, c] : detail::ngrams(t, n)) {
                auto it = df.find(g);
                double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
                double x = double(c) * (log_n - d);
                v.w[n - 1][g] = x;
                v.norm[n - 1] += x * x;
                if (n == 2) {
                    v.length += double(c);
                }
            }
        }
        for (double& nm : v.norm) {
            nm = std::sqrt(nm);
        }
        return v;
    };

    double total = 0.0;
    for (const auto& inst : corpus) {
        Vec h = to_vec(inst.hypothesis);
        double score = 0.0;
        for (const auto& r : inst.references) {
            Vec rv = to_vec(r);
            double delta = h.length - rv.length;
            double sum_n = 0.0;
            for (int n = 0; n < 4; ++n) {
                double val = 0.0;
                for (const auto& [g, x] : h.w[n]) {
                    auto it = rv.w[n].find(g);
                    if (it != rv.w[n].end()) {
                        val += std::min(x, it->second) * it->second;
                    }
                }
                if (h.norm[n] != 0.0 && rv.norm[n] != 0.0) {
                    val /= h.norm[n] * rv.norm[n];
                }
                sum_n += val * std::exp(-(delta * delta) / (2.0 * sigma * sigma));
            }
            score += sum_n / 4.0 * 10.0;
        }
        total += score / double(inst.references.size());
    }
    return total / double(corpus.size());
}

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EntityF1Options {
    bool case_fold = false;
    bool macro = false;
};

inline PRF prf(double matched, double n_hyp, double n_ref)
{
    PRF r;
    r.precision = n_hyp > 0 ? matched / n_hyp : 0.0;
    r.recall = n_ref > 0 ? matched / n_ref : 0.0;
    r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

// Exact surface matching as a multiset intersection per instance. Micro
// averaging sums counts over the corpus; macro averages per-instance scores
// over instances with at least one entity on either side.
inline PRF entity_f1(const Corpus& corpus, const EntityF1Options& opt = {})
{
    auto key = [&](const std::string& s) {
        if (!opt.case_fold) {
            return s;
        }
        std::string out = s;
        std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return char(std::tolower(c)); });
        return out;
    };
    double matched = 0, n_hyp = 0, n_ref = 0;
    PRF macro_sum;
    std::size_t counted = 0;
    for (const auto& inst : corpus) {
        std::map<std::string, int> ref_count;
        for (const auto& e : inst.ref_entities) {
            ++ref_count[key(e.surface)];
        }
        double m = 0;
        for (const auto& e : inst.hyp_entities) {
            auto it = ref_count.find(key(e.surface));
            if (it != ref_count.end() && it->second > 0) {
                --it->second;
                ++m;
            }
        }
        matched += m;
        n_hyp += double(inst.hyp_entities.size());
        n_ref += double(inst.ref_entities.size());
        if (!inst.hyp_entities.empty() || !inst.ref_entities.empty()) {
            PRF r = prf(m, double(inst.hyp_entities.size()), double(inst.ref_entities.size()));
            macro_sum.precision += r.precision;
            macro_sum.recall += r.recall;
            macro_sum.f1 += r.f1;
            ++counted;
        }
    }
    if (!opt.macro) {
        return prf(matched, n_hyp, n_ref);
    }
    if (counted == 0) {
        return {};
    }
    return {macro_sum.precision / double(counted), macro_sum.recall / double(counted), macro_sum.f1 / double(counted)};
}

// Replaces entity occurrences with their class label, scanning left to right
// and taking the longest surface (in tokens) that matches at each position.
// Surfaces are split on whitespace and compared token by token.
inline Tokens mask_entities(const Tokens& tokens, const std::vector<EntityRef>& entities)
{
    std::vector<std::pair<Tokens, std::string>> pats;
    for (const auto& e : entities) {
        Tokens s = split_whitespace(e.surface);
        if (!s.empty()) {
            pats.emplace_back(std::move(s), std::string(to_string(e.entity_class)));
        }
    }
    Tokens out;
    std::size_t i = 0;
    while (i < tokens.size()) {
        const std::pair<Tokens, std::string>* best = nullptr;
        for (const auto& p : pats) {
            const Tokens& s = p.first;
            if (i + s.size() <= tokens.size() && std::equal(s.begin(), s.end(), tokens.begin() + std::ptrdiff_t(i)) &&
                (!best || s.size() > best->first.size())) {
                best = &p;
            }
        }
        if (best) {
            out.push_back(best->second);
            i += best->first.size();
        } else {
            out.push_back(tokens[i]);
            ++i;
        }
    }
    return out;
}

// Entities found in `text` by longest-match lookup of lexicon surfaces over
// its whitespace tokens, in order of occurrence. Case-sensitive.
inline std::vector<EntityRef> gazetteer_entities(std::string_view text, const std::vector<EntityRef>& lexicon)
{
    Tokens tokens = split_whitespace(text);
    std::vector<EntityRef> found;
    std::size_t i = 0;
    while (i < tokens.size()) {
        const EntityRef* best = nullptr;
        std::size_t best_len = 0;
        for (const auto& e : lexicon) {
            Tokens s = split_whitespace(e.surface);
            if (!s.empty() && s.size() > best_len && i + s.size() <= tokens.size() &&
                std::equal(s.begin(), s.end(), tokens.begin() + std::ptrdiff_t(i))) {
                best = &e;
                best_len = s.size();
            }
        }
        if (best) {
            found.push_back(*best);
            i += best_len;
        } else {
            ++i;
        }
    }
    return found;
}

// ---------------------------------------------------------------------------
// Corpus evaluation

enum class Mode { Standard, EntityMasked };

inline Mode parse_mode(const std::string& s)
{
    if (s == "standard") {
        return Mode::Standard;
    }
    if (s == "entity-masked" || s == "entity_masked") {
        return Mode::EntityMasked;
    }
    throw ConfigError("unknown evaluation mode '" + s + "'");
}

struct CaptionEntry {
    std::string image_id;
    std::string text;
    std::vector<EntityRef> entities;
};

struct CorpusReport {
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double cider_d = 0.0;
    std::optional<double> entity_precision;
    std::optional<double> entity_recall;
    std::optional<double> entity_f1;
};

inline nlohmann::json to_json(const CorpusReport& r)
{
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"bleu4", r.bleu4},
            {"rouge_l", r.rouge_l},
            {"cider_d", r.cider_d},
            {"entity_precision", opt(r.entity_precision)},
            {"entity_recall", opt(r.entity_recall)},
            {"entity_f1", opt(r.entity_f1)}};
}

// Builds one instance per reference, in reference order, pairing each with
// the hypothesis of the same image_id.
inline Corpus align(const std::vector<CaptionEntry>& hyps, const std::vector<CaptionEntry>& refs, Mode mode)
{
    std::map<std::string, const CaptionEntry*> by_id;
    for (const auto& h : hyps) {
        if (!by_id.emplace(h.image_id, &h).second) {
            throw AlignmentError("duplicate hypothesis for image '" + h.image_id + "'");
        }
    }
    if (hyps.size() != refs.size()) {
        throw AlignmentError(std::to_string(hyps.size()) + " hypotheses for " + std::to_string(refs.size()) +
                             " references");
    }
    auto masked = [](const CaptionEntry& e) {
        std::vector<EntityRef> norm;
        for (const auto& ent : e.entities) {
            Tokens t = normalize(ent.surface);
            std::string joined;
            for (const auto& tok : t) {
                joined += (joined.empty() ? "" : " ") + tok;
            }
            norm.push_back({joined, ent.entity_class});
        }
        return mask_entities(normalize(e.text), norm);
    };
    Corpus corpus;
    std::set<std::string> seen;
    for (const auto& r : refs) {
        auto it = by_id.find(r.image_id);
        if (it == by_id.end()) {
            throw AlignmentError("no hypothesis for image '" + r.image_id + "'");
        }
        if (!seen.insert(r.image_id).second) {
            throw AlignmentError("duplicate reference for image '" + r.image_id + "'");
        }
        const CaptionEntry& h = *it->second;
        EvalInstance inst;
        if (mode == Mode::EntityMasked) {
            inst.hypothesis = masked(h);
            inst.references = {masked(r)};
        } else {
            inst.hypothesis = normalize(h.text);
            inst.references = {normalize(r.text)};
        }
        inst.hyp_entities = h.entities;
        inst.ref_entities = r.entities;
        corpus.push_back(std::move(inst));
    }
    return corpus;
}

inline CorpusReport evaluate_corpus(const std::vector<CaptionEntry>& hyps, const std::vector<CaptionEntry>& refs,
                                    Mode mode, const EntityF1Options& opt = {})
{
    Corpus corpus = align(hyps, refs, mode);
    CorpusReport r;
    r.bleu4 = bleu4(corpus);
    r.rouge_l = rouge_l(corpus);
    r.cider_d = cider_d(corpus);
    if (mode == Mode::Standard) {
        PRF e = entity_f1(corpus, opt);
        r.entity_precision = e.precision;
        r.entity_recall = e.recall;
        r.entity_f1 = e.f1;
    }
    return r;
}

} // namespace mmkg::metrics
