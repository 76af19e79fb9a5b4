#pragma once
// Greedy and beam decoding over any next-token scorer. A scorer maps a
// prefix (starting with BOS) to a vector of log-probabilities.

#include "mmkg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <vector>

namespace mmkg::search {

template <class F>
concept StepScorer = requires(F f, std::span<const int> prefix) {
    { f(prefix) } -> std::convertible_to<Vector>;
};

struct Hypothesis {
    std::vector<int> tokens; // excludes BOS and EOS
    double log_prob = 0.0;
    bool ended_with_eos = false;
};

// Argmax each step (lowest id on ties) until EOS or max_len tokens.
template <StepScorer F>
Hypothesis greedy(F&& step, int bos, int eos, std::size_t max_len)
{
    std::vector<int> prefix{bos};
    Hypothesis h;
    while (h.tokens.size() < max_len) {
        Vector lp = step(std::span<const int>(prefix));
        Eigen::Index best = 0;
        for (Eigen::Index v = 1; v < lp.size(); ++v) {
            if (lp[v] > lp[best]) {
                best = v;
            }
        }
        h.log_prob += lp[best];
        if (best == eos) {
            h.ended_with_eos = true;
            break;
        }
        h.tokens.push_back(static_cast<int>(best));
        prefix.push_back(static_cast<int>(best));
    }
    return h;
}

// Beam search. Each step keeps the `beam` best extensions overall; an
// extension ending in EOS, or reaching max_len tokens, is set aside as
// finished. Returns the finished hypothesis maximizing
// log_prob / length^length_penalty (length counts EOS when present).
// Candidate ties are broken by hypothesis rank, then lowest token id, which
// makes beam = 1 identical to greedy decoding.
template <StepScorer F>
Hypothesis beam_search(F&& step, int bos, int eos, std::size_t beam, std::size_t max_len, double length_penalty = 0.0)
{
    if (beam == 0) {
        beam = 1;
    }
    auto normalized = [&](const Hypothesis& h) {
        if (length_penalty == 0.0) {
            return h.log_prob;
        }
        double len = static_cast<double>(h.tokens.size() + (h.ended_with_eos ? 1 : 0));
        return h.log_prob / std::pow(std::max(len, 1.0), length_penalty);
    };
    std::vector<Hypothesis> alive{Hypothesis{}};
    std::vector<Hypothesis> finished;
    if (max_len == 0) {
        return alive.front();
    }
    for (std::size_t t = 0; t < max_len && !alive.empty(); ++t) {
        struct Candidate {
            double score;
            std::size_t hyp;
            int token;
        };
        std::vector<Candidate> cands;
        for (std::size_t k = 0; k < alive.size(); ++k) {
            std::vector<int> prefix{bos};
            prefix.insert(prefix.end(), alive[k].tokens.begin(), alive[k].tokens.end());
            Vector lp = step(std::span<const int>(prefix));
            for (Eigen::Index v = 0; v < lp.size(); ++v) {
                cands.push_back({alive[k].log_prob + lp[v], k, static_cast<int>(v)});
            }
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
        std::vector<Hypothesis> next;
        for (std::size_t c = 0; c < std::min(beam, cands.size()); ++c) {
            Hypothesis h = alive[cands[c].hyp];
            h.log_prob = cands[c].score;
            if (cands[c].token == eos) {
                h.ended_with_eos = true;
                finished.push_back(std::move(h));
                continue;
            }
            h.tokens.push_back(cands[c].token);
            if (h.tokens.size() >= max_len) {
                finished.push_back(std::move(h));
            } else {
                next.push_back(std::move(h));
            }
        }
        alive = std::move(next);
        // Log-probabilities only decrease, so without length normalization
        // no live hypothesis can overtake the best finished one.
        if (length_penalty == 0.0 && !finished.empty() && !alive.empty()) {
            double best_done = -std::numeric_limits<double>::infinity();
            for (const auto& f : finished) {
                best_done = std::max(best_done, f.log_prob);
            }
            double best_alive = -std::numeric_limits<double>::infinity();
            for (const auto& a : alive) {
                best_alive = std::max(best_alive, a.log_prob);
            }
            if (best_done >= best_alive) {
                break;
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < finished.size(); ++i) {
        if (normalized(finished[i]) > normalized(finished[best])) {
            best = i;
        }
    }
    return finished.empty() ? Hypothesis{} : finished[best];
}

} // namespace mmkg::search
