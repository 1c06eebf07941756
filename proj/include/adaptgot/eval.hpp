#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "adaptgot/corpus.hpp"
#include "adaptgot/error.hpp"
#include "adaptgot/io.hpp"
#include "adaptgot/matrix.hpp"
#include "adaptgot/rng.hpp"

namespace adaptgot::eval {

struct RankingQuery {
    UserId user = 0;
    std::vector<PoiId> history;
    PoiId target = 0;
};

struct Split {
    std::vector<RankingQuery> train;  // every next-visit prefix inside the history part
    std::vector<RankingQuery> test;   // one leave-last-out query per eligible user
};

inline Split split(const CheckinCorpus& c) {
    Split s;
    for (UserId u = 0; u < c.num_users(); ++u) {
        const auto seq = c.user_checkins(u);
        if (seq.size() < 2) continue;
        std::vector<PoiId> visits;
        for (const auto& ck : seq) visits.push_back(ck.poi);
        for (std::size_t t = 1; t + 1 < visits.size(); ++t)
            s.train.push_back({u, std::vector<PoiId>(visits.begin(), visits.begin() + static_cast<std::ptrdiff_t>(t)), visits[t]});
        s.test.push_back({u, std::vector<PoiId>(visits.begin(), visits.end() - 1), visits.back()});
    }
    if (s.test.empty()) throw ValidationError("eval: no user has at least 2 check-ins");
    return s;
}

// ---------------------------------------------------------------------------
// Ranking metrics

/// Candidate ids by descending score; ties go to the smaller id.
inline std::vector<PoiId> rank_candidates(const std::vector<double>& scores) {
    std::vector<PoiId> order(scores.size());
    std::iota(order.begin(), order.end(), PoiId{0});
    std::stable_sort(order.begin(), order.end(), [&](PoiId a, PoiId b) { return scores[a] > scores[b]; });
    return order;
}

/// 1-based position of `target` under the same ordering, without sorting.
inline std::size_t rank_of(const std::vector<double>& scores, PoiId target) {
    if (target >= scores.size()) throw ValidationError("eval: target outside candidate set");
    std::size_t rank = 1;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > scores[target] || (scores[j] == scores[target] && j < target)) ++rank;
    return rank;
}

inline std::size_t rank_in(const std::vector<PoiId>& ranked, PoiId target) {
    const auto it = std::find(ranked.begin(), ranked.end(), target);
    if (it == ranked.end()) throw ValidationError("eval: target outside candidate set");
    return static_cast<std::size_t>(it - ranked.begin()) + 1;
}

inline void check_k(std::size_t k) {
    if (k < 1) throw ValidationError("eval: K must be >= 1");
}

inline double recall_from_rank(std::size_t rank, std::size_t k) {
    check_k(k);
    return rank <= k ? 1.0 : 0.0;
}

inline double ndcg_from_rank(std::size_t rank, std::size_t k) {
    check_k(k);
    return rank <= k ? 1.0 / std::log2(1.0 + static_cast<double>(rank)) : 0.0;
}

inline double recall_at_k(const std::vector<PoiId>& ranked, PoiId target, std::size_t k) {
    return recall_from_rank(rank_in(ranked, target), k);
}

inline double ndcg_at_k(const std::vector<PoiId>& ranked, PoiId target, std::size_t k) {
    return ndcg_from_rank(rank_in(ranked, target), k);
}

// ---------------------------------------------------------------------------
// Probes

enum class Probe { NearestEmbedding, MarkovBlend };

inline const char* probe_name(Probe p) { return p == Probe::NearestEmbedding ? "nearest" : "markov"; }

/// Empirical next-POI frequencies from the training prefixes.
class TransitionTable {
public:
    TransitionTable(std::size_t num_pois, const std::vector<RankingQuery>& train) : rows_(num_pois) {
        for (const auto& q : train) {
            auto& row = rows_.at(q.history.back());
            row.counts[q.target] += 1.0;
            row.total += 1.0;
        }
    }

    double frequency(PoiId from, PoiId to) const {
        const auto& row = rows_.at(from);
        if (row.total == 0.0) return 0.0;
        const auto it = row.counts.find(to);
        return it == row.counts.end() ? 0.0 : it->second / row.total;
    }

private:
    struct Row {
        std::map<PoiId, double> counts;
        double total = 0.0;
    };
    std::vector<Row> rows_;
};

/// Cosine similarity; 0 if either vector is zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::vector<double> score(const Matrix& emb, const RankingQuery& q, Probe probe, const TransitionTable* transitions,
                                 double lambda) {
    if (q.history.empty()) throw ValidationError("eval: empty history");
    if (lambda < 0.0 || lambda > 1.0) throw ValidationError("eval: lambda must lie in [0,1]");
    const PoiId last = q.history.back();
    std::vector<double> s(emb.rows());
    for (std::size_t j = 0; j < emb.rows(); ++j) {
        const double cos = cosine(emb.row_span(last), emb.row_span(j));
        if (probe == Probe::NearestEmbedding) {
            s[j] = cos;
        } else {
            if (!transitions) throw ValidationError("eval: markov probe needs transitions");
            s[j] = lambda * cos + (1.0 - lambda) * transitions->frequency(last, static_cast<PoiId>(j));
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Embedding sources

/// JSONL `{"poi":"<ext>","vec":[...]}`; every corpus POI must be present.
inline Matrix parse_embeddings_jsonl(const std::string& content, const CheckinCorpus& c) {
    std::unordered_map<std::string, PoiId> index;
    for (const auto& p : c.pois()) index.emplace(p.ext_id, p.id);
    std::vector<std::vector<double>> rows(c.num_pois());
    std::istringstream in(content);
    std::string raw;
    std::size_t line = 0, dim = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::parse_error&) {
            throw ValidationError("embeddings line " + std::to_string(line) + ": malformed JSON");
        }
        if (!j.is_object() || !j.contains("poi") || !j["poi"].is_string() || !j.contains("vec") || !j["vec"].is_array())
            throw ValidationError("embeddings line " + std::to_string(line) + ": expected {\"poi\":..,\"vec\":[..]}");
        const auto it = index.find(j["poi"].get<std::string>());
        if (it == index.end()) continue;
        auto v = j["vec"].get<std::vector<double>>();
        if (v.empty()) throw ValidationError("embeddings line " + std::to_string(line) + ": empty vector");
        if (dim == 0) dim = v.size();
        if (v.size() != dim) throw ValidationError("embeddings line " + std::to_string(line) + ": dimension mismatch");
        rows[it->second] = std::move(v);
    }
    Matrix m(c.num_pois(), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].empty()) throw ValidationError("missing embedding for POI '" + c.poi(static_cast<PoiId>(i)).ext_id + "'");
        std::copy(rows[i].begin(), rows[i].end(), m.row_span(i).begin());
    }
    return m;
}

inline Matrix load_embeddings(const std::filesystem::path& path, const CheckinCorpus& c) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    return parse_embeddings_jsonl(io::read_file(path), c);
}

inline Matrix random_embeddings(std::size_t n, std::size_t dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x72616e64ULL));
    Matrix m(n, dim);
    for (double& x : m.data()) x = rng.normal();
    return m;
}

inline Matrix identity_embeddings(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricRow {
    std::string probe;
    std::string embedding;
    std::size_t k = 0;
    double recall = 0.0;
    double ndcg = 0.0;
    std::uint64_t seed = 0;
};

/// Mean Recall@K and NDCG@K of one embedding table over the test queries.
inline std::vector<MetricRow> evaluate(const Matrix& emb, const CheckinCorpus& c, const Split& s, Probe probe,
                                       const std::vector<std::size_t>& ks, const std::string& name, std::uint64_t seed,
                                       double lambda = 0.5) {
    if (emb.rows() != c.num_pois()) throw ValidationError("eval: embeddings do not cover every POI");
    for (const auto k : ks) check_k(k);
    const TransitionTable transitions(c.num_pois(), s.train);
    std::vector<double> recall(ks.size(), 0.0), ndcg(ks.size(), 0.0);
    for (const auto& q : s.test) {
        const auto rank = rank_of(score(emb, q, probe, &transitions, lambda), q.target);
        for (std::size_t i = 0; i < ks.size(); ++i) {
            recall[i] += recall_from_rank(rank, ks[i]);
            ndcg[i] += ndcg_from_rank(rank, ks[i]);
        }
    }
    std::vector<MetricRow> out;
    const double n = static_cast<double>(s.test.size());
    for (std::size_t i = 0; i < ks.size(); ++i)
        out.push_back({probe_name(probe), name, ks[i], recall[i] / n, ndcg[i] / n, seed});
    return out;
}

/// Learned embeddings against random (same width, seeded) and one-hot baselines, under both probes.
inline std::vector<MetricRow> evaluate_all(const Matrix& emb, const CheckinCorpus& c, const std::vector<std::size_t>& ks,
                                           std::uint64_t seed, double lambda = 0.5) {
    const auto s = split(c);
    const auto rnd = random_embeddings(c.num_pois(), emb.cols(), seed);
    const auto ident = identity_embeddings(c.num_pois());
    std::vector<MetricRow> out;
    for (const auto probe : {Probe::NearestEmbedding, Probe::MarkovBlend})
        for (const auto& [name, m] : {std::pair<const char*, const Matrix*>{"got", &emb}, {"random", &rnd}, {"identity", &ident}}) {
            auto rows = evaluate(*m, c, s, probe, ks, name, seed, lambda);
            out.insert(out.end(), rows.begin(), rows.end());
        }
    return out;
}

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = "probe,embedding,K,recall,ndcg,seed\n";
    for (const auto& r : rows)
        out += r.probe + "," + r.embedding + "," + std::to_string(r.k) + "," + io::format_real(r.recall) + "," +
               io::format_real(r.ndcg) + "," + std::to_string(r.seed) + "\n";
    return out;
}

}  // namespace adaptgot::eval
