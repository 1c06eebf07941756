#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "adaptgot/corpus.hpp"
#include "adaptgot/error.hpp"
#include "adaptgot/geo.hpp"
#include "adaptgot/io.hpp"
#include "adaptgot/text.hpp"

namespace adaptgot {

enum class Strategy { Knn = 0, Density = 1, Importance = 2, Category = 3 };

inline constexpr std::array<Strategy, 4> kAllStrategies = {Strategy::Knn, Strategy::Density, Strategy::Importance,
                                                           Strategy::Category};

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Knn: return "knn";
        case Strategy::Density: return "density";
        case Strategy::Importance: return "importance";
        case Strategy::Category: return "category";
    }
    return "?";
}

/// Directed neighborhood graph: `neighbors[i]` lists the j of edges (i <- j), best first.
struct ContextGraph {
    Strategy strategy = Strategy::Knn;
    std::size_t k = 0;
    std::vector<std::vector<PoiId>> neighbors;

    std::size_t num_nodes() const noexcept { return neighbors.size(); }
    std::size_t num_edges() const noexcept {
        std::size_t e = 0;
        for (const auto& n : neighbors) e += n.size();
        return e;
    }

    friend bool operator==(const ContextGraph&, const ContextGraph&) = default;
};

/// Word polarities in [-1, 1].
class SentimentLexicon {
public:
    SentimentLexicon() = default;
    SentimentLexicon(std::initializer_list<std::pair<std::string, double>> entries) {
        for (const auto& [w, p] : entries) add(w, p);
    }

    void add(const std::string& word, double polarity) {
        const auto toks = text::tokenize(word);
        if (toks.size() != 1) throw ValidationError("lexicon entry must be a single token: '" + word + "'");
        polarity_[toks.front()] = std::clamp(polarity, -1.0, 1.0);
    }

    const double* find(const std::string& token) const {
        const auto it = polarity_.find(token);
        return it == polarity_.end() ? nullptr : &it->second;
    }

    std::size_t size() const noexcept { return polarity_.size(); }

    /// Two-column `word<TAB>polarity` file; blank lines and '#' comments ignored.
    static SentimentLexicon load(const std::filesystem::path& path) {
        SentimentLexicon lex;
        std::istringstream in(io::read_file(path));
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw ValidationError("lexicon line " + std::to_string(n) + ": expected word<TAB>polarity");
            double pol = 0.0;
            try {
                const auto rest = line.substr(tab + 1);
                std::size_t used = 0;
                pol = std::stod(rest, &used);
                if (rest.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(rest);
            } catch (const std::exception&) {
                throw ValidationError("lexicon line " + std::to_string(n) + ": bad polarity");
            }
            lex.add(line.substr(0, tab), pol);
        }
        return lex;
    }

private:
    std::unordered_map<std::string, double> polarity_;
};

/// Mean polarity over lexicon hits; 0 when there are none.
inline double sentiment(std::string_view s, const SentimentLexicon& lex) {
    double sum = 0.0;
    std::size_t hits = 0;
    for (const auto& tok : text::tokenize(s))
        if (const double* p = lex.find(tok)) {
            sum += *p;
            ++hits;
        }
    return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

/// Bivariate Gaussian KDE at `x` over `support` with bandwidth `b` km:
/// (1 / (n b^2)) * sum_n K((x - x_n) / b), K(u) = exp(-|u|^2 / 2) / (2 pi),
/// offsets measured on the tangent plane at `x`.
inline double kde_density(std::span<const geo::LatLon> support, geo::LatLon x, double bandwidth_km) {
    if (!(bandwidth_km > 0.0)) throw ValidationError("kde bandwidth must be > 0");
    if (support.empty()) throw ValidationError("kde requires at least one check-in");
    double acc = 0.0;
    for (const auto& p : support) {
        const auto d = geo::local_offset(x, p);
        const double u2 = (d.east * d.east + d.north * d.north) / (bandwidth_km * bandwidth_km);
        acc += std::exp(-0.5 * u2);
    }
    return acc / (2.0 * std::numbers::pi * static_cast<double>(support.size()) * bandwidth_km * bandwidth_km);
}

/// Coordinates of every check-in (the KDE support).
inline std::vector<geo::LatLon> checkin_locations(const CheckinCorpus& c) {
    std::vector<geo::LatLon> out;
    out.reserve(c.num_checkins());
    for (const auto& ck : c.checkins()) out.push_back(c.poi(ck.poi).pos);
    return out;
}

inline double kde_density(const CheckinCorpus& c, geo::LatLon x, double bandwidth_km) {
    const auto support = checkin_locations(c);
    return kde_density(support, x, bandwidth_km);
}

struct SamplingConfig {
    std::size_t k = 5;
    double bandwidth_km = 0.5;
    double gamma = 1e-6;
    std::size_t density_pool_mult = 4;
    /// Rank importance/category scores ascending (the negated ratio) instead of descending.
    bool literal_sign = false;
    bool materialize_distance = false;
};

namespace detail {

struct Scored {
    PoiId id;
    double key;
};

/// First `k` of `items` ordered by key (descending if `desc`), ties by smaller id.
inline std::vector<PoiId> top_k(std::vector<Scored> items, std::size_t k, bool desc) {
    const auto cmp = [desc](const Scored& a, const Scored& b) {
        if (a.key != b.key) return desc ? a.key > b.key : a.key < b.key;
        return a.id < b.id;
    };
    k = std::min(k, items.size());
    std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k), items.end(), cmp);
    std::vector<PoiId> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(items[i].id);
    return out;
}

}  // namespace detail

/// Corpus-level quantities shared by all samplers, computed once.
class Sampler {
public:
    Sampler(const CheckinCorpus& c, const SentimentLexicon& lexicon, SamplingConfig cfg)
        : corpus_(&c), cfg_(cfg), dist_(c, cfg.materialize_distance), freq_(poi_frequency(c)) {
        if (cfg_.k < 1) throw ValidationError("k must be >= 1");
        if (!(cfg_.gamma > 0.0)) throw ValidationError("gamma must be > 0");
        if (!(cfg_.bandwidth_km > 0.0)) throw ValidationError("bandwidth must be > 0");
        if (cfg_.density_pool_mult < 1) throw ValidationError("density_pool_mult must be >= 1");

        std::vector<double> sum(c.num_pois(), 0.0), cnt(c.num_pois(), 0.0);
        for (const auto& r : c.reviews()) {
            sum[r.poi] += sentiment(r.text, lexicon);
            cnt[r.poi] += 1.0;
        }
        shifted_sentiment_.resize(c.num_pois());
        for (std::size_t i = 0; i < c.num_pois(); ++i)
            shifted_sentiment_[i] = (1.0 + (cnt[i] > 0.0 ? sum[i] / cnt[i] : 0.0)) / 2.0;

        const auto share = category_share(c);
        catshare_.resize(c.num_pois());
        for (std::size_t i = 0; i < c.num_pois(); ++i) catshare_[i] = share[c.category_of(static_cast<PoiId>(i))];
    }

    const SamplingConfig& config() const noexcept { return cfg_; }
    const DistanceTable& distances() const noexcept { return dist_; }
    double shifted_sentiment(PoiId j) const { return shifted_sentiment_.at(j); }
    double catshare(PoiId j) const { return catshare_.at(j); }
    double frequency(PoiId j) const { return freq_.at(j); }

    /// k nearest by haversine, ascending, ties by smaller id.
    std::vector<PoiId> knn(PoiId i, std::size_t k) const {
        const auto row = dist_.row(i);
        std::vector<detail::Scored> items;
        items.reserve(row.size());
        for (std::size_t j = 0; j < row.size(); ++j)
            if (j != i) items.push_back({static_cast<PoiId>(j), row[j]});
        return detail::top_k(std::move(items), k, false);
    }

    /// KDE of check-in locations evaluated at POI j (cached).
    double density_at(PoiId j) const {
        if (density_.empty()) {
            const auto support = checkin_locations(*corpus_);
            density_.resize(corpus_->num_pois());
            for (std::size_t p = 0; p < density_.size(); ++p)
                density_[p] = support.empty() ? 0.0 : kde_density(support, corpus_->poi(static_cast<PoiId>(p)).pos,
                                                                   cfg_.bandwidth_km);
        }
        return density_.at(j);
    }

    /// Top-k by KDE density among the `pool` nearest candidates.
    std::vector<PoiId> density(PoiId i, std::size_t k, std::size_t pool) const {
        if (pool < k) throw ValidationError("density candidate pool must be >= k");
        std::vector<detail::Scored> items;
        for (const PoiId j : knn(i, pool)) items.push_back({j, density_at(j)});
        return detail::top_k(std::move(items), k, true);
    }

    double importance_score(PoiId i, PoiId j) const {
        return (freq_[j] * shifted_sentiment_[j] + cfg_.gamma) / (dist_(i, j) + cfg_.gamma);
    }

    double category_score(PoiId i, PoiId j) const {
        return (freq_[j] * catshare_[j] + cfg_.gamma) / (dist_(i, j) + cfg_.gamma);
    }

    std::vector<PoiId> importance(PoiId i, std::size_t k) const {
        return rank_all(i, k, [this](PoiId a, PoiId b) { return importance_score(a, b); });
    }

    std::vector<PoiId> category(PoiId i, std::size_t k) const {
        return rank_all(i, k, [this](PoiId a, PoiId b) { return category_score(a, b); });
    }

    ContextGraph build(Strategy s) const {
        ContextGraph g{s, cfg_.k, {}};
        g.neighbors.resize(corpus_->num_pois());
        for (std::size_t i = 0; i < g.neighbors.size(); ++i) {
            const auto id = static_cast<PoiId>(i);
            switch (s) {
                case Strategy::Knn: g.neighbors[i] = knn(id, cfg_.k); break;
                case Strategy::Density: g.neighbors[i] = density(id, cfg_.k, cfg_.k * cfg_.density_pool_mult); break;
                case Strategy::Importance: g.neighbors[i] = importance(id, cfg_.k); break;
                case Strategy::Category: g.neighbors[i] = category(id, cfg_.k); break;
            }
        }
        return g;
    }

private:
    template <typename ScoreFn>
    std::vector<PoiId> rank_all(PoiId i, std::size_t k, ScoreFn score) const {
        std::vector<detail::Scored> items;
        for (std::size_t j = 0; j < corpus_->num_pois(); ++j)
            if (j != i) items.push_back({static_cast<PoiId>(j), score(i, static_cast<PoiId>(j))});
        return detail::top_k(std::move(items), k, !cfg_.literal_sign);
    }

    const CheckinCorpus* corpus_;
    SamplingConfig cfg_;
    DistanceTable dist_;
    std::vector<double> freq_;
    std::vector<double> shifted_sentiment_;
    std::vector<double> catshare_;
    mutable std::vector<double> density_;
};

// Free-function forms of the individual samplers.

inline std::vector<PoiId> sample_knn(const CheckinCorpus& c, PoiId i, std::size_t k) {
    SamplingConfig cfg;
    cfg.k = std::max<std::size_t>(k, 1);
    return Sampler(c, {}, cfg).knn(i, k);
}

inline std::vector<PoiId> sample_density(const CheckinCorpus& c, PoiId i, std::size_t k, double bandwidth_km,
                                         std::size_t pool) {
    SamplingConfig cfg;
    cfg.k = std::max<std::size_t>(k, 1);
    cfg.bandwidth_km = bandwidth_km;
    return Sampler(c, {}, cfg).density(i, k, pool);
}

inline std::vector<PoiId> sample_importance(const CheckinCorpus& c, const SentimentLexicon& lex, PoiId i,
                                            std::size_t k, double gamma, bool literal_sign = false) {
    SamplingConfig cfg;
    cfg.k = std::max<std::size_t>(k, 1);
    cfg.gamma = gamma;
    cfg.literal_sign = literal_sign;
    return Sampler(c, lex, cfg).importance(i, k);
}

inline std::vector<PoiId> sample_category(const CheckinCorpus& c, PoiId i, std::size_t k, double gamma,
                                          bool literal_sign = false) {
    SamplingConfig cfg;
    cfg.k = std::max<std::size_t>(k, 1);
    cfg.gamma = gamma;
    cfg.literal_sign = literal_sign;
    return Sampler(c, {}, cfg).category(i, k);
}

/// One graph per strategy, in Knn, Density, Importance, Category order.
inline std::array<ContextGraph, 4> build_all_subgraphs(const CheckinCorpus& c, const SentimentLexicon& lex,
                                                       const SamplingConfig& cfg) {
    const Sampler sampler(c, lex, cfg);
    return {sampler.build(Strategy::Knn), sampler.build(Strategy::Density), sampler.build(Strategy::Importance),
            sampler.build(Strategy::Category)};
}

/// JSONL edge list: {"strategy":"knn","src":i,"dst":j,"rank":r}.
inline std::string export_graph_jsonl(const ContextGraph& g) {
    std::string out;
    for (std::size_t i = 0; i < g.neighbors.size(); ++i)
        for (std::size_t r = 0; r < g.neighbors[i].size(); ++r)
            out += std::string("{\"strategy\":\"") + strategy_name(g.strategy) + "\",\"src\":" + std::to_string(i) +
                   ",\"dst\":" + std::to_string(g.neighbors[i][r]) + ",\"rank\":" + std::to_string(r) + "}\n";
    return out;
}

}  // namespace adaptgot
