#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "adaptgot/corpus.hpp"
#include "adaptgot/error.hpp"
#include "adaptgot/rng.hpp"
#include "adaptgot/sampling.hpp"

namespace adaptgot::synth {

/// Planted-cluster corpus: POIs sit in spatially separated clusters with their
/// own categories and review vocabulary, and users mostly revisit one cluster.
struct SynthSpec {
    std::size_t n_pois = 50;
    std::size_t n_users = 40;
    std::size_t n_clusters = 5;
    std::size_t checkins_per_user = 20;
    std::size_t review_vocab = 8;   // cluster-specific words per cluster
    double home_prob = 0.85;        // chance a check-in stays in the user's cluster
    double review_prob = 0.3;       // chance a check-in comes with a review
    double locality = 0.7;          // chance a home-cluster move goes to a nearby POI
    std::size_t local_k = 3;        // size of that neighborhood
    double cluster_radius_km = 6.0; // distance of cluster centers from the city center
    double spread_km = 0.4;         // blob layout: POI scatter around a cluster center
    bool street_layout = true;      // POIs strung along a street with a per-cluster orientation
    double street_length_km = 2.0;
    double street_jitter_km = 0.03;
    std::uint64_t seed = 42;

    void validate() const {
        if (n_pois == 0 || n_users == 0 || n_clusters == 0 || checkins_per_user == 0)
            throw ValidationError("synth: sizes must be positive");
        if (n_clusters > n_pois) throw ValidationError("synth: more clusters than POIs");
        if (home_prob < 0 || home_prob > 1 || review_prob < 0 || review_prob > 1)
            throw ValidationError("synth: probabilities must lie in [0,1]");
    }
};

inline constexpr geo::LatLon kCityCenter{40.75, -73.98};

inline const std::vector<std::string>& shared_words() {
    static const std::vector<std::string> w = {"place", "visit", "time", "staff", "again", "today", "friends", "spot"};
    return w;
}

inline const std::vector<std::string>& mood_words() {
    static const std::vector<std::string> w = {"great", "good", "nice", "bad", "awful", "okay"};
    return w;
}

inline std::string cluster_word(std::size_t cluster, std::size_t k) {
    static const char* stems[] = {"harbor", "garden", "market", "studio", "campus", "plaza", "forest", "river"};
    return std::string(stems[cluster % 8]) + std::to_string(cluster / 8) + "w" + std::to_string(k);
}

inline CheckinCorpus generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, 0x73796e74ULL));
    constexpr double kKmPerDegLat = 111.195;
    const double km_per_deg_lon = kKmPerDegLat * std::cos(kCityCenter.lat * std::numbers::pi / 180.0);

    std::vector<geo::LatLon> centers;
    for (std::size_t c = 0; c < spec.n_clusters; ++c) {
        const double ang = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(spec.n_clusters);
        centers.push_back({kCityCenter.lat + spec.cluster_radius_km * std::sin(ang) / kKmPerDegLat,
                           kCityCenter.lon + spec.cluster_radius_km * std::cos(ang) / km_per_deg_lon});
    }

    std::vector<Poi> pois;
    std::vector<std::vector<PoiId>> members(spec.n_clusters);
    std::vector<std::size_t> cluster_of;
    for (std::size_t i = 0; i < spec.n_pois; ++i) {
        const std::size_t c = i % spec.n_clusters;
        Poi p;
        p.id = static_cast<PoiId>(i);
        p.ext_id = "p" + std::to_string(i);
        double east = spec.spread_km * rng.normal(), north = spec.spread_km * rng.normal();
        if (spec.street_layout) {
            const double phi = std::numbers::pi * static_cast<double>(c) / static_cast<double>(spec.n_clusters);
            const double along = spec.street_length_km * (rng.uniform() - 0.5);
            const double across = spec.street_jitter_km * rng.normal();
            east = along * std::cos(phi) - across * std::sin(phi);
            north = along * std::sin(phi) + across * std::cos(phi);
        }
        p.pos = {centers[c].lat + north / kKmPerDegLat, centers[c].lon + east / km_per_deg_lon};
        p.category = "cat" + std::to_string(c) + "_" + std::to_string(rng.below(2));
        members[c].push_back(p.id);
        cluster_of.push_back(c);
        pois.push_back(std::move(p));
    }

    // Nearest same-cluster POIs of every POI, for local moves.
    std::vector<std::vector<PoiId>> nearby(spec.n_pois);
    for (std::size_t i = 0; i < spec.n_pois; ++i) {
        std::vector<std::pair<double, PoiId>> d;
        for (const auto j : members[cluster_of[i]])
            if (j != i) d.emplace_back(geo::haversine(pois[i].pos, pois[j].pos), j);
        std::sort(d.begin(), d.end());
        for (std::size_t k = 0; k < std::min(spec.local_k, d.size()); ++k) nearby[i].push_back(d[k].second);
    }

    std::vector<std::string> users;
    std::vector<CheckIn> checkins;
    std::vector<Review> reviews;
    for (std::size_t u = 0; u < spec.n_users; ++u) {
        users.push_back("u" + std::to_string(u));
        const std::size_t home = u % spec.n_clusters;
        std::int64_t t = 1'600'000'000 + static_cast<std::int64_t>(rng.below(86'400));
        PoiId poi = members[home][rng.below(members[home].size())];
        for (std::size_t k = 0; k < spec.checkins_per_user; ++k) {
            if (k > 0) {
                if (rng.uniform() >= spec.home_prob) {
                    const auto c = rng.below(spec.n_clusters);
                    poi = members[c][rng.below(members[c].size())];
                } else if (cluster_of[poi] == home && !nearby[poi].empty() && rng.uniform() < spec.locality) {
                    poi = nearby[poi][rng.below(nearby[poi].size())];
                } else {
                    poi = members[home][rng.below(members[home].size())];
                }
            }
            checkins.push_back({static_cast<UserId>(u), poi, t});
            t += 3'600 + static_cast<std::int64_t>(rng.below(6 * 3'600));
            if (rng.uniform() < spec.review_prob) {
                const std::size_t pc = cluster_of[poi];
                std::string text;
                for (int w = 0; w < 3; ++w) text += cluster_word(pc, rng.below(spec.review_vocab)) + " ";
                text += shared_words()[rng.below(shared_words().size())] + " ";
                text += mood_words()[rng.below(mood_words().size())];
                reviews.push_back({static_cast<UserId>(u), poi, std::move(text)});
            }
        }
    }
    return CheckinCorpus(std::move(pois), std::move(users), std::move(checkins), std::move(reviews));
}

/// Polarity lexicon covering the generator's mood words.
inline SentimentLexicon mood_lexicon() {
    SentimentLexicon lex;
    lex.add("great", 1.0);
    lex.add("good", 0.6);
    lex.add("nice", 0.5);
    lex.add("okay", 0.1);
    lex.add("bad", -0.6);
    lex.add("awful", -1.0);
    return lex;
}

}  // namespace adaptgot::synth
