#pragma once

#include <string>
#include <vector>

#include "adaptgot/corpus.hpp"
#include "adaptgot/rng.hpp"

namespace testing_support {

using adaptgot::CheckIn;
using adaptgot::CheckinCorpus;
using adaptgot::Poi;
using adaptgot::PoiId;
using adaptgot::Review;
using adaptgot::UserId;

/// POIs scattered in a ~0.1 degree box, users with random histories and reviews.
inline CheckinCorpus random_corpus(std::uint64_t seed, std::size_t n_pois, std::size_t n_users,
                                   std::size_t checkins_per_user, std::size_t n_categories = 4) {
    adaptgot::Rng rng(seed);
    static const std::vector<std::string> words = {"good", "bad", "coffee", "quiet", "busy", "great",
                                                   "awful", "view", "cheap", "slow"};
    std::vector<Poi> pois;
    for (std::size_t i = 0; i < n_pois; ++i)
        pois.push_back({static_cast<PoiId>(i), "p" + std::to_string(i),
                        {40.7 + 0.1 * rng.uniform(), -74.0 + 0.1 * rng.uniform()},
                        "c" + std::to_string(rng.below(n_categories))});
    std::vector<std::string> users;
    std::vector<CheckIn> checkins;
    std::vector<Review> reviews;
    for (std::size_t u = 0; u < n_users; ++u) {
        users.push_back("u" + std::to_string(u));
        for (std::size_t k = 0; k < checkins_per_user; ++k) {
            const auto p = static_cast<PoiId>(rng.below(n_pois));
            checkins.push_back({static_cast<UserId>(u), p, static_cast<std::int64_t>(rng.below(100000))});
            if (rng.uniform() < 0.4) {
                std::string text;
                for (int w = 0; w < 3; ++w) text += (w ? " " : "") + words[rng.below(words.size())];
                reviews.push_back({static_cast<UserId>(u), p, text});
            }
        }
    }
    return CheckinCorpus(std::move(pois), std::move(users), std::move(checkins), std::move(reviews));
}

}  // namespace testing_support
