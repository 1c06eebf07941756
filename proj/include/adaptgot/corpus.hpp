#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adaptgot/error.hpp"
#include "adaptgot/geo.hpp"
#include "adaptgot/io.hpp"
#include "adaptgot/matrix.hpp"

namespace adaptgot {

using PoiId = std::uint32_t;
using UserId = std::uint32_t;

struct Poi {
    PoiId id = 0;
    std::string ext_id;
    geo::LatLon pos;
    std::string category;

    friend bool operator==(const Poi&, const Poi&) = default;
};

struct CheckIn {
    UserId user = 0;
    PoiId poi = 0;
    std::int64_t t = 0;

    friend bool operator==(const CheckIn&, const CheckIn&) = default;
};

struct Review {
    UserId user = 0;
    PoiId poi = 0;
    std::string text;

    friend bool operator==(const Review&, const Review&) = default;
};

/// Immutable check-in corpus with dense ids.
///
/// Check-ins are stored sorted by (user, t) with ties kept in input order;
/// reviews are stored sorted by (poi, user), ties in input order.
class CheckinCorpus {
public:
    CheckinCorpus() = default;

    /// Validates and canonicalizes. Ids must already be dense.
    CheckinCorpus(std::vector<Poi> pois, std::vector<std::string> user_ext_ids, std::vector<CheckIn> checkins,
                  std::vector<Review> reviews)
        : pois_(std::move(pois)),
          user_ext_(std::move(user_ext_ids)),
          checkins_(std::move(checkins)),
          reviews_(std::move(reviews)) {
        if (pois_.empty()) throw ValidationError("empty corpus");
        for (std::size_t i = 0; i < pois_.size(); ++i) {
            const auto& p = pois_[i];
            if (p.id != i) throw ValidationError("poi ids must be dense 0..N-1");
            if (!geo::in_bounds(p.pos)) throw ValidationError("poi " + p.ext_id + ": coordinates out of range");
            if (p.category.empty()) throw ValidationError("poi " + p.ext_id + ": empty category");
        }
        for (const auto& c : checkins_)
            if (c.user >= user_ext_.size() || c.poi >= pois_.size())
                throw ValidationError("check-in references unknown user or poi");
        for (const auto& r : reviews_)
            if (r.user >= user_ext_.size() || r.poi >= pois_.size())
                throw ValidationError("review references unknown user or poi");
        std::stable_sort(checkins_.begin(), checkins_.end(), [](const CheckIn& a, const CheckIn& b) {
            return a.user != b.user ? a.user < b.user : a.t < b.t;
        });
        std::stable_sort(reviews_.begin(), reviews_.end(), [](const Review& a, const Review& b) {
            return a.poi != b.poi ? a.poi < b.poi : a.user < b.user;
        });

        std::map<std::string, std::uint32_t> seen;
        for (const auto& p : pois_) {
            auto [it, inserted] = seen.emplace(p.category, static_cast<std::uint32_t>(categories_.size()));
            if (inserted) categories_.push_back(p.category);
            poi_category_.push_back(it->second);
        }
        user_begin_.assign(user_ext_.size() + 1, 0);
        for (const auto& c : checkins_) ++user_begin_[c.user + 1];
        for (std::size_t u = 0; u < user_ext_.size(); ++u) user_begin_[u + 1] += user_begin_[u];
    }

    std::size_t num_pois() const noexcept { return pois_.size(); }
    std::size_t num_users() const noexcept { return user_ext_.size(); }
    std::size_t num_checkins() const noexcept { return checkins_.size(); }
    std::size_t num_categories() const noexcept { return categories_.size(); }

    const std::vector<Poi>& pois() const noexcept { return pois_; }
    const Poi& poi(PoiId i) const { return pois_.at(i); }
    const std::vector<std::string>& user_ext_ids() const noexcept { return user_ext_; }
    const std::vector<CheckIn>& checkins() const noexcept { return checkins_; }
    const std::vector<Review>& reviews() const noexcept { return reviews_; }
    const std::vector<std::string>& categories() const noexcept { return categories_; }
    std::uint32_t category_of(PoiId i) const { return poi_category_.at(i); }

    /// Time-sorted check-ins of one user.
    std::span<const CheckIn> user_checkins(UserId u) const {
        return {checkins_.data() + user_begin_.at(u), user_begin_.at(u + 1) - user_begin_.at(u)};
    }

    friend bool operator==(const CheckinCorpus& a, const CheckinCorpus& b) {
        return a.pois_ == b.pois_ && a.user_ext_ == b.user_ext_ && a.checkins_ == b.checkins_ &&
               a.reviews_ == b.reviews_;
    }

private:
    std::vector<Poi> pois_;
    std::vector<std::string> user_ext_;
    std::vector<CheckIn> checkins_;
    std::vector<Review> reviews_;
    std::vector<std::string> categories_;
    std::vector<std::uint32_t> poi_category_;
    std::vector<std::size_t> user_begin_;
};

// ---------------------------------------------------------------------------
// JSONL ingestion / export

namespace detail {

inline std::string json_string_field(const nlohmann::json& rec, const char* key, std::size_t line) {
    const auto it = rec.find(key);
    if (it == rec.end() || !it->is_string())
        throw ValidationError("line " + std::to_string(line) + ": missing string field '" + key + "'");
    return it->get<std::string>();
}

inline double json_number_field(const nlohmann::json& rec, const char* key, std::size_t line) {
    const auto it = rec.find(key);
    if (it == rec.end() || !it->is_number())
        throw ValidationError("line " + std::to_string(line) + ": missing numeric field '" + key + "'");
    return it->get<double>();
}

}  // namespace detail

/// Parses the JSONL record format (poi / checkin / review records, any order).
/// Users and POIs get dense ids in first-seen order; duplicate POI ids keep the first definition.
inline CheckinCorpus parse_corpus_jsonl(const std::string& content) {
    struct Pending {
        std::size_t line;
        std::string user, poi, text;
        std::int64_t t = 0;
        bool is_review = false;
    };
    std::vector<Poi> pois;
    std::unordered_map<std::string, PoiId> poi_index;
    std::vector<Pending> pending;

    std::istringstream in(content);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError("line " + std::to_string(line) + ": malformed JSON");
        }
        if (!rec.is_object()) throw ValidationError("line " + std::to_string(line) + ": record is not an object");
        const auto type = detail::json_string_field(rec, "type", line);
        if (type == "poi") {
            Poi p;
            p.ext_id = detail::json_string_field(rec, "id", line);
            p.pos = {detail::json_number_field(rec, "lat", line), detail::json_number_field(rec, "lon", line)};
            p.category = detail::json_string_field(rec, "cat", line);
            if (!geo::in_bounds(p.pos))
                throw ValidationError("line " + std::to_string(line) + ": coordinates out of range");
            if (p.category.empty()) throw ValidationError("line " + std::to_string(line) + ": empty category");
            if (poi_index.contains(p.ext_id)) continue;
            p.id = static_cast<PoiId>(pois.size());
            poi_index.emplace(p.ext_id, p.id);
            pois.push_back(std::move(p));
        } else if (type == "checkin") {
            Pending r{line, detail::json_string_field(rec, "user", line), detail::json_string_field(rec, "poi", line),
                      {}, 0, false};
            const auto it = rec.find("t");
            if (it == rec.end() || !it->is_number_integer())
                throw ValidationError("line " + std::to_string(line) + ": missing integer field 't'");
            r.t = it->get<std::int64_t>();
            pending.push_back(std::move(r));
        } else if (type == "review") {
            pending.push_back({line, detail::json_string_field(rec, "user", line),
                               detail::json_string_field(rec, "poi", line), detail::json_string_field(rec, "text", line),
                               0, true});
        } else {
            throw ValidationError("line " + std::to_string(line) + ": unknown record type '" + type + "'");
        }
    }
    if (pois.empty() && pending.empty()) throw ValidationError("empty corpus");
    if (pois.empty()) throw ValidationError("corpus has no poi records");

    std::vector<std::string> users;
    std::unordered_map<std::string, UserId> user_index;
    std::vector<CheckIn> checkins;
    std::vector<Review> reviews;
    for (auto& r : pending) {
        const auto pit = poi_index.find(r.poi);
        if (pit == poi_index.end())
            throw ValidationError("line " + std::to_string(r.line) + ": unknown poi '" + r.poi + "'");
        auto [uit, inserted] = user_index.emplace(r.user, static_cast<UserId>(users.size()));
        if (inserted) users.push_back(r.user);
        if (r.is_review)
            reviews.push_back({uit->second, pit->second, std::move(r.text)});
        else
            checkins.push_back({uit->second, pit->second, r.t});
    }
    return CheckinCorpus(std::move(pois), std::move(users), std::move(checkins), std::move(reviews));
}

inline CheckinCorpus ingest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    return parse_corpus_jsonl(io::read_file(path));
}

/// Serializes in the ingestion format: POIs, then per user (in id order) their
/// check-ins followed by their reviews. Re-ingesting the output reproduces the
/// same dense ids.
inline std::string export_corpus_jsonl(const CheckinCorpus& c) {
    std::string out;
    for (const auto& p : c.pois())
        out += "{\"type\":\"poi\",\"id\":" + io::quote(p.ext_id) + ",\"lat\":" + io::format_real(p.pos.lat) +
               ",\"lon\":" + io::format_real(p.pos.lon) + ",\"cat\":" + io::quote(p.category) + "}\n";
    std::vector<std::vector<const Review*>> by_user(c.num_users());
    for (const auto& r : c.reviews()) by_user[r.user].push_back(&r);
    for (UserId u = 0; u < c.num_users(); ++u) {
        const auto& uid = c.user_ext_ids()[u];
        for (const auto& ck : c.user_checkins(u))
            out += "{\"type\":\"checkin\",\"user\":" + io::quote(uid) + ",\"poi\":" +
                   io::quote(c.poi(ck.poi).ext_id) + ",\"t\":" + std::to_string(ck.t) + "}\n";
        for (const auto* r : by_user[u])
            out += "{\"type\":\"review\",\"user\":" + io::quote(uid) + ",\"poi\":" + io::quote(c.poi(r->poi).ext_id) +
                   ",\"text\":" + io::quote(r->text) + "}\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Derived matrices

/// Total check-ins per POI.
inline std::vector<double> poi_frequency(const CheckinCorpus& c) {
    std::vector<double> f(c.num_pois(), 0.0);
    for (const auto& ck : c.checkins()) f[ck.poi] += 1.0;
    return f;
}

/// M x N visit counts.
inline Matrix user_poi_frequency(const CheckinCorpus& c) {
    Matrix m(c.num_users(), c.num_pois());
    for (const auto& ck : c.checkins()) m(ck.user, ck.poi) += 1.0;
    return m;
}

/// M x C category frequencies, each row normalized to sum 1 (all-zero for users without check-ins).
inline Matrix user_category_matrix(const CheckinCorpus& c) {
    Matrix m(c.num_users(), c.num_categories());
    for (const auto& ck : c.checkins()) m(ck.user, c.category_of(ck.poi)) += 1.0;
    for (std::size_t u = 0; u < m.rows(); ++u) {
        double s = 0.0;
        for (const double x : m.row_span(u)) s += x;
        if (s > 0.0)
            for (double& x : m.row_span(u)) x /= s;
    }
    return m;
}

/// Corpus-wide share of check-ins per category (the marginal of the category matrix).
inline std::vector<double> category_share(const CheckinCorpus& c) {
    std::vector<double> share(c.num_categories(), 0.0);
    for (const auto& ck : c.checkins()) share[c.category_of(ck.poi)] += 1.0;
    if (!c.checkins().empty())
        for (double& s : share) s /= static_cast<double>(c.num_checkins());
    return share;
}

/// Normalized co-occurrence O (N x N).
///
/// O[i][j] = (#users who visited both i and j, within `window_secs` of each
/// other when given) / (#check-ins at i). Each user contributes at most once
/// per unordered pair. Diagonal is 0.
inline Matrix cooccurrence(const CheckinCorpus& c, std::optional<std::int64_t> window_secs = std::nullopt) {
    const std::size_t n = c.num_pois();
    Matrix occ(n, n);
    std::vector<std::pair<PoiId, PoiId>> pairs;
    const std::int64_t window = window_secs.value_or(0);
    for (UserId u = 0; u < c.num_users(); ++u) {
        const auto seq = c.user_checkins(u);
        pairs.clear();
        if (!window_secs) {
            std::vector<PoiId> distinct;
            for (const auto& ck : seq) distinct.push_back(ck.poi);
            std::sort(distinct.begin(), distinct.end());
            distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
            for (std::size_t a = 0; a < distinct.size(); ++a)
                for (std::size_t b = a + 1; b < distinct.size(); ++b) pairs.emplace_back(distinct[a], distinct[b]);
        } else {
            for (std::size_t a = 0; a < seq.size(); ++a)
                for (std::size_t b = a + 1; b < seq.size() && seq[b].t - seq[a].t <= window; ++b)
                    if (seq[a].poi != seq[b].poi)
                        pairs.emplace_back(std::min(seq[a].poi, seq[b].poi), std::max(seq[a].poi, seq[b].poi));
            std::sort(pairs.begin(), pairs.end());
            pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
        }
        for (const auto& [i, j] : pairs) {
            occ(i, j) += 1.0;
            occ(j, i) += 1.0;
        }
    }
    const auto freq = poi_frequency(c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) occ(i, j) = freq[i] > 0.0 ? occ(i, j) / freq[i] : 0.0;
    return occ;
}

/// Pairwise haversine distances, computed per row on demand unless materialized.
class DistanceTable {
public:
    static constexpr std::size_t kMaxMaterialized = 20000;

    explicit DistanceTable(const CheckinCorpus& c, bool materialize = false) : corpus_(&c) {
        if (materialize) {
            if (c.num_pois() > kMaxMaterialized)
                throw ValidationError("distance matrix materialization limited to N <= 20000");
            full_ = Matrix(c.num_pois(), c.num_pois());
            for (std::size_t i = 0; i < c.num_pois(); ++i) {
                const auto r = compute_row(static_cast<PoiId>(i));
                std::copy(r.begin(), r.end(), full_->row_span(i).begin());
            }
        }
    }

    std::vector<double> row(PoiId i) const {
        if (full_) {
            const auto r = full_->row_span(i);
            return {r.begin(), r.end()};
        }
        return compute_row(i);
    }

    double operator()(PoiId i, PoiId j) const {
        if (full_) return (*full_)(i, j);
        return i == j ? 0.0 : geo::haversine(corpus_->poi(i).pos, corpus_->poi(j).pos);
    }

private:
    std::vector<double> compute_row(PoiId i) const {
        std::vector<double> r(corpus_->num_pois());
        const auto origin = corpus_->poi(i).pos;
        for (std::size_t j = 0; j < r.size(); ++j)
            r[j] = j == i ? 0.0 : geo::haversine(origin, corpus_->poi(static_cast<PoiId>(j)).pos);
        return r;
    }

    const CheckinCorpus* corpus_;
    std::optional<Matrix> full_;
};

}  // namespace adaptgot
