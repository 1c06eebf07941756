#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "adaptgot/corpus.hpp"
#include "adaptgot/geo.hpp"
#include "adaptgot/io.hpp"
#include "adaptgot/rng.hpp"
#include "adaptgot/sampling.hpp"
#include "adaptgot/tensor.hpp"
#include "adaptgot/text.hpp"

namespace adaptgot {

/// Relative position of j seen from i: distance and initial bearing i -> j.
struct RelPos {
    double s_km = 0.0;
    double theta = 0.0;
};

inline RelPos relpos(const CheckinCorpus& c, PoiId i, PoiId j) {
    if (i == j) throw ValidationError("relpos undefined for i == j");
    const auto a = c.poi(i).pos;
    const auto b = c.poi(j).pos;
    // Distinct POIs may share coordinates; bearing is then taken as 0.
    const double theta = (a.lat == b.lat && a.lon == b.lon) ? 0.0 : geo::azimuth(a, b);
    return {geo::haversine(a, b), theta};
}

/// Continuous featurization [s / s_scale, sin theta, cos theta].
inline std::array<double, 3> relpos_features(RelPos r, double s_scale_km) {
    return {r.s_km / s_scale_km, std::sin(r.theta), std::cos(r.theta)};
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialized parameter.
inline ad::Parameter init_uniform(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    ad::Tensor t(rows, cols);
    for (double& x : t.data()) x = rng.uniform(-bound, bound);
    return {std::move(name), std::move(t)};
}

/// (x W1 + b1) W2 + b2: two stacked affine maps, no activation in between.
struct TwoLayerEncoder {
    ad::Parameter w1, b1, w2, b2;

    static TwoLayerEncoder init(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                                Rng& rng) {
        return {init_uniform(name + ".w1", in, hidden, in, rng), init_uniform(name + ".b1", 1, hidden, in, rng),
                init_uniform(name + ".w2", hidden, out, hidden, rng), init_uniform(name + ".b2", 1, out, hidden, rng)};
    }

    std::size_t in_dim() const { return w1.value.rows(); }
    std::size_t out_dim() const { return w2.value.cols(); }

    ad::Var forward(ad::Var x) const {
        auto& t = *x.tape();
        return ad::affine(ad::affine(x, t.param(w1), t.param(b1)), t.param(w2), t.param(b2));
    }

    std::vector<ad::Parameter*> parameters() { return {&w1, &b1, &w2, &b2}; }
};

using GeoEncoder = TwoLayerEncoder;
using OccEncoder = TwoLayerEncoder;

namespace detail {
inline std::vector<double> encode_row(const TwoLayerEncoder& enc, std::vector<double> in) {
    ad::Tape tape;
    const auto out = enc.forward(tape.constant(Matrix::row(std::move(in))));
    return out.value().data();
}
}  // namespace detail

inline std::vector<double> encode_geo(const GeoEncoder& enc, RelPos r, double s_scale_km = 10.0) {
    if (enc.in_dim() != 3) throw ValidationError("geo encoder must take 3 inputs");
    const auto f = relpos_features(r, s_scale_km);
    return detail::encode_row(enc, {f.begin(), f.end()});
}

inline std::vector<double> encode_occ(const OccEncoder& enc, double o) {
    if (!(o >= 0.0 && o <= 1.0)) throw ValidationError("co-occurrence value must lie in [0, 1]");
    if (enc.in_dim() != 1) throw ValidationError("occ encoder must take 1 input");
    return detail::encode_row(enc, {o});
}

/// All reviews of POI i joined by single spaces, ordered by (user id, input order).
inline std::string fuse_poi_text(const CheckinCorpus& c, PoiId i) {
    std::string out;
    for (const auto& r : c.reviews()) {
        if (r.poi != i) continue;
        if (!out.empty()) out += ' ';
        out += r.text;
    }
    return out;
}

/// Signed feature hashing of token counts into `dim` buckets (unnormalized).
inline std::vector<double> hashed_counts(std::string_view s, std::size_t dim, std::uint64_t salt) {
    std::vector<double> v(dim, 0.0);
    for (const auto& tok : text::tokenize(s)) {
        const auto h = text::fnv1a(tok, salt);
        v[h % dim] += (h >> 63) ? -1.0 : 1.0;
    }
    return v;
}

/// 1 where any token hashes into the bucket, else 0. Reconstruction target for text.
inline std::vector<double> binarized_bow(std::string_view s, std::size_t dim, std::uint64_t salt) {
    std::vector<double> v(dim, 0.0);
    for (const auto& tok : text::tokenize(s)) v[text::fnv1a(tok, salt) % dim] = 1.0;
    return v;
}

inline void l2_normalize(std::vector<double>& v) {
    double n = 0.0;
    for (const double x : v) n += x * x;
    if (n == 0.0) return;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
}

/// Deterministic text embedding: hashed bag-of-words or vectors loaded from a file.
class TextEncoder {
public:
    struct HashingBow {
        std::size_t dim = 256;
        std::uint64_t salt = 0;
    };
    struct Precomputed {
        std::size_t dim = 0;
        std::unordered_map<std::string, std::vector<double>> by_ext_id;
    };

    TextEncoder() : variant_(HashingBow{}) {}
    explicit TextEncoder(HashingBow h) : variant_(h) {
        if (h.dim == 0) throw ValidationError("text encoder dim must be > 0");
    }
    explicit TextEncoder(Precomputed p) : variant_(std::move(p)) {}

    /// JSONL `{"poi":"<ext>","vec":[...]}`; vectors are L2-normalized on load.
    static TextEncoder load_precomputed(const std::filesystem::path& path) {
        Precomputed p;
        std::istringstream in(io::read_file(path));
        std::string raw;
        std::size_t line = 0;
        while (std::getline(in, raw)) {
            ++line;
            if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
            nlohmann::json rec;
            try {
                rec = nlohmann::json::parse(raw);
            } catch (const nlohmann::json::parse_error&) {
                throw ValidationError("embedding line " + std::to_string(line) + ": malformed JSON");
            }
            if (!rec.contains("poi") || !rec["poi"].is_string() || !rec.contains("vec") || !rec["vec"].is_array())
                throw ValidationError("embedding line " + std::to_string(line) + ": expected {\"poi\",\"vec\"}");
            auto v = rec["vec"].get<std::vector<double>>();
            if (p.dim == 0) p.dim = v.size();
            if (v.size() != p.dim || v.empty())
                throw ValidationError("embedding line " + std::to_string(line) + ": inconsistent dimension");
            l2_normalize(v);
            p.by_ext_id[rec["poi"].get<std::string>()] = std::move(v);
        }
        if (p.by_ext_id.empty()) throw ValidationError("no embeddings in " + path.string());
        return TextEncoder(std::move(p));
    }

    std::size_t dim() const {
        return std::visit([](const auto& v) { return v.dim; }, variant_);
    }

    bool is_hashing() const noexcept { return std::holds_alternative<HashingBow>(variant_); }

    /// Unit-norm hashed BoW (zero vector for text without tokens).
    std::vector<double> encode_text(std::string_view s) const {
        const auto* h = std::get_if<HashingBow>(&variant_);
        if (!h) throw ValidationError("precomputed text encoder cannot embed raw text");
        auto v = hashed_counts(s, h->dim, h->salt);
        l2_normalize(v);
        return v;
    }

    std::vector<double> encode_poi(const CheckinCorpus& c, PoiId i) const {
        if (const auto* p = std::get_if<Precomputed>(&variant_)) {
            const auto it = p->by_ext_id.find(c.poi(i).ext_id);
            if (it == p->by_ext_id.end()) throw ValidationError("no precomputed embedding for poi " + c.poi(i).ext_id);
            return it->second;
        }
        return encode_text(fuse_poi_text(c, i));
    }

    /// N x dim matrix of POI text embeddings.
    Matrix encode_all(const CheckinCorpus& c) const {
        Matrix m(c.num_pois(), dim());
        for (std::size_t i = 0; i < c.num_pois(); ++i) {
            const auto v = encode_poi(c, static_cast<PoiId>(i));
            std::copy(v.begin(), v.end(), m.row_span(i).begin());
        }
        return m;
    }

private:
    std::variant<HashingBow, Precomputed> variant_;
};

/// Edge list of one context graph in (node, rank) order with raw GOT edge inputs.
/// Edge k is (src[k] <- dst[k]).
struct GraphEdges {
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;
    Matrix geo;  // E x 3 featurized relative positions
    Matrix occ;  // E x 1 co-occurrence O[src][dst]

    std::size_t size() const noexcept { return src.size(); }
};

inline GraphEdges edge_inputs(const CheckinCorpus& c, const ContextGraph& g, const Matrix& cooc, double s_scale_km) {
    GraphEdges e;
    for (std::size_t i = 0; i < g.neighbors.size(); ++i)
        for (const PoiId j : g.neighbors[i]) {
            e.src.push_back(i);
            e.dst.push_back(j);
        }
    e.geo = Matrix(e.size(), 3);
    e.occ = Matrix(e.size(), 1);
    for (std::size_t k = 0; k < e.size(); ++k) {
        const auto f = relpos_features(relpos(c, static_cast<PoiId>(e.src[k]), static_cast<PoiId>(e.dst[k])), s_scale_km);
        std::copy(f.begin(), f.end(), e.geo.row_span(k).begin());
        const double o = cooc(e.src[k], e.dst[k]);
        if (!(o >= 0.0 && o <= 1.0)) throw ValidationError("co-occurrence feature outside [0, 1]");
        e.occ[k] = o;
    }
    return e;
}

}  // namespace adaptgot
