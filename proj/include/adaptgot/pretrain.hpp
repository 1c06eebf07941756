#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "adaptgot/config.hpp"
#include "adaptgot/corpus.hpp"
#include "adaptgot/got_attention.hpp"
#include "adaptgot/got_repr.hpp"
#include "adaptgot/io.hpp"
#include "adaptgot/moe.hpp"
#include "adaptgot/optim.hpp"
#include "adaptgot/rng.hpp"
#include "adaptgot/sampling.hpp"
#include "adaptgot/tensor.hpp"

namespace adaptgot {

/// Training diverged (NaN/Inf); the model was rolled back to the last good state.
class DivergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

inline constexpr std::size_t kNumLosses = 5;
inline constexpr std::array<const char*, kNumLosses> kLossNames = {"txt", "geo", "occ", "imp", "js"};

// ---------------------------------------------------------------------------
// Masking

/// Items hidden from the encoder in one epoch. Edge ids index the concatenation
/// of all context graphs' edge lists.
struct MaskPlan {
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::vector<std::size_t> text_nodes;
    std::vector<std::size_t> geo_edges;
    std::vector<std::size_t> occ_edges;
};

/// Number of items masked from a stream of `n`: exactly one below 5 items.
inline std::size_t mask_count(std::size_t n, double ratio) {
    if (n == 0) return 0;
    if (n < 5) return 1;
    const auto c = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
    return std::clamp<std::size_t>(c, 1, n);
}

/// Uniform sample of `count` of `n` items without replacement, sorted.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline MaskPlan make_mask_plan(std::uint64_t seed, std::uint64_t epoch, std::size_t num_nodes, std::size_t num_edges,
                               double ratio = 0.2) {
    if (num_nodes == 0) throw ValidationError("mask plan: empty node stream");
    MaskPlan plan{seed, epoch, {}, {}, {}};
    Rng text_rng(derive_seed(seed, 0x6d61736b00000000ULL + epoch, 1));
    Rng geo_rng(derive_seed(seed, 0x6d61736b00000000ULL + epoch, 2));
    Rng occ_rng(derive_seed(seed, 0x6d61736b00000000ULL + epoch, 3));
    plan.text_nodes = sample_without_replacement(num_nodes, mask_count(num_nodes, ratio), text_rng);
    plan.geo_edges = sample_without_replacement(num_edges, mask_count(num_edges, ratio), geo_rng);
    plan.occ_edges = sample_without_replacement(num_edges, mask_count(num_edges, ratio), occ_rng);
    return plan;
}

// ---------------------------------------------------------------------------
// Reconstruction losses

/// Uncorrupted values the decoders try to recover.
struct ReconTargets {
    Matrix text;                    // N x d_txt binarized bag of words
    Matrix geo;                     // E x 3 featurized relative position
    Matrix occ;                     // E x 1 co-occurrence
    std::vector<std::size_t> edge_node;  // E: node that owns each edge
};

/// Per-node decoder outputs.
struct ReconPredictions {
    ad::Var text_logits;  // N x d_txt
    ad::Var geo;          // N x 3
    ad::Var occ;          // N x 1
};

struct ReconLosses {
    ad::Var txt, geo, occ;
};

namespace detail {

/// Per node owning at least one masked edge: mean of that node's masked edge targets.
inline void masked_edge_means(const Matrix& edge_targets, const std::vector<std::size_t>& edge_node,
                              const std::vector<std::size_t>& masked, const std::vector<char>* node_filter,
                              std::vector<std::size_t>& nodes, Matrix& means) {
    std::vector<std::size_t> order;
    for (const auto e : masked) {
        if (e >= edge_node.size()) throw ValidationError("mask plan references an unknown edge");
        if (!node_filter || (*node_filter)[edge_node[e]]) order.push_back(e);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return edge_node[a] < edge_node[b]; });
    nodes.clear();
    std::vector<std::vector<double>> sums;
    std::vector<double> counts;
    for (const auto e : order) {
        if (nodes.empty() || nodes.back() != edge_node[e]) {
            nodes.push_back(edge_node[e]);
            sums.emplace_back(edge_targets.cols(), 0.0);
            counts.push_back(0.0);
        }
        for (std::size_t c = 0; c < edge_targets.cols(); ++c) sums.back()[c] += edge_targets(e, c);
        counts.back() += 1.0;
    }
    means = Matrix(nodes.size(), edge_targets.cols());
    for (std::size_t r = 0; r < nodes.size(); ++r)
        for (std::size_t c = 0; c < edge_targets.cols(); ++c) means(r, c) = sums[r][c] / counts[r];
}

}  // namespace detail

/// Losses over masked items only: BCE for text, MSE for the geo and occ edge
/// targets (averaged per node over its masked edges). Empty streams give 0.
/// `node_filter`, when given, restricts every term to nodes flagged nonzero.
inline ReconLosses reconstruction_losses(const ReconPredictions& pred, const ReconTargets& targets, const MaskPlan& plan,
                                         const std::vector<char>* node_filter = nullptr) {
    auto& t = *pred.text_logits.tape();
    ReconLosses out;

    std::vector<std::size_t> rows;
    for (const auto i : plan.text_nodes)
        if (!node_filter || (*node_filter)[i]) rows.push_back(i);
    if (rows.empty()) {
        out.txt = t.constant(ad::Tensor(1, 1, 0.0));
    } else {
        Matrix target(rows.size(), targets.text.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto src = targets.text.row_span(rows[r]);
            std::copy(src.begin(), src.end(), target.row_span(r).begin());
        }
        out.txt = ad::bce_with_logits(ad::gather_rows(pred.text_logits, rows), target);
    }

    const auto edge_loss = [&](ad::Var node_pred, const Matrix& edge_targets, const std::vector<std::size_t>& masked) {
        std::vector<std::size_t> nodes;
        Matrix means;
        detail::masked_edge_means(edge_targets, targets.edge_node, masked, node_filter, nodes, means);
        if (nodes.empty()) return t.constant(ad::Tensor(1, 1, 0.0));
        return ad::mse(ad::gather_rows(node_pred, nodes), t.constant(std::move(means)));
    };
    out.geo = edge_loss(pred.geo, targets.geo, plan.geo_edges);
    out.occ = edge_loss(pred.occ, targets.occ, plan.occ_edges);
    return out;
}

/// sum_k softmax(w)_k L_k; returns (total, alpha).
inline std::pair<ad::Var, ad::Var> total_loss(const std::vector<ad::Var>& components, ad::Var weights) {
    if (components.size() != weights.cols() || weights.rows() != 1)
        throw ValidationError("total_loss: " + std::to_string(components.size()) + " components for weights " +
                              weights.value().shape_str());
    for (const auto& c : components)
        if (c.value().size() != 1 || !std::isfinite(c.scalar())) throw NumericalError("total_loss: non-finite component");
    const auto alpha = ad::softmax_rows(weights);
    return {ad::sum(ad::mul(alpha, ad::concat_cols(components))), alpha};
}

// ---------------------------------------------------------------------------
// Model

/// Linear -> tanh -> Linear.
struct Decoder {
    ad::Parameter w1, b1, w2, b2;

    static Decoder init(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
        return {init_uniform(name + ".w1", in, hidden, in, rng), init_uniform(name + ".b1", 1, hidden, in, rng),
                init_uniform(name + ".w2", hidden, out, hidden, rng), init_uniform(name + ".b2", 1, out, hidden, rng)};
    }

    ad::Var forward(ad::Var x) const {
        auto& t = *x.tape();
        return ad::affine(ad::tanh(ad::affine(x, t.param(w1), t.param(b1))), t.param(w2), t.param(b2));
    }

    std::vector<ad::Parameter*> parameters() { return {&w1, &b1, &w2, &b2}; }
};

struct PretrainModel {
    GeoEncoder geo_enc;
    OccEncoder occ_enc;
    std::array<AttentionParams, kNumExperts> experts;
    GateParams gate;
    Decoder dec_txt, dec_geo, dec_occ;
    ad::Parameter mask_txt, mask_geo, mask_occ;
    ad::Parameter loss_weights;

    static PretrainModel init(const RunConfig& cfg, std::size_t text_dim, Rng& rng) {
        const std::size_t d_enh = 2 * cfg.d_model + text_dim;
        const AttentionConfig acfg = attention_config(cfg);
        PretrainModel m;
        m.geo_enc = GeoEncoder::init("geo_enc", 3, cfg.encoder_hidden, cfg.d_model, rng);
        m.occ_enc = OccEncoder::init("occ_enc", 1, cfg.encoder_hidden, cfg.d_model, rng);
        for (std::size_t o = 0; o < kNumExperts; ++o)
            m.experts[o] = AttentionParams::init(std::string("expert.") + strategy_name(kAllStrategies[o]), d_enh, acfg, rng);
        m.gate = GateParams::init("gate", cfg.gate_on_zfinal ? cfg.d_model : d_enh, cfg.experts_kept, rng);
        m.dec_txt = Decoder::init("dec_txt", cfg.d_model, cfg.decoder_hidden, cfg.d_txt, rng);
        m.dec_geo = Decoder::init("dec_geo", cfg.d_model, cfg.decoder_hidden, 3, rng);
        m.dec_occ = Decoder::init("dec_occ", cfg.d_model, cfg.decoder_hidden, 1, rng);
        m.mask_txt = {"mask.txt", ad::Tensor(1, text_dim)};
        m.mask_geo = {"mask.geo", ad::Tensor(1, cfg.d_model)};
        m.mask_occ = {"mask.occ", ad::Tensor(1, cfg.d_model)};
        m.loss_weights = {"loss_weights", ad::Tensor(1, kNumLosses)};
        return m;
    }

    static AttentionConfig attention_config(const RunConfig& cfg) {
        return {cfg.heads, cfg.d_k, cfg.d_model, cfg.dropout, cfg.layernorm_eps, cfg.plain_attention};
    }

    /// Every trainable parameter, in a fixed order.
    std::vector<ad::Parameter*> parameters() {
        std::vector<ad::Parameter*> out;
        const auto append = [&out](std::vector<ad::Parameter*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
        append(geo_enc.parameters());
        append(occ_enc.parameters());
        for (auto& e : experts) append(e.parameters());
        append(gate.parameters());
        append(dec_txt.parameters());
        append(dec_geo.parameters());
        append(dec_occ.parameters());
        append({&mask_txt, &mask_geo, &mask_occ, &loss_weights});
        return out;
    }
};

/// Everything the model consumes, precomputed once from the corpus.
struct PretrainData {
    std::size_t num_nodes = 0;
    std::array<GraphEdges, kNumExperts> graphs;
    std::array<std::size_t, kNumExperts + 1> edge_offset{};  // global edge id of each graph's first edge
    Matrix text_emb;                                          // N x text dim
    ReconTargets targets;

    std::size_t num_edges() const noexcept { return edge_offset.back(); }
};

inline PretrainData prepare_data(const CheckinCorpus& c, const std::array<ContextGraph, kNumExperts>& graphs,
                                 const TextEncoder& text_encoder, const RunConfig& cfg) {
    PretrainData d;
    d.num_nodes = c.num_pois();
    const auto cooc = cfg.cooccur_window_secs < 0 ? cooccurrence(c) : cooccurrence(c, cfg.cooccur_window_secs);
    for (std::size_t g = 0; g < kNumExperts; ++g) {
        if (graphs[g].num_nodes() != c.num_pois()) throw ValidationError("context graph does not cover every POI");
        d.graphs[g] = edge_inputs(c, graphs[g], cooc, cfg.s_scale_km);
        d.edge_offset[g + 1] = d.edge_offset[g] + d.graphs[g].size();
    }
    d.text_emb = text_encoder.encode_all(c);
    d.targets.text = Matrix(c.num_pois(), cfg.d_txt);
    for (std::size_t i = 0; i < c.num_pois(); ++i) {
        const auto bow = binarized_bow(fuse_poi_text(c, static_cast<PoiId>(i)), cfg.d_txt, cfg.text_salt);
        std::copy(bow.begin(), bow.end(), d.targets.text.row_span(i).begin());
    }
    d.targets.geo = Matrix(d.num_edges(), 3);
    d.targets.occ = Matrix(d.num_edges(), 1);
    for (std::size_t g = 0; g < kNumExperts; ++g)
        for (std::size_t k = 0; k < d.graphs[g].size(); ++k) {
            const auto e = d.edge_offset[g] + k;
            for (std::size_t c3 = 0; c3 < 3; ++c3) d.targets.geo(e, c3) = d.graphs[g].geo(k, c3);
            d.targets.occ[e] = d.graphs[g].occ[k];
            d.targets.edge_node.push_back(d.graphs[g].src[k]);
        }
    return d;
}

struct ForwardResult {
    ad::Var embeddings;  // h', N x d_model
    ad::Var fused;       // pre-activation fusion
    GateOutput gate;
    std::array<AttentionOutput, kNumExperts> attention;
    std::array<ad::Var, kNumExperts> x_enh;
    ReconPredictions predictions;
    std::vector<ad::Var> components;  // txt, geo, occ, imp, js (only when a plan is given)
    ad::Var total;
    ad::Var alpha;
};

/// One pass of the whole stack on `tape`.
///
/// With a mask plan, masked text rows and edge encodings are swapped for the
/// learned mask tokens and the five loss components plus the weighted total
/// are built. `train` enables dropout and gate noise, both drawn from `rng`.
inline ForwardResult forward(const PretrainModel& m, const PretrainData& d, const RunConfig& cfg, ad::Tape& t,
                             const MaskPlan* plan, bool train, Rng& rng, const std::vector<char>* node_filter = nullptr) {
    const AttentionConfig acfg = PretrainModel::attention_config(cfg);
    const std::size_t n = d.num_nodes;
    ForwardResult r;

    auto h_txt = t.constant(d.text_emb);
    if (plan && !plan->text_nodes.empty()) h_txt = ad::replace_rows(h_txt, t.param(m.mask_txt), plan->text_nodes);

    std::vector<ad::Var> z_finals;
    for (std::size_t g = 0; g < kNumExperts; ++g) {
        const auto& edges = d.graphs[g];
        auto h_geo = m.geo_enc.forward(t.constant(edges.geo));
        auto h_occ = m.occ_enc.forward(t.constant(edges.occ));
        if (plan) {
            const auto local = [&](const std::vector<std::size_t>& global) {
                std::vector<std::size_t> out;
                for (const auto e : global)
                    if (e >= d.edge_offset[g] && e < d.edge_offset[g + 1]) out.push_back(e - d.edge_offset[g]);
                return out;
            };
            const auto lg = local(plan->geo_edges);
            const auto lo = local(plan->occ_edges);
            if (!lg.empty()) h_geo = ad::replace_rows(h_geo, t.param(m.mask_geo), lg);
            if (!lo.empty()) h_occ = ad::replace_rows(h_occ, t.param(m.mask_occ), lo);
        }
        r.x_enh[g] = aggregate_node_features(n, edges.src, h_geo, h_occ, h_txt);
        r.attention[g] = got_attention(m.experts[g], acfg, r.x_enh[g], edges.src, edges.dst, h_geo, h_occ, train, &rng);
        z_finals.push_back(r.attention[g].z_final);
    }

    const auto mean_of = [](const auto& vs) {
        ad::Var acc = vs[0];
        for (std::size_t i = 1; i < vs.size(); ++i) acc = ad::add(acc, vs[i]);
        return ad::scale(acc, 1.0 / static_cast<double>(vs.size()));
    };
    const auto gate_in = cfg.gate_on_zfinal ? mean_of(z_finals) : mean_of(r.x_enh);
    ad::Tensor noise(n, kNumExperts);
    if (train)
        for (double& x : noise.data()) x = rng.normal();
    r.gate = gate_forward(m.gate, gate_in, std::move(noise));
    const auto act = parse_fusion_activation(cfg.fusion_activation);
    r.fused = gated_sum(r.gate.weights, z_finals);
    r.embeddings = activate(r.fused, act);

    r.predictions = {m.dec_txt.forward(r.embeddings), m.dec_geo.forward(r.embeddings), m.dec_occ.forward(r.embeddings)};
    if (!plan) return r;

    const auto recon = reconstruction_losses(r.predictions, d.targets, *plan, node_filter);
    ad::Var gates = r.gate.weights;
    if (node_filter) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < n; ++i)
            if ((*node_filter)[i]) rows.push_back(i);
        gates = ad::gather_rows(gates, rows);
    }
    const auto imp = importance_loss(gates);
    const auto dense = gated_sum(r.gate.dense, z_finals);
    const auto js = ad::js_divergence(graph_distribution(r.fused), graph_distribution(dense));
    r.components = {recon.txt, recon.geo, recon.occ, imp, js};
    std::tie(r.total, r.alpha) = total_loss(r.components, t.param(m.loss_weights));
    return r;
}

// ---------------------------------------------------------------------------
// Training

struct LossRecord {
    std::size_t epoch = 0;
    std::array<double, kNumLosses> components{};
    double total = 0.0;
    std::array<double, kNumLosses> alpha{};
    std::array<double, kNumExperts> importance{};  // per-expert gate sums of the epoch's training pass
};

inline std::string loss_curve_csv(const std::vector<LossRecord>& curve) {
    std::string out = "epoch,txt,geo,occ,imp,js,total,alpha_txt,alpha_geo,alpha_occ,alpha_imp,alpha_js\n";
    for (const auto& r : curve) {
        out += std::to_string(r.epoch);
        for (const double c : r.components) out += "," + io::format_real(c);
        out += "," + io::format_real(r.total);
        for (const double a : r.alpha) out += "," + io::format_real(a);
        out += "\n";
    }
    return out;
}

/// Model, optimizer and progress: everything needed to continue training.
struct PretrainState {
    RunConfig config;
    PretrainModel model;
    ad::Adam adam;
    std::size_t epoch = 0;  // completed epochs
    std::vector<LossRecord> curve;
};

inline constexpr const char* kCheckpointHeader = "ADAPTGOT-CKPT-1";

inline std::string checkpoint_json(PretrainState& s) {
    nlohmann::json j;
    j["format"] = kCheckpointHeader;
    j["epoch"] = s.epoch;
    j["config"] = s.config.to_lock_string();
    j["adam_steps"] = s.adam.steps();
    auto& params = j["params"];
    for (auto* p : s.model.parameters())
        params[p->name] = {{"shape", {p->value.rows(), p->value.cols()}}, {"values", p->value.data()}};
    auto& moments = j["adam"];
    for (const auto& [name, mom] : s.adam.moments()) moments[name] = {{"m", mom.m.data()}, {"v", mom.v.data()}};
    auto& curve = j["curve"];
    curve = nlohmann::json::array();
    for (const auto& r : s.curve)
        curve.push_back({{"epoch", r.epoch},
                         {"components", r.components},
                         {"total", r.total},
                         {"alpha", r.alpha},
                         {"importance", r.importance}});
    return j.dump() + "\n";
}

/// Restores a state written by checkpoint_json. `text_dim` is the width of the text embeddings.
inline PretrainState load_checkpoint_json(const std::string& content, std::size_t text_dim) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(content);
    } catch (const nlohmann::json::parse_error&) {
        throw ValidationError("checkpoint: malformed JSON");
    }
    if (j.value("format", std::string{}) != kCheckpointHeader) throw ValidationError("checkpoint: unsupported format");
    PretrainState s;
    s.config = parse_config(j.at("config").get<std::string>());
    Rng rng(0);
    s.model = PretrainModel::init(s.config, text_dim, rng);
    const auto& params = j.at("params");
    for (auto* p : s.model.parameters()) {
        if (!params.contains(p->name)) throw ValidationError("checkpoint: missing parameter " + p->name);
        const auto& e = params[p->name];
        const auto shape = e.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols())
            throw ValidationError("checkpoint: shape mismatch for " + p->name);
        p->value = Matrix(shape[0], shape[1], e.at("values").get<std::vector<double>>());
    }
    std::map<std::string, ad::AdamMoments> moments;
    for (const auto& [name, e] : j.at("adam").items()) {
        const auto* p = [&]() -> const ad::Parameter* {
            for (auto* q : s.model.parameters())
                if (q->name == name) return q;
            return nullptr;
        }();
        if (!p) throw ValidationError("checkpoint: moments for unknown parameter " + name);
        moments[name] = {Matrix(p->value.rows(), p->value.cols(), e.at("m").get<std::vector<double>>()),
                         Matrix(p->value.rows(), p->value.cols(), e.at("v").get<std::vector<double>>())};
    }
    s.adam = ad::Adam({s.config.lr, s.config.beta1, s.config.beta2, s.config.adam_eps});
    s.adam.restore(j.at("adam_steps").get<std::int64_t>(), std::move(moments));
    s.epoch = j.at("epoch").get<std::size_t>();
    for (const auto& r : j.at("curve")) {
        LossRecord rec;
        rec.epoch = r.at("epoch").get<std::size_t>();
        rec.components = r.at("components").get<std::array<double, kNumLosses>>();
        rec.total = r.at("total").get<double>();
        rec.alpha = r.at("alpha").get<std::array<double, kNumLosses>>();
        rec.importance = r.at("importance").get<std::array<double, kNumExperts>>();
        s.curve.push_back(rec);
    }
    return s;
}

/// Builds graphs and features from a corpus and runs masked pretraining.
class Trainer {
public:
    Trainer(const CheckinCorpus& corpus, const RunConfig& cfg, const SentimentLexicon& lexicon = {},
            std::optional<TextEncoder> text_encoder = std::nullopt)
        : text_encoder_(text_encoder ? std::move(*text_encoder)
                                     : TextEncoder(TextEncoder::HashingBow{cfg.d_txt, cfg.text_salt})) {
        cfg.validate();
        SamplingConfig scfg;
        scfg.k = cfg.k;
        scfg.bandwidth_km = cfg.bandwidth_km;
        scfg.gamma = cfg.gamma;
        scfg.density_pool_mult = cfg.density_pool_mult;
        scfg.literal_sign = cfg.literal_sign_sampling;
        scfg.materialize_distance = cfg.materialize_distance;
        graphs_ = build_all_subgraphs(corpus, lexicon, scfg);
        data_ = prepare_data(corpus, graphs_, text_encoder_, cfg);
        state_.config = cfg;
        Rng init_rng(derive_seed(cfg.seed, 0x696e6974ULL));
        state_.model = PretrainModel::init(cfg, text_encoder_.dim(), init_rng);
        state_.adam = ad::Adam({cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps});
    }

    const PretrainData& data() const noexcept { return data_; }
    const std::array<ContextGraph, kNumExperts>& graphs() const noexcept { return graphs_; }
    PretrainState& state() noexcept { return state_; }
    const PretrainState& state() const noexcept { return state_; }
    const RunConfig& config() const noexcept { return state_.config; }
    std::size_t text_dim() const { return text_encoder_.dim(); }

    /// Seeded generator for dropout and gate noise of one epoch/batch.
    Rng step_rng(std::size_t epoch, std::size_t batch = 0) const {
        return Rng(derive_seed(state_.config.seed, 0x7472616eULL + epoch, batch));
    }

    MaskPlan mask_plan(std::size_t epoch) const {
        return make_mask_plan(state_.config.seed, epoch, data_.num_nodes, data_.num_edges(), state_.config.mask_ratio);
    }

    /// Runs one epoch (one or more Adam steps) and appends its loss record.
    /// On NaN/Inf the state is rolled back and DivergenceError is thrown.
    const LossRecord& run_epoch() {
        const std::size_t epoch = state_.epoch + 1;
        const auto backup_params = snapshot();
        const auto backup_adam = state_.adam;
        try {
            const auto plan = mask_plan(epoch);
            const auto batches = make_batches(epoch);
            LossRecord rec;
            rec.epoch = epoch;
            for (std::size_t b = 0; b < batches.size(); ++b) {
                ad::Tape tape;
                Rng rng = step_rng(epoch, b);
                const auto* filter = batches.size() == 1 ? nullptr : &batches[b];
                const auto fr = forward(state_.model, data_, state_.config, tape, &plan, true, rng, filter);
                const double w = 1.0 / static_cast<double>(batches.size());
                for (std::size_t k = 0; k < kNumLosses; ++k) {
                    rec.components[k] += w * fr.components[k].scalar();
                    rec.alpha[k] += w * fr.alpha.value()[k];
                }
                rec.total += w * fr.total.scalar();
                const auto& g = fr.gate.weights.value();
                for (std::size_t i = 0; i < g.rows(); ++i)
                    if (!filter || (*filter)[i])
                        for (std::size_t o = 0; o < kNumExperts; ++o) rec.importance[o] += g(i, o);
                const auto grads = tape.backward(fr.total);
                for (const auto& [p, gr] : grads)
                    if (!gr.all_finite()) throw NumericalError("non-finite gradient for " + p->name);
                state_.adam.step(state_.model.parameters(), grads);
                for (auto* p : state_.model.parameters())
                    if (!p->value.all_finite()) throw NumericalError("non-finite parameter " + p->name);
            }
            state_.epoch = epoch;
            state_.curve.push_back(rec);
            return state_.curve.back();
        } catch (const NumericalError& e) {
            restore(backup_params);
            state_.adam = backup_adam;
            throw DivergenceError(std::string("training diverged at epoch ") + std::to_string(epoch) + ": " + e.what());
        }
    }

    /// Trains until `epochs` epochs are complete (no-op if already there).
    void train_until(std::size_t epochs) {
        while (state_.epoch < epochs) run_epoch();
    }

    /// Eval-mode embeddings h' (no masking, no dropout, zero gate noise).
    Matrix embeddings() const {
        ad::Tape tape;
        Rng rng(0);
        return forward(state_.model, data_, state_.config, tape, nullptr, false, rng).embeddings.value();
    }

    /// Eval-mode gate weights, N x 4.
    Matrix gate_weights() const {
        ad::Tape tape;
        Rng rng(0);
        return forward(state_.model, data_, state_.config, tape, nullptr, false, rng).gate.weights.value();
    }

    std::string checkpoint() { return checkpoint_json(state_); }

    void resume(const std::string& checkpoint_content) {
        auto s = load_checkpoint_json(checkpoint_content, text_encoder_.dim());
        // The epoch budget and checkpoint cadence may change between runs; nothing else may.
        s.config.epochs = state_.config.epochs;
        s.config.checkpoint_every = state_.config.checkpoint_every;
        if (s.config.to_lock_string() != state_.config.to_lock_string())
            throw ValidationError("checkpoint was written with a different configuration");
        state_ = std::move(s);
    }

private:
    std::vector<std::vector<char>> make_batches(std::size_t epoch) const {
        const std::size_t n = data_.num_nodes;
        const std::size_t bs = state_.config.batch_size;
        if (bs == 0 || bs >= n) return {std::vector<char>(n, 1)};
        Rng rng(derive_seed(state_.config.seed, 0x62617463ULL + epoch));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        std::vector<std::vector<char>> out;
        for (std::size_t start = 0; start < n; start += bs) {
            std::vector<char> f(n, 0);
            for (std::size_t i = start; i < std::min(n, start + bs); ++i) f[order[i]] = 1;
            out.push_back(std::move(f));
        }
        return out;
    }

    std::vector<Matrix> snapshot() {
        std::vector<Matrix> out;
        for (auto* p : state_.model.parameters()) out.push_back(p->value);
        return out;
    }

    void restore(const std::vector<Matrix>& values) {
        const auto ps = state_.model.parameters();
        for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i];
    }

    TextEncoder text_encoder_;
    std::array<ContextGraph, kNumExperts> graphs_;
    PretrainData data_;
    PretrainState state_;
};

/// JSONL `{"poi":"<ext>","vec":[...]}` in POI id order.
inline std::string embeddings_jsonl(const CheckinCorpus& c, const Matrix& emb) {
    std::string out;
    for (std::size_t i = 0; i < emb.rows(); ++i) {
        out += "{\"poi\":" + io::quote(c.poi(static_cast<PoiId>(i)).ext_id) + ",\"vec\":[";
        for (std::size_t k = 0; k < emb.cols(); ++k) out += (k ? "," : "") + io::format_real(emb(i, k));
        out += "]}\n";
    }
    return out;
}

/// JSONL `{"poi":i,"gates":[g0,g1,g2,g3]}`.
inline std::string gates_jsonl(const Matrix& gates) {
    std::string out;
    for (std::size_t i = 0; i < gates.rows(); ++i) {
        out += "{\"poi\":" + std::to_string(i) + ",\"gates\":[";
        for (std::size_t o = 0; o < gates.cols(); ++o) out += (o ? "," : "") + io::format_real(gates(i, o));
        out += "]}\n";
    }
    return out;
}

}  // namespace adaptgot
