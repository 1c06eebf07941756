#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adaptgot/error.hpp"
#include "adaptgot/io.hpp"
#include "adaptgot/rng.hpp"

namespace adaptgot::wl {

using Label = std::vector<int>;
using Coloring = std::vector<std::size_t>;

inline constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();

/// Simple undirected graph with a discrete feature tuple per node.
class LabeledGraph {
public:
    LabeledGraph() = default;

    explicit LabeledGraph(std::vector<Label> labels) : labels_(std::move(labels)), adj_(labels_.size()) {}

    LabeledGraph(std::vector<Label> labels, const std::vector<std::pair<std::size_t, std::size_t>>& edges)
        : LabeledGraph(std::move(labels)) {
        for (const auto& [a, b] : edges) add_edge(a, b);
    }

    /// Uniform single-feature labels.
    static LabeledGraph unlabeled(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges = {}) {
        return LabeledGraph(std::vector<Label>(n, Label{0}), edges);
    }

    void add_edge(std::size_t a, std::size_t b) {
        if (a >= size() || b >= size()) throw ValidationError("wl: edge endpoint out of range");
        if (a == b) throw ValidationError("wl: self loop");
        if (has_edge(a, b)) throw ValidationError("wl: duplicate edge");
        adj_[a].insert(std::lower_bound(adj_[a].begin(), adj_[a].end(), b), b);
        adj_[b].insert(std::lower_bound(adj_[b].begin(), adj_[b].end(), a), a);
    }

    bool has_edge(std::size_t a, std::size_t b) const {
        return std::binary_search(adj_.at(a).begin(), adj_.at(a).end(), b);
    }

    std::size_t size() const noexcept { return labels_.size(); }
    const std::vector<std::size_t>& neighbors(std::size_t v) const { return adj_.at(v); }
    const Label& label(std::size_t v) const { return labels_.at(v); }
    const std::vector<Label>& labels() const noexcept { return labels_; }

    std::vector<std::pair<std::size_t, std::size_t>> edges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t a = 0; a < size(); ++a)
            for (const auto b : adj_[a])
                if (a < b) out.emplace_back(a, b);
        return out;
    }

    /// Copy with one more feature appended to every label.
    LabeledGraph with_feature(const std::vector<int>& feature) const {
        if (feature.size() != size()) throw ValidationError("wl: feature length mismatch");
        LabeledGraph g = *this;
        for (std::size_t v = 0; v < size(); ++v) g.labels_[v].push_back(feature[v]);
        return g;
    }

    /// Node-induced subgraph; node i of the result is nodes[i] of this graph.
    LabeledGraph induced(const std::vector<std::size_t>& nodes) const {
        std::vector<std::size_t> local(size(), kAbsent);
        std::vector<Label> labels;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i] >= size() || local[nodes[i]] != kAbsent) throw ValidationError("wl: bad induced node set");
            local[nodes[i]] = i;
            labels.push_back(labels_[nodes[i]]);
        }
        LabeledGraph g(std::move(labels));
        for (std::size_t i = 0; i < nodes.size(); ++i)
            for (const auto b : adj_[nodes[i]])
                if (local[b] != kAbsent && i < local[b]) g.add_edge(i, local[b]);
        return g;
    }

private:
    std::vector<Label> labels_;
    std::vector<std::vector<std::size_t>> adj_;
};

/// Dense ids for arbitrary keys, assigned in sorted key order so equal
/// multisets of keys give equal colorings.
template <typename Key>
Coloring intern_sorted(const std::vector<Key>& keys) {
    std::vector<Key> distinct = keys;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    Coloring out(keys.size());
    for (std::size_t v = 0; v < keys.size(); ++v)
        out[v] = static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), keys[v]) - distinct.begin());
    return out;
}

inline std::size_t num_colors(const Coloring& c) {
    std::vector<std::size_t> s = c;
    std::sort(s.begin(), s.end());
    return static_cast<std::size_t>(std::unique(s.begin(), s.end()) - s.begin());
}

inline Coloring initial_coloring(const LabeledGraph& g) { return intern_sorted(g.labels()); }

/// One refinement round: color <- id of (color, sorted neighbor colors).
inline Coloring refine_once(const LabeledGraph& g, const Coloring& c) {
    std::vector<std::vector<std::size_t>> sig(g.size());
    for (std::size_t v = 0; v < g.size(); ++v) {
        sig[v].push_back(c[v]);
        std::vector<std::size_t> nb;
        for (const auto u : g.neighbors(v)) nb.push_back(c[u]);
        std::sort(nb.begin(), nb.end());
        sig[v].insert(sig[v].end(), nb.begin(), nb.end());
    }
    return intern_sorted(sig);
}

struct RefinementTrace {
    std::vector<Coloring> rounds;  // rounds[0] is the initial coloring
    bool stable = false;

    const Coloring& final_coloring() const { return rounds.back(); }
    std::size_t num_rounds() const { return rounds.size() - 1; }
};

/// Runs `rounds` refinements, or until the class count stops growing.
inline RefinementTrace wl_refine(const LabeledGraph& g, std::optional<std::size_t> rounds = std::nullopt) {
    RefinementTrace t;
    t.rounds.push_back(initial_coloring(g));
    if (rounds) {
        for (std::size_t r = 0; r < *rounds; ++r) t.rounds.push_back(refine_once(g, t.rounds.back()));
        t.stable = t.rounds.size() > 1 && num_colors(t.rounds.back()) == num_colors(t.rounds[t.rounds.size() - 2]);
        return t;
    }
    while (true) {
        auto next = refine_once(g, t.rounds.back());
        if (num_colors(next) == num_colors(t.rounds.back())) break;
        t.rounds.push_back(std::move(next));
    }
    t.stable = true;
    return t;
}

/// Shannon entropy (bits) of the color histogram.
inline double label_entropy(const Coloring& c) {
    if (c.empty()) throw ValidationError("label_entropy: no nodes");
    std::map<std::size_t, std::size_t> counts;
    for (const auto x : c) ++counts[x];
    double h = 0.0;
    const double n = static_cast<double>(c.size());
    for (const auto& [color, k] : counts) {
        const double p = static_cast<double>(k) / n;
        h -= p * std::log2(p);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Label conflicts

struct ConflictEstimate {
    double estimate = 0.0;
    double analytic = 0.0;
    double sigma = 0.0;  // binomial standard error at the analytic value
    std::size_t trials = 0;
};

/// Monte-Carlo chance that two random distinct nodes of `n` receive identical
/// d-feature labels drawn uniformly from an alphabet of `a` symbols.
inline ConflictEstimate conflict_probability(std::size_t n, std::size_t d, std::size_t a, std::size_t trials,
                                             std::uint64_t seed) {
    if (trials < 1) throw ValidationError("conflict_probability: trials must be >= 1");
    if (n < 2 || d < 1 || a < 1) throw ValidationError("conflict_probability: need n >= 2, d >= 1, a >= 1");
    std::size_t hits = 0;
    std::vector<std::uint64_t> labels(n * d);
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, n * 131 + d * 17 + a, t));
        for (auto& x : labels) x = rng.below(a);
        const auto i = rng.below(n);
        auto j = rng.below(n - 1);
        if (j >= i) ++j;
        if (std::equal(labels.begin() + i * d, labels.begin() + (i + 1) * d, labels.begin() + j * d)) ++hits;
    }
    ConflictEstimate e;
    e.trials = trials;
    e.estimate = static_cast<double>(hits) / static_cast<double>(trials);
    e.analytic = std::pow(static_cast<double>(a), -static_cast<double>(d));
    e.sigma = std::sqrt(e.analytic * (1.0 - e.analytic) / static_cast<double>(trials));
    return e;
}

// ---------------------------------------------------------------------------
// Multiple subgraphs

struct MultiColoring {
    Coloring combined;
    double entropy = 0.0;
    std::vector<Coloring> members;  // stabilized member colorings over g's nodes, kAbsent outside
    std::vector<double> member_entropy;
};

/// Combines the stabilized colorings of node-induced subgraphs of `g`.
/// Each family entry lists the nodes of one subgraph.
inline MultiColoring multi_subgraph_refine(const LabeledGraph& g, const std::vector<std::vector<std::size_t>>& family) {
    if (family.empty()) throw ValidationError("multi_subgraph_refine: empty family");
    MultiColoring out;
    for (const auto& nodes : family) {
        const auto stable = wl_refine(g.induced(nodes)).final_coloring();
        Coloring lifted(g.size(), kAbsent);
        for (std::size_t i = 0; i < nodes.size(); ++i) lifted[nodes[i]] = stable[i];
        out.member_entropy.push_back(label_entropy(lifted));
        out.members.push_back(std::move(lifted));
    }
    std::vector<std::vector<std::size_t>> tuples(g.size());
    for (std::size_t v = 0; v < g.size(); ++v)
        for (const auto& m : out.members) tuples[v].push_back(m[v]);
    out.combined = intern_sorted(tuples);
    out.entropy = label_entropy(out.combined);
    return out;
}

inline std::vector<std::size_t> all_nodes(const LabeledGraph& g) {
    std::vector<std::size_t> v(g.size());
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

/// Reproducer text for a failed multi-subgraph instance.
inline std::string describe_instance(const LabeledGraph& g, const std::vector<std::vector<std::size_t>>& family) {
    std::string s = "nodes " + std::to_string(g.size()) + "\nlabels";
    for (const auto& l : g.labels()) {
        s += " (";
        for (std::size_t k = 0; k < l.size(); ++k) s += (k ? "," : "") + std::to_string(l[k]);
        s += ")";
    }
    s += "\nedges";
    for (const auto& [a, b] : g.edges()) s += " " + std::to_string(a) + "-" + std::to_string(b);
    for (const auto& f : family) {
        s += "\nsubgraph";
        for (const auto v : f) s += " " + std::to_string(v);
    }
    return s + "\n";
}

/// Every simple graph on n nodes, edges enumerated by bitmask over pairs (a<b).
inline std::vector<LabeledGraph> all_graphs(std::size_t n) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) pairs.emplace_back(a, b);
    std::vector<LabeledGraph> out;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << pairs.size()); ++mask) {
        std::vector<std::pair<std::size_t, std::size_t>> e;
        for (std::size_t k = 0; k < pairs.size(); ++k)
            if (mask >> k & 1) e.push_back(pairs[k]);
        out.push_back(LabeledGraph::unlabeled(n, e));
    }
    return out;
}

/// Every assignment of n symbols from an alphabet of size a, in lexicographic order.
inline std::vector<std::vector<int>> all_assignments(std::size_t n, std::size_t a) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(n, 0);
    while (true) {
        out.push_back(cur);
        std::size_t k = 0;
        while (k < n && ++cur[k] == static_cast<int>(a)) cur[k++] = 0;
        if (k == n) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiments

struct LadderStep {
    std::string name;
    double entropy = 0.0;
    double expected = 0.0;
};

/// Entropy ladder: one feature (2+2 split), an added feature (4 distinct),
/// and a six-node graph seen through two subgraphs (6 distinct).
inline std::vector<LadderStep> entropy_ladder() {
    std::vector<LadderStep> out;
    const std::vector<std::pair<std::size_t, std::size_t>> path4 = {{0, 1}, {1, 2}, {2, 3}};
    const auto single = LabeledGraph::unlabeled(4, path4);
    out.push_back({"single feature, 4-node path", label_entropy(wl_refine(single).final_coloring()), 1.0});

    const auto multi = single.with_feature({0, 0, 1, 1});
    out.push_back({"two features, 4-node path", label_entropy(wl_refine(multi).final_coloring()), 2.0});

    const auto path6 = LabeledGraph::unlabeled(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}});
    const auto mc = multi_subgraph_refine(path6, {all_nodes(path6), {0, 1, 2}});
    out.push_back({"two subgraphs, 6-node path", mc.entropy, std::log2(6.0)});
    return out;
}

struct Theorem2Result {
    std::size_t initial_checks = 0;
    std::size_t initial_violations = 0;
    std::size_t stable_checks = 0;
    std::size_t stable_violations = 0;
};

/// Adding a feature never lowers entropy. The initial coloring does not
/// depend on edges, so it is checked over every pair of label assignments for
/// n <= max_nodes and alphabets <= max_alphabet; the stabilized coloring is
/// checked over every graph on n <= stable_nodes nodes.
inline Theorem2Result verify_feature_entropy(std::size_t max_nodes, std::size_t max_alphabet, std::size_t stable_nodes,
                                             std::size_t stable_alphabet) {
    constexpr double kTol = 1e-12;
    Theorem2Result r;
    for (std::size_t n = 1; n <= max_nodes; ++n)
        for (std::size_t a = 1; a <= max_alphabet; ++a) {
            const auto assignments = all_assignments(n, a);
            for (const auto& base : assignments) {
                const auto g = LabeledGraph::unlabeled(n).with_feature(base);
                const double h0 = label_entropy(initial_coloring(g));
                for (const auto& extra : assignments) {
                    ++r.initial_checks;
                    if (label_entropy(initial_coloring(g.with_feature(extra))) < h0 - kTol) ++r.initial_violations;
                }
            }
        }
    for (std::size_t n = 1; n <= stable_nodes; ++n) {
        const auto graphs = all_graphs(n);
        const auto assignments = all_assignments(n, stable_alphabet);
        for (const auto& g0 : graphs)
            for (const auto& base : assignments) {
                const auto g = g0.with_feature(base);
                const double h0 = label_entropy(wl_refine(g).final_coloring());
                for (const auto& extra : assignments) {
                    ++r.stable_checks;
                    if (label_entropy(wl_refine(g.with_feature(extra)).final_coloring()) < h0 - kTol) ++r.stable_violations;
                }
            }
    }
    return r;
}

struct MultiSubgraphResult {
    std::size_t instances = 0;
    std::size_t violations = 0;        // H_multi < entropy of the full graph g
    std::size_t member_violations = 0;  // H_multi < max member entropy
    std::vector<std::string> counterexamples;
};

inline void check_multi(const LabeledGraph& g, const std::vector<std::vector<std::size_t>>& family,
                        MultiSubgraphResult& r) {
    constexpr double kTol = 1e-12;
    const auto mc = multi_subgraph_refine(g, family);
    const double single = label_entropy(wl_refine(g).final_coloring());
    const double best_member = *std::max_element(mc.member_entropy.begin(), mc.member_entropy.end());
    ++r.instances;
    const bool bad = mc.entropy < single - kTol;
    const bool bad_member = mc.entropy < best_member - kTol;
    if (bad) ++r.violations;
    if (bad_member) ++r.member_violations;
    if (bad || bad_member) r.counterexamples.push_back(describe_instance(g, family));
}

/// Every graph on n nodes with family {g, S, V\S} for every proper nonempty S.
inline MultiSubgraphResult verify_multi_exhaustive(std::size_t n) {
    MultiSubgraphResult r;
    for (const auto& g : all_graphs(n))
        for (std::uint64_t s = 1; s + 1 < (std::uint64_t{1} << n); ++s) {
            std::vector<std::size_t> in, out;
            for (std::size_t v = 0; v < n; ++v) (s >> v & 1 ? in : out).push_back(v);
            check_multi(g, {all_nodes(g), in, out}, r);
        }
    return r;
}

/// Random G(n, p) graphs with 2-symbol labels; family = g plus 1..3 random
/// induced subgraphs. One seed per trial.
inline MultiSubgraphResult verify_multi_random(std::size_t n, std::size_t trials, std::uint64_t seed, double p = 0.3) {
    MultiSubgraphResult r;
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, 0x776c ^ n, t));
        std::vector<Label> labels(n);
        for (auto& l : labels) l = {static_cast<int>(rng.below(2))};
        LabeledGraph g(std::move(labels));
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b)
                if (rng.uniform() < p) g.add_edge(a, b);
        std::vector<std::vector<std::size_t>> family = {all_nodes(g)};
        const auto extra = 1 + rng.below(3);
        for (std::size_t f = 0; f < extra; ++f) {
            std::vector<std::size_t> nodes;
            for (std::size_t v = 0; v < n; ++v)
                if (rng.uniform() < 0.6) nodes.push_back(v);
            if (nodes.empty()) nodes.push_back(rng.below(n));
            family.push_back(std::move(nodes));
        }
        check_multi(g, family, r);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Lab run

struct LabOptions {
    std::uint64_t seed = 42;
    std::size_t conflict_trials = 100000;
    std::size_t conflict_nodes = 10;
    std::vector<std::size_t> alphabets = {2, 3};
    std::size_t max_features = 6;
    std::size_t random_instances = 1000;
    std::size_t random_nodes = 10;
    std::size_t exhaustive_nodes = 4;
    std::size_t feature_nodes = 5;
    std::size_t feature_alphabet = 3;
    std::size_t feature_stable_nodes = 4;
    std::size_t feature_stable_alphabet = 2;
};

struct LabReport {
    std::vector<LadderStep> ladder;
    std::vector<std::pair<std::size_t, std::vector<ConflictEstimate>>> conflicts;  // alphabet -> d = 1..max
    Theorem2Result features;
    MultiSubgraphResult exhaustive;
    MultiSubgraphResult random;

    bool ladder_ok(double tol = 1e-3) const {
        return std::all_of(ladder.begin(), ladder.end(),
                           [tol](const LadderStep& s) { return std::abs(s.entropy - s.expected) <= tol; });
    }

    bool conflicts_within_3sigma() const {
        for (const auto& [a, row] : conflicts)
            for (const auto& e : row)
                if (std::abs(e.estimate - e.analytic) > 3.0 * e.sigma) return false;
        return true;
    }

    bool conflicts_monotone() const {
        for (const auto& [a, row] : conflicts)
            for (std::size_t d = 1; d < row.size(); ++d)
                if (row[d].estimate > row[d - 1].estimate) return false;
        return true;
    }

    bool all_ok() const {
        return ladder_ok() && conflicts_within_3sigma() && conflicts_monotone() && features.initial_violations == 0 &&
               features.stable_violations == 0 && exhaustive.violations == 0 && exhaustive.member_violations == 0 &&
               random.violations == 0 && random.member_violations == 0;
    }

    std::string csv() const {
        std::string s = "experiment,config,entropy,conflict_estimate,conflict_analytic\n";
        for (const auto& st : ladder) s += "ladder," + st.name + "," + io::format_real(st.entropy) + ",,\n";
        for (const auto& [a, row] : conflicts)
            for (std::size_t d = 0; d < row.size(); ++d)
                s += "conflict,a=" + std::to_string(a) + " d=" + std::to_string(d + 1) + ",," +
                     io::format_real(row[d].estimate) + "," + io::format_real(row[d].analytic) + "\n";
        return s;
    }

    std::string text() const {
        std::string s = "1-WL entropy ladder\n";
        for (const auto& st : ladder)
            s += "  " + st.name + ": H = " + io::format_real(st.entropy, 4) + " bits (expected " +
                 io::format_real(st.expected, 4) + ")\n";
        s += "Label conflict probability (Monte-Carlo vs a^-d)\n";
        for (const auto& [a, row] : conflicts)
            for (std::size_t d = 0; d < row.size(); ++d)
                s += "  a=" + std::to_string(a) + " d=" + std::to_string(d + 1) + ": " + io::format_real(row[d].estimate, 5) +
                     " vs " + io::format_real(row[d].analytic, 5) + " (3 sigma = " + io::format_real(3 * row[d].sigma, 3) +
                     ")\n";
        s += std::string("  within 3 sigma: ") + (conflicts_within_3sigma() ? "yes" : "NO") +
             ", nonincreasing in d: " + (conflicts_monotone() ? "yes" : "NO") + "\n";
        s += "Added feature never lowers entropy\n";
        s += "  initial colorings: " + std::to_string(features.initial_checks) + " checks, " +
             std::to_string(features.initial_violations) + " violations\n";
        s += "  stabilized colorings: " + std::to_string(features.stable_checks) + " checks, " +
             std::to_string(features.stable_violations) + " violations\n";
        s += "Multiple subgraphs: H_multi >= H_single\n";
        s += "  exhaustive: " + std::to_string(exhaustive.instances) + " instances, " +
             std::to_string(exhaustive.violations + exhaustive.member_violations) + " counterexamples\n";
        s += "  random: " + std::to_string(random.instances) + " instances, " +
             std::to_string(random.violations + random.member_violations) + " counterexamples\n";
        s += std::string("Overall: ") + (all_ok() ? "PASS" : "FAIL") + "\n";
        return s;
    }
};

inline LabReport run_lab(const LabOptions& opt) {
    LabReport r;
    r.ladder = entropy_ladder();
    for (const auto a : opt.alphabets) {
        std::vector<ConflictEstimate> row;
        for (std::size_t d = 1; d <= opt.max_features; ++d)
            row.push_back(conflict_probability(opt.conflict_nodes, d, a, opt.conflict_trials, opt.seed));
        r.conflicts.emplace_back(a, std::move(row));
    }
    r.features = verify_feature_entropy(opt.feature_nodes, opt.feature_alphabet, opt.feature_stable_nodes,
                                        opt.feature_stable_alphabet);
    for (std::size_t n = 1; n <= opt.exhaustive_nodes; ++n) {
        const auto e = verify_multi_exhaustive(n);
        r.exhaustive.instances += e.instances;
        r.exhaustive.violations += e.violations;
        r.exhaustive.member_violations += e.member_violations;
        r.exhaustive.counterexamples.insert(r.exhaustive.counterexamples.end(), e.counterexamples.begin(),
                                            e.counterexamples.end());
    }
    r.random = verify_multi_random(opt.random_nodes, opt.random_instances, opt.seed);
    return r;
}

}  // namespace adaptgot::wl
