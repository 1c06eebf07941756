// adaptgot: command-line front end for the pretraining pipeline.
//
//   adaptgot synth    --out DIR                      corpus.jsonl + lexicon.tsv
//   adaptgot ingest   --corpus F --out DIR           canonical corpus.jsonl + stats
//   adaptgot sample   --corpus F --out DIR           graphs.jsonl (all four strategies)
//   adaptgot pretrain --corpus F --out DIR           embeddings, loss curve, gates, checkpoint
//   adaptgot embed    --corpus F --checkpoint C      embeddings from a saved model
//   adaptgot eval     --corpus F --embeddings E      metrics.csv
//   adaptgot wl-lab   [--theorems] --out DIR         wl_lab.csv + report.txt
//
// Exit codes: 2 missing/unreadable file, 3 invalid input, 4 numerical divergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "adaptgot/adaptgot.hpp"

namespace fs = std::filesystem;
using namespace adaptgot;

namespace {

struct Common {
    std::string config_path;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "config file (key=value lines or a JSON object)");
    sub->add_option("--out", c.out, "output directory")->capture_default_str();
    sub->add_option("--seed", c.seed, "overrides the config seed");
    sub->add_option("--set", c.sets, "override one config key, key=value")->take_all();
}

RunConfig resolve(const Common& c) {
    RunConfig cfg;
    if (!c.config_path.empty()) {
        if (!fs::exists(c.config_path)) throw IoError("no such file: " + c.config_path);
        cfg = load_config(c.config_path);
    }
    if (c.seed) cfg.seed = *c.seed;
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
        cfg.set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

void write_out(const Common& c, const std::string& name, const std::string& content) {
    io::write_file_atomic(fs::path(c.out) / name, content);
}

void write_lock(const Common& c, const RunConfig& cfg) { write_out(c, "config.lock", cfg.to_lock_string()); }

CheckinCorpus load_corpus(const std::string& path) {
    if (!fs::exists(path)) throw IoError("no such file: " + path);
    return ingest(path);
}

SentimentLexicon load_lexicon(const RunConfig& cfg) {
    if (cfg.lexicon.empty()) return {};
    if (!fs::exists(cfg.lexicon)) throw IoError("no such file: " + cfg.lexicon);
    return SentimentLexicon::load(cfg.lexicon);
}

std::optional<TextEncoder> load_text(const RunConfig& cfg) {
    if (cfg.text_embeddings.empty()) return std::nullopt;
    if (!fs::exists(cfg.text_embeddings)) throw IoError("no such file: " + cfg.text_embeddings);
    return TextEncoder::load_precomputed(cfg.text_embeddings);
}

SamplingConfig sampling_config(const RunConfig& cfg) {
    SamplingConfig s;
    s.k = cfg.k;
    s.bandwidth_km = cfg.bandwidth_km;
    s.gamma = cfg.gamma;
    s.density_pool_mult = cfg.density_pool_mult;
    s.literal_sign = cfg.literal_sign_sampling;
    s.materialize_distance = cfg.materialize_distance;
    return s;
}

std::vector<std::size_t> parse_ks(const std::string& s) {
    std::vector<std::size_t> ks;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = std::min(s.find(',', start), s.size());
        const auto tok = detail::trim(s.substr(start, comma - start));
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (tok.empty() || used != tok.size() || tok[0] == '-' || v == 0) throw ValidationError("bad K list '" + s + "'");
        ks.push_back(static_cast<std::size_t>(v));
        start = comma + 1;
    }
    return ks;
}

std::string synth_lexicon_tsv() {
    const auto lex = synth::mood_lexicon();
    std::string out = "# word\tpolarity\n";
    for (const auto& w : synth::mood_words())
        if (const double* p = lex.find(w)) out += w + "\t" + io::format_real(*p) + "\n";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AdaptGOT: POI embeddings from mixed context graphs"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    Common common;
    std::string corpus_path, checkpoint_path, embeddings_path, resume_path, ks_text = "1,5,10";
    synth::SynthSpec spec;
    bool theorems = false;
    wl::LabOptions lab;

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic clustered check-in corpus");
    add_common(synth_cmd, common);
    synth_cmd->add_option("--pois", spec.n_pois)->capture_default_str();
    synth_cmd->add_option("--users", spec.n_users)->capture_default_str();
    synth_cmd->add_option("--clusters", spec.n_clusters)->capture_default_str();
    synth_cmd->add_option("--checkins", spec.checkins_per_user, "check-ins per user")->capture_default_str();
    synth_cmd->add_option("--vocab", spec.review_vocab, "cluster-specific review words")->capture_default_str();

    auto* ingest_cmd = app.add_subcommand("ingest", "validate a JSONL corpus and write it in canonical form");
    add_common(ingest_cmd, common);
    ingest_cmd->add_option("--corpus", corpus_path)->required();

    auto* sample_cmd = app.add_subcommand("sample", "build the four context graphs");
    add_common(sample_cmd, common);
    sample_cmd->add_option("--corpus", corpus_path)->required();

    auto* pretrain_cmd = app.add_subcommand("pretrain", "masked pretraining");
    add_common(pretrain_cmd, common);
    pretrain_cmd->add_option("--corpus", corpus_path)->required();
    pretrain_cmd->add_option("--resume", resume_path, "continue from a checkpoint");

    auto* embed_cmd = app.add_subcommand("embed", "write embeddings from a checkpoint");
    add_common(embed_cmd, common);
    embed_cmd->add_option("--corpus", corpus_path)->required();
    embed_cmd->add_option("--checkpoint", checkpoint_path)->required();

    auto* eval_cmd = app.add_subcommand("eval", "next-POI probes against random and one-hot baselines");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--corpus", corpus_path)->required();
    eval_cmd->add_option("--embeddings", embeddings_path)->required();
    eval_cmd->add_option("--k", ks_text, "comma-separated K list")->capture_default_str();

    auto* wl_cmd = app.add_subcommand("wl-lab", "1-WL entropy and label-conflict experiments");
    add_common(wl_cmd, common);
    wl_cmd->add_flag("--theorems", theorems, "print the verification report to stdout");
    wl_cmd->add_option("--trials", lab.conflict_trials, "Monte-Carlo trials per setting")->capture_default_str();
    wl_cmd->add_option("--instances", lab.random_instances, "random multi-subgraph instances")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "adaptgot: %s\n", e.what());
        return 3;
    }

    try {
        const RunConfig cfg = resolve(common);

        if (synth_cmd->parsed()) {
            spec.seed = cfg.seed;
            spec.validate();
            const auto c = synth::generate(spec);
            write_out(common, "corpus.jsonl", export_corpus_jsonl(c));
            write_out(common, "lexicon.tsv", synth_lexicon_tsv());
            write_lock(common, cfg);
            std::printf("synth: %zu POIs, %zu users, %zu check-ins, %zu reviews\n", c.num_pois(), c.num_users(),
                        c.checkins().size(), c.reviews().size());
        } else if (ingest_cmd->parsed()) {
            const auto c = load_corpus(corpus_path);
            write_out(common, "corpus.jsonl", export_corpus_jsonl(c));
            write_lock(common, cfg);
            std::printf("ingest: %zu POIs, %zu users, %zu check-ins, %zu reviews, %zu categories\n", c.num_pois(),
                        c.num_users(), c.checkins().size(), c.reviews().size(), c.num_categories());
        } else if (sample_cmd->parsed()) {
            const auto c = load_corpus(corpus_path);
            const auto graphs = build_all_subgraphs(c, load_lexicon(cfg), sampling_config(cfg));
            std::string out;
            for (const auto& g : graphs) out += export_graph_jsonl(g);
            write_out(common, "graphs.jsonl", out);
            write_lock(common, cfg);
            std::printf("sample: 4 graphs, %zu nodes, k = %zu\n", c.num_pois(), cfg.k);
        } else if (pretrain_cmd->parsed()) {
            const auto c = load_corpus(corpus_path);
            Trainer trainer(c, cfg, load_lexicon(cfg), load_text(cfg));
            if (!resume_path.empty()) trainer.resume(io::read_file(resume_path));
            write_lock(common, cfg);
            try {
                while (trainer.state().epoch < cfg.epochs) {
                    trainer.run_epoch();
                    if (cfg.checkpoint_every && trainer.state().epoch % cfg.checkpoint_every == 0)
                        write_out(common, "checkpoint.json", trainer.checkpoint());
                }
            } catch (const NumericalError&) {
                // keep what was learned up to the last good epoch
                write_out(common, "checkpoint.json", trainer.checkpoint());
                write_out(common, "loss.csv", loss_curve_csv(trainer.state().curve));
                throw;
            }
            write_out(common, "checkpoint.json", trainer.checkpoint());
            write_out(common, "loss.csv", loss_curve_csv(trainer.state().curve));
            write_out(common, "embeddings.jsonl", embeddings_jsonl(c, trainer.embeddings()));
            write_out(common, "gates.jsonl", gates_jsonl(trainer.gate_weights()));
            const auto& curve = trainer.state().curve;
            if (!curve.empty())
                std::printf("pretrain: %zu epochs, loss %s -> %s\n", curve.size(), io::format_real(curve.front().total, 6).c_str(),
                            io::format_real(curve.back().total, 6).c_str());
        } else if (embed_cmd->parsed()) {
            const auto c = load_corpus(corpus_path);
            if (!fs::exists(checkpoint_path)) throw IoError("no such file: " + checkpoint_path);
            const auto content = io::read_file(checkpoint_path);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(content);
            } catch (const nlohmann::json::parse_error&) {
                throw ValidationError("checkpoint: malformed JSON");
            }
            if (!j.contains("config") || !j["config"].is_string()) throw ValidationError("checkpoint: no config");
            const auto saved = parse_config(j["config"].get<std::string>());
            Trainer trainer(c, saved, load_lexicon(saved), load_text(saved));
            trainer.resume(content);
            write_out(common, "embeddings.jsonl", embeddings_jsonl(c, trainer.embeddings()));
            write_out(common, "gates.jsonl", gates_jsonl(trainer.gate_weights()));
            write_lock(common, saved);
        } else if (eval_cmd->parsed()) {
            const auto c = load_corpus(corpus_path);
            const auto emb = eval::load_embeddings(embeddings_path, c);
            const auto rows = eval::evaluate_all(emb, c, parse_ks(ks_text), cfg.seed, cfg.probe_lambda);
            const auto csv = eval::metrics_csv(rows);
            write_out(common, "metrics.csv", csv);
            write_lock(common, cfg);
            std::fputs(csv.c_str(), stdout);
        } else if (wl_cmd->parsed()) {
            lab.seed = cfg.seed;
            const auto r = wl::run_lab(lab);
            write_out(common, "wl_lab.csv", r.csv());
            write_out(common, "report.txt", r.text());
            write_lock(common, cfg);
            if (theorems) std::fputs(r.text().c_str(), stdout);
            if (!r.all_ok()) {
                std::fprintf(stderr, "adaptgot: wl-lab check failed, see report.txt\n");
                return 1;
            }
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "adaptgot: %s\n", e.what());
        return 2;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "adaptgot: %s\n", e.what());
        return 3;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "adaptgot: %s\n", e.what());
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "adaptgot: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "adaptgot: internal error: %s\n", e.what());
        return 1;
    }
    return 0;
}
