// treesae command-line tool.
//
//   treesae generate | train | resume | audit | export-tree |
//           two-feature-check | alloc-bench
//
// Relative output names are resolved against $TREESAE_OUT_DIR (default:
// the working directory). Every subcommand accepts --config FILE and
// repeated --set section.key=value; flags override both.

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "treesae/allocator.hpp"
#include "treesae/config.hpp"
#include "treesae/data.hpp"
#include "treesae/errors.hpp"
#include "treesae/log.hpp"
#include "treesae/metrics.hpp"
#include "treesae/trainer.hpp"

namespace fs = std::filesystem;
using namespace treesae;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

fs::path out_dir() {
    const char* env = std::getenv("TREESAE_OUT_DIR");
    return env && *env ? fs::path(env) : fs::current_path();
}

std::string resolve(const std::string& name) {
    const fs::path p(name);
    if (p.is_absolute()) return p.string();
    return (out_dir() / p).string();
}

// Tracks files written by a subcommand so a failure removes all of them.
class Outputs {
  public:
    ~Outputs() {
        if (committed_) return;
        for (const auto& p : written_) {
            std::error_code ec;
            fs::remove(p, ec);
        }
    }
    void text(const std::string& path, const std::string& content) {
        prepare(path);
        write_text_atomic(path, content);
    }
    void bytes(const std::string& path, const std::vector<std::uint8_t>& content) {
        prepare(path);
        write_file_atomic(path, content);
    }
    void commit() { committed_ = true; }
    const std::vector<std::string>& written() const { return written_; }

  private:
    void prepare(const std::string& path) {
        const auto parent = fs::path(path).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        written_.push_back(path);
    }
    std::vector<std::string> written_;
    bool committed_ = false;
};

std::string stamp(const Config& cfg, std::uint64_t seed) {
    return "# treesae config_hash=" + hex64(cfg.hash()) + " seed=" + std::to_string(seed) + "\n";
}

std::string commented(const std::string& text) {
    std::istringstream is(text);
    std::string line, out;
    while (std::getline(is, line)) out += "# " + line + "\n";
    return out;
}

// Shared --config / --set handling.
struct ConfigSource {
    std::string file;
    std::vector<std::string> sets;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "key = value configuration file");
        cmd->add_option("--set", sets, "override one key, e.g. --set train.steps=500");
    }
    Config load() const {
        Config cfg;
        if (!file.empty()) cfg = Config::load(file);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) throw UsageError("--set expects section.key=value, got '" + s + "'");
            cfg.set(s.substr(0, eq), s.substr(eq + 1));
        }
        return cfg;
    }
};

// Shortest text that parses back to the same double.
std::string str(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string join(const std::vector<std::uint32_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
    ConfigSource src;
    std::optional<std::uint64_t> rows, seed, d_model, top, children, depth;
    std::optional<double> top_prob, child_prob, mix, noise;
    std::optional<std::string> siblings;
    std::string name = "synthetic";
};

int cmd_generate(const GenerateArgs& a) {
    Config cfg = a.src.load();
    if (a.rows) cfg.set("generate.rows", std::to_string(*a.rows));
    if (a.seed) cfg.set("generate.seed", std::to_string(*a.seed));
    if (a.d_model) cfg.set("generate.d_model", std::to_string(*a.d_model));
    if (a.top) cfg.set("generate.top_concepts", std::to_string(*a.top));
    if (a.children) cfg.set("generate.children_per_concept", std::to_string(*a.children));
    if (a.depth) cfg.set("generate.depth", std::to_string(*a.depth));
    if (a.top_prob) cfg.set("generate.top_probability", str(*a.top_prob));
    if (a.child_prob) cfg.set("generate.child_probability", str(*a.child_prob));
    if (a.mix) cfg.set("generate.parent_mix", str(*a.mix));
    if (a.noise) cfg.set("generate.noise", str(*a.noise));
    if (a.siblings) cfg.set("generate.siblings", *a.siblings);

    GeneratorConfig g;
    const auto rows = cfg.get_uint("generate.rows", 200000);
    if (rows == 0) throw UsageError("--rows must be > 0");
    g.seed = cfg.get_uint("generate.seed", g.seed);
    g.d_model = cfg.get_uint("generate.d_model", g.d_model);
    g.top_concepts = cfg.get_uint("generate.top_concepts", g.top_concepts);
    g.children_per_concept = cfg.get_uint("generate.children_per_concept", g.children_per_concept);
    g.depth = cfg.get_uint("generate.depth", g.depth);
    g.top_probability = cfg.get_double("generate.top_probability", g.top_probability);
    g.child_probability = cfg.get_double("generate.child_probability", g.child_probability);
    g.parent_mix = cfg.get_double("generate.parent_mix", g.parent_mix);
    g.log_mean = cfg.get_double("generate.log_mean", g.log_mean);
    g.log_sd = cfg.get_double("generate.log_sd", g.log_sd);
    g.noise = cfg.get_double("generate.noise", g.noise);
    const auto sib = cfg.get_string("generate.siblings", "exclusive");
    if (sib == "exclusive") {
        g.siblings = SiblingMode::exclusive;
    } else if (sib == "independent") {
        g.siblings = SiblingMode::independent;
    } else {
        throw UsageError("--siblings must be exclusive|independent");
    }
    // Echo every resolved generator value.
    Config resolved;
    resolved.set("generate.rows", std::to_string(rows));
    resolved.set("generate.seed", std::to_string(g.seed));
    resolved.set("generate.d_model", std::to_string(g.d_model));
    resolved.set("generate.top_concepts", std::to_string(g.top_concepts));
    resolved.set("generate.children_per_concept", std::to_string(g.children_per_concept));
    resolved.set("generate.depth", std::to_string(g.depth));
    resolved.set("generate.top_probability", str(g.top_probability));
    resolved.set("generate.child_probability", str(g.child_probability));
    resolved.set("generate.parent_mix", str(g.parent_mix));
    resolved.set("generate.log_mean", str(g.log_mean));
    resolved.set("generate.log_sd", str(g.log_sd));
    resolved.set("generate.noise", str(g.noise));
    resolved.set("generate.siblings", sib);

    const auto tree = make_tree(g);
    const auto data = generate(tree, rows, g.seed);
    const std::string head = stamp(resolved, g.seed);

    Outputs out;
    ActivationDataset ds;
    ds.x = data.x;
    ds.metadata = head + resolved.to_text();
    const auto base = resolve(a.name);
    out.bytes(base + ".tsae", encode_dataset(ds));
    out.text(base + ".labels.csv", head + labels_csv(data.labels));
    out.text(base + ".tree.txt", head + commented(resolved.to_text()) + tree.describe());
    out.commit();
    for (const auto& p : out.written()) std::cout << "wrote " << p << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// train / resume

struct TrainArgs {
    ConfigSource src;
    std::string dataset;
    std::optional<std::string> layers, layer_sizes, aux_profile;
    std::optional<std::uint64_t> steps, batch, seed, k_aux, dead_window, checkpoint_every;
    std::optional<std::uint64_t> first_interval, max_interval;
    std::optional<double> lr;
    bool no_dynamic = false;
    std::string name = "run";
};

void write_run(Outputs& out, const std::string& base, const Checkpoint& ckpt,
               const RunTelemetry& tel, const TrainConfig& cfg) {
    const Config resolved = cfg.to_config();
    const auto head = stamp(resolved, cfg.seed);
    out.bytes(base + ".ckpt", encode_checkpoint(ckpt));
    out.text(base + ".telemetry.csv", head + tel.steps_csv(cfg.layer_sizes.size()));
    out.text(base + ".events.txt", head + tel.events_text());
    out.text(base + ".config", head + resolved.to_text());
}

using TrainBody = std::function<TrainResult(const std::function<void(const Checkpoint&)>&)>;

int run_training(const std::string& base, const TrainBody& body) {
    Outputs out;
    const auto periodic = base + ".ckpt";
    auto on_ckpt = [&](const Checkpoint& c) { save_checkpoint(periodic, c); };
    try {
        auto result = body(on_ckpt);
        const auto cfg = TrainConfig::from_config(Config::parse(result.checkpoint.config_text));
        write_run(out, base, result.checkpoint, result.telemetry, cfg);
        out.commit();
        std::cout << "steps " << result.checkpoint.state.step << " events "
                  << result.checkpoint.state.events << " wall " << result.telemetry.wall_seconds
                  << "s\n";
        for (const auto& p : out.written()) std::cout << "wrote " << p << '\n';
        return 0;
    } catch (const TrainingAborted& e) {
        std::error_code ec;
        fs::remove(periodic, ec);
        const auto last = base + ".last-good.ckpt";
        save_checkpoint(last, e.last_good());
        std::cerr << "treesae: training aborted: " << e.what() << "\nlast good state saved to " << last
                  << '\n';
        return 1;
    } catch (...) {
        std::error_code ec;
        fs::remove(periodic, ec);
        throw;
    }
}

int cmd_train(const TrainArgs& a) {
    Config cfg = a.src.load();
    if (!a.dataset.empty()) cfg.set("train.dataset", a.dataset);
    if (a.layers) cfg.set("model.layers", *a.layers);
    if (a.layer_sizes) cfg.set("model.layer_sizes", *a.layer_sizes);
    if (a.aux_profile) cfg.set("model.aux_profile", *a.aux_profile);
    if (a.steps) cfg.set("train.steps", std::to_string(*a.steps));
    if (a.batch) cfg.set("train.batch_size", std::to_string(*a.batch));
    if (a.seed) cfg.set("train.seed", std::to_string(*a.seed));
    if (a.k_aux) cfg.set("model.k_aux", std::to_string(*a.k_aux));
    if (a.dead_window) cfg.set("allocator.dead_window", std::to_string(*a.dead_window));
    if (a.checkpoint_every) cfg.set("train.checkpoint_every", std::to_string(*a.checkpoint_every));
    if (a.first_interval) cfg.set("allocator.first_interval", std::to_string(*a.first_interval));
    if (a.max_interval) cfg.set("allocator.max_interval", std::to_string(*a.max_interval));
    if (a.lr) cfg.set("train.learning_rate", str(*a.lr));
    if (a.no_dynamic) cfg.set("allocator.dynamic", "false");
    const auto tc = TrainConfig::from_config(cfg);
    if (tc.dataset_path.empty()) throw UsageError("train: --dataset is required");
    const auto ds = load_dataset(tc.dataset_path);
    return run_training(
        resolve(a.name),
        [&](const auto& on_ckpt) { return train(tc, ds.x, std::nullopt, on_ckpt); });
}

struct ResumeArgs {
    std::string checkpoint;
    std::string dataset;
    std::optional<std::uint64_t> steps;
    std::string name = "resumed";
};

int cmd_resume(const ResumeArgs& a) {
    const auto ckpt = load_checkpoint(a.checkpoint);
    const auto tc = TrainConfig::from_config(Config::parse(ckpt.config_text));
    const std::string path = a.dataset.empty() ? tc.dataset_path : a.dataset;
    if (path.empty()) throw UsageError("resume: --dataset is required");
    const auto ds = load_dataset(path);
    return run_training(
        resolve(a.name), [&](const auto& on_ckpt) { return resume(ckpt, ds.x, a.steps, on_ckpt); });
}

// ---------------------------------------------------------------------------
// audit

struct AuditArgs {
    ConfigSource src;
    std::string checkpoint;
    std::string dataset;
    std::optional<std::string> procedure, variant;
    std::optional<std::uint64_t> sample_parents, top_rank, seed, rows;
    std::optional<double> density_quantile;
    std::string name = "audit";
};

int cmd_audit(const AuditArgs& a) {
    Config cfg = a.src.load();
    if (a.procedure) cfg.set("audit.procedure", *a.procedure);
    if (a.variant) cfg.set("audit.mcs_variant", *a.variant);
    if (a.sample_parents) cfg.set("audit.sample_parents", std::to_string(*a.sample_parents));
    if (a.top_rank) cfg.set("audit.top_rank", std::to_string(*a.top_rank));
    if (a.seed) cfg.set("audit.seed", std::to_string(*a.seed));
    if (a.rows) cfg.set("audit.rows", std::to_string(*a.rows));
    if (a.density_quantile) cfg.set("audit.density_quantile", str(*a.density_quantile));
    if (a.checkpoint.empty()) throw UsageError("audit: --checkpoint is required");

    const auto ckpt = load_checkpoint(a.checkpoint);
    std::string data_path = a.dataset;
    if (data_path.empty()) data_path = Config::parse(ckpt.config_text).get_string("train.dataset", "");
    if (data_path.empty()) throw UsageError("audit: --dataset is required");
    auto ds = load_dataset(data_path, ckpt.model.d_model());

    HierarchyConfig hc;
    const auto proc = cfg.get_string("audit.procedure", "both");
    hc.mcs_variant = McsVariant::parse(cfg.get_string("audit.mcs_variant", "non-scaling-binary"));
    hc.sample_parents = cfg.get_uint("audit.sample_parents", hc.sample_parents);
    hc.top_rank = cfg.get_uint("audit.top_rank", hc.top_rank);
    hc.density_quantile = cfg.get_double("audit.density_quantile", hc.density_quantile);
    hc.seed = cfg.get_uint("audit.seed", hc.seed);
    hc.probe.seed = hc.seed;
    const auto rows = std::min<std::uint64_t>(cfg.get_uint("audit.rows", 20000), ds.x.rows());

    Config resolved;
    resolved.set("audit.checkpoint", a.checkpoint);
    resolved.set("audit.dataset", data_path);
    resolved.set("audit.procedure", proc);
    resolved.set("audit.mcs_variant", hc.mcs_variant.name());
    resolved.set("audit.sample_parents", std::to_string(hc.sample_parents));
    resolved.set("audit.top_rank", std::to_string(hc.top_rank));
    resolved.set("audit.density_quantile", str(hc.density_quantile));
    resolved.set("audit.seed", std::to_string(hc.seed));
    resolved.set("audit.rows", std::to_string(rows));
    resolved.set("audit.model_config_hash", hex64(ckpt.state.config_hash));

    // Evaluate on the last `rows` rows of the dataset.
    DenseMatrix x(rows, ds.x.cols());
    for (std::uint64_t r = 0; r < rows; ++r) {
        const auto src = ds.x.row(ds.x.rows() - rows + r);
        std::copy(src.begin(), src.end(), x.row(r).begin());
    }
    const auto& model = ckpt.model;
    const auto records = ActivationRecord::from_model(model, x);
    std::vector<HierarchyProcedure> procs;
    if (proc == "both") {
        procs = {HierarchyProcedure::tree, HierarchyProcedure::mcs};
    } else {
        procs = {parse_procedure(proc)};
    }

    const auto head = stamp(resolved, hc.seed);
    std::ostringstream summary;
    summary << head << commented(resolved.to_text());
    std::string pairs;
    for (auto p : procs) {
        hc.procedure = p;
        const auto res = hierarchy_metric(model, x, records, hc);
        const auto csv = hierarchy_report_csv(res);
        pairs += pairs.empty() ? csv : csv.substr(csv.find('\n') + 1);
        summary << "pass_rate." << to_string(p) << " = "
                << (res.pass_rate ? str(*res.pass_rate) : std::string("none")) << '\n'
                << "pairs." << to_string(p) << " = " << res.pairs << '\n'
                << "sampled_parents." << to_string(p) << " = " << res.sampled_parents << '\n';
    }
    const auto rec = reconstruct(model, x);
    const auto cooc = co_occurrence(records, model.topology);
    const auto dead = dead_feature_rate(ckpt.ledger, model.topology,
                                        Config::parse(ckpt.config_text).get_uint("allocator.dead_window", 50000));
    const auto enc = encode(model, x);
    summary << "variance_explained = "
            << (rec.variance_explained ? str(*rec.variance_explained) : std::string("none")) << '\n'
            << "mean_l0 = " << str(rec.mean_l0) << '\n'
            << "composition = " << str(composition(model.decoder)) << '\n'
            << "co_occurrence = " << (cooc ? str(*cooc) : std::string("none")) << '\n'
            << "coverage_violations = " << coverage_violations(enc, model.topology) << '\n';
    for (std::size_t l = 0; l < dead.size(); ++l) summary << "dead_rate.layer" << l << " = " << str(dead[l]) << '\n';

    Outputs out;
    const auto base = resolve(a.name);
    out.text(base + ".pairs.csv", head + pairs);
    out.text(base + ".summary.txt", summary.str());
    out.commit();
    std::cout << summary.str();
    return 0;
}

// ---------------------------------------------------------------------------
// export-tree

int cmd_export_tree(const std::string& checkpoint, const std::string& name) {
    if (checkpoint.empty()) throw UsageError("export-tree: --checkpoint is required");
    const auto ckpt = load_checkpoint(checkpoint);
    const auto& t = ckpt.model.topology;
    const auto cfg = Config::parse(ckpt.config_text);
    std::ostringstream os;
    os << "# treesae config_hash=" << hex64(ckpt.state.config_hash)
       << " seed=" << cfg.get_uint("train.seed", 0) << '\n'
       << "# edge list: <parent> <child>; ROOT is the imaginary layer-0 node\n"
       << "# layers=" << join(t.layer_sizes()) << '\n';
    for (std::size_t l = 0; l < t.num_layers(); ++l) {
        for (auto f = t.layer_begin(l); f < t.layer_end(l); ++f) {
            const auto p = t.parent(f);
            os << (p == kRoot ? std::string("ROOT") : std::to_string(p)) << ' ' << f << '\n';
        }
    }
    Outputs out;
    const auto path = resolve(name) + ".edges.txt";
    out.text(path, os.str());
    out.commit();
    std::cout << "wrote " << path << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// two-feature-check

int cmd_two_feature(const ToyConfig& cfg) {
    const auto r = two_feature_toy_run(cfg);
    const auto check = two_feature_toy_check(r);
    std::cout.precision(6);
    std::cout << "steps " << r.steps << (r.converged ? " converged" : " not converged") << " loss " << r.loss
              << "\nalpha " << r.alpha << " closed form " << r.alpha_closed_form << "\nbeta " << r.beta
              << " closed form " << r.beta_closed_form << "\nS_p " << r.s_p << " S_c " << r.s_c << " k "
              << r.k << " e_c.d_p " << r.ec_dot_dp << '\n'
              << (check.passed ? "PASS" : "FAIL " + check.diagnostic) << '\n';
    return check.passed ? 0 : 1;
}

// ---------------------------------------------------------------------------
// alloc-bench

// Exhaustive max-min payoff over all compositions of s into m parts.
std::optional<Payoff> brute_force_tau(const std::vector<double>& caps, std::uint64_t s) {
    std::optional<Payoff> best;
    std::vector<std::uint64_t> k(caps.size(), 0);
    auto rec = [&](auto&& self, std::size_t i, std::uint64_t left) -> void {
        if (i + 1 == caps.size()) {
            k[i] = left;
            std::optional<Payoff> worst;
            for (std::size_t p = 0; p < caps.size(); ++p) {
                if (k[p] == 0) continue;
                const Payoff v{caps[p], k[p]};
                if (!worst || compare_payoff(v, *worst) < 0) worst = v;
            }
            if (worst && (!best || compare_payoff(*worst, *best) > 0)) best = worst;
            return;
        }
        for (std::uint64_t c = 0; c <= left; ++c) {
            k[i] = c;
            self(self, i + 1, left - c);
        }
    };
    if (s > 0 && !caps.empty()) rec(rec, 0, s);
    return best;
}

int cmd_alloc_bench(std::uint64_t instances, std::uint64_t max_parents, std::uint64_t max_children,
                    std::uint64_t seed) {
    if (max_parents == 0 || max_children == 0) throw UsageError("alloc-bench: limits must be > 0");
    Rng rng(seed);
    std::uint64_t mismatches = 0;
    double t_greedy = 0.0, t_brute = 0.0;
    for (std::uint64_t i = 0; i < instances; ++i) {
        const auto m = 1 + rng.uniform_index(max_parents);
        const auto s = 1 + rng.uniform_index(max_children);
        std::vector<double> caps(m);
        for (auto& c : caps) c = static_cast<double>(1 + rng.uniform_index(20));
        auto t0 = std::chrono::steady_clock::now();
        const auto g = greedy_allocate(caps, {}, s);
        auto t1 = std::chrono::steady_clock::now();
        const auto b = brute_force_tau(caps, s);
        auto t2 = std::chrono::steady_clock::now();
        t_greedy += std::chrono::duration<double>(t1 - t0).count();
        t_brute += std::chrono::duration<double>(t2 - t1).count();
        if (!g.tau || !b || compare_payoff(*g.tau, *b) != 0) ++mismatches;
    }
    std::cout << "instances " << instances << " mismatches " << mismatches << " greedy_s " << t_greedy
              << " brute_force_s " << t_brute << '\n';
    return mismatches == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tree sparse autoencoder toolkit"};
    app.require_subcommand(1);
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "debug|info|warn|error|off");

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "write a synthetic hierarchical dataset");
    gen.src.attach(g);
    g->add_option("--rows", gen.rows, "number of rows (default 200000)");
    g->add_option("--seed", gen.seed, "generator seed (default 1234)");
    g->add_option("--d-model", gen.d_model);
    g->add_option("--top-concepts", gen.top);
    g->add_option("--children", gen.children, "children per concept");
    g->add_option("--depth", gen.depth, "concept levels");
    g->add_option("--top-prob", gen.top_prob);
    g->add_option("--child-prob", gen.child_prob);
    g->add_option("--parent-mix", gen.mix);
    g->add_option("--noise", gen.noise);
    g->add_option("--siblings", gen.siblings, "exclusive|independent");
    g->add_option("--name", gen.name, "output prefix");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a Tree SAE");
    tr.src.attach(t);
    t->add_option("--dataset", tr.dataset, "activation file");
    t->add_option("--layers", tr.layers, "per-layer top-k budgets, e.g. 26,6");
    t->add_option("--layer-sizes", tr.layer_sizes, "features per privilege layer");
    t->add_option("--aux-profile", tr.aux_profile, "first|all|none|custom");
    t->add_option("--steps", tr.steps);
    t->add_option("--batch-size", tr.batch);
    t->add_option("--lr", tr.lr);
    t->add_option("--seed", tr.seed);
    t->add_option("--k-aux", tr.k_aux);
    t->add_option("--dead-window", tr.dead_window, "tokens");
    t->add_option("--checkpoint-every", tr.checkpoint_every);
    t->add_option("--first-interval", tr.first_interval, "steps before the first reallocation");
    t->add_option("--max-interval", tr.max_interval);
    t->add_flag("--no-dynamic-allocation", tr.no_dynamic, "disable dead-feature reallocation");
    t->add_option("--name", tr.name, "output prefix");

    ResumeArgs rs;
    auto* r = app.add_subcommand("resume", "continue training from a checkpoint");
    r->add_option("--checkpoint", rs.checkpoint)->required();
    r->add_option("--dataset", rs.dataset);
    r->add_option("--steps", rs.steps, "new total step count");
    r->add_option("--name", rs.name, "output prefix");

    AuditArgs au;
    auto* a = app.add_subcommand("audit", "hierarchy and dictionary metrics");
    au.src.attach(a);
    a->add_option("--checkpoint", au.checkpoint);
    a->add_option("--dataset", au.dataset);
    a->add_option("--procedure", au.procedure, "tree|mcs|both");
    a->add_option("--mcs-variant", au.variant, "[non-]scaling-{binary,value}");
    a->add_option("--sample-parents", au.sample_parents);
    a->add_option("--top-rank", au.top_rank);
    a->add_option("--density-quantile", au.density_quantile);
    a->add_option("--seed", au.seed);
    a->add_option("--rows", au.rows, "evaluation rows (default 20000)");
    a->add_option("--name", au.name, "output prefix");

    std::string ex_ckpt, ex_name = "tree";
    auto* e = app.add_subcommand("export-tree", "write the parent/child edge list");
    e->add_option("--checkpoint", ex_ckpt);
    e->add_option("--name", ex_name, "output prefix");

    ToyConfig toy;
    bool no_parent_instances = false;
    auto* tf = app.add_subcommand("two-feature-check", "two-feature analytic convergence harness");
    tf->add_option("--dim", toy.dim);
    tf->add_option("--alignment", toy.parent_alignment, "g . d*_c");
    tf->add_option("--child-fraction", toy.child_fraction);
    tf->add_flag("--no-parent-instances", no_parent_instances);
    tf->add_flag("--pin-parent", toy.pin_parent_to_concept);
    tf->add_option("--steps", toy.max_steps);
    tf->add_option("--lr", toy.learning_rate);
    tf->add_option("--seed", toy.seed);

    std::uint64_t bench_n = 200, bench_m = 5, bench_s = 8, bench_seed = 42;
    auto* ab = app.add_subcommand("alloc-bench", "greedy allocator vs brute force");
    ab->add_option("--instances", bench_n);
    ab->add_option("--max-parents", bench_m);
    ab->add_option("--max-children", bench_s);
    ab->add_option("--seed", bench_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }

    try {
        if (log_level == "debug") log::set_level(log::Level::debug);
        else if (log_level == "info") log::set_level(log::Level::info);
        else if (log_level == "warn") log::set_level(log::Level::warn);
        else if (log_level == "error") log::set_level(log::Level::error);
        else if (log_level == "off") log::set_level(log::Level::off);
        else throw UsageError("unknown --log-level " + log_level);

        if (g->parsed()) return cmd_generate(gen);
        if (t->parsed()) return cmd_train(tr);
        if (r->parsed()) return cmd_resume(rs);
        if (a->parsed()) return cmd_audit(au);
        if (e->parsed()) return cmd_export_tree(ex_ckpt, ex_name);
        if (tf->parsed()) {
            toy.parent_instances = !no_parent_instances;
            return cmd_two_feature(toy);
        }
        if (ab->parsed()) return cmd_alloc_bench(bench_n, bench_m, bench_s, bench_seed);
    } catch (const UsageError& err) {
        std::cerr << "treesae: usage error: " << err.what() << '\n';
        return 2;
    } catch (const ConfigError& err) {
        std::cerr << "treesae: config error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "treesae: error: " << err.what() << '\n';
        return 1;
    }
    return 0;
}
