// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "treesae/allocator.hpp"
#include "treesae/data.hpp"
#include "treesae/log.hpp"
#include "treesae/metrics.hpp"
#include "treesae/model.hpp"
#include "treesae/trainer.hpp"

using namespace treesae;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("%s criterion %d: %s (%s) [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
                secs);
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

oracle::Ratio as_ratio(const Payoff& p) { return {static_cast<std::uint64_t>(p.capacity), p.count}; }

struct Instance {
    std::vector<std::uint64_t> caps;
    std::uint64_t s = 0;
};

std::vector<Instance> allocation_instances() {
    Rng rng(2024);
    std::vector<Instance> out(250);
    for (auto& in : out) {
        in.caps.resize(1 + rng.uniform_index(5));
        for (auto& c : in.caps) c = 1 + rng.uniform_index(60);
        in.s = 1 + rng.uniform_index(8);
    }
    // A few instances made of exact ties.
    out.push_back({{6, 6, 6}, 5});
    out.push_back({{12, 6, 4, 3}, 8});
    out.push_back({{7}, 8});
    return out;
}

TreeSaeModel perturbed_model(TreeTopology topo, std::size_t d_m, std::vector<std::uint32_t> k,
                             AuxConfig aux, Rng& rng) {
    auto m = TreeSaeModel::initialize(std::move(topo), d_m, std::move(k), std::move(aux), rng);
    for (auto& v : m.encoder.values()) v += 0.3 * rng.normal();
    for (auto& v : m.bias.values()) v = 0.1 * rng.normal();
    return m;
}

DenseMatrix normal_rows(Rng& rng, std::size_t n, std::size_t d) {
    DenseMatrix x(n, d);
    for (auto& v : x.values()) v = rng.normal();
    return x;
}

DenseMatrix tail_rows(const DenseMatrix& x, std::size_t n) {
    DenseMatrix out(n, x.cols());
    for (std::size_t r = 0; r < n; ++r) {
        const auto src = x.row(x.rows() - n + r);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

// Synthetic benchmark used by the directional criteria.
constexpr std::size_t kRows = 200000;
constexpr std::size_t kEvalRows = 20000;

GeneratorConfig bench_generator(int seed) {
    GeneratorConfig g;
    g.d_model = 64;
    g.seed = 100 + seed;
    return g;
}

TrainConfig bench_train(int seed, std::vector<std::uint32_t> sizes, std::vector<std::uint32_t> k) {
    TrainConfig c;
    c.steps = 2000;
    c.batch_size = 256;
    c.learning_rate = 1e-3;
    c.layer_sizes = std::move(sizes);
    c.layer_k = std::move(k);
    c.seed = seed;
    c.dead_window = 25600;
    c.schedule.first_interval = 300;
    c.schedule.max_interval = 1000;
    return c;
}

struct HierarchyRun {
    double tree_rate = 0;
    double flat_best = 0;
    std::string flat_variant;
    double tree_ve = 0;
    double cooc = 1;
    std::size_t pairs = 0;
    std::size_t held_out_violations = 0;
    std::size_t held_out_rows = 0;
};

std::vector<HierarchyRun> hierarchy_runs;

void run_hierarchy_benchmark() {
    for (int s = 0; s < 3; ++s) {
        const auto g = bench_generator(s);
        const auto tree = make_tree(g);
        const auto data = generate(tree, kRows, g.seed);
        const auto eval = tail_rows(data.x, kEvalRows);

        const auto tm = train(bench_train(s, {8, 24}, {3, 2}), data.x).checkpoint.model;
        const auto fm = train(bench_train(s, {32}, {5}), data.x).checkpoint.model;
        const auto tr = ActivationRecord::from_model(tm, eval);
        const auto fr = ActivationRecord::from_model(fm, eval);

        HierarchyRun out;
        HierarchyConfig hc;
        const auto th = hierarchy_metric(tm, eval, tr, hc);
        out.tree_rate = th.pass_rate.value_or(0.0);
        out.pairs = th.pairs;
        hc.procedure = HierarchyProcedure::mcs;
        for (const auto v : McsVariant::all()) {
            hc.mcs_variant = v;
            const double rate = hierarchy_metric(fm, eval, fr, hc).pass_rate.value_or(0.0);
            if (out.flat_variant.empty() || rate > out.flat_best) {
                out.flat_best = rate;
                out.flat_variant = v.name();
            }
        }
        out.tree_ve = reconstruct(tm, eval).variance_explained.value_or(0.0);
        out.cooc = co_occurrence(tr, tm.topology).value_or(1.0);

        // Fresh rows from the same concept tree, never seen in training.
        const auto held = generate(tree, 10000, g.seed + 1000);
        const auto fwd = forward(tm, held.x);
        out.held_out_violations = coverage_violations(fwd.activations, tm.topology);
        out.held_out_rows = held.x.rows();
        hierarchy_runs.push_back(out);
    }
}

} // namespace

int main() {
    log::set_level(log::Level::warn);
    const auto instances = allocation_instances();

    report(1, "greedy allocation equals brute force and the s-th largest payoff", [&] {
        std::size_t ok = 0;
        for (const auto& in : instances) {
            const std::vector<double> caps(in.caps.begin(), in.caps.end());
            const auto g = greedy_allocate(caps, {}, in.s);
            if (!g.tau) continue;
            const auto bf = oracle::brute_force_tau(in.caps, in.s);
            if (bf && oracle::cmp(as_ratio(*g.tau), *bf) == 0 &&
                oracle::cmp(as_ratio(*g.tau), oracle::sth_largest(in.caps, in.s)) == 0)
                ++ok;
        }
        return Outcome{ok == instances.size() && ok >= 200,
                       std::to_string(ok) + "/" + std::to_string(instances.size()) + " instances exact"};
    });

    report(2, "feasibility at the optimum and just above it", [&] {
        std::size_t ok = 0;
        for (const auto& in : instances) {
            const std::vector<double> caps(in.caps.begin(), in.caps.end());
            const auto tau = *greedy_allocate(caps, {}, in.s).tau;
            const auto r = as_ratio(tau);
            // tau·(1 + 2^-20) as an exact rational.
            const oracle::Ratio above{r.num * ((1u << 20) + 1), r.den << 20};
            const Payoff above_p{tau.capacity * ((1u << 20) + 1), tau.count << 20};
            const bool good = feasibility(caps, tau, in.s) && oracle::feasible(in.caps, r, in.s) &&
                              !feasibility(caps, above_p, in.s) && !oracle::feasible(in.caps, above, in.s);
            ok += good;
        }
        return Outcome{ok == instances.size(),
                       std::to_string(ok) + "/" + std::to_string(instances.size()) + " instances"};
    });

    report(3, "no child fires without its parent on 10^4 held-out rows", [] {
        run_hierarchy_benchmark();
        std::size_t bad = 0, rows = 0;
        for (const auto& h : hierarchy_runs) {
            bad += h.held_out_violations;
            rows += h.held_out_rows;
        }
        return Outcome{bad == 0 && rows >= 10000, std::to_string(bad) + " violations on " +
                                                      std::to_string(rows) + " rows over 3 trained models"};
    });

    report(4, "backward agrees with central finite differences", [] {
        Rng rng(404);
        double worst = 0;
        std::size_t checked = 0;
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t layers = 1 + rng.uniform_index(3);
            std::vector<std::uint32_t> sizes, k;
            for (std::size_t l = 0; l < layers; ++l) {
                sizes.push_back(2 + static_cast<std::uint32_t>(rng.uniform_index(4)));
                k.push_back(1 + static_cast<std::uint32_t>(rng.uniform_index(2)));
            }
            const auto topo = TreeTopology::random(sizes, rng);
            auto aux = trial % 2 ? AuxConfig::all_layers_profile(layers, 2)
                                 : AuxConfig::first_layer_profile(layers, 2);
            aux.keep_empty_term = trial % 3 == 0;
            const std::size_t d_m = 3 + rng.uniform_index(4);
            const auto m = perturbed_model(topo, d_m, k, aux, rng);
            const auto x = normal_rows(rng, 6, d_m);
            std::vector<std::uint8_t> dead(topo.num_features(), 0);
            for (auto& d : dead) d = rng.uniform() < 0.4;
            const auto rep = oracle::finite_difference_check(m, x, dead);
            worst = std::max(worst, rep.max_rel);
            checked += rep.checked;
        }
        return Outcome{worst < 1e-5 && checked > 0,
                       fmt("max relative error %.2e", worst) + " over " + std::to_string(checked) + " coordinates"};
    });

    report(5, "single flat layer matches a plain top-k SAE", [] {
        Rng rng(505);
        double worst = 0;
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t d_f = 6 + rng.uniform_index(10), d_m = 3 + rng.uniform_index(6);
            const auto k = 1 + static_cast<std::uint32_t>(rng.uniform_index(4));
            const auto m = perturbed_model(TreeTopology::flat(static_cast<std::uint32_t>(d_f)), d_m, {k},
                                           AuxConfig::first_layer_profile(1, 3), rng);
            const auto x = normal_rows(rng, 16, d_m);
            std::vector<std::uint8_t> dead(d_f, 0);
            for (auto& d : dead) d = rng.uniform() < 0.4;
            const auto t = forward(m, x, dead);
            const auto g = backward(m, t);
            const auto o = oracle::plain_topk_sae(m.encoder, m.decoder, m.bias, k, x, dead, 3, 1.0 / 32);
            worst = std::max({worst, std::abs(t.recons_loss - o.recons), std::abs(t.aux_loss - o.aux),
                              std::abs(t.total_loss - o.total)});
            const std::pair<const DenseMatrix*, const DenseMatrix*> grads[] = {
                {&g.encoder, &o.g_enc}, {&g.decoder, &o.g_dec}, {&g.bias, &o.g_bias}};
            for (const auto& [a, b] : grads)
                for (std::size_t i = 0; i < a->size(); ++i)
                    worst = std::max(worst, std::abs(a->values()[i] - b->values()[i]));
        }
        return Outcome{worst < 1e-10, fmt("max abs difference %.2e over 50 batches", worst)};
    });

    report(6, "two-feature toy converges to the analytic solution", [] {
        const auto r = two_feature_toy_run();
        const auto c = two_feature_toy_check(r);
        char buf[256];
        std::snprintf(buf, sizeof buf, "alpha %.4f vs %.4f, beta %.4f vs %.4f, |k| %.4f, |ec.dp| %.4f%s%s",
                      r.alpha, r.alpha_closed_form, r.beta, r.beta_closed_form, std::abs(r.k),
                      std::abs(r.ec_dot_dp), c.diagnostic.empty() ? "" : "; ", c.diagnostic.c_str());
        return Outcome{c.passed && r.converged, buf};
    });

    report(7, "tree SAE finds more hierarchical pairs than a flat SAE with best-variant MCS", [] {
        std::string detail;
        bool pass = hierarchy_runs.size() == 3;
        for (const auto& h : hierarchy_runs) {
            const double gap = h.tree_rate - h.flat_best;
            pass = pass && gap >= 0.15;
            char buf[160];
            std::snprintf(buf, sizeof buf, "%stree %.3f (%zu pairs) flat %.3f [%s] gap %.3f",
                          detail.empty() ? "" : "; ", h.tree_rate, h.pairs, h.flat_best, h.flat_variant.c_str(), gap);
            detail += buf;
        }
        return Outcome{pass, detail};
    });

    report(8, "dynamic allocation lowers the deepest layer's dead count", [] {
        int lower = 0, drops = 0;
        std::string detail;
        for (int s = 0; s < 3; ++s) {
            const auto g = bench_generator(s);
            const auto data = generate(make_tree(g), kRows, g.seed);
            auto cfg = bench_train(s, {8, 56}, {3, 2});
            cfg.dead_window = 12800;
            cfg.schedule.first_interval = 200;
            cfg.schedule.max_interval = 400;
            const auto on = train(cfg, data.x);
            cfg.dynamic_allocation = false;
            const auto off = train(cfg, data.x);

            const std::size_t L = cfg.layer_sizes.size() - 1;
            const auto& a = on.telemetry.steps;
            const auto& b = off.telemetry.steps;
            const std::size_t tail = cfg.steps / 10;
            double ma = 0, mb = 0;
            for (std::size_t t = cfg.steps - tail; t < cfg.steps; ++t) {
                ma += a[t].dead[L];
                mb += b[t].dead[L];
            }
            ma /= tail;
            mb /= tail;
            lower += ma < mb;

            // A discontinuous drop: within 10 steps of an event that moved
            // features, the dead count falls by at least half of its level
            // before the event, and by more than the same window falls
            // without allocation.
            int best_drop = 0;
            bool dropped = false;
            for (const auto& e : on.telemetry.events) {
                if (e.moves == 0 || e.dead_before[L] == 0) continue;
                const std::size_t lo = e.step - 1, hi = std::min<std::size_t>(e.step + 10, cfg.steps);
                std::uint32_t min_on = e.dead_before[L], min_off = b[lo].dead[L];
                for (std::size_t t = lo; t < hi; ++t) {
                    min_on = std::min(min_on, a[t].dead[L]);
                    min_off = std::min(min_off, b[t].dead[L]);
                }
                const int drop_on = static_cast<int>(e.dead_before[L]) - static_cast<int>(min_on);
                const int drop_off = static_cast<int>(b[lo].dead[L]) - static_cast<int>(min_off);
                best_drop = std::max(best_drop, drop_on);
                if (drop_on >= 2 && 2 * drop_on >= static_cast<int>(e.dead_before[L]) && drop_on > drop_off)
                    dropped = true;
            }
            drops += dropped;
            char buf[160];
            std::snprintf(buf, sizeof buf, "%sseed %d tail dead ON %.1f OFF %.1f, largest drop %d%s",
                          detail.empty() ? "" : "; ", s, ma, mb, best_drop, dropped ? "" : " (no step drop)");
            detail += buf;
        }
        return Outcome{lower >= 2 && drops >= 2, detail};
    });

    report(9, "sibling co-occurrence below 0.1", [] {
        double worst = 0;
        for (const auto& h : hierarchy_runs) worst = std::max(worst, h.cooc);
        return Outcome{hierarchy_runs.size() == 3 && worst < 0.1, fmt("max over seeds %.4f", worst)};
    });

    report(10, "tree SAE variance explained above 0.85", [] {
        double worst = 1;
        for (const auto& h : hierarchy_runs) worst = std::min(worst, h.tree_ve);
        return Outcome{hierarchy_runs.size() == 3 && worst > 0.85, fmt("min over seeds %.4f", worst)};
    });

    report(11, "same seed is bit-identical and resume matches an uninterrupted run", [] {
        const auto g = bench_generator(0);
        const auto data = generate(make_tree(g), 20000, g.seed);
        auto cfg = bench_train(0, {8, 24}, {3, 2});
        cfg.steps = 200;
        cfg.schedule.first_interval = 60;
        cfg.schedule.max_interval = 80;
        cfg.dead_window = 5000;
        const auto a = train(cfg, data.x);
        const auto b = train(cfg, data.x);
        const bool same = a.telemetry.steps_csv(2) == b.telemetry.steps_csv(2) &&
                          a.telemetry.events_text() == b.telemetry.events_text() &&
                          encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint);

        Trainer half(cfg, data.x);
        RunTelemetry tel;
        for (int i = 0; i < 100; ++i) half.step(&tel);
        const auto ckpt = decode_checkpoint(encode_checkpoint(half.checkpoint()));
        const auto rest = resume(ckpt, data.x);
        tel.append(rest.telemetry);
        const bool resumed = rest.telemetry.steps.size() == 100 &&
                             tel.steps_csv(2) == a.telemetry.steps_csv(2) &&
                             tel.events_text() == a.telemetry.events_text() &&
                             encode_checkpoint(rest.checkpoint) == encode_checkpoint(a.checkpoint);
        return Outcome{same && resumed, std::string("repeat run ") + (same ? "identical" : "differs") +
                                            ", resumed 100 steps " + (resumed ? "bit-identical" : "differ")};
    });

    std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
