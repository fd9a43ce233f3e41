#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "treesae/data.hpp"
#include "treesae/errors.hpp"
#include "treesae/metrics.hpp"

using namespace treesae;

namespace {

// Rows × features, child (feature 1) active on rows 0, 1, 3; parent (0) on 0 and 3.
ActivationRecord small_record() {
    return ActivationRecord::from_dense(DenseMatrix::from_rows({{2, 1, 0},
                                                                {0, 1, 0},
                                                                {4, 0, 0},
                                                                {1, 2, 3}}));
}

double angle_deg(std::span<const double> a, std::span<const double> b) {
    const double c = dot(a, b) / std::sqrt(squared_norm(a) * squared_norm(b));
    return std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

// Model whose decoder columns are the ground-truth directions, with the
// concept tree as topology.
TreeSaeModel oracle_model(const GroundTruthTree& tree) {
    std::vector<std::uint32_t> parents;
    std::uint32_t top = 0;
    for (const auto& c : tree.concepts) {
        parents.push_back(c.parent);
        top += c.parent == kRoot ? 1 : 0;
    }
    const auto n = static_cast<std::uint32_t>(tree.concepts.size());
    TreeSaeModel m;
    m.topology = TreeTopology({top, n - top}, parents);
    m.decoder = DenseMatrix(tree.d_model, n);
    for (std::uint32_t f = 0; f < n; ++f)
        for (std::size_t j = 0; j < tree.d_model; ++j) m.decoder(j, f) = tree.concepts[f].direction[j];
    m.encoder = transpose(m.decoder);
    m.bias = DenseMatrix(1, tree.d_model);
    m.layer_k = {top, n - top};
    m.aux.alpha = {0.0, 0.0};
    return m;
}

} // namespace

TEST_CASE("activation record bookkeeping") {
    const auto rec = small_record();
    CHECK(rec.num_rows() == 4);
    CHECK(rec.num_features() == 3);
    CHECK(rec.active_count(0) == 3);
    CHECK(rec.density(2) == 0.25);
    CHECK(rec.max_activation(0) == 4);
    CHECK(rec.indicator(1) == std::vector<std::uint8_t>{1, 1, 0, 1});
    CHECK(rec.is_dead(2) == false);
    SparseActivation bad;
    bad.num_features = 5;
    ActivationRecord r2(3);
    CHECK_THROWS_AS(r2.append(bad), DimensionError);
}

TEST_CASE("activation coverage") {
    const auto rec = small_record();
    CHECK(*activation_coverage(rec, 0, 1) == doctest::Approx(2.0 / 3.0));
    CHECK(*activation_coverage(rec, 1, 2) == 1.0);
    const auto empty = ActivationRecord::from_dense(DenseMatrix(3, 2));
    CHECK_FALSE(activation_coverage(empty, 0, 1));
}

TEST_CASE("masked cosine similarity by hand") {
    const auto rec = small_record();
    // On child rows 0, 1, 3: parent (2, 0, 1), child (1, 1, 2).
    CHECK(*mcs(rec, 0, 1, {false, true}) == doctest::Approx(2.0 / std::sqrt(6.0)));
    CHECK(*mcs(rec, 0, 1, {false, false}) == doctest::Approx(4.0 / std::sqrt(30.0)));
    // Per-feature scaling does not change a cosine.
    CHECK(*mcs(rec, 0, 1, {true, false}) == doctest::Approx(4.0 / std::sqrt(30.0)));
    CHECK(*mcs(rec, 0, 1, {true, true}) == doctest::Approx(2.0 / std::sqrt(6.0)));
    // Parent silent on every child row.
    const auto r2 = ActivationRecord::from_dense(DenseMatrix::from_rows({{1, 0}, {0, 1}}));
    CHECK(*mcs(r2, 0, 1) == 0.0);
    CHECK_FALSE(mcs(ActivationRecord::from_dense(DenseMatrix(2, 2)), 0, 1));
}

TEST_CASE("mcs variant names round trip") {
    std::set<std::string> names;
    for (const auto& v : McsVariant::all()) {
        names.insert(v.name());
        CHECK(McsVariant::parse(v.name()) == v);
    }
    CHECK(names.size() == 4);
    CHECK(McsVariant{}.name() == "non-scaling-binary");
    CHECK_THROWS_AS(McsVariant::parse("binary"), std::invalid_argument);
}

TEST_CASE("reconstruction score") {
    const std::vector<double> star{1, 0}, p{0.6, 0.8}, c{0.8, 0.6};
    CHECK(reconstruction_score(p, c, star) == doctest::Approx(0.6));
    // Non-unit inputs are normalized.
    const std::vector<double> p2{3, 4};
    CHECK(reconstruction_score(p2, c, star) == doctest::Approx(0.6));
    CHECK_THROWS_AS(reconstruction_score(std::vector<double>{0, 0}, c, star), std::invalid_argument);
    CHECK_THROWS_AS(reconstruction_score(std::vector<double>{1, 0, 0}, c, star), DimensionError);
}

TEST_CASE("probe recovers a planted direction") {
    const std::size_t d = 10, n = 4000;
    Rng rng(21);
    const auto w = random_unit_vector(rng, d);
    DenseMatrix x(n, d);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (auto& v : x.row(r)) v = rng.normal();
        labels[r] = dot(x.row(r), w) + 0.3 * rng.normal() > 0.8;
    }
    const auto pr = train_probe(x, labels);
    CHECK(angle_deg(pr.direction, w) < 5.0);
    CHECK(squared_norm(pr.direction) == doctest::Approx(1.0));
    CHECK(pr.train_accuracy > 0.9);
    CHECK(pr.positives == 512);
    CHECK(pr.negatives == 2560);

    ProbeConfig strict;
    strict.min_positives = n;
    CHECK_THROWS_AS(train_probe(x, labels, strict), std::invalid_argument);
    CHECK_THROWS_AS(train_probe(x, std::vector<std::uint8_t>(n, 0)), std::invalid_argument);
    CHECK_THROWS_AS(train_probe(x, std::vector<std::uint8_t>(3, 1)), DimensionError);
}

TEST_CASE("correlation ranks") {
    const auto dec = DenseMatrix::from_rows({{1, 0, 0.6, 2}, {0, 1, 0.8, 0}});
    const std::vector<double> dir{1, 0};
    // Cosines: 1, 0, 0.6, 1 -> ties to the lower index.
    CHECK(correlation_ranks(dec, dir) == std::vector<std::uint32_t>{0, 3, 2, 1});
    CHECK_THROWS_AS(correlation_ranks(dec, std::vector<double>{1, 0, 0}), DimensionError);
}

TEST_CASE("composition and co-occurrence by hand") {
    const auto dec = DenseMatrix::from_rows({{1, 2, 0}, {0, 0, 1}});
    CHECK(composition(dec) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(composition(DenseMatrix(2, 1)), std::invalid_argument);

    // Parent 0 with children 1, 2, 3. Row-wise: 1 on {0,1}, 2 on {1,2}, 3 never.
    const TreeTopology topo({1, 3}, {kRoot, 0, 0, 0});
    const auto rec = ActivationRecord::from_dense(
        DenseMatrix::from_rows({{1, 1, 0, 0}, {1, 1, 1, 0}, {1, 0, 1, 0}, {0, 0, 0, 0}}));
    // Pair (1,2): 1 shared / 3 union; the pairs with 3 contribute 0.
    CHECK(*co_occurrence(rec, topo) == doctest::Approx((1.0 / 3.0 + 0 + 0) / 3.0));
    CHECK(*co_occurrence(rec, topo, CoOccurrenceNorm::rows) == doctest::Approx(0.25 / 3.0));
    CHECK_FALSE(co_occurrence(rec, TreeTopology::flat(4)));
}

TEST_CASE("dead feature rate per layer") {
    const TreeTopology topo({2, 2}, {kRoot, kRoot, 0, 1});
    CapacityLedger led(4);
    led.tokens_seen = 100;
    led.last_active = {100, 10, 0, 95};
    CHECK(dead_feature_rate(led, topo, 50) == std::vector<double>{0.5, 0.5});
    CHECK_THROWS_AS(dead_feature_rate(CapacityLedger(3), topo, 5), DimensionError);
}

TEST_CASE("two-feature toy reaches the closed-form stationary point") {
    const auto r = two_feature_toy_run();
    const auto check = two_feature_toy_check(r);
    INFO(check.diagnostic);
    CHECK(check.passed);
    CHECK(r.alpha > 0);
    CHECK(r.trajectory.front().first == 0);
    // Loss only goes down under small steps.
    for (std::size_t i = 1; i < r.trajectory.size(); ++i)
        CHECK(r.trajectory[i].second <= r.trajectory[i - 1].second + 1e-12);
}

TEST_CASE("two-feature toy variants") {
    // Child inputs only: the parent may learn the concept outright, which
    // leaves k unconstrained. The exact stationary point still holds.
    ToyConfig pure;
    pure.parent_instances = false;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        pure.seed = seed;
        const auto r = two_feature_toy_run(pure);
        CHECK(r.converged);
        CHECK((std::min(r.s_p, r.s_c) > 0.7 || r.s_p > 0.95));
        CHECK(r.alpha == doctest::Approx((2 * r.s_p - r.k * r.s_c) / (2 - r.k * r.k)).epsilon(1e-4));
        CHECK(r.beta == doctest::Approx(r.s_c - r.k * r.alpha).epsilon(1e-4));
    }

    ToyConfig pinned;
    pinned.pin_parent_to_concept = true;
    const auto rq = two_feature_toy_run(pinned);
    CHECK(rq.converged);
    CHECK(rq.s_p == doctest::Approx(1.0));
    CHECK(rq.alpha == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(std::abs(rq.beta) < 1e-4);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ToyConfig c;
        c.seed = seed;
        const auto r = two_feature_toy_run(c);
        INFO("seed " << seed << ": " << two_feature_toy_check(r).diagnostic);
        CHECK(two_feature_toy_check(r).passed);
    }

    CHECK(toy_loss_landscape(1, 0, 0) == 0.0);
    CHECK(toy_loss_landscape(0.5, 0.5, 0.2) == doctest::Approx(2 - 0.5 - 0.25 + 0.1));
    ToyConfig bad;
    bad.parent_alignment = 1.0;
    CHECK_THROWS_AS(two_feature_toy_run(bad), std::invalid_argument);
}

TEST_CASE("hierarchy metric on a ground-truth dictionary") {
    GeneratorConfig gc;
    gc.d_model = 32;
    gc.top_concepts = 4;
    gc.children_per_concept = 3;
    gc.top_probability = 0.4;
    gc.child_probability = 0.3;
    gc.seed = 5;
    const auto tree = make_tree(gc);
    const auto data = generate(tree, 6000, 6);
    const auto model = oracle_model(tree);
    DenseMatrix truth(data.x.rows(), tree.concepts.size());
    for (std::size_t r = 0; r < data.labels.size(); ++r)
        for (auto c : data.labels[r]) truth(r, c) = 1.0;
    const auto rec = ActivationRecord::from_dense(truth);

    HierarchyConfig hc;
    hc.density_quantile = 0.0;
    const auto tree_res = hierarchy_metric(model, data.x, rec, hc);
    CHECK(tree_res.sampled_parents == tree.concepts.size());
    // Only the four top concepts have children.
    CHECK(tree_res.pairs == 12);
    REQUIRE(tree_res.pass_rate);
    CHECK(*tree_res.pass_rate >= 0.9);
    for (const auto& p : tree_res.reports) {
        CHECK(p.s_cov == 1.0);
        CHECK(p.mcs[0] == doctest::Approx(1.0));
        CHECK(p.child_rank == 0);
    }

    hc.procedure = HierarchyProcedure::mcs;
    const auto mcs_res = hierarchy_metric(model, data.x, rec, hc);
    CHECK(mcs_res.pairs == 12);
    std::set<std::pair<std::uint32_t, std::uint32_t>> a, b;
    for (const auto& p : tree_res.reports) a.insert({p.parent, p.child});
    for (const auto& p : mcs_res.reports) b.insert({p.parent, p.child});
    CHECK(a == b);

    const auto csv = hierarchy_report_csv(tree_res);
    CHECK(csv.rfind("procedure,parent,child,s_cov,s_res,mcs_non-scaling-binary,mcs_scaling-binary,"
                    "mcs_non-scaling-value,mcs_scaling-value,parent_rank,child_rank,probe_accuracy,pass\n",
                    0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
    CHECK_THROWS_AS(hierarchy_metric(model, data.x, ActivationRecord(3), hc), DimensionError);
    CHECK(parse_procedure("mcs") == HierarchyProcedure::mcs);
    CHECK_THROWS_AS(parse_procedure("flat"), std::invalid_argument);
}
