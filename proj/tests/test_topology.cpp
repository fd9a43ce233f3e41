#include <doctest.h>

#include <algorithm>

#include "treesae/errors.hpp"
#include "treesae/topology.hpp"

using namespace treesae;

namespace {

// 7 features over three layers:
//   layer 0: 0, 1        (ROOT)
//   layer 1: 2, 3, 4     (2->0, 3->0, 4->1)
//   layer 2: 5, 6        (5->2, 6->4)
TreeTopology seven() { return TreeTopology({2, 3, 2}, {kRoot, kRoot, 0, 0, 1, 2, 4}); }

bool has_kind(const std::vector<TopologyViolation>& v, TopologyViolation::Kind k) {
    return std::any_of(v.begin(), v.end(), [&](const auto& x) { return x.kind == k; });
}

} // namespace

TEST_CASE("layer bookkeeping") {
    const auto t = seven();
    CHECK(t.num_layers() == 3);
    CHECK(t.num_features() == 7);
    CHECK(t.layer_begin(1) == 2);
    CHECK(t.layer_end(1) == 5);
    CHECK(t.global_index(2, 1) == 6);
    CHECK(t.layer_of(0) == 0);
    CHECK(t.layer_of(4) == 1);
    CHECK(t.layer_of(6) == 2);
    CHECK(t.allocation(2) == std::vector<std::uint32_t>{2, 4});
    CHECK(t.children(0) == std::vector<std::uint32_t>{2, 3});
    CHECK(t.children(kRoot) == std::vector<std::uint32_t>{0, 1});
    CHECK(t.children(3).empty());
    CHECK(is_valid(t));
}

TEST_CASE("descendants of the seven-node tree") {
    const auto t = seven();
    CHECK(descendants(t, 0) == std::vector<std::uint32_t>{2, 3, 5});
    CHECK(descendants(t, 1) == std::vector<std::uint32_t>{4, 6});
    CHECK(descendants(t, 2) == std::vector<std::uint32_t>{5});
    CHECK(descendants(t, 6).empty());
    CHECK(descendants(t, kRoot) == std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(descendants(t, 7), IndexError);
}

TEST_CASE("flat and random constructors are valid") {
    const auto f = TreeTopology::flat(5);
    CHECK(f.num_layers() == 1);
    CHECK(std::all_of(f.parents().begin(), f.parents().end(), [](auto p) { return p == kRoot; }));
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const auto t = TreeTopology::random({3, 5, 7}, rng);
        CHECK(is_valid(t));
        for (std::uint32_t c = t.layer_begin(1); c < t.num_features(); ++c)
            CHECK(t.layer_of(t.parent(c)) < t.layer_of(c));
    }
}

TEST_CASE("validate reports every violation kind") {
    CHECK(has_kind(validate(TreeTopology({2, 2}, {kRoot, kRoot, 0})), TopologyViolation::Kind::size_mismatch));
    CHECK(has_kind(validate(TreeTopology({2, 0}, {kRoot, kRoot})), TopologyViolation::Kind::empty_layer));
    CHECK(has_kind(validate(TreeTopology({1, 1}, {kRoot, 9})), TopologyViolation::Kind::parent_out_of_range));
    const auto same_layer = validate(TreeTopology({2, 1}, {kRoot, 0, 0}));
    REQUIRE(has_kind(same_layer, TopologyViolation::Kind::parent_not_lower_layer));
    CHECK(same_layer.front().message.find("non-lower layer") != std::string::npos);
    // A self-loop in a deeper layer is caught as a non-lower parent.
    CHECK(has_kind(validate(TreeTopology({1, 1}, {kRoot, 1})), TopologyViolation::Kind::parent_not_lower_layer));
}

TEST_CASE("from_allocation builds the flat index table") {
    const auto t = TreeTopology::from_allocation({2, 3, 2}, {{kRoot, kRoot}, {0, 0, 1}, {2, 4}});
    CHECK(t == seven());
}

TEST_CASE("coverage mask on the seven-node tree") {
    const auto t = seven();
    // Row 0: feature 0 off, so 2, 3 and the grandchild 5 are masked.
    // Row 1: everything positive passes.
    // Row 2: 4 negative, so 6 is masked even though positive.
    const auto raw = DenseMatrix::from_rows({{-1, 2, 3, 4, 5, 6, 7},
                                             {1, 1, 1, 1, 1, 1, 1},
                                             {1, 1, 1, 1, -2, 1, 3}});
    const auto m = apply_coverage_mask(raw, t);
    const auto dense = m.to_dense();
    CHECK(dense.row(0)[0] == 0);
    CHECK(dense.row(0)[1] == 2);
    CHECK(dense.row(0)[2] == 0);
    CHECK(dense.row(0)[3] == 0);
    CHECK(dense.row(0)[4] == 5);
    CHECK(dense.row(0)[5] == 0);
    CHECK(dense.row(0)[6] == 7);
    for (std::size_t c = 0; c < 7; ++c) CHECK(dense.row(1)[c] == 1);
    CHECK(dense.row(2)[4] == 0);
    CHECK(dense.row(2)[6] == 0);
    CHECK(dense.row(2)[5] == 1);
    CHECK(m.nnz() == 3 + 7 + 5);
    CHECK(m.active_in_range(0, 2, 5) == 1);
    CHECK(m.pre_activations == raw);
}

TEST_CASE("coverage mask invariant on random trees") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const auto t = TreeTopology::random({4, 6, 8}, rng);
        DenseMatrix raw(20, t.num_features());
        for (auto& v : raw.values()) v = rng.normal();
        const auto m = apply_coverage_mask(raw, t);
        const auto d = m.to_dense();
        for (std::size_t r = 0; r < 20; ++r) {
            for (std::uint32_t f = 0; f < t.num_features(); ++f) {
                if (d(r, f) > 0 && t.parent(f) != kRoot) CHECK(d(r, t.parent(f)) > 0);
                // Nothing passes that was not positive to begin with.
                if (d(r, f) > 0) CHECK(d(r, f) == raw(r, f));
            }
        }
    }
}
