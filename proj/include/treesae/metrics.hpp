#pragma once

// Hierarchy-detection and feature-quality metrics.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "treesae/allocator.hpp"
#include "treesae/model.hpp"
#include "treesae/numkernel.hpp"
#include "treesae/topology.hpp"

namespace treesae {

// Column-oriented activation table over an evaluation corpus.
class ActivationRecord {
  public:
    struct Entry {
        std::uint32_t row;
        double value;
    };

    ActivationRecord() = default;
    explicit ActivationRecord(std::size_t num_features) : columns_(num_features) {}

    static ActivationRecord from_sparse(const SparseActivation& acts);
    // rows × features; entries <= 0 are inactive.
    static ActivationRecord from_dense(const DenseMatrix& acts);
    // Runs the model over `x` in chunks of `batch` rows.
    static ActivationRecord from_model(const TreeSaeModel& model, const DenseMatrix& x,
                                       std::size_t batch = 1024);

    // Appends a batch; its rows follow the rows already stored.
    void append(const SparseActivation& acts);

    std::size_t num_rows() const noexcept { return num_rows_; }
    std::size_t num_features() const noexcept { return columns_.size(); }
    const std::vector<Entry>& column(std::uint32_t feature) const { return columns_.at(feature); }
    std::size_t active_count(std::uint32_t feature) const { return columns_.at(feature).size(); }
    // Fraction of rows on which the feature is active, in [0, 1].
    double density(std::uint32_t feature) const;
    bool is_dead(std::uint32_t feature) const { return active_count(feature) == 0; }
    double max_activation(std::uint32_t feature) const;
    // Per-row indicator of the feature.
    std::vector<std::uint8_t> indicator(std::uint32_t feature) const;

  private:
    std::size_t num_rows_ = 0;
    std::vector<std::vector<Entry>> columns_;
};

// Fraction of child-active rows on which the parent is also active;
// nullopt when the child never fires.
std::optional<double> activation_coverage(const ActivationRecord& records, std::uint32_t parent,
                                          std::uint32_t child);

// min(d*·d_child, d*·d_parent). Non-unit inputs are normalized (with a warning).
double reconstruction_score(std::span<const double> d_parent, std::span<const double> d_child,
                            std::span<const double> d_star);

struct McsVariant {
    bool scaling = false;
    bool binary = true;

    // "non-scaling-binary", "scaling-binary", "non-scaling-value", "scaling-value".
    std::string name() const;
    static McsVariant parse(std::string_view name);
    static std::array<McsVariant, 4> all();
    bool operator==(const McsVariant&) const = default;
};

// Masked cosine similarity: cosine between the parent's and the child's
// activation vectors restricted to child-active rows. `binary` replaces
// values by indicators; `scaling` divides each feature by its maximum
// activation over the corpus first. nullopt if the child never fires; a
// parent that is silent on every child-active row scores 0.
std::optional<double> mcs(const ActivationRecord& records, std::uint32_t parent,
                          std::uint32_t child, McsVariant variant = {});

struct ProbeConfig {
    double l2 = 1e-3;
    std::size_t steps = 500;
    double negatives_per_positive = 5.0;
    std::size_t max_positives = 512;
    std::size_t min_positives = 20;
    std::uint64_t seed = 0x5eed;
};

struct ProbeResult {
    std::uint32_t target = kRoot;
    std::vector<double> direction; // unit-norm estimate of the concept direction
    double intercept = 0.0;        // in the units of the unnormalized weights
    double train_accuracy = 0.0;   // class-balanced accuracy on the training sample
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::vector<std::uint32_t> ranks; // ranks[f]: 0 = best correlated decoder column
};

// Logistic regression separating rows with labels[r] != 0 from the rest.
// Positives (capped) and up to negatives_per_positive × as many negatives
// are sampled; the loss weighs both classes equally. Full-batch gradient
// descent with a step size from a curvature bound. Throws
// std::invalid_argument for degenerate labels or too few positives.
ProbeResult train_probe(const DenseMatrix& x, std::span<const std::uint8_t> labels,
                        const ProbeConfig& config = {});

// Rank of every decoder column by cosine with `direction` (descending,
// ties to the lower index). Result is a permutation: ranks[f] in [0, d_f).
std::vector<std::uint32_t> correlation_ranks(const DenseMatrix& decoder,
                                             std::span<const double> direction);

enum class HierarchyProcedure { tree, mcs };
std::string to_string(HierarchyProcedure p);
HierarchyProcedure parse_procedure(std::string_view s);

struct HierarchyConfig {
    HierarchyProcedure procedure = HierarchyProcedure::tree;
    std::size_t sample_parents = 100;
    double density_quantile = 0.5; // parents must be at least this dense (quantile)
    std::size_t top_rank = 5;      // pass if both decoders rank below this
    std::size_t mcs_children = 5;
    // With a multi-layer topology, the MCS procedure takes as many children
    // as the parent has in the tree.
    bool match_tree_counts = true;
    McsVariant mcs_variant{};
    double coverage_threshold = 0.9; // reported only
    ProbeConfig probe{};
    std::uint64_t seed = 0x41d17;
};

struct PairReport {
    std::uint32_t parent = kRoot;
    std::uint32_t child = kRoot;
    double s_cov = 0.0;
    double s_res = 0.0;
    std::array<double, 4> mcs{}; // McsVariant::all() order; NaN when undefined
    std::uint32_t parent_rank = 0;
    std::uint32_t child_rank = 0;
    double probe_accuracy = 0.0;
    bool pass = false;
};

struct HierarchyResult {
    HierarchyProcedure procedure = HierarchyProcedure::tree;
    std::size_t eligible_parents = 0;
    std::size_t sampled_parents = 0;
    std::size_t pairs = 0;
    std::size_t passed = 0;
    std::optional<double> pass_rate; // nullopt without any pair
    std::vector<PairReport> reports;
};

HierarchyResult hierarchy_metric(const TreeSaeModel& model, const DenseMatrix& x,
                                 const ActivationRecord& records,
                                 const HierarchyConfig& config = {});

// CSV with header; column order documented in docs/formats.md.
std::string hierarchy_report_csv(const HierarchyResult& result);

// Mean over features of the largest cosine to any other decoder column.
double composition(const DenseMatrix& decoder);

enum class CoOccurrenceNorm { pair_union, rows };

// Mean over parents with >= 2 children of the mean pairwise sibling
// co-activation rate. nullopt when no parent has two children that fire.
std::optional<double> co_occurrence(const ActivationRecord& records, const TreeTopology& topology,
                                    CoOccurrenceNorm norm = CoOccurrenceNorm::pair_union);

// Fraction of features per layer with no activation in the last `window` tokens.
std::vector<double> dead_feature_rate(const CapacityLedger& ledger, const TreeTopology& topology,
                                      std::uint64_t window);

// Two-feature toy system: a parent/child pair learns a child concept
// d*_c = a·g + sqrt(1-a²)·u under the two-level reconstruction loss.
// With parent instances enabled the corpus also holds parent-only inputs g.
struct ToyConfig {
    std::size_t dim = 16;
    double parent_alignment = 0.6; // a = g·d*_c
    bool parent_instances = true;
    double child_fraction = 0.3;   // weight of child inputs when parent instances are on
    bool pin_parent_to_concept = false; // fix d_p = d*_c and train the rest
    std::size_t max_steps = 40000;
    double learning_rate = 0.05;
    double tolerance = 1e-7; // gradient-norm convergence threshold
    std::uint64_t seed = 7;
};

struct ToyResult {
    double alpha = 0.0;
    double beta = 0.0;
    double s_p = 0.0;
    double s_c = 0.0;
    double k = 0.0;
    double ec_dot_dp = 0.0;
    double alpha_closed_form = 0.0; // S_p - k·S_c/2
    double beta_closed_form = 0.0;  // S_c - k·S_p
    double loss = 0.0;
    double grad_norm = 0.0;
    std::size_t steps = 0;
    bool converged = false;
    std::vector<std::pair<std::size_t, double>> trajectory; // (step, loss)
};

ToyResult two_feature_toy_run(const ToyConfig& config = {});

struct ToyCheck {
    bool passed = false;
    std::string diagnostic;
};

// Closed forms within `closed_form_tol`, |k| and |e_c·d_p| below `small_tol`.
ToyCheck two_feature_toy_check(const ToyResult& r, double closed_form_tol = 5e-2,
                               double small_tol = 0.15);

// Two-feature loss in closed form at the stationary α, β (k² dropped):
// 2 - 2S_p² - S_c² + 2 S_p S_c k.
double toy_loss_landscape(double s_p, double s_c, double k);

} // namespace treesae
