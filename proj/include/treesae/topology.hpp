#pragma once

// Privilege-layer tree over the feature dictionary.
//
// Features are numbered 0..d_f-1, layer by layer. Every feature stores the
// flat index of its parent, or kRoot for the imaginary layer-0 node. A
// parent must live in a strictly lower layer, which makes the parent graph
// acyclic by construction.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "treesae/numkernel.hpp"

namespace treesae {

inline constexpr std::uint32_t kRoot = 0xFFFFFFFFu;

class TreeTopology {
  public:
    TreeTopology() = default;
    // Does not validate; call validate() on untrusted input.
    TreeTopology(std::vector<std::uint32_t> layer_sizes, std::vector<std::uint32_t> parents);

    // Single privilege layer, every feature parented by ROOT.
    static TreeTopology flat(std::uint32_t d_f);
    // Layer 0 parented by ROOT; every deeper feature gets a uniformly random
    // parent among all features of lower layers.
    static TreeTopology random(std::vector<std::uint32_t> layer_sizes, Rng& rng);
    // One allocation vector per layer, entries are flat parent indices or kRoot.
    static TreeTopology from_allocation(std::vector<std::uint32_t> layer_sizes,
                                        const std::vector<std::vector<std::uint32_t>>& allocation);

    std::size_t num_layers() const noexcept { return layer_sizes_.size(); }
    std::size_t num_features() const noexcept { return parents_.size(); }
    const std::vector<std::uint32_t>& layer_sizes() const noexcept { return layer_sizes_; }
    const std::vector<std::uint32_t>& parents() const noexcept { return parents_; }

    std::uint32_t layer_begin(std::size_t layer) const { return offsets_.at(layer); }
    std::uint32_t layer_end(std::size_t layer) const { return offsets_.at(layer + 1); }
    // Flat index of (layer, local index).
    std::uint32_t global_index(std::size_t layer, std::uint32_t local) const;
    std::size_t layer_of(std::uint32_t feature) const;

    std::uint32_t parent(std::uint32_t feature) const { return parents_.at(feature); }
    void set_parent(std::uint32_t feature, std::uint32_t parent);

    // a_l: parent indices of the features of one layer.
    std::vector<std::uint32_t> allocation(std::size_t layer) const;
    // Direct children of `feature` (or of ROOT), ascending.
    std::vector<std::uint32_t> children(std::uint32_t feature) const;

    bool operator==(const TreeTopology& other) const {
        return layer_sizes_ == other.layer_sizes_ && parents_ == other.parents_;
    }

  private:
    std::vector<std::uint32_t> layer_sizes_;
    std::vector<std::uint32_t> offsets_{0};
    std::vector<std::uint32_t> parents_;
};

struct TopologyViolation {
    enum class Kind {
        size_mismatch,          // sum of layer sizes != number of parent entries
        empty_layer,
        parent_out_of_range,    // neither kRoot nor a valid feature index
        parent_not_lower_layer, // parent sits at the same or a higher layer
        root_unreachable,       // parent chain longer than the layer count
    };
    Kind kind;
    std::uint32_t feature = kRoot;
    std::uint32_t parent = kRoot;
    std::string message;
};

// Empty result means the topology is valid.
std::vector<TopologyViolation> validate(const TreeTopology& t);
inline bool is_valid(const TreeTopology& t) { return validate(t).empty(); }

// All transitive children of `feature` (kRoot allowed), ascending.
// Throws IndexError for an out-of-range feature.
std::vector<std::uint32_t> descendants(const TreeTopology& t, std::uint32_t feature);

struct SparseEntry {
    std::uint32_t feature;
    double value;
    bool operator==(const SparseEntry&) const = default;
};

// Batch of post-mask activations. Only strictly positive values are stored,
// ascending by feature within a row.
struct SparseActivation {
    std::size_t num_features = 0;
    std::vector<std::vector<SparseEntry>> rows;
    // Values the mask was applied to, kept for auxiliary candidate ranking.
    DenseMatrix pre_activations;

    std::size_t batch_size() const noexcept { return rows.size(); }
    std::size_t nnz() const noexcept;
    // Number of active features of `row` inside [begin, end).
    std::size_t active_in_range(std::size_t row, std::uint32_t begin, std::uint32_t end) const;
    DenseMatrix to_dense() const;
};

// Coverage mask: a feature keeps its value only if its parent is ROOT or the
// parent's masked value is positive. Layers are processed in increasing
// order so the recursion is well-defined. `raw` is batch × d_f.
SparseActivation apply_coverage_mask(const DenseMatrix& raw, const TreeTopology& t);

} // namespace treesae
