#pragma once

// Tree sparse autoencoder: encoder, per-layer top-k with coverage masking,
// layered decoding, the multi-level reconstruction loss with per-layer
// auxiliary terms, and the matching closed-form backward pass.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "treesae/numkernel.hpp"
#include "treesae/topology.hpp"

namespace treesae {

struct AuxConfig {
    // Dead candidates per layer used to model that layer's residual.
    std::uint32_t k_aux = 32;
    // One coefficient per privilege layer; 0 disables the layer's term.
    std::vector<double> alpha;
    // When a layer has no dead features: false skips the term, true keeps
    // it with a zero auxiliary reconstruction.
    bool keep_empty_term = false;

    // alpha_1 = 1/32, deeper layers 0.
    static AuxConfig first_layer_profile(std::size_t layers, std::uint32_t k_aux);
    // alpha_l = 1/128 for every layer.
    static AuxConfig all_layers_profile(std::size_t layers, std::uint32_t k_aux);
};

struct TreeSaeModel {
    TreeTopology topology;
    DenseMatrix encoder; // d_f × d_m
    DenseMatrix decoder; // d_m × d_f
    DenseMatrix bias;    // 1 × d_m
    std::vector<std::uint32_t> layer_k;
    AuxConfig aux;

    std::size_t d_model() const noexcept { return encoder.cols(); }
    std::size_t d_features() const noexcept { return encoder.rows(); }
    std::size_t num_layers() const noexcept { return topology.num_layers(); }
    std::uint32_t total_k() const noexcept;

    // Checks shapes and budgets against the topology; throws DimensionError.
    void check() const;

    // Random unit decoder columns, encoder = decoder^T, zero bias.
    static TreeSaeModel initialize(TreeTopology topology, std::size_t d_model,
                                   std::vector<std::uint32_t> layer_k, AuxConfig aux, Rng& rng);

    bool operator==(const TreeSaeModel& other) const;
};

// Linear pre-activations W^e (x - b), batch × d_f.
DenseMatrix pre_activations(const TreeSaeModel& model, const DenseMatrix& x);

// ReLU, then layer by layer: a feature is a candidate only if its parent is
// ROOT or was selected in its own layer; the k_l largest candidates are kept
// (ties to the lower index). Returned activations are the masked f*.
SparseActivation encode(const TreeSaeModel& model, const DenseMatrix& x);
SparseActivation select_activations(const TreeSaeModel& model, const DenseMatrix& pre);

struct AuxTerm {
    bool active = false;
    // Per row, dead features chosen for the auxiliary reconstruction
    // (value = ReLU of the pre-activation; zeros are kept out).
    std::vector<std::vector<SparseEntry>> entries;
    DenseMatrix reconstruction; // batch × d_m, ê_l
    double loss = 0.0;          // mean over rows of ||ê_l + cumulative_l - x||²
};

struct ForwardTrace {
    DenseMatrix input;
    DenseMatrix centered; // x - b
    DenseMatrix pre;      // batch × d_f
    SparseActivation activations;
    std::vector<DenseMatrix> layer_partials; // x̂_l, pure decoder output
    std::vector<DenseMatrix> cumulative;     // b + Σ_{t<=l} x̂_t
    std::vector<AuxTerm> aux;
    std::vector<std::uint8_t> dead;

    double recons_loss = 0.0;
    std::vector<double> layer_losses; // mean ||cumulative_l - x||² per layer
    double aux_loss = 0.0;            // Σ_l α_l L^l_aux
    double total_loss = 0.0;

    std::size_t batch_size() const noexcept { return input.rows(); }
};

// `dead` is empty or has one flag per feature; flagged features are the
// auxiliary candidates. Throws NumericError naming the row on a non-finite loss.
ForwardTrace forward(const TreeSaeModel& model, const DenseMatrix& x,
                     std::span<const std::uint8_t> dead = {});

struct Gradients {
    DenseMatrix encoder;
    DenseMatrix decoder;
    DenseMatrix bias;

    double squared_norm() const;
    void scale(double factor);
};

// Exact gradient of the mean total loss with selection and coverage
// indicators held fixed.
Gradients backward(const TreeSaeModel& model, const ForwardTrace& trace);

struct Reconstruction {
    DenseMatrix x_hat;
    // nullopt when all rows are identical (zero centered energy).
    std::optional<double> variance_explained;
    double mean_l0 = 0.0;
};

Reconstruction reconstruct(const TreeSaeModel& model, const DenseMatrix& x);

// 1 - ||x - x_hat||² / ||x - mean(x)||² over the batch.
std::optional<double> variance_explained(const DenseMatrix& x, const DenseMatrix& x_hat);

} // namespace treesae
