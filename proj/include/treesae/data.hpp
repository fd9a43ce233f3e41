#pragma once

// Synthetic hierarchical concepts with ground truth, the activation file
// format, and checkpoints. Byte layouts are documented in docs/formats.md;
// everything on disk is little-endian.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "treesae/allocator.hpp"
#include "treesae/model.hpp"
#include "treesae/numkernel.hpp"

namespace treesae {

struct Concept {
    std::uint32_t parent = kRoot; // index into GroundTruthTree::concepts, parents first
    std::vector<double> direction; // unit d*
    // Unit component orthogonal to the parent direction; equals `direction`
    // for top-level concepts.
    std::vector<double> refinement;
    double probability = 0.0; // given the parent fired (unconditional at top level)
    double log_mean = 0.0;    // magnitude ~ exp(N(log_mean, log_sd²))
    double log_sd = 0.5;
};

enum class SiblingMode {
    exclusive,   // at most one child per parent per row
    independent, // each child tossed separately
};

struct GroundTruthTree {
    std::size_t d_model = 0;
    std::vector<Concept> concepts;
    double noise = 0.0; // stddev of isotropic Gaussian noise per coordinate
    SiblingMode siblings = SiblingMode::exclusive;

    std::vector<std::uint32_t> children(std::uint32_t concept_index) const;
    // Throws std::invalid_argument naming the first broken invariant.
    void validate() const;
    std::string describe() const;
};

struct GeneratorConfig {
    std::size_t d_model = 64;
    std::size_t top_concepts = 6;
    std::size_t children_per_concept = 3;
    std::size_t depth = 2; // concept levels
    double top_probability = 0.25;
    double child_probability = 0.25;
    double parent_mix = 0.6;     // child = mix·parent + sqrt(1-mix²)·refinement
    double log_mean = 0.0;
    double log_sd = 0.5;
    double noise = 0.01;
    SiblingMode siblings = SiblingMode::exclusive;
    std::uint64_t seed = 1234;
};

// Random orthonormal refinements, so sibling and cross-branch directions
// stay well separated as long as the total concept count is <= d_model.
GroundTruthTree make_tree(const GeneratorConfig& config);

struct GeneratedData {
    DenseMatrix x; // rows × d_model, values representable as f32
    // For every row, ascending indices of the concepts that fired.
    std::vector<std::vector<std::uint32_t>> labels;
};

// Row r draws from Rng(seed).fork(r), so any row range can be generated
// independently and the output does not depend on how rows are split.
GeneratedData generate(const GroundTruthTree& tree, std::size_t rows, std::uint64_t seed);

// Indicator of one concept over the rows.
std::vector<std::uint8_t> concept_indicator(const GeneratedData& data, std::uint32_t concept_index);

// "row,concept" CSV.
std::string labels_csv(const std::vector<std::vector<std::uint32_t>>& labels);
std::vector<std::vector<std::uint32_t>> parse_labels_csv(const std::string& text, std::size_t rows);

inline constexpr std::uint32_t kActivationVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ActivationDataset {
    DenseMatrix x;
    std::string metadata; // optional trailer text (config hash, seed, ...)
};

// The payload is written as f32; values are rounded on save.
void save_dataset(const std::string& path, const ActivationDataset& ds);
// expected_d_model == 0 accepts any width. Throws FormatError.
ActivationDataset load_dataset(const std::string& path, std::size_t expected_d_model = 0);

std::vector<std::uint8_t> encode_dataset(const ActivationDataset& ds);
ActivationDataset decode_dataset(const std::vector<std::uint8_t>& bytes,
                                 std::size_t expected_d_model = 0);

// Scheduling state of a run, enough to continue it exactly.
struct RunState {
    std::uint64_t step = 0;           // completed optimizer steps
    std::uint64_t events = 0;         // reallocation events so far
    bool flushed = false;             // dead-to-root flush done
    std::uint64_t config_hash = 0;

    bool operator==(const RunState&) const = default;
};

struct Checkpoint {
    std::string config_text;
    TreeSaeModel model;
    AdamState encoder_opt;
    AdamState decoder_opt;
    AdamState bias_opt;
    CapacityLedger ledger;
    RunState state;

    bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
// Errors name the offending section.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Whole-file helpers. write_file_atomic writes to a sibling temp file and
// renames it into place.
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::string& path, const std::string& text);

} // namespace treesae
