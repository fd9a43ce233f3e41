#pragma once

// Training loop: deterministic batching, optimization, decoder
// renormalization, reallocation scheduling and telemetry.

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "treesae/allocator.hpp"
#include "treesae/config.hpp"
#include "treesae/data.hpp"
#include "treesae/errors.hpp"
#include "treesae/model.hpp"

namespace treesae {

struct TrainConfig {
    std::uint64_t steps = 3000;
    std::uint32_t batch_size = 256;
    double learning_rate = 1e-4;
    std::vector<std::uint32_t> layer_sizes{16, 48};
    std::vector<std::uint32_t> layer_k{4, 2};
    std::uint32_t k_aux = 32;
    // "first" (1/32 on layer 0), "all" (1/128 everywhere), "none", or
    // "custom" with aux_alpha.
    std::string aux_profile = "first";
    std::vector<double> aux_alpha;
    bool keep_empty_aux = false;
    std::uint64_t dead_window = 50000; // tokens
    bool dynamic_allocation = true;
    bool flush_at_half = true;
    ScheduleConfig schedule{};
    ReallocationConfig reallocation{};
    CapacityMode capacity_mode = CapacityMode::per_instance;
    bool project_decoder_grad = true;
    double grad_clip = 1.0; // global norm; 0 disables
    bool init_bias_to_mean = true;
    std::uint64_t seed = 0;
    std::string dataset_path;
    std::uint64_t checkpoint_every = 0; // steps; 0 = only at the end
    // Filled in by the trainer: shape of the dataset the run was started on.
    std::uint64_t data_rows = 0;
    std::uint64_t data_d_model = 0;

    // Throws ConfigError on the first bad key.
    static TrainConfig from_config(const Config& cfg);
    Config to_config() const;
    void validate() const;
    AuxConfig aux() const;
};

struct StepRecord {
    std::uint64_t step = 0; // 1-based index of the completed step
    double recons = 0.0;
    double aux = 0.0;
    double total = 0.0;
    std::vector<double> l0;          // per layer, mean active features per row
    std::vector<std::uint32_t> dead; // per layer, after the step's events

    bool operator==(const StepRecord&) const = default;
};

struct EventRecord {
    std::uint64_t step = 0;
    std::string kind; // "reallocate" or "flush"
    std::size_t moves = 0;
    std::vector<std::uint32_t> dead_before; // per layer
    std::string audit; // format_audit lines

    bool operator==(const EventRecord&) const = default;
};

struct RunTelemetry {
    std::vector<StepRecord> steps;
    std::vector<EventRecord> events;
    double wall_seconds = 0.0; // not part of any file output

    // step,recons,aux,total,l0_<l>...,dead_<l>...
    std::string steps_csv(std::size_t layers) const;
    std::string events_text() const;
    void append(const RunTelemetry& other);
};

// Thrown when a step produces a non-finite loss or gradient. Carries the
// state before that step.
class TrainingAborted : public NumericError {
  public:
    TrainingAborted(const std::string& what, Checkpoint last_good)
        : NumericError(what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const noexcept { return last_good_; }

  private:
    Checkpoint last_good_;
};

// Number of (row, feature) pairs active while their parent is not.
std::size_t coverage_violations(const SparseActivation& acts, const TreeTopology& topology);

class Trainer {
  public:
    // Fresh run. Without `topology` a single layer is flat and deeper
    // configurations start from a seeded random tree.
    Trainer(TrainConfig config, const DenseMatrix& data,
            std::optional<TreeTopology> topology = std::nullopt);
    // Continue from a checkpoint; `config` must describe the same run
    // (total steps may differ).
    Trainer(const Checkpoint& checkpoint, TrainConfig config, const DenseMatrix& data);

    const TrainConfig& config() const noexcept { return config_; }
    const TreeSaeModel& model() const noexcept { return model_; }
    const CapacityLedger& ledger() const noexcept { return ledger_; }
    const RunState& state() const noexcept { return state_; }
    bool done() const noexcept { return state_.step >= config_.steps; }

    // Batch used by the optimizer step with 0-based index `step`.
    DenseMatrix batch(std::uint64_t step);

    // One optimizer step followed by any scheduled events.
    StepRecord step(RunTelemetry* telemetry = nullptr);
    // Runs until config.steps. on_checkpoint fires every checkpoint_every
    // steps and once at the end.
    RunTelemetry run(const std::function<void(const Checkpoint&)>& on_checkpoint = {});

    Checkpoint checkpoint() const;

  private:
    void run_events(RunTelemetry* telemetry);
    std::vector<std::uint32_t> dead_counts() const;

    TrainConfig config_;
    const DenseMatrix& data_;
    TreeSaeModel model_;
    AdamState enc_opt_, dec_opt_, bias_opt_;
    CapacityLedger ledger_;
    RunState state_;
    std::set<std::uint64_t> event_steps_;
    std::uint64_t cached_epoch_ = ~0ull;
    std::vector<std::uint32_t> perm_;
};

struct TrainResult {
    Checkpoint checkpoint;
    RunTelemetry telemetry;
};

TrainResult train(const TrainConfig& config, const DenseMatrix& data,
                  std::optional<TreeTopology> topology = std::nullopt,
                  const std::function<void(const Checkpoint&)>& on_checkpoint = {});

// `total_steps` overrides the configured length. Resuming at or past the
// end returns immediately with empty telemetry.
TrainResult resume(const Checkpoint& checkpoint, const DenseMatrix& data,
                   std::optional<std::uint64_t> total_steps = std::nullopt,
                   const std::function<void(const Checkpoint&)>& on_checkpoint = {});

} // namespace treesae
