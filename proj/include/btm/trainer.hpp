#pragma once

// Adam training of a single model under a linear warmup/decay schedule, and
// a data-parallel harness that runs n workers either synchronized through a
// gradient all-reduce or fully independently.

#include "btm/corpus.hpp"
#include "btm/model.hpp"

#include <atomic>
#include <cstddef>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

namespace btm {

struct TrainConfig {
    // Length of the learning-rate schedule in updates.
    std::size_t total_updates = 2000;
    double warmup_fraction = 0.08;
    double peak_lr = 0.0005;
    std::size_t batch_blocks = 16;
    std::size_t grad_accum_steps = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::optional<double> clip_norm;
    // Loss samples recorded every this many updates (the last update is always recorded).
    std::size_t log_every = 10;

    void validate() const;
};

struct OptimizerState {
    std::size_t step = 0;
    std::vector<float> first_moment;
    std::vector<float> second_moment;
    // Completed updates within TrainConfig::total_updates.
    std::size_t schedule_position = 0;

    static OptimizerState fresh(std::size_t parameter_count);
    bool operator==(const OptimizerState&) const = default;
};

struct LossSample {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct TrainReport {
    double final_loss = 0.0;
    std::vector<LossSample> loss_curve;
    std::size_t updates = 0;
    double wall_seconds = 0.0;
    double updates_per_second = 0.0;
};

// step -> learning rate: linear ramp to peak over warmup_fraction * total,
// then linear decay to zero at total.
double lr_at(std::size_t step, const TrainConfig& config);

struct TrainResult {
    ParameterVector params;
    OptimizerState state;
    TrainReport report;
};

// Runs `updates` Adam steps (default: until the schedule is exhausted),
// continuing the schedule from `state` when one is supplied. Step k (1-based
// schedule position) uses lr_at(k).
TrainResult train(const ModelConfig& model, ParameterVector params,
                  std::optional<OptimizerState> state, BlockSource& stream,
                  const TrainConfig& config, std::optional<std::size_t> updates = std::nullopt);

// Applies one Adam update in place. Exposed for the data-parallel path and tests.
void adam_update(std::span<float> params, std::span<const float> grad, OptimizerState& state,
                 double lr, const TrainConfig& config);

// Writes `step,loss,lr,wall_ms` rows.
void write_loss_csv(std::ostream& out, const TrainReport& report);

enum class SyncMode { all_reduce, none };

struct DataParallelResult {
    // One parameter vector per worker; identical across workers under all_reduce.
    std::vector<ParameterVector> params;
    std::vector<TrainReport> reports;
    // Gradient reduction events; stays 0 when workers never communicate.
    std::size_t communication_events = 0;

    double mean_updates_per_second() const;
};

DataParallelResult train_data_parallel(const ModelConfig& model, const ParameterVector& params,
                                       std::vector<std::unique_ptr<BlockSource>>& streams,
                                       const TrainConfig& config, std::size_t n_workers,
                                       SyncMode sync);

} // namespace btm
