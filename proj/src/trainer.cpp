#include "btm/trainer.hpp"

#include "btm/error.hpp"

#include <barrier>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

namespace btm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<SequenceBlock> draw_batch(BlockSource& stream, const TrainConfig& config) {
    std::vector<SequenceBlock> batch;
    const std::size_t n = config.batch_blocks * config.grad_accum_steps;
    batch.reserve(n);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(stream.next());
    return batch;
}

void clip_gradient(std::span<float> grad, double max_norm) {
    double sq = 0;
    for (float g : grad) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const float scale = static_cast<float>(max_norm / norm);
        for (auto& g : grad) g *= scale;
    }
}

void check_finite(double loss, std::size_t step) {
    if (!std::isfinite(loss)) {
        fail(ErrorKind::numeric, "non-finite loss " + std::to_string(loss) + " at update " +
                                     std::to_string(step));
    }
}

void finish_report(TrainReport& report, Clock::time_point start) {
    report.wall_seconds = seconds_since(start);
    report.updates_per_second =
        report.wall_seconds > 0 ? static_cast<double>(report.updates) / report.wall_seconds : 0.0;
}

} // namespace

void TrainConfig::validate() const {
    require(total_updates >= 1, ErrorKind::config, "train.total_updates must be at least 1");
    require(warmup_fraction > 0.0 && warmup_fraction < 1.0, ErrorKind::config,
            "train.warmup_fraction must lie in (0, 1)");
    require(peak_lr > 0.0, ErrorKind::config, "train.peak_lr must be positive");
    require(batch_blocks >= 1 && grad_accum_steps >= 1, ErrorKind::config,
            "train.batch_blocks and train.grad_accum_steps must be at least 1");
    require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0,
            ErrorKind::config, "invalid Adam hyperparameters");
    require(!clip_norm || *clip_norm > 0, ErrorKind::config, "train.clip_norm must be positive");
    require(log_every >= 1, ErrorKind::config, "train.log_every must be at least 1");
}

OptimizerState OptimizerState::fresh(std::size_t parameter_count) {
    OptimizerState s;
    s.first_moment.assign(parameter_count, 0.0f);
    s.second_moment.assign(parameter_count, 0.0f);
    return s;
}

double lr_at(std::size_t step, const TrainConfig& config) {
    require(step <= config.total_updates, ErrorKind::invalid_argument,
            "lr_at: step " + std::to_string(step) + " outside schedule of " +
                std::to_string(config.total_updates) + " updates");
    const double total = static_cast<double>(config.total_updates);
    const double warmup = config.warmup_fraction * total;
    const double s = static_cast<double>(step);
    if (s <= warmup) {
        return warmup > 0 ? config.peak_lr * s / warmup : config.peak_lr;
    }
    return config.peak_lr * (total - s) / (total - warmup);
}

void adam_update(std::span<float> params, std::span<const float> grad, OptimizerState& state,
                 double lr, const TrainConfig& config) {
    require(params.size() == grad.size() && state.first_moment.size() == params.size() &&
                state.second_moment.size() == params.size(),
            ErrorKind::invalid_argument, "optimizer state does not match parameter layout");
    ++state.step;
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        const double m = b1 * state.first_moment[i] + (1.0 - b1) * g;
        const double v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        state.first_moment[i] = static_cast<float>(m);
        state.second_moment[i] = static_cast<float>(v);
        const double update = lr * (m / c1) / (std::sqrt(v / c2) + config.adam_eps);
        params[i] = static_cast<float>(params[i] - update);
    }
}

TrainResult train(const ModelConfig& model, ParameterVector params,
                  std::optional<OptimizerState> state, BlockSource& stream,
                  const TrainConfig& config, std::optional<std::size_t> updates) {
    config.validate();
    TrainResult out;
    out.state = state ? std::move(*state) : OptimizerState::fresh(params.size());
    require(out.state.first_moment.size() == params.size(), ErrorKind::invalid_argument,
            "optimizer state does not match parameter layout");
    require(out.state.schedule_position <= config.total_updates, ErrorKind::invalid_argument,
            "optimizer schedule position is past the end of the schedule");
    const std::size_t remaining = config.total_updates - out.state.schedule_position;
    const std::size_t n = updates.value_or(remaining);
    require(n <= remaining, ErrorKind::invalid_argument,
            "requested " + std::to_string(n) + " updates but only " + std::to_string(remaining) +
                " remain in the schedule");

    const auto start = Clock::now();
    for (std::size_t k = 0; k < n; ++k) {
        const auto batch = draw_batch(stream, config);
        auto lg = loss_and_grad(model, params, std::span<const SequenceBlock>(batch));
        const std::size_t position = out.state.schedule_position + 1;
        check_finite(lg.loss, position);
        if (config.clip_norm) clip_gradient(lg.grad.values, *config.clip_norm);
        const double lr = lr_at(position, config);
        adam_update(params.values, lg.grad.values, out.state, lr, config);
        out.state.schedule_position = position;
        ++out.report.updates;
        out.report.final_loss = lg.loss;
        if ((k + 1) % config.log_every == 0 || k + 1 == n || k == 0) {
            out.report.loss_curve.push_back(
                LossSample{position, lg.loss, lr, seconds_since(start) * 1000.0});
        }
    }
    finish_report(out.report, start);
    out.params = std::move(params);
    return out;
}

void write_loss_csv(std::ostream& out, const TrainReport& report) {
    out << "step,loss,lr,wall_ms\n";
    out.precision(9);
    for (const auto& s : report.loss_curve) {
        out << s.step << ',' << s.loss << ',' << s.lr << ',' << s.wall_ms << '\n';
    }
}

double DataParallelResult::mean_updates_per_second() const {
    if (reports.empty()) return 0.0;
    double sum = 0;
    for (const auto& r : reports) sum += r.updates_per_second;
    return sum / static_cast<double>(reports.size());
}

namespace {

DataParallelResult run_independent(const ModelConfig& model, const ParameterVector& params,
                                   std::vector<std::unique_ptr<BlockSource>>& streams,
                                   const TrainConfig& config, std::size_t n_workers) {
    DataParallelResult out;
    out.params.resize(n_workers);
    out.reports.resize(n_workers);
    std::vector<std::exception_ptr> errors(n_workers);
    {
        std::vector<std::jthread> workers;
        workers.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&, w] {
                try {
                    auto r = train(model, params, std::nullopt, *streams[w], config);
                    out.params[w] = std::move(r.params);
                    out.reports[w] = std::move(r.report);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (std::size_t w = 0; w < n_workers; ++w) {
        if (!errors[w]) continue;
        try {
            std::rethrow_exception(errors[w]);
        } catch (const std::exception& e) {
            fail(ErrorKind::worker, "worker " + std::to_string(w) + " failed: " + e.what());
        }
    }
    return out;
}

DataParallelResult run_all_reduce(const ModelConfig& model, const ParameterVector& params,
                                  std::vector<std::unique_ptr<BlockSource>>& streams,
                                  const TrainConfig& config, std::size_t n_workers) {
    DataParallelResult out;
    out.params.assign(n_workers, params);
    out.reports.resize(n_workers);

    // Shared between workers only through the barrier's completion step.
    std::vector<std::vector<float>> local_grads(n_workers, std::vector<float>(params.size()));
    std::vector<double> local_losses(n_workers, 0.0);
    std::vector<float> reduced(params.size());
    double reduced_loss = 0.0;
    bool aborted = false;
    std::vector<std::exception_ptr> errors(n_workers);

    auto reduce = [&]() noexcept {
        for (std::size_t w = 0; w < n_workers; ++w) {
            if (errors[w]) aborted = true;
        }
        if (aborted) return;
        const float inv = 1.0f / static_cast<float>(n_workers);
        for (std::size_t i = 0; i < reduced.size(); ++i) {
            float s = 0.0f;
            for (std::size_t w = 0; w < n_workers; ++w) s += local_grads[w][i];
            reduced[i] = s * inv;
        }
        reduced_loss = 0.0;
        for (double l : local_losses) reduced_loss += l;
        reduced_loss /= static_cast<double>(n_workers);
        ++out.communication_events;
    };
    std::barrier sync(static_cast<std::ptrdiff_t>(n_workers), reduce);

    const std::size_t n = config.total_updates;
    {
        std::vector<std::jthread> workers;
        workers.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) {
            workers.emplace_back([&, w] {
                auto& mine = out.params[w];
                auto state = OptimizerState::fresh(mine.size());
                auto& report = out.reports[w];
                const auto start = Clock::now();
                for (std::size_t k = 0; k < n; ++k) {
                    try {
                        const auto batch = draw_batch(*streams[w], config);
                        auto lg = loss_and_grad(model, mine, std::span<const SequenceBlock>(batch));
                        check_finite(lg.loss, k + 1);
                        local_grads[w] = std::move(lg.grad.values);
                        local_losses[w] = lg.loss;
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                    sync.arrive_and_wait();
                    if (aborted) return;
                    // Every worker copies `reduced` before arriving at the next
                    // reduction, so the completion step never races a reader.
                    auto grad = reduced;
                    if (config.clip_norm) clip_gradient(grad, *config.clip_norm);
                    const double lr = lr_at(k + 1, config);
                    adam_update(mine.values, grad, state, lr, config);
                    state.schedule_position = k + 1;
                    ++report.updates;
                    report.final_loss = reduced_loss;
                    if ((k + 1) % config.log_every == 0 || k + 1 == n || k == 0) {
                        report.loss_curve.push_back(
                            LossSample{k + 1, reduced_loss, lr, seconds_since(start) * 1000.0});
                    }
                }
                finish_report(report, start);
            });
        }
    }
    for (std::size_t w = 0; w < n_workers; ++w) {
        if (!errors[w]) continue;
        try {
            std::rethrow_exception(errors[w]);
        } catch (const std::exception& e) {
            fail(ErrorKind::worker, "worker " + std::to_string(w) + " failed: " + e.what());
        }
    }
    return out;
}

} // namespace

DataParallelResult train_data_parallel(const ModelConfig& model, const ParameterVector& params,
                                       std::vector<std::unique_ptr<BlockSource>>& streams,
                                       const TrainConfig& config, std::size_t n_workers,
                                       SyncMode sync) {
    config.validate();
    require(n_workers >= 1, ErrorKind::invalid_argument, "n_workers must be at least 1");
    require(streams.size() >= n_workers, ErrorKind::invalid_argument,
            "train_data_parallel needs one stream per worker");
    return sync == SyncMode::all_reduce ? run_all_reduce(model, params, streams, config, n_workers)
                                        : run_independent(model, params, streams, config, n_workers);
}

} // namespace btm
