#pragma once

// Tiny pre-norm decoder-only transformer with hand-written backprop. All
// parameters live in one flat vector described by a named segment table, so
// experts can be averaged and checkpointed as plain arrays.

#include "btm/corpus.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace btm {

struct ModelConfig {
    std::size_t vocab_size = 258;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_ff = 256;
    std::size_t max_seq_len = 128;
    bool tie_embeddings = true;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
    // Weight matrices get the scaled-normal init; everything else is constant.
    bool is_weight = false;

    bool operator==(const Segment&) const = default;
};

class ParameterLayout {
public:
    explicit ParameterLayout(const ModelConfig& config);
    ParameterLayout() = default;

    std::span<const Segment> segments() const noexcept { return segments_; }
    std::size_t total() const noexcept { return total_; }
    const Segment& find(std::string_view name) const;

    bool operator==(const ParameterLayout&) const = default;

private:
    void add(std::string name, std::size_t length, bool is_weight);

    std::vector<Segment> segments_;
    std::size_t total_ = 0;
};

template <class Real>
struct BasicParameterVector {
    ParameterLayout layout;
    std::vector<Real> values;

    BasicParameterVector() = default;
    explicit BasicParameterVector(ParameterLayout l) : layout(std::move(l)), values(layout.total()) {}

    std::size_t size() const noexcept { return values.size(); }
    std::span<Real> segment(std::string_view name) {
        const auto& s = layout.find(name);
        return std::span<Real>(values).subspan(s.offset, s.length);
    }
    std::span<const Real> segment(std::string_view name) const {
        const auto& s = layout.find(name);
        return std::span<const Real>(values).subspan(s.offset, s.length);
    }
};

using ParameterVector = BasicParameterVector<float>;
using ParameterVector64 = BasicParameterVector<double>;

template <class To, class From>
BasicParameterVector<To> convert(const BasicParameterVector<From>& in) {
    BasicParameterVector<To> out;
    out.layout = in.layout;
    out.values.assign(in.values.begin(), in.values.end());
    return out;
}

// Scaled-normal weights (std 0.02), zero biases and norm offsets, unit norm gains.
ParameterVector init_params(const ModelConfig& config, std::uint64_t seed);

template <class Real>
struct ForwardResult {
    std::size_t length = 0;
    std::size_t vocab_size = 0;
    // Row t is log p(. | tokens[0..t]); the target of row t is tokens[t+1].
    std::vector<Real> log_probs;
    double total_log_likelihood = 0.0;
    std::size_t token_count = 0;

    std::span<const Real> row(std::size_t t) const {
        return std::span<const Real>(log_probs).subspan(t * vocab_size, vocab_size);
    }
};

// Scores positions t in [0, T-2] against tokens[t+1]; pad targets are skipped.
template <class Real>
ForwardResult<Real> forward(const ModelConfig& config, const BasicParameterVector<Real>& params,
                            const SequenceBlock& block, const Vocab& vocab = Vocab::bytes());

template <class Real>
struct LossAndGrad {
    double loss = 0.0;  // mean NLL per scored token
    std::size_t token_count = 0;
    BasicParameterVector<Real> grad;
};

template <class Real>
LossAndGrad<Real> loss_and_grad(const ModelConfig& config, const BasicParameterVector<Real>& params,
                                std::span<const SequenceBlock> blocks,
                                const Vocab& vocab = Vocab::bytes());

std::size_t parameter_count(const ModelConfig& config);

} // namespace btm
