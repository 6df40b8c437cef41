#pragma once

// Domain-tagged token streams: synthetic provenance domains, byte-level
// tokenization, packing into fixed-length blocks, and balanced sampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace btm {

using TokenId = std::int32_t;

struct Vocab {
    std::size_t size = 258;
    TokenId bod_id = 256;
    TokenId pad_id = 257;

    // 256 byte values followed by the beginning-of-document and pad ids.
    static Vocab bytes() { return Vocab{}; }
    void validate() const;
};

enum class Split { train, valid, test };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view name);

// Documents never contain this byte; it separates documents on disk.
inline constexpr char kDocumentSeparator = '\x1e';

struct DomainCorpus {
    std::string domain_id;
    std::vector<std::string> train;
    std::vector<std::string> valid;
    std::vector<std::string> test;

    const std::vector<std::string>& documents(Split split) const;
    std::vector<std::string>& documents(Split split);
    std::size_t token_count(Split split) const;
    void validate() const;
};

struct SequenceBlock {
    std::vector<TokenId> tokens;
    std::optional<std::string> domain_id;

    std::size_t size() const noexcept { return tokens.size(); }
};

// An ordered partition of training domains into batches B1..Bm.
struct DomainBatchPlan {
    std::vector<std::vector<std::string>> batches;

    std::vector<std::string> all_domains() const;
    void validate() const;
};

// One synthetic domain: a named generator and requested token counts per split.
// `components` is only used by the "mix" generator, which draws each document
// from one of the listed generators.
struct DomainRecipe {
    std::string domain_id;
    std::string generator;
    std::vector<std::string> components;
    std::size_t train_tokens = 0;
    std::size_t valid_tokens = 0;
    std::size_t test_tokens = 0;
};

// Generator names accepted in recipes (excluding "mix").
std::span<const std::string_view> known_generators() noexcept;

// Produces one document from `generator` using `rng`. Exposed for tests.
std::string generate_document(std::string_view generator, std::mt19937_64& rng);

std::vector<DomainCorpus> generate_synthetic_domains(std::span<const DomainRecipe> recipes,
                                                     std::uint64_t seed);

// Byte tokenization with a leading beginning-of-document token.
std::vector<TokenId> tokenize_document(std::string_view document, const Vocab& vocab);
// Inverse of packing: drops BOD/PAD and concatenates the remaining bytes.
std::string detokenize(std::span<const TokenId> tokens, const Vocab& vocab);

std::vector<SequenceBlock> pack_documents(std::span<const std::string> documents,
                                          std::size_t block_length, const Vocab& vocab,
                                          std::optional<std::string> domain_id = std::nullopt);
std::vector<SequenceBlock> pack_documents(const DomainCorpus& corpus, Split split,
                                          std::size_t block_length, const Vocab& vocab);

// Source of training blocks. Implementations own their rng; one per worker.
class BlockSource {
public:
    virtual ~BlockSource() = default;
    virtual SequenceBlock next() = 0;
};

// Draws a domain uniformly, then the next block of that domain's shuffled
// epoch order. Domains are packed independently.
class BalancedSampler final : public BlockSource {
public:
    BalancedSampler(std::span<const DomainCorpus> domains, std::size_t block_length,
                    const Vocab& vocab, std::uint64_t seed, Split split = Split::train);
    BalancedSampler(std::vector<std::vector<SequenceBlock>> per_domain_blocks, std::uint64_t seed);

    SequenceBlock next() override;

    std::size_t domain_count() const noexcept { return domains_.size(); }

private:
    struct DomainCursor {
        std::shared_ptr<const std::vector<SequenceBlock>> blocks;
        std::vector<std::size_t> order;
        std::size_t position = 0;
    };

    void reshuffle(DomainCursor& cursor);

    std::vector<DomainCursor> domains_;
    std::mt19937_64 rng_;
};

// Corpus files: <root>/<domain>/<split>.txt with documents separated by
// kDocumentSeparator.
void save_corpus(const DomainCorpus& corpus, const std::filesystem::path& root);
DomainCorpus load_corpus(const std::filesystem::path& root, const std::string& domain_id);

} // namespace btm
