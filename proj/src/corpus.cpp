#include "btm/corpus.hpp"

#include "btm/error.hpp"
#include "btm/rng.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace btm {

void Vocab::validate() const {
    require(size >= 2, ErrorKind::invalid_argument, "vocab size must be at least 2");
    require(bod_id != pad_id, ErrorKind::invalid_argument, "bod_id and pad_id must differ");
    require(bod_id >= 0 && static_cast<std::size_t>(bod_id) < size && pad_id >= 0 &&
                static_cast<std::size_t>(pad_id) < size,
            ErrorKind::invalid_argument, "special token ids must be below vocab size");
}

std::string_view to_string(Split split) noexcept {
    switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "valid" || name == "dev") return Split::valid;
    if (name == "test") return Split::test;
    fail(ErrorKind::invalid_argument, "unknown split '" + std::string(name) + "'");
}

const std::vector<std::string>& DomainCorpus::documents(Split split) const {
    switch (split) {
    case Split::train: return train;
    case Split::valid: return valid;
    case Split::test: return test;
    }
    return train;
}

std::vector<std::string>& DomainCorpus::documents(Split split) {
    return const_cast<std::vector<std::string>&>(std::as_const(*this).documents(split));
}

std::size_t DomainCorpus::token_count(Split split) const {
    std::size_t n = 0;
    for (const auto& doc : documents(split)) {
        n += doc.size();
    }
    return n;
}

void DomainCorpus::validate() const {
    require(!domain_id.empty(), ErrorKind::invalid_argument, "domain id must not be empty");
    for (Split split : {Split::train, Split::valid, Split::test}) {
        for (const auto& doc : documents(split)) {
            require(!doc.empty(), ErrorKind::invalid_argument,
                    "domain '" + domain_id + "' has an empty " + std::string(to_string(split)) +
                        " document");
        }
    }
}

std::vector<std::string> DomainBatchPlan::all_domains() const {
    std::vector<std::string> out;
    for (const auto& batch : batches) {
        out.insert(out.end(), batch.begin(), batch.end());
    }
    return out;
}

void DomainBatchPlan::validate() const {
    require(!batches.empty(), ErrorKind::invalid_argument, "batch plan has no batches");
    std::set<std::string> seen;
    for (const auto& batch : batches) {
        require(!batch.empty(), ErrorKind::invalid_argument, "batch plan contains an empty batch");
        for (const auto& d : batch) {
            require(seen.insert(d).second, ErrorKind::invalid_argument,
                    "domain '" + d + "' appears in more than one batch");
        }
    }
}

// ----------------------------------------------------------------------------
// Generators
// ----------------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 9> kGenerators = {
    "arithmetic", "code", "prose", "dna", "csv", "hex", "url", "repeat", "json",
};

constexpr std::array<std::string_view, 48> kWords = {
    "the",   "a",      "river", "stone",  "light",  "walks",  "under", "over",  "quiet", "old",
    "house", "garden", "night", "morning", "sings", "falls", "green", "small", "city",  "road",
    "and",   "but",    "when",  "where",  "slowly", "bright", "cold",  "warm",  "wind",  "sea",
    "tree",  "bird",   "sleeps", "dreams", "across", "beyond", "is",   "was",   "of",    "to",
    "in",    "long",   "deep",  "field",  "window", "her",    "his",   "their",
};

constexpr std::array<std::string_view, 16> kIdents = {
    "x", "y", "i", "n", "buf", "len", "node", "ctx", "val", "acc", "tmp", "item", "next", "size",
    "key", "ptr",
};

constexpr std::array<std::string_view, 12> kHosts = {
    "example", "shop", "news", "api", "docs", "mail", "files", "data", "blog", "cdn", "maps", "wiki",
};

constexpr std::array<std::string_view, 5> kTlds = {".com", ".org", ".net", ".io", ".dev"};

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

template <class Container>
std::string_view pick(std::mt19937_64& rng, const Container& items) {
    return items[uniform(rng, 0, items.size() - 1)];
}

std::string gen_arithmetic(std::mt19937_64& rng) {
    std::ostringstream os;
    const std::size_t lines = uniform(rng, 6, 14);
    for (std::size_t l = 0; l < lines; ++l) {
        long long a = static_cast<long long>(uniform(rng, 0, 99));
        long long b = static_cast<long long>(uniform(rng, 0, 99));
        long long c = static_cast<long long>(uniform(rng, 1, 9));
        switch (uniform(rng, 0, 2)) {
        case 0: os << a << '+' << b << '*' << c << '=' << a + b * c; break;
        case 1: os << '(' << a << '-' << b << ")*" << c << '=' << (a - b) * c; break;
        default: os << a << '*' << c << '-' << b << '=' << a * c - b; break;
        }
        os << '\n';
    }
    return os.str();
}

void emit_block(std::ostringstream& os, std::mt19937_64& rng, int depth) {
    const std::size_t stmts = uniform(rng, 1, 3);
    for (std::size_t s = 0; s < stmts; ++s) {
        const auto id = pick(rng, kIdents);
        const std::size_t kind = depth < 2 ? uniform(rng, 0, 3) : uniform(rng, 0, 1);
        switch (kind) {
        case 0: os << id << '=' << pick(rng, kIdents) << '+' << uniform(rng, 0, 9) << ';'; break;
        case 1: os << "return " << id << ';'; break;
        case 2:
            os << "if(" << id << '>' << uniform(rng, 0, 9) << "){";
            emit_block(os, rng, depth + 1);
            os << '}';
            break;
        default:
            os << "while(" << id << "<" << pick(rng, kIdents) << "){";
            emit_block(os, rng, depth + 1);
            os << '}';
            break;
        }
    }
}

std::string gen_code(std::mt19937_64& rng) {
    std::ostringstream os;
    const std::size_t fns = uniform(rng, 2, 4);
    for (std::size_t f = 0; f < fns; ++f) {
        os << "fn " << pick(rng, kIdents) << uniform(rng, 0, 9) << '(' << pick(rng, kIdents) << ','
           << pick(rng, kIdents) << "){";
        emit_block(os, rng, 0);
        os << "}\n";
    }
    return os.str();
}

std::string gen_prose(std::mt19937_64& rng) {
    std::string out;
    const std::size_t sentences = uniform(rng, 3, 7);
    for (std::size_t s = 0; s < sentences; ++s) {
        const std::size_t words = uniform(rng, 5, 12);
        for (std::size_t w = 0; w < words; ++w) {
            if (w > 0) out += ' ';
            out += pick(rng, kWords);
        }
        out += (uniform(rng, 0, 4) == 0) ? ", " : ". ";
    }
    out.pop_back();
    return out;
}

std::string gen_dna(std::mt19937_64& rng) {
    // Codon-biased so the domain has learnable structure beyond its alphabet.
    constexpr std::array<std::string_view, 8> codons = {"ATG", "GCC", "TAA", "CGT",
                                                         "GGA", "TTC", "ACA", "CAG"};
    std::string out;
    const std::size_t lines = uniform(rng, 3, 6);
    for (std::size_t l = 0; l < lines; ++l) {
        for (std::size_t c = 0; c < 20; ++c) {
            if (uniform(rng, 0, 3) == 0) {
                static constexpr char bases[] = {'A', 'C', 'G', 'T'};
                for (int k = 0; k < 3; ++k) out += bases[uniform(rng, 0, 3)];
            } else {
                out += pick(rng, codons);
            }
        }
        out += '\n';
    }
    return out;
}

std::string gen_csv(std::mt19937_64& rng) {
    std::ostringstream os;
    const std::size_t cols = uniform(rng, 3, 5);
    const std::size_t rows = uniform(rng, 5, 10);
    for (std::size_t c = 0; c < cols; ++c) {
        os << (c ? "," : "") << "col" << c;
    }
    os << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const long long whole = static_cast<long long>(uniform(rng, 0, 999)) - 500;
            os << (c ? "," : "") << whole << '.' << uniform(rng, 0, 9) << uniform(rng, 0, 9);
        }
        os << '\n';
    }
    return os.str();
}

std::string gen_hex(std::mt19937_64& rng) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    std::size_t address = uniform(rng, 0, 0xfff) * 16;
    const std::size_t lines = uniform(rng, 4, 8);
    for (std::size_t l = 0; l < lines; ++l) {
        char addr[16];
        std::snprintf(addr, sizeof addr, "%06zx:", address);
        out += addr;
        for (int b = 0; b < 8; ++b) {
            out += ' ';
            out += digits[uniform(rng, 0, 15)];
            out += digits[uniform(rng, 0, 15)];
        }
        out += '\n';
        address += 16;
    }
    return out;
}

std::string gen_url(std::mt19937_64& rng) {
    std::ostringstream os;
    const std::size_t n = uniform(rng, 4, 8);
    for (std::size_t i = 0; i < n; ++i) {
        os << (uniform(rng, 0, 3) ? "https://" : "http://") << "www." << pick(rng, kHosts)
           << pick(rng, kTlds);
        const std::size_t depth = uniform(rng, 1, 3);
        for (std::size_t d = 0; d < depth; ++d) {
            os << '/' << pick(rng, kIdents);
        }
        if (uniform(rng, 0, 1)) {
            os << "?id=" << uniform(rng, 0, 9999) << "&q=" << pick(rng, kIdents);
        }
        os << '\n';
    }
    return os.str();
}

std::string gen_repeat(std::mt19937_64& rng) {
    constexpr std::array<std::string_view, 12> syllables = {"LA", "DO", "MI", "KO", "ZU", "RE",
                                                            "TA", "VEN", "SOL", "QI", "BRA", "NU"};
    std::string out;
    const std::size_t groups = uniform(rng, 3, 6);
    for (std::size_t g = 0; g < groups; ++g) {
        std::string unit;
        const std::size_t len = uniform(rng, 1, 3);
        for (std::size_t i = 0; i < len; ++i) unit += pick(rng, syllables);
        const std::size_t reps = uniform(rng, 3, 7);
        for (std::size_t r = 0; r < reps; ++r) out += unit;
        out += '|';
    }
    return out;
}

std::string gen_json(std::mt19937_64& rng) {
    std::ostringstream os;
    const std::size_t records = uniform(rng, 2, 5);
    for (std::size_t r = 0; r < records; ++r) {
        os << "{\"" << pick(rng, kIdents) << "\": " << uniform(rng, 0, 999) << ", \"name\": \""
           << pick(rng, kWords) << "\", \"ok\": " << (uniform(rng, 0, 1) ? "true" : "false") << "}\n";
    }
    return os.str();
}

} // namespace

std::span<const std::string_view> known_generators() noexcept {
    return kGenerators;
}

std::string generate_document(std::string_view generator, std::mt19937_64& rng) {
    if (generator == "arithmetic") return gen_arithmetic(rng);
    if (generator == "code") return gen_code(rng);
    if (generator == "prose") return gen_prose(rng);
    if (generator == "dna") return gen_dna(rng);
    if (generator == "csv") return gen_csv(rng);
    if (generator == "hex") return gen_hex(rng);
    if (generator == "url") return gen_url(rng);
    if (generator == "repeat") return gen_repeat(rng);
    if (generator == "json") return gen_json(rng);
    fail(ErrorKind::invalid_argument, "unknown generator '" + std::string(generator) + "'");
}

namespace {

std::vector<std::string> generate_split(const DomainRecipe& recipe, std::size_t tokens,
                                        std::mt19937_64& rng) {
    std::vector<std::string> docs;
    std::size_t total = 0;
    while (total < tokens) {
        std::string doc;
        if (recipe.generator == "mix") {
            doc = generate_document(recipe.components[uniform(rng, 0, recipe.components.size() - 1)],
                                    rng);
        } else {
            doc = generate_document(recipe.generator, rng);
        }
        if (total + doc.size() > tokens) {
            doc.resize(tokens - total);
        }
        total += doc.size();
        docs.push_back(std::move(doc));
    }
    return docs;
}

} // namespace

std::vector<DomainCorpus> generate_synthetic_domains(std::span<const DomainRecipe> recipes,
                                                     std::uint64_t seed) {
    require(recipes.size() >= 2, ErrorKind::invalid_argument,
            "at least two domain recipes are required");
    std::set<std::string> ids;
    for (const auto& r : recipes) {
        require(!r.domain_id.empty(), ErrorKind::invalid_argument, "recipe has an empty domain id");
        require(ids.insert(r.domain_id).second, ErrorKind::invalid_argument,
                "duplicate domain id '" + r.domain_id + "'");
        // Held-out evaluation domains may have an empty train split.
        require(r.train_tokens + r.valid_tokens + r.test_tokens > 0, ErrorKind::invalid_argument,
                "domain '" + r.domain_id + "' requests zero tokens");
        if (r.generator == "mix") {
            require(!r.components.empty(), ErrorKind::invalid_argument,
                    "mix recipe '" + r.domain_id + "' lists no components");
            for (const auto& c : r.components) {
                require(std::find(kGenerators.begin(), kGenerators.end(), c) != kGenerators.end(),
                        ErrorKind::invalid_argument, "unknown mix component '" + c + "'");
            }
        } else {
            require(std::find(kGenerators.begin(), kGenerators.end(), r.generator) !=
                        kGenerators.end(),
                    ErrorKind::invalid_argument, "unknown generator '" + r.generator + "'");
        }
    }

    std::vector<DomainCorpus> out;
    out.reserve(recipes.size());
    for (const auto& r : recipes) {
        // Seeding per domain id keeps a domain's text stable when other
        // recipes are added or reordered.
        std::mt19937_64 rng(derive_seed(seed, r.domain_id));
        DomainCorpus corpus;
        corpus.domain_id = r.domain_id;
        corpus.train = generate_split(r, r.train_tokens, rng);
        corpus.valid = generate_split(r, r.valid_tokens, rng);
        corpus.test = generate_split(r, r.test_tokens, rng);
        out.push_back(std::move(corpus));
    }
    return out;
}

// ----------------------------------------------------------------------------
// Tokenization and packing
// ----------------------------------------------------------------------------

std::vector<TokenId> tokenize_document(std::string_view document, const Vocab& vocab) {
    std::vector<TokenId> out;
    out.reserve(document.size() + 1);
    out.push_back(vocab.bod_id);
    for (char c : document) {
        out.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string detokenize(std::span<const TokenId> tokens, const Vocab& vocab) {
    std::string out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
        if (t == vocab.bod_id || t == vocab.pad_id) continue;
        out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
}

std::vector<SequenceBlock> pack_documents(std::span<const std::string> documents,
                                          std::size_t block_length, const Vocab& vocab,
                                          std::optional<std::string> domain_id) {
    require(block_length >= 2, ErrorKind::invalid_argument, "block length must be at least 2");
    require(!documents.empty(), ErrorKind::invalid_argument, "cannot pack an empty split");

    std::vector<SequenceBlock> blocks;
    SequenceBlock current;
    current.tokens.reserve(block_length);
    current.domain_id = domain_id;
    auto push = [&](TokenId t) {
        current.tokens.push_back(t);
        if (current.tokens.size() == block_length) {
            blocks.push_back(std::move(current));
            current = SequenceBlock{};
            current.tokens.reserve(block_length);
            current.domain_id = domain_id;
        }
    };
    for (const auto& doc : documents) {
        push(vocab.bod_id);
        for (char c : doc) {
            push(static_cast<TokenId>(static_cast<unsigned char>(c)));
        }
    }
    if (!current.tokens.empty()) {
        current.tokens.resize(block_length, vocab.pad_id);
        blocks.push_back(std::move(current));
    }
    return blocks;
}

std::vector<SequenceBlock> pack_documents(const DomainCorpus& corpus, Split split,
                                          std::size_t block_length, const Vocab& vocab) {
    const auto& docs = corpus.documents(split);
    require(!docs.empty(), ErrorKind::invalid_argument,
            "domain '" + corpus.domain_id + "' has an empty " + std::string(to_string(split)) +
                " split");
    return pack_documents(docs, block_length, vocab, corpus.domain_id);
}

// ----------------------------------------------------------------------------
// Balanced sampling
// ----------------------------------------------------------------------------

BalancedSampler::BalancedSampler(std::span<const DomainCorpus> domains, std::size_t block_length,
                                 const Vocab& vocab, std::uint64_t seed, Split split)
    : rng_(seed) {
    require(!domains.empty(), ErrorKind::invalid_argument, "balanced sampler needs a domain");
    for (const auto& d : domains) {
        DomainCursor cursor;
        cursor.blocks = std::make_shared<const std::vector<SequenceBlock>>(
            pack_documents(d, split, block_length, vocab));
        domains_.push_back(std::move(cursor));
    }
    for (auto& c : domains_) reshuffle(c);
}

BalancedSampler::BalancedSampler(std::vector<std::vector<SequenceBlock>> per_domain_blocks,
                                 std::uint64_t seed)
    : rng_(seed) {
    require(!per_domain_blocks.empty(), ErrorKind::invalid_argument,
            "balanced sampler needs a domain");
    for (auto& blocks : per_domain_blocks) {
        require(!blocks.empty(), ErrorKind::invalid_argument, "balanced sampler got an empty domain");
        DomainCursor cursor;
        cursor.blocks = std::make_shared<const std::vector<SequenceBlock>>(std::move(blocks));
        domains_.push_back(std::move(cursor));
    }
    for (auto& c : domains_) reshuffle(c);
}

void BalancedSampler::reshuffle(DomainCursor& cursor) {
    cursor.order.resize(cursor.blocks->size());
    for (std::size_t i = 0; i < cursor.order.size(); ++i) cursor.order[i] = i;
    std::shuffle(cursor.order.begin(), cursor.order.end(), rng_);
    cursor.position = 0;
}

SequenceBlock BalancedSampler::next() {
    const std::size_t d =
        domains_.size() == 1 ? 0 : std::uniform_int_distribution<std::size_t>(0, domains_.size() - 1)(rng_);
    auto& cursor = domains_[d];
    if (cursor.position == cursor.order.size()) {
        reshuffle(cursor);
    }
    return (*cursor.blocks)[cursor.order[cursor.position++]];
}

// ----------------------------------------------------------------------------
// Files
// ----------------------------------------------------------------------------

void save_corpus(const DomainCorpus& corpus, const std::filesystem::path& root) {
    const auto dir = root / corpus.domain_id;
    std::filesystem::create_directories(dir);
    for (Split split : {Split::train, Split::valid, Split::test}) {
        const auto path = dir / (std::string(to_string(split)) + ".txt");
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
        const auto& docs = corpus.documents(split);
        for (std::size_t i = 0; i < docs.size(); ++i) {
            if (i > 0) out.put(kDocumentSeparator);
            out.write(docs[i].data(), static_cast<std::streamsize>(docs[i].size()));
        }
        require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
    }
}

DomainCorpus load_corpus(const std::filesystem::path& root, const std::string& domain_id) {
    DomainCorpus corpus;
    corpus.domain_id = domain_id;
    for (Split split : {Split::train, Split::valid, Split::test}) {
        const auto path = root / domain_id / (std::string(to_string(split)) + ".txt");
        std::ifstream in(path, std::ios::binary);
        require(static_cast<bool>(in), ErrorKind::not_found, "cannot read " + path.string());
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto& docs = corpus.documents(split);
        if (content.empty()) continue;
        std::size_t start = 0;
        while (true) {
            const auto end = content.find(kDocumentSeparator, start);
            docs.push_back(content.substr(start, end == std::string::npos ? std::string::npos : end - start));
            if (end == std::string::npos) break;
            start = end + 1;
        }
    }
    corpus.validate();
    return corpus;
}

} // namespace btm
