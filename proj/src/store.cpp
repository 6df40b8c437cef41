#include "btm/store.hpp"

#include "btm/config.hpp"
#include "btm/error.hpp"

#include <json.hpp>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace btm {

using nlohmann::json;

namespace {

static_assert(std::numeric_limits<float>::is_iec559, "checkpoints assume IEEE-754 floats");

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_floats(std::string& out, std::span<const float> xs) {
    for (float x : xs) put_le(out, std::bit_cast<std::uint32_t>(x));
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <class U>
    U le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return v;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void floats(std::vector<float>& out, std::size_t n) {
        need(n * 4);
        out.resize(n);
        for (auto& x : out) x = std::bit_cast<float>(le<std::uint32_t>());
    }

    std::size_t position() const noexcept { return pos_; }

private:
    void need(std::size_t n) const {
        require(bytes_.size() - pos_ >= n, ErrorKind::checksum, "checkpoint is truncated");
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

json lineage_to_json(const Lineage& l) {
    return json{{"seed_checkpoint_id", l.seed_checkpoint_id},
                {"branch_sources", l.branch_sources},
                {"branch_weights", l.branch_weights},
                {"updates_trained", l.updates_trained}};
}

Lineage lineage_from_json(const json& j) {
    Lineage l;
    j.at("seed_checkpoint_id").get_to(l.seed_checkpoint_id);
    j.at("branch_sources").get_to(l.branch_sources);
    j.at("branch_weights").get_to(l.branch_weights);
    j.at("updates_trained").get_to(l.updates_trained);
    return l;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::not_found, "cannot open '" + path.string() + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        require(static_cast<bool>(out), ErrorKind::io, "write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

} // namespace

std::string encode_checkpoint(const ExpertModel& expert, const ModelConfig& config) {
    config.validate();
    const ParameterLayout layout(config);
    require(expert.params.layout == layout, ErrorKind::invalid_argument,
            "expert '" + expert.expert_id + "' does not match the model config");

    const json header{{"model", to_json(config)},
                      {"expert_id", expert.expert_id},
                      {"domain_id", expert.domain_id},
                      {"lineage", lineage_to_json(expert.lineage)},
                      {"updates_trained", expert.lineage.updates_trained}};
    const std::string header_text = header.dump();

    std::string out(kCheckpointMagic, 4);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
    out += header_text;

    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(layout.segments().size()));
    for (const auto& s : layout.segments()) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
        out += s.name;
        put_le<std::uint64_t>(out, s.offset);
        put_le<std::uint64_t>(out, s.length);
    }
    put_le<std::uint64_t>(out, expert.params.size());
    put_floats(out, expert.params.values);

    if (expert.opt_state) {
        const auto& st = *expert.opt_state;
        require(st.first_moment.size() == expert.params.size() &&
                    st.second_moment.size() == expert.params.size(),
                ErrorKind::invalid_argument, "optimizer moments do not match the parameter count");
        out.push_back(1);
        put_le<std::uint64_t>(out, st.step);
        put_le<std::uint64_t>(out, st.schedule_position);
        put_floats(out, st.first_moment);
        put_floats(out, st.second_moment);
    } else {
        out.push_back(0);
    }
    put_le<std::uint64_t>(out, fnv1a(out));
    return out;
}

LoadedExpert decode_checkpoint(std::string_view bytes, const std::optional<ModelConfig>& expected) {
    require(bytes.size() >= 20 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0,
            ErrorKind::checksum, "not a checkpoint file (bad magic)");
    Reader trailer(bytes.substr(bytes.size() - 8));
    const auto stored = trailer.le<std::uint64_t>();
    const auto body = bytes.substr(0, bytes.size() - 8);
    const auto actual = fnv1a(body);
    require(stored == actual, ErrorKind::checksum,
            "checksum mismatch: stored " + hex16(stored) + ", computed " + hex16(actual));

    Reader r(body);
    r.take(4);
    const auto version = r.le<std::uint32_t>();
    require(version == kCheckpointVersion, ErrorKind::version,
            "checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCheckpointVersion) + ")");
    const auto header_len = r.le<std::uint32_t>();
    json header;
    try {
        header = json::parse(r.take(header_len));
    } catch (const json::exception& e) {
        fail(ErrorKind::checksum, std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    LoadedExpert out;
    out.config = model_config_from_json(header.at("model"));
    out.config.validate();
    header.at("expert_id").get_to(out.expert.expert_id);
    header.at("domain_id").get_to(out.expert.domain_id);
    out.expert.lineage = lineage_from_json(header.at("lineage"));

    const ParameterLayout layout(out.config);
    const auto n_segments = r.le<std::uint32_t>();
    require(n_segments == layout.segments().size(), ErrorKind::checksum,
            "segment table does not match the header config");
    for (const auto& s : layout.segments()) {
        const auto name = r.take(r.le<std::uint32_t>());
        const auto offset = r.le<std::uint64_t>();
        const auto length = r.le<std::uint64_t>();
        require(name == s.name && offset == s.offset && length == s.length, ErrorKind::checksum,
                "segment '" + std::string(name) + "' does not match the header config");
    }
    const auto count = r.le<std::uint64_t>();
    require(count == layout.total(), ErrorKind::checksum, "parameter count disagrees with header");
    if (expected) {
        const auto want = parameter_count(*expected);
        require(count == want, ErrorKind::config,
                "checkpoint holds " + std::to_string(count) + " parameters but the config expects " +
                    std::to_string(want));
        require(out.config == *expected, ErrorKind::config,
                "checkpoint model config differs from the expected config");
    }
    out.expert.params = ParameterVector(layout);
    r.floats(out.expert.params.values, count);

    const auto has_moments = r.le<std::uint8_t>();
    if (has_moments == 1) {
        OptimizerState st;
        st.step = r.le<std::uint64_t>();
        st.schedule_position = r.le<std::uint64_t>();
        r.floats(st.first_moment, count);
        r.floats(st.second_moment, count);
        out.expert.opt_state = std::move(st);
    } else {
        require(has_moments == 0, ErrorKind::checksum, "invalid optimizer-state flag");
    }
    require(r.position() == body.size(), ErrorKind::checksum, "trailing bytes after payload");
    out.checkpoint_id = hex16(stored);
    return out;
}

std::string save_expert(const ExpertModel& expert, const ModelConfig& config,
                        const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(expert, config);
    write_file_atomic(path, bytes);
    return hex16(Reader(std::string_view(bytes).substr(bytes.size() - 8)).le<std::uint64_t>());
}

LoadedExpert load_expert(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
    const auto bytes = read_file(path);
    try {
        return decode_checkpoint(bytes, expected);
    } catch (const Error& e) {
        fail(e.kind(), path.string() + ": " + e.what());
    }
}

std::string checkpoint_id(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    require(bytes.size() >= 8, ErrorKind::checksum, path.string() + ": file too short");
    return hex16(Reader(std::string_view(bytes).substr(bytes.size() - 8)).le<std::uint64_t>());
}

void save_forest(const ElmForest& forest, const std::filesystem::path& dir) {
    forest.validate();
    json experts = json::array();
    for (const auto& e : forest.experts()) {
        const auto rel = std::filesystem::path("experts") / (e.expert_id + ".btmf");
        const auto id = save_expert(e, forest.config(), dir / rel);
        experts.push_back(
            json{{"expert_id", e.expert_id}, {"domain_id", e.domain_id}, {"file", rel.generic_string()}, {"checksum", id}});
    }
    json manifest{{"format_version", kCheckpointVersion},
                  {"model", to_json(forest.config())},
                  {"seed_checkpoint", forest.seed_checkpoint() ? json(*forest.seed_checkpoint()) : json(nullptr)},
                  {"experts", experts}};
    if (const auto& p = forest.cached_prior()) {
        manifest["cached_prior"] = json{{"label", p->label}, {"probs", p->probs}};
    } else {
        manifest["cached_prior"] = nullptr;
    }
    write_file_atomic(dir / kForestManifest, manifest.dump(2) + "\n");
}

ElmForest load_forest(const std::filesystem::path& dir) {
    const auto manifest_path = dir / kForestManifest;
    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        fail(ErrorKind::config, manifest_path.string() + " is not valid JSON: " + e.what());
    }
    try {
        const auto version = manifest.at("format_version").get<std::uint32_t>();
        require(version == kCheckpointVersion, ErrorKind::version,
                "forest manifest version " + std::to_string(version) + " is not supported");
        ElmForest forest(model_config_from_json(manifest.at("model")));
        forest.config().validate();
        if (!manifest.at("seed_checkpoint").is_null()) {
            forest.set_seed_checkpoint(manifest.at("seed_checkpoint").get<std::string>());
        }
        for (const auto& entry : manifest.at("experts")) {
            const auto id = entry.at("expert_id").get<std::string>();
            const auto path = dir / entry.at("file").get<std::string>();
            LoadedExpert loaded;
            try {
                require(std::filesystem::exists(path), ErrorKind::not_found,
                        "checkpoint file '" + path.string() + "' is missing");
                loaded = load_expert(path, forest.config());
            } catch (const Error& e) {
                fail(e.kind(), "expert '" + id + "': " + e.what());
            }
            require(loaded.checkpoint_id == entry.at("checksum").get<std::string>(), ErrorKind::checksum,
                    "expert '" + id + "': checkpoint " + loaded.checkpoint_id +
                        " does not match the manifest checksum");
            require(loaded.expert.expert_id == id &&
                        loaded.expert.domain_id == entry.at("domain_id").get<std::string>(),
                    ErrorKind::conflict, "expert '" + id + "': checkpoint metadata disagrees with the manifest");
            forest.add(std::move(loaded.expert));
        }
        const auto& prior = manifest.at("cached_prior");
        if (!prior.is_null()) {
            forest.set_cached_prior(CachedPrior{prior.at("label").get<std::string>(),
                                                prior.at("probs").get<std::vector<double>>()});
        }
        forest.validate();
        return forest;
    } catch (const json::exception& e) {
        fail(ErrorKind::config, manifest_path.string() + ": " + e.what());
    }
}

} // namespace btm
