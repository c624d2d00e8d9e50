#include "tttlab/checkpoint.hpp"

#include <fstream>

#include "tttlab/container.hpp"
#include "tttlab/errors.hpp"

namespace tttlab {
namespace {

nlohmann::json layout(const ParamStore& s) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : s.blocks()) blocks.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", b.offset}});
    return {{"name", s.name()}, {"count", s.size()}, {"blocks", blocks}};
}

void check_layout(const nlohmann::json& stored, const ParamStore& expected) {
    if (stored != layout(expected)) {
        throw DataError("checkpoint parameter layout for '" + expected.name() + "' does not match its model config");
    }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json manifest{{"format", "tttlab-checkpoint"},
                            {"version", 1},
                            {"model", model_config_to_json(ck.config)},
                            {"schema_hash", schema_hash(ck.config.schema)},
                            {"normalization", norm_stats_to_json(ck.norm, ck.config.schema)},
                            {"epoch", ck.epoch},
                            {"validation_metric", ck.validation_metric},
                            {"seed", ck.seed},
                            {"parameters", {layout(ck.params.encoder), layout(ck.params.task), layout(ck.params.modality)}},
                            {"byte_order", "little-endian"},
                            {"value_type", "float64"},
                            {"extras", ck.extras}};
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    write_container_header(os, "TTTLABCK", manifest);
    write_le_doubles(os, ck.params.encoder.values());
    write_le_doubles(os, ck.params.task.values());
    write_le_doubles(os, ck.params.modality.values());
    if (!os) throw DataError("failed writing '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint '" + path.string() + "'");
    const auto mf = read_container_header(is, "TTTLABCK", "'" + path.string() + "'");
    Checkpoint ck;
    try {
        if (mf.at("format") != "tttlab-checkpoint") throw DataError("unexpected checkpoint format");
        ck.config = model_config_from_json(mf.at("model"));
        if (mf.at("schema_hash").get<std::uint64_t>() != schema_hash(ck.config.schema)) {
            throw DataError("checkpoint schema hash does not match its schema");
        }
        ck.norm = norm_stats_from_json(mf.at("normalization"), ck.config.schema);
        ck.epoch = mf.at("epoch").get<std::size_t>();
        ck.validation_metric = mf.at("validation_metric").get<double>();
        ck.seed = mf.at("seed").get<std::uint64_t>();
        ck.extras = mf.at("extras");
        // Rebuild the layout from the config, then verify it against the file.
        ck.params = Model(ck.config).init(0);
        const auto& stored = mf.at("parameters");
        if (!stored.is_array() || stored.size() != 3) throw DataError("checkpoint must hold three parameter sets");
        check_layout(stored[0], ck.params.encoder);
        check_layout(stored[1], ck.params.task);
        check_layout(stored[2], ck.params.modality);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    read_le_doubles(is, ck.params.encoder.values());
    read_le_doubles(is, ck.params.task.values());
    read_le_doubles(is, ck.params.modality.values());
    if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after checkpoint parameters");
    return ck;
}

}  // namespace tttlab
