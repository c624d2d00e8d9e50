#include "tttlab/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tttlab/errors.hpp"

namespace tttlab {
namespace {

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffU) << (8 * (7 - i));
    return r;
}

std::size_t label_count(const Dataset& ds) {
    switch (ds.task.type) {
        case TaskType::regression_tile: return 1;
        case TaskType::regression_pixel: return ds.tile_size * ds.tile_size;
        case TaskType::multilabel: return ds.task.classes;
    }
    return 0;
}

std::string label_kind_name(LabelKind k) {
    switch (k) {
        case LabelKind::none: return "none";
        case LabelKind::scalar: return "scalar";
        case LabelKind::grid: return "grid";
        case LabelKind::multilabel: return "multilabel";
    }
    return "none";
}

LabelKind parse_label_kind(const std::string& s) {
    if (s == "none") return LabelKind::none;
    if (s == "scalar") return LabelKind::scalar;
    if (s == "grid") return LabelKind::grid;
    if (s == "multilabel") return LabelKind::multilabel;
    throw DataError("unknown label kind '" + s + "'");
}

}  // namespace

void write_container_header(std::ostream& os, std::string_view magic, const nlohmann::json& manifest) {
    const std::string text = manifest.dump();
    const std::uint64_t len = to_le(text.size());
    os.write(magic.data(), 8);
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

nlohmann::json read_container_header(std::istream& is, std::string_view magic, const std::string& what) {
    char got[8];
    std::uint64_t len = 0;
    if (!is.read(got, 8) || std::memcmp(got, magic.data(), 8) != 0) {
        throw DataError(what + " is not a " + std::string(magic) + " container");
    }
    if (!is.read(reinterpret_cast<char*>(&len), 8)) throw DataError(what + ": truncated header");
    len = to_le(len);
    if (len > (1ULL << 32)) throw DataError(what + ": implausible manifest length");
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw DataError(what + ": truncated manifest");
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(what + ": manifest is not JSON: " + e.what());
    }
}

void write_le_doubles(std::ostream& os, std::span<const double> values) {
    for (double v : values) {
        std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
        os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
}

void read_le_doubles(std::istream& is, std::span<double> values) {
    for (double& v : values) {
        std::uint64_t bits = 0;
        if (!is.read(reinterpret_cast<char*>(&bits), sizeof(bits))) throw DataError("truncated binary payload");
        v = std::bit_cast<double>(to_le(bits));
    }
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds, const nlohmann::json& extras) {
    ds.validate();
    const std::size_t n_label = label_count(ds);
    nlohmann::json fields = nlohmann::json::array();
    std::size_t offset = 0;
    fields.push_back({{"name", "lonlat"}, {"offset", offset}, {"count", 2}});
    offset += 2;
    for (const auto& m : ds.schema) {
        const std::size_t count = m.value_count(ds.tile_size);
        nlohmann::json shape = m.scale == Scale::pixel ? nlohmann::json{m.bands, ds.tile_size, ds.tile_size}
                                                       : nlohmann::json{m.bands};
        fields.push_back({{"name", m.name}, {"offset", offset}, {"count", count}, {"shape", shape}});
        offset += count;
    }
    fields.push_back({{"name", "label"}, {"offset", offset}, {"count", n_label}});
    offset += n_label;
    const std::size_t record = offset;

    nlohmann::json tiles = nlohmann::json::array();
    for (const Tile& t : ds.tiles) {
        tiles.push_back({{"id", t.id},
                         {"month", t.month},
                         {"missing", t.missing(ds.schema)},
                         {"label", label_kind_name(t.label.kind)}});
    }
    nlohmann::json manifest = {
        {"format", "tttlab-dataset"},
        {"version", 1},
        {"schema", schema_to_json(ds.schema)},
        {"schema_hash", schema_hash(ds.schema)},
        {"task", to_string(ds.task.type)},
        {"task_classes", ds.task.classes},
        {"tile_size", ds.tile_size},
        {"tile_count", ds.tiles.size()},
        {"seed", ds.seed},
        {"layout",
         {{"byte_order", "little-endian"},
          {"value_type", "float64"},
          {"record_doubles", record},
          {"fields", fields},
          {"missing_fill", "modality no-data sentinel, 0 when the modality has none"},
          {"label_no_data", kLabelNoData}}},
        {"tiles", tiles}};
    for (const auto& [k, v] : extras.items()) manifest[k] = v;

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    write_container_header(os, "TTTLABDS", manifest);

    std::vector<double> buf(record);
    for (const Tile& t : ds.tiles) {
        std::size_t at = 0;
        buf[at++] = t.lonlat.lon;
        buf[at++] = t.lonlat.lat;
        for (std::size_t m = 0; m < ds.schema.size(); ++m) {
            const std::size_t count = ds.schema[m].value_count(ds.tile_size);
            if (t.is_missing(m)) {
                std::fill_n(buf.begin() + static_cast<std::ptrdiff_t>(at), count, ds.schema[m].no_data.value_or(0.0));
            } else {
                std::copy(t.modalities[m].begin(), t.modalities[m].end(), buf.begin() + static_cast<std::ptrdiff_t>(at));
            }
            at += count;
        }
        if (t.label.kind == LabelKind::none) {
            std::fill_n(buf.begin() + static_cast<std::ptrdiff_t>(at), n_label, kLabelNoData);
        } else {
            std::copy(t.label.values.begin(), t.label.values.end(), buf.begin() + static_cast<std::ptrdiff_t>(at));
        }
        write_le_doubles(os, buf);
    }
    if (!os) throw DataError("failed writing '" + path.string() + "'");
}

LoadedDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open dataset '" + path.string() + "'");
    LoadedDataset out;
    out.manifest = read_container_header(is, "TTTLABDS", "'" + path.string() + "'");
    try {
        const auto& mf = out.manifest;
        if (mf.at("format") != "tttlab-dataset") throw DataError("unexpected container format");
        Dataset& ds = out.dataset;
        ds.schema = schema_from_json(mf.at("schema"));
        ds.task.type = parse_task_type(mf.at("task").get<std::string>());
        ds.task.classes = mf.at("task_classes").get<std::size_t>();
        ds.tile_size = mf.at("tile_size").get<std::size_t>();
        ds.seed = mf.at("seed").get<std::uint64_t>();
        const std::size_t record = mf.at("layout").at("record_doubles").get<std::size_t>();
        const std::size_t n_label = label_count(ds);
        std::size_t expected = 2 + n_label;
        for (const auto& m : ds.schema) expected += m.value_count(ds.tile_size);
        if (record != expected) throw DataError("record layout does not match the schema");
        const auto& tiles = mf.at("tiles");
        if (tiles.size() != mf.at("tile_count").get<std::size_t>()) throw DataError("tile count mismatch");

        std::vector<double> buf(record);
        for (const auto& meta : tiles) {
            read_le_doubles(is, buf);
            Tile t;
            t.id = meta.at("id").get<std::int64_t>();
            t.month = meta.at("month").get<int>();
            t.lonlat = {buf[0], buf[1]};
            const auto missing = meta.at("missing").get<std::vector<std::string>>();
            std::size_t at = 2;
            t.modalities.resize(ds.schema.size());
            for (std::size_t m = 0; m < ds.schema.size(); ++m) {
                const std::size_t count = ds.schema[m].value_count(ds.tile_size);
                const bool is_missing = std::find(missing.begin(), missing.end(), ds.schema[m].name) != missing.end();
                if (!is_missing) {
                    t.modalities[m].assign(buf.begin() + static_cast<std::ptrdiff_t>(at),
                                           buf.begin() + static_cast<std::ptrdiff_t>(at + count));
                }
                at += count;
            }
            t.label.kind = parse_label_kind(meta.at("label").get<std::string>());
            if (t.label.kind != LabelKind::none) {
                t.label.values.assign(buf.begin() + static_cast<std::ptrdiff_t>(at),
                                      buf.begin() + static_cast<std::ptrdiff_t>(at + n_label));
            }
            ds.tiles.push_back(std::move(t));
        }
        if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after the last record");
        ds.validate();
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed dataset manifest: ") + ex.what());
    }
    return out;
}

}  // namespace tttlab
