#include "tokred/io.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace tokred::io {

using nlohmann::json;

namespace {

constexpr char kMagic[5] = {'T', 'O', 'K', 'D', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(std::istream& in) {
    const std::uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void write_dump(const std::string& path, const Matrix& rows, const Vector& cls, Grid grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error::data("cannot open '" + path + "' for writing");
    out.write(kMagic, 5);
    put_u32(out, static_cast<std::uint32_t>(rows.rows()));
    put_u32(out, static_cast<std::uint32_t>(rows.cols()));
    put_u32(out, static_cast<std::uint32_t>(grid.h));
    put_u32(out, static_cast<std::uint32_t>(grid.w));
    for (int d = 0; d < rows.cols(); ++d) put_f32(out, static_cast<float>(cls(d)));
    for (int i = 0; i < rows.rows(); ++i)
        for (int d = 0; d < rows.cols(); ++d) put_f32(out, static_cast<float>(rows(i, d)));
    if (!out) throw Error::data("short write to '" + path + "'");
}

struct Dump {
    Matrix rows;
    Vector cls;
    Grid grid;
};

Dump read_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error::data("cannot open '" + path + "'");
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, kMagic, 5) != 0)
        throw Error::data("'" + path + "' is not a TOKD1 dump");
    const auto p = get_u32(in);
    const auto d = get_u32(in);
    Dump dump;
    dump.grid.h = static_cast<int>(get_u32(in));
    dump.grid.w = static_cast<int>(get_u32(in));
    if (!in) throw Error::data("'" + path + "' is truncated");
    if (p < 1 || d < 1) throw Error::data("'" + path + "' has an empty token matrix");
    if (std::uint64_t(p) * d > (std::uint64_t{1} << 28))
        throw Error::data("'" + path + "' declares an implausibly large matrix");
    dump.cls.resize(d);
    for (std::uint32_t k = 0; k < d; ++k) dump.cls(k) = get_f32(in);
    dump.rows.resize(p, d);
    for (std::uint32_t i = 0; i < p; ++i)
        for (std::uint32_t k = 0; k < d; ++k) dump.rows(i, k) = get_f32(in);
    if (!in) throw Error::data("'" + path + "' is truncated");
    return dump;
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& rows) {
    if (!rows.is_array() || rows.empty()) throw Error::data("expected a non-empty matrix");
    const auto r = rows.size();
    const auto c = rows.front().size();
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        if (rows[i].size() != c) throw Error::data("ragged matrix rows in JSON");
        for (std::size_t j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
    }
    return m;
}

} // namespace

void write_tokens(const std::string& path, const TokenSet& tokens) {
    tokens.validate();
    write_dump(path, tokens.spatial, tokens.cls, tokens.grid);
}

TokenSet read_tokens(const std::string& path) {
    Dump dump = read_dump(path);
    TokenSet tokens{std::move(dump.rows), std::move(dump.cls), dump.grid};
    tokens.validate();
    return tokens;
}

void write_matrix(const std::string& path, const Matrix& rows) {
    if (rows.rows() < 1 || rows.cols() < 1) throw Error::data("matrix dump needs data");
    write_dump(path, rows, Vector::Zero(rows.cols()), Grid{});
}

Matrix read_matrix(const std::string& path) { return read_dump(path).rows; }

json record_to_json(const ReductionRecord& record) {
    json j;
    j["schema"] = "tokred.record.v1";
    j["sample_id"] = record.sample_id;
    j["method"] = record.method;
    j["keep_rate"] = record.keep_rate;
    j["grid"] = {{"h", record.grid.h}, {"w", record.grid.w}};
    j["total_blocks"] = record.total_blocks;
    j["stage_blocks"] = record.stage_blocks;
    json stages = json::array();
    for (const StageRecord& stage : record.stages) {
        json s;
        s["kind"] = stage_kind_name(stage.kind);
        s["kept"] = stage.kept;
        s["clusters"] = stage.clusters;
        if (stage.kind == StageKind::hard_merged) s["assignment"] = stage.assignment;
        if (stage.kind == StageKind::soft_merged) s["weights"] = matrix_to_json(stage.weights);
        stages.push_back(std::move(s));
    }
    j["stages"] = std::move(stages);
    j["depth"] = record_depth(record);
    return j;
}

ReductionRecord record_from_json(const json& j) {
    ReductionRecord record;
    if (j.value("schema", "") != "tokred.record.v1")
        throw Error::data("not a tokred.record.v1 document");
    record.sample_id = j.at("sample_id").get<int>();
    record.method = j.at("method").get<std::string>();
    record.keep_rate = j.at("keep_rate").get<double>();
    record.grid.h = j.at("grid").at("h").get<int>();
    record.grid.w = j.at("grid").at("w").get<int>();
    record.total_blocks = j.at("total_blocks").get<int>();
    record.stage_blocks = j.at("stage_blocks").get<std::vector<int>>();
    for (const json& s : j.at("stages")) {
        StageRecord stage;
        stage.kind = stage_kind_from_name(s.at("kind").get<std::string>());
        stage.kept = s.at("kept").get<std::vector<int>>();
        stage.clusters = s.value("clusters", 0);
        if (stage.kind == StageKind::hard_merged)
            stage.assignment = s.at("assignment").get<std::vector<int>>();
        if (stage.kind == StageKind::soft_merged) stage.weights = matrix_from_json(s.at("weights"));
        record.stages.push_back(std::move(stage));
    }
    return record;
}

json depth_map_to_json(const DepthMap& map) {
    json j;
    j["schema"] = "tokred.depthmap.v1";
    j["grid"] = {{"h", map.grid.h}, {"w", map.grid.w}};
    j["total_blocks"] = map.total_blocks;
    j["mean_depth"] = std::vector<double>(map.mean_depth.data(),
                                          map.mean_depth.data() + map.mean_depth.size());
    return j;
}

DepthMap depth_map_from_json(const json& j) {
    if (j.value("schema", "") != "tokred.depthmap.v1")
        throw Error::data("not a tokred.depthmap.v1 document");
    DepthMap map;
    map.grid.h = j.at("grid").at("h").get<int>();
    map.grid.w = j.at("grid").at("w").get<int>();
    map.total_blocks = j.at("total_blocks").get<int>();
    const auto values = j.at("mean_depth").get<std::vector<double>>();
    if (static_cast<int>(values.size()) != map.grid.count())
        throw Error::data("depth map length does not match its grid");
    map.mean_depth = Eigen::Map<const Vector>(values.data(), values.size());
    return map;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error::data("cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw Error::data("short write to '" + path + "'");
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error::data("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw Error::data("invalid JSON in '" + path + "': " + e.what());
    }
    return j;
}

} // namespace tokred::io
