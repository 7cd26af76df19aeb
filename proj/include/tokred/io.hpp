#pragma once

#include "tokred/types.hpp"

#include <json.hpp>

#include <string>

namespace tokred::io {

// TOKD1 binary dump: magic "TOKD1", then P, D, H, W as unsigned 32-bit
// little-endian, then (P+1)*D little-endian float32 values, CLS row first.
// Plain matrices (query banks, probe/feature matrices) reuse the format
// with H = W = 0 and a zero CLS row.
void write_tokens(const std::string& path, const TokenSet& tokens);
TokenSet read_tokens(const std::string& path);

void write_matrix(const std::string& path, const Matrix& rows);
Matrix read_matrix(const std::string& path);

nlohmann::json record_to_json(const ReductionRecord& record);
ReductionRecord record_from_json(const nlohmann::json& j);

nlohmann::json depth_map_to_json(const DepthMap& map);
DepthMap depth_map_from_json(const nlohmann::json& j);

// Canonical form: sorted keys, two-space indent, trailing newline.
void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

} // namespace tokred::io
