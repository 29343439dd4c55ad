#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "crb/pool.hpp"

namespace crb {

// Pool files are JSON Lines: one record object per line. Blank lines and
// lines starting with '#' are skipped. Errors carry the 1-based line number:
// ParseError for malformed text, IntegrityError for duplicate ids and
// SchemaError for shape or range violations.
std::vector<PoolRecord> parse_pool(std::istream& in, const PoolSchema& schema = {});
std::vector<PoolRecord> read_pool_file(const std::filesystem::path& path,
                                       const PoolSchema& schema = {});

// One line of canonical JSON, without the trailing newline. Doubles are
// written in shortest round-trip form.
std::string serialize_record(const PoolRecord& record);
void write_pool(std::ostream& out, std::span<const PoolRecord> pool);
void write_pool_file(const std::filesystem::path& path, std::span<const PoolRecord> pool);

nlohmann::ordered_json selection_to_json(const SelectionRound& round);
SelectionRound selection_from_json(const nlohmann::json& doc);

// Canonical selection document followed by a newline.
std::string write_selection(const SelectionRound& round);
SelectionRound parse_selection(std::string_view text);

// Writes text to path, replacing any existing file. Throws std::runtime_error
// when the path cannot be opened.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace crb
