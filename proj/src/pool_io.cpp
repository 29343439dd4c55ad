#include "crb/pool_io.hpp"

#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "crb/error.hpp"

namespace crb {

using nlohmann::json;
using nlohmann::ordered_json;

namespace detail {

struct PoolCodec {
  static std::optional<std::int64_t> gt(const PoolRecord& r) { return r.gt_box_count(GroundTruthKey{}); }

  static ordered_json encode(const PoolRecord& r) {
    ordered_json doc;
    doc["cloud_id"] = r.cloud_id();
    ordered_json boxes = ordered_json::array();
    for (const BoxPrediction& b : r.boxes()) {
      ordered_json jb;
      jb["class_id"] = b.class_id;
      jb["confidence"] = b.confidence;
      jb["box7"] = b.box7;
      jb["point_density"] = b.point_density;
      boxes.push_back(std::move(jb));
    }
    doc["boxes"] = std::move(boxes);
    if (const auto& mc = r.mc_passes()) {
      ordered_json passes = ordered_json::array();
      for (std::size_t m = 0; m < mc->passes(); ++m) {
        ordered_json pass = ordered_json::array();
        for (std::size_t b = 0; b < mc->boxes(); ++b) {
          const auto coords = mc->box(m, b);
          pass.push_back(ordered_json(std::vector<double>(coords.begin(), coords.end())));
        }
        passes.push_back(std::move(pass));
      }
      doc["mc_passes"] = std::move(passes);
    }
    if (const auto& g = r.gradient_embedding()) doc["gradient_embedding"] = *g;
    if (const auto gt_count = gt(r)) doc["gt_box_count"] = *gt_count;
    return doc;
  }
};

}  // namespace detail

namespace {

[[noreturn]] void malformed(const std::string& what) { throw ParseError(0, what); }

double as_number(const json& v, const char* field) {
  if (!v.is_number()) malformed(std::string("field '") + field + "' must be a number");
  return v.get<double>();
}

std::int64_t as_integer(const json& v, const char* field) {
  if (!v.is_number_integer()) malformed(std::string("field '") + field + "' must be an integer");
  return v.get<std::int64_t>();
}

const json& as_array(const json& v, const char* field) {
  if (!v.is_array()) malformed(std::string("field '") + field + "' must be an array");
  return v;
}

BoxPrediction decode_box(const json& jb) {
  if (!jb.is_object()) malformed("box entries must be objects");
  for (const auto& [key, _] : jb.items()) {
    if (key != "class_id" && key != "confidence" && key != "box7" && key != "point_density") {
      malformed("unknown box field '" + key + "'");
    }
  }
  for (const char* required : {"class_id", "confidence", "box7", "point_density"}) {
    if (!jb.contains(required)) malformed(std::string("box is missing field '") + required + "'");
  }
  BoxPrediction b;
  const std::int64_t cls = as_integer(jb["class_id"], "class_id");
  if (cls < 0 || cls > std::numeric_limits<int>::max()) malformed("class_id out of range");
  b.class_id = static_cast<int>(cls);
  b.confidence = as_number(jb["confidence"], "confidence");
  const json& box7 = as_array(jb["box7"], "box7");
  if (box7.size() != kBoxDims) {
    throw SchemaError("box7 must hold exactly 7 numbers, got " + std::to_string(box7.size()));
  }
  for (std::size_t k = 0; k < kBoxDims; ++k) b.box7[k] = as_number(box7[k], "box7");
  b.point_density = as_number(jb["point_density"], "point_density");
  return b;
}

PoolRecord decode_record(const json& doc) {
  if (!doc.is_object()) malformed("record must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (key != "cloud_id" && key != "boxes" && key != "mc_passes" &&
        key != "gradient_embedding" && key != "gt_box_count") {
      malformed("unknown record field '" + key + "'");
    }
  }
  if (!doc.contains("cloud_id") || !doc["cloud_id"].is_string()) {
    malformed("field 'cloud_id' must be a string");
  }
  if (!doc.contains("boxes")) malformed("record is missing field 'boxes'");

  std::vector<BoxPrediction> boxes;
  for (const json& jb : as_array(doc["boxes"], "boxes")) boxes.push_back(decode_box(jb));

  std::optional<McPasses> mc;
  if (doc.contains("mc_passes")) {
    const json& passes = as_array(doc["mc_passes"], "mc_passes");
    std::vector<double> values;
    values.reserve(passes.size() * boxes.size() * kBoxDims);
    for (const json& pass : passes) {
      as_array(pass, "mc_passes");
      if (pass.size() != boxes.size()) {
        throw SchemaError("mc_passes pass covers " + std::to_string(pass.size()) +
                          " boxes, record has " + std::to_string(boxes.size()));
      }
      for (const json& coords : pass) {
        as_array(coords, "mc_passes");
        if (coords.size() != kBoxDims) throw SchemaError("mc_passes entries must hold 7 numbers");
        for (const json& v : coords) values.push_back(as_number(v, "mc_passes"));
      }
    }
    mc = McPasses(passes.size(), boxes.size(), std::move(values));
  }

  std::optional<std::vector<double>> embedding;
  if (doc.contains("gradient_embedding")) {
    std::vector<double> g;
    for (const json& v : as_array(doc["gradient_embedding"], "gradient_embedding")) {
      g.push_back(as_number(v, "gradient_embedding"));
    }
    embedding = std::move(g);
  }

  std::optional<std::int64_t> gt;
  if (doc.contains("gt_box_count")) gt = as_integer(doc["gt_box_count"], "gt_box_count");

  return PoolRecord(doc["cloud_id"].get<std::string>(), std::move(boxes), std::move(mc),
                    std::move(embedding), gt);
}

// Re-throws a data error with the line number attached, keeping its type.
[[noreturn]] void rethrow_at(std::size_t line) {
  const std::string prefix = "line " + std::to_string(line) + ": ";
  try {
    throw;
  } catch (const ParseError& e) {
    if (e.line()) throw;
    throw ParseError(line, e.what());
  } catch (const SchemaError& e) {
    throw SchemaError(prefix + e.what());
  } catch (const IntegrityError& e) {
    throw IntegrityError(prefix + e.what());
  }
}

}  // namespace

std::vector<PoolRecord> parse_pool(std::istream& in, const PoolSchema& schema) {
  std::vector<PoolRecord> out;
  std::unordered_set<std::string> ids;
  PoolSchema running = schema;
  std::optional<std::size_t> dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      json doc;
      try {
        doc = json::parse(line);
      } catch (const json::exception& e) {
        throw ParseError(0, std::string("malformed JSON: ") + e.what());
      }
      PoolRecord rec = decode_record(doc);
      if (!ids.insert(rec.cloud_id()).second) {
        throw IntegrityError("duplicate cloud_id '" + rec.cloud_id() + "'");
      }
      // Per-line pool checks so errors point at the offending line.
      if (rec.mc_passes() && !running.mc_passes) running.mc_passes = rec.mc_passes()->passes();
      if (rec.gradient_embedding()) {
        const std::size_t d = rec.gradient_embedding()->size();
        if (!dim) dim = d;
        if (d != *dim) {
          throw SchemaError("gradient_embedding has dimension " + std::to_string(d) +
                            ", expected " + std::to_string(*dim));
        }
      }
      const PoolRecord single[] = {rec};
      validate_pool(single, running);
      out.push_back(std::move(rec));
    } catch (const DataError&) {
      rethrow_at(line_no);
    }
  }
  return out;
}

std::vector<PoolRecord> read_pool_file(const std::filesystem::path& path,
                                       const PoolSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pool file '" + path.string() + "'");
  return parse_pool(in, schema);
}

std::string serialize_record(const PoolRecord& record) {
  return detail::PoolCodec::encode(record).dump();
}

void write_pool(std::ostream& out, std::span<const PoolRecord> pool) {
  for (const PoolRecord& r : pool) out << serialize_record(r) << '\n';
}

void write_pool_file(const std::filesystem::path& path, std::span<const PoolRecord> pool) {
  std::ostringstream buf;
  write_pool(buf, pool);
  write_text_file(path, buf.str());
}

ordered_json selection_to_json(const SelectionRound& round) {
  ordered_json doc;
  doc["round_index"] = round.round_index;
  doc["selected_ids"] = round.selected_ids;
  doc["stage_sizes"] = round.stage_sizes;
  doc["boxes_annotated_cumulative"] = round.boxes_annotated_cumulative;
  ordered_json diag = ordered_json::object();
  for (const auto& [name, value] : round.diagnostics) diag[name] = value;
  doc["diagnostics"] = std::move(diag);
  return doc;
}

SelectionRound selection_from_json(const json& doc) {
  SelectionRound r;
  try {
    if (!doc.is_object()) malformed("selection document must be an object");
    const std::int64_t idx = as_integer(doc.at("round_index"), "round_index");
    if (idx < 0) malformed("round_index must be nonnegative");
    r.round_index = static_cast<std::size_t>(idx);
    for (const json& id : as_array(doc.at("selected_ids"), "selected_ids")) {
      if (!id.is_string()) malformed("selected_ids entries must be strings");
      r.selected_ids.push_back(id.get<std::string>());
    }
    const json& sizes = as_array(doc.at("stage_sizes"), "stage_sizes");
    if (sizes.size() != 3) malformed("stage_sizes must hold three integers");
    for (std::size_t i = 0; i < 3; ++i) {
      const std::int64_t s = as_integer(sizes[i], "stage_sizes");
      if (s < 0) malformed("stage_sizes must be nonnegative");
      r.stage_sizes[i] = static_cast<std::size_t>(s);
    }
    r.boxes_annotated_cumulative =
        as_integer(doc.at("boxes_annotated_cumulative"), "boxes_annotated_cumulative");
    const json& diag = doc.at("diagnostics");
    if (!diag.is_object()) malformed("diagnostics must be an object");
    for (const auto& [name, value] : diag.items()) {
      r.diagnostics[name] = as_number(value, "diagnostics");
    }
  } catch (const json::out_of_range& e) {
    malformed(std::string("selection document is missing a field: ") + e.what());
  }
  r.validate();
  return r;
}

std::string write_selection(const SelectionRound& round) {
  return selection_to_json(round).dump(2) + "\n";
}

SelectionRound parse_selection(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("malformed selection JSON: ") + e.what());
  }
  return selection_from_json(doc);
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace crb
