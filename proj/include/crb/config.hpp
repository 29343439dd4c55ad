#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crb/harness.hpp"

namespace crb {

// Flat "key = value" file. '#' starts a comment; blank lines are ignored.
// Duplicate keys are rejected.
class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);  // command-line override, line 0
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }
  const std::string& source() const noexcept { return source_; }

 private:
  std::string source_;
  std::map<std::string, Entry> entries_;
};

// Builds the loop configuration; throws ConfigError naming the source line
// and key for unknown keys and malformed or out-of-range values. Scene keys
// left unset take SceneSpec::defaults(num_classes).
harness::LoopConfig loop_config_from(const KeyValueConfig& kv);

// Scene generator settings alone (the gen command's --spec file). Keys other
// than scene keys and num_classes are rejected.
harness::SceneSpec scene_spec_from(const KeyValueConfig& kv);

}  // namespace crb
