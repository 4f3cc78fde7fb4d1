// SPDX-License-Identifier: Apache-2.0
//
// Layered run configuration: built-in defaults, then a JSON file, then
// command-line overrides addressed by dotted key paths. Every leaf remembers
// which layer set it last.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "danet/train.hpp"

namespace danet {

enum class Source { default_value, file, flag };

/// "default", "file", "flag".
std::string source_name(Source s);

class RunConfig {
 public:
  /// Every recognised key with its default value.
  RunConfig();

  /// Merges a JSON object file. Unknown keys and type mismatches throw
  /// ConfigError naming the key; an unreadable or malformed file throws
  /// ConfigError keyed "config".
  void merge_file(const std::string& path);
  void merge_json(const nlohmann::json& doc, Source source);

  /// Sets one leaf from text. The text is read as JSON when it parses and
  /// matches the leaf's type, and as a string otherwise; comma-separated
  /// text is accepted for list leaves ("1,2,3").
  void set(const std::string& key, const std::string& value, Source source = Source::flag);

  bool has(const std::string& key) const;
  const nlohmann::json& get(const std::string& key) const;
  Source source(const std::string& key) const;
  /// Dotted keys in sorted order.
  std::vector<std::string> keys() const;

  /// Nested document of all current values.
  const nlohmann::json& document() const { return doc_; }
  std::string dump() const { return doc_.dump(2) + "\n"; }

  ModelConfig model() const;
  TrainConfig train() const;
  DataConfig data() const;

 private:
  nlohmann::json doc_;
  std::map<std::string, Source> sources_;
};

/// "1,2" or "[1,2]" → {1, 2}; throws ConfigError keyed `key` on bad input.
std::vector<double> parse_number_list(const std::string& key, const std::string& text);
/// "R,C" → (R, C).
std::pair<std::int64_t, std::int64_t> parse_point(const std::string& key, const std::string& text);

}  // namespace danet
