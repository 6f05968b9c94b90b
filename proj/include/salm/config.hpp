#pragma once

#include <optional>
#include <string>
#include <vector>

namespace salm {

/// Plain sectioned key=value experiment configuration. Recipes stay diffable
/// text; parse -> emit -> parse is a fixed point.
struct ExperimentConfig {
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  std::vector<Section> sections;

  const std::string* find(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long long get_int(const std::string& section, const std::string& key, long long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  void set(const std::string& section, const std::string& key, const std::string& value);
};

/// `#` starts a comment; duplicate keys keep the last value and add a
/// warning. Malformed lines raise DataError with the line number.
ExperimentConfig parse_config(const std::string& text, const std::string& origin,
                              std::vector<std::string>* warnings = nullptr);

std::string emit_config(const ExperimentConfig& config);

/// Rejects unknown sections/keys and checks basic value sanity without
/// touching the filesystem.
void validate_config(const ExperimentConfig& config);

}  // namespace salm
