#include "salm/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "salm/error.hpp"

namespace salm {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

const std::unordered_map<std::string, std::unordered_set<std::string>>& key_registry() {
  static const std::unordered_map<std::string, std::unordered_set<std::string>> registry = {
      {"corpus", {"inputs", "target", "split", "clean"}},
      {"tokenizer", {"vocab_size"}},
      {"model",
       {"arch", "order", "emb_dim", "hidden_dim", "n_layers", "context_order", "n_heads",
        "tie_weights", "block_size", "bptt_len", "stride_train", "stride_eval", "dropout_input",
        "dropout_hidden", "dropout_output", "dropout_embedding", "dropout_weight",
        "dropout_attention", "ar_alpha", "tar_beta"}},
      {"train",
       {"lr", "batch_size", "max_steps", "max_epochs", "eval_interval", "patience", "clip_norm",
        "weight_decay", "variable_bptt", "chunk_len", "seed"}},
      {"eval", {"block", "stride"}},
  };
  return registry;
}

}  // namespace

const std::string* ExperimentConfig::find(const std::string& section,
                                          const std::string& key) const {
  for (const auto& s : sections) {
    if (s.name != section) continue;
    for (const auto& [k, v] : s.entries) {
      if (k == key) return &v;
    }
  }
  return nullptr;
}

std::string ExperimentConfig::get_or(const std::string& section, const std::string& key,
                                     const std::string& fallback) const {
  const std::string* v = find(section, key);
  return v ? *v : fallback;
}

double ExperimentConfig::get_double(const std::string& section, const std::string& key,
                                    double fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  char* end = nullptr;
  const double parsed = std::strtod(v->c_str(), &end);
  if (end == v->c_str() || *end != '\0') {
    throw ConfigError("[" + section + "] " + key + ": expected a number, got '" + *v + "'");
  }
  return parsed;
}

long long ExperimentConfig::get_int(const std::string& section, const std::string& key,
                                    long long fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const long long parsed = std::stoll(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("[" + section + "] " + key + ": expected an integer, got '" + *v + "'");
  }
}

bool ExperimentConfig::get_bool(const std::string& section, const std::string& key,
                                bool fallback) const {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "off") return false;
  throw ConfigError("[" + section + "] " + key + ": expected a boolean, got '" + *v + "'");
}

void ExperimentConfig::set(const std::string& section, const std::string& key,
                           const std::string& value) {
  for (auto& s : sections) {
    if (s.name != section) continue;
    for (auto& [k, v] : s.entries) {
      if (k == key) {
        v = value;
        return;
      }
    }
    s.entries.emplace_back(key, value);
    return;
  }
  sections.push_back({section, {{key, value}}});
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin,
                              std::vector<std::string>* warnings) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  ExperimentConfig::Section* current = nullptr;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw DataError(origin + ":" + std::to_string(line_no) + ": malformed section header '" +
                        line + "'");
      }
      config.sections.push_back({line.substr(1, line.size() - 2), {}});
      current = &config.sections.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(origin + ":" + std::to_string(line_no) +
                      ": expected 'key=value', got '" + line + "'");
    }
    if (!current) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": key outside any [section]");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    bool replaced = false;
    for (auto& [k, v] : current->entries) {
      if (k == key) {
        v = value;
        replaced = true;
        if (warnings) {
          warnings->push_back(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                              "' in [" + current->name + "], last value wins");
        }
        break;
      }
    }
    if (!replaced) current->entries.emplace_back(key, value);
  }
  return config;
}

std::string emit_config(const ExperimentConfig& config) {
  std::ostringstream out;
  for (std::size_t i = 0; i < config.sections.size(); ++i) {
    if (i) out << "\n";
    out << "[" << config.sections[i].name << "]\n";
    for (const auto& [k, v] : config.sections[i].entries) out << k << "=" << v << "\n";
  }
  return out.str();
}

void validate_config(const ExperimentConfig& config) {
  const auto& registry = key_registry();
  for (const auto& section : config.sections) {
    const auto it = registry.find(section.name);
    if (it == registry.end()) {
      throw ConfigError("unknown config section [" + section.name + "]");
    }
    for (const auto& [key, value] : section.entries) {
      if (!it->second.count(key)) {
        throw ConfigError("unknown key '" + key + "' in section [" + section.name + "]");
      }
      if (value.empty()) {
        throw ConfigError("empty value for key '" + key + "' in [" + section.name + "]");
      }
    }
  }
  if (!config.find("corpus", "inputs")) {
    throw ConfigError("config needs [corpus] inputs=...");
  }
  const std::string arch = config.get_or("model", "arch", "");
  if (arch.empty()) throw ConfigError("config needs [model] arch=...");
  const bool is_ngram = arch == "ngram";
  if (!is_ngram && arch != "ffnn" && arch != "lstm" && arch != "awd-lstm" && arch != "qrnn" &&
      arch != "transformer") {
    throw ConfigError("unknown [model] arch '" + arch + "'");
  }
  if (is_ngram) {
    const long long order = config.get_int("model", "order", 6);
    if (order < 1 || order > 8) throw ConfigError("[model] order must be in 1..8");
  }
  const long long vocab = config.get_int("tokenizer", "vocab_size", 512);
  if (vocab < 4) throw ConfigError("[tokenizer] vocab_size must be at least 4");
  // Split ratios: three comma-separated percentages or fractions.
  const std::string split = config.get_or("corpus", "split", "80,10,10");
  int commas = 0;
  for (char c : split) commas += c == ',' ? 1 : 0;
  if (commas != 2) throw ConfigError("[corpus] split must be three comma-separated numbers");
}

}  // namespace salm
