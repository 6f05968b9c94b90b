#include "salm/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "salm/error.hpp"
#include "salm/utf8.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace salm {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
}

// Fraction of characters that sit inside <...> tags, brackets included.
// A tag must close on the same line to count.
double html_tag_ratio(const std::string& line) {
  if (line.empty()) return 0.0;
  std::size_t tagged = 0;
  std::size_t i = 0;
  while (i < line.size()) {
    if (line[i] == '<') {
      const std::size_t close = line.find('>', i);
      if (close != std::string::npos) {
        tagged += close - i + 1;
        i = close + 1;
        continue;
      }
    }
    ++i;
  }
  // Byte ratio equals scalar ratio closely enough for a threshold test only
  // when the text is ASCII-heavy; count scalars to stay exact.
  const double total = static_cast<double>(utf8::count_scalars(line));
  if (total == 0.0) return 0.0;
  // tagged spans are pure ASCII (tags), so byte count == scalar count there.
  return static_cast<double>(tagged) / total;
}

const char* kScriptMarkers[] = {"<script", "</script", "javascript:", "function(",
                                "document.", "window.",  "();",         "=>"};

bool looks_like_script(const std::string& line) {
  for (const char* marker : kScriptMarkers) {
    if (line.find(marker) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

std::string normalize_whitespace(const std::string& line) {
  std::string out;
  out.reserve(line.size());
  bool in_word = false;
  for (char c : line) {
    if (is_space(c)) {
      in_word = false;
    } else {
      if (!in_word && !out.empty()) out.push_back(' ');
      out.push_back(c);
      in_word = true;
    }
  }
  return out;
}

RawCorpus load_corpus(const std::string& path, const std::string& source_name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path);
  RawCorpus corpus;
  corpus.source_name = source_name.empty() ? path : source_name;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    utf8::validate(line, path + ":" + std::to_string(line_no));
    corpus.lines.push_back(std::move(line));
  }
  return corpus;
}

void save_corpus(const RawCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file: " + path);
  for (const auto& line : corpus.lines) out << line << '\n';
}

RawCorpus clean_text(const RawCorpus& raw, const CleaningConfig& rules) {
  const std::size_t n = raw.lines.size();
  std::vector<std::string> normalized(n);
  std::vector<char> keep(n, 1);

  for (std::size_t i = 0; i < n; ++i) {
    utf8::validate(raw.lines[i], raw.source_name + " line " + std::to_string(i + 1));
  }

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    const std::string& line = raw.lines[i];
    bool drop = false;
    if (rules.drop_html && html_tag_ratio(line) > rules.html_ratio) drop = true;
    if (!drop && rules.drop_script && looks_like_script(line)) drop = true;
    std::string norm = normalize_whitespace(line);
    if (!drop && rules.drop_empty && norm.empty()) drop = true;
    normalized[i] = std::move(norm);
    keep[i] = drop ? 0 : 1;
  }

  RawCorpus out;
  out.source_name = raw.source_name;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    if (rules.drop_duplicates && !seen.insert(normalized[i]).second) continue;
    out.lines.push_back(normalized[i]);
  }
  return out;
}

CorpusSplit split_corpus(const RawCorpus& corpus, const std::array<double, 3>& ratios) {
  for (double r : ratios) {
    if (r <= 0.0) throw ConfigError("split ratios must be positive");
  }
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1, got " + std::to_string(sum));
  }
  const std::size_t total = corpus.lines.size();
  if (total < 10) {
    throw DataError("corpus has " + std::to_string(total) + " lines; need at least 10 to split");
  }
  // The 1e-9 nudge keeps ratios like 0.3 from flooring one short of the
  // exact product.
  const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * total + 1e-9));
  const auto n_valid = static_cast<std::size_t>(std::floor(ratios[1] * total + 1e-9));
  if (n_train + n_valid >= total || n_valid == 0) {
    throw DataError("split leaves an empty valid or test set");
  }

  CorpusSplit split;
  split.ratios = ratios;
  auto take = [&](std::size_t begin, std::size_t end, const char* tag) {
    RawCorpus part;
    part.source_name = corpus.source_name + ":" + tag;
    part.lines.assign(corpus.lines.begin() + begin, corpus.lines.begin() + end);
    return part;
  };
  split.train = take(0, n_train, "train");
  split.valid = take(n_train, n_train + n_valid, "valid");
  split.test = take(n_train + n_valid, total, "test");
  return split;
}

RawCorpus concat_corpora(const std::vector<RawCorpus>& corpora) {
  if (corpora.empty()) throw ConfigError("concat_corpora: no corpora given");
  RawCorpus out;
  std::string name;
  for (const auto& c : corpora) {
    out.lines.insert(out.lines.end(), c.lines.begin(), c.lines.end());
    if (!name.empty()) name += "+";
    name += c.source_name;
  }
  out.source_name = name;
  return out;
}

CorpusStats corpus_stats(const RawCorpus& corpus) {
  CorpusStats stats;
  stats.line_count = corpus.lines.size();
  for (const auto& line : corpus.lines) {
    stats.char_count += utf8::count_scalars(line) + 1;  // +1 for the terminator
    bool in_word = false;
    for (char c : line) {
      if (is_space(c)) {
        in_word = false;
      } else if (!in_word) {
        ++stats.word_count;
        in_word = true;
      }
    }
  }
  return stats;
}

}  // namespace salm
