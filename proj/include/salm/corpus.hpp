#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace salm {

/// One cleaned or raw text corpus: UTF-8 lines, one sentence per line,
/// order preserved from the input file.
struct RawCorpus {
  std::vector<std::string> lines;
  std::string source_name;
};

/// Toggles for the line-dropping heuristics. Web-scraped corpora carry
/// markup and boilerplate; these filters are approximations with the
/// documented default thresholds.
struct CleaningConfig {
  bool drop_html = true;        // line is mostly <...> tag content
  bool drop_script = true;      // line looks like Javascript
  bool drop_duplicates = true;  // exact duplicate of an earlier line
  bool drop_empty = true;       // empty or whitespace-only
  double html_ratio = 0.1;      // fraction of characters inside tags
};

struct CorpusSplit {
  RawCorpus train;
  RawCorpus valid;
  RawCorpus test;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
};

struct CorpusStats {
  std::size_t line_count = 0;
  std::size_t word_count = 0;  // whitespace-delimited tokens
  std::size_t char_count = 0;  // Unicode scalars, one extra per line terminator
};

/// Reads a UTF-8 text file into lines (LF endings; a lone trailing CR per
/// line is stripped). Throws DataError on invalid UTF-8 or unreadable files.
RawCorpus load_corpus(const std::string& path, const std::string& source_name = "");

void save_corpus(const RawCorpus& corpus, const std::string& path);

/// Drops lines matching the enabled rules and normalizes whitespace on the
/// survivors (trim + collapse internal runs to single spaces). Line order is
/// preserved; per-line work runs in parallel, the duplicate scan is serial.
RawCorpus clean_text(const RawCorpus& raw, const CleaningConfig& rules = {});

/// Deterministic sequential block split. Train gets floor(r0*n) lines, valid
/// the next floor(r1*n), test the remainder.
CorpusSplit split_corpus(const RawCorpus& corpus, const std::array<double, 3>& ratios);

RawCorpus concat_corpora(const std::vector<RawCorpus>& corpora);

CorpusStats corpus_stats(const RawCorpus& corpus);

/// Single-line whitespace normalization used by clean_text; exposed for tests.
std::string normalize_whitespace(const std::string& line);

}  // namespace salm
