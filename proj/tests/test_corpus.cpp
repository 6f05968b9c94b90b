#include "salm/corpus.hpp"

#include <numeric>

#include "doctest.h"
#include "salm/error.hpp"
#include "salm/rng.hpp"

using namespace salm;

namespace {

RawCorpus corpus_of(std::vector<std::string> lines) {
  RawCorpus c;
  c.lines = std::move(lines);
  c.source_name = "test";
  return c;
}

}  // namespace

TEST_CASE("clean_text drops tag lines and duplicates, keeps order") {
  const RawCorpus raw = corpus_of({"Umuntu ngumuntu", "<div class=x>", "Umuntu ngumuntu"});
  const RawCorpus cleaned = clean_text(raw);
  REQUIRE(cleaned.lines.size() == 1);
  CHECK(cleaned.lines[0] == "Umuntu ngumuntu");
}

TEST_CASE("clean_text normalizes whitespace") {
  const RawCorpus cleaned = clean_text(corpus_of({"  a   b  "}));
  REQUIRE(cleaned.lines.size() == 1);
  CHECK(cleaned.lines[0] == "a b");
}

TEST_CASE("clean_text on synthetic file with 100 html lines keeps the other 900") {
  // Independent line filter: lines are constructed so that exactly the
  // inserted tag lines are dropped (no duplicates among the survivors).
  std::vector<std::string> lines;
  int html = 0;
  for (int i = 0; i < 1000; ++i) {
    if (i % 10 == 3 && html < 100) {
      lines.push_back("<td class=c" + std::to_string(i) + "></td>");
      ++html;
    } else {
      lines.push_back("isibonelo senkulumo nombolo " + std::to_string(i));
    }
  }
  REQUIRE(html == 100);
  const RawCorpus cleaned = clean_text(corpus_of(lines));
  CHECK(cleaned.lines.size() == 900);
}

TEST_CASE("clean_text drops empties and script-like lines, is idempotent") {
  const RawCorpus raw = corpus_of({
      "sentence one",
      "   ",
      "window.location = redirect();",
      "sentence  two",
  });
  const RawCorpus cleaned = clean_text(raw);
  REQUIRE(cleaned.lines.size() == 2);
  CHECK(cleaned.lines[1] == "sentence two");
  const RawCorpus again = clean_text(cleaned);
  CHECK(again.lines == cleaned.lines);
}

TEST_CASE("clean_text rejects invalid utf-8 with the byte offset") {
  CHECK_THROWS_AS(clean_text(corpus_of({std::string("ab\xFFzz")})), DataError);
}

TEST_CASE("split_corpus sequential blocks") {
  std::vector<std::string> ten;
  for (int i = 1; i <= 10; ++i) ten.push_back("line " + std::to_string(i));
  const CorpusSplit s = split_corpus(corpus_of(ten), {0.8, 0.1, 0.1});
  CHECK(s.train.lines.size() == 8);
  CHECK(s.valid.lines.size() == 1);
  CHECK(s.test.lines.size() == 1);
  CHECK(s.train.lines.front() == "line 1");
  CHECK(s.valid.lines.front() == "line 9");
  CHECK(s.test.lines.front() == "line 10");
}

TEST_CASE("split_corpus sizes: floor arithmetic, remainder to test") {
  std::vector<std::string> lines;
  for (int i = 0; i < 1000; ++i) lines.push_back("l" + std::to_string(i));
  auto s = split_corpus(corpus_of(lines), {0.8, 0.1, 0.1});
  CHECK(s.train.lines.size() == 800);
  CHECK(s.valid.lines.size() == 100);
  CHECK(s.test.lines.size() == 100);

  lines.resize(997);
  s = split_corpus(corpus_of(lines), {0.8, 0.1, 0.1});
  CHECK(s.train.lines.size() == 797);
  CHECK(s.valid.lines.size() == 99);
  CHECK(s.test.lines.size() == 101);
}

TEST_CASE("split_corpus reassembly property over random sizes and ratios") {
  RngStream rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 10 + static_cast<int>(rng.next_double() * 500);
    std::vector<std::string> lines;
    for (int i = 0; i < n; ++i) lines.push_back("s" + std::to_string(i));
    const double a = 0.5 + rng.next_double() * 0.3;
    const double b = (1.0 - a) * (0.3 + 0.4 * rng.next_double());
    const std::array<double, 3> ratios{a, b, 1.0 - a - b};
    CorpusSplit s;
    try {
      s = split_corpus(corpus_of(lines), ratios);
    } catch (const DataError&) {
      continue;  // degenerate split for this n; the error is the contract
    }
    std::vector<std::string> rejoined = s.train.lines;
    rejoined.insert(rejoined.end(), s.valid.lines.begin(), s.valid.lines.end());
    rejoined.insert(rejoined.end(), s.test.lines.begin(), s.test.lines.end());
    CHECK(rejoined == lines);
  }
}

TEST_CASE("split_corpus validates inputs") {
  std::vector<std::string> lines(20, "x");
  CHECK_THROWS_AS(split_corpus(corpus_of(lines), {0.5, 0.3, 0.1}), ConfigError);
  CHECK_THROWS_AS(split_corpus(corpus_of({"a", "b"}), {0.8, 0.1, 0.1}), DataError);
  // 10 lines at 98/1/1 percent leaves an empty valid set.
  CHECK_THROWS_AS(split_corpus(corpus_of(lines), {0.98, 0.01, 0.01}), DataError);
}

TEST_CASE("concat_corpora keeps order and joins names") {
  const RawCorpus a = {{"a1", "a2", "a3"}, "A"};
  const RawCorpus b = {{"b1", "b2"}, "B"};
  const RawCorpus joined = concat_corpora({a, b});
  CHECK(joined.lines.size() == 5);
  CHECK(joined.lines.front() == "a1");
  CHECK(joined.lines.back() == "b2");
  CHECK(joined.source_name == "A+B");

  const RawCorpus solo = concat_corpora({a});
  CHECK(solo.lines == a.lines);

  std::vector<RawCorpus> group;
  for (const char* name : {"zu", "xh", "nr", "ss"}) {
    RawCorpus c;
    c.source_name = name;
    for (int i = 0; i < 100; ++i) c.lines.push_back(std::string(name) + std::to_string(i));
    group.push_back(std::move(c));
  }
  CHECK(concat_corpora(group).lines.size() == 400);
}

TEST_CASE("corpus_stats counts lines, words and chars") {
  const CorpusStats s = corpus_stats(corpus_of({"ab cd"}));
  CHECK(s.line_count == 1);
  CHECK(s.word_count == 2);
  CHECK(s.char_count == 6);  // five chars plus the terminator

  const CorpusStats empty = corpus_stats(corpus_of({}));
  CHECK(empty.line_count == 0);
  CHECK(empty.word_count == 0);
  CHECK(empty.char_count == 0);
}

TEST_CASE("stats additivity under concat") {
  const RawCorpus a = {{"one two", "three"}, "A"};
  const RawCorpus b = {{"four five six"}, "B"};
  const CorpusStats sa = corpus_stats(a);
  const CorpusStats sb = corpus_stats(b);
  const CorpusStats sc = corpus_stats(concat_corpora({a, b}));
  CHECK(sc.word_count == sa.word_count + sb.word_count);
  CHECK(sc.char_count == sa.char_count + sb.char_count);
  CHECK(sc.line_count == sa.line_count + sb.line_count);
}
