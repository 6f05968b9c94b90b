#include "salm/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "salm/error.hpp"
#include "salm/experiment.hpp"

using namespace salm;

TEST_CASE("parse_config handles sections, comments and values") {
  const ExperimentConfig c = parse_config("[model]\narch=qrnn\n", "mem");
  REQUIRE(c.sections.size() == 1);
  CHECK(c.sections[0].name == "model");
  REQUIRE(c.sections[0].entries.size() == 1);
  CHECK(c.get_or("model", "arch", "") == "qrnn");

  const ExperimentConfig d =
      parse_config("# leading comment\n[train]\nlr = 0.5  # trailing\n\n", "mem");
  CHECK(d.get_double("train", "lr", 0.0) == doctest::Approx(0.5));
}

TEST_CASE("duplicate keys warn and keep the last value") {
  std::vector<std::string> warnings;
  const ExperimentConfig c = parse_config("[train]\nlr=1\nlr=2\n", "mem", &warnings);
  CHECK(c.get_or("train", "lr", "") == "2");
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("duplicate key 'lr'") != std::string::npos);
}

TEST_CASE("parse errors carry line numbers") {
  try {
    parse_config("[model]\narch qrnn\n", "conf");
    FAIL("expected parse error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("conf:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("key=value\n", "conf"), DataError);  // outside a section
  CHECK_THROWS_AS(parse_config("[broken\n", "conf"), DataError);
}

TEST_CASE("parse -> emit -> parse is a fixed point") {
  const std::string canonical =
      "[corpus]\n"
      "inputs=data/sample_a.txt\n"
      "split=80,10,10\n"
      "\n"
      "[tokenizer]\n"
      "vocab_size=512\n"
      "\n"
      "[model]\n"
      "arch=ngram\n"
      "order=4\n";
  CHECK(emit_config(parse_config(canonical, "mem")) == canonical);

  const std::string messy = "[model]  \n arch = qrnn # pick\n\narch=lstm\n";
  const std::string once = emit_config(parse_config(messy, "mem"));
  const std::string twice = emit_config(parse_config(once, "mem"));
  CHECK(once == twice);
  CHECK(once.find("arch=lstm") != std::string::npos);
}

TEST_CASE("validate_config rejects unknown keys and sections") {
  const std::string good =
      "[corpus]\ninputs=x.txt\n[tokenizer]\nvocab_size=100\n[model]\narch=lstm\n";
  CHECK_NOTHROW(validate_config(parse_config(good, "mem")));

  CHECK_THROWS_AS(validate_config(parse_config("[model]\narch=lstm\nfrobnicate=1\n", "mem")),
                  ConfigError);
  CHECK_THROWS_AS(validate_config(parse_config("[nonsense]\nx=1\n", "mem")), ConfigError);
  CHECK_THROWS_AS(
      validate_config(parse_config("[corpus]\ninputs=x\n[model]\narch=elman\n", "mem")),
      ConfigError);
  const std::string no_inputs = "[tokenizer]\nvocab_size=100\n[model]\narch=lstm\n";
  CHECK_THROWS_AS(validate_config(parse_config(no_inputs, "mem")), ConfigError);
}

TEST_CASE("parse_split accepts percentages and fractions") {
  const auto pct = parse_split("80,10,10");
  CHECK(pct[0] == doctest::Approx(0.8));
  CHECK(pct[2] == doctest::Approx(0.1));
  const auto frac = parse_split("0.7,0.2,0.1");
  CHECK(frac[0] == doctest::Approx(0.7));
  CHECK_THROWS_AS(parse_split("80,20"), ConfigError);
  CHECK_THROWS_AS(parse_split("a,b,c"), ConfigError);
}

TEST_CASE("every bundled recipe parses and validates without execution") {
  namespace fs = std::filesystem;
  const fs::path dir(SALM_RECIPE_DIR);
  REQUIRE(fs::exists(dir));
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".conf") continue;
    std::ifstream in(entry.path());
    std::ostringstream buf;
    buf << in.rdbuf();
    INFO("recipe ", entry.path().string());
    CHECK_NOTHROW(validate_config(parse_config(buf.str(), entry.path().string())));
    ++seen;
  }
  CHECK(seen >= 6);  // n-gram, ffnn, awd-lstm, qrnn, transformer, multilingual
}
