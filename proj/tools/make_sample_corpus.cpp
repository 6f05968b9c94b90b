// Generates the bundled synthetic corpora: pseudo-agglutinative sentences
// built from a fixed morpheme inventory with Zipfian sampling. Deterministic
// for a given seed, so the files can be regenerated bit-identically.
//
// Usage: make_sample_corpus <output.txt> [--lines N] [--seed S] [--variant 0|1]

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "salm/rng.hpp"

namespace {

struct Inventory {
  std::vector<std::string> prefixes;
  std::vector<std::string> roots;
  std::vector<std::string> suffixes;
};

Inventory variant_inventory(int variant) {
  if (variant == 0) {
    return {
        {"u", "um", "aba", "isi", "izi", "uku", "kwa", "nga", "ba", "zi", "si", "ku", "e", "o"},
        {"ntu", "fund", "hamb", "sebenz", "thand", "bon", "phil", "khulum", "cul", "lal", "vak",
         "gijim", "zam", "dl", "hlal", "qond", "fik", "siz"},
        {"a", "ile", "eni", "ela", "isa", "wa", "ana", "eka", "o", "isisa", "elan"},
    };
  }
  return {
      {"le", "di", "go", "mo", "se", "ba", "bo", "ma", "ga", "re", "ke", "tl"},
      {"rat", "bon", "sepel", "rut", "bolel", "dir", "agel", "tsen", "phel", "bin", "nyak",
       "fihl", "thus", "gopol"},
      {"a", "ile", "ego", "wa", "ana", "isa", "e", "ong", "eng"},
  };
}

// Zipf-ish index: heavy head, long tail.
std::size_t zipf_pick(salm::RngStream& rng, std::size_t n) {
  const double u = rng.next_double();
  const double x = std::pow(u, 2.2);  // skew toward 0
  std::size_t idx = static_cast<std::size_t>(x * static_cast<double>(n));
  return idx >= n ? n - 1 : idx;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr,
                 "usage: make_sample_corpus <output.txt> [--lines N] [--seed S] [--variant 0|1]\n");
    return 2;
  }
  const std::string output = argv[1];
  long long lines = 6000;
  std::uint64_t seed = 42;
  int variant = 0;
  for (int i = 2; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--lines") == 0) lines = std::atoll(argv[i + 1]);
    else if (std::strcmp(argv[i], "--seed") == 0) seed = std::strtoull(argv[i + 1], nullptr, 10);
    else if (std::strcmp(argv[i], "--variant") == 0) variant = std::atoi(argv[i + 1]);
  }

  const Inventory inv = variant_inventory(variant);
  salm::RngStream rng(seed + static_cast<std::uint64_t>(variant) * 1000003ULL);
  std::ofstream out(output, std::ios::binary);
  if (!out) {
    std::fprintf(stderr, "cannot write %s\n", output.c_str());
    return 3;
  }
  for (long long li = 0; li < lines; ++li) {
    const int words = 4 + static_cast<int>(rng.next_double() * 9.0);
    std::string line;
    for (int w = 0; w < words; ++w) {
      if (w) line += ' ';
      line += inv.prefixes[zipf_pick(rng, inv.prefixes.size())];
      line += inv.roots[zipf_pick(rng, inv.roots.size())];
      line += inv.suffixes[zipf_pick(rng, inv.suffixes.size())];
      // Occasional compound, mimicking conjunctive orthography.
      if (rng.next_bernoulli(0.2)) {
        line += inv.prefixes[zipf_pick(rng, inv.prefixes.size())];
        line += inv.roots[zipf_pick(rng, inv.roots.size())];
        line += inv.suffixes[zipf_pick(rng, inv.suffixes.size())];
      }
    }
    out << line << '\n';
  }
  return 0;
}
