#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "salm/bpe.hpp"

namespace salm {

/// Context-only sentence-start symbol. Never predicted, never part of the
/// tokenizer vocabulary; appears only in n-gram contexts.
inline constexpr int kBosId = -1;

/// N-grams are packed 16 bits per token into a 128-bit key, which caps the
/// supported order at 8 and vocabulary at 65534 (BOS takes 0xFFFF).
using GramKey = unsigned __int128;

inline constexpr int kMaxNgramOrder = 8;
inline constexpr int kMaxNgramVocab = 0xFFFE;

struct GramKeyHash {
  std::size_t operator()(GramKey key) const {
    const auto lo = static_cast<std::uint64_t>(key);
    const auto hi = static_cast<std::uint64_t>(key >> 64);
    std::uint64_t h = lo * 0x9E3779B97F4A7C15ULL;
    h ^= (hi + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2));
    return static_cast<std::size_t>(h * 0xBF58476D1CE4E5B9ULL);
  }
};

template <typename V>
using GramMap = std::unordered_map<GramKey, V, GramKeyHash>;

GramKey pack_gram(std::span<const int> tokens);
std::vector<int> unpack_gram(GramKey key, int length);

/// Raw counts at every order plus continuation counts (distinct left
/// extensions) for the lower orders. Grams ending in BOS are never counted;
/// each line is padded with order-1 BOS symbols and ends with its EOS.
struct CountTable {
  int order = 0;
  int vocab_size = 0;            // predictable tokens: tokenizer vocab incl. UNK/EOS
  std::vector<GramMap<long long>> raw;   // [k-1]: k-gram -> count, k = 1..order
  std::vector<GramMap<long long>> cont;  // [k-1]: k-gram -> continuation count, k < order

  /// Count used by estimation at order k: raw at the top order and for
  /// BOS-initial grams (which have no meaningful left extension),
  /// continuation otherwise.
  long long effective(int k, GramKey key, std::span<const int> tokens) const;
};

CountTable count_ngrams(const std::vector<TokenSequence>& sequences, int order, int vocab_size);

/// Interpolated modified Kneser-Ney model. Stored probabilities already
/// include the interpolated lower-order mass; backoff weights are the
/// leftover discount mass of each observed context.
struct NGramModel {
  int order = 0;
  int vocab_size = 0;
  std::vector<GramMap<double>> log2_probs;     // [k-1]: k-gram -> log2 P(w | ctx)
  std::vector<GramMap<double>> log2_backoffs;  // [len-1]: context -> log2 backoff weight
  double log2_unseen_unigram = 0.0;            // tokens with no unigram entry
  std::vector<std::array<double, 3>> discounts;  // per order: D(1), D(2), D(3+)

  std::size_t gram_count(int k) const { return log2_probs[k - 1].size(); }
};

/// Three-discount estimation: Y = n1/(n1+2*n2), D(1) = 1-2Y*n2/n1,
/// D(2) = 2-3Y*n3/n2, D(3+) = 3-4Y*n4/n3, computed from the count-of-counts
/// of each order and clamped at zero. Orders with degenerate count-of-counts
/// (any of n1..n4 zero, or a clamped-to-zero discount) fall back to an
/// absolute discount of 0.75. The unigram level interpolates with 1/V.
NGramModel estimate_mkn(const CountTable& counts);

/// Interpolated-backoff conditional probability using the longest stored
/// suffix of `context`. Pure and reentrant.
double log2_prob(const NGramModel& model, std::span<const int> context, int w);

inline double log2_prob(const NGramModel& model, std::initializer_list<int> context, int w) {
  return log2_prob(model, std::span<const int>(context.begin(), context.size()), w);
}

/// Sum of log2_prob over every token of the sequence (EOS included), with
/// the context BOS-padded at the start.
double score_sequence(const NGramModel& model, const TokenSequence& seq);

void export_arpa(const NGramModel& model, const std::string& path);
std::string arpa_to_string(const NGramModel& model);
NGramModel import_arpa(const std::string& path);
NGramModel parse_arpa(const std::string& text, const std::string& origin);

}  // namespace salm
