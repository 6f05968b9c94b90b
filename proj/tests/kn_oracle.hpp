#pragma once

// Step-by-step modified Kneser-Ney reference for the tests. Counting walks
// the padded streams with plain nested loops into ordered maps, and the
// probability is computed by direct recursion over the interpolation
// formulas each call - no backoff tables, nothing shared with the production
// implementation.

#include <array>
#include <map>
#include <vector>

#include "salm/bpe.hpp"
#include "salm/ngram.hpp"

namespace salm::testing {

class KnOracle {
 public:
  KnOracle(const std::vector<TokenSequence>& sequences, int order, int vocab_size)
      : order_(order), vocab_(vocab_size), raw_(order + 1), cont_(order + 1) {
    for (const auto& seq : sequences) {
      std::vector<int> padded(order - 1, kBosId);
      padded.insert(padded.end(), seq.ids.begin(), seq.ids.end());
      for (std::size_t end = static_cast<std::size_t>(order - 1); end < padded.size(); ++end) {
        for (int k = 1; k <= order; ++k) {
          const std::vector<int> gram(padded.begin() + (end - k + 1), padded.begin() + end + 1);
          ++raw_[k][gram];
        }
      }
    }
    for (int k = 1; k < order; ++k) {
      for (const auto& [gram, c] : raw_[k + 1]) {
        ++cont_[k][std::vector<int>(gram.begin() + 1, gram.end())];
      }
    }
    for (int k = 1; k <= order; ++k) discounts_.push_back(order_discounts(k));
  }

  double prob(const std::vector<int>& context, int w) const {
    const int len = std::min<int>(static_cast<int>(context.size()), order_ - 1);
    return prob_rec(std::vector<int>(context.end() - len, context.end()), w);
  }

  double log2_prob(const std::vector<int>& context, int w) const {
    return std::log2(prob(context, w));
  }

  double score(const TokenSequence& seq) const {
    std::vector<int> context(order_ > 1 ? order_ - 1 : 0, kBosId);
    double total = 0.0;
    for (int id : seq.ids) {
      total += log2_prob(context, id);
      if (!context.empty()) {
        context.erase(context.begin());
        context.push_back(id);
      }
    }
    return total;
  }

  /// Raw counts, for cross-checking count_ngrams.
  const std::map<std::vector<int>, long long>& raw_counts(int k) const { return raw_[k]; }

 private:
  long long eff(int k, const std::vector<int>& gram) const {
    const auto& table = (k == order_ || gram.front() == kBosId) ? raw_[k] : cont_[k];
    const auto it = table.find(gram);
    return it == table.end() ? 0 : it->second;
  }

  std::array<double, 3> order_discounts(int k) const {
    long long n[5] = {0, 0, 0, 0, 0};
    for (const auto& [gram, unused] : raw_[k]) {
      const long long c = eff(k, gram);
      if (c >= 1 && c <= 4) ++n[c];
    }
    if (n[1] > 0 && n[2] > 0 && n[3] > 0 && n[4] > 0) {
      const double y = double(n[1]) / (double(n[1]) + 2.0 * double(n[2]));
      std::array<double, 3> d{1.0 - 2.0 * y * n[2] / n[1], 2.0 - 3.0 * y * n[3] / n[2],
                              3.0 - 4.0 * y * n[4] / n[3]};
      bool positive = true;
      for (double& v : d) {
        if (v < 0.0) v = 0.0;
        positive = positive && v > 0.0;
      }
      if (positive) return d;
    }
    return {0.75, 0.75, 0.75};
  }

  double discount_of(int k, long long c) const {
    const auto& d = discounts_[k - 1];
    const double raw = c == 1 ? d[0] : (c == 2 ? d[1] : d[2]);
    return std::min(raw, double(c));
  }

  double prob_rec(const std::vector<int>& context, int w) const {
    const int k = static_cast<int>(context.size()) + 1;
    if (k == 1) {
      double denom = 0.0, held_mass = 0.0;
      for (const auto& [gram, unused] : raw_[1]) {
        const long long c = eff(1, gram);
        denom += double(c);
        held_mass += discount_of(1, c);
      }
      const double gamma = held_mass / denom;
      const long long cw = eff(1, {w});
      const double held = cw > 0 ? (double(cw) - discount_of(1, cw)) / denom : 0.0;
      return held + gamma / double(vocab_);
    }
    double denom = 0.0, held_mass = 0.0;
    long long c_hw = 0;
    for (const auto& [gram, unused] : raw_[k]) {
      if (!std::equal(context.begin(), context.end(), gram.begin())) continue;
      const long long c = eff(k, gram);
      denom += double(c);
      held_mass += discount_of(k, c);
      if (gram.back() == w) c_hw = c;
    }
    const std::vector<int> shorter(context.begin() + 1, context.end());
    if (denom == 0.0) return prob_rec(shorter, w);  // unseen context: no mass held
    const double held = c_hw > 0 ? (double(c_hw) - discount_of(k, c_hw)) / denom : 0.0;
    return held + (held_mass / denom) * prob_rec(shorter, w);
  }

  int order_;
  int vocab_;
  std::vector<std::map<std::vector<int>, long long>> raw_;   // raw_[k]
  std::vector<std::map<std::vector<int>, long long>> cont_;  // cont_[k], k < order
  std::vector<std::array<double, 3>> discounts_;
};

}  // namespace salm::testing
