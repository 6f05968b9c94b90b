#include "salm/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "salm/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace salm {

namespace {

constexpr std::uint64_t kBosCode = 0xFFFF;

std::uint64_t token_code(int id) {
  if (id == kBosId) return kBosCode;
  if (id < 0 || id > kMaxNgramVocab) {
    throw ConfigError("token id " + std::to_string(id) + " outside the packable range");
  }
  return static_cast<std::uint64_t>(id);
}

int code_token(std::uint64_t code) {
  return code == kBosCode ? kBosId : static_cast<int>(code);
}

constexpr double kLog2Of10 = 3.32192809488736234787;  // log2(10)

}  // namespace

GramKey pack_gram(std::span<const int> tokens) {
  GramKey key = 0;
  for (int t : tokens) key = (key << 16) | token_code(t);
  return key;
}

std::vector<int> unpack_gram(GramKey key, int length) {
  std::vector<int> tokens(length);
  for (int i = length - 1; i >= 0; --i) {
    tokens[i] = code_token(static_cast<std::uint64_t>(key & 0xFFFF));
    key >>= 16;
  }
  return tokens;
}

long long CountTable::effective(int k, GramKey key, std::span<const int> tokens) const {
  if (k == order || tokens.front() == kBosId) {
    const auto it = raw[k - 1].find(key);
    return it == raw[k - 1].end() ? 0 : it->second;
  }
  const auto it = cont[k - 1].find(key);
  return it == cont[k - 1].end() ? 0 : it->second;
}

CountTable count_ngrams(const std::vector<TokenSequence>& sequences, int order, int vocab_size) {
  if (order < 1 || order > kMaxNgramOrder) {
    throw ConfigError("n-gram order must be in 1..8, got " + std::to_string(order));
  }
  if (vocab_size < 1 || vocab_size > kMaxNgramVocab) {
    throw ConfigError("n-gram vocab size " + std::to_string(vocab_size) + " out of range");
  }
  if (sequences.empty()) throw DataError("count_ngrams: no sequences");

  CountTable table;
  table.order = order;
  table.vocab_size = vocab_size;
  table.raw.resize(order);
  table.cont.resize(order > 1 ? order - 1 : 0);

  // Shard lines across threads with a deterministic merge; integer addition
  // makes the merge order irrelevant.
  const int n_shards =
#ifdef _OPENMP
      std::max(1, std::min(omp_get_max_threads(), static_cast<int>(sequences.size())));
#else
      1;
#endif
  std::vector<std::vector<GramMap<long long>>> shard_raw(n_shards);
  for (auto& shard : shard_raw) shard.resize(order);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(n_shards)
#endif
  for (long long s = 0; s < static_cast<long long>(sequences.size()); ++s) {
#ifdef _OPENMP
    auto& shard = shard_raw[omp_get_thread_num()];
#else
    auto& shard = shard_raw[0];
#endif
    const auto& ids = sequences[s].ids;
    std::vector<int> padded(order - 1, kBosId);
    padded.insert(padded.end(), ids.begin(), ids.end());
    // Every k-gram window ends at a predicted (non-BOS) token.
    for (std::size_t end = order - 1; end < padded.size(); ++end) {
      for (int k = 1; k <= order; ++k) {
        const std::span<const int> gram(&padded[end - k + 1], static_cast<std::size_t>(k));
        ++shard[k - 1][pack_gram(gram)];
      }
    }
  }
  for (const auto& shard : shard_raw) {
    for (int k = 1; k <= order; ++k) {
      for (const auto& [key, c] : shard[k - 1]) table.raw[k - 1][key] += c;
    }
  }

  // Continuation count of a k-gram: distinct left extensions at order k+1.
  for (int k = 1; k < order; ++k) {
    auto& cont = table.cont[k - 1];
    cont.reserve(table.raw[k - 1].size());
    constexpr GramKey one = 1;
    const GramKey suffix_mask = (one << (16 * k)) - 1;
    for (const auto& [key, c] : table.raw[k]) {
      ++cont[key & suffix_mask];
    }
  }
  return table;
}

namespace {

struct ContextStats {
  long long denom = 0;
  double discounted = 0.0;  // sum of min(D(c), c) over the context's grams
};

std::array<double, 3> order_discounts(const GramMap<long long>& raw_grams, const CountTable& counts,
                                      int k) {
  long long n[5] = {0, 0, 0, 0, 0};
  for (const auto& [key, unused] : raw_grams) {
    const auto tokens = unpack_gram(key, k);
    const long long c = counts.effective(k, key, tokens);
    if (c >= 1 && c <= 4) ++n[c];
  }
  const bool degenerate = n[1] == 0 || n[2] == 0 || n[3] == 0 || n[4] == 0;
  if (!degenerate) {
    const double y = static_cast<double>(n[1]) / (n[1] + 2.0 * n[2]);
    std::array<double, 3> d{1.0 - 2.0 * y * n[2] / n[1], 2.0 - 3.0 * y * n[3] / n[2],
                            3.0 - 4.0 * y * n[4] / n[3]};
    for (double& v : d) v = std::max(v, 0.0);
    // A zero discount would leave some contexts without backoff mass; treat
    // it like degenerate count-of-counts.
    if (d[0] > 0.0 && d[1] > 0.0 && d[2] > 0.0) return d;
  }
  return {0.75, 0.75, 0.75};
}

double discount_for(const std::array<double, 3>& d, long long c) {
  const double raw = c == 1 ? d[0] : (c == 2 ? d[1] : d[2]);
  return std::min(raw, static_cast<double>(c));
}

}  // namespace

NGramModel estimate_mkn(const CountTable& counts) {
  if (counts.order < 1 || counts.raw.empty() || counts.raw[0].empty()) {
    throw DataError("estimate_mkn: empty count table");
  }
  const int order = counts.order;
  const double v = static_cast<double>(counts.vocab_size);

  NGramModel model;
  model.order = order;
  model.vocab_size = counts.vocab_size;
  model.log2_probs.resize(order);
  model.log2_backoffs.resize(order > 1 ? order - 1 : 0);
  model.discounts.resize(order);

  // Bottom-up: each order interpolates with the one below it.
  for (int k = 1; k <= order; ++k) {
    const auto& grams = counts.raw[k - 1];
    const auto d = order_discounts(grams, counts, k);
    model.discounts[k - 1] = d;

    GramMap<ContextStats> contexts;
    struct Entry {
      GramKey key;
      long long count;
    };
    std::vector<Entry> entries;
    entries.reserve(grams.size());
    constexpr GramKey one = 1;
    const GramKey ctx_shift = 16;  // context = gram without its last token
    for (const auto& [key, unused] : grams) {
      const auto tokens = unpack_gram(key, k);
      const long long c = counts.effective(k, key, tokens);
      entries.push_back({key, c});
      auto& ctx = contexts[key >> ctx_shift];
      ctx.denom += c;
      ctx.discounted += discount_for(d, c);
    }

    auto& probs = model.log2_probs[k - 1];
    probs.reserve(entries.size());
    for (const auto& e : entries) {
      const auto& ctx = contexts.at(e.key >> ctx_shift);
      const double held = (static_cast<double>(e.count) - discount_for(d, e.count)) /
                          static_cast<double>(ctx.denom);
      const double gamma = ctx.discounted / static_cast<double>(ctx.denom);
      double lower;
      if (k == 1) {
        lower = 1.0 / v;
      } else {
        const GramKey suffix = e.key & ((one << (16 * (k - 1))) - 1);
        lower = std::exp2(model.log2_probs[k - 2].at(suffix));
      }
      probs.emplace(e.key, std::log2(held + gamma * lower));
    }

    if (k > 1) {
      auto& backoffs = model.log2_backoffs[k - 2];
      backoffs.reserve(contexts.size());
      for (const auto& [ctx_key, ctx] : contexts) {
        backoffs.emplace(ctx_key, std::log2(ctx.discounted / static_cast<double>(ctx.denom)));
      }
    } else {
      // Unseen unigrams get the leftover uniform mass; there is exactly one
      // unigram context (the empty one).
      const auto& ctx = contexts.at(0);
      model.log2_unseen_unigram =
          std::log2(ctx.discounted / static_cast<double>(ctx.denom) / v);
    }
  }
  return model;
}

double log2_prob(const NGramModel& model, std::span<const int> context, int w) {
  if (w < 0 || w >= model.vocab_size) {
    throw ConfigError("log2_prob: token id " + std::to_string(w) + " outside vocab of " +
                      std::to_string(model.vocab_size));
  }
  int len = std::min<int>(static_cast<int>(context.size()), model.order - 1);
  std::span<const int> ctx = context.subspan(context.size() - len, len);

  double backoff = 0.0;
  while (true) {
    std::vector<int> gram(ctx.begin(), ctx.end());
    gram.push_back(w);
    const auto& probs = model.log2_probs[len];
    const auto it = probs.find(pack_gram(gram));
    if (it != probs.end()) return backoff + it->second;
    if (len == 0) return backoff + model.log2_unseen_unigram;
    const auto& backoffs = model.log2_backoffs[len - 1];
    const auto bo = backoffs.find(pack_gram(ctx));
    if (bo != backoffs.end()) backoff += bo->second;
    ctx = ctx.subspan(1);
    --len;
  }
}

double score_sequence(const NGramModel& model, const TokenSequence& seq) {
  std::vector<int> context(model.order > 1 ? model.order - 1 : 0, kBosId);
  double total = 0.0;
  for (int id : seq.ids) {
    total += log2_prob(model, context, id);
    if (!context.empty()) {
      context.erase(context.begin());
      context.push_back(id);
    }
  }
  return total;
}

namespace {

std::string render_token(int id) {
  if (id == kBosId) return "<s>";
  if (id == 0) return "<unk>";
  if (id == 1) return "</s>";
  return std::to_string(id);
}

int parse_token(const std::string& s, const std::string& where) {
  if (s == "<s>") return kBosId;
  if (s == "<unk>") return 0;
  if (s == "</s>") return 1;
  try {
    return std::stoi(s);
  } catch (const std::exception&) {
    throw DataError(where + ": unrecognized token '" + s + "'");
  }
}

// Sort key: BOS first, then numeric ids.
bool gram_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

std::string format_log10(double log2_value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.8f", log2_value / kLog2Of10);
  return std::string(buf);
}

}  // namespace

std::string arpa_to_string(const NGramModel& model) {
  // Entries per section: stored grams plus placeholder rows for contexts
  // (like "<s>") that carry a backoff weight without a probability.
  struct Row {
    std::vector<int> tokens;
    bool has_prob = false;
    double log2_prob = 0.0;
    bool has_backoff = false;
    double log2_backoff = 0.0;
  };
  std::vector<std::vector<Row>> sections(model.order);

  for (int k = 1; k <= model.order; ++k) {
    GramMap<std::size_t> index;
    auto& rows = sections[k - 1];
    for (const auto& [key, lp] : model.log2_probs[k - 1]) {
      Row row;
      row.tokens = unpack_gram(key, k);
      row.has_prob = true;
      row.log2_prob = lp;
      index.emplace(key, rows.size());
      rows.push_back(std::move(row));
    }
    if (k < model.order) {
      for (const auto& [key, bo] : model.log2_backoffs[k - 1]) {
        auto it = index.find(key);
        if (it == index.end()) {
          Row row;
          row.tokens = unpack_gram(key, k);
          index.emplace(key, rows.size());
          rows.push_back(std::move(row));
          it = index.find(key);
        }
        rows[it->second].has_backoff = true;
        rows[it->second].log2_backoff = bo;
      }
    }
    std::sort(rows.begin(), rows.end(),
              [](const Row& a, const Row& b) { return gram_less(a.tokens, b.tokens); });
  }

  std::ostringstream out;
  out << "\\data\\\n";
  for (int k = 1; k <= model.order; ++k) {
    out << "ngram " << k << "=" << sections[k - 1].size() << "\n";
  }
  for (int k = 1; k <= model.order; ++k) {
    out << "\n\\" << k << "-grams:\n";
    for (const auto& row : sections[k - 1]) {
      // -99 is the conventional placeholder for context-only entries.
      out << (row.has_prob ? format_log10(row.log2_prob) : "-99.00000000");
      out << "\t";
      for (std::size_t i = 0; i < row.tokens.size(); ++i) {
        if (i) out << " ";
        out << render_token(row.tokens[i]);
      }
      if (row.has_backoff) out << "\t" << format_log10(row.log2_backoff);
      out << "\n";
    }
  }
  out << "\n\\end\\\n";
  return out.str();
}

void export_arpa(const NGramModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write ARPA file: " + path);
  out << arpa_to_string(model);
}

NGramModel parse_arpa(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> DataError {
    return DataError(origin + ":" + std::to_string(line_no) + ": " + what);
  };
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  while (next_line() && line != "\\data\\") {
  }
  if (line != "\\data\\") throw fail("missing \\data\\ header");

  std::vector<std::size_t> declared;
  while (next_line()) {
    if (line.empty()) break;
    if (line.rfind("ngram ", 0) != 0) throw fail("expected 'ngram k=N' line");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("malformed ngram count line");
    const int k = std::stoi(line.substr(6, eq - 6));
    if (k != static_cast<int>(declared.size()) + 1) throw fail("ngram orders out of sequence");
    declared.push_back(std::stoull(line.substr(eq + 1)));
  }
  if (declared.empty()) throw fail("no ngram orders declared");

  NGramModel model;
  model.order = static_cast<int>(declared.size());
  model.log2_probs.resize(model.order);
  model.log2_backoffs.resize(model.order > 1 ? model.order - 1 : 0);
  model.discounts.assign(model.order, {0.0, 0.0, 0.0});

  int max_id = 1;
  for (int k = 1; k <= model.order; ++k) {
    while (next_line() && line.empty()) {
    }
    const std::string expected = "\\" + std::to_string(k) + "-grams:";
    if (line != expected) throw fail("expected section header " + expected);
    std::size_t parsed = 0;
    while (next_line()) {
      if (line.empty()) break;
      if (line[0] == '\\') break;
      // prob TAB tokens [TAB backoff]; tolerate space-separated variants.
      std::vector<std::string> fields;
      {
        std::istringstream fs(line);
        std::string f;
        while (fs >> f) fields.push_back(f);
      }
      if (fields.size() < static_cast<std::size_t>(k) + 1) throw fail("too few fields");
      const bool has_backoff = fields.size() == static_cast<std::size_t>(k) + 2;
      if (!has_backoff && fields.size() != static_cast<std::size_t>(k) + 1) {
        throw fail("unexpected field count");
      }
      double log10_prob;
      try {
        log10_prob = std::stod(fields[0]);
      } catch (const std::exception&) {
        throw fail("malformed probability field '" + fields[0] + "'");
      }
      std::vector<int> tokens;
      tokens.reserve(k);
      for (int i = 0; i < k; ++i) {
        const int id = parse_token(fields[1 + i], origin + ":" + std::to_string(line_no));
        tokens.push_back(id);
        max_id = std::max(max_id, id);
      }
      const GramKey key = pack_gram(tokens);
      // Placeholder probabilities mark context-only rows (and grams that
      // predict BOS can never be queried).
      if (log10_prob > -98.0 && tokens.back() != kBosId) {
        model.log2_probs[k - 1].emplace(key, log10_prob * kLog2Of10);
      }
      if (has_backoff) {
        double log10_backoff;
        try {
          log10_backoff = std::stod(fields[k + 1]);
        } catch (const std::exception&) {
          throw fail("malformed backoff field '" + fields[k + 1] + "'");
        }
        if (k < model.order) {
          model.log2_backoffs[k - 1].emplace(key, log10_backoff * kLog2Of10);
        }
      }
      ++parsed;
    }
    if (parsed != declared[k - 1]) {
      throw DataError(origin + ": section " + std::to_string(k) + " declares " +
                      std::to_string(declared[k - 1]) + " entries but has " +
                      std::to_string(parsed));
    }
  }
  while (line != "\\end\\" && next_line()) {
  }
  if (line != "\\end\\") throw fail("missing \\end\\ marker");

  model.vocab_size = max_id + 1;
  const auto unk = model.log2_probs[0].find(pack_gram(std::array<int, 1>{0}));
  model.log2_unseen_unigram = unk != model.log2_probs[0].end() ? unk->second : -99.0 * kLog2Of10;
  return model;
}

NGramModel import_arpa(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open ARPA file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_arpa(buf.str(), path);
}

}  // namespace salm
