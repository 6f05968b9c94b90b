#include "salm/bpe.hpp"

#include <algorithm>
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

// Internal symbol ids during training/encoding. 0 is reserved for the
// non-mergeable unknown placeholder.
constexpr int kSymUnknown = 0;

struct SymbolTable {
  std::vector<std::string> strings{""};  // index 0 = unknown placeholder
  std::unordered_map<std::string, int> index;

  int intern(const std::string& s) {
    auto it = index.find(s);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(strings.size());
    strings.push_back(s);
    index.emplace(s, id);
    return id;
  }
  int find(const std::string& s) const {
    auto it = index.find(s);
    return it == index.end() ? -1 : it->second;
  }
};

// Splits a word into its initial symbols: the first character carries the
// word marker. Characters equal to the marker itself are never part of the
// alphabet and become the unknown placeholder.
std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> chars = utf8::split_scalars(word);
  std::vector<std::string> symbols;
  symbols.reserve(chars.size());
  for (std::size_t i = 0; i < chars.size(); ++i) {
    if (chars[i] == kWordMarker) {
      symbols.emplace_back("");  // placeholder, interned as unknown by callers
      continue;
    }
    symbols.push_back(i == 0 ? kWordMarker + chars[i] : chars[i]);
  }
  return symbols;
}

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) words.push_back(line.substr(i, j - i));
    i = j;
  }
  return words;
}

using Pair = std::pair<int, int>;

struct PairHash {
  std::size_t operator()(const Pair& p) const {
    return std::hash<long long>()((static_cast<long long>(p.first) << 32) ^
                                  static_cast<unsigned>(p.second));
  }
};

// Replaces left-to-right occurrences of (a, b) with `merged` in `seq`.
bool apply_merge_once(std::vector<int>& seq, int a, int b, int merged) {
  bool changed = false;
  std::size_t w = 0;
  for (std::size_t r = 0; r < seq.size();) {
    if (r + 1 < seq.size() && seq[r] == a && seq[r + 1] == b) {
      seq[w++] = merged;
      r += 2;
      changed = true;
    } else {
      seq[w++] = seq[r++];
    }
  }
  seq.resize(w);
  return changed;
}

void finalize_vocab(TokenizerModel& tok) {
  tok.vocab.clear();
  tok.id_to_token.clear();
  tok.id_to_token.push_back(kUnkToken);
  tok.id_to_token.push_back(kEosToken);
  tok.unk_id = 0;
  tok.eos_id = 1;
  for (const auto& a : tok.alphabet) tok.id_to_token.push_back(a);
  for (const auto& m : tok.merges) tok.id_to_token.push_back(m.first + m.second);
  for (std::size_t i = 0; i < tok.id_to_token.size(); ++i) {
    if (!tok.vocab.emplace(tok.id_to_token[i], static_cast<int>(i)).second) {
      throw DataError("tokenizer has duplicate token string: " + tok.id_to_token[i]);
    }
  }
}

}  // namespace

TokenizerModel train_bpe(const RawCorpus& corpus, int vocab_size) {
  if (corpus.lines.empty()) throw ConfigError("train_bpe: corpus is empty");

  SymbolTable symbols;

  // Word frequency dictionary; merges never cross word boundaries, so pair
  // statistics live entirely inside this dictionary.
  std::unordered_map<std::string, long long> word_freq;
  for (const auto& line : corpus.lines) {
    for (auto& w : split_words(normalize_whitespace(line))) ++word_freq[w];
  }

  struct Word {
    std::vector<int> seq;
    long long freq;
  };
  std::vector<Word> words;
  words.reserve(word_freq.size());
  std::unordered_set<std::string> alphabet_set;
  for (const auto& [text, freq] : word_freq) {
    Word w;
    w.freq = freq;
    for (const auto& sym : word_symbols(text)) {
      if (sym.empty()) {
        w.seq.push_back(kSymUnknown);
      } else {
        alphabet_set.insert(sym);
        w.seq.push_back(symbols.intern(sym));
      }
    }
    words.push_back(std::move(w));
  }

  TokenizerModel tok;
  tok.alphabet.assign(alphabet_set.begin(), alphabet_set.end());
  std::sort(tok.alphabet.begin(), tok.alphabet.end());

  const int base = static_cast<int>(tok.alphabet.size()) + 2;
  if (vocab_size <= base) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) +
                      " too small; minimum is " + std::to_string(base + 1) +
                      " (alphabet " + std::to_string(tok.alphabet.size()) + " + 2 specials + 1)");
  }

  // Pair statistics with an occurrence index for incremental updates.
  std::unordered_map<Pair, long long, PairHash> pair_count;
  std::unordered_map<Pair, std::unordered_set<int>, PairHash> pair_words;
  auto count_word = [&](int wi, long long sign) {
    const Word& w = words[wi];
    for (std::size_t i = 0; i + 1 < w.seq.size(); ++i) {
      if (w.seq[i] == kSymUnknown || w.seq[i + 1] == kSymUnknown) continue;
      const Pair p{w.seq[i], w.seq[i + 1]};
      pair_count[p] += sign * w.freq;
      if (sign > 0) {
        pair_words[p].insert(wi);
      }
    }
  };
  for (int wi = 0; wi < static_cast<int>(words.size()); ++wi) count_word(wi, +1);

  const int max_merges = vocab_size - base;
  for (int step = 0; step < max_merges; ++step) {
    // Best pair: highest count, ties by lexicographic (left, right) strings.
    Pair best{-1, -1};
    long long best_count = 0;
    for (const auto& [p, c] : pair_count) {
      if (c < 2) continue;  // frequency floor
      if (best.first < 0 || c > best_count) {
        best = p;
        best_count = c;
        continue;
      }
      if (c < best_count) continue;
      const auto& bl = symbols.strings[best.first];
      const auto& br = symbols.strings[best.second];
      const auto& pl = symbols.strings[p.first];
      const auto& pr = symbols.strings[p.second];
      if (pl < bl || (pl == bl && pr < br)) best = p;
    }
    if (best.first < 0) break;

    const std::string left = symbols.strings[best.first];
    const std::string right = symbols.strings[best.second];
    const int merged = symbols.intern(left + right);
    tok.merges.emplace_back(left, right);

    // Re-count only the words that contain the merged pair.
    auto holders_it = pair_words.find(best);
    std::vector<int> holders(holders_it->second.begin(), holders_it->second.end());
    for (int wi : holders) {
      count_word(wi, -1);
      for (std::size_t i = 0; i + 1 < words[wi].seq.size(); ++i) {
        const Pair p{words[wi].seq[i], words[wi].seq[i + 1]};
        auto pw = pair_words.find(p);
        if (pw != pair_words.end()) pw->second.erase(wi);
      }
      apply_merge_once(words[wi].seq, best.first, best.second, merged);
      count_word(wi, +1);
    }
    for (auto it = pair_count.begin(); it != pair_count.end();) {
      it = it->second <= 0 ? pair_count.erase(it) : std::next(it);
    }
  }

  finalize_vocab(tok);
  return tok;
}

namespace {

struct EncoderIndex {
  SymbolTable symbols;
  std::unordered_map<Pair, int, PairHash> rank;    // pair -> merge index
  std::vector<int> merged_symbol;                  // merge index -> symbol id
  std::vector<int> token_id;                       // symbol id -> vocab id

  explicit EncoderIndex(const TokenizerModel& tok) {
    token_id.push_back(tok.unk_id);  // placeholder symbol
    for (const auto& a : tok.alphabet) {
      symbols.intern(a);
      token_id.push_back(tok.vocab.at(a));
    }
    for (std::size_t m = 0; m < tok.merges.size(); ++m) {
      const auto& [l, r] = tok.merges[m];
      const int ls = symbols.find(l), rs = symbols.find(r);
      if (ls < 0 || rs < 0) throw DataError("tokenizer merge refers to unknown token");
      rank.emplace(Pair{ls, rs}, static_cast<int>(m));
      symbols.intern(l + r);
      token_id.push_back(tok.vocab.at(l + r));
    }
  }

  void encode_word(const std::string& word, std::vector<int>& out_ids) const {
    std::vector<int> seq;
    for (const auto& sym : word_symbols(word)) {
      const int s = sym.empty() ? -1 : symbols.find(sym);
      seq.push_back(s < 0 ? kSymUnknown : s);
    }
    // Repeatedly apply the earliest-learned merge present; new pairs always
    // rank later than the one just applied, so this equals exhaustive
    // application in learned order.
    while (seq.size() > 1) {
      int best_rank = -1;
      Pair best{-1, -1};
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        if (seq[i] == kSymUnknown || seq[i + 1] == kSymUnknown) continue;
        auto it = rank.find(Pair{seq[i], seq[i + 1]});
        if (it != rank.end() && (best_rank < 0 || it->second < best_rank)) {
          best_rank = it->second;
          best = it->first;
        }
      }
      if (best_rank < 0) break;
      apply_merge_once(seq, best.first, best.second,
                       symbols.find(symbols.strings[best.first] + symbols.strings[best.second]));
    }
    for (int s : seq) out_ids.push_back(token_id[s]);
  }
};

std::vector<std::string> split_text_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
    if (start == text.size()) break;  // trailing newline closes the last line
  }
  if (lines.empty()) lines.emplace_back();
  return lines;
}

}  // namespace

TokenSequence encode(const TokenizerModel& tok, const std::string& text) {
  const EncoderIndex index(tok);
  TokenSequence seq;
  for (const auto& line : split_text_lines(text)) {
    for (const auto& word : split_words(line)) index.encode_word(word, seq.ids);
    seq.ids.push_back(tok.eos_id);
    seq.char_len += utf8::count_scalars(line) + 1;
  }
  return seq;
}

std::vector<TokenSequence> encode_lines(const TokenizerModel& tok,
                                        const std::vector<std::string>& lines) {
  const EncoderIndex index(tok);
  std::vector<TokenSequence> out(lines.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 64)
#endif
  for (long long i = 0; i < static_cast<long long>(lines.size()); ++i) {
    for (const auto& word : split_words(lines[i])) index.encode_word(word, out[i].ids);
    out[i].ids.push_back(tok.eos_id);
    out[i].char_len = utf8::count_scalars(lines[i]) + 1;
  }
  return out;
}

std::string decode(const TokenizerModel& tok, const TokenSequence& seq) {
  const std::size_t marker_len = std::string(kWordMarker).size();
  std::string out;
  bool at_line_start = true;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const int id = seq.ids[i];
    if (id < 0 || id >= tok.vocab_size()) {
      throw DataError("decode: token id " + std::to_string(id) + " out of range (vocab " +
                      std::to_string(tok.vocab_size()) + ")");
    }
    if (id == tok.eos_id) {
      if (i + 1 < seq.ids.size()) out.push_back('\n');
      at_line_start = true;
      continue;
    }
    const std::string& token = tok.id_to_token[id];
    if (token.compare(0, marker_len, kWordMarker) == 0) {
      if (!at_line_start) out.push_back(' ');
      out.append(token, marker_len, std::string::npos);
    } else {
      out.append(token);
    }
    at_line_start = false;
  }
  return out;
}

std::string serialize_tokenizer(const TokenizerModel& tok) {
  std::ostringstream out;
  out << "bpe-tokenizer v1\n";
  out << "vocab " << tok.vocab_size() << "\n";
  out << "special unk " << tok.unk_id << "\n";
  out << "special eos " << tok.eos_id << "\n";
  for (const auto& a : tok.alphabet) out << "alphabet " << a << " " << tok.vocab.at(a) << "\n";
  for (const auto& [l, r] : tok.merges) {
    out << "merge " << l << " " << r << " " << tok.vocab.at(l + r) << "\n";
  }
  return out.str();
}

void save_tokenizer(const TokenizerModel& tok, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write tokenizer file: " + path);
  out << serialize_tokenizer(tok);
}

TokenizerModel parse_tokenizer(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> DataError {
    return DataError(origin + ":" + std::to_string(line_no) + ": " + what);
  };
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    return true;
  };

  if (!next_line() || line != "bpe-tokenizer v1") throw fail("expected header 'bpe-tokenizer v1'");
  if (!next_line() || line.rfind("vocab ", 0) != 0) throw fail("expected 'vocab <V>' line");
  const int vocab_size = std::stoi(line.substr(6));

  TokenizerModel tok;
  tok.unk_id = -1;
  tok.eos_id = -1;
  std::vector<std::pair<std::string, int>> alphabet_entries;
  std::vector<std::pair<std::pair<std::string, std::string>, int>> merge_entries;

  while (next_line()) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string kind;
    fields >> kind;
    if (kind == "special") {
      std::string name;
      int id = -1;
      if (!(fields >> name >> id)) throw fail("malformed special line");
      if (name == "unk") {
        tok.unk_id = id;
      } else if (name == "eos") {
        tok.eos_id = id;
      } else {
        throw fail("unknown special token name: " + name);
      }
    } else if (kind == "alphabet") {
      std::string ch;
      int id = -1;
      if (!(fields >> ch >> id)) throw fail("malformed alphabet line");
      alphabet_entries.emplace_back(ch, id);
    } else if (kind == "merge") {
      std::string l, r;
      int id = -1;
      if (!(fields >> l >> r >> id)) throw fail("malformed merge line");
      merge_entries.push_back({{l, r}, id});
    } else {
      throw fail("unknown record kind: " + kind);
    }
  }
  if (tok.unk_id < 0 || tok.eos_id < 0) throw fail("missing special token declarations");

  for (auto& [ch, id] : alphabet_entries) tok.alphabet.push_back(ch);
  std::sort(tok.alphabet.begin(), tok.alphabet.end());
  for (auto& [pair, id] : merge_entries) tok.merges.push_back(pair);

  std::unordered_set<std::string> producible(tok.alphabet.begin(), tok.alphabet.end());
  for (const auto& [l, r] : tok.merges) {
    if (!producible.count(l) || !producible.count(r)) {
      throw DataError(origin + ": merge '" + l + " " + r +
                      "' uses a token not producible from earlier merges or the alphabet");
    }
    producible.insert(l + r);
  }
  finalize_vocab(tok);

  if (tok.vocab_size() != vocab_size) {
    throw DataError(origin + ": vocab header says " + std::to_string(vocab_size) +
                    " tokens but file defines " + std::to_string(tok.vocab_size()));
  }
  // Declared ids must match the canonical assignment.
  for (const auto& [ch, id] : alphabet_entries) {
    if (tok.vocab.at(ch) != id) {
      throw DataError(origin + ": alphabet token '" + ch + "' declared id " + std::to_string(id) +
                      " but canonical id is " + std::to_string(tok.vocab.at(ch)));
    }
  }
  for (const auto& [pair, id] : merge_entries) {
    if (tok.vocab.at(pair.first + pair.second) != id) {
      throw DataError(origin + ": merge '" + pair.first + " " + pair.second + "' declared id " +
                      std::to_string(id) + " does not match canonical assignment");
    }
  }
  return tok;
}

TokenizerModel load_tokenizer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tokenizer file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_tokenizer(buf.str(), path);
}

std::string tokenizer_hash(const TokenizerModel& tok) {
  const std::string text = serialize_tokenizer(tok);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace salm
