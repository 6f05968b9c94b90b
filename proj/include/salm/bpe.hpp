#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "salm/corpus.hpp"

namespace salm {

/// Word-initial marker attached to the first character of every word so that
/// decoding is unambiguous. U+2581 (lower one eighth block).
inline constexpr const char* kWordMarker = "\xE2\x96\x81";

inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kEosToken = "</s>";

/// Byte-pair-encoding tokenizer: ordered merge list plus a dense vocabulary.
/// Ids are assigned as unk, eos, alphabet (sorted), then merges in learned
/// order, so identical training inputs produce identical id maps.
struct TokenizerModel {
  std::vector<std::string> alphabet;  // sorted single-scalar tokens (marker included)
  std::vector<std::pair<std::string, std::string>> merges;  // learning order
  std::unordered_map<std::string, int> vocab;                // token string -> id
  std::vector<std::string> id_to_token;                      // dense 0..V-1
  int unk_id = 0;
  int eos_id = 1;

  int vocab_size() const { return static_cast<int>(id_to_token.size()); }
};

struct TokenSequence {
  std::vector<int> ids;
  std::size_t char_len = 0;  // Unicode scalars of the source text incl. one terminator per line
};

/// Learns merges greedily from the most frequent adjacent pair, ties broken
/// by lexicographic (left, right) token strings, never crossing word
/// boundaries. Stops at `vocab_size` tokens or when no pair occurs twice.
TokenizerModel train_bpe(const RawCorpus& corpus, int vocab_size);

/// Tokenizes text: per word, start from characters and apply merges in
/// learned order; unknown characters become UNK; one EOS per line.
TokenSequence encode(const TokenizerModel& tok, const std::string& text);

/// Encodes each line independently (parallel, order preserved); line i of the
/// result carries that line's ids, EOS included.
std::vector<TokenSequence> encode_lines(const TokenizerModel& tok,
                                        const std::vector<std::string>& lines);

/// Inverse of encode on alphabet-covered text. EOS separates lines; no
/// terminator is emitted after the final EOS, so decode(encode(s)) == s.
std::string decode(const TokenizerModel& tok, const TokenSequence& seq);

void save_tokenizer(const TokenizerModel& tok, const std::string& path);
TokenizerModel load_tokenizer(const std::string& path);

/// Canonical text serialization (what save_tokenizer writes).
std::string serialize_tokenizer(const TokenizerModel& tok);
TokenizerModel parse_tokenizer(const std::string& text, const std::string& origin);

/// FNV-1a hash of the canonical serialization, as 16 hex digits. Checkpoints
/// store it so evaluation can verify model/tokenizer pairing.
std::string tokenizer_hash(const TokenizerModel& tok);

}  // namespace salm
