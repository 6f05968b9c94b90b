#pragma once

#include <string>
#include <vector>

#include "salm/bpe.hpp"
#include "salm/checkpoint.hpp"
#include "salm/corpus.hpp"
#include "salm/models.hpp"
#include "salm/ngram.hpp"

namespace salm {

/// Tokenization-independent evaluation record. The derived fields always
/// satisfy: cross_entropy = -total_log2prob/n, perplexity = 2^cross_entropy,
/// bpc = -total_log2prob/c.
struct EvalReport {
  std::string dataset;
  std::string model;
  long long param_count = 0;
  int vocab = 0;
  long long n_tokens = 0;
  long long c_chars = 0;
  double total_log2prob = 0.0;
  double cross_entropy_bits_per_token = 0.0;
  double perplexity = 0.0;
  double bpc = 0.0;
  double unk_rate = 0.0;  // diagnostic, printed in verbose mode, not serialized
};

/// Fills the derived metric fields from (n, c, total_log2prob).
EvalReport make_report(const std::string& dataset, const std::string& model,
                       long long param_count, int vocab, long long n_tokens, long long c_chars,
                       double total_log2prob);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

struct ComparisonTable {
  std::string tsv;     // machine-readable, tab-separated
  std::string pretty;  // aligned human-readable
};

/// Rows sorted by BPC ascending.
ComparisonTable compare_report(const std::vector<EvalReport>& reports);

// ---------------------------------------------------------------------------
// Stream scorers: total log2 probability of `stream` (line tokens with their
// EOS markers concatenated). Neural models take EOS as the start-of-text
// context; RNNs are scored statefully over the whole stream, transformers
// with strided eval windows.

double score_stream_lm(AnyLm<float>& lm, const std::vector<int>& stream, int block, int stride);

/// Per-position log2 probabilities (same total as score_stream_lm).
std::vector<double> position_scores_lm(AnyLm<float>& lm, const std::vector<int>& stream,
                                       int block, int stride);

/// Evaluates an n-gram model line by line via score_sequence.
EvalReport evaluate_ngram(const NGramModel& model, const TokenizerModel& tok,
                          const RawCorpus& test, const std::string& dataset,
                          const std::string& model_name);

/// Evaluates a neural checkpoint; verifies the tokenizer hash recorded in the
/// checkpoint against `tok` before scoring.
EvalReport evaluate_checkpoint(const Checkpoint& ckpt, const TokenizerModel& tok,
                               const RawCorpus& test, const std::string& dataset,
                               const std::string& model_name, int block = 0, int stride = 0);

/// Sum of stored values in an n-gram model (probabilities and backoffs); the
/// n-gram analogue of a parameter count.
long long ngram_param_count(const NGramModel& model);

}  // namespace salm
