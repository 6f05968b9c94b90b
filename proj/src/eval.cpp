#include "salm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "salm/batching.hpp"
#include "salm/error.hpp"

namespace salm {

namespace {

constexpr double kLn2 = 0.69314718055994530942;

/// log2 P(target) per row of a float logit matrix, accumulated in double.
void append_row_scores(std::span<const float> logits, std::size_t rows, std::size_t cols,
                       std::span<const int> targets, std::vector<double>& out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = logits.data() + r * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max<double>(mx, row[j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < cols; ++j) lse += std::exp(static_cast<double>(row[j]) - mx);
    const double log_p =
        static_cast<double>(row[static_cast<std::size_t>(targets[r])]) - mx - std::log(lse);
    out.push_back(log_p / kLn2);
  }
}

std::vector<double> score_ffnn(FfnnLm<float>& lm, const std::vector<int>& stream) {
  NoGradGuard guard;
  RngStream rng(0);
  const int ctx = lm.cfg.context_order - 1;
  const int eos = 1;  // EOS doubles as the start-of-sequence context symbol
  std::vector<double> scores;
  scores.reserve(stream.size());
  const std::size_t batch_cap = 1024;
  std::vector<int> contexts;
  std::vector<int> targets;
  for (std::size_t p = 0; p < stream.size(); ++p) {
    for (int d = ctx; d >= 1; --d) {
      contexts.push_back(p >= static_cast<std::size_t>(d) ? stream[p - d] : eos);
    }
    targets.push_back(stream[p]);
    if (targets.size() == batch_cap || p + 1 == stream.size()) {
      Tensor<float> logits =
          lm.forward(contexts, static_cast<int>(targets.size()), false, rng);
      append_row_scores(logits.data(), targets.size(),
                        static_cast<std::size_t>(lm.cfg.vocab_size), targets, scores);
      contexts.clear();
      targets.clear();
    }
  }
  return scores;
}

template <typename Model, typename State>
std::vector<double> score_rnn(Model& lm, State state, const std::vector<int>& stream) {
  NoGradGuard guard;
  RngStream rng(0);
  const int eos = 1;
  std::vector<double> scores;
  scores.reserve(stream.size());
  const int chunk = 128;
  std::vector<int> inputs;
  std::vector<int> targets;
  std::size_t p = 0;
  while (p < stream.size()) {
    const int t = static_cast<int>(std::min<std::size_t>(chunk, stream.size() - p));
    inputs.clear();
    targets.clear();
    for (int i = 0; i < t; ++i) {
      inputs.push_back(p + i == 0 ? eos : stream[p + i - 1]);
      targets.push_back(stream[p + i]);
    }
    auto out = lm.forward(inputs, 1, t, state, false, rng);
    append_row_scores(out.logits.data(), static_cast<std::size_t>(t),
                      static_cast<std::size_t>(lm.cfg.vocab_size), targets, scores);
    p += static_cast<std::size_t>(t);
  }
  return scores;
}

std::vector<double> score_transformer(TransformerLm<float>& lm, const std::vector<int>& stream,
                                      int block, int stride) {
  NoGradGuard guard;
  RngStream rng(0);
  if (block <= 0) block = lm.cfg.block_size;
  if (stride <= 0) stride = lm.cfg.stride_eval;
  block = std::min(block, lm.cfg.block_size);
  stride = std::min(stride, block);
  const int eos = 1;
  // S = EOS ++ stream; feeding S[s..s+L) produces a prediction for
  // stream[s+i] at logits row i.
  std::vector<int> padded;
  padded.reserve(stream.size() + 1);
  padded.push_back(eos);
  padded.insert(padded.end(), stream.begin(), stream.end());

  std::vector<double> scores(stream.size(), 0.0);
  const auto windows = make_windows(stream.size(), block, stride, true);
  std::vector<int> inputs;
  std::vector<int> targets;
  for (const auto& w : windows) {
    inputs.assign(padded.begin() + static_cast<long>(w.start),
                  padded.begin() + static_cast<long>(w.start + w.length));
    Tensor<float> logits = lm.forward(inputs, 1, static_cast<int>(w.length), false, rng);
    targets.assign(stream.begin() + static_cast<long>(w.scored_begin),
                   stream.begin() + static_cast<long>(w.scored_end));
    std::vector<double> window_scores;
    const std::size_t row0 = w.scored_begin - w.start;
    const std::size_t cols = static_cast<std::size_t>(lm.cfg.vocab_size);
    append_row_scores(logits.data().subspan(row0 * cols, targets.size() * cols), targets.size(),
                      cols, targets, window_scores);
    for (std::size_t i = 0; i < window_scores.size(); ++i) {
      scores[w.scored_begin + i] = window_scores[i];
    }
  }
  return scores;
}

}  // namespace

std::vector<double> position_scores_lm(AnyLm<float>& lm, const std::vector<int>& stream,
                                       int block, int stride) {
  if (stream.empty()) return {};
  if (auto* ffnn = std::get_if<FfnnLm<float>>(&lm)) return score_ffnn(*ffnn, stream);
  if (auto* lstm = std::get_if<LstmLm<float>>(&lm)) {
    return score_rnn(*lstm, lstm->initial_state(1), stream);
  }
  if (auto* qrnn = std::get_if<QrnnLm<float>>(&lm)) {
    return score_rnn(*qrnn, qrnn->initial_state(1), stream);
  }
  return score_transformer(std::get<TransformerLm<float>>(lm), stream, block, stride);
}

double score_stream_lm(AnyLm<float>& lm, const std::vector<int>& stream, int block, int stride) {
  double total = 0.0;
  for (double s : position_scores_lm(lm, stream, block, stride)) total += s;
  return total;
}

EvalReport make_report(const std::string& dataset, const std::string& model,
                       long long param_count, int vocab, long long n_tokens, long long c_chars,
                       double total_log2prob) {
  EvalReport r;
  r.dataset = dataset;
  r.model = model;
  r.param_count = param_count;
  r.vocab = vocab;
  r.n_tokens = n_tokens;
  r.c_chars = c_chars;
  r.total_log2prob = total_log2prob;
  r.cross_entropy_bits_per_token = n_tokens > 0 ? -total_log2prob / static_cast<double>(n_tokens)
                                                : 0.0;
  r.perplexity = std::exp2(r.cross_entropy_bits_per_token);
  r.bpc = c_chars > 0 ? -total_log2prob / static_cast<double>(c_chars) : 0.0;
  if (!std::isfinite(r.cross_entropy_bits_per_token) || !std::isfinite(r.perplexity) ||
      !std::isfinite(r.bpc)) {
    throw NumericError("non-finite evaluation metrics");
  }
  return r;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["dataset"] = report.dataset;
  j["model"] = report.model;
  j["param_count"] = report.param_count;
  j["vocab"] = report.vocab;
  j["n_tokens"] = report.n_tokens;
  j["c_chars"] = report.c_chars;
  j["total_log2prob"] = report.total_log2prob;
  j["cross_entropy_bits_per_token"] = report.cross_entropy_bits_per_token;
  j["perplexity"] = report.perplexity;
  j["bpc"] = report.bpc;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.model = j.at("model").get<std::string>();
  r.param_count = j.at("param_count").get<long long>();
  r.vocab = j.at("vocab").get<int>();
  r.n_tokens = j.at("n_tokens").get<long long>();
  r.c_chars = j.at("c_chars").get<long long>();
  r.total_log2prob = j.at("total_log2prob").get<double>();
  r.cross_entropy_bits_per_token = j.at("cross_entropy_bits_per_token").get<double>();
  r.perplexity = j.at("perplexity").get<double>();
  r.bpc = j.at("bpc").get<double>();
  return r;
}

ComparisonTable compare_report(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ConfigError("compare_report: no reports given");
  std::vector<EvalReport> sorted = reports;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const EvalReport& a, const EvalReport& b) { return a.bpc < b.bpc; });

  ComparisonTable table;
  std::ostringstream tsv;
  tsv << "dataset\tmodel\tparams\tvocab\tbpc\tppl\txent\n";
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"dataset", "model", "params", "vocab", "bpc", "ppl", "xent"});
  auto fmt = [](double v, const char* spec) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), spec, v);
    return std::string(buf);
  };
  for (const auto& r : sorted) {
    const std::string bpc = fmt(r.bpc, "%.3f");
    const std::string ppl = fmt(r.perplexity, "%.2f");
    const std::string xent = fmt(r.cross_entropy_bits_per_token, "%.4f");
    tsv << r.dataset << "\t" << r.model << "\t" << r.param_count << "\t" << r.vocab << "\t" << bpc
        << "\t" << ppl << "\t" << xent << "\n";
    cells.push_back({r.dataset, r.model, std::to_string(r.param_count),
                     std::to_string(r.vocab), bpc, ppl, xent});
  }
  table.tsv = tsv.str();

  std::vector<std::size_t> widths(cells[0].size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  std::ostringstream pretty;
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      pretty << row[i] << std::string(widths[i] - row[i].size() + (i + 1 < row.size() ? 2 : 0),
                                      ' ');
    }
    pretty << "\n";
  }
  table.pretty = pretty.str();
  return table;
}

long long ngram_param_count(const NGramModel& model) {
  long long total = 0;
  for (const auto& m : model.log2_probs) total += static_cast<long long>(m.size());
  for (const auto& m : model.log2_backoffs) total += static_cast<long long>(m.size());
  return total;
}

namespace {

struct TokenizedTest {
  std::vector<TokenSequence> lines;
  long long n_tokens = 0;
  long long c_chars = 0;
  double unk_rate = 0.0;
};

TokenizedTest tokenize_test(const TokenizerModel& tok, const RawCorpus& test) {
  TokenizedTest out;
  out.lines = encode_lines(tok, test.lines);
  long long unk = 0;
  for (const auto& line : out.lines) {
    out.n_tokens += static_cast<long long>(line.ids.size());
    out.c_chars += static_cast<long long>(line.char_len);
    for (int id : line.ids) unk += id == tok.unk_id ? 1 : 0;
  }
  out.unk_rate = out.n_tokens > 0 ? static_cast<double>(unk) / out.n_tokens : 0.0;
  return out;
}

}  // namespace

EvalReport evaluate_ngram(const NGramModel& model, const TokenizerModel& tok,
                          const RawCorpus& test, const std::string& dataset,
                          const std::string& model_name) {
  if (tok.vocab_size() != model.vocab_size) {
    throw DataError("tokenizer vocab " + std::to_string(tok.vocab_size()) +
                    " does not match n-gram model vocab " + std::to_string(model.vocab_size));
  }
  const TokenizedTest t = tokenize_test(tok, test);
  double total = 0.0;
  for (const auto& line : t.lines) total += score_sequence(model, line);
  EvalReport r = make_report(dataset, model_name, ngram_param_count(model), model.vocab_size,
                             t.n_tokens, t.c_chars, total);
  r.unk_rate = t.unk_rate;
  return r;
}

EvalReport evaluate_checkpoint(const Checkpoint& ckpt, const TokenizerModel& tok,
                               const RawCorpus& test, const std::string& dataset,
                               const std::string& model_name, int block, int stride) {
  const std::string expected = ckpt.meta_or_throw("tokenizer_hash");
  const std::string actual = tokenizer_hash(tok);
  if (expected != actual) {
    throw DataError("tokenizer hash mismatch: checkpoint was trained with " + expected +
                    " but the given tokenizer hashes to " + actual);
  }
  AnyLm<float> lm = lm_from_checkpoint<float>(ckpt);
  const TokenizedTest t = tokenize_test(tok, test);
  std::vector<int> stream;
  stream.reserve(static_cast<std::size_t>(t.n_tokens));
  for (const auto& line : t.lines) stream.insert(stream.end(), line.ids.begin(), line.ids.end());
  const double total = score_stream_lm(lm, stream, block, stride);
  EvalReport r = make_report(dataset, model_name, ckpt.param_count(), tok.vocab_size(),
                             t.n_tokens, t.c_chars, total);
  r.unk_rate = t.unk_rate;
  return r;
}

}  // namespace salm
