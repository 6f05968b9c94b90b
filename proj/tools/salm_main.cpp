// salm: subword language modelling toolkit.
//
// Subcommands: corpus, bpe, ngram, nn, eval, experiment.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "salm/error.hpp"
#include "salm/eval.hpp"
#include "salm/experiment.hpp"
#include "salm/train.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool verbose = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw salm::DataError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void cmd_corpus_prepare(const std::string& input, const std::string& out_dir,
                        const std::string& split, bool no_clean, bool verbose) {
  salm::RawCorpus corpus = salm::load_corpus(input);
  if (!no_clean) corpus = salm::clean_text(corpus);
  const auto ratios = salm::parse_split(split);
  const salm::CorpusSplit parts = salm::split_corpus(corpus, ratios);
  std::filesystem::create_directories(out_dir);
  salm::save_corpus(parts.train, out_dir + "/train.txt");
  salm::save_corpus(parts.valid, out_dir + "/valid.txt");
  salm::save_corpus(parts.test, out_dir + "/test.txt");
  if (verbose) {
    const auto stats = salm::corpus_stats(corpus);
    std::cerr << "prepared " << stats.line_count << " lines (" << stats.word_count << " words, "
              << stats.char_count << " chars) into " << out_dir << "\n";
  }
}

void cmd_corpus_concat(const std::string& inputs, const std::string& output) {
  std::vector<salm::RawCorpus> corpora;
  std::string item;
  std::istringstream in(inputs);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) corpora.push_back(salm::load_corpus(item));
  }
  salm::save_corpus(salm::concat_corpora(corpora), output);
}

void cmd_corpus_stats(const std::string& input) {
  const auto stats = salm::corpus_stats(salm::load_corpus(input));
  std::cout << stats.line_count << "\t" << stats.word_count << "\t" << stats.char_count << "\n";
}

void cmd_bpe_train(const std::string& input, int vocab_size, const std::string& output) {
  const salm::RawCorpus corpus = salm::load_corpus(input);
  const salm::TokenizerModel tok = salm::train_bpe(corpus, vocab_size);
  salm::save_tokenizer(tok, output);
}

void cmd_bpe_encode(const std::string& tokenizer, const std::string& input,
                    const std::string& output) {
  const salm::TokenizerModel tok = salm::load_tokenizer(tokenizer);
  const salm::RawCorpus corpus = salm::load_corpus(input);
  const auto lines = salm::encode_lines(tok, corpus.lines);
  std::ofstream out(output, std::ios::binary);
  if (!out) throw salm::DataError("cannot write file: " + output);
  for (const auto& line : lines) {
    for (std::size_t i = 0; i < line.ids.size(); ++i) {
      if (i) out << ' ';
      out << line.ids[i];
    }
    out << '\n';
  }
}

void cmd_bpe_decode(const std::string& tokenizer, const std::string& input,
                    const std::string& output) {
  const salm::TokenizerModel tok = salm::load_tokenizer(tokenizer);
  std::ifstream in(input, std::ios::binary);
  if (!in) throw salm::DataError("cannot open file: " + input);
  std::ofstream out(output, std::ios::binary);
  if (!out) throw salm::DataError("cannot write file: " + output);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    salm::TokenSequence seq;
    std::istringstream fields(line);
    std::string field;
    while (fields >> field) {
      try {
        seq.ids.push_back(std::stoi(field));
      } catch (const std::exception&) {
        throw salm::DataError(input + ":" + std::to_string(line_no) + ": bad token id '" + field +
                              "'");
      }
    }
    out << salm::decode(tok, seq) << '\n';
  }
}

void cmd_ngram_train(int order, const std::string& tokenizer, const std::string& input,
                     const std::string& arpa_out) {
  const salm::TokenizerModel tok = salm::load_tokenizer(tokenizer);
  const salm::RawCorpus corpus = salm::load_corpus(input);
  const auto sequences = salm::encode_lines(tok, corpus.lines);
  const salm::CountTable counts = salm::count_ngrams(sequences, order, tok.vocab_size());
  const salm::NGramModel model = salm::estimate_mkn(counts);
  salm::export_arpa(model, arpa_out);
}

void cmd_ngram_score(const std::string& arpa, const std::string& tokenizer,
                     const std::string& input, bool verbose) {
  const salm::TokenizerModel tok = salm::load_tokenizer(tokenizer);
  const salm::NGramModel model = salm::import_arpa(arpa);
  const salm::RawCorpus corpus = salm::load_corpus(input);
  const salm::EvalReport r = salm::evaluate_ngram(model, tok, corpus, corpus.source_name, arpa);
  std::cout << "n_tokens\t" << r.n_tokens << "\n";
  std::cout << "total_log2prob\t" << r.total_log2prob << "\n";
  std::cout << "cross_entropy\t" << r.cross_entropy_bits_per_token << "\n";
  std::cout << "perplexity\t" << r.perplexity << "\n";
  std::cout << "bpc\t" << r.bpc << "\n";
  if (verbose) std::cout << "unk_rate\t" << r.unk_rate << "\n";
}

void cmd_nn_train(const std::string& arch, const std::string& config_path,
                  const std::string& tokenizer, const std::string& train_path,
                  const std::string& valid_path, const std::string& out,
                  std::optional<std::uint64_t> seed, bool verbose) {
  const salm::TokenizerModel tok = salm::load_tokenizer(tokenizer);
  salm::ExperimentConfig config;
  if (!config_path.empty()) {
    config = salm::parse_config(read_file(config_path), config_path);
  }
  salm::LmConfig mcfg;
  mcfg.arch = salm::parse_arch(arch.empty() ? config.get_or("model", "arch", "lstm") : arch);
  mcfg.vocab_size = tok.vocab_size();
  mcfg.emb_dim = static_cast<int>(config.get_int("model", "emb_dim", 64));
  mcfg.hidden_dim = static_cast<int>(config.get_int("model", "hidden_dim", 64));
  mcfg.n_layers = static_cast<int>(config.get_int("model", "n_layers", 2));
  mcfg.context_order = static_cast<int>(config.get_int("model", "context_order", 2));
  mcfg.n_heads = static_cast<int>(config.get_int("model", "n_heads", 4));
  mcfg.tie_weights = config.get_bool("model", "tie_weights", true);
  mcfg.block_size = static_cast<int>(config.get_int("model", "block_size", 64));
  mcfg.bptt_len = static_cast<int>(config.get_int("model", "bptt_len", 32));
  mcfg.stride_train = static_cast<int>(config.get_int("model", "stride_train", 16));
  mcfg.stride_eval = static_cast<int>(config.get_int("model", "stride_eval", 64));
  mcfg.stride_eval = std::min(mcfg.stride_eval, mcfg.block_size);
  mcfg.dropout.input = config.get_double("model", "dropout_input", 0.0);
  mcfg.dropout.hidden = config.get_double("model", "dropout_hidden", 0.0);
  mcfg.dropout.output = config.get_double("model", "dropout_output", 0.0);
  mcfg.dropout.embedding = config.get_double("model", "dropout_embedding", 0.0);
  mcfg.dropout.weight = config.get_double("model", "dropout_weight", 0.0);
  mcfg.dropout.attention = config.get_double("model", "dropout_attention", 0.0);
  mcfg.ar_alpha = config.get_double("model", "ar_alpha", 0.0);
  mcfg.tar_beta = config.get_double("model", "tar_beta", 0.0);
  mcfg.validate();

  salm::TrainConfig tcfg;
  tcfg.lr = config.get_double("train", "lr", 1e-3);
  tcfg.batch_size = static_cast<int>(config.get_int("train", "batch_size", 16));
  tcfg.max_steps = config.get_int("train", "max_steps", 2000);
  tcfg.max_epochs = static_cast<int>(config.get_int("train", "max_epochs", 10));
  tcfg.eval_interval = static_cast<int>(config.get_int("train", "eval_interval", 200));
  tcfg.patience = static_cast<int>(config.get_int("train", "patience", 4));
  tcfg.clip_norm = config.get_double("train", "clip_norm", 0.25);
  tcfg.weight_decay = config.get_double("train", "weight_decay", 0.0);
  tcfg.variable_bptt = static_cast<int>(config.get_int("train", "variable_bptt", -1));
  tcfg.chunk_len = static_cast<int>(config.get_int("train", "chunk_len", 64));
  tcfg.seed = seed ? *seed : static_cast<std::uint64_t>(config.get_int("train", "seed", 0));

  auto stream_of = [&](const std::string& path) {
    std::vector<int> stream;
    const salm::RawCorpus corpus = salm::load_corpus(path);
    for (const auto& line : salm::encode_lines(tok, corpus.lines)) {
      stream.insert(stream.end(), line.ids.begin(), line.ids.end());
    }
    return stream;
  };
  const salm::TrainResult result = salm::train_lm(mcfg, tcfg, stream_of(train_path),
                                                  stream_of(valid_path),
                                                  salm::tokenizer_hash(tok));
  if (result.best.tensors.empty()) throw salm::NumericError("no finite checkpoint produced");
  salm::save_checkpoint(result.best, out);
  salm::write_train_log(result.log, out + ".log");
  if (verbose) {
    std::cerr << "ran " << result.steps_run << " steps, best valid loss "
              << result.best_valid_loss << " nats"
              << (result.aborted_nonfinite ? " (aborted on non-finite loss)" : "") << "\n";
  }
}

void cmd_eval(const std::string& model, const std::string& arpa, const std::string& tokenizer,
              const std::string& test, const std::string& report_path, int block, int stride,
              bool verbose) {
  const salm::TokenizerModel tok = salm::load_tokenizer(tokenizer);
  const salm::RawCorpus corpus = salm::load_corpus(test);
  salm::EvalReport report;
  if (!arpa.empty()) {
    report = salm::evaluate_ngram(salm::import_arpa(arpa), tok, corpus, corpus.source_name, arpa);
  } else if (!model.empty()) {
    report = salm::evaluate_checkpoint(salm::load_checkpoint(model), tok, corpus,
                                       corpus.source_name, model, block, stride);
  } else {
    throw salm::ConfigError("eval needs --model or --arpa");
  }
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw salm::DataError("cannot write report: " + report_path);
    out << salm::report_to_json(report);
  }
  std::cout << "bpc\t" << report.bpc << "\tppl\t" << report.perplexity << "\txent\t"
            << report.cross_entropy_bits_per_token << "\n";
  if (verbose) std::cerr << "unk_rate " << report.unk_rate << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"salm: subword language modelling toolkit"};
  app.require_subcommand(1);
  // Global flags may also follow the subcommand (salm nn train ... --seed N).
  app.fallthrough();

  GlobalOpts global;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "random seed override");
  app.add_option("--threads", global.threads, "worker thread count (0 = library default)");
  app.add_flag("--verbose", global.verbose, "chatty progress output");

  // corpus
  auto* corpus = app.add_subcommand("corpus", "corpus preparation utilities");
  corpus->require_subcommand(1);
  std::string c_input, c_outdir, c_split = "80,10,10", c_inputs, c_output;
  bool c_noclean = false;
  auto* prepare = corpus->add_subcommand("prepare", "clean and split a corpus");
  prepare->add_option("--input", c_input)->required();
  prepare->add_option("--out-dir", c_outdir)->required();
  prepare->add_option("--split", c_split, "train,valid,test percentages");
  prepare->add_flag("--no-clean", c_noclean, "skip the cleaning pass");
  auto* concat = corpus->add_subcommand("concat", "concatenate corpora in order");
  concat->add_option("--inputs", c_inputs, "comma-separated input files")->required();
  concat->add_option("--output", c_output)->required();
  auto* stats = corpus->add_subcommand("stats", "print line/word/char counts");
  stats->add_option("--input", c_input)->required();

  // bpe
  auto* bpe = app.add_subcommand("bpe", "byte-pair-encoding tokenizers");
  bpe->require_subcommand(1);
  std::string b_input, b_output, b_tokenizer;
  int b_vocab = 512;
  auto* bpe_train = bpe->add_subcommand("train", "learn merges from a corpus");
  bpe_train->add_option("--input", b_input)->required();
  bpe_train->add_option("--vocab-size", b_vocab)->required();
  bpe_train->add_option("--output", b_output)->required();
  auto* bpe_encode = bpe->add_subcommand("encode", "text to space-separated token ids");
  bpe_encode->add_option("--tokenizer", b_tokenizer)->required();
  bpe_encode->add_option("--input", b_input)->required();
  bpe_encode->add_option("--output", b_output)->required();
  auto* bpe_decode = bpe->add_subcommand("decode", "token ids back to text");
  bpe_decode->add_option("--tokenizer", b_tokenizer)->required();
  bpe_decode->add_option("--input", b_input)->required();
  bpe_decode->add_option("--output", b_output)->required();

  // ngram
  auto* ngram = app.add_subcommand("ngram", "modified Kneser-Ney n-gram models");
  ngram->require_subcommand(1);
  std::string g_tokenizer, g_input, g_arpa;
  int g_order = 6;
  auto* ngram_train = ngram->add_subcommand("train", "count, smooth and export ARPA");
  ngram_train->add_option("--order", g_order);
  ngram_train->add_option("--tokenizer", g_tokenizer)->required();
  ngram_train->add_option("--input", g_input)->required();
  ngram_train->add_option("--arpa", g_arpa)->required();
  auto* ngram_score = ngram->add_subcommand("score", "score a text file with an ARPA model");
  ngram_score->add_option("--arpa", g_arpa)->required();
  ngram_score->add_option("--tokenizer", g_tokenizer)->required();
  ngram_score->add_option("--input", g_input)->required();

  // nn
  auto* nn = app.add_subcommand("nn", "neural language models");
  nn->require_subcommand(1);
  std::string n_arch, n_config, n_tokenizer, n_train, n_valid, n_out;
  auto* nn_train = nn->add_subcommand("train", "train a neural LM");
  nn_train->add_option("--arch", n_arch, "ffnn|lstm|awd-lstm|qrnn|transformer");
  nn_train->add_option("--config", n_config, "[model]/[train] key=value file");
  nn_train->add_option("--tokenizer", n_tokenizer)->required();
  nn_train->add_option("--train", n_train)->required();
  nn_train->add_option("--valid", n_valid)->required();
  nn_train->add_option("--out", n_out)->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on a test file");
  std::string e_model, e_arpa, e_tokenizer, e_test, e_report;
  int e_block = 0, e_stride = 0;
  eval_cmd->add_option("--model", e_model, "neural checkpoint");
  eval_cmd->add_option("--arpa", e_arpa, "ARPA n-gram model");
  eval_cmd->add_option("--tokenizer", e_tokenizer)->required();
  eval_cmd->add_option("--test", e_test)->required();
  eval_cmd->add_option("--report", e_report, "JSON report output path");
  eval_cmd->add_option("--block", e_block, "transformer eval block size");
  eval_cmd->add_option("--stride", e_stride, "transformer eval stride");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "end-to-end experiment recipes");
  experiment->require_subcommand(1);
  std::string x_config, x_outdir = "runs";
  auto* exp_run = experiment->add_subcommand("run", "prepare, tokenize, train, evaluate");
  exp_run->add_option("config", x_config, "experiment config file")->required();
  exp_run->add_option("--out-dir", x_outdir, "runs directory");
  auto* exp_validate = experiment->add_subcommand("validate", "parse and validate a config");
  exp_validate->add_option("config", x_config, "experiment config file")->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) global.seed = seed_value;
  if (global.threads > 0) {
#ifdef _OPENMP
    omp_set_num_threads(global.threads);
#endif
  }

  try {
    if (prepare->parsed()) {
      cmd_corpus_prepare(c_input, c_outdir, c_split, c_noclean, global.verbose);
    } else if (concat->parsed()) {
      cmd_corpus_concat(c_inputs, c_output);
    } else if (stats->parsed()) {
      cmd_corpus_stats(c_input);
    } else if (bpe_train->parsed()) {
      cmd_bpe_train(b_input, b_vocab, b_output);
    } else if (bpe_encode->parsed()) {
      cmd_bpe_encode(b_tokenizer, b_input, b_output);
    } else if (bpe_decode->parsed()) {
      cmd_bpe_decode(b_tokenizer, b_input, b_output);
    } else if (ngram_train->parsed()) {
      cmd_ngram_train(g_order, g_tokenizer, g_input, g_arpa);
    } else if (ngram_score->parsed()) {
      cmd_ngram_score(g_arpa, g_tokenizer, g_input, global.verbose);
    } else if (nn_train->parsed()) {
      cmd_nn_train(n_arch, n_config, n_tokenizer, n_train, n_valid, n_out, global.seed,
                   global.verbose);
    } else if (eval_cmd->parsed()) {
      cmd_eval(e_model, e_arpa, e_tokenizer, e_test, e_report, e_block, e_stride, global.verbose);
    } else if (exp_run->parsed()) {
      const auto result = salm::run_experiment(x_config, x_outdir, global.seed, global.verbose);
      std::cout << "run_dir\t" << result.run_dir << "\nbpc\t" << result.report.bpc << "\n";
    } else if (exp_validate->parsed()) {
      salm::validate_config(salm::parse_config(read_file(x_config), x_config));
      std::cout << "ok\n";
    }
  } catch (const salm::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const salm::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const salm::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
