#include "salm/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "salm/error.hpp"
#include "salm/train.hpp"

namespace fs = std::filesystem;

namespace salm {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << content;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> corpus_stream(const TokenizerModel& tok, const RawCorpus& corpus) {
  std::vector<int> stream;
  for (const auto& line : encode_lines(tok, corpus.lines)) {
    stream.insert(stream.end(), line.ids.begin(), line.ids.end());
  }
  return stream;
}

}  // namespace

std::array<double, 3> parse_split(const std::string& text) {
  const auto parts = split_list(text);
  if (parts.size() != 3) {
    throw ConfigError("split needs three comma-separated numbers, got '" + text + "'");
  }
  std::array<double, 3> ratios{};
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    char* end = nullptr;
    ratios[i] = std::strtod(parts[i].c_str(), &end);
    if (end == parts[i].c_str() || *end != '\0') {
      throw ConfigError("bad split component '" + parts[i] + "'");
    }
    sum += ratios[i];
  }
  if (sum > 3.0) {  // looks like percentages
    for (auto& r : ratios) r /= 100.0;
  }
  return ratios;
}

ExperimentResult run_experiment(const std::string& config_path, const std::string& runs_root,
                                std::optional<std::uint64_t> seed_override, bool verbose) {
  const std::string config_text = read_file(config_path);
  std::vector<std::string> warnings;
  const ExperimentConfig config = parse_config(config_text, config_path, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  validate_config(config);

  const std::string name = fs::path(config_path).stem().string();
  const fs::path run_dir = fs::path(runs_root) / name;
  fs::create_directories(run_dir);

  ExperimentResult result;
  result.run_dir = run_dir.string();
  write_file((run_dir / "config.conf").string(), config_text);

  // Corpus stage: clean + split each input; training data concatenates the
  // train splits (multilingual training), validation/test come from the
  // target corpus only.
  const auto input_paths = split_list(config.get_or("corpus", "inputs", ""));
  if (input_paths.empty()) throw ConfigError("[corpus] inputs is empty");
  const std::string target = config.get_or("corpus", "target", input_paths[0]);
  const bool clean = config.get_bool("corpus", "clean", true);
  const auto ratios = parse_split(config.get_or("corpus", "split", "80,10,10"));

  std::vector<RawCorpus> train_parts;
  std::optional<CorpusSplit> target_split;
  for (const auto& path : input_paths) {
    RawCorpus corpus = load_corpus(path);
    if (clean) corpus = clean_text(corpus);
    CorpusSplit split = split_corpus(corpus, ratios);
    if (path == target) target_split = split;
    train_parts.push_back(std::move(split.train));
  }
  if (!target_split) {
    throw ConfigError("[corpus] target '" + target + "' is not one of the inputs");
  }
  const RawCorpus train_corpus =
      train_parts.size() == 1 ? train_parts[0] : concat_corpora(train_parts);

  // Tokenizer: learned from training text only.
  const int vocab_size = static_cast<int>(config.get_int("tokenizer", "vocab_size", 512));
  const TokenizerModel tok = train_bpe(train_corpus, vocab_size);
  result.tokenizer_path = (run_dir / "tokenizer.bpe").string();
  save_tokenizer(tok, result.tokenizer_path);
  const std::string tok_hash = tokenizer_hash(tok);

  const std::string arch = config.get_or("model", "arch", "lstm");
  const std::string model_tag = arch + "@" + train_corpus.source_name;
  EvalReport report;

  if (arch == "ngram") {
    const int order = static_cast<int>(config.get_int("model", "order", 6));
    const auto sequences = encode_lines(tok, train_corpus.lines);
    const CountTable counts = count_ngrams(sequences, order, tok.vocab_size());
    const NGramModel model = estimate_mkn(counts);
    result.model_path = (run_dir / "model.arpa").string();
    export_arpa(model, result.model_path);
    write_train_log(TrainLog{}, (run_dir / "train.log").string());  // layout parity
    report = evaluate_ngram(model, tok, target_split->test, target_split->test.source_name,
                            model_tag);
  } else {
    LmConfig mcfg;
    mcfg.arch = parse_arch(arch);
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
    mcfg.dropout.input = config.get_double("model", "dropout_input", 0.0);
    mcfg.dropout.hidden = config.get_double("model", "dropout_hidden", 0.0);
    mcfg.dropout.output = config.get_double("model", "dropout_output", 0.0);
    mcfg.dropout.embedding = config.get_double("model", "dropout_embedding", 0.0);
    mcfg.dropout.weight = config.get_double("model", "dropout_weight", 0.0);
    mcfg.dropout.attention = config.get_double("model", "dropout_attention", 0.0);
    mcfg.ar_alpha = config.get_double("model", "ar_alpha", 0.0);
    mcfg.tar_beta = config.get_double("model", "tar_beta", 0.0);
    mcfg.stride_eval = std::min(mcfg.stride_eval, mcfg.block_size);
    mcfg.validate();

    TrainConfig tcfg;
    tcfg.lr = config.get_double("train", "lr",
                                mcfg.arch == Arch::lstm || mcfg.arch == Arch::awd_lstm ||
                                        mcfg.arch == Arch::qrnn
                                    ? 1.0
                                    : 1e-3);
    tcfg.batch_size = static_cast<int>(config.get_int("train", "batch_size", 16));
    tcfg.max_steps = config.get_int("train", "max_steps", 2000);
    tcfg.max_epochs = static_cast<int>(config.get_int("train", "max_epochs", 10));
    tcfg.eval_interval = static_cast<int>(config.get_int("train", "eval_interval", 200));
    tcfg.patience = static_cast<int>(config.get_int("train", "patience", 4));
    tcfg.clip_norm = config.get_double("train", "clip_norm", 0.25);
    tcfg.weight_decay = config.get_double("train", "weight_decay", 0.0);
    tcfg.variable_bptt = static_cast<int>(config.get_int("train", "variable_bptt", -1));
    tcfg.chunk_len = static_cast<int>(config.get_int("train", "chunk_len", 64));
    tcfg.seed = seed_override ? *seed_override
                              : static_cast<std::uint64_t>(config.get_int("train", "seed", 0));

    const std::vector<int> train_stream = corpus_stream(tok, train_corpus);
    const std::vector<int> valid_stream = corpus_stream(tok, target_split->valid);
    TrainResult trained = train_lm(mcfg, tcfg, train_stream, valid_stream, tok_hash);
    if (trained.best.tensors.empty()) {
      throw NumericError("training produced no finite checkpoint");
    }
    result.model_path = (run_dir / "model.ckpt").string();
    save_checkpoint(trained.best, result.model_path);
    write_train_log(trained.log, (run_dir / "train.log").string());
    if (verbose) {
      std::cerr << "trained " << arch << " for " << trained.steps_run
                << " steps, best valid loss " << trained.best_valid_loss << " nats\n";
    }

    const int block = static_cast<int>(config.get_int("eval", "block", mcfg.block_size));
    const int stride = static_cast<int>(config.get_int("eval", "stride", mcfg.stride_eval));
    const Checkpoint best = load_checkpoint(result.model_path);
    report = evaluate_checkpoint(best, tok, target_split->test, target_split->test.source_name,
                                 model_tag, block, stride);
  }

  result.report_path = (run_dir / "report.json").string();
  write_file(result.report_path, report_to_json(report));
  if (verbose) {
    std::cerr << "report: bpc " << report.bpc << ", ppl " << report.perplexity << ", unk rate "
              << report.unk_rate << "\n";
  }
  result.report = report;
  return result;
}

}  // namespace salm
