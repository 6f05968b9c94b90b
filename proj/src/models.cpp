#include "salm/models.hpp"

#include <cstdlib>

#include "salm/error.hpp"

namespace salm {

std::string arch_name(Arch arch) {
  switch (arch) {
    case Arch::ffnn: return "ffnn";
    case Arch::lstm: return "lstm";
    case Arch::awd_lstm: return "awd-lstm";
    case Arch::qrnn: return "qrnn";
    case Arch::transformer: return "transformer";
  }
  throw ConfigError("unknown architecture enum value");
}

Arch parse_arch(const std::string& name) {
  if (name == "ffnn") return Arch::ffnn;
  if (name == "lstm") return Arch::lstm;
  if (name == "awd-lstm") return Arch::awd_lstm;
  if (name == "qrnn") return Arch::qrnn;
  if (name == "transformer") return Arch::transformer;
  throw ConfigError("unknown architecture '" + name +
                    "' (expected ffnn|lstm|awd-lstm|qrnn|transformer)");
}

int LmConfig::projection_width() const {
  // The final layer feeds the output projection; tying shares the embedding
  // matrix, which forces the width to emb_dim.
  if (arch == Arch::ffnn || arch == Arch::transformer) {
    return arch == Arch::transformer ? emb_dim : hidden_dim;
  }
  return tie_weights ? emb_dim : hidden_dim;
}

void LmConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
  if (emb_dim <= 0 || hidden_dim <= 0 || n_layers <= 0) {
    throw ConfigError("emb_dim, hidden_dim and n_layers must be positive");
  }
  const double rates[] = {dropout.input,     dropout.hidden, dropout.output,
                          dropout.embedding, dropout.weight, dropout.attention};
  for (double r : rates) {
    if (r < 0.0 || r >= 1.0) throw ConfigError("dropout rates must be in [0,1)");
  }
  if (arch == Arch::ffnn) {
    if (context_order < 2) throw ConfigError("ffnn context_order must be at least 2");
    if (tie_weights && hidden_dim != emb_dim) {
      throw ConfigError("tied FFNN needs hidden_dim == emb_dim (projection input is " +
                        std::to_string(hidden_dim) + ", embedding is " + std::to_string(emb_dim) +
                        ")");
    }
  }
  if (arch == Arch::transformer) {
    if (n_heads <= 0 || emb_dim % n_heads != 0) {
      throw ConfigError("transformer emb_dim must be divisible by n_heads");
    }
    if (block_size <= 0) throw ConfigError("transformer block_size must be positive");
    if (stride_train < 1 || stride_train > block_size || stride_eval < 1 ||
        stride_eval > block_size) {
      throw ConfigError("strides must be in 1..block_size");
    }
  }
  if ((arch == Arch::lstm || arch == Arch::awd_lstm || arch == Arch::qrnn) && bptt_len < 2) {
    throw ConfigError("bptt_len must be at least 2");
  }
  if (ar_alpha < 0.0 || tar_beta < 0.0) throw ConfigError("ar_alpha/tar_beta must be >= 0");
}

std::vector<std::pair<std::string, std::string>> LmConfig::to_meta() const {
  std::vector<std::pair<std::string, std::string>> meta;
  meta.emplace_back("arch", arch_name(arch));
  meta.emplace_back("vocab_size", std::to_string(vocab_size));
  meta.emplace_back("emb_dim", std::to_string(emb_dim));
  meta.emplace_back("hidden_dim", std::to_string(hidden_dim));
  meta.emplace_back("n_layers", std::to_string(n_layers));
  meta.emplace_back("context_order", std::to_string(context_order));
  meta.emplace_back("n_heads", std::to_string(n_heads));
  meta.emplace_back("tie_weights", tie_weights ? "1" : "0");
  meta.emplace_back("ar_alpha", detail::fmt_double(ar_alpha));
  meta.emplace_back("tar_beta", detail::fmt_double(tar_beta));
  meta.emplace_back("bptt_len", std::to_string(bptt_len));
  meta.emplace_back("block_size", std::to_string(block_size));
  meta.emplace_back("stride_train", std::to_string(stride_train));
  meta.emplace_back("stride_eval", std::to_string(stride_eval));
  meta.emplace_back("dropout_input", detail::fmt_double(dropout.input));
  meta.emplace_back("dropout_hidden", detail::fmt_double(dropout.hidden));
  meta.emplace_back("dropout_output", detail::fmt_double(dropout.output));
  meta.emplace_back("dropout_embedding", detail::fmt_double(dropout.embedding));
  meta.emplace_back("dropout_weight", detail::fmt_double(dropout.weight));
  meta.emplace_back("dropout_attention", detail::fmt_double(dropout.attention));
  return meta;
}

LmConfig LmConfig::from_meta(const Checkpoint& ckpt) {
  LmConfig cfg;
  cfg.arch = parse_arch(ckpt.meta_or_throw("arch"));
  cfg.vocab_size = std::stoi(ckpt.meta_or_throw("vocab_size"));
  cfg.emb_dim = std::stoi(ckpt.meta_or_throw("emb_dim"));
  cfg.hidden_dim = std::stoi(ckpt.meta_or_throw("hidden_dim"));
  cfg.n_layers = std::stoi(ckpt.meta_or_throw("n_layers"));
  cfg.context_order = std::stoi(ckpt.meta_or_throw("context_order"));
  cfg.n_heads = std::stoi(ckpt.meta_or_throw("n_heads"));
  cfg.tie_weights = ckpt.meta_or_throw("tie_weights") == "1";
  cfg.ar_alpha = std::strtod(ckpt.meta_or_throw("ar_alpha").c_str(), nullptr);
  cfg.tar_beta = std::strtod(ckpt.meta_or_throw("tar_beta").c_str(), nullptr);
  cfg.bptt_len = std::stoi(ckpt.meta_or_throw("bptt_len"));
  cfg.block_size = std::stoi(ckpt.meta_or_throw("block_size"));
  cfg.stride_train = std::stoi(ckpt.meta_or_throw("stride_train"));
  cfg.stride_eval = std::stoi(ckpt.meta_or_throw("stride_eval"));
  cfg.dropout.input = std::strtod(ckpt.meta_or_throw("dropout_input").c_str(), nullptr);
  cfg.dropout.hidden = std::strtod(ckpt.meta_or_throw("dropout_hidden").c_str(), nullptr);
  cfg.dropout.output = std::strtod(ckpt.meta_or_throw("dropout_output").c_str(), nullptr);
  cfg.dropout.embedding = std::strtod(ckpt.meta_or_throw("dropout_embedding").c_str(), nullptr);
  cfg.dropout.weight = std::strtod(ckpt.meta_or_throw("dropout_weight").c_str(), nullptr);
  cfg.dropout.attention = std::strtod(ckpt.meta_or_throw("dropout_attention").c_str(), nullptr);
  cfg.validate();
  return cfg;
}

}  // namespace salm
