#pragma once

#include <cstdio>
#include <string>
#include <variant>
#include <vector>

#include "salm/checkpoint.hpp"
#include "salm/optim.hpp"
#include "salm/tensor.hpp"

namespace salm {

enum class Arch { ffnn, lstm, awd_lstm, qrnn, transformer };

std::string arch_name(Arch arch);
Arch parse_arch(const std::string& name);

struct DropoutRates {
  double input = 0.0;      // first-layer / embedded-input dropout
  double hidden = 0.0;     // between layers / residual dropout
  double output = 0.0;     // final hidden output dropout
  double embedding = 0.0;  // whole-row (word type) embedding dropout
  double weight = 0.0;     // DropConnect on recurrent weights
  double attention = 0.0;  // attention weight dropout
};

struct LmConfig {
  Arch arch = Arch::lstm;
  int vocab_size = 0;
  int emb_dim = 64;
  int hidden_dim = 64;
  int n_layers = 1;
  int context_order = 2;  // FFNN: predict from context_order-1 tokens
  int n_heads = 4;        // transformer
  DropoutRates dropout;
  bool tie_weights = true;
  double ar_alpha = 0.0;
  double tar_beta = 0.0;
  int bptt_len = 32;
  int block_size = 64;
  int stride_train = 16;
  int stride_eval = 64;

  void validate() const;
  /// Width of the final projection input; tying requires it to equal emb_dim.
  int projection_width() const;

  std::vector<std::pair<std::string, std::string>> to_meta() const;
  static LmConfig from_meta(const Checkpoint& ckpt);
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

template <typename T>
Tensor<T> weight_init(RngStream& rng, int rows, int cols) {
  return Tensor<T>::randn(rng, {rows, cols}, static_cast<T>(1.0 / std::sqrt(double(rows))), true);
}

/// Dropout helper: identity when not training or rate is zero.
template <typename T>
Tensor<T> dropped(const Tensor<T>& x, bool training, double rate, RngStream& rng) {
  if (!training || rate <= 0.0) return x;
  return mul(x, bernoulli_mask<T>(rng, x.shape(), 1.0 - rate));
}

/// Whole-row mask: one Bernoulli draw per row, every entry of the row 0 or
/// 1/keep_prob (word-type embedding dropout).
template <typename T>
Tensor<T> row_mask(RngStream& rng, int rows, int cols, double keep_prob) {
  Tensor<T> mask = Tensor<T>::zeros({rows, cols});
  const T inv = static_cast<T>(1.0 / keep_prob);
  for (int r = 0; r < rows; ++r) {
    const T v = rng.next_bernoulli(keep_prob) ? inv : T(0);
    auto row = mask.data().subspan(static_cast<std::size_t>(r) * cols, cols);
    std::fill(row.begin(), row.end(), v);
  }
  return mask;
}

/// Mask of shape [rows_per_tile*cols] tiled `tiles` times: variational masks
/// are drawn once per batch row and reused at every timestep.
template <typename T>
Tensor<T> tiled_mask(RngStream& rng, int tile_rows, int cols, int tiles, double keep_prob) {
  Tensor<T> base = bernoulli_mask<T>(rng, {tile_rows, cols}, keep_prob);
  Tensor<T> full = Tensor<T>::zeros({tile_rows * tiles, cols});
  for (int t = 0; t < tiles; ++t) {
    std::copy_n(base.data().data(), base.size(),
                full.data().data() + static_cast<std::size_t>(t) * base.size());
  }
  return full;
}

}  // namespace detail

/// Logits plus any auxiliary loss terms (activation regularization).
template <typename T>
struct LmOutput {
  Tensor<T> logits;   // [rows, V]
  Tensor<T> penalty;  // scalar; undefined when no penalty applies
};

// ---------------------------------------------------------------------------
// FFNN

template <typename T>
struct FfnnLm {
  LmConfig cfg;
  Tensor<T> embedding;  // [V, emb]
  std::vector<Tensor<T>> w;
  std::vector<Tensor<T>> b;
  Tensor<T> out_w;  // [V, hidden], absent when tied
  Tensor<T> out_b;  // [V]

  static FfnnLm init(const LmConfig& cfg, RngStream& rng) {
    cfg.validate();
    FfnnLm m;
    m.cfg = cfg;
    m.embedding = Tensor<T>::randn(rng, {cfg.vocab_size, cfg.emb_dim}, T(0.1), true);
    const int ctx = cfg.context_order - 1;
    int in_dim = ctx * cfg.emb_dim;
    for (int l = 0; l < cfg.n_layers; ++l) {
      m.w.push_back(detail::weight_init<T>(rng, in_dim, cfg.hidden_dim));
      m.b.push_back(Tensor<T>::zeros({cfg.hidden_dim}, true));
      in_dim = cfg.hidden_dim;
    }
    if (!cfg.tie_weights) {
      m.out_w = detail::weight_init<T>(rng, cfg.vocab_size, cfg.hidden_dim);
    }
    m.out_b = Tensor<T>::zeros({cfg.vocab_size}, true);
    return m;
  }

  /// contexts: [batch * (context_order-1)] ids, row-major per example.
  Tensor<T> forward(const std::vector<int>& contexts, int batch, bool training, RngStream& rng) {
    const int ctx = cfg.context_order - 1;
    if (static_cast<int>(contexts.size()) != batch * ctx) {
      throw ConfigError("ffnn_forward: expected " + std::to_string(batch * ctx) +
                        " context ids, got " + std::to_string(contexts.size()));
    }
    Tensor<T> x = embedding_rows(embedding, contexts);     // [B*ctx, emb]
    x = reshape(x, {batch, ctx * cfg.emb_dim});            // concatenated context embeddings
    for (std::size_t l = 0; l < w.size(); ++l) {
      x = relu(add(matmul(x, w[l]), b[l]));
      x = detail::dropped(x, training, cfg.dropout.hidden, rng);
    }
    Tensor<T> logits = cfg.tie_weights ? matmul(x, embedding, false, true)
                                       : matmul(x, out_w, false, true);
    return add(logits, out_b);
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("embedding", embedding);
    for (std::size_t l = 0; l < w.size(); ++l) {
      out.emplace_back("layer" + std::to_string(l) + ".w", w[l]);
      out.emplace_back("layer" + std::to_string(l) + ".b", b[l]);
    }
    if (!cfg.tie_weights) out.emplace_back("out.w", out_w);
    out.emplace_back("out.b", out_b);
    return out;
  }
};

// ---------------------------------------------------------------------------
// LSTM (basic and AWD-regularized; the cell is shared)

template <typename T>
struct RnnState {
  std::vector<Tensor<T>> h;  // per layer [B, dim]
  std::vector<Tensor<T>> c;
};

template <typename T>
struct LstmLm {
  LmConfig cfg;
  Tensor<T> embedding;
  std::vector<Tensor<T>> wx;    // [in_dim, 4*dim]
  std::vector<Tensor<T>> wh;    // [dim, 4*dim]
  std::vector<Tensor<T>> bias;  // [4*dim]
  Tensor<T> out_w;
  Tensor<T> out_b;

  int layer_dim(int l) const {
    return (l == cfg.n_layers - 1) ? cfg.projection_width() : cfg.hidden_dim;
  }
  int layer_in(int l) const { return l == 0 ? cfg.emb_dim : layer_dim(l - 1); }
  bool awd() const { return cfg.arch == Arch::awd_lstm; }

  static LstmLm init(const LmConfig& cfg, RngStream& rng) {
    cfg.validate();
    LstmLm m;
    m.cfg = cfg;
    m.embedding = Tensor<T>::randn(rng, {cfg.vocab_size, cfg.emb_dim}, T(0.1), true);
    for (int l = 0; l < cfg.n_layers; ++l) {
      m.wx.push_back(detail::weight_init<T>(rng, m.layer_in(l), 4 * m.layer_dim(l)));
      m.wh.push_back(detail::weight_init<T>(rng, m.layer_dim(l), 4 * m.layer_dim(l)));
      m.bias.push_back(Tensor<T>::zeros({4 * m.layer_dim(l)}, true));
    }
    if (!cfg.tie_weights) {
      m.out_w = detail::weight_init<T>(rng, cfg.vocab_size, m.layer_dim(cfg.n_layers - 1));
    }
    m.out_b = Tensor<T>::zeros({cfg.vocab_size}, true);
    return m;
  }

  RnnState<T> initial_state(int batch) const {
    RnnState<T> s;
    for (int l = 0; l < cfg.n_layers; ++l) {
      s.h.push_back(Tensor<T>::zeros({batch, layer_dim(l)}));
      s.c.push_back(Tensor<T>::zeros({batch, layer_dim(l)}));
    }
    return s;
  }

  /// ids: [batch, time] row-major (b*time + t). Returns logits in t-major row
  /// order (t*batch + b) and updates `state` in place (detached).
  LmOutput<T> forward(const std::vector<int>& ids, int batch, int time, RnnState<T>& state,
                      bool training, RngStream& rng) {
    if (static_cast<int>(ids.size()) != batch * time) {
      throw ConfigError("lstm_forward: id count does not match batch*time");
    }
    for (int l = 0; l < cfg.n_layers; ++l) {
      if (state.h[l].dim(0) != batch || state.h[l].dim(1) != layer_dim(l)) {
        throw ConfigError("lstm_forward: state shape " + shape_str(state.h[l].shape()) +
                          " does not match batch " + std::to_string(batch) + ", dim " +
                          std::to_string(layer_dim(l)));
      }
    }
    const bool var_dropout = awd() && training;

    // AWD: one mask per batch for the embedding table rows, the recurrent
    // weights, and each variational dropout site.
    Tensor<T> emb_used = embedding;
    if (training && awd() && cfg.dropout.embedding > 0.0) {
      emb_used = mul(embedding, detail::row_mask<T>(rng, cfg.vocab_size, cfg.emb_dim,
                                                    1.0 - cfg.dropout.embedding));
    }
    std::vector<Tensor<T>> wh_used;
    for (int l = 0; l < cfg.n_layers; ++l) {
      if (training && awd() && cfg.dropout.weight > 0.0) {
        wh_used.push_back(
            mul(wh[l], bernoulli_mask<T>(rng, wh[l].shape(), 1.0 - cfg.dropout.weight)));
      } else {
        wh_used.push_back(wh[l]);
      }
    }
    Tensor<T> in_mask, out_mask;
    std::vector<Tensor<T>> mid_mask(cfg.n_layers);
    if (var_dropout && cfg.dropout.input > 0.0) {
      in_mask = bernoulli_mask<T>(rng, {batch, cfg.emb_dim}, 1.0 - cfg.dropout.input);
    }
    if (var_dropout && cfg.dropout.hidden > 0.0) {
      for (int l = 0; l + 1 < cfg.n_layers; ++l) {
        mid_mask[l] = bernoulli_mask<T>(rng, {batch, layer_dim(l)}, 1.0 - cfg.dropout.hidden);
      }
    }
    if (var_dropout && cfg.dropout.output > 0.0) {
      out_mask = bernoulli_mask<T>(rng, {batch, layer_dim(cfg.n_layers - 1)},
                                   1.0 - cfg.dropout.output);
    }

    std::vector<Tensor<T>> h = state.h;
    std::vector<Tensor<T>> c = state.c;
    std::vector<Tensor<T>> raw_top;      // pre-dropout final layer outputs (TAR)
    std::vector<Tensor<T>> dropped_top;  // post-dropout final layer outputs (AR, logits)

    std::vector<int> ids_t(batch);
    for (int t = 0; t < time; ++t) {
      for (int bi = 0; bi < batch; ++bi) ids_t[bi] = ids[bi * time + t];
      Tensor<T> x = embedding_rows(emb_used, ids_t);
      if (awd()) {
        if (in_mask.defined()) x = mul(x, in_mask);
      } else {
        x = detail::dropped(x, training, cfg.dropout.input, rng);
      }
      for (int l = 0; l < cfg.n_layers; ++l) {
        const int d = layer_dim(l);
        Tensor<T> pre = add(add(matmul(x, wx[l]), matmul(h[l], wh_used[l])), bias[l]);
        Tensor<T> gi = sigmoid(slice_cols(pre, 0, d));
        Tensor<T> gf = sigmoid(slice_cols(pre, d, d));
        Tensor<T> gg = tanh(slice_cols(pre, 2 * d, d));
        Tensor<T> go = sigmoid(slice_cols(pre, 3 * d, d));
        c[l] = add(mul(gf, c[l]), mul(gi, gg));
        h[l] = mul(go, tanh(c[l]));
        x = h[l];
        if (l + 1 < cfg.n_layers) {
          if (awd()) {
            if (mid_mask[l].defined()) x = mul(x, mid_mask[l]);
          } else {
            x = detail::dropped(x, training, cfg.dropout.hidden, rng);
          }
        }
      }
      raw_top.push_back(h[cfg.n_layers - 1]);
      Tensor<T> out_t = x;
      if (awd()) {
        if (out_mask.defined()) out_t = mul(out_t, out_mask);
      } else {
        out_t = detail::dropped(out_t, training, cfg.dropout.output, rng);
      }
      dropped_top.push_back(out_t);
    }

    Tensor<T> stacked = time == 1 ? dropped_top[0] : concat_rows(dropped_top);
    LmOutput<T> out;
    out.logits = add(cfg.tie_weights ? matmul(stacked, embedding, false, true)
                                     : matmul(stacked, out_w, false, true),
                     out_b);
    if (training && (cfg.ar_alpha > 0.0 || cfg.tar_beta > 0.0)) {
      Tensor<T> penalty;
      if (cfg.ar_alpha > 0.0) {
        penalty = scale(mean_all(mul(stacked, stacked)), static_cast<T>(cfg.ar_alpha));
      }
      if (cfg.tar_beta > 0.0 && time > 1) {
        std::vector<Tensor<T>> diffs;
        for (int t = 1; t < time; ++t) {
          Tensor<T> d = sub(raw_top[t], raw_top[t - 1]);
          diffs.push_back(mul(d, d));
        }
        Tensor<T> tar = scale(mean_all(diffs.size() == 1 ? diffs[0] : concat_rows(diffs)),
                              static_cast<T>(cfg.tar_beta));
        penalty = penalty.defined() ? add(penalty, tar) : tar;
      }
      out.penalty = penalty;
    }
    for (int l = 0; l < cfg.n_layers; ++l) {
      state.h[l] = h[l].detach();
      state.c[l] = c[l].detach();
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("embedding", embedding);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l);
      out.emplace_back(p + ".wx", wx[l]);
      out.emplace_back(p + ".wh", wh[l]);
      out.emplace_back(p + ".bias", bias[l]);
    }
    if (!cfg.tie_weights) out.emplace_back("out.w", out_w);
    out.emplace_back("out.b", out_b);
    return out;
  }
};

// ---------------------------------------------------------------------------
// QRNN: convolution over the input, fo-pooling recurrence

template <typename T>
struct QrnnState {
  std::vector<Tensor<T>> c;  // per layer [B, dim]
  Tensor<T> x_prev;          // previous embedded input for the width-2 conv
};

template <typename T>
struct QrnnLm {
  LmConfig cfg;
  Tensor<T> embedding;
  std::vector<Tensor<T>> w_cur;   // [in_dim, 3*dim]
  std::vector<Tensor<T>> w_prev;  // layer 0 only: [in_dim, 3*dim]
  std::vector<Tensor<T>> bias;    // [3*dim]
  Tensor<T> out_w;
  Tensor<T> out_b;

  int layer_dim(int l) const {
    return (l == cfg.n_layers - 1) ? cfg.projection_width() : cfg.hidden_dim;
  }
  int layer_in(int l) const { return l == 0 ? cfg.emb_dim : layer_dim(l - 1); }

  static QrnnLm init(const LmConfig& cfg, RngStream& rng) {
    cfg.validate();
    QrnnLm m;
    m.cfg = cfg;
    m.embedding = Tensor<T>::randn(rng, {cfg.vocab_size, cfg.emb_dim}, T(0.1), true);
    for (int l = 0; l < cfg.n_layers; ++l) {
      m.w_cur.push_back(detail::weight_init<T>(rng, m.layer_in(l), 3 * m.layer_dim(l)));
      if (l == 0) {
        m.w_prev.push_back(detail::weight_init<T>(rng, m.layer_in(0), 3 * m.layer_dim(0)));
      }
      m.bias.push_back(Tensor<T>::zeros({3 * m.layer_dim(l)}, true));
    }
    if (!cfg.tie_weights) {
      m.out_w = detail::weight_init<T>(rng, cfg.vocab_size, m.layer_dim(cfg.n_layers - 1));
    }
    m.out_b = Tensor<T>::zeros({cfg.vocab_size}, true);
    return m;
  }

  QrnnState<T> initial_state(int batch) const {
    QrnnState<T> s;
    for (int l = 0; l < cfg.n_layers; ++l) s.c.push_back(Tensor<T>::zeros({batch, layer_dim(l)}));
    s.x_prev = Tensor<T>::zeros({batch, cfg.emb_dim});
    return s;
  }

  /// ids row-major [batch, time]; logits t-major like the LSTM. The gate
  /// convolutions run as one matmul over all timesteps; only the pooling
  /// scan is sequential.
  LmOutput<T> forward(const std::vector<int>& ids, int batch, int time, QrnnState<T>& state,
                      bool training, RngStream& rng) {
    if (static_cast<int>(ids.size()) != batch * time) {
      throw ConfigError("qrnn_forward: id count does not match batch*time");
    }
    std::vector<int> ids_tm(ids.size());  // t-major
    for (int t = 0; t < time; ++t) {
      for (int bi = 0; bi < batch; ++bi) ids_tm[t * batch + bi] = ids[bi * time + t];
    }
    Tensor<T> x = embedding_rows(embedding, ids_tm);  // [T*B, emb]
    if (training && cfg.dropout.input > 0.0) {
      x = mul(x, detail::tiled_mask<T>(rng, batch, cfg.emb_dim, time, 1.0 - cfg.dropout.input));
    }

    // Causal width-2 input for layer 0: rows shifted down one timestep, with
    // the carried final input of the previous batch at t=0.
    Tensor<T> x_shift =
        time == 1 ? state.x_prev
                  : concat_rows<T>({state.x_prev, slice_rows(x, 0, (time - 1) * batch)});

    std::vector<Tensor<T>> c = state.c;
    Tensor<T> layer_in_cur = x;
    std::vector<Tensor<T>> top_raw;
    Tensor<T> stacked;
    for (int l = 0; l < cfg.n_layers; ++l) {
      const int d = layer_dim(l);
      Tensor<T> zfo = add(matmul(layer_in_cur, w_cur[l]), bias[l]);
      if (l == 0) zfo = add(zfo, matmul(x_shift, w_prev[0]));
      Tensor<T> z_all = tanh(slice_cols(zfo, 0, d));
      Tensor<T> f_all = sigmoid(slice_cols(zfo, d, d));
      Tensor<T> o_all = sigmoid(slice_cols(zfo, 2 * d, d));

      const Tensor<T> ones = Tensor<T>::filled({batch, d}, T(1));
      std::vector<Tensor<T>> hs;
      hs.reserve(time);
      for (int t = 0; t < time; ++t) {
        Tensor<T> z = slice_rows(z_all, t * batch, batch);
        Tensor<T> f = slice_rows(f_all, t * batch, batch);
        Tensor<T> o = slice_rows(o_all, t * batch, batch);
        c[l] = add(mul(f, c[l]), mul(sub(ones, f), z));
        hs.push_back(mul(o, c[l]));
      }
      Tensor<T> h_all = time == 1 ? hs[0] : concat_rows(hs);
      if (l == cfg.n_layers - 1) {
        for (auto& ht : hs) top_raw.push_back(ht);
        stacked = h_all;
      } else {
        layer_in_cur = training && cfg.dropout.hidden > 0.0
                           ? mul(h_all, detail::tiled_mask<T>(rng, batch, d, time,
                                                              1.0 - cfg.dropout.hidden))
                           : h_all;
      }
    }
    Tensor<T> out_stack = stacked;
    if (training && cfg.dropout.output > 0.0) {
      out_stack = mul(out_stack,
                      detail::tiled_mask<T>(rng, batch, layer_dim(cfg.n_layers - 1), time,
                                            1.0 - cfg.dropout.output));
    }

    LmOutput<T> out;
    out.logits = add(cfg.tie_weights ? matmul(out_stack, embedding, false, true)
                                     : matmul(out_stack, out_w, false, true),
                     out_b);
    if (training && (cfg.ar_alpha > 0.0 || cfg.tar_beta > 0.0)) {
      Tensor<T> penalty;
      if (cfg.ar_alpha > 0.0) {
        penalty = scale(mean_all(mul(out_stack, out_stack)), static_cast<T>(cfg.ar_alpha));
      }
      if (cfg.tar_beta > 0.0 && time > 1) {
        std::vector<Tensor<T>> diffs;
        for (int t = 1; t < time; ++t) {
          Tensor<T> dl = sub(top_raw[t], top_raw[t - 1]);
          diffs.push_back(mul(dl, dl));
        }
        Tensor<T> tar = scale(mean_all(diffs.size() == 1 ? diffs[0] : concat_rows(diffs)),
                              static_cast<T>(cfg.tar_beta));
        penalty = penalty.defined() ? add(penalty, tar) : tar;
      }
      out.penalty = penalty;
    }

    for (int l = 0; l < cfg.n_layers; ++l) state.c[l] = c[l].detach();
    Tensor<T> last = slice_rows(x, (time - 1) * batch, batch);
    state.x_prev = last.detach();
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("embedding", embedding);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l);
      out.emplace_back(p + ".w_cur", w_cur[l]);
      if (l == 0) out.emplace_back(p + ".w_prev", w_prev[0]);
      out.emplace_back(p + ".bias", bias[l]);
    }
    if (!cfg.tie_weights) out.emplace_back("out.w", out_w);
    out.emplace_back("out.b", out_b);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Transformer decoder (pre-norm blocks, learned positions, causal attention)

template <typename T>
struct TransformerLm {
  struct Block {
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> qkv_w, qkv_b;
    Tensor<T> proj_w, proj_b;
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> fc_w, fc_b;
    Tensor<T> fc2_w, fc2_b;
  };

  LmConfig cfg;
  Tensor<T> embedding;      // [V, emb]
  Tensor<T> pos_embedding;  // [block_size, emb]
  std::vector<Block> blocks;
  Tensor<T> lnf_g, lnf_b;
  Tensor<T> out_w;
  Tensor<T> out_b;

  static TransformerLm init(const LmConfig& cfg, RngStream& rng) {
    cfg.validate();
    TransformerLm m;
    m.cfg = cfg;
    const int e = cfg.emb_dim;
    m.embedding = Tensor<T>::randn(rng, {cfg.vocab_size, e}, T(0.1), true);
    m.pos_embedding = Tensor<T>::randn(rng, {cfg.block_size, e}, T(0.02), true);
    for (int l = 0; l < cfg.n_layers; ++l) {
      Block blk;
      blk.ln1_g = Tensor<T>::filled({e}, T(1), true);
      blk.ln1_b = Tensor<T>::zeros({e}, true);
      blk.qkv_w = detail::weight_init<T>(rng, e, 3 * e);
      blk.qkv_b = Tensor<T>::zeros({3 * e}, true);
      blk.proj_w = detail::weight_init<T>(rng, e, e);
      blk.proj_b = Tensor<T>::zeros({e}, true);
      blk.ln2_g = Tensor<T>::filled({e}, T(1), true);
      blk.ln2_b = Tensor<T>::zeros({e}, true);
      blk.fc_w = detail::weight_init<T>(rng, e, 4 * e);
      blk.fc_b = Tensor<T>::zeros({4 * e}, true);
      blk.fc2_w = detail::weight_init<T>(rng, 4 * e, e);
      blk.fc2_b = Tensor<T>::zeros({e}, true);
      m.blocks.push_back(std::move(blk));
    }
    m.lnf_g = Tensor<T>::filled({e}, T(1), true);
    m.lnf_b = Tensor<T>::zeros({e}, true);
    if (!cfg.tie_weights) m.out_w = detail::weight_init<T>(rng, cfg.vocab_size, e);
    m.out_b = Tensor<T>::zeros({cfg.vocab_size}, true);
    return m;
  }

  /// ids row-major [batch, time]; logits [batch*time, V] in the same order.
  Tensor<T> forward(const std::vector<int>& ids, int batch, int time, bool training,
                    RngStream& rng) {
    if (static_cast<int>(ids.size()) != batch * time) {
      throw ConfigError("transformer_forward: id count does not match batch*time");
    }
    if (time > cfg.block_size) {
      throw ConfigError("transformer_forward: sequence length " + std::to_string(time) +
                        " exceeds block size " + std::to_string(cfg.block_size));
    }
    const int e = cfg.emb_dim;
    const int heads = cfg.n_heads;
    const int dh = e / heads;

    std::vector<int> pos_ids(ids.size());
    for (int bi = 0; bi < batch; ++bi) {
      for (int t = 0; t < time; ++t) pos_ids[bi * time + t] = t;
    }
    Tensor<T> x = add(embedding_rows(embedding, ids), embedding_rows(pos_embedding, pos_ids));
    x = detail::dropped(x, training, cfg.dropout.input, rng);

    const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (auto& blk : blocks) {
      Tensor<T> h = layer_norm(x, blk.ln1_g, blk.ln1_b);
      Tensor<T> qkv = add(matmul(h, blk.qkv_w), blk.qkv_b);  // [B*T, 3e]
      std::vector<Tensor<T>> batch_outs;
      for (int bi = 0; bi < batch; ++bi) {
        Tensor<T> qkv_b = slice_rows(qkv, bi * time, time);
        std::vector<Tensor<T>> head_outs;
        for (int hd = 0; hd < heads; ++hd) {
          Tensor<T> q = slice_cols(qkv_b, hd * dh, dh);
          Tensor<T> k = slice_cols(qkv_b, e + hd * dh, dh);
          Tensor<T> v = slice_cols(qkv_b, 2 * e + hd * dh, dh);
          Tensor<T> attn = softmax_rows(scale(matmul(q, k, false, true), inv_sqrt_dh), true);
          attn = detail::dropped(attn, training, cfg.dropout.attention, rng);
          head_outs.push_back(matmul(attn, v));
        }
        batch_outs.push_back(heads == 1 ? head_outs[0] : concat_cols(head_outs));
      }
      Tensor<T> merged = batch == 1 ? batch_outs[0] : concat_rows(batch_outs);
      Tensor<T> proj = add(matmul(merged, blk.proj_w), blk.proj_b);
      proj = detail::dropped(proj, training, cfg.dropout.hidden, rng);
      x = add(x, proj);

      Tensor<T> h2 = layer_norm(x, blk.ln2_g, blk.ln2_b);
      Tensor<T> ff = add(matmul(gelu(add(matmul(h2, blk.fc_w), blk.fc_b)), blk.fc2_w), blk.fc2_b);
      ff = detail::dropped(ff, training, cfg.dropout.hidden, rng);
      x = add(x, ff);
    }
    x = layer_norm(x, lnf_g, lnf_b);
    Tensor<T> logits = cfg.tie_weights ? matmul(x, embedding, false, true)
                                       : matmul(x, out_w, false, true);
    return add(logits, out_b);
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("embedding", embedding);
    out.emplace_back("pos_embedding", pos_embedding);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string p = "block" + std::to_string(l);
      auto& blk = blocks[l];
      out.emplace_back(p + ".ln1.g", blk.ln1_g);
      out.emplace_back(p + ".ln1.b", blk.ln1_b);
      out.emplace_back(p + ".qkv.w", blk.qkv_w);
      out.emplace_back(p + ".qkv.b", blk.qkv_b);
      out.emplace_back(p + ".proj.w", blk.proj_w);
      out.emplace_back(p + ".proj.b", blk.proj_b);
      out.emplace_back(p + ".ln2.g", blk.ln2_g);
      out.emplace_back(p + ".ln2.b", blk.ln2_b);
      out.emplace_back(p + ".fc.w", blk.fc_w);
      out.emplace_back(p + ".fc.b", blk.fc_b);
      out.emplace_back(p + ".fc2.w", blk.fc2_w);
      out.emplace_back(p + ".fc2.b", blk.fc2_b);
    }
    out.emplace_back("lnf.g", lnf_g);
    out.emplace_back("lnf.b", lnf_b);
    if (!cfg.tie_weights) out.emplace_back("out.w", out_w);
    out.emplace_back("out.b", out_b);
    return out;
  }
};

// ---------------------------------------------------------------------------

template <typename T>
using AnyLm = std::variant<FfnnLm<T>, LstmLm<T>, QrnnLm<T>, TransformerLm<T>>;

template <typename T>
AnyLm<T> build_lm(const LmConfig& cfg, RngStream& rng) {
  switch (cfg.arch) {
    case Arch::ffnn:
      return FfnnLm<T>::init(cfg, rng);
    case Arch::lstm:
    case Arch::awd_lstm:
      return LstmLm<T>::init(cfg, rng);
    case Arch::qrnn:
      return QrnnLm<T>::init(cfg, rng);
    case Arch::transformer:
      return TransformerLm<T>::init(cfg, rng);
  }
  throw ConfigError("unknown architecture");
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> lm_named_params(AnyLm<T>& lm) {
  return std::visit([](auto& m) { return m.named_params(); }, lm);
}

template <typename T>
std::vector<Tensor<T>> lm_params(AnyLm<T>& lm) {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : lm_named_params(lm)) out.push_back(t);
  return out;
}

template <typename T>
const LmConfig& lm_config(const AnyLm<T>& lm) {
  return std::visit([](const auto& m) -> const LmConfig& { return m.cfg; }, lm);
}

/// Snapshot of config + parameters; tied tensors appear once.
template <typename T>
Checkpoint lm_to_checkpoint(AnyLm<T>& lm, const std::string& tokenizer_hash) {
  Checkpoint ckpt;
  ckpt.meta = lm_config(lm).to_meta();
  ckpt.set_meta("tokenizer_hash", tokenizer_hash);
  for (auto& [name, t] : lm_named_params(lm)) {
    NamedTensorData data;
    data.name = name;
    data.dims = t.shape();
    data.values.reserve(t.size());
    for (auto v : t.data()) data.values.push_back(static_cast<float>(v));
    ckpt.tensors.push_back(std::move(data));
  }
  return ckpt;
}

template <typename T>
AnyLm<T> lm_from_checkpoint(const Checkpoint& ckpt) {
  const LmConfig cfg = LmConfig::from_meta(ckpt);
  RngStream rng(0);
  AnyLm<T> lm = build_lm<T>(cfg, rng);
  for (auto& [name, t] : lm_named_params(lm)) {
    const NamedTensorData* data = ckpt.find_tensor(name);
    if (!data) throw DataError("checkpoint is missing parameter '" + name + "'");
    if (data->dims != t.shape()) {
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(data->dims) +
                      ", expected " + shape_str(t.shape()));
    }
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(data->values[i]);
  }
  return lm;
}

}  // namespace salm
