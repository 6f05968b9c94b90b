#include "salm/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "salm/batching.hpp"
#include "salm/error.hpp"
#include "salm/eval.hpp"
#include "salm/schedule.hpp"

namespace salm {

namespace {

constexpr double kLn2 = 0.69314718055994530942;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

/// Mean validation loss in nats/token (the stream scorers report log2).
double valid_nats(AnyLm<float>& lm, const std::vector<int>& valid_stream) {
  if (valid_stream.empty()) throw DataError("validation stream is empty");
  const double total_log2 = score_stream_lm(lm, valid_stream, 0, 0);
  return -total_log2 * kLn2 / static_cast<double>(valid_stream.size());
}

struct LoopState {
  TrainLog log;
  Checkpoint best;
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<double> valid_history;
  double window_nats = 0.0;  // running sums since the last validation
  long long window_tokens = 0;
  double window_start_time = now_seconds();
  bool numeric_failure = false;

  /// Validates, logs, snapshots the best checkpoint. Returns true when the
  /// early-stop rule fires or validation itself hits non-finite values.
  bool validate(AnyLm<float>& lm, const std::vector<int>& valid_stream, long long step,
                double lr, int patience, const std::string& tokenizer_hash) {
    double vloss;
    try {
      vloss = valid_nats(lm, valid_stream);
    } catch (const NumericError&) {
      numeric_failure = true;
      return true;
    }
    valid_history.push_back(vloss);
    TrainLogEntry entry;
    entry.step = step;
    entry.train_loss = window_tokens > 0 ? window_nats / window_tokens : 0.0;
    entry.valid_loss = vloss;
    entry.lr = lr;
    const double elapsed = now_seconds() - window_start_time;
    entry.tok_per_s = elapsed > 0.0 ? window_tokens / elapsed : 0.0;
    log.entries.push_back(entry);
    window_nats = 0.0;
    window_tokens = 0;
    window_start_time = now_seconds();
    if (vloss < best_valid - kImprovementTol) {
      best_valid = vloss;
      best = lm_to_checkpoint(lm, tokenizer_hash);
    }
    return early_stop(valid_history, patience);
  }
};

std::vector<int> t_major_targets(const BpttBatch& batch) {
  std::vector<int> out(batch.targets.size());
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < batch.len; ++t) {
      out[static_cast<std::size_t>(t) * batch.batch + b] =
          batch.targets[static_cast<std::size_t>(b) * batch.len + t];
    }
  }
  return out;
}

template <typename Model, typename State>
TrainResult train_rnn(Model& model, AnyLm<float>& lm, const TrainConfig& cfg,
                      const std::vector<int>& train_stream, const std::vector<int>& valid_stream,
                      const std::string& tokenizer_hash) {
  const bool variable = cfg.use_variable_bptt(model.cfg.arch);
  RngStream root(cfg.seed);
  RngStream mask_rng = root.fork(2);
  SgdOptimizer<float> opt(cfg.lr, cfg.clip_norm);
  auto params = lm_params(lm);

  TrainResult result;
  LoopState loop;
  loop.validate(lm, valid_stream, 0, opt.lr(), cfg.patience, tokenizer_hash);

  long long step = 0;
  bool done = false;
  for (int epoch = 0; !done; ++epoch) {
    BpttBatcher batcher(train_stream, cfg.batch_size, model.cfg.bptt_len, variable,
                        root.fork(100 + static_cast<std::uint64_t>(epoch)));
    State state = model.initial_state(cfg.batch_size);
    while (auto batch = batcher.next()) {
      Tensor<float> loss;
      try {
        auto out = model.forward(batch->inputs, batch->batch, batch->len, state, true, mask_rng);
        loss = cross_entropy(out.logits, t_major_targets(*batch));
        if (out.penalty.defined()) loss = add(loss, out.penalty);
        backward(loss);
      } catch (const NumericError&) {
        result.aborted_nonfinite = true;
        done = true;
        break;
      }
      try {
        opt.step(params, batch->lr_scale);
      } catch (const NumericError&) {
        result.aborted_nonfinite = true;
        done = true;
        break;
      }
      zero_grads(params);
      ++step;
      loop.window_nats += static_cast<double>(loss.item()) * batch->inputs.size();
      loop.window_tokens += static_cast<long long>(batch->inputs.size());
      if (step % cfg.eval_interval == 0) {
        if (loop.validate(lm, valid_stream, step, opt.lr(), cfg.patience, tokenizer_hash)) {
          result.stopped_early = !loop.numeric_failure;
          done = true;
          break;
        }
      }
      if (step >= cfg.max_steps) {
        done = true;
        break;
      }
    }
  }
  if (loop.log.entries.empty() || loop.log.entries.back().step != step) {
    loop.validate(lm, valid_stream, step, opt.lr(), cfg.patience, tokenizer_hash);
  }
  result.aborted_nonfinite = result.aborted_nonfinite || loop.numeric_failure;
  result.log = std::move(loop.log);
  result.best = std::move(loop.best);
  result.best_valid_loss = loop.best_valid;
  result.steps_run = step;
  return result;
}

TrainResult train_ffnn(FfnnLm<float>& model, AnyLm<float>& lm, const TrainConfig& cfg,
                       const std::vector<int>& train_stream, const std::vector<int>& valid_stream,
                       const std::string& tokenizer_hash) {
  RngStream root(cfg.seed);
  RngStream mask_rng = root.fork(2);
  AdamWOptimizer<float> opt(cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay, cfg.clip_norm);
  PlateauScheduler scheduler(cfg.lr);
  auto params = lm_params(lm);
  const int ctx = model.cfg.context_order - 1;
  const int eos = 1;

  TrainResult result;
  LoopState loop;
  loop.validate(lm, valid_stream, 0, opt.lr(), cfg.patience, tokenizer_hash);

  const std::size_t positions_per_step =
      static_cast<std::size_t>(cfg.batch_size) * static_cast<std::size_t>(cfg.chunk_len);
  long long step = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.max_epochs && !done; ++epoch) {
    // The stream is treated as contiguous chunks of chunk_len positions;
    // each step batches batch_size chunks.
    for (std::size_t base = 0; base < train_stream.size() && !done;
         base += positions_per_step) {
      const std::size_t end = std::min(train_stream.size(), base + positions_per_step);
      std::vector<int> contexts;
      std::vector<int> targets;
      contexts.reserve((end - base) * static_cast<std::size_t>(ctx));
      targets.reserve(end - base);
      for (std::size_t p = base; p < end; ++p) {
        for (int d = ctx; d >= 1; --d) {
          contexts.push_back(p >= static_cast<std::size_t>(d) ? train_stream[p - d] : eos);
        }
        targets.push_back(train_stream[p]);
      }
      Tensor<float> loss;
      try {
        Tensor<float> logits =
            model.forward(contexts, static_cast<int>(targets.size()), true, mask_rng);
        loss = cross_entropy(logits, targets);
        backward(loss);
        opt.step(params);
      } catch (const NumericError&) {
        result.aborted_nonfinite = true;
        done = true;
        break;
      }
      zero_grads(params);
      ++step;
      loop.window_nats += static_cast<double>(loss.item()) * targets.size();
      loop.window_tokens += static_cast<long long>(targets.size());
      if (step >= cfg.max_steps) done = true;
    }
    if (done) break;
    // Plateau decay on the per-epoch validation loss.
    if (loop.validate(lm, valid_stream, step, opt.lr(), cfg.patience, tokenizer_hash)) {
      result.stopped_early = !loop.numeric_failure;
      break;
    }
    opt.set_lr(scheduler.observe(loop.valid_history.back()));
  }
  if (loop.log.entries.empty() || loop.log.entries.back().step != step) {
    loop.validate(lm, valid_stream, step, opt.lr(), cfg.patience, tokenizer_hash);
  }
  result.aborted_nonfinite = result.aborted_nonfinite || loop.numeric_failure;
  result.log = std::move(loop.log);
  result.best = std::move(loop.best);
  result.best_valid_loss = loop.best_valid;
  result.steps_run = step;
  return result;
}

TrainResult train_transformer(TransformerLm<float>& model, AnyLm<float>& lm,
                              const TrainConfig& cfg, const std::vector<int>& train_stream,
                              const std::vector<int>& valid_stream,
                              const std::string& tokenizer_hash) {
  RngStream root(cfg.seed);
  RngStream mask_rng = root.fork(2);
  AdamWOptimizer<float> opt(cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay, cfg.clip_norm);
  auto params = lm_params(lm);
  const int block = model.cfg.block_size;

  const auto windows = make_windows(train_stream.size(), block, model.cfg.stride_train, false);
  if (windows.empty()) throw DataError("training stream is empty");

  TrainResult result;
  LoopState loop;
  loop.validate(lm, valid_stream, 0, opt.lr(), cfg.patience, tokenizer_hash);

  long long step = 0;
  std::size_t cursor = 0;
  bool done = false;
  while (!done) {
    // Batch of consecutive training windows; the loss predicts each next
    // token inside the window.
    std::vector<const Window*> batch;
    const std::size_t len = windows[cursor % windows.size()].length;
    while (static_cast<int>(batch.size()) < cfg.batch_size) {
      if (windows[cursor % windows.size()].length != len) break;
      batch.push_back(&windows[cursor % windows.size()]);
      ++cursor;
    }
    const int t = static_cast<int>(len);
    std::vector<int> inputs;
    std::vector<int> targets;
    inputs.reserve(batch.size() * len);
    targets.reserve(batch.size() * (len - 1));
    for (const Window* w : batch) {
      for (std::size_t i = 0; i < len; ++i) inputs.push_back(train_stream[w->start + i]);
      for (std::size_t i = 1; i < len; ++i) targets.push_back(train_stream[w->start + i]);
    }
    Tensor<float> loss;
    try {
      Tensor<float> logits = model.forward(inputs, static_cast<int>(batch.size()), t, true,
                                           mask_rng);
      // Drop each window's final row: its target lies outside the window.
      std::vector<Tensor<float>> used;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        used.push_back(slice_rows(logits, static_cast<int>(b) * t, t - 1));
      }
      loss = cross_entropy(used.size() == 1 ? used[0] : concat_rows(used), targets);
      backward(loss);
      opt.step(params);
    } catch (const NumericError&) {
      result.aborted_nonfinite = true;
      break;
    }
    zero_grads(params);
    ++step;
    loop.window_nats += static_cast<double>(loss.item()) * targets.size();
    loop.window_tokens += static_cast<long long>(targets.size());
    opt.set_lr(linear_decay(step, cfg.max_steps, cfg.lr));
    if (step % cfg.eval_interval == 0) {
      if (loop.validate(lm, valid_stream, step, opt.lr(), cfg.patience, tokenizer_hash)) {
        result.stopped_early = !loop.numeric_failure;
        break;
      }
    }
    if (step >= cfg.max_steps) break;
  }
  if (loop.log.entries.empty() || loop.log.entries.back().step != step) {
    loop.validate(lm, valid_stream, step, opt.lr(), cfg.patience, tokenizer_hash);
  }
  result.aborted_nonfinite = result.aborted_nonfinite || loop.numeric_failure;
  result.log = std::move(loop.log);
  result.best = std::move(loop.best);
  result.best_valid_loss = loop.best_valid;
  result.steps_run = step;
  return result;
}

}  // namespace

void write_train_log(const TrainLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write train log: " + path);
  out << "step\ttrain_loss\tvalid_loss\tlr\ttok_per_s\n";
  char buf[160];
  for (const auto& e : log.entries) {
    std::snprintf(buf, sizeof(buf), "%lld\t%.6f\t%.6f\t%.8g\t%.1f\n", e.step, e.train_loss,
                  e.valid_loss, e.lr, e.tok_per_s);
    out << buf;
  }
}

TrainResult train_lm(const LmConfig& model_cfg, const TrainConfig& train_cfg,
                     const std::vector<int>& train_stream, const std::vector<int>& valid_stream,
                     const std::string& tokenizer_hash) {
  model_cfg.validate();
  if (train_stream.size() < static_cast<std::size_t>(2 * train_cfg.batch_size)) {
    throw DataError("training stream of " + std::to_string(train_stream.size()) +
                    " tokens is too small for batch size " +
                    std::to_string(train_cfg.batch_size));
  }
  RngStream init_rng = RngStream(train_cfg.seed).fork(1);
  AnyLm<float> lm = build_lm<float>(model_cfg, init_rng);

  TrainResult result;
  switch (model_cfg.arch) {
    case Arch::ffnn:
      result = train_ffnn(std::get<FfnnLm<float>>(lm), lm, train_cfg, train_stream, valid_stream,
                          tokenizer_hash);
      break;
    case Arch::lstm:
    case Arch::awd_lstm:
      result = train_rnn<LstmLm<float>, RnnState<float>>(std::get<LstmLm<float>>(lm), lm,
                                                         train_cfg, train_stream, valid_stream,
                                                         tokenizer_hash);
      break;
    case Arch::qrnn:
      result = train_rnn<QrnnLm<float>, QrnnState<float>>(std::get<QrnnLm<float>>(lm), lm,
                                                          train_cfg, train_stream, valid_stream,
                                                          tokenizer_hash);
      break;
    case Arch::transformer:
      result = train_transformer(std::get<TransformerLm<float>>(lm), lm, train_cfg, train_stream,
                                 valid_stream, tokenizer_hash);
      break;
  }
  return result;
}

}  // namespace salm
