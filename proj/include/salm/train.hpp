#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "salm/checkpoint.hpp"
#include "salm/models.hpp"

namespace salm {

struct TrainConfig {
  int batch_size = 16;
  double lr = 1e-3;
  long long max_steps = 2000;  // step-driven architectures (RNN, transformer)
  int max_epochs = 10;         // epoch-driven (FFNN)
  int eval_interval = 200;     // steps between validations
  int patience = 4;
  double clip_norm = 0.25;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int variable_bptt = -1;  // -1 auto (AWD only), 0 off, 1 on
  int chunk_len = 64;      // FFNN training chunk
  std::uint64_t seed = 0;

  bool use_variable_bptt(Arch arch) const {
    if (variable_bptt >= 0) return variable_bptt != 0;
    return arch == Arch::awd_lstm;
  }
};

struct TrainLogEntry {
  long long step = 0;
  double train_loss = 0.0;  // mean nats/token since the previous entry
  double valid_loss = 0.0;  // nats/token
  double lr = 0.0;
  double tok_per_s = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
};

void write_train_log(const TrainLog& log, const std::string& path);

struct TrainResult {
  Checkpoint best;  // parameters at the best validation loss
  TrainLog log;
  double best_valid_loss = 0.0;
  long long steps_run = 0;
  bool aborted_nonfinite = false;
  bool stopped_early = false;
};

/// Builds the model from `model_cfg` (seeded) and trains it on the token
/// streams with the architecture-appropriate batcher, optimizer and
/// schedule. Fully deterministic given the seed.
TrainResult train_lm(const LmConfig& model_cfg, const TrainConfig& train_cfg,
                     const std::vector<int>& train_stream, const std::vector<int>& valid_stream,
                     const std::string& tokenizer_hash);

}  // namespace salm
