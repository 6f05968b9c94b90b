#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "salm/error.hpp"
#include "salm/rng.hpp"

namespace salm {

/// Variable-length BPTT draw: base L (or L/2 with probability 0.05), plus
/// rounded Gaussian noise with sigma 5, clamped to [10, L+20].
inline int draw_bptt_len(RngStream& rng, int base_len) {
  const double base = rng.next_bernoulli(0.05) ? base_len / 2.0 : static_cast<double>(base_len);
  const double noisy = base + std::round(rng.next_normal() * 5.0);
  const double clamped = std::min(std::max(noisy, 10.0), static_cast<double>(base_len) + 20.0);
  return static_cast<int>(clamped);
}

struct BpttBatch {
  std::vector<int> inputs;   // [batch, len] row-major
  std::vector<int> targets;  // inputs shifted by one
  int batch = 0;
  int len = 0;
  double lr_scale = 1.0;  // len / base_len when variable lengths are on
};

/// Folds the token stream into `batch` contiguous rows and walks them in
/// windows; hidden state is meant to carry across consecutive batches. The
/// tail that does not fill the grid is dropped.
class BpttBatcher {
 public:
  BpttBatcher(std::vector<int> stream, int batch, int base_len, bool variable, RngStream rng)
      : stream_(std::move(stream)), batch_(batch), base_len_(base_len), variable_(variable),
        rng_(rng) {
    if (batch < 1 || base_len < 2) throw ConfigError("bptt batcher needs batch>=1, len>=2");
    rows_ = stream_.size() / static_cast<std::size_t>(batch);
    if (rows_ < 2) {
      throw DataError("stream of " + std::to_string(stream_.size()) +
                      " tokens is too short for batch size " + std::to_string(batch));
    }
  }

  void reset() { cursor_ = 0; }

  /// Number of predicted positions per row and epoch.
  std::size_t positions_per_row() const { return rows_ - 1; }

  std::optional<BpttBatch> next() {
    if (cursor_ + 1 >= rows_) return std::nullopt;
    int len = variable_ ? draw_bptt_len(rng_, base_len_) : base_len_;
    len = std::min<int>(len, static_cast<int>(rows_ - 1 - cursor_));
    BpttBatch out;
    out.batch = batch_;
    out.len = len;
    out.lr_scale = variable_ ? static_cast<double>(len) / base_len_ : 1.0;
    out.inputs.resize(static_cast<std::size_t>(batch_) * len);
    out.targets.resize(out.inputs.size());
    for (int b = 0; b < batch_; ++b) {
      const std::size_t row_off = static_cast<std::size_t>(b) * rows_;
      for (int t = 0; t < len; ++t) {
        out.inputs[static_cast<std::size_t>(b) * len + t] = stream_[row_off + cursor_ + t];
        out.targets[static_cast<std::size_t>(b) * len + t] = stream_[row_off + cursor_ + t + 1];
      }
    }
    cursor_ += static_cast<std::size_t>(len);
    return out;
  }

 private:
  std::vector<int> stream_;
  int batch_;
  int base_len_;
  bool variable_;
  RngStream rng_;
  std::size_t rows_ = 0;
  std::size_t cursor_ = 0;
};

/// One sliding window over a token stream. `scored_*` index the stream
/// positions this window is responsible for.
struct Window {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t scored_begin = 0;
  std::size_t scored_end = 0;
};

/// Training mode: starts {0, s, 2s, ...} with start+block <= n, every
/// position scored. Eval mode: the first window scores its whole block, each
/// later one only its final `stride` positions, and a shortened final window
/// (left-padded with context) covers the tail, so the scored ranges
/// partition [0, n) exactly.
inline std::vector<Window> make_windows(std::size_t stream_len, int block, int stride,
                                        bool eval_mode) {
  if (block < 1 || stride < 1 || stride > block) {
    throw ConfigError("make_windows needs 1 <= stride <= block");
  }
  std::vector<Window> windows;
  if (stream_len == 0) return windows;
  const std::size_t b = static_cast<std::size_t>(block);
  const std::size_t s = static_cast<std::size_t>(stride);
  if (stream_len <= b) {
    windows.push_back({0, stream_len, 0, stream_len});
    return windows;
  }
  if (!eval_mode) {
    for (std::size_t start = 0; start + b <= stream_len; start += s) {
      windows.push_back({start, b, start, start + b});
    }
    return windows;
  }
  windows.push_back({0, b, 0, b});
  std::size_t scored = b;
  for (std::size_t start = s; start + b <= stream_len; start += s) {
    windows.push_back({start, b, start + b - s, start + b});
    scored = start + b;
  }
  if (scored < stream_len) {
    const std::size_t start = stream_len - b;
    windows.push_back({start, b, scored, stream_len});
  }
  return windows;
}

}  // namespace salm
