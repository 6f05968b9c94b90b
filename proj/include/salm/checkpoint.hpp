#pragma once

#include <string>
#include <vector>

namespace salm {

struct NamedTensorData {
  std::string name;
  std::vector<int> dims;
  std::vector<float> values;  // f32 storage, little-endian on disk
};

/// On-disk model snapshot: `salm-ckpt v1` header, key=value metadata lines,
/// then per-parameter records of the form `name <name> dims d1,d2 dtype f32`
/// followed by raw little-endian values.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;  // ordered
  std::vector<NamedTensorData> tensors;

  const std::string* find_meta(const std::string& key) const;
  std::string meta_or_throw(const std::string& key) const;
  void set_meta(const std::string& key, const std::string& value);
  const NamedTensorData* find_tensor(const std::string& name) const;

  /// Total element count; names starting with "opt." (optimizer state) are
  /// excluded, shared storage appears once by construction.
  long long param_count() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace salm
