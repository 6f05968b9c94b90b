#include "salm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "salm/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace salm {

const std::string* Checkpoint::find_meta(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::string Checkpoint::meta_or_throw(const std::string& key) const {
  const std::string* v = find_meta(key);
  if (!v) throw DataError("checkpoint is missing metadata key '" + key + "'");
  return *v;
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = value;
      return;
    }
  }
  meta.emplace_back(key, value);
}

const NamedTensorData* Checkpoint::find_tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

long long Checkpoint::param_count() const {
  long long total = 0;
  for (const auto& t : tensors) {
    if (t.name.rfind("opt.", 0) == 0) continue;
    total += static_cast<long long>(t.values.size());
  }
  return total;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint file: " + path);
  out << "salm-ckpt v1\n";
  for (const auto& [k, v] : ckpt.meta) out << k << "=" << v << "\n";
  for (const auto& t : ckpt.tensors) {
    out << "name " << t.name << " dims ";
    for (std::size_t i = 0; i < t.dims.size(); ++i) {
      if (i) out << ",";
      out << t.dims[i];
    }
    out << " dtype f32\n";
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!out) throw DataError("short write to checkpoint file: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint file: " + path);

  auto read_line = [&](std::string& line) -> bool {
    line.clear();
    char c;
    while (in.get(c)) {
      if (c == '\n') return true;
      line.push_back(c);
    }
    return !line.empty();
  };

  std::string line;
  if (!read_line(line) || line != "salm-ckpt v1") {
    throw DataError(path + ": not a salm checkpoint (missing 'salm-ckpt v1' header)");
  }

  Checkpoint ckpt;
  while (read_line(line)) {
    if (line.rfind("name ", 0) == 0) {
      // "name <name> dims d1,d2 dtype f32"
      std::istringstream fields(line);
      std::string kw, name, dims_kw, dims_str, dtype_kw, dtype;
      if (!(fields >> kw >> name >> dims_kw >> dims_str >> dtype_kw >> dtype) ||
          dims_kw != "dims" || dtype_kw != "dtype") {
        throw DataError(path + ": malformed tensor record '" + line + "'");
      }
      if (dtype != "f32") throw DataError(path + ": unsupported dtype '" + dtype + "'");
      NamedTensorData t;
      t.name = name;
      std::size_t total = 1;
      std::istringstream ds(dims_str);
      std::string d;
      while (std::getline(ds, d, ',')) {
        const int dim = std::stoi(d);
        if (dim <= 0) throw DataError(path + ": non-positive dim in tensor '" + name + "'");
        t.dims.push_back(dim);
        total *= static_cast<std::size_t>(dim);
      }
      if (t.dims.empty()) throw DataError(path + ": tensor '" + name + "' has no dims");
      t.values.resize(total);
      in.read(reinterpret_cast<char*>(t.values.data()),
              static_cast<std::streamsize>(total * sizeof(float)));
      if (static_cast<std::size_t>(in.gcount()) != total * sizeof(float)) {
        throw DataError(path + ": truncated data for tensor '" + name + "' (expected " +
                        std::to_string(total * sizeof(float)) + " bytes)");
      }
      ckpt.tensors.push_back(std::move(t));
    } else if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw DataError(path + ": malformed metadata line '" + line + "'");
      }
      ckpt.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError(path + ": trailing bytes after last tensor record");
  }
  return ckpt;
}

}  // namespace salm
