#pragma once

#include <filesystem>
#include <fstream>
#include <map>

#include "lvmark/tensor.hpp"

namespace lvmark::checkpoint {

// Checkpoint directory layout:
//   manifest.txt  - "lvmark-checkpoint 1", then "meta <key> <value>" and
//                   "array <name> <file>" lines
//   <name>.bin    - u32 rank, u32 dims[rank], f32 payload (little-endian)

struct Store {
  std::map<std::string, nn::Tensor> arrays;
  std::map<std::string, std::string> meta;

  void put_all(const std::map<std::string, nn::Tensor>& snap, const std::string& prefix = "") {
    for (const auto& [name, t] : snap) arrays[prefix + name] = t;
  }
};

inline void write_array(const std::string& path, const nn::Tensor& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  const auto rank = static_cast<std::uint32_t>(t.rank());
  f.write(reinterpret_cast<const char*>(&rank), 4);
  for (int i = 0; i < t.rank(); ++i) {
    const auto d = static_cast<std::uint32_t>(t.dim(i));
    f.write(reinterpret_cast<const char*>(&d), 4);
  }
  f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
  if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

inline nn::Tensor read_array(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path);
  std::uint32_t rank = 0;
  f.read(reinterpret_cast<char*>(&rank), 4);
  if (f.gcount() != 4 || rank > 8) throw FormatError("checkpoint: bad rank in " + path);
  std::vector<int> shape(rank);
  for (auto& d : shape) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (f.gcount() != 4) throw FormatError("checkpoint: truncated shape in " + path);
    d = static_cast<int>(v);
  }
  nn::Tensor t(shape);
  f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
  if (f.gcount() != static_cast<std::streamsize>(t.numel() * 4))
    throw FormatError("checkpoint: truncated payload in " + path);
  return t;
}

inline void save(const std::string& dir, const Store& store) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt", std::ios::trunc);
  if (!manifest) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
  manifest << "lvmark-checkpoint 1\n";
  for (const auto& [k, v] : store.meta) manifest << "meta " << k << ' ' << v << '\n';
  for (const auto& [name, t] : store.arrays) {
    const std::string file = name + ".bin";
    manifest << "array " << name << ' ' << file << '\n';
    write_array((fs::path(dir) / file).string(), t);
  }
}

inline Store load(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw FormatError("checkpoint: no manifest.txt in " + dir);
  std::string line;
  std::getline(manifest, line);
  if (line != "lvmark-checkpoint 1") throw FormatError("checkpoint: bad manifest header in " + dir);
  Store store;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "meta") {
      std::string k;
      is >> k;
      std::string v;
      std::getline(is, v);
      if (!v.empty() && v.front() == ' ') v.erase(0, 1);
      store.meta[k] = v;
    } else if (tag == "array") {
      std::string name, file;
      is >> name >> file;
      store.arrays[name] = read_array((fs::path(dir) / file).string());
    } else {
      throw FormatError("checkpoint: unknown manifest line '" + line + "'");
    }
  }
  return store;
}

}  // namespace lvmark::checkpoint
