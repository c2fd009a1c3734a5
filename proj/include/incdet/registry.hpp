#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "incdet/detector.hpp"
#include "incdet/hash.hpp"

namespace incdet {

/// Content-addressed snapshot store with an atomically updated `current`
/// pointer. Snapshots are written to a temp file and renamed into place, so
/// a reader always sees either the old complete snapshot or the new one.
class ModelRegistry {
 public:
  explicit ModelRegistry(const std::string& dir) : dir_(dir) {
    std::filesystem::create_directories(std::filesystem::path(dir_) / "snapshots");
  }

  const std::string& dir() const { return dir_; }

  /// Stores snapshot bytes under their hash. Returns the hash.
  std::string put(const std::vector<std::uint8_t>& bytes) {
    const std::string hash = sha256_hex(bytes);
    const auto final_path = snapshot_path(hash);
    if (std::filesystem::exists(final_path)) return hash;
    const auto tmp = final_path + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary);
      if (!f) throw std::runtime_error("registry: cannot write " + tmp);
      f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, final_path);
    return hash;
  }

  std::string put(const DetectorModel& model) { return put(model.serialize()); }

  std::string snapshot_path(const std::string& hash) const {
    return (std::filesystem::path(dir_) / "snapshots" / (hash + ".snap")).string();
  }

  std::vector<std::uint8_t> read_bytes(const std::string& hash) const {
    std::ifstream f(snapshot_path(hash), std::ios::binary);
    if (!f) throw std::runtime_error("registry: no snapshot " + hash);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
  }

  /// Validates the snapshot (it must load and answer a smoke inference) and
  /// only then swings the `current` pointer via write-new-then-rename.
  void set_current(const std::string& hash) {
    const DetectorModel model = DetectorModel::deserialize(read_bytes(hash));
    const Image smoke(16, 16);
    (void)detect(model, smoke, 0.99, 0.5);  // must not throw
    const auto cur = std::filesystem::path(dir_) / "current";
    const auto tmp = std::filesystem::path(dir_) / "current.tmp";
    {
      std::ofstream f(tmp);
      if (!f) throw std::runtime_error("registry: cannot write current pointer");
      f << hash << "\n";
    }
    std::filesystem::rename(tmp, cur);
  }

  std::optional<std::string> current_hash() const {
    std::ifstream f((std::filesystem::path(dir_) / "current").string());
    if (!f) return std::nullopt;
    std::string hash;
    f >> hash;
    if (hash.empty()) return std::nullopt;
    return hash;
  }

  std::optional<DetectorModel> current() const {
    const auto hash = current_hash();
    if (!hash) return std::nullopt;
    return DetectorModel::deserialize(read_bytes(*hash));
  }

 private:
  std::string dir_;
};

}  // namespace incdet
