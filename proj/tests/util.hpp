#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "magfield/field.hpp"
#include "magfield/rng.hpp"

namespace testutil {

inline magfield::FieldPlane random_plane(int h, int w, std::uint64_t seed, double amp = 1.0) {
  magfield::Rng rng(seed);
  magfield::FieldPlane p(h, w);
  for (double& v : p.values()) v = magfield::uniform(rng, -amp, amp);
  return p;
}

inline magfield::FieldGrid random_grid(int h, int w, std::uint64_t seed, double amp = 1.0) {
  magfield::Rng rng(seed);
  magfield::FieldGrid g(h, w, 1e-4, 1e-4, 1e-4);
  for (double& v : g.values()) v = magfield::uniform(rng, -amp, amp);
  return g;
}

inline magfield::Mask random_mask(int h, int w, std::uint64_t seed, double p_missing = 0.5) {
  magfield::Rng rng(seed);
  magfield::Mask m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m.set(r, c, magfield::bernoulli(rng, p_missing));
  m.set(0, 0, false);
  m.set(h - 1, w - 1, true);
  return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("magfield_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
