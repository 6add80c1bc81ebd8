#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "magfield/field.hpp"

namespace magfield {

using Digest = std::array<std::uint8_t, 32>;

/// SHA-256 of arbitrary bytes.
Digest sha256(std::string_view bytes);
std::string to_hex(const Digest& d);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

struct DatasetHeader {
  std::uint64_t sample_count = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  double dx = 0.0;  ///< nominal spacings (first sample); per-sample values live in the index
  double dy = 0.0;
  double dz = 0.0;
  std::uint32_t format_version = kDatasetFormatVersion;
  Digest config_digest{};
};

/// Streams samples to a dataset file. The sample count is fixed up front so
/// the index table can precede the records; append order defines the index.
///
/// Layout (little-endian):
///   "MFLD" | u32 version | u64 count | u32 H | u32 W | f64 dx, dy, dz | 32-byte digest
///   count x { u64 seed | f64 area_side | f64 dx, dy, dz | u32 source | u32 flags }
///   count x float32[3 layers][3 components][H][W]
class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& path, std::uint64_t sample_count, int height,
                int width, const Digest& config_digest);
  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;
  ~DatasetWriter();

  void append(const Sample& sample);
  /// Writes the header and flushes; throws if fewer samples were appended
  /// than announced.
  DatasetHeader finish();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  DatasetHeader header_;
  std::uint64_t written_ = 0;
  bool finished_ = false;
};

/// Random-access reader. read() is safe to call from concurrent threads.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path,
                         std::optional<Digest> expected_digest = std::nullopt);

  const DatasetHeader& header() const noexcept { return header_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(header_.sample_count); }
  Sample read(std::size_t index) const;

 private:
  std::filesystem::path path_;
  DatasetHeader header_;
  std::uint64_t index_offset_ = 0;
  std::uint64_t records_offset_ = 0;
  mutable std::mutex mutex_;
  mutable std::ifstream in_;
};

void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& path,
                  const Digest& config_digest = {});
std::vector<Sample> load_dataset(const std::filesystem::path& path,
                                 std::optional<Digest> expected_digest = std::nullopt);

}  // namespace magfield
