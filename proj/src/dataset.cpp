#include "magfield/dataset.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <sstream>

#include "magfield/error.hpp"

namespace magfield {

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian and written with native byte order");

namespace {

constexpr char kMagic[4] = {'M', 'F', 'L', 'D'};
constexpr std::uint64_t kHeaderBytes = 4 + 4 + 8 + 4 + 4 + 3 * 8 + 32;
constexpr std::uint64_t kIndexEntryBytes = 8 + 4 * 8 + 4 + 4;
constexpr std::uint32_t kFlagFlanking = 1u;

struct ByteWriter {
  std::string buf;
  template <typename T>
  void put(const T& v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
};

struct ByteReader {
  const char* p;
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
  }
};

std::uint64_t record_floats(const DatasetHeader& h) {
  return static_cast<std::uint64_t>(kLayers) * kComponents * h.height * h.width;
}

std::string encode_header(const DatasetHeader& h) {
  ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put(h.format_version);
  w.put(h.sample_count);
  w.put(h.height);
  w.put(h.width);
  w.put(h.dx);
  w.put(h.dy);
  w.put(h.dz);
  w.put_bytes(h.config_digest.data(), h.config_digest.size());
  return w.buf;
}

std::string encode_index_entry(const Sample& s) {
  ByteWriter w;
  w.put(s.seed);
  w.put(s.area_side);
  w.put(s.field.dx());
  w.put(s.field.dy());
  w.put(s.field.dz());
  w.put(static_cast<std::uint32_t>(s.source));
  w.put(s.has_flanking_layers ? kFlagFlanking : 0u);
  return w.buf;
}

}  // namespace

Digest sha256(std::string_view bytes) {
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != d.size()) {
    throw Error("SHA-256 computation failed");
  }
  return d;
}

std::string to_hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : d) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 15]);
  }
  return s;
}

DatasetWriter::DatasetWriter(const std::filesystem::path& path, std::uint64_t sample_count,
                             int height, int width, const Digest& config_digest)
    : path_(path) {
  if (sample_count < 1) throw ContractError("dataset needs at least one sample");
  header_.sample_count = sample_count;
  header_.height = static_cast<std::uint32_t>(height);
  header_.width = static_cast<std::uint32_t>(width);
  header_.config_digest = config_digest;
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  // Placeholders, rewritten by finish().
  const std::string zeros(kHeaderBytes + sample_count * kIndexEntryBytes, '\0');
  out_.write(zeros.data(), static_cast<std::streamsize>(zeros.size()));
}

DatasetWriter::~DatasetWriter() = default;

void DatasetWriter::append(const Sample& sample) {
  if (finished_) throw ContractError("dataset writer already finished");
  if (written_ >= header_.sample_count) throw ContractError("more samples than announced");
  const auto& f = sample.field;
  if (f.height() != static_cast<int>(header_.height) ||
      f.width() != static_cast<int>(header_.width)) {
    throw DimensionError("sample shape differs from dataset shape");
  }
  if (written_ == 0) {
    header_.dx = f.dx();
    header_.dy = f.dy();
    header_.dz = f.dz();
  }
  std::vector<float> rec(f.values().size());
  for (std::size_t i = 0; i < rec.size(); ++i) rec[i] = static_cast<float>(f.values()[i]);
  out_.write(reinterpret_cast<const char*>(rec.data()),
             static_cast<std::streamsize>(rec.size() * sizeof(float)));

  const std::string entry = encode_index_entry(sample);
  const auto pos = out_.tellp();
  out_.seekp(static_cast<std::streamoff>(kHeaderBytes + written_ * kIndexEntryBytes));
  out_.write(entry.data(), static_cast<std::streamsize>(entry.size()));
  out_.seekp(pos);
  if (!out_) throw IoError("write failed on " + path_.string());
  ++written_;
}

DatasetHeader DatasetWriter::finish() {
  if (written_ != header_.sample_count) {
    throw ContractError("dataset writer finished after " + std::to_string(written_) + " of " +
                        std::to_string(header_.sample_count) + " samples");
  }
  const std::string h = encode_header(header_);
  out_.seekp(0);
  out_.write(h.data(), static_cast<std::streamsize>(h.size()));
  out_.flush();
  if (!out_) throw IoError("write failed on " + path_.string());
  out_.close();
  finished_ = true;
  return header_;
}

DatasetReader::DatasetReader(const std::filesystem::path& path,
                             std::optional<Digest> expected_digest)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + path.string());
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string());

  std::string buf(kHeaderBytes, '\0');
  in_.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::uint64_t>(in_.gcount()) < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a dataset file (bad magic)");
  }
  if (static_cast<std::uint64_t>(in_.gcount()) != kHeaderBytes) {
    throw TruncatedFileError(path.string() + ": truncated header");
  }
  ByteReader r{buf.data() + 4};
  header_.format_version = r.get<std::uint32_t>();
  if (header_.format_version != kDatasetFormatVersion) {
    throw VersionMismatchError(path.string() + ": format version " +
                               std::to_string(header_.format_version) + ", expected " +
                               std::to_string(kDatasetFormatVersion));
  }
  header_.sample_count = r.get<std::uint64_t>();
  header_.height = r.get<std::uint32_t>();
  header_.width = r.get<std::uint32_t>();
  header_.dx = r.get<double>();
  header_.dy = r.get<double>();
  header_.dz = r.get<double>();
  std::memcpy(header_.config_digest.data(), r.p, 32);
  if (header_.sample_count < 1 || header_.height < 3 || header_.width < 3) {
    throw FormatError(path.string() + ": invalid header counts");
  }
  index_offset_ = kHeaderBytes;
  records_offset_ = index_offset_ + header_.sample_count * kIndexEntryBytes;
  const std::uint64_t expected_size =
      records_offset_ + header_.sample_count * record_floats(header_) * sizeof(float);
  if (file_size < expected_size) {
    throw TruncatedFileError(path.string() + ": " + std::to_string(file_size) + " bytes, expected " +
                             std::to_string(expected_size));
  }
  if (expected_digest && *expected_digest != header_.config_digest) {
    throw DigestMismatchError(path.string() + ": config digest " + to_hex(header_.config_digest) +
                              " does not match expected " + to_hex(*expected_digest));
  }
}

Sample DatasetReader::read(std::size_t index) const {
  if (index >= size()) {
    throw ContractError("sample index " + std::to_string(index) + " out of range");
  }
  const std::uint64_t n = record_floats(header_);
  std::string entry(kIndexEntryBytes, '\0');
  std::vector<float> rec(n);
  {
    std::lock_guard lock(mutex_);
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(index_offset_ + index * kIndexEntryBytes));
    in_.read(entry.data(), static_cast<std::streamsize>(entry.size()));
    in_.seekg(static_cast<std::streamoff>(records_offset_ + index * n * sizeof(float)));
    in_.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in_) throw TruncatedFileError(path_.string() + ": short read of sample " + std::to_string(index));
  }
  ByteReader r{entry.data()};
  Sample s;
  s.seed = r.get<std::uint64_t>();
  s.area_side = r.get<double>();
  const double dx = r.get<double>();
  const double dy = r.get<double>();
  const double dz = r.get<double>();
  s.source = static_cast<Source>(r.get<std::uint32_t>());
  s.has_flanking_layers = (r.get<std::uint32_t>() & kFlagFlanking) != 0;
  s.field = FieldGrid(static_cast<int>(header_.height), static_cast<int>(header_.width), dx, dy, dz);
  auto vals = s.field.values();
  for (std::size_t i = 0; i < n; ++i) vals[i] = static_cast<double>(rec[i]);
  return s;
}

void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& path,
                  const Digest& config_digest) {
  if (samples.empty()) throw ContractError("cannot save an empty dataset");
  DatasetWriter w(path, samples.size(), samples.front().field.height(),
                  samples.front().field.width(), config_digest);
  for (const auto& s : samples) w.append(s);
  w.finish();
}

std::vector<Sample> load_dataset(const std::filesystem::path& path,
                                 std::optional<Digest> expected_digest) {
  DatasetReader r(path, expected_digest);
  std::vector<Sample> out;
  out.reserve(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out.push_back(r.read(i));
  return out;
}

}  // namespace magfield
