#include "stmt/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace stmt {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'M', 'T'};

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("checkpoint " + path + ": " + what);
}

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const std::string& path, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    fail(path, std::string("truncated while reading ") + what);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& entries) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(path, "cannot open for writing");
    os.write(kMagic, 4);
    write_raw(os, kCheckpointVersion);
    write_raw(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
      write_raw(os, static_cast<std::uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_raw(os, static_cast<std::uint32_t>(e.tensor.rank()));
      for (std::size_t ext : e.tensor.shape()) {
        write_raw(os, static_cast<std::uint64_t>(ext));
      }
      const auto v = e.tensor.values();
      os.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!os) fail(path, "write failure");
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedParam> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    fail(path, "bad magic");
  }
  const auto version = read_raw<std::uint32_t>(is, path, "version");
  if (version != kCheckpointVersion) {
    fail(path, "unsupported version " + std::to_string(version));
  }
  const auto count = read_raw<std::uint32_t>(is, path, "entry count");
  std::vector<NamedParam> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<std::uint32_t>(is, path, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) fail(path, "truncated name");
    const auto rank = read_raw<std::uint32_t>(is, path, "rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& ext : shape) {
      ext = static_cast<std::size_t>(read_raw<std::uint64_t>(is, path, "extent"));
      numel *= ext;
    }
    std::vector<double> data(numel);
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(numel * sizeof(double)))) {
      fail(path, "truncated payload for '" + name + "'");
    }
    entries.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(data))});
  }
  return entries;
}

}  // namespace stmt
