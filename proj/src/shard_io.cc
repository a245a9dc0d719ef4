#include "mergesfl/shard_io.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "json.hpp"
#include "mergesfl/common.h"

namespace mergesfl {
namespace {

using nlohmann::json;

constexpr const char* kFormatName = "mergesfl-shards";
constexpr int kFormatVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

std::string file_name(std::size_t owner) { return "shard_" + std::to_string(owner) + ".bin"; }

}  // namespace

void write_shards(const std::filesystem::path& dir, std::span<const Shard> shards, std::size_t classes) {
  if (shards.empty()) throw ValidationError("write_shards: no shards");
  const std::size_t dim = shards.front().samples.cols();
  std::filesystem::create_directories(dir);

  json manifest;
  manifest["format"] = kFormatName;
  manifest["version"] = kFormatVersion;
  manifest["classes"] = classes;
  manifest["dim"] = dim;
  manifest["shards"] = json::array();
  for (const Shard& s : shards) {
    if (s.samples.cols() != dim || s.samples.rows() != s.size()) {
      throw ShapeError("write_shards: shard " + std::to_string(s.owner) + " has inconsistent shape");
    }
    std::string bytes;
    bytes.reserve(s.samples.size() * 8 + s.size() * 4);
    for (double v : s.samples.data()) put_u64(bytes, std::bit_cast<std::uint64_t>(v));
    for (Label y : s.labels) put_u32(bytes, static_cast<std::uint32_t>(y));

    const std::string name = file_name(s.owner);
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("write_shards: cannot open " + (dir / name).string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    manifest["shards"].push_back({{"owner", s.owner}, {"rows", s.size()}, {"file", name}});
  }
  std::ofstream m(dir / "manifest.json", std::ios::trunc);
  if (!m) throw Error("write_shards: cannot write manifest");
  m << manifest.dump(2) << '\n';
}

ShardSet read_shards(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.json");
  if (!m) throw ValidationError("read_shards: missing " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(m);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("read_shards: bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kFormatName || manifest.value("version", 0) != kFormatVersion) {
    throw ValidationError("read_shards: unsupported manifest format");
  }
  ShardSet set;
  set.classes = manifest.at("classes").get<std::size_t>();
  set.dim = manifest.at("dim").get<std::size_t>();
  for (const json& entry : manifest.at("shards")) {
    const auto rows = entry.at("rows").get<std::size_t>();
    const auto owner = entry.at("owner").get<std::size_t>();
    const auto name = entry.at("file").get<std::string>();
    std::ifstream f(dir / name, std::ios::binary);
    if (!f) throw ValidationError("read_shards: missing " + name);
    const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    const std::size_t expected = rows * set.dim * 8 + rows * 4;
    if (bytes.size() != expected) {
      throw ValidationError("read_shards: " + name + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                            std::to_string(expected));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    std::vector<double> values(rows * set.dim);
    for (double& v : values) {
      v = std::bit_cast<double>(get_u64(p));
      p += 8;
    }
    Labels labels(rows);
    for (Label& y : labels) {
      y = static_cast<Label>(get_u32(p));
      p += 4;
      if (y < 0 || static_cast<std::size_t>(y) >= set.classes) throw ValidationError("read_shards: label out of range in " + name);
    }
    set.shards.push_back(Shard{Tensor({rows, set.dim}, std::move(values)), std::move(labels), owner});
  }
  return set;
}

}  // namespace mergesfl
