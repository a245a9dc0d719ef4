#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mergesfl/data.h"

namespace mergesfl {

struct ShardSet {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<Shard> shards;
};

// Writes manifest.json plus one shard_<owner>.bin per shard into `dir`
// (created if missing). Each .bin holds rows*dim little-endian float64
// samples followed by rows little-endian int32 labels. See docs/formats.md.
void write_shards(const std::filesystem::path& dir, std::span<const Shard> shards, std::size_t classes);

// Reads a directory written by write_shards. Throws ValidationError on a
// malformed manifest or truncated payload.
ShardSet read_shards(const std::filesystem::path& dir);

}  // namespace mergesfl
