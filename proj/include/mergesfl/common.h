#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mergesfl {

// Error hierarchy. Every failure the library reports derives from Error so
// callers (the CLI in particular) can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or layer dimensions do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument is outside its documented domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A call sequence contract was broken (e.g. a stale activation cache).
class ContractError : public Error {
 public:
  using Error::Error;
};

// No plan or partition satisfies the constraints.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Per-round message exchange is inconsistent (missing worker, bad offsets).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf escaped a numeric kernel.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

// Derives an independent generator from a key tuple such as
// (run seed, worker id, round). Same keys, same stream.
inline Rng make_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(keys.size() * 2 + 1);
  words.push_back(0x6d657267u);  // domain tag
  for (std::uint64_t k : keys) {
    words.push_back(static_cast<std::uint32_t>(k & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Uniform double in [0, 1) from the top 53 bits; independent of the
// standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace mergesfl
