#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fedadt {

using Engine = std::mt19937_64;

// Stream tags keep the independent random consumers of a run apart.
enum class StreamTag : std::uint64_t {
  init = 1,
  partition = 2,
  synth = 3,
  client_train = 4,
  latency = 5,
  scheduler = 6,
};

// Derives an engine from a base seed, a tag and optional integer keys
// (client id, dispatch index, ...). std::seed_seq has a fully specified
// mixing algorithm, so derived states match on every conforming library.
inline Engine make_stream(std::uint64_t seed, StreamTag tag,
                          std::initializer_list<std::uint64_t> keys = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(4 + 2 * keys.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  push(static_cast<std::uint64_t>(tag));
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return Engine(seq);
}

}  // namespace fedadt
