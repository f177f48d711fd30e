#include "finfilt/rng.hpp"

namespace finfilt {

namespace {

// SplitMix64 finalizer.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix(mix(seed) ^ (stream * 0xd1b54a32d192ed03ULL))) {}

CounterRng::result_type CounterRng::operator()() {
  return mix(key_ ^ mix(counter_++));
}

CounterRng CounterRng::split(std::uint64_t id) const {
  return CounterRng(mix(key_ + 0x632be59bd9b4e019ULL * (id + 1)), 0, 0);
}

}  // namespace finfilt
