// SPDX-License-Identifier: Apache-2.0
#ifndef XINT_CORE_UTIL_HPP
#define XINT_CORE_UTIL_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace xint {

void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over disjoint chunks of [0, n). Each index is processed
// by exactly one worker with a fixed internal order, so results are
// bit-identical for any thread count. Falls back to inline execution for
// small ranges.
template <typename F>
void parallel_for(size_t n, F&& fn) {
  int workers = num_threads();
  if (workers <= 1 || n < 2) {
    fn(0, n);
    return;
  }
  size_t chunks = std::min<size_t>(static_cast<size_t>(workers), n);
  size_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  for (size_t c = 0; c < chunks; ++c) {
    size_t begin = c * per;
    size_t end = std::min(n, begin + per);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void log_warn(const std::string& msg);

// FNV-1a, used for config fingerprints and split hashing.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace xint

#endif
