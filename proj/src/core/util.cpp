// SPDX-License-Identifier: Apache-2.0
#include "core/util.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace xint {

namespace {
std::atomic<int> g_threads{0};  // 0 = pick from hardware

int default_threads() {
  unsigned hc = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(4u, hc == 0 ? 1u : hc));
}
}  // namespace

void set_num_threads(int n) { g_threads.store(n < 1 ? 1 : n); }

int num_threads() {
  int n = g_threads.load();
  return n > 0 ? n : default_threads();
}

void log_warn(const std::string& msg) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[xint] warning: " << msg << "\n";
}

}  // namespace xint
