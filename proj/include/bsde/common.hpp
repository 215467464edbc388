#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace bsde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Runs body(begin, end) over [0, count) split into `workers` contiguous
/// ranges. Ranges depend only on (count, workers); the first exception thrown
/// by any worker is rethrown on the caller.
inline void parallel_ranges(std::size_t count, int workers,
                            const std::function<void(std::size_t, std::size_t)>& body) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || count < 2) {
    body(0, count);
    return;
  }
  const std::size_t chunk = (count + w - 1) / w;
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t begin = k * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, k, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace bsde
