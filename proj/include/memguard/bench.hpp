// Micro-benchmark harness: saturating vs plain counter increments, and raw
// vs bounds-checked copies at two transfer sizes. Reports median nanoseconds
// per operation over repeated batches and the ratio against the paired
// baseline measured in the same run. Ratios are the meaningful output;
// absolute numbers are machine-dependent.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memguard/bounds.hpp"
#include "memguard/refcount.hpp"

namespace memguard {

struct BenchResult {
  std::string name;
  std::uint64_t iterations = 0;
  double ns_per_op = 0.0;
  double ratio_to_baseline = 1.0;
};

namespace bench_detail {

template <typename T>
inline void do_not_optimize(T const& value) {
  asm volatile("" : : "r,m"(value) : "memory");
}

inline void clobber_memory() { asm volatile("" : : : "memory"); }

using Clock = std::chrono::steady_clock;

/// Smallest positive interval the clock can report, sampled once.
inline double timer_resolution_ns() {
  static const double resolution = [] {
    double best = 1e9;
    for (int i = 0; i < 1000; ++i) {
      const auto a = Clock::now();
      auto b = Clock::now();
      while (b == a) b = Clock::now();
      const double ns =
          std::chrono::duration<double, std::nano>(b - a).count();
      best = std::min(best, ns);
    }
    return best;
  }();
  return resolution;
}

template <typename Body>
double time_batch_ns(Body&& body) {
  const auto start = Clock::now();
  body();
  const auto stop = Clock::now();
  return std::chrono::duration<double, std::nano>(stop - start).count();
}

/// Runs `body(iterations)` in repeated batches and reports the median batch
/// cost per operation. Batches are grown until a single batch spans at least
/// 100 clock ticks, so timer granularity stays below 1% of what is measured.
template <typename Body>
BenchResult measure(std::string name, std::uint64_t iterations,
                    int repetitions, Body&& body) {
  if (repetitions < 10) repetitions = 10;

  body(iterations);  // warm-up, untimed
  double first = time_batch_ns([&] { body(iterations); });
  while (first < 100.0 * timer_resolution_ns()) {
    iterations *= 2;
    first = time_batch_ns([&] { body(iterations); });
  }

  std::vector<double> batches;
  batches.reserve(repetitions);
  batches.push_back(first);
  for (int rep = 1; rep < repetitions; ++rep) {
    batches.push_back(time_batch_ns([&] { body(iterations); }));
  }
  std::nth_element(batches.begin(), batches.begin() + batches.size() / 2,
                   batches.end());
  const double median = batches[batches.size() / 2];

  BenchResult result;
  result.name = std::move(name);
  result.iterations = iterations;
  result.ns_per_op = median / static_cast<double>(iterations);
  return result;
}

}  // namespace bench_detail

struct RefCountBenchResult {
  BenchResult baseline;  // plain atomic increment, checks compiled out
  BenchResult checked;   // saturating increment
};

/// Paired increment benchmark. Both loops keep the counter inside
/// (0, UINT32_MAX), so neither the refusal nor the saturation path runs; the
/// measured difference is the price of the checked compare-and-exchange loop.
inline RefCountBenchResult bench_refcount(std::uint64_t iterations,
                                          int repetitions = 11) {
  using bench_detail::do_not_optimize;
  if (iterations == 0) {
    throw std::invalid_argument("bench_refcount: iterations must be positive");
  }
  iterations = std::max<std::uint64_t>(iterations, 1'000'000);

  FastRefCount plain;
  RefCount checked;

  RefCountBenchResult out;
  out.baseline = bench_detail::measure(
      "refcount_inc unchecked", iterations, repetitions, [&](std::uint64_t n) {
        plain.set(1);
        for (std::uint64_t i = 0; i < n; ++i) plain.inc();
        do_not_optimize(plain.read());
      });
  out.checked = bench_detail::measure(
      "refcount_inc saturating", iterations, repetitions, [&](std::uint64_t n) {
        checked.set(1);
        for (std::uint64_t i = 0; i < n; ++i) checked.inc();
        do_not_optimize(checked.read());
      });
  out.baseline.ratio_to_baseline = 1.0;
  out.checked.ratio_to_baseline = out.checked.ns_per_op / out.baseline.ns_per_op;
  return out;
}

struct CopyBenchResult {
  std::uint64_t size = 0;
  BenchResult raw;             // memmove on the arena, no checks
  BenchResult checked_known;   // interval checks against caller-held bounds
  BenchResult checked_loaded;  // full wrapper, bounds derived per call
};

/// Copy benchmark at the given transfer sizes. Sizes within the size-class
/// table run between two live allocations, so the bounds-loaded variant pays
/// a registry hit per call; larger sizes run in reserved arena space outside
/// any allocation, where derivation falls back to infinite bounds but still
/// pays the lookup. The iteration count is scaled down for larger sizes to
/// keep batch times comparable.
inline std::vector<CopyBenchResult> bench_copy(
    std::span<const std::uint64_t> sizes, std::uint64_t iterations_at_256,
    int repetitions = 11) {
  using bench_detail::do_not_optimize;
  if (iterations_at_256 == 0) {
    throw std::invalid_argument("bench_copy: iterations must be positive");
  }

  std::vector<CopyBenchResult> results;
  for (const std::uint64_t size : sizes) {
    const std::uint64_t extent =
        std::max<std::uint64_t>(1 << 20, 8 * size + 65536);
    PoolRegistry pool(extent, CheckMode::Enforce);

    Address src = 0, dst = 0;
    Bounds src_bounds, dst_bounds;
    bool in_class = true;
    try {
      const auto src_alloc = pool.alloc(size);
      const auto dst_alloc = pool.alloc(size);
      src = src_alloc.base;
      dst = dst_alloc.base;
      src_bounds = Bounds{src_alloc.base, src_alloc.base + src_alloc.capacity};
      dst_bounds = Bounds{dst_alloc.base, dst_alloc.base + dst_alloc.capacity};
    } catch (const PoolError&) {
      // Larger than the biggest size class: benchmark in reserved arena
      // space past all allocations (unknown-pointer regime).
      in_class = false;
      src = extent / 2;
      dst = extent / 2 + 2 * size;
      src_bounds = Bounds{src, src + size};
      dst_bounds = Bounds{dst, dst + size};
    }
    (void)in_class;

    auto arena = pool.raw_bytes();
    for (std::uint64_t i = 0; i < size; ++i) {
      arena[src + i] = static_cast<std::byte>(i);
    }

    const std::uint64_t iterations = std::max<std::uint64_t>(
        1000, iterations_at_256 * 256 / std::max<std::uint64_t>(size, 1));
    const std::string tag = std::to_string(size) + "B";

    CopyBenchResult entry;
    entry.size = size;
    entry.raw = bench_detail::measure(
        "copy " + tag + " raw", iterations, repetitions, [&](std::uint64_t n) {
          std::byte* data = arena.data();
          for (std::uint64_t i = 0; i < n; ++i) {
            std::memmove(data + dst, data + src, size);
            do_not_optimize(data[dst]);
          }
        });
    entry.checked_known = bench_detail::measure(
        "copy " + tag + " checked bounds-known", iterations, repetitions,
        [&](std::uint64_t n) {
          std::byte* data = arena.data();
          for (std::uint64_t i = 0; i < n; ++i) {
            auto sv = check_interval(src_bounds, src, size, "bench");
            auto dv = check_interval(dst_bounds, dst, size, "bench");
            do_not_optimize(sv);
            do_not_optimize(dv);
            if (!sv && !dv) std::memmove(data + dst, data + src, size);
            do_not_optimize(data[dst]);
          }
        });
    entry.checked_loaded = bench_detail::measure(
        "copy " + tag + " checked bounds-loaded", iterations, repetitions,
        [&](std::uint64_t n) {
          for (std::uint64_t i = 0; i < n; ++i) {
            auto result = pool.checked_copy(dst, src, size);
            do_not_optimize(result.performed);
          }
        });

    entry.raw.ratio_to_baseline = 1.0;
    entry.checked_known.ratio_to_baseline =
        entry.checked_known.ns_per_op / entry.raw.ns_per_op;
    entry.checked_loaded.ratio_to_baseline =
        entry.checked_loaded.ns_per_op / entry.raw.ns_per_op;
    results.push_back(std::move(entry));
  }
  return results;
}

}  // namespace memguard
