// Allocation-metadata pointer bounds checking over a flat byte arena.
//
// The pool hands out size-class allocations and answers bound queries for any
// address from the registry alone: no per-pointer table exists, so the bounds
// of a pointer are always derivable from its value. Addresses whose value
// falls outside every live allocation get infinite bounds, the permissive
// fallback for pointers of unknown provenance. Checked wrappers around the
// byte-moving operations either refuse out-of-bounds work (Enforce) or log it
// and carry on (Audit).
//
// Addresses are pool-relative byte offsets, not machine pointers, which keeps
// the simulation deterministic and portable.

#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace memguard {

using Address = std::uint64_t;

/// Half-open interval [lower, upper) an access may touch. Infinite bounds
/// admit every access.
struct Bounds {
  Address lower = 0;
  Address upper = 0;
  bool infinite = false;

  static constexpr Bounds infinite_bounds() { return Bounds{0, 0, true}; }

  constexpr bool contains(Address addr, std::uint64_t len) const {
    if (infinite) return true;
    if (len == 0) return true;  // empty access is vacuously inside
    return addr >= lower && addr < upper && upper - addr >= len;
  }

  friend constexpr bool operator==(const Bounds&, const Bounds&) = default;
};

enum class CheckMode { Enforce, Audit };

enum class ViolationKind { LowerBound, UpperBound };

inline const char* to_string(ViolationKind kind) {
  return kind == ViolationKind::LowerBound ? "Lower" : "Upper";
}

struct Violation {
  ViolationKind kind;
  Address access_base;
  std::uint64_t access_len;
  Bounds bounds;
  std::string operation;

  /// Stable log format: BND <Lower|Upper> op=<name> addr=<hex> len=<n>
  /// bounds=[<lo>,<hi>)
  std::string log_line() const {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "BND %s op=%s addr=0x%llx len=%llu bounds=[0x%llx,0x%llx)",
                  to_string(kind), operation.c_str(),
                  static_cast<unsigned long long>(access_base),
                  static_cast<unsigned long long>(access_len),
                  static_cast<unsigned long long>(bounds.lower),
                  static_cast<unsigned long long>(bounds.upper));
    return buf;
  }
};

/// Pure interval check against caller-held bounds. This is the only path on
/// which a LowerBound violation can surface; bounds derived from the access
/// address itself always start at or below it.
inline std::optional<Violation> check_interval(const Bounds& bounds,
                                               Address addr, std::uint64_t len,
                                               std::string_view operation = "access") {
  if (bounds.contains(addr, len)) return std::nullopt;
  const ViolationKind kind = addr < bounds.lower ? ViolationKind::LowerBound
                                                 : ViolationKind::UpperBound;
  return Violation{kind, addr, len, bounds, std::string(operation)};
}

class PoolError : public std::runtime_error {
 public:
  enum class Code {
    ExtentTooSmall,
    SizeZero,
    SizeTooLarge,
    OutOfMemory,
    DoubleFree,
    UnknownAllocation,
  };

  PoolError(Code code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Code code() const { return code_; }

 private:
  Code code_;
};

/// A live pool allocation. Bounds for the whole size class are [base,
/// base + capacity); the round-up area past `requested` is never handed to
/// anyone else, so admitting it costs nothing.
struct BoundedAllocation {
  Address base = 0;
  std::uint64_t requested = 0;
  std::uint64_t capacity = 0;
  std::uint64_t id = 0;
};

/// Outcome of a checked wrapper. `performed` reports whether bytes were
/// touched: in Enforce mode a violation suppresses the operation, in Audit
/// mode it is logged and the operation proceeds anyway.
struct OpResult {
  std::optional<Violation> violation;
  bool performed = false;

  bool ok() const { return !violation.has_value(); }
};

using ViolationSink = std::function<void(const Violation&)>;

/// Size-class pool plus the address-ordered metadata map that backs bound
/// derivation. Thread-safe: mutations take the registry exclusively, queries
/// and checked wrappers share it.
class PoolRegistry {
 public:
  static constexpr std::array<std::uint64_t, 11> kSizeClasses{
      8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192};
  static constexpr std::byte kFreePoison{0x6B};

  PoolRegistry(std::uint64_t extent_len, CheckMode mode)
      : extent_(extent_len), mode_(mode) {
    if (extent_len <= kSizeClasses.back()) {
      throw PoolError(PoolError::Code::ExtentTooSmall,
                      "pool extent must exceed the largest size class");
    }
    arena_.resize(extent_len);
  }

  PoolRegistry(const PoolRegistry&) = delete;
  PoolRegistry& operator=(const PoolRegistry&) = delete;

  CheckMode mode() const { return mode_; }
  std::uint64_t extent() const { return extent_; }

  /// Smallest size class holding `size` bytes.
  static std::uint64_t size_class_for(std::uint64_t size) {
    if (size == 0) {
      throw PoolError(PoolError::Code::SizeZero, "zero-byte allocation");
    }
    for (std::uint64_t cls : kSizeClasses) {
      if (size <= cls) return cls;
    }
    throw PoolError(PoolError::Code::SizeTooLarge,
                    "allocation larger than the largest size class");
  }

  /// Allocates `size` bytes rounded up to the owning size class. The region
  /// is class-aligned, zeroed, and disjoint from every other live allocation.
  BoundedAllocation alloc(std::uint64_t size) {
    const std::uint64_t capacity = size_class_for(size);
    std::unique_lock lock(mu_);

    // First fit: walk the gaps between live allocations in address order.
    Address candidate = 0;
    for (const auto& [base, a] : live_) {
      if (candidate + capacity <= base) break;
      candidate = std::max(candidate, align_up(base + a.capacity, capacity));
    }
    if (candidate + capacity > extent_) {
      throw PoolError(PoolError::Code::OutOfMemory, "pool exhausted");
    }

    BoundedAllocation allocation{candidate, size, capacity, next_id_++};
    std::memset(arena_.data() + candidate, 0, capacity);
    live_.emplace(candidate, allocation);
    id_to_base_.emplace(allocation.id, candidate);
    return allocation;
  }

  /// Releases a live allocation and poisons its bytes.
  void free(std::uint64_t alloc_id) {
    std::unique_lock lock(mu_);
    auto it = id_to_base_.find(alloc_id);
    if (it == id_to_base_.end()) {
      if (retired_.count(alloc_id)) {
        throw PoolError(PoolError::Code::DoubleFree, "allocation already freed");
      }
      throw PoolError(PoolError::Code::UnknownAllocation,
                      "no such allocation id");
    }
    const auto live_it = live_.find(it->second);
    std::memset(arena_.data() + live_it->second.base,
                std::to_integer<int>(kFreePoison), live_it->second.capacity);
    live_.erase(live_it);
    id_to_base_.erase(it);
    retired_.insert(alloc_id);
  }

  /// Derives bounds from the address value alone: the covering live
  /// allocation's class interval, or infinite bounds for anything else
  /// (freed regions, gaps, addresses outside the pool). Total, never fails.
  Bounds load_bounds(Address addr) const {
    std::shared_lock lock(mu_);
    return load_bounds_locked(addr);
  }

  /// Checks [addr, addr+len) against load_bounds(addr). A failed check is
  /// logged through the violation sink in both modes; Enforce additionally
  /// means callers must treat the returned violation as a hard failure.
  std::optional<Violation> check_access(Address addr, std::uint64_t len,
                                        std::string_view operation = "access") const {
    std::shared_lock lock(mu_);
    return check_locked(addr, len, operation);
  }

  /// Bounds-checked overlap-safe copy of n bytes inside the pool.
  OpResult checked_copy(Address dst, Address src, std::uint64_t n) {
    return copy_impl(dst, src, n, "checked_copy");
  }

  /// Same contract as checked_copy; kept as a separate wrapper mirroring the
  /// memmove entry point of the wrapped family.
  OpResult checked_move(Address dst, Address src, std::uint64_t n) {
    return copy_impl(dst, src, n, "checked_move");
  }

  /// Bounds-checked fill of n bytes.
  OpResult checked_set(Address dst, std::byte value, std::uint64_t n) {
    if (n == 0) return OpResult{std::nullopt, true};
    std::shared_lock lock(mu_);
    auto violation = check_locked(dst, n, "checked_set");
    if (violation && mode_ == CheckMode::Enforce) {
      return OpResult{std::move(violation), false};
    }
    const auto [off, len] = clamp_to_extent(dst, n);
    std::memset(arena_.data() + off, std::to_integer<int>(value), len);
    return OpResult{std::move(violation), true};
  }

  /// Unchecked view of the arena bytes, for seeding test data and for the
  /// raw-copy benchmark baseline.
  std::span<std::byte> raw_bytes() { return arena_; }
  std::span<const std::byte> raw_bytes() const { return arena_; }

  std::size_t live_allocations() const {
    std::shared_lock lock(mu_);
    return live_.size();
  }

  std::vector<BoundedAllocation> live_snapshot() const {
    std::shared_lock lock(mu_);
    std::vector<BoundedAllocation> out;
    out.reserve(live_.size());
    for (const auto& [base, a] : live_) out.push_back(a);
    return out;
  }

  /// Installs a sink for violation records (default: log line on stderr).
  /// The sink must not call back into this pool.
  ViolationSink set_violation_sink(ViolationSink sink) {
    std::lock_guard lock(sink_mu_);
    return std::exchange(sink_, std::move(sink));
  }

 private:
  static Address align_up(Address value, std::uint64_t alignment) {
    return (value + alignment - 1) & ~(alignment - 1);
  }

  Bounds load_bounds_locked(Address addr) const {
    auto it = live_.upper_bound(addr);
    if (it != live_.begin()) {
      const auto& a = std::prev(it)->second;
      if (addr - a.base < a.capacity) {
        return Bounds{a.base, a.base + a.capacity, false};
      }
    }
    return Bounds::infinite_bounds();
  }

  std::optional<Violation> check_locked(Address addr, std::uint64_t len,
                                        std::string_view operation) const {
    auto violation = check_interval(load_bounds_locked(addr), addr, len, operation);
    if (violation) log_violation(*violation);
    return violation;
  }

  void log_violation(const Violation& violation) const {
    ViolationSink sink;
    {
      std::lock_guard lock(sink_mu_);
      sink = sink_;
    }
    if (sink) {
      sink(violation);
    } else {
      std::fprintf(stderr, "%s\n", violation.log_line().c_str());
    }
  }

  // Audit mode may legitimately run past an allocation's bounds; the arena
  // edge is still a hard stop.
  std::pair<Address, std::uint64_t> clamp_to_extent(Address addr,
                                                    std::uint64_t len) const {
    if (addr >= extent_) return {0, 0};
    return {addr, std::min(len, extent_ - addr)};
  }

  OpResult copy_impl(Address dst, Address src, std::uint64_t n,
                     std::string_view operation) {
    if (n == 0) return OpResult{std::nullopt, true};
    std::shared_lock lock(mu_);
    auto src_violation = check_locked(src, n, operation);
    if (src_violation && mode_ == CheckMode::Enforce) {
      return OpResult{std::move(src_violation), false};
    }
    auto dst_violation = check_locked(dst, n, operation);
    if (dst_violation && mode_ == CheckMode::Enforce) {
      return OpResult{std::move(dst_violation), false};
    }
    const auto [src_off, src_len] = clamp_to_extent(src, n);
    const auto [dst_off, dst_len] = clamp_to_extent(dst, n);
    const std::uint64_t len = std::min(src_len, dst_len);
    if (len > 0) {
      std::memmove(arena_.data() + dst_off, arena_.data() + src_off, len);
    }
    return OpResult{
        src_violation ? std::move(src_violation) : std::move(dst_violation),
        true};
  }

  std::uint64_t extent_;
  CheckMode mode_;
  std::vector<std::byte> arena_;
  std::map<Address, BoundedAllocation> live_;
  std::unordered_map<std::uint64_t, Address> id_to_base_;
  std::unordered_set<std::uint64_t> retired_;
  std::uint64_t next_id_ = 1;
  mutable std::shared_mutex mu_;
  mutable std::mutex sink_mu_;
  ViolationSink sink_;
};

namespace detail {

// Placement math relies on power-of-two classes in ascending order.
consteval bool pool_classes_well_formed() {
  for (std::size_t i = 0; i < PoolRegistry::kSizeClasses.size(); ++i) {
    const std::uint64_t cls = PoolRegistry::kSizeClasses[i];
    if ((cls & (cls - 1)) != 0) return false;
    if (i > 0 && cls <= PoolRegistry::kSizeClasses[i - 1]) return false;
  }
  return true;
}
static_assert(pool_classes_well_formed());

}  // namespace detail

}  // namespace memguard
