#include <cstdint>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "memguard/refcount.hpp"
#include "support/capture.hpp"
#include "support/refcount_model.hpp"

using memguard::FastRefCount;
using memguard::kRefCountSaturated;
using memguard::MisuseKind;
using memguard::RefCount;
using memguard::testing::EventCapture;
using memguard::testing::kAllModelOps;
using memguard::testing::ModelOp;
using memguard::testing::ProbeLock;
using memguard::testing::RefCountModel;

namespace {
constexpr std::uint32_t kMax = kRefCountSaturated;
}

TEST_CASE("set and read are plain stores and loads", "[refcount]") {
  RefCount c;
  c.set(1);
  CHECK(c.read() == 1);
  c.set(0);
  CHECK(c.read() == 0);
  c.set(kMax);
  CHECK(c.read() == kMax);
  c.set(3);
  CHECK(c.read() == 3);
}

TEST_CASE("add_not_zero covers all four branches", "[refcount]") {
  EventCapture capture;

  SECTION("prior zero refuses without an event") {
    RefCount c;
    CHECK_FALSE(c.add_not_zero(1));
    CHECK(c.read() == 0);
    CHECK(capture.total() == 0);
  }
  SECTION("saturated counter stays put but reports non-zero") {
    RefCount c(kMax);
    CHECK(c.add_not_zero(1));
    CHECK(c.read() == kMax);
    CHECK(capture.total() == 0);
  }
  SECTION("overflowing addition saturates and reports once") {
    RefCount c(kMax - 2);
    CHECK(c.add_not_zero(5));
    CHECK(c.read() == kMax);
    CHECK(capture.count(MisuseKind::Saturated) == 1);
  }
  SECTION("in-range addition") {
    RefCount c(7);
    CHECK(c.add_not_zero(3));
    CHECK(c.read() == 10);
    CHECK(capture.total() == 0);
  }
  SECTION("zero summand is a reported usage error with no state change") {
    RefCount c(5);
    CHECK(c.add_not_zero(0));  // prior != 0
    CHECK(c.read() == 5);
    CHECK(capture.count(MisuseKind::ZeroAdjustment) == 1);

    RefCount dead;
    CHECK_FALSE(dead.add_not_zero(0));
    CHECK(dead.read() == 0);
  }
}

TEST_CASE("inc_not_zero is add_not_zero of one", "[refcount]") {
  RefCount zero;
  CHECK_FALSE(zero.inc_not_zero());
  CHECK(zero.read() == 0);

  RefCount one(1);
  CHECK(one.inc_not_zero());
  CHECK(one.read() == 2);

  RefCount sat(kMax);
  CHECK(sat.inc_not_zero());
  CHECK(sat.read() == kMax);
}

TEST_CASE("add refuses increments from zero", "[refcount]") {
  EventCapture capture;

  RefCount c(2);
  c.add(4);
  CHECK(c.read() == 6);
  CHECK(capture.total() == 0);

  RefCount dead;
  dead.add(4);
  CHECK(dead.read() == 0);
  CHECK(capture.count(MisuseKind::IncrementOnZero) == 1);

  RefCount near(kMax - 1);
  near.add(3);
  CHECK(near.read() == kMax);
  CHECK(capture.count(MisuseKind::Saturated) == 1);
}

TEST_CASE("inc matches add of one", "[refcount]") {
  EventCapture capture;

  RefCount c(5);
  c.inc();
  CHECK(c.read() == 6);

  RefCount dead;
  dead.inc();
  CHECK(dead.read() == 0);
  CHECK(capture.count(MisuseKind::IncrementOnZero) == 1);

  RefCount sat(kMax);
  sat.inc();
  CHECK(sat.read() == kMax);
  CHECK(capture.count(MisuseKind::Saturated) == 0);
}

TEST_CASE("landing exactly on the maximum still counts as saturation",
          "[refcount]") {
  EventCapture capture;
  RefCount c(kMax - 1);
  c.inc();
  CHECK(c.read() == kMax);
  CHECK(capture.count(MisuseKind::Saturated) == 1);
  c.inc();  // absorbed, no second event
  CHECK(c.read() == kMax);
  CHECK(capture.count(MisuseKind::Saturated) == 1);
}

TEST_CASE("sub_and_test decreases and reports exhaustion", "[refcount]") {
  EventCapture capture;

  RefCount c(5);
  CHECK(c.sub_and_test(5));
  CHECK(c.read() == 0);

  RefCount sat(kMax);
  CHECK_FALSE(sat.sub_and_test(1));
  CHECK(sat.read() == kMax);
  CHECK(capture.total() == 0);

  // Frozen from the sequential model: underflow freezes the value.
  RefCountModel model(3);
  auto step = model.apply(ModelOp::SubAndTest, 7);
  REQUIRE(step.returned_flag == false);
  REQUIRE(model.value() == 3);
  REQUIRE(step.events == std::vector<MisuseKind>{MisuseKind::Underflow});

  RefCount u(3);
  CHECK_FALSE(u.sub_and_test(7));
  CHECK(u.read() == 3);
  CHECK(capture.count(MisuseKind::Underflow) == 1);
}

TEST_CASE("dec_and_test signals release exactly at zero", "[refcount]") {
  EventCapture capture;

  RefCount one(1);
  CHECK(one.dec_and_test());
  CHECK(one.read() == 0);

  RefCount two(2);
  CHECK_FALSE(two.dec_and_test());
  CHECK(two.read() == 1);

  RefCountModel model(0);
  auto step = model.apply(ModelOp::DecAndTest);
  REQUIRE(step.returned_flag == false);
  REQUIRE(model.value() == 0);
  REQUIRE(step.events == std::vector<MisuseKind>{MisuseKind::DecrementOnZero});

  RefCount dead;
  CHECK_FALSE(dead.dec_and_test());
  CHECK(dead.read() == 0);
  CHECK(capture.count(MisuseKind::DecrementOnZero) == 1);
}

TEST_CASE("dec allows but reports an unobserved transition to zero",
          "[refcount]") {
  EventCapture capture;

  RefCount c(3);
  c.dec();
  CHECK(c.read() == 2);
  CHECK(capture.total() == 0);

  RefCount last(1);
  last.dec();
  CHECK(last.read() == 0);
  CHECK(capture.count(MisuseKind::DecrementToZeroWithoutTest) == 1);

  RefCount sat(kMax);
  sat.dec();
  CHECK(sat.read() == kMax);

  RefCount dead;
  dead.dec();
  CHECK(dead.read() == 0);
  CHECK(capture.count(MisuseKind::DecrementOnZero) == 1);
}

TEST_CASE("dec_if_one fires only on exactly one", "[refcount]") {
  EventCapture capture;

  RefCount one(1);
  CHECK(one.dec_if_one());
  CHECK(one.read() == 0);

  RefCount two(2);
  CHECK_FALSE(two.dec_if_one());
  CHECK(two.read() == 2);

  RefCount sat(kMax);
  CHECK_FALSE(sat.dec_if_one());
  CHECK(sat.read() == kMax);

  RefCount dead;
  CHECK_FALSE(dead.dec_if_one());
  CHECK(dead.read() == 0);
  CHECK(capture.total() == 0);
}

TEST_CASE("dec_not_one treats one as the recycle sentinel", "[refcount]") {
  EventCapture capture;

  RefCount one(1);
  CHECK_FALSE(one.dec_not_one());
  CHECK(one.read() == 1);

  RefCount four(4);
  CHECK(four.dec_not_one());
  CHECK(four.read() == 3);

  RefCount sat(kMax);
  CHECK(sat.dec_not_one());
  CHECK(sat.read() == kMax);

  RefCount dead;
  CHECK(dead.dec_not_one());
  CHECK(dead.read() == 0);
  CHECK(capture.count(MisuseKind::DecrementOnZero) == 1);
}

TEST_CASE("dec_and_lock hands the lock over only when zero is reached",
          "[refcount]") {
  EventCapture capture;

  RefCount one(1);
  ProbeLock lock;
  CHECK(one.dec_and_lock(lock));
  CHECK(one.read() == 0);
  CHECK(lock.held);
  lock.unlock();

  RefCount three(3);
  CHECK_FALSE(three.dec_and_lock(lock));
  CHECK(three.read() == 2);
  CHECK_FALSE(lock.held);

  RefCount sat(kMax);
  CHECK_FALSE(sat.dec_and_lock(lock));
  CHECK(sat.read() == kMax);
  CHECK_FALSE(lock.held);

  RefCount dead;
  CHECK_FALSE(dead.dec_and_lock(lock));
  CHECK(dead.read() == 0);
  CHECK_FALSE(lock.held);
  CHECK(capture.count(MisuseKind::DecrementOnZero) == 1);
}

TEST_CASE("misuse is reported once per counter and kind", "[refcount]") {
  EventCapture capture;

  RefCount dead;
  dead.inc();
  dead.inc();
  dead.inc();
  CHECK(capture.count(MisuseKind::IncrementOnZero) == 1);

  dead.dec();  // different kind, same counter
  CHECK(capture.count(MisuseKind::DecrementOnZero) == 1);

  RefCount other;  // latches are per counter
  other.inc();
  CHECK(capture.count(MisuseKind::IncrementOnZero) == 2);
}

TEST_CASE("unchecked mode is plain wrapping arithmetic with no events",
          "[refcount][fast]") {
  EventCapture capture;

  FastRefCount c(kMax);
  c.inc();
  CHECK(c.read() == 0);  // wrapped

  FastRefCount dead;
  dead.inc();
  CHECK(dead.read() == 1);  // incremented from zero, nobody stopped it

  FastRefCount z;
  CHECK_FALSE(z.add_not_zero(5));  // add-unless-zero still tests zero
  z.set(2);
  CHECK(z.add_not_zero(5));
  CHECK(z.read() == 7);

  FastRefCount one(1);
  CHECK(one.dec_and_test());
  CHECK(one.read() == 0);
  CHECK(one.dec_not_one());  // decrements from zero, wrapping
  CHECK(one.read() == kMax);
  one.set(4);
  CHECK(one.dec_not_one());
  CHECK(one.read() == 3);

  CHECK(capture.total() == 0);
}

TEST_CASE("random sequences match the sequential model", "[refcount][model]") {
  EventCapture capture;
  std::mt19937 rng(0xC0FFEE);
  std::uniform_int_distribution<int> op_dist(0, 11);
  const std::uint32_t seeds[] = {0, 1, 2, kMax - 2, kMax};
  const std::uint32_t args[] = {0, 1, 2, 3, 5, 100, 0x80000000u, kMax - 2, kMax};
  std::uniform_int_distribution<int> arg_dist(0, 8);

  for (int seq = 0; seq < 3000; ++seq) {
    const std::uint32_t seed = seeds[seq % 5];
    RefCount counter(seed);
    RefCountModel model(seed);
    ProbeLock lock;

    for (int i = 0; i < 10; ++i) {
      const ModelOp op = kAllModelOps[op_dist(rng)];
      const std::uint32_t arg = args[arg_dist(rng)];
      capture.clear();
      auto expected = model.apply(op, arg);

      std::optional<bool> got_flag;
      std::optional<std::uint32_t> got_value;
      bool got_lock = false;
      switch (op) {
        case ModelOp::Set: counter.set(arg); break;
        case ModelOp::Read: got_value = counter.read(); break;
        case ModelOp::AddNotZero: got_flag = counter.add_not_zero(arg); break;
        case ModelOp::IncNotZero: got_flag = counter.inc_not_zero(); break;
        case ModelOp::Add: counter.add(arg); break;
        case ModelOp::Inc: counter.inc(); break;
        case ModelOp::SubAndTest: got_flag = counter.sub_and_test(arg); break;
        case ModelOp::DecAndTest: got_flag = counter.dec_and_test(); break;
        case ModelOp::Dec: counter.dec(); break;
        case ModelOp::DecIfOne: got_flag = counter.dec_if_one(); break;
        case ModelOp::DecNotOne: got_flag = counter.dec_not_one(); break;
        case ModelOp::DecAndLock:
          got_flag = counter.dec_and_lock(lock);
          got_lock = lock.held;
          if (lock.held) lock.unlock();
          break;
      }

      INFO("seq " << seq << " step " << i << " op "
                  << memguard::testing::to_string(op) << " arg " << arg);
      REQUIRE(counter.read() == model.value());
      REQUIRE(got_flag == expected.returned_flag);
      if (expected.returned_value) REQUIRE(got_value == expected.returned_value);
      if (op == ModelOp::DecAndLock) REQUIRE(got_lock == expected.lock_held);

      std::vector<MisuseKind> got_kinds;
      for (const auto& e : capture.events()) got_kinds.push_back(e.kind);
      REQUIRE(got_kinds == expected.events);
    }
  }
}

TEST_CASE("wrap freedom: increasing ops never lower, decreasing never raise",
          "[refcount][property]") {
  EventCapture capture;
  std::mt19937 rng(42);
  std::uniform_int_distribution<int> op_dist(2, 11);  // skip set/read
  const std::uint32_t args[] = {1, 2, 3, 1000, kMax - 1, kMax};
  std::uniform_int_distribution<int> arg_dist(0, 5);
  const std::uint32_t seeds[] = {0, 1, 2, 57, kMax - 2, kMax};

  for (std::uint32_t seed : seeds) {
    RefCount c(seed);
    ProbeLock lock;
    for (int i = 0; i < 4000; ++i) {
      const ModelOp op = kAllModelOps[op_dist(rng)];
      const std::uint32_t before = c.read();
      switch (op) {
        case ModelOp::AddNotZero: c.add_not_zero(args[arg_dist(rng)]); break;
        case ModelOp::IncNotZero: c.inc_not_zero(); break;
        case ModelOp::Add: c.add(args[arg_dist(rng)]); break;
        case ModelOp::Inc: c.inc(); break;
        case ModelOp::SubAndTest: c.sub_and_test(args[arg_dist(rng)]); break;
        case ModelOp::DecAndTest: c.dec_and_test(); break;
        case ModelOp::Dec: c.dec(); break;
        case ModelOp::DecIfOne: c.dec_if_one(); break;
        case ModelOp::DecNotOne: c.dec_not_one(); break;
        case ModelOp::DecAndLock:
          if (c.dec_and_lock(lock)) lock.unlock();
          break;
        default: break;
      }
      const std::uint32_t after = c.read();
      const bool increasing = op == ModelOp::AddNotZero ||
                              op == ModelOp::IncNotZero || op == ModelOp::Add ||
                              op == ModelOp::Inc;
      INFO("op " << memguard::testing::to_string(op) << " before " << before
                 << " after " << after);
      if (increasing) {
        REQUIRE(after >= before);
        if (before == 0) REQUIRE(after == 0);
      } else {
        REQUIRE(after <= before);
        if (before == kMax) REQUIRE(after == kMax);
      }
    }
  }
}

TEST_CASE("saturation is absorbing", "[refcount][property]") {
  EventCapture capture;
  std::mt19937 rng(7);
  RefCount c(kMax);
  ProbeLock lock;
  std::uniform_int_distribution<int> op_dist(2, 11);
  for (int i = 0; i < 5000; ++i) {
    const ModelOp op = kAllModelOps[op_dist(rng)];
    switch (op) {
      case ModelOp::AddNotZero: c.add_not_zero(3); break;
      case ModelOp::IncNotZero: c.inc_not_zero(); break;
      case ModelOp::Add: c.add(1000); break;
      case ModelOp::Inc: c.inc(); break;
      case ModelOp::SubAndTest: c.sub_and_test(2); break;
      case ModelOp::DecAndTest: c.dec_and_test(); break;
      case ModelOp::Dec: c.dec(); break;
      case ModelOp::DecIfOne: c.dec_if_one(); break;
      case ModelOp::DecNotOne: c.dec_not_one(); break;
      case ModelOp::DecAndLock:
        if (c.dec_and_lock(lock)) lock.unlock();
        break;
      default: break;
    }
    REQUIRE(c.read() == kMax);
  }
}

TEST_CASE("zero is stable under increasing ops", "[refcount][property]") {
  EventCapture capture;
  RefCount c;
  for (int i = 0; i < 1000; ++i) {
    c.inc();
    c.add(17);
    c.inc_not_zero();
    c.add_not_zero(5);
    REQUIRE(c.read() == 0);
  }
}

TEST_CASE("no increments are lost below saturation", "[refcount][thread]") {
  EventCapture capture;
  constexpr int kThreads = 4;
  constexpr int kPerThread = 10000;
  RefCount c(1);

  std::vector<std::thread> workers;
  workers.reserve(kThreads);
  for (int t = 0; t < kThreads; ++t) {
    workers.emplace_back([&c] {
      for (int i = 0; i < kPerThread; ++i) c.inc();
    });
  }
  for (auto& w : workers) w.join();

  CHECK(c.read() == 1 + kThreads * kPerThread);
  CHECK(capture.total() == 0);
}

TEST_CASE("exactly one thread observes the release transition",
          "[refcount][thread]") {
  EventCapture capture;
  constexpr int kThreads = 8;

  for (int round = 0; round < 50; ++round) {
    RefCount c(kThreads);
    std::atomic<int> holders{0};
    std::vector<std::thread> workers;
    for (int t = 0; t < kThreads; ++t) {
      workers.emplace_back([&] {
        if (c.dec_and_test()) holders.fetch_add(1);
      });
    }
    for (auto& w : workers) w.join();
    REQUIRE(holders.load() == 1);
    REQUIRE(c.read() == 0);
  }
}

TEST_CASE("interior mixed workload lands exactly on the multiset sum",
          "[refcount][thread]") {
  // Away from 0 and the saturation point every operation's effect is
  // deterministic, so any interleaving of the same op multiset must reach
  // the same final value.
  EventCapture capture;
  constexpr int kThreads = 4;
  constexpr int kPerThread = 10000;
  constexpr std::uint32_t kBase = 1000000;

  RefCount c(kBase);
  std::atomic<std::int64_t> applied{0};
  std::atomic<int> unexpected_returns{0};
  std::vector<std::thread> workers;
  for (int t = 0; t < kThreads; ++t) {
    workers.emplace_back([&c, &applied, &unexpected_returns, t] {
      std::mt19937 rng(1000 + t);
      std::int64_t delta = 0;
      for (int i = 0; i < kPerThread; ++i) {
        switch (rng() % 6) {
          case 0: c.inc(); delta += 1; break;
          case 1: c.add(3); delta += 3; break;
          case 2: c.dec(); delta -= 1; break;
          case 3:
            if (c.sub_and_test(2)) ++unexpected_returns;  // never zero here
            delta -= 2;
            break;
          case 4:
            if (!c.dec_not_one()) ++unexpected_returns;
            delta -= 1;
            break;
          case 5:
            if (c.dec_if_one()) ++unexpected_returns;  // value is never one
            break;
        }
      }
      applied.fetch_add(delta);
    });
  }
  for (auto& w : workers) w.join();

  REQUIRE(unexpected_returns.load() == 0);
  REQUIRE(c.read() == kBase + applied.load());
  REQUIRE(capture.total() == 0);
}

TEST_CASE("saturation absorbs a concurrent increment storm",
          "[refcount][thread]") {
  EventCapture capture;
  constexpr int kThreads = 8;
  RefCount c(kRefCountSaturated - 1000);

  std::vector<std::thread> workers;
  for (int t = 0; t < kThreads; ++t) {
    workers.emplace_back([&c] {
      for (int i = 0; i < 10000; ++i) {
        c.inc();
        c.add(5);
      }
    });
  }
  for (auto& w : workers) w.join();

  REQUIRE(c.read() == kRefCountSaturated);
  CHECK(capture.count(MisuseKind::Saturated) == 1);  // warn-once
  CHECK(capture.total() == 1);
}

TEST_CASE("dec_and_lock grants the lock to exactly one releaser",
          "[refcount][thread]") {
  EventCapture capture;
  constexpr int kThreads = 8;

  for (int round = 0; round < 20; ++round) {
    RefCount c(kThreads);
    std::mutex mu;
    std::atomic<int> winners{0};
    std::atomic<int> nonzero_under_lock{0};
    std::vector<std::thread> workers;
    for (int t = 0; t < kThreads; ++t) {
      workers.emplace_back([&] {
        if (c.dec_and_lock(mu)) {
          winners.fetch_add(1);
          if (c.read() != 0) nonzero_under_lock.fetch_add(1);
          mu.unlock();
        }
      });
    }
    for (auto& w : workers) w.join();
    REQUIRE(winners.load() == 1);
    REQUIRE(nonzero_under_lock.load() == 0);
    REQUIRE(c.read() == 0);
  }
}

TEST_CASE("set_event_sink returns the previous sink", "[refcount]") {
  bool fired = false;
  auto previous = memguard::set_event_sink(
      [&fired](const memguard::MisuseEvent&) { fired = true; });
  RefCount dead;
  dead.inc();
  CHECK(fired);
  memguard::set_event_sink(std::move(previous));
}
