// memguard command-line front end.
//
//   memguard scan <paths...> [--format text|json] [--release-regex R]...
//   memguard bench [--iterations N] [--json]
//   memguard demo-bounds [--audit]
//
// Exit codes: scan follows the scanner contract (0 clean, 1 findings,
// 2 scan errors); demo-bounds exits 1 when the overrun is blocked and 0 in
// audit mode; usage errors exit 64.

#include <unistd.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "memguard/bench.hpp"
#include "memguard/bounds.hpp"
#include "memguard/scanner.hpp"

namespace {

constexpr int kUsageError = 64;

bool color_enabled() {
  if (const char* env = std::getenv("MEMGUARD_COLOR")) {
    return std::string_view(env) == "1";
  }
  return isatty(fileno(stdout)) != 0;
}

const char* em(bool color) { return color ? "\033[1m" : ""; }
const char* reset(bool color) { return color ? "\033[0m" : ""; }

int run_scan(const std::vector<std::string>& paths, const std::string& format,
             const std::vector<std::string>& extra_release_regexes) {
  memguard::PatternConfig config = memguard::PatternConfig::defaults();
  for (const auto& regex : extra_release_regexes) {
    config.release_patterns.push_back({regex, false});
  }

  memguard::ScanReport report;
  for (const auto& path : paths) {
    auto partial = memguard::scan_tree(path, config);
    report.files_scanned += partial.files_scanned;
    report.findings.insert(report.findings.end(),
                           std::make_move_iterator(partial.findings.begin()),
                           std::make_move_iterator(partial.findings.end()));
    report.errors.insert(report.errors.end(),
                         std::make_move_iterator(partial.errors.begin()),
                         std::make_move_iterator(partial.errors.end()));
  }

  if (format == "json") {
    memguard::write_json_report(std::cout, report);
    for (const auto& e : report.errors) {
      std::cerr << e.file << ": error: " << e.reason << '\n';
    }
  } else {
    memguard::write_text_report(std::cout, report, color_enabled());
  }
  return memguard::report_exit_code(report);
}

void print_bench_table(const std::vector<memguard::BenchResult>& results) {
  std::printf("%-40s %12s %12s %8s\n", "name", "iterations", "ns/op", "ratio");
  for (const auto& r : results) {
    std::printf("%-40s %12llu %12.2f %8.2f\n", r.name.c_str(),
                static_cast<unsigned long long>(r.iterations), r.ns_per_op,
                r.ratio_to_baseline);
  }
}

int run_bench(std::uint64_t iterations, bool json) {
  auto counter = memguard::bench_refcount(iterations);
  const std::array<std::uint64_t, 2> sizes{256, 65536};
  auto copies = memguard::bench_copy(
      sizes, std::max<std::uint64_t>(1000, iterations / 5));

  std::vector<memguard::BenchResult> flat{counter.baseline, counter.checked};
  for (const auto& entry : copies) {
    flat.push_back(entry.raw);
    flat.push_back(entry.checked_known);
    flat.push_back(entry.checked_loaded);
  }

  if (json) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& r : flat) {
      doc.push_back({{"name", r.name},
                     {"iterations", r.iterations},
                     {"ns_per_op", r.ns_per_op},
                     {"ratio_to_baseline", r.ratio_to_baseline}});
    }
    std::cout << doc.dump(2) << '\n';
  } else {
    print_bench_table(flat);
    std::printf("\nsaturating/unchecked increment ratio: %.2f\n",
                counter.checked.ratio_to_baseline);
    for (const auto& entry : copies) {
      std::printf("checked-copy overhead at %llu B: %+.1f%% (bounds known), "
                  "%+.1f%% (bounds loaded)\n",
                  static_cast<unsigned long long>(entry.size),
                  100.0 * (entry.checked_known.ratio_to_baseline - 1.0),
                  100.0 * (entry.checked_loaded.ratio_to_baseline - 1.0));
    }
  }
  return 0;
}

int run_demo_bounds(bool audit) {
  const bool color = color_enabled();
  const auto mode =
      audit ? memguard::CheckMode::Audit : memguard::CheckMode::Enforce;
  memguard::PoolRegistry pool(1 << 20, mode);
  pool.set_violation_sink([](const memguard::Violation& violation) {
    std::cout << violation.log_line() << '\n';
  });

  auto dst = pool.alloc(100);
  auto src = pool.alloc(200);
  std::printf("%sdemo:%s dst id=%llu capacity=%llu (requested %llu)\n",
              em(color), reset(color),
              static_cast<unsigned long long>(dst.id),
              static_cast<unsigned long long>(dst.capacity),
              static_cast<unsigned long long>(dst.requested));
  std::printf("%sdemo:%s src id=%llu capacity=%llu (requested %llu)\n",
              em(color), reset(color),
              static_cast<unsigned long long>(src.id),
              static_cast<unsigned long long>(src.capacity),
              static_cast<unsigned long long>(src.requested));

  auto bytes = pool.raw_bytes();
  for (std::uint64_t i = 0; i < 200; ++i) {
    bytes[src.base + i] = static_cast<std::byte>(i);
  }

  std::printf("%sdemo:%s copying 200 bytes into the 128-byte destination\n",
              em(color), reset(color));
  auto result = pool.checked_copy(dst.base, src.base, 200);

  if (audit) {
    std::printf("%sdemo:%s audit mode logged the violation and completed "
                "the copy (%s)\n",
                em(color), reset(color),
                result.performed ? "bytes written" : "bytes untouched");
    return 0;
  }
  std::printf("%sdemo:%s enforce mode blocked the copy; destination "
              "unchanged (%s)\n",
              em(color), reset(color),
              result.performed ? "bytes written" : "bytes untouched");
  return result.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memguard: saturating reference counting, pointer bounds "
               "checking, and a refcount-pattern scanner"};
  app.require_subcommand(1);

  std::vector<std::string> paths;
  std::string format = "text";
  std::vector<std::string> release_regexes;
  auto* scan = app.add_subcommand(
      "scan", "Scan C sources for atomic_t reference-counter patterns");
  scan->add_option("paths", paths, "Files or directories to scan")
      ->required()
      ->expected(-1);
  scan->add_option("--format", format, "Output format")
      ->check(CLI::IsMember({"text", "json"}));
  scan->add_option("--release-regex", release_regexes,
                   "Additional release-call name pattern (repeatable)")
      ->check([](const std::string& value) -> std::string {
        try {
          std::regex probe(value);
        } catch (const std::regex_error& e) {
          return std::string("invalid regex: ") + e.what();
        }
        return {};
      });

  std::uint64_t iterations = 1'000'000;
  bool bench_json = false;
  auto* bench = app.add_subcommand(
      "bench", "Measure checked vs unchecked increment and copy costs");
  bench->add_option("--iterations", iterations, "Counter-loop iterations")
      ->check(CLI::Range(std::uint64_t{1}, std::uint64_t{1} << 40));
  bench->add_flag("--json", bench_json, "Machine-readable output");

  bool audit = false;
  auto* demo = app.add_subcommand(
      "demo-bounds", "Provoke a buffer overrun against the checked pool");
  demo->add_flag("--audit", audit, "Log the violation but let the copy run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (scan->parsed()) return run_scan(paths, format, release_regexes);
    if (bench->parsed()) return run_bench(iterations, bench_json);
    if (demo->parsed()) return run_demo_bounds(audit);
  } catch (const std::exception& e) {
    std::cerr << "memguard: " << e.what() << '\n';
    return 2;
  }
  return kUsageError;
}
