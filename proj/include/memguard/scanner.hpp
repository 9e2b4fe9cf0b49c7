// Token-based analyzer that flags atomic_t usage behaving like a reference
// counter, making the variable a candidate for conversion to a checked
// counter type. Four pattern families are recognized:
//
//   r1  a listed *_dec_and_test/_dec_and_lock call on &obj->field followed
//       later in the same function body by a release-style call (kfree and
//       friends taking the same object, or any *destroy*/*del*/*queue_work*/
//       *schedule_work*/*call_rcu* call);
//   r4  the alias form of r1: `tmp = obj;` intervenes and the free call
//       takes the alias;
//   r2  atomic_add_unless(&obj->field, -1, 1) and its long/64 variants;
//   r3  an assignment whose right side is atomic_add_return(-1, ...) or one
//       of its variants.
//
// Matching is token-based within brace-matched function bodies, not a full C
// parse: comments, string literals, and preprocessor lines are stripped
// first, and macros are not expanded. That trades precision for recall,
// which is the right trade for a triage tool whose findings get confirmed by
// hand anyway.

#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace memguard {

enum class PatternKind {
  DecAndTestThenFree,       // r1
  DecAndTestAliasThenFree,  // r4
  AddUnlessMinusOneOne,     // r2
  AddReturnMinusOne,        // r3
};

inline const char* pattern_id(PatternKind kind) {
  switch (kind) {
    case PatternKind::DecAndTestThenFree: return "r1";
    case PatternKind::DecAndTestAliasThenFree: return "r4";
    case PatternKind::AddUnlessMinusOneOne: return "r2";
    case PatternKind::AddReturnMinusOne: return "r3";
  }
  return "?";
}

enum class Confidence { Moderate, Low };

inline const char* to_string(Confidence confidence) {
  return confidence == Confidence::Moderate ? "moderate" : "low";
}

struct ScanFinding {
  std::string file;
  int decl_line = 0;                 // line of the atomic operation
  std::optional<int> release_line;   // line of the release call (r1/r4)
  PatternKind pattern = PatternKind::DecAndTestThenFree;
  std::string message;
  Confidence confidence = Confidence::Moderate;
};

struct PatternConfig {
  /// Release-name patterns are searched within the callee identifier. When
  /// first_arg_must_match is set the call only counts if its first argument
  /// names the object the decrement was applied to (the kfree family);
  /// the other families accept any arguments.
  struct ReleasePattern {
    std::string regex;
    bool first_arg_must_match = false;
  };

  std::vector<std::string> decrement_functions;
  std::vector<ReleasePattern> release_patterns;
  std::vector<std::string> add_unless_functions;
  std::vector<std::string> add_return_functions;

  static PatternConfig defaults() {
    PatternConfig config;
    config.decrement_functions = {
        "atomic_dec_and_test",      "atomic_dec_and_lock",
        "atomic_long_dec_and_lock", "atomic_long_dec_and_test",
        "atomic64_dec_and_test",    "local_dec_and_test",
    };
    config.release_patterns = {
        {".*free.*", true},        {".*destroy.*", false},
        {".*del.*", false},        {".*queue_work.*", false},
        {".*schedule_work.*", false}, {".*call_rcu.*", false},
    };
    config.add_unless_functions = {
        "atomic_add_unless",
        "atomic_long_add_unless",
        "atomic64_add_unless",
    };
    config.add_return_functions = {
        "atomic_add_return",
        "atomic_long_add_return",
        "atomic64_add_return",
    };
    return config;
  }
};

class ScanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FileScanError {
  std::string file;
  std::string reason;
};

struct ScanReport {
  std::vector<ScanFinding> findings;
  std::vector<FileScanError> errors;
  std::size_t files_scanned = 0;
};

namespace scanner_detail {

// ---------------------------------------------------------------------------
// Source preparation: blank out comments, string/char literals, and
// preprocessor lines while keeping every newline, so token positions keep
// their original line numbers.
// ---------------------------------------------------------------------------

inline std::string strip_source(std::string_view source) {
  std::string out(source);
  enum class State { Normal, LineComment, BlockComment, String, Char };
  State state = State::Normal;

  for (std::size_t i = 0; i < source.size(); ++i) {
    const char c = source[i];
    const char next = i + 1 < source.size() ? source[i + 1] : '\0';
    switch (state) {
      case State::Normal:
        if (c == '/' && next == '/') {
          state = State::LineComment;
          out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c == '/' && next == '*') {
          state = State::BlockComment;
          out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c == '"') {
          state = State::String;
          out[i] = ' ';
        } else if (c == '\'') {
          state = State::Char;
          out[i] = ' ';
        }
        break;
      case State::LineComment:
        if (c == '\n') {
          state = State::Normal;
        } else {
          out[i] = ' ';
        }
        break;
      case State::BlockComment:
        if (c == '*' && next == '/') {
          state = State::Normal;
          out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c != '\n') {
          out[i] = ' ';
        }
        break;
      case State::String:
      case State::Char: {
        const char quote = state == State::String ? '"' : '\'';
        if (c == '\\' && next != '\0') {
          out[i] = ' ';
          if (next != '\n') out[i + 1] = ' ';
          ++i;
        } else {
          if (c == quote) state = State::Normal;
          if (c != '\n') out[i] = ' ';
        }
        break;
      }
    }
  }

  // Blank preprocessor lines (and their backslash continuations). Macros are
  // not expanded; directives would otherwise leak tokens into bodies.
  std::size_t line_start = 0;
  bool continuing = false;
  while (line_start < out.size()) {
    std::size_t line_end = out.find('\n', line_start);
    if (line_end == std::string::npos) line_end = out.size();

    bool blank_this = continuing;
    if (!blank_this) {
      std::size_t first = line_start;
      while (first < line_end && std::isspace(static_cast<unsigned char>(out[first]))) {
        ++first;
      }
      blank_this = first < line_end && out[first] == '#';
    }
    if (blank_this) {
      continuing = line_end > line_start && out[line_end - 1] == '\\';
      for (std::size_t i = line_start; i < line_end; ++i) out[i] = ' ';
    } else {
      continuing = false;
    }
    line_start = line_end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

struct Token {
  enum class Kind { Identifier, Number, Punct };
  Kind kind;
  std::string_view text;
  int line;
};

inline bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

inline bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

inline std::vector<Token> tokenize(std::string_view stripped) {
  static constexpr std::string_view kThreeCharOps[] = {"<<=", ">>=", "..."};
  static constexpr std::string_view kTwoCharOps[] = {
      "->", "==", "!=", "<=", ">=", "&&", "||", "++", "--",
      "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>"};

  std::vector<Token> tokens;
  int line = 1;
  std::size_t i = 0;
  while (i < stripped.size()) {
    const char c = stripped[i];
    if (c == '\n') {
      ++line;
      ++i;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (is_ident_start(c)) {
      std::size_t j = i + 1;
      while (j < stripped.size() && is_ident_char(stripped[j])) ++j;
      tokens.push_back({Token::Kind::Identifier, stripped.substr(i, j - i), line});
      i = j;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i + 1;
      while (j < stripped.size() &&
             (is_ident_char(stripped[j]) || stripped[j] == '.')) {
        ++j;
      }
      tokens.push_back({Token::Kind::Number, stripped.substr(i, j - i), line});
      i = j;
      continue;
    }
    bool matched = false;
    for (std::string_view op : kThreeCharOps) {
      if (stripped.substr(i, 3) == op) {
        tokens.push_back({Token::Kind::Punct, stripped.substr(i, 3), line});
        i += 3;
        matched = true;
        break;
      }
    }
    if (matched) continue;
    for (std::string_view op : kTwoCharOps) {
      if (stripped.substr(i, 2) == op) {
        tokens.push_back({Token::Kind::Punct, stripped.substr(i, 2), line});
        i += 2;
        matched = true;
        break;
      }
    }
    if (matched) continue;
    tokens.push_back({Token::Kind::Punct, stripped.substr(i, 1), line});
    ++i;
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Structure recovery: top-level function bodies, call sites, assignments.
// ---------------------------------------------------------------------------

inline std::size_t match_brace_forward(const std::vector<Token>& tokens,
                                       std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < tokens.size(); ++i) {
    if (tokens[i].text == "{") ++depth;
    else if (tokens[i].text == "}" && --depth == 0) return i;
  }
  return tokens.size();
}

inline std::optional<std::size_t> match_paren_backward(
    const std::vector<Token>& tokens, std::size_t close) {
  int depth = 0;
  for (std::size_t i = close + 1; i-- > 0;) {
    if (tokens[i].text == ")") ++depth;
    else if (tokens[i].text == "(" && --depth == 0) return i;
  }
  return std::nullopt;
}

/// Token index ranges (half-open) of top-level function bodies: a `{` whose
/// preceding token closes a parenthesized parameter list that follows an
/// identifier.
inline std::vector<std::pair<std::size_t, std::size_t>> function_bodies(
    const std::vector<Token>& tokens) {
  std::vector<std::pair<std::size_t, std::size_t>> bodies;
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (tokens[i].text != "{") {
      ++i;
      continue;
    }
    const std::size_t close = match_brace_forward(tokens, i);
    bool is_function = false;
    if (i > 0 && tokens[i - 1].text == ")") {
      if (auto open = match_paren_backward(tokens, i - 1)) {
        is_function = *open > 0 &&
                      tokens[*open - 1].kind == Token::Kind::Identifier;
      }
    }
    if (is_function) bodies.emplace_back(i + 1, close);
    i = close + 1;
  }
  return bodies;
}

inline bool is_keyword(std::string_view name) {
  static constexpr std::string_view kKeywords[] = {
      "if",     "for",    "while",  "switch",   "return", "sizeof",
      "do",     "else",   "case",   "goto",     "typeof", "defined",
      "void",   "char",   "short",  "int",      "long",   "unsigned",
      "signed", "const",  "volatile", "struct", "union",  "enum",
      "float",  "double", "static", "inline"};
  return std::find(std::begin(kKeywords), std::end(kKeywords), name) !=
         std::end(kKeywords);
}

struct CallSite {
  std::size_t name_idx;
  std::size_t end_idx;  // closing paren
  std::string_view name;
  int line;
  std::vector<std::pair<std::size_t, std::size_t>> args;  // token ranges
};

struct Assignment {
  std::size_t idx;
  std::string_view lhs;
  std::string_view rhs;
};

/// Collects calls `ident ( ... )` within [begin, end), splitting arguments on
/// top-level commas.
inline std::vector<CallSite> collect_calls(const std::vector<Token>& tokens,
                                           std::size_t begin, std::size_t end) {
  std::vector<CallSite> calls;
  for (std::size_t i = begin; i + 1 < end; ++i) {
    if (tokens[i].kind != Token::Kind::Identifier) continue;
    if (tokens[i + 1].text != "(") continue;
    if (is_keyword(tokens[i].text)) continue;

    CallSite call{i, 0, tokens[i].text, tokens[i].line, {}};
    int paren = 0, bracket = 0, brace = 0;
    std::size_t arg_start = i + 2;
    std::size_t j = i + 1;
    for (; j < end; ++j) {
      const auto& t = tokens[j].text;
      if (t == "(") ++paren;
      else if (t == ")") {
        if (--paren == 0) break;
      } else if (t == "[") ++bracket;
      else if (t == "]") --bracket;
      else if (t == "{") ++brace;
      else if (t == "}") --brace;
      else if (t == "," && paren == 1 && bracket == 0 && brace == 0) {
        call.args.emplace_back(arg_start, j);
        arg_start = j + 1;
      }
    }
    if (j >= end) continue;  // unterminated, ignore
    if (j > arg_start) call.args.emplace_back(arg_start, j);
    call.end_idx = j;
    calls.push_back(std::move(call));
  }
  return calls;
}

/// Statement-position alias assignments `y = a;`.
inline std::vector<Assignment> collect_assignments(
    const std::vector<Token>& tokens, std::size_t begin, std::size_t end) {
  std::vector<Assignment> out;
  for (std::size_t i = begin; i + 3 < end; ++i) {
    if (tokens[i].kind != Token::Kind::Identifier) continue;
    if (tokens[i + 1].text != "=") continue;
    if (tokens[i + 2].kind != Token::Kind::Identifier) continue;
    if (tokens[i + 3].text != ";") continue;
    if (i > begin) {
      const auto& prev = tokens[i - 1];
      const bool statement_start =
          prev.text == ";" || prev.text == "{" || prev.text == "}" ||
          prev.text == ")" || prev.text == "else" || prev.text == "do";
      if (!statement_start) continue;
    }
    out.push_back({i, tokens[i].text, tokens[i + 2].text});
  }
  return out;
}

struct ArgShape {
  std::string_view head;  // the object identifier
  bool member = false;    // &(a)->x / &a->x vs plain &a
};

/// Recognizes the address-of argument shapes the patterns accept.
inline std::optional<ArgShape> parse_counter_arg(
    const std::vector<Token>& tokens,
    std::pair<std::size_t, std::size_t> range) {
  const std::size_t len = range.second - range.first;
  const auto tok = [&](std::size_t k) -> const Token& {
    return tokens[range.first + k];
  };
  if (len == 6 && tok(0).text == "&" && tok(1).text == "(" &&
      tok(2).kind == Token::Kind::Identifier && tok(3).text == ")" &&
      tok(4).text == "->" && tok(5).kind == Token::Kind::Identifier) {
    return ArgShape{tok(2).text, true};
  }
  if (len == 4 && tok(0).text == "&" &&
      tok(1).kind == Token::Kind::Identifier && tok(2).text == "->" &&
      tok(3).kind == Token::Kind::Identifier) {
    return ArgShape{tok(1).text, true};
  }
  if (len == 2 && tok(0).text == "&" &&
      tok(1).kind == Token::Kind::Identifier) {
    return ArgShape{tok(1).text, false};
  }
  return std::nullopt;
}

/// First identifier of an argument expression, skipping type keywords from
/// casts.
inline std::optional<std::string_view> first_arg_head(
    const std::vector<Token>& tokens,
    std::pair<std::size_t, std::size_t> range) {
  for (std::size_t i = range.first; i < range.second; ++i) {
    if (tokens[i].kind == Token::Kind::Identifier &&
        !is_keyword(tokens[i].text)) {
      return tokens[i].text;
    }
  }
  return std::nullopt;
}

inline bool is_minus_one(const std::vector<Token>& tokens,
                         std::pair<std::size_t, std::size_t> range) {
  return range.second - range.first == 2 &&
         tokens[range.first].text == "-" &&
         tokens[range.first + 1].text == "1";
}

inline bool is_literal_one(const std::vector<Token>& tokens,
                           std::pair<std::size_t, std::size_t> range) {
  return range.second - range.first == 1 && tokens[range.first].text == "1";
}

struct CompiledConfig {
  const PatternConfig* config;
  std::vector<std::regex> release_regexes;

  explicit CompiledConfig(const PatternConfig& c) : config(&c) {
    release_regexes.reserve(c.release_patterns.size());
    for (const auto& p : c.release_patterns) {
      release_regexes.emplace_back(p.regex);
    }
  }
};

inline bool contains(const std::vector<std::string>& haystack,
                     std::string_view needle) {
  return std::find(haystack.begin(), haystack.end(), needle) != haystack.end();
}

inline std::string dec_and_test_message(int release_line) {
  std::ostringstream os;
  os << "atomic_dec_and_test variation before object free at line "
     << release_line << ".";
  return os.str();
}

inline void scan_body(const std::vector<Token>& tokens, std::size_t begin,
                      std::size_t end, const CompiledConfig& compiled,
                      std::string_view filename,
                      std::vector<ScanFinding>& findings) {
  const PatternConfig& config = *compiled.config;
  const auto calls = collect_calls(tokens, begin, end);
  const auto assignments = collect_assignments(tokens, begin, end);

  for (const auto& call : calls) {
    // r2: decrement-by-add_unless with the sentinel pair (-1, 1).
    if (contains(config.add_unless_functions, call.name)) {
      if (call.args.size() == 3 && is_minus_one(tokens, call.args[1]) &&
          is_literal_one(tokens, call.args[2])) {
        if (auto shape = parse_counter_arg(tokens, call.args[0])) {
          findings.push_back({std::string(filename), call.line, std::nullopt,
                              PatternKind::AddUnlessMinusOneOne,
                              "atomic_add_unless",
                              shape->member ? Confidence::Moderate
                                            : Confidence::Low});
        }
      }
      continue;
    }

    // r3: assigned atomic_add_return with a -1 summand.
    if (contains(config.add_return_functions, call.name)) {
      const bool assigned = call.name_idx >= begin + 2 &&
                            tokens[call.name_idx - 1].text == "=" &&
                            tokens[call.name_idx - 2].kind ==
                                Token::Kind::Identifier;
      if (assigned && !call.args.empty() &&
          is_minus_one(tokens, call.args[0])) {
        findings.push_back({std::string(filename), call.line, std::nullopt,
                            PatternKind::AddReturnMinusOne,
                            "x = atomic_add_return(-1, ...)",
                            Confidence::Moderate});
      }
      continue;
    }

    if (!contains(config.decrement_functions, call.name)) continue;
    if (call.args.empty()) continue;
    const auto shape = parse_counter_arg(tokens, call.args[0]);
    if (!shape) continue;
    const Confidence confidence =
        shape->member ? Confidence::Moderate : Confidence::Low;

    // r1: a release call later in the same body.
    for (const auto& release : calls) {
      if (release.name_idx <= call.name_idx) continue;
      bool hit = false;
      for (std::size_t p = 0; p < compiled.release_regexes.size() && !hit; ++p) {
        if (!std::regex_search(release.name.begin(), release.name.end(),
                               compiled.release_regexes[p])) {
          continue;
        }
        if (config.release_patterns[p].first_arg_must_match) {
          if (!release.args.empty()) {
            const auto head = first_arg_head(tokens, release.args[0]);
            hit = head && *head == shape->head;
          }
        } else {
          hit = true;
        }
      }
      if (hit) {
        findings.push_back({std::string(filename), call.line, release.line,
                            PatternKind::DecAndTestThenFree,
                            dec_and_test_message(release.line), confidence});
        break;
      }
    }

    // r4: `y = obj;` after the decrement, then a free call on the alias.
    bool r4_done = false;
    for (const auto& alias : assignments) {
      if (r4_done) break;
      if (alias.idx <= call.name_idx) continue;
      if (alias.rhs != shape->head) continue;
      for (const auto& release : calls) {
        if (release.name_idx <= alias.idx) continue;
        bool name_ok = false;
        for (std::size_t p = 0; p < compiled.release_regexes.size(); ++p) {
          if (!config.release_patterns[p].first_arg_must_match) continue;
          if (std::regex_search(release.name.begin(), release.name.end(),
                                compiled.release_regexes[p])) {
            name_ok = true;
            break;
          }
        }
        if (!name_ok || release.args.empty()) continue;
        const auto head = first_arg_head(tokens, release.args[0]);
        if (head && *head == alias.lhs) {
          findings.push_back({std::string(filename), call.line, release.line,
                              PatternKind::DecAndTestAliasThenFree,
                              dec_and_test_message(release.line), confidence});
          r4_done = true;
          break;
        }
      }
    }
  }
}

}  // namespace scanner_detail

/// Scans one translation unit's text. Pure function of the content.
inline std::vector<ScanFinding> scan_source(
    std::string_view source, std::string_view filename,
    const PatternConfig& config = PatternConfig::defaults()) {
  using namespace scanner_detail;
  const std::string stripped = strip_source(source);
  const std::vector<Token> tokens = tokenize(stripped);
  const CompiledConfig compiled(config);

  std::vector<ScanFinding> findings;
  for (const auto& [begin, end] : function_bodies(tokens)) {
    scan_body(tokens, begin, end, compiled, filename, findings);
  }
  std::stable_sort(findings.begin(), findings.end(),
                   [](const ScanFinding& a, const ScanFinding& b) {
                     return a.decl_line < b.decl_line;
                   });
  return findings;
}

/// Scans a file. Throws ScanError for unreadable or binary content.
inline std::vector<ScanFinding> scan_file(
    const std::filesystem::path& path,
    const PatternConfig& config = PatternConfig::defaults()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScanError("unreadable file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw ScanError("read failure");
  const std::string content = buffer.str();
  if (content.find('\0') != std::string::npos) {
    throw ScanError("binary content");
  }
  return scan_source(content, path.generic_string(), config);
}

/// Recursively scans *.c and *.h under root. Per-file errors are collected
/// and the scan continues; ordering is path-lexicographic, then line.
inline ScanReport scan_tree(
    const std::filesystem::path& root,
    const PatternConfig& config = PatternConfig::defaults()) {
  namespace fs = std::filesystem;
  ScanReport report;

  std::error_code ec;
  if (!fs::exists(root, ec) || ec) {
    report.errors.push_back({root.generic_string(), "no such path"});
    return report;
  }

  std::vector<fs::path> files;
  if (fs::is_directory(root, ec)) {
    for (auto it = fs::recursive_directory_iterator(
             root, fs::directory_options::skip_permission_denied, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
      if (ec) break;
      if (!it->is_regular_file(ec)) continue;
      const auto ext = it->path().extension();
      if (ext == ".c" || ext == ".h") files.push_back(it->path());
    }
  } else {
    files.push_back(root);
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.generic_string() < b.generic_string();
            });

  for (const auto& file : files) {
    ++report.files_scanned;
    try {
      auto findings = scan_file(file, config);
      report.findings.insert(report.findings.end(),
                             std::make_move_iterator(findings.begin()),
                             std::make_move_iterator(findings.end()));
    } catch (const ScanError& error) {
      report.errors.push_back({file.generic_string(), error.what()});
    }
  }
  return report;
}

/// 0 = clean, 1 = findings present, 2 = scan errors.
inline int report_exit_code(const ScanReport& report) {
  if (!report.errors.empty()) return 2;
  if (!report.findings.empty()) return 1;
  return 0;
}

inline void write_text_report(std::ostream& os, const ScanReport& report,
                              bool color = false) {
  const char* em = color ? "\033[33m" : "";
  const char* reset = color ? "\033[0m" : "";
  for (const auto& f : report.findings) {
    os << f.file << ':' << f.decl_line << ": " << em << pattern_id(f.pattern)
       << reset << ": " << f.message << '\n';
  }
  for (const auto& e : report.errors) {
    os << e.file << ": error: " << e.reason << '\n';
  }
  os << report.findings.size() << " finding(s), " << report.errors.size()
     << " error(s), " << report.files_scanned << " file(s) scanned\n";
}

/// One JSON document per finding, newline-delimited.
inline void write_json_report(std::ostream& os, const ScanReport& report) {
  for (const auto& f : report.findings) {
    nlohmann::json j{
        {"file", f.file},
        {"decl_line", f.decl_line},
        {"release_line", nullptr},
        {"pattern", pattern_id(f.pattern)},
        {"message", f.message},
        {"confidence", to_string(f.confidence)},
    };
    if (f.release_line) j["release_line"] = *f.release_line;
    os << j.dump() << '\n';
  }
}

}  // namespace memguard
