#pragma once

// Fact files and dataset bundles.
//
// Canonical format: one fact per line, UTF-8, LF line endings, no header,
// TAB-separated tokens laid out as
//
//   head  relation  tail  [key value]*
//
// A JSON-lines alternative is accepted on read:
//
//   {"triple": ["h", "r", "t"], "qualifiers": [["k", "v"], ...]}
//
// Readers transparently accept gzip-compressed files (detected by magic bytes).

#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "thor/errors.hpp"
#include "thor/hkg.hpp"

namespace thor::io {

struct LineError {
  std::size_t line = 0;
  std::string message;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  auto is_ws = [](char c) { return c == ' ' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ws(s.back())) s.remove_suffix(1);
  return s;
}

inline bool is_blank(std::string_view s) { return trim(s).empty(); }

}  // namespace detail

// Parses one TSV line. Throws ParseError naming the line number.
inline RawFact parse_fact_line(std::string_view line, std::size_t line_no = 1) {
  const auto body = detail::trim(line);
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError({"line " + std::to_string(line_no) + ": " + what});
  };
  if (body.empty()) throw fail("malformed line: empty");
  std::vector<std::string_view> tok;
  std::size_t start = 0;
  while (true) {
    const auto pos = body.find('\t', start);
    tok.push_back(body.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (tok.size() < 3 || tok.size() % 2 == 0) {
    throw fail("malformed line: expected an odd token count >= 3 (h r t (k v)*), got " + std::to_string(tok.size()));
  }
  for (std::size_t i = 0; i < tok.size(); ++i) {
    if (tok[i].empty()) throw fail("malformed token: token " + std::to_string(i + 1) + " is empty");
  }
  RawFact f{std::string(tok[0]), std::string(tok[1]), std::string(tok[2]), {}};
  for (std::size_t i = 3; i < tok.size(); i += 2) f.qualifiers.emplace_back(std::string(tok[i]), std::string(tok[i + 1]));
  return f;
}

// Parses one JSON-lines record.
inline RawFact parse_json_line(std::string_view line, std::size_t line_no = 1) {
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError({"line " + std::to_string(line_no) + ": " + what});
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(std::string("malformed json: ") + e.what());
  }
  if (!j.is_object() || !j.contains("triple") || !j["triple"].is_array() || j["triple"].size() != 3) {
    throw fail("malformed line: expected object with 3-element \"triple\" array");
  }
  auto str = [&](const nlohmann::json& v) -> std::string {
    if (!v.is_string() || v.get<std::string>().empty()) throw fail("malformed token: expected non-empty string");
    return v.get<std::string>();
  };
  RawFact f{str(j["triple"][0]), str(j["triple"][1]), str(j["triple"][2]), {}};
  if (j.contains("qualifiers")) {
    if (!j["qualifiers"].is_array()) throw fail("malformed line: \"qualifiers\" must be an array");
    for (const auto& q : j["qualifiers"]) {
      if (!q.is_array() || q.size() != 2) throw fail("malformed line: qualifier must be a [key, value] pair");
      f.qualifiers.emplace_back(str(q[0]), str(q[1]));
    }
  }
  return f;
}

// Reads a whole (optionally gzip-compressed) file into memory.
inline std::string read_file_bytes(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  gzFile gz = gzopen(path.string().c_str(), "rb");
  if (!gz) throw IoError("cannot open: " + path.string());
  std::string out;
  char buf[1 << 15];
  int n = 0;
  while ((n = gzread(gz, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(gz);
  if (failed) throw IoError("read failed: " + path.string());
  return out;
}

struct ParsedFile {
  std::vector<RawFact> facts;
  std::vector<LineError> errors;
};

// Parses every non-blank line, collecting all errors instead of stopping at the
// first one. Records starting with '{' are read as JSON lines.
inline ParsedFile parse_facts(std::string_view text) {
  ParsedFile out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    ++line_no;
    if (!detail::is_blank(line)) {
      try {
        const auto body = detail::trim(line);
        out.facts.push_back(body.front() == '{' ? parse_json_line(body, line_no) : parse_fact_line(line, line_no));
      } catch (const ParseError& e) {
        out.errors.push_back({line_no, e.issues().front()});
      }
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return out;
}

inline ParsedFile parse_fact_file(const std::filesystem::path& path) { return parse_facts(read_file_bytes(path)); }

// Reads a file, throwing an aggregated ParseError when any line is malformed.
inline std::vector<RawFact> read_facts(const std::filesystem::path& path) {
  auto parsed = parse_fact_file(path);
  if (!parsed.errors.empty()) {
    std::vector<std::string> issues;
    for (const auto& e : parsed.errors) issues.push_back(path.string() + ": " + e.message);
    throw ParseError(std::move(issues));
  }
  return std::move(parsed.facts);
}

inline Hkg read_kg(const std::filesystem::path& path) { return Hkg::from_raw(read_facts(path)); }

inline std::string format_fact_line(const RawFact& f) {
  std::string s = f.head + '\t' + f.relation + '\t' + f.tail;
  for (const auto& [k, v] : f.qualifiers) {
    s += '\t';
    s += k;
    s += '\t';
    s += v;
  }
  s += '\n';
  return s;
}

inline void write_facts(std::ostream& os, std::span<const RawFact> facts) {
  for (const auto& f : facts) os << format_fact_line(f);
}

inline void write_facts(const std::filesystem::path& path, std::span<const RawFact> facts) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  write_facts(os, facts);
  if (!os) throw IoError("write failed: " + path.string());
}

// Writes the graph with one line per fact, in fact order.
inline void write_kg(const Hkg& kg, const std::filesystem::path& path) {
  const auto raw = kg.raw_facts();
  write_facts(path, std::span<const RawFact>(raw));
}

// Maps string-level facts onto the ids of `target`. Facts referencing an id
// missing from target's vocabularies come back as nullopt.
inline std::vector<std::optional<HyperFact>> map_facts(const Hkg& target, std::span<const RawFact> raw) {
  std::vector<std::optional<HyperFact>> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    auto h = target.entities().find(r.head);
    auto rel = target.relations().find(r.relation);
    auto t = target.entities().find(r.tail);
    bool ok = h && rel && t;
    HyperFact f;
    if (ok) {
      f.head = EntityId(*h);
      f.relation = RelationId(*rel);
      f.tail = EntityId(*t);
      for (const auto& [k, v] : r.qualifiers) {
        auto kk = target.relations().find(k);
        auto vv = target.entities().find(v);
        if (!kk || !vv) {
          ok = false;
          break;
        }
        f.qualifiers.push_back({RelationId(*kk), EntityId(*vv)});
      }
    }
    out.push_back(ok ? std::optional<HyperFact>(std::move(f)) : std::nullopt);
  }
  return out;
}

// Like map_facts but throws VocabularyError on the first unknown id.
inline std::vector<HyperFact> map_facts_strict(const Hkg& target, std::span<const RawFact> raw) {
  auto mapped = map_facts(target, raw);
  std::vector<HyperFact> out;
  out.reserve(mapped.size());
  for (std::size_t i = 0; i < mapped.size(); ++i) {
    if (!mapped[i]) {
      throw VocabularyError("fact " + std::to_string(i) + " (" + raw[i].head + " " + raw[i].relation + " " + raw[i].tail +
                            ") references ids outside the graph vocabulary");
    }
    out.push_back(std::move(*mapped[i]));
  }
  return out;
}

struct SplitCounts {
  std::size_t facts = 0;
  std::size_t entities = 0;
  std::size_t relations = 0;
};

inline SplitCounts count_raw(std::span<const RawFact> raw) {
  std::set<std::string> ents, rels;
  for (const auto& f : raw) {
    ents.insert(f.head);
    ents.insert(f.tail);
    rels.insert(f.relation);
    for (const auto& [k, v] : f.qualifiers) {
      rels.insert(k);
      ents.insert(v);
    }
  }
  return {raw.size(), ents.size(), rels.size()};
}

struct BundleDiagnostics {
  SplitCounts train, inference, valid, test;
  std::size_t shared_entities = 0;   // |E_train ∩ E_inf|
  std::size_t shared_relations = 0;  // |R_train ∩ R_inf|
  std::size_t valid_out_of_vocab = 0;
  std::size_t test_out_of_vocab = 0;

  bool entity_disjoint() const { return shared_entities == 0; }
  bool relation_disjoint() const { return shared_relations == 0; }
  bool eval_closed() const { return valid_out_of_vocab == 0 && test_out_of_vocab == 0; }

  std::string report() const {
    std::ostringstream os;
    auto row = [&](const char* name, const SplitCounts& c) {
      os << name << "\tfacts=" << c.facts << "\tentities=" << c.entities << "\trelations=" << c.relations << "\n";
    };
    row("train", train);
    row("inference", inference);
    row("valid", valid);
    row("test", test);
    os << "shared_entities(train,inference)=" << shared_entities << (entity_disjoint() ? " [disjoint]" : " [OVERLAP]")
       << "\n";
    os << "shared_relations(train,inference)=" << shared_relations
       << (relation_disjoint() ? " [disjoint]" : " [overlap]") << "\n";
    os << "valid_out_of_vocab=" << valid_out_of_vocab << "\ttest_out_of_vocab=" << test_out_of_vocab << "\n";
    return os.str();
  }
};

struct DatasetBundle {
  Hkg train;
  Hkg inference;
  std::vector<RawFact> valid;
  std::vector<RawFact> test;
  BundleDiagnostics diagnostics;
};

inline BundleDiagnostics diagnose(const Hkg& train, const Hkg& inference, std::span<const RawFact> valid,
                                  std::span<const RawFact> test) {
  BundleDiagnostics d;
  d.train = {train.fact_count(), train.entity_count(), train.relation_count()};
  d.inference = {inference.fact_count(), inference.entity_count(), inference.relation_count()};
  d.valid = count_raw(valid);
  d.test = count_raw(test);
  for (const auto& n : train.entities().names()) d.shared_entities += inference.entities().contains(n) ? 1 : 0;
  for (const auto& n : train.relations().names()) d.shared_relations += inference.relations().contains(n) ? 1 : 0;
  for (const auto& f : map_facts(inference, valid)) d.valid_out_of_vocab += f ? 0 : 1;
  for (const auto& f : map_facts(inference, test)) d.test_out_of_vocab += f ? 0 : 1;
  return d;
}

inline DatasetBundle make_bundle(Hkg train, Hkg inference, std::vector<RawFact> valid, std::vector<RawFact> test) {
  DatasetBundle b{std::move(train), std::move(inference), std::move(valid), std::move(test), {}};
  b.diagnostics = diagnose(b.train, b.inference, b.valid, b.test);
  return b;
}

inline constexpr const char* kBundleFiles[4] = {"train.txt", "inference.txt", "valid.txt", "test.txt"};

// Loads train/inference/valid/test from a directory. The four files are parsed
// concurrently; all malformed lines across all files are reported together.
inline DatasetBundle load_bundle(const std::filesystem::path& dir) {
  for (const char* name : kBundleFiles) {
    if (!std::filesystem::exists(dir / name)) throw IoError("bundle is missing " + (dir / name).string());
  }
  std::vector<std::future<ParsedFile>> jobs;
  for (const char* name : kBundleFiles) {
    jobs.push_back(std::async(std::launch::async, [p = dir / name] { return parse_fact_file(p); }));
  }
  std::vector<ParsedFile> parsed;
  for (auto& j : jobs) parsed.push_back(j.get());
  std::vector<std::string> issues;
  for (std::size_t i = 0; i < parsed.size(); ++i)
    for (const auto& e : parsed[i].errors) issues.push_back(std::string(kBundleFiles[i]) + ": " + e.message);
  if (!issues.empty()) throw ParseError(std::move(issues));
  return make_bundle(Hkg::from_raw(parsed[0].facts), Hkg::from_raw(parsed[1].facts), std::move(parsed[2].facts),
                     std::move(parsed[3].facts));
}

inline void write_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_kg(b.train, dir / kBundleFiles[0]);
  write_kg(b.inference, dir / kBundleFiles[1]);
  write_facts(dir / kBundleFiles[2], std::span<const RawFact>(b.valid));
  write_facts(dir / kBundleFiles[3], std::span<const RawFact>(b.test));
}

}  // namespace thor::io
