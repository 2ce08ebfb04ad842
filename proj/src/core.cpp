#include "dro/core.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace dro {

using nlohmann::json;

void Vocabulary::validate() const {
  if (symbols.empty()) fail("vocabulary: empty symbol list");
  std::unordered_set<std::string> seen;
  for (const auto& s : symbols) {
    if (s.empty()) fail("vocabulary: empty symbol");
    if (!seen.insert(s).second) fail("vocabulary: duplicate symbol '" + s + "'");
  }
  for (TokenId t : {bos, eos, think_end, pad}) {
    if (!in_range(t)) fail("vocabulary: reserved index out of range");
  }
  if (bos == eos || bos == think_end || bos == pad || eos == think_end ||
      eos == pad || think_end == pad) {
    fail("vocabulary: reserved indices must be distinct");
  }
}

Vocabulary Vocabulary::standard() {
  Vocabulary v;
  for (char c = '0'; c <= '9'; ++c) v.symbols.push_back(std::string(1, c));
  for (char c = 'a'; c <= 'x'; ++c) v.symbols.push_back(std::string(1, c));
  for (char c = 'A'; c <= 'X'; ++c) v.symbols.push_back(std::string(1, c));
  v.symbols.push_back("+");
  v.symbols.push_back("=");
  v.symbols.push_back("#");
  v.bos = static_cast<TokenId>(v.symbols.size());
  v.symbols.push_back("^");
  v.eos = static_cast<TokenId>(v.symbols.size());
  v.symbols.push_back("$");
  v.think_end = static_cast<TokenId>(v.symbols.size());
  v.symbols.push_back("|");
  v.pad = static_cast<TokenId>(v.symbols.size());
  v.symbols.push_back("_");
  v.validate();
  return v;
}

Vocabulary Vocabulary::tiny() {
  Vocabulary v;
  v.symbols = {"x", "^", "$", "|", "_"};
  v.bos = 1;
  v.eos = 2;
  v.think_end = 3;
  v.pad = 4;
  v.validate();
  return v;
}

SampledOutput split_output(std::span<const TokenId> raw, const Vocabulary& vocab) {
  SampledOutput out;
  out.truncated = true;
  std::size_t end = raw.size();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == vocab.eos) {
      end = i;
      out.truncated = false;
      break;
    }
  }
  std::size_t delim = end;
  for (std::size_t i = 0; i < end; ++i) {
    if (raw[i] == vocab.think_end) {
      delim = i;
      break;
    }
  }
  out.reasoning.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(delim));
  if (delim < end) {
    out.outcome.assign(raw.begin() + static_cast<std::ptrdiff_t>(delim) + 1,
                       raw.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::string text;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!vocab.in_range(tokens[i])) {
      fail("detokenize: token id " + std::to_string(tokens[i]) +
           " at position " + std::to_string(i) + " is out of range (vocab size " +
           std::to_string(vocab.size()) + ")");
    }
    text += vocab.symbols[static_cast<std::size_t>(tokens[i])];
  }
  return text;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  // Greedy longest-match over the symbol table; the standard vocabulary is
  // single-character so this degenerates to a per-character lookup.
  std::size_t max_len = 0;
  std::unordered_map<std::string, TokenId> table;
  for (std::size_t i = 0; i < vocab.symbols.size(); ++i) {
    table.emplace(vocab.symbols[i], static_cast<TokenId>(i));
    max_len = std::max(max_len, vocab.symbols[i].size());
  }
  std::vector<TokenId> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    bool matched = false;
    for (std::size_t len = std::min(max_len, text.size() - pos); len >= 1; --len) {
      auto it = table.find(std::string(text.substr(pos, len)));
      if (it != table.end()) {
        out.push_back(it->second);
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      fail("tokenize: no symbol matches text at byte " + std::to_string(pos));
    }
  }
  return out;
}

void validate_prompt(const Prompt& p, const Vocabulary& vocab,
                     const std::string& where) {
  if (p.tokens.empty()) fail(where + ": prompt must be non-empty");
  for (TokenId t : p.tokens) {
    if (!vocab.in_range(t)) fail(where + ": prompt token out of range");
    if (t == vocab.think_end || t == vocab.eos)
      fail(where + ": prompt must not contain THINK_END or EOS");
  }
}

void validate_reference(const ReferenceOutcome& r, const Vocabulary& vocab,
                        const std::string& where) {
  if (r.tokens.empty()) fail(where + ": reference must be non-empty");
  for (TokenId t : r.tokens) {
    if (!vocab.in_range(t)) fail(where + ": reference token out of range");
    if (t == vocab.think_end)
      fail(where + ": reference must not contain THINK_END");
  }
}

namespace {

std::vector<TokenId> tokens_from_json(const json& arr, const std::string& where) {
  if (!arr.is_array()) fail(where + ": expected an array of token ids");
  std::vector<TokenId> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer()) fail(where + ": token ids must be integers");
    out.push_back(v.get<TokenId>());
  }
  return out;
}

}  // namespace

std::vector<Task> load_tasks_jsonl(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) fail("cannot open task file: " + path);
  std::vector<Task> tasks;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!rec.contains("id") || !rec.contains("prompt") || !rec.contains("reference"))
      fail(where + ": record needs id, prompt, reference");
    Task t;
    t.id = rec["id"].get<std::string>();
    t.prompt.tokens = tokens_from_json(rec["prompt"], where);
    t.reference.tokens = tokens_from_json(rec["reference"], where);
    validate_prompt(t.prompt, vocab, where);
    validate_reference(t.reference, vocab, where);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

void save_tasks_jsonl(const std::string& path, std::span<const Task> tasks) {
  std::ofstream out(path);
  if (!out) fail("cannot write task file: " + path);
  for (const Task& t : tasks) {
    json rec;
    rec["id"] = t.id;
    rec["prompt"] = t.prompt.tokens;
    rec["reference"] = t.reference.tokens;
    out << rec.dump() << "\n";
  }
}

Vocabulary load_vocabulary_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open vocabulary file: " + path);
  json rec;
  try {
    in >> rec;
  } catch (const json::exception& e) {
    fail(path + ": malformed JSON (" + std::string(e.what()) + ")");
  }
  Vocabulary v;
  for (const auto& s : rec.at("symbols")) v.symbols.push_back(s.get<std::string>());
  v.bos = rec.at("bos").get<TokenId>();
  v.eos = rec.at("eos").get<TokenId>();
  v.think_end = rec.at("think_end").get<TokenId>();
  v.pad = rec.at("pad").get<TokenId>();
  v.validate();
  return v;
}

void save_vocabulary_json(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) fail("cannot write vocabulary file: " + path);
  json rec;
  rec["symbols"] = vocab.symbols;
  rec["bos"] = vocab.bos;
  rec["eos"] = vocab.eos;
  rec["think_end"] = vocab.think_end;
  rec["pad"] = vocab.pad;
  out << rec.dump(2) << "\n";
}

}  // namespace dro
