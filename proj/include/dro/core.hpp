#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dro/error.hpp"

namespace dro {

using TokenId = std::int32_t;

// Fixed toy vocabulary: printable glyphs plus four reserved tokens.
// BOS pads short contexts, EOS terminates outputs, THINK_END separates a
// reasoning trace from its final outcome, PAD exists for file-format
// completeness.
struct Vocabulary {
  std::vector<std::string> symbols;
  TokenId bos = -1;
  TokenId eos = -1;
  TokenId think_end = -1;
  TokenId pad = -1;

  int size() const { return static_cast<int>(symbols.size()); }
  bool in_range(TokenId t) const { return t >= 0 && t < size(); }
  bool is_reserved(TokenId t) const {
    return t == bos || t == eos || t == think_end || t == pad;
  }
  void validate() const;

  // Default vocabulary: digits 0-9, lowercase a-x, their "edited" uppercase
  // duals A-X, '+', '=', '#', and the reserved glyphs '^' '$' '|' '_'.
  static Vocabulary standard();
  // A 5-token vocabulary ("x" plus the reserved four) for exhaustive tests.
  static Vocabulary tiny();
};

struct Prompt {
  std::vector<TokenId> tokens;
};

struct ReferenceOutcome {
  std::vector<TokenId> tokens;
};

// Stand-in for the masked reasoning trace used by baseline scoring.
// Defaults to the empty sequence: the reference follows the prompt directly.
struct MaskedTrace {
  std::vector<TokenId> tokens;
};

struct SampledOutput {
  std::vector<TokenId> reasoning;
  std::vector<TokenId> outcome;
  bool truncated = false;  // generation hit max length before EOS
};

// Splits a raw sampled sequence at the first THINK_END. Tokens before it are
// the reasoning trace; tokens after it, up to EOS (exclusive), are the
// outcome. A sequence without THINK_END is all reasoning with an empty
// outcome. Total function: truncated == EOS absent from raw.
SampledOutput split_output(std::span<const TokenId> raw, const Vocabulary& vocab);

std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab);
std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab);

struct Task {
  std::string id;
  Prompt prompt;
  ReferenceOutcome reference;
};

void validate_prompt(const Prompt& p, const Vocabulary& vocab,
                     const std::string& where);
void validate_reference(const ReferenceOutcome& r, const Vocabulary& vocab,
                        const std::string& where);

// Task file: JSON lines {"id": str, "prompt": [int], "reference": [int]}.
std::vector<Task> load_tasks_jsonl(const std::string& path, const Vocabulary& vocab);
void save_tasks_jsonl(const std::string& path, std::span<const Task> tasks);

// Vocabulary file: {"symbols": [str], "bos": int, "eos": int,
//                   "think_end": int, "pad": int}.
Vocabulary load_vocabulary_json(const std::string& path);
void save_vocabulary_json(const std::string& path, const Vocabulary& vocab);

}  // namespace dro
