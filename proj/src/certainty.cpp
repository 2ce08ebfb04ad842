#include "dro/certainty.hpp"

#include <fstream>
#include <ostream>

#include <json.hpp>

#include "dro/kernels.hpp"

namespace dro {

using nlohmann::json;

namespace {

CertaintyRow score_impl(const PolicySnapshot& policy, const Prompt& prompt,
                        std::span<const TokenId> reasoning,
                        const ReferenceOutcome& reference,
                        std::vector<std::vector<double>>* distributions) {
  if (reference.tokens.empty()) fail("score_reference: reference must be non-empty");
  CertaintyRow out;
  out.logp.reserve(reference.tokens.size());
  out.rank.reserve(reference.tokens.size());

  ContextCursor cur(policy);
  cur.feed(prompt.tokens);
  cur.feed(reasoning);
  cur.feed(policy.think_end);

  for (TokenId y : reference.tokens) {
    const ContextKey key = cur.key();
    const auto row = policy.row(key.zone, key.slot0, key.slot1);
    const double lse = kernels::log_sum_exp(row);
    out.logp.push_back(row[static_cast<std::size_t>(y)] - lse);
    out.rank.push_back(kernels::count_rank(row, y));
    if (distributions) {
      std::vector<double> probs(row.size());
      kernels::softmax(row, probs);
      distributions->push_back(std::move(probs));
    }
    cur.feed(y);
  }
  return out;
}

}  // namespace

CertaintyRow score_reference(const PolicySnapshot& policy, const Prompt& prompt,
                             std::span<const TokenId> reasoning,
                             const ReferenceOutcome& reference) {
  return score_impl(policy, prompt, reasoning, reference, nullptr);
}

CertaintyRow score_reference_debug(const PolicySnapshot& policy, const Prompt& prompt,
                                   std::span<const TokenId> reasoning,
                                   const ReferenceOutcome& reference,
                                   std::vector<std::vector<double>>* distributions) {
  return score_impl(policy, prompt, reasoning, reference, distributions);
}

CertaintyMatrix build_certainty_matrix(const PolicySnapshot& policy, const Prompt& prompt,
                                       const std::vector<std::vector<TokenId>>& traces,
                                       const ReferenceOutcome& reference) {
  if (traces.empty()) fail("build_certainty_matrix: need at least one trace");
  CertaintyMatrix m;
  m.reference_len = static_cast<int>(reference.tokens.size());
  m.group_size = static_cast<int>(traces.size());
  m.rows.reserve(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    try {
      m.rows.push_back(score_reference(policy, prompt, traces[i], reference));
    } catch (const Error& e) {
      fail("trace " + std::to_string(i) + ": " + e.what());
    }
  }
  return m;
}

CertaintyRow masked_baseline(const PolicySnapshot& policy, const Prompt& prompt,
                             const MaskedTrace& masked,
                             const ReferenceOutcome& reference) {
  return score_reference(policy, prompt, masked.tokens, reference);
}

const CertaintyRow& BaselineCache::get(const PolicySnapshot& policy,
                                       const std::string& task_key, const Prompt& prompt,
                                       const MaskedTrace& masked,
                                       const ReferenceOutcome& reference) {
  std::lock_guard<std::mutex> lock(*mu_);
  if (policy.version != version_) {
    rows_.clear();
    version_ = policy.version;
  }
  auto it = rows_.find(task_key);
  if (it == rows_.end()) {
    it = rows_.emplace(task_key, masked_baseline(policy, prompt, masked, reference)).first;
  }
  return it->second;
}

std::size_t BaselineCache::size() const {
  std::lock_guard<std::mutex> lock(*mu_);
  return rows_.size();
}

void append_certainty_dump(std::ostream& out, const CertaintyDumpRecord& rec) {
  json j;
  j["task_id"] = rec.task_id;
  j["trace_id"] = rec.trace_id;
  j["logp"] = rec.row.logp;
  j["rank"] = rec.row.rank;
  out << j.dump() << "\n";
}

std::vector<CertaintyDumpRecord> load_certainty_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open certainty dump: " + path);
  std::vector<CertaintyDumpRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(where + ": malformed JSON (" + e.what() + ")");
    }
    CertaintyDumpRecord rec;
    try {
      rec.task_id = j.at("task_id").get<std::string>();
      rec.trace_id = j.at("trace_id").get<int>();
      rec.row.logp = j.at("logp").get<std::vector<double>>();
      rec.row.rank = j.at("rank").get<std::vector<int>>();
    } catch (const json::exception& e) {
      fail(where + ": bad record (" + e.what() + ")");
    }
    if (rec.row.logp.size() != rec.row.rank.size())
      fail(where + ": logp and rank lengths differ");
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace dro
