#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "dro/core.hpp"
#include "dro/policy.hpp"

namespace dro {

// Teacher-forced scores for one reasoning trace: per reference token, the
// log-probability (nats, full-vocabulary softmax) and the 1-based rank of the
// reference token in the next-token distribution (ties by ascending id).
struct CertaintyRow {
  std::vector<double> logp;
  std::vector<int> rank;
};

struct CertaintyMatrix {
  std::vector<CertaintyRow> rows;  // one per reasoning trace, trace order
  int reference_len = 0;
  int group_size = 0;
};

// Scores the reference under the context (prompt, reasoning, THINK_END,
// y_<j). Scoring is read-only; the policy is never touched.
CertaintyRow score_reference(const PolicySnapshot& policy, const Prompt& prompt,
                             std::span<const TokenId> reasoning,
                             const ReferenceOutcome& reference);

// As score_reference, additionally returning the full next-token distribution
// at every step (debug surface for the sums-to-one check).
CertaintyRow score_reference_debug(const PolicySnapshot& policy, const Prompt& prompt,
                                   std::span<const TokenId> reasoning,
                                   const ReferenceOutcome& reference,
                                   std::vector<std::vector<double>>* distributions);

CertaintyMatrix build_certainty_matrix(const PolicySnapshot& policy, const Prompt& prompt,
                                       const std::vector<std::vector<TokenId>>& traces,
                                       const ReferenceOutcome& reference);

// score_reference with the reasoning replaced by the fixed masked trace.
CertaintyRow masked_baseline(const PolicySnapshot& policy, const Prompt& prompt,
                             const MaskedTrace& masked, const ReferenceOutcome& reference);

// Per-(prompt, reference) cache of baseline rows, invalidated whenever the
// scoring policy's version changes. Concurrent readers, single writer.
class BaselineCache {
 public:
  BaselineCache() : mu_(std::make_unique<std::mutex>()) {}
  BaselineCache(BaselineCache&&) = default;
  BaselineCache& operator=(BaselineCache&&) = default;

  const CertaintyRow& get(const PolicySnapshot& policy, const std::string& task_key,
                          const Prompt& prompt, const MaskedTrace& masked,
                          const ReferenceOutcome& reference);
  std::size_t size() const;

 private:
  std::unique_ptr<std::mutex> mu_;
  std::uint64_t version_ = ~0ULL;
  std::unordered_map<std::string, CertaintyRow> rows_;
};

// Certainty dump record: {"task_id": str, "trace_id": int,
//                         "logp": [float], "rank": [int]}.
struct CertaintyDumpRecord {
  std::string task_id;
  int trace_id = 0;
  CertaintyRow row;
};

void append_certainty_dump(std::ostream& out, const CertaintyDumpRecord& rec);
std::vector<CertaintyDumpRecord> load_certainty_dump(const std::string& path);

}  // namespace dro
