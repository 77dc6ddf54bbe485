#pragma once

#include <span>
#include <vector>

#include "acn/model.hpp"

namespace acn {

// Next-token distribution at the last position of a context.
struct StepDistribution {
  std::vector<double> gen_probs;
  std::vector<double> copy_probs;  // empty when the copy head is off
  std::vector<double> mixed_probs;
  std::vector<double> attention;   // head-averaged last-layer row over the context
  double gate = 0.0;
};

// Key/value-cached evaluation of Model::forward one position at a time,
// without gradient recording. Reads the model's parameters; the model must
// outlive the decoder and stay unchanged while it is in use.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const Model& model);

  // Makes the cache describe `context`, reusing the longest common prefix
  // with what is already cached.
  void sync(std::span<const TokenId> context);
  void push(TokenId token);
  void truncate(std::size_t length);

  std::size_t length() const { return tokens_.size(); }
  const std::vector<TokenId>& tokens() const { return tokens_; }

  // Distribution for the token following the current context.
  StepDistribution next() const;

 private:
  const Model& model_;
  std::size_t h_, hd_, heads_, layers_;
  std::vector<TokenId> tokens_;
  std::vector<double> emb_;                   // [T,H]
  std::vector<double> final_hidden_;          // [T,H]
  std::vector<std::vector<double>> keys_;     // per layer [T,H]
  std::vector<std::vector<double>> values_;   // per layer [T,H]
  std::vector<double> last_attention_;        // head-averaged row of the last position
};

}  // namespace acn
