#pragma once

// Masked next-token training with Adam, for backbone pretraining on plain
// text and for adapter/copy fine-tuning on linearized dialogue turns.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "acn/corpus.hpp"
#include "acn/model.hpp"
#include "acn/textcodec.hpp"

namespace acn {

struct TrainConfig {
  double learning_rate = 3e-4;
  std::size_t batch_size = 2;
  std::size_t epochs = 15;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::FinetuneAdapters;
  std::size_t max_steps = 0;  // 0: no cap

  void validate() const;
};

class AdamState {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  AdamState() = default;
  // Moments only for the trainable ids, shaped like their parameters.
  AdamState(const Model& model, const ParamPartition& partition);

  struct Slot {
    std::size_t param;
    std::vector<double> m, v;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  std::uint64_t step() const { return step_; }

  // One bias-corrected update of every slot from the parameters' current
  // gradients (missing gradient == zero).
  void update(Model& model, double learning_rate);

 private:
  std::vector<Slot> slots_;
  std::uint64_t step_ = 0;
};

// One supervised sequence: token j is predicted from tokens 0..j-1 and
// contributes to the loss when mask[j] != 0.
struct Example {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> mask;
};

Example to_example(const LinearizedTurn& turn);
// Every turn of every dialogue, linearized with its own dialogue history.
std::vector<Example> dialogue_examples(const Vocab& vocab, const CorpusFile& corpus);
// Plain documents, split into windows of at most max_len tokens; all-ones mask.
std::vector<Example> text_examples(const Vocab& vocab, const std::vector<std::string>& texts, std::size_t max_len);

// Differentiable loss of one sequence. Uses the mixed distribution when the
// copy head is on and the generation logits otherwise.
Tensor sequence_loss(const Model& model, const Example& example);

// Forward, backward, global-norm clip and Adam update over the batch. The
// returned loss is the mean of the per-sequence losses. Throws ConfigError on
// an empty batch and InvariantViolation if a frozen parameter got a gradient.
double train_step(Model& model, std::span<const Example> batch, AdamState& adam, const TrainConfig& config,
                  const ParamPartition& partition);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
  std::string to_json() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Epoch loop with per-epoch seeded shuffling of the examples.
std::vector<EpochRecord> train(Model& model, const std::vector<Example>& examples, const ParamPartition& partition,
                               const TrainConfig& config, const EpochCallback& on_epoch = {});

// Requires mode pretrain_full and a model with adapters and copy head off.
std::vector<EpochRecord> pretrain_backbone(Model& model, const std::vector<Example>& examples,
                                           const TrainConfig& config, const EpochCallback& on_epoch = {});

// Requires a fine-tuning mode. The partition must be an exact cover; in
// finetune_adapters mode it must not make any backbone parameter trainable.
std::vector<EpochRecord> finetune(Model& model, const std::vector<Example>& examples, const ParamPartition& partition,
                                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// exp of the token-weighted mean NLL of the generation distribution.
double perplexity(const Model& model, const std::vector<Example>& examples);

}  // namespace acn
