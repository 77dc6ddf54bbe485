#include "acn/training.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"

#include "acn/errors.hpp"
#include "acn/random.hpp"

namespace acn {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a finite non-negative number");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
}

AdamState::AdamState(const Model& model, const ParamPartition& partition) {
  for (auto id : partition.trainable) {
    const std::size_t n = model.params().at(id).value.numel();
    slots_.push_back({id, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

void AdamState::update(Model& model, double learning_rate) {
  ++step_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
  for (auto& slot : slots_) {
    Tensor& p = model.params()[slot.param].value;
    auto w = p.mutable_data();
    const auto g = p.grad();
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      slot.m[i] = kBeta1 * slot.m[i] + (1.0 - kBeta1) * gi;
      slot.v[i] = kBeta2 * slot.v[i] + (1.0 - kBeta2) * gi * gi;
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      w[i] -= learning_rate * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

Example to_example(const LinearizedTurn& turn) { return {turn.token_ids, turn.loss_mask}; }

std::vector<Example> dialogue_examples(const Vocab& vocab, const CorpusFile& corpus) {
  std::vector<Example> out;
  for (const auto& dlg : corpus.dialogues) {
    std::vector<DialogueTurn> history;
    for (const auto& turn : dlg.turns) {
      out.push_back(to_example(linearize_turn(vocab, history, turn)));
      history.push_back(turn);
    }
  }
  return out;
}

std::vector<Example> text_examples(const Vocab& vocab, const std::vector<std::string>& texts, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("text_examples: windows need at least 2 tokens");
  std::vector<Example> out;
  for (const auto& text : texts) {
    const auto ids = vocab.encode(text);
    for (std::size_t start = 0; start + 1 < ids.size(); start += max_len - 1) {
      const std::size_t end = std::min(ids.size(), start + max_len);
      Example ex;
      ex.tokens.assign(ids.begin() + static_cast<std::ptrdiff_t>(start), ids.begin() + static_cast<std::ptrdiff_t>(end));
      ex.mask.assign(ex.tokens.size(), 1);
      out.push_back(std::move(ex));
      if (end == ids.size()) break;
    }
  }
  return out;
}

namespace {

void shifted_targets(const Example& ex, std::vector<TokenId>& targets, std::vector<std::uint8_t>& mask) {
  const std::size_t t = ex.tokens.size();
  targets.assign(t, 0);
  mask.assign(t, 0);
  for (std::size_t j = 0; j + 1 < t; ++j) {
    targets[j] = ex.tokens[j + 1];
    mask[j] = ex.mask[j + 1];
  }
}

}  // namespace

Tensor sequence_loss(const Model& model, const Example& example) {
  if (example.tokens.size() != example.mask.size()) {
    throw DimensionError("sequence_loss: " + std::to_string(example.tokens.size()) + " tokens but " +
                         std::to_string(example.mask.size()) + " mask entries");
  }
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> mask;
  shifted_targets(example, targets, mask);
  const ForwardOutput out = model.forward(example.tokens);
  if (model.config().copy_enabled) return masked_nll(out.mixed_probs, targets, mask);
  return masked_cross_entropy(out.logits, targets, mask);
}

double train_step(Model& model, std::span<const Example> batch, AdamState& adam, const TrainConfig& config,
                  const ParamPartition& partition) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  model.zero_grads();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    Tensor loss = sequence_loss(model, ex);
    total += loss.item();
    backward(scale(loss, inv));
  }
  for (auto id : partition.frozen) {
    const auto& p = model.params()[id];
    if (p.value.has_grad()) throw InvariantViolation("frozen parameter '" + p.name + "' received a gradient");
  }
  if (config.grad_clip_norm > 0.0) {
    double sq = 0.0;
    for (auto id : partition.trainable) {
      for (double g : model.params()[id].value.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > config.grad_clip_norm) {
      const double f = config.grad_clip_norm / norm;
      for (auto id : partition.trainable) {
        auto& p = model.params()[id].value;
        if (!p.has_grad()) continue;
        // Gradient buffers are only reachable through the node.
        for (double& g : p.node()->grad) g *= f;
      }
    }
  }
  adam.update(model, config.learning_rate);
  model.zero_grads();
  return total * inv;
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["mean_loss"] = mean_loss;
  j["steps"] = steps;
  j["wall_seconds"] = wall_seconds;
  return j.dump();
}

std::vector<EpochRecord> train(Model& model, const std::vector<Example>& examples, const ParamPartition& partition,
                               const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (examples.empty()) throw ConfigError("train: no training examples");
  model.apply_partition(partition);
  AdamState adam(model, partition);
  Rng rng(config.seed);
  std::vector<std::size_t> order(examples.size());
  std::vector<EpochRecord> log;
  std::size_t total_steps = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::vector<Example> batch;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      if (config.max_steps && total_steps >= config.max_steps) break;
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) batch.push_back(examples[order[i]]);
      loss_sum += train_step(model, batch, adam, config, partition);
      ++rec.steps;
      ++total_steps;
    }
    if (rec.steps == 0) break;
    rec.mean_loss = loss_sum / static_cast<double>(rec.steps);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

std::vector<EpochRecord> pretrain_backbone(Model& model, const std::vector<Example>& examples,
                                           const TrainConfig& config, const EpochCallback& on_epoch) {
  if (config.mode != TrainMode::PretrainFull) throw ConfigError("pretrain_backbone requires mode pretrain_full");
  if (model.config().adapter_enabled || model.config().copy_enabled) {
    throw ConfigError("pretrain_backbone requires adapters and the copy head to be disabled");
  }
  const ParamPartition partition = model.partition_for(TrainMode::PretrainFull);
  for (auto id : partition.trainable) {
    if (model.params()[id].group != ParamGroup::Backbone) {
      throw ConfigError("pretraining may only train backbone parameters, not '" + model.params()[id].name + "'");
    }
  }
  return train(model, examples, partition, config, on_epoch);
}

std::vector<EpochRecord> finetune(Model& model, const std::vector<Example>& examples, const ParamPartition& partition,
                                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (config.mode == TrainMode::PretrainFull) throw ConfigError("finetune requires a fine-tuning mode");
  if (config.mode == TrainMode::FinetuneAdapters) {
    for (auto id : partition.trainable) {
      if (id < model.params().size() && model.params()[id].group == ParamGroup::Backbone) {
        throw ConfigError("finetune_adapters may not train backbone parameter '" + model.params()[id].name + "'");
      }
    }
  }
  return train(model, examples, partition, config, on_epoch);
}

double perplexity(const Model& model, const std::vector<Example>& examples) {
  NoGradGuard guard;
  double nll = 0.0;
  std::size_t count = 0;
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> mask;
  for (const auto& ex : examples) {
    shifted_targets(ex, targets, mask);
    std::size_t n = 0;
    for (auto m : mask) n += m != 0;
    if (n == 0) continue;
    const ForwardOutput out = model.forward(ex.tokens);
    nll += masked_cross_entropy(out.logits, targets, mask).item() * static_cast<double>(n);
    count += n;
  }
  if (count == 0) throw EmptyMaskError("perplexity: no supervised positions");
  return std::exp(nll / static_cast<double>(count));
}

}  // namespace acn
