#include "acn/model.hpp"

#include <algorithm>
#include <cmath>

#include "acn/random.hpp"

namespace acn {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (n_layer == 0) fail("n_layer must be >= 1");
  if (n_head == 0) fail("n_head must be >= 1");
  if (d_model == 0) fail("d_model must be >= 1");
  if (d_model % n_head != 0) {
    fail("d_model (" + std::to_string(d_model) + ") must be divisible by n_head (" + std::to_string(n_head) + ")");
  }
  if (d_ff == 0) fail("d_ff must be >= 1");
  if (vocab_size == 0) fail("vocab_size must be >= 1");
  if (max_positions == 0) fail("max_positions must be >= 1");
  if (adapter_size == 0) fail("adapter_size must be >= 1");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

const char* to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::Backbone: return "backbone";
    case ParamGroup::Adapter: return "adapter";
    case ParamGroup::Copy: return "copy";
  }
  return "?";
}

ParamGroup param_group_from_string(const std::string& name) {
  if (name == "backbone") return ParamGroup::Backbone;
  if (name == "adapter") return ParamGroup::Adapter;
  if (name == "copy") return ParamGroup::Copy;
  throw ConfigError("unknown parameter group '" + name + "'");
}

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::PretrainFull: return "pretrain_full";
    case TrainMode::FinetuneAdapters: return "finetune_adapters";
    case TrainMode::FinetuneFull: return "finetune_full";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "pretrain_full") return TrainMode::PretrainFull;
  if (name == "finetune_adapters") return TrainMode::FinetuneAdapters;
  if (name == "finetune_full") return TrainMode::FinetuneFull;
  throw ConfigError("unknown training mode '" + name + "'");
}

std::vector<double> ForwardOutput::gate_values() const {
  if (!gate.defined()) return {};
  return {gate.data().begin(), gate.data().end()};
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.normal() * stddev;
  return Tensor::from(std::move(shape), std::move(values));
}

}  // namespace

void Model::add_param(const std::string& name, ParamGroup group, Tensor& slot, Tensor value) {
  slot = std::move(value);
  params_.push_back({name, group, slot});
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t h = config_.d_model;
  const std::size_t f = config_.d_ff;
  const std::size_t a = config_.adapter_size;
  const double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(config_.n_layer));

  add_param("wte", ParamGroup::Backbone, wte_, normal_tensor({config_.vocab_size, h}, 0.02, rng));
  add_param("wpe", ParamGroup::Backbone, wpe_, normal_tensor({config_.max_positions, h}, 0.01, rng));
  blocks_.resize(config_.n_layer);
  for (std::size_t l = 0; l < config_.n_layer; ++l) {
    Block& b = blocks_[l];
    const std::string p = "h." + std::to_string(l) + ".";
    add_param(p + "ln1.gamma", ParamGroup::Backbone, b.ln1_gamma, Tensor::full({h}, 1.0));
    add_param(p + "ln1.beta", ParamGroup::Backbone, b.ln1_beta, Tensor::zeros({h}));
    add_param(p + "attn.qkv.w", ParamGroup::Backbone, b.qkv_w, normal_tensor({h, 3 * h}, 0.02, rng));
    add_param(p + "attn.qkv.b", ParamGroup::Backbone, b.qkv_b, Tensor::zeros({3 * h}));
    add_param(p + "attn.proj.w", ParamGroup::Backbone, b.proj_w, normal_tensor({h, h}, resid_std, rng));
    add_param(p + "attn.proj.b", ParamGroup::Backbone, b.proj_b, Tensor::zeros({h}));
    add_param(p + "ln2.gamma", ParamGroup::Backbone, b.ln2_gamma, Tensor::full({h}, 1.0));
    add_param(p + "ln2.beta", ParamGroup::Backbone, b.ln2_beta, Tensor::zeros({h}));
    add_param(p + "mlp.fc.w", ParamGroup::Backbone, b.fc_w, normal_tensor({h, f}, 0.02, rng));
    add_param(p + "mlp.fc.b", ParamGroup::Backbone, b.fc_b, Tensor::zeros({f}));
    add_param(p + "mlp.out.w", ParamGroup::Backbone, b.out_w, normal_tensor({f, h}, resid_std, rng));
    add_param(p + "mlp.out.b", ParamGroup::Backbone, b.out_b, Tensor::zeros({h}));
  }
  add_param("lnf.gamma", ParamGroup::Backbone, lnf_gamma_, Tensor::full({h}, 1.0));
  add_param("lnf.beta", ParamGroup::Backbone, lnf_beta_, Tensor::zeros({h}));

  adapters_.resize(config_.n_layer);
  const double down_std = 1.0 / std::sqrt(static_cast<double>(h));
  for (std::size_t l = 0; l < config_.n_layer; ++l) {
    AdapterLayer& ad = adapters_[l];
    const std::string p = "adapter." + std::to_string(l) + ".";
    add_param(p + "ln.gamma", ParamGroup::Adapter, ad.ln_gamma, Tensor::full({h}, 1.0));
    add_param(p + "ln.beta", ParamGroup::Adapter, ad.ln_beta, Tensor::zeros({h}));
    add_param(p + "down", ParamGroup::Adapter, ad.down, normal_tensor({h, a}, down_std, rng));
    add_param(p + "up", ParamGroup::Adapter, ad.up, Tensor::zeros({a, h}));
  }
  add_param("copy.weight", ParamGroup::Copy, copy_.weight, Tensor::zeros({2 * h, 1}));
  add_param("copy.bias", ParamGroup::Copy, copy_.bias, Tensor::zeros({1}));
}

Model Model::clone() const {
  Model out(config_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].value.data();
    auto dst = out.params_[i].value.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
    out.params_[i].value.set_requires_grad(params_[i].value.requires_grad());
  }
  return out;
}

const NamedParam& Model::param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

ParamPartition Model::partition_for(TrainMode mode) const {
  ParamPartition part;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const bool backbone = params_[i].group == ParamGroup::Backbone;
    bool trainable = false;
    switch (mode) {
      case TrainMode::PretrainFull: trainable = backbone; break;
      case TrainMode::FinetuneAdapters: trainable = !backbone; break;
      case TrainMode::FinetuneFull: trainable = true; break;
    }
    (trainable ? part.trainable : part.frozen).push_back(i);
  }
  return part;
}

void Model::apply_partition(const ParamPartition& partition) {
  std::vector<int> seen(params_.size(), 0);
  for (auto i : partition.frozen) {
    if (i >= params_.size()) throw ConfigError("partition references unknown parameter id " + std::to_string(i));
    ++seen[i];
    params_[i].value.set_requires_grad(false);
  }
  for (auto i : partition.trainable) {
    if (i >= params_.size()) throw ConfigError("partition references unknown parameter id " + std::to_string(i));
    ++seen[i];
    params_[i].value.set_requires_grad(true);
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i] != 1) {
      throw ConfigError("partition must cover each parameter exactly once; '" + params_[i].name + "' appears " +
                        std::to_string(seen[i]) + " times");
    }
  }
}

void Model::zero_grads() {
  for (auto& p : params_) p.value.clear_grad();
}

Tensor adapter_forward(const AdapterLayer& adapter, const Tensor& h, double eps) {
  if (h.shape().back() != adapter.down.size(0)) {
    throw DimensionError("adapter_forward: hidden " + shape_str(h.shape()) + " does not match down projection " +
                         shape_str(adapter.down.shape()));
  }
  Tensor normed = layer_norm(h, adapter.ln_gamma, adapter.ln_beta, eps);
  Tensor bottleneck = relu(matmul(normed, adapter.down));
  return add(h, matmul(bottleneck, adapter.up));
}

ForwardOutput Model::forward(std::span<const TokenId> tokens) const {
  const std::size_t t = tokens.size();
  if (t == 0) throw LengthError("forward: empty token sequence");
  if (t > config_.max_positions) {
    throw LengthError("forward: sequence of " + std::to_string(t) + " tokens exceeds max_positions " +
                      std::to_string(config_.max_positions));
  }
  const std::size_t h = config_.d_model;
  const std::size_t heads = config_.n_head;
  const std::size_t hd = h / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<TokenId> positions(t);
  for (std::size_t i = 0; i < t; ++i) positions[i] = static_cast<TokenId>(i);

  ForwardOutput out;
  out.embeddings = add(embedding(wte_, tokens), embedding(wpe_, positions));
  Tensor x = out.embeddings;
  for (std::size_t l = 0; l < config_.n_layer; ++l) {
    const Block& b = blocks_[l];
    Tensor a = layer_norm(x, b.ln1_gamma, b.ln1_beta, config_.ln_eps);
    Tensor qkv = add(matmul(a, b.qkv_w), b.qkv_b);
    std::vector<Tensor> head_out;
    Tensor att_sum;
    for (std::size_t hh = 0; hh < heads; ++hh) {
      Tensor q = slice_cols(qkv, hh * hd, hd);
      Tensor k = slice_cols(qkv, h + hh * hd, hd);
      Tensor v = slice_cols(qkv, 2 * h + hh * hd, hd);
      Tensor att = causal_softmax(scale(matmul_nt(q, k), att_scale));
      head_out.push_back(matmul(att, v));
      if (l + 1 == config_.n_layer) att_sum = att_sum.defined() ? add(att_sum, att) : att;
    }
    Tensor y = heads == 1 ? head_out.front() : concat_cols(head_out);
    x = add(x, add(matmul(y, b.proj_w), b.proj_b));
    Tensor m = layer_norm(x, b.ln2_gamma, b.ln2_beta, config_.ln_eps);
    Tensor ff = gelu(add(matmul(m, b.fc_w), b.fc_b));
    x = add(x, add(matmul(ff, b.out_w), b.out_b));
    if (config_.adapter_enabled) x = adapter_forward(adapters_[l], x, config_.ln_eps);
    if (l + 1 == config_.n_layer) {
      out.last_attention = heads == 1 ? att_sum : scale(att_sum, 1.0 / static_cast<double>(heads));
    }
  }
  out.hidden = layer_norm(x, lnf_gamma_, lnf_beta_, config_.ln_eps);
  out.logits = matmul_nt(out.hidden, wte_);
  out.gen_probs = softmax(out.logits, 1);
  if (!config_.copy_enabled) {
    out.mixed_probs = out.gen_probs;
    return out;
  }
  out.gate = sigmoid(add(matmul(concat_cols({out.embeddings, out.hidden}), copy_.weight), copy_.bias));
  Tensor copy = scatter_to_vocab(out.last_attention, tokens, config_.vocab_size);
  Tensor keep = sub(Tensor::full({t, 1}, 1.0), out.gate);
  out.mixed_probs = add(mul(out.gen_probs, keep), mul(copy, out.gate));
  return out;
}

double copy_gate(const CopyHead& head, std::span<const double> embedding, std::span<const double> hidden) {
  const std::size_t h = head.weight.numel() / 2;
  if (embedding.size() != h || hidden.size() != h) {
    throw DimensionError("copy_gate: expected two vectors of length " + std::to_string(h) + ", got " +
                         std::to_string(embedding.size()) + " and " + std::to_string(hidden.size()));
  }
  const auto w = head.weight.data();
  double z = head.bias.item();
  for (std::size_t i = 0; i < h; ++i) z += w[i] * embedding[i];
  for (std::size_t i = 0; i < h; ++i) z += w[h + i] * hidden[i];
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> copy_distribution(std::span<const double> attention_row, std::span<const TokenId> context,
                                      std::size_t vocab_size) {
  if (attention_row.size() > context.size()) {
    throw DimensionError("copy_distribution: " + std::to_string(attention_row.size()) + " attention weights for " +
                         std::to_string(context.size()) + " context tokens");
  }
  std::vector<double> out(vocab_size, 0.0);
  for (std::size_t k = 0; k < attention_row.size(); ++k) {
    const TokenId id = context[k];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw DimensionError("copy_distribution: token id " + std::to_string(id) + " >= vocab size " +
                           std::to_string(vocab_size));
    }
    out[static_cast<std::size_t>(id)] += attention_row[k];
  }
  return out;
}

std::vector<double> mix_distributions(std::span<const double> gen, std::span<const double> copy, double gate) {
  if (gen.size() != copy.size()) {
    throw DimensionError("mix_distributions: sizes " + std::to_string(gen.size()) + " and " +
                         std::to_string(copy.size()) + " differ");
  }
  if (!(gate >= 0.0 && gate <= 1.0)) throw DimensionError("mix_distributions: gate outside [0,1]");
  std::vector<double> out(gen.size());
  for (std::size_t i = 0; i < gen.size(); ++i) out[i] = (1.0 - gate) * gen[i] + gate * copy[i];
  return out;
}

}  // namespace acn
