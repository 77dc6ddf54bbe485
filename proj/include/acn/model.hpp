#pragma once

// GPT-Adapter-CopyNet: a pre-LN decoder-only transformer whose blocks are each
// followed by a residual bottleneck adapter, topped by a copy head that mixes
// the generation distribution with a pointing distribution built from the
// last layer's attention.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "acn/ops.hpp"
#include "acn/tensor.hpp"

namespace acn {

struct ModelConfig {
  std::size_t n_layer = 2;
  std::size_t n_head = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 512;
  std::size_t max_positions = 512;
  std::size_t adapter_size = 32;
  bool adapter_enabled = true;
  bool copy_enabled = true;
  double ln_eps = 1e-5;

  // Full-scale reference shape of the backbone and the adapter bottleneck
  // used for the reported dialogue results (117M parameters).
  static constexpr std::size_t kReferenceLayers = 12;
  static constexpr std::size_t kReferenceHeads = 12;
  static constexpr std::size_t kReferenceHidden = 768;
  static constexpr std::size_t kReferenceAdapterSize = 512;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { Backbone, Adapter, Copy };
const char* to_string(ParamGroup group);
ParamGroup param_group_from_string(const std::string& name);

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor value;
};

struct AdapterLayer {
  Tensor ln_gamma;  // [H]
  Tensor ln_beta;   // [H]
  Tensor down;      // [H,A]
  Tensor up;        // [A,H], zero at init
};

struct CopyHead {
  Tensor weight;  // [2H,1]: embedding half first, hidden half second
  Tensor bias;    // [1]
};

struct Block {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv_w, qkv_b;    // [H,3H], [3H]
  Tensor proj_w, proj_b;  // [H,H], [H]
  Tensor ln2_gamma, ln2_beta;
  Tensor fc_w, fc_b;      // [H,F], [F]
  Tensor out_w, out_b;    // [F,H], [H]
};

// Which parameters the optimiser may touch. Ids index Model::params().
struct ParamPartition {
  std::vector<std::size_t> frozen;
  std::vector<std::size_t> trainable;
};

enum class TrainMode { PretrainFull, FinetuneAdapters, FinetuneFull };
const char* to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct ForwardOutput {
  Tensor embeddings;      // [T,H] token + position embedding (e_j)
  Tensor hidden;          // [T,H] final-layer hidden state after the output norm (h^L_j)
  Tensor logits;          // [T,V]
  Tensor gen_probs;       // [T,V]
  Tensor last_attention;  // [T,T] head-averaged, causal, row-stochastic
  Tensor gate;            // [T,1] copy probability; undefined without copy head
  Tensor mixed_probs;     // [T,V]; shares gen_probs when the copy head is off

  std::vector<double> gate_values() const;
};

class Model {
 public:
  // Deterministic initialisation from seed. Adapter up-projections and the
  // copy head start at zero so the model begins as the plain backbone.
  Model(const ModelConfig& config, std::uint64_t seed);

  // Parameters are shared handles, so copies must be explicit.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model clone() const;

  const ModelConfig& config() const { return config_; }
  // Toggling these does not change the parameter set.
  void set_adapter_enabled(bool on) { config_.adapter_enabled = on; }
  void set_copy_enabled(bool on) { config_.copy_enabled = on; }

  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<NamedParam>& params() { return params_; }
  const NamedParam& param(const std::string& name) const;
  std::size_t param_count() const;

  const Tensor& token_embedding() const { return wte_; }
  const Tensor& position_embedding() const { return wpe_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<AdapterLayer>& adapters() const { return adapters_; }
  const CopyHead& copy_head() const { return copy_; }
  const Tensor& final_ln_gamma() const { return lnf_gamma_; }
  const Tensor& final_ln_beta() const { return lnf_beta_; }

  ParamPartition partition_for(TrainMode mode) const;
  // Sets requires_grad on every parameter according to the partition.
  void apply_partition(const ParamPartition& partition);
  void zero_grads();

  // Throws LengthError when tokens exceed max_positions.
  ForwardOutput forward(std::span<const TokenId> tokens) const;

 private:
  void add_param(const std::string& name, ParamGroup group, Tensor& slot, Tensor value);

  ModelConfig config_;
  std::vector<NamedParam> params_;
  Tensor wte_, wpe_;
  std::vector<Block> blocks_;
  std::vector<AdapterLayer> adapters_;
  Tensor lnf_gamma_, lnf_beta_;
  CopyHead copy_;
};

// x + ReLU(LN(x) W_down) W_up, applied row-wise.
Tensor adapter_forward(const AdapterLayer& adapter, const Tensor& h, double eps = 1e-5);

// sigma(W_c . [e; h] + b_c)
double copy_gate(const CopyHead& head, std::span<const double> embedding, std::span<const double> hidden);

// Scatter-add of attention mass onto the vocabulary ids it points at.
std::vector<double> copy_distribution(std::span<const double> attention_row, std::span<const TokenId> context,
                                      std::size_t vocab_size);

// (1 - g) * gen + g * copy
std::vector<double> mix_distributions(std::span<const double> gen, std::span<const double> copy, double gate);

}  // namespace acn
