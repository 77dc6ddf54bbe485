#include "acn/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace acn {

namespace {

void layer_norm_row(const double* x, std::size_t h, const Tensor& gamma, const Tensor& beta, double eps, double* out) {
  double mean = 0.0;
  for (std::size_t i = 0; i < h; ++i) mean += x[i];
  mean /= static_cast<double>(h);
  double var = 0.0;
  for (std::size_t i = 0; i < h; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(h);
  const double rstd = 1.0 / std::sqrt(var + eps);
  const auto g = gamma.data();
  const auto b = beta.data();
  for (std::size_t i = 0; i < h; ++i) out[i] = (x[i] - mean) * rstd * g[i] + b[i];
}

// out[n] = x[k] . W[k,n] (+ bias)
void affine_row(const double* x, const Tensor& w, const Tensor* bias, double* out) {
  const std::size_t k = w.size(0), n = w.size(1);
  std::fill(out, out + n, 0.0);
  const auto wd = w.data();
  for (std::size_t p = 0; p < k; ++p) {
    const double xv = x[p];
    const double* row = wd.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += xv * row[j];
  }
  if (bias) {
    const auto bd = bias->data();
    for (std::size_t j = 0; j < n; ++j) out[j] += bd[j];
  }
}

double gelu_scalar(double v) {
  constexpr double c = 0.7978845608028654;
  return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
}

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const Model& model)
    : model_(model),
      h_(model.config().d_model),
      hd_(model.config().d_model / model.config().n_head),
      heads_(model.config().n_head),
      layers_(model.config().n_layer),
      keys_(model.config().n_layer),
      values_(model.config().n_layer) {}

void IncrementalDecoder::truncate(std::size_t length) {
  if (length >= tokens_.size()) return;
  if (length == 0) {
    tokens_.clear();
    emb_.clear();
    final_hidden_.clear();
    for (auto& k : keys_) k.clear();
    for (auto& v : values_) v.clear();
    last_attention_.clear();
    return;
  }
  // Re-run the new last position so its attention row is current.
  const TokenId last = tokens_[length - 1];
  const std::size_t keep = length - 1;
  tokens_.resize(keep);
  emb_.resize(keep * h_);
  final_hidden_.resize(keep * h_);
  for (auto& k : keys_) k.resize(keep * h_);
  for (auto& v : values_) v.resize(keep * h_);
  push(last);
}

void IncrementalDecoder::sync(std::span<const TokenId> context) {
  std::size_t common = 0;
  while (common < context.size() && common < tokens_.size() && context[common] == tokens_[common]) ++common;
  if (common == context.size() && common == tokens_.size()) return;
  if (common == context.size()) {
    truncate(common);
    return;
  }
  truncate(common);
  for (std::size_t i = common; i < context.size(); ++i) push(context[i]);
}

void IncrementalDecoder::push(TokenId token) {
  const ModelConfig& cfg = model_.config();
  const std::size_t pos = tokens_.size();
  if (pos + 1 > cfg.max_positions) {
    throw LengthError("decoder: context of " + std::to_string(pos + 1) + " tokens exceeds max_positions " +
                      std::to_string(cfg.max_positions));
  }
  if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size) {
    throw DimensionError("decoder: token id " + std::to_string(token) + " out of range");
  }
  const std::size_t h = h_;
  const auto wte = model_.token_embedding().data();
  const auto wpe = model_.position_embedding().data();
  std::vector<double> x(h);
  for (std::size_t i = 0; i < h; ++i) x[i] = wte[static_cast<std::size_t>(token) * h + i] + wpe[pos * h + i];
  tokens_.push_back(token);
  emb_.insert(emb_.end(), x.begin(), x.end());

  const std::size_t t = pos + 1;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd_));
  std::vector<double> a(h), qkv(3 * h), y(h), tmp(h), ff(cfg.d_ff), scores(t), att_avg;
  for (std::size_t l = 0; l < layers_; ++l) {
    const Block& b = model_.blocks()[l];
    layer_norm_row(x.data(), h, b.ln1_gamma, b.ln1_beta, cfg.ln_eps, a.data());
    affine_row(a.data(), b.qkv_w, &b.qkv_b, qkv.data());
    keys_[l].insert(keys_[l].end(), qkv.begin() + static_cast<std::ptrdiff_t>(h),
                    qkv.begin() + static_cast<std::ptrdiff_t>(2 * h));
    values_[l].insert(values_[l].end(), qkv.begin() + static_cast<std::ptrdiff_t>(2 * h), qkv.end());
    const bool last_layer = l + 1 == layers_;
    if (last_layer) att_avg.assign(t, 0.0);
    const std::vector<double>& keys = keys_[l];
    const std::vector<double>& vals = values_[l];
    for (std::size_t hh = 0; hh < heads_; ++hh) {
      const double* q = qkv.data() + hh * hd_;
      double mx = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        const double* k = keys.data() + j * h + hh * hd_;
        double s = 0.0;
        for (std::size_t d = 0; d < hd_; ++d) s += q[d] * k[d];
        scores[j] = s * att_scale;
        mx = j == 0 ? scores[j] : std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      const double inv = 1.0 / z;
      for (std::size_t j = 0; j < t; ++j) scores[j] *= inv;
      double* yh = y.data() + hh * hd_;
      std::fill(yh, yh + hd_, 0.0);
      for (std::size_t j = 0; j < t; ++j) {
        const double* v = vals.data() + j * h + hh * hd_;
        for (std::size_t d = 0; d < hd_; ++d) yh[d] += scores[j] * v[d];
      }
      if (last_layer) {
        for (std::size_t j = 0; j < t; ++j) att_avg[j] += scores[j];
      }
    }
    affine_row(y.data(), b.proj_w, &b.proj_b, tmp.data());
    for (std::size_t i = 0; i < h; ++i) x[i] += tmp[i];
    layer_norm_row(x.data(), h, b.ln2_gamma, b.ln2_beta, cfg.ln_eps, a.data());
    affine_row(a.data(), b.fc_w, &b.fc_b, ff.data());
    for (auto& v : ff) v = gelu_scalar(v);
    affine_row(ff.data(), b.out_w, &b.out_b, tmp.data());
    for (std::size_t i = 0; i < h; ++i) x[i] += tmp[i];
    if (cfg.adapter_enabled) {
      const AdapterLayer& ad = model_.adapters()[l];
      std::vector<double> bottleneck(ad.down.size(1));
      layer_norm_row(x.data(), h, ad.ln_gamma, ad.ln_beta, cfg.ln_eps, a.data());
      affine_row(a.data(), ad.down, nullptr, bottleneck.data());
      for (auto& v : bottleneck) v = v > 0.0 ? v : 0.0;
      affine_row(bottleneck.data(), ad.up, nullptr, tmp.data());
      for (std::size_t i = 0; i < h; ++i) x[i] += tmp[i];
    }
    if (last_layer && heads_ > 1) {
      const double inv_heads = 1.0 / static_cast<double>(heads_);
      for (auto& v : att_avg) v *= inv_heads;
    }
  }
  std::vector<double> hidden(h);
  layer_norm_row(x.data(), h, model_.final_ln_gamma(), model_.final_ln_beta(), cfg.ln_eps, hidden.data());
  final_hidden_.insert(final_hidden_.end(), hidden.begin(), hidden.end());
  last_attention_ = std::move(att_avg);
}

StepDistribution IncrementalDecoder::next() const {
  if (tokens_.empty()) throw LengthError("decoder: next() on an empty context");
  const ModelConfig& cfg = model_.config();
  const std::size_t v = cfg.vocab_size;
  const std::size_t t = tokens_.size();
  const double* hidden = final_hidden_.data() + (t - 1) * h_;
  StepDistribution out;
  out.attention = last_attention_;
  out.gen_probs.resize(v);
  const auto wte = model_.token_embedding().data();
  double mx = 0.0;
  for (std::size_t w = 0; w < v; ++w) {
    const double* row = wte.data() + w * h_;
    double s = 0.0;
    for (std::size_t i = 0; i < h_; ++i) s += hidden[i] * row[i];
    out.gen_probs[w] = s;
    mx = w == 0 ? s : std::max(mx, s);
  }
  double z = 0.0;
  for (auto& p : out.gen_probs) {
    p = std::exp(p - mx);
    z += p;
  }
  const double inv = 1.0 / z;
  for (auto& p : out.gen_probs) p *= inv;
  if (!cfg.copy_enabled) {
    out.mixed_probs = out.gen_probs;
    return out;
  }
  const CopyHead& head = model_.copy_head();
  const auto w = head.weight.data();
  const double* e = emb_.data() + (t - 1) * h_;
  double zg = 0.0;
  for (std::size_t i = 0; i < h_; ++i) zg += e[i] * w[i];
  for (std::size_t i = 0; i < h_; ++i) zg += hidden[i] * w[h_ + i];
  out.gate = sigmoid_scalar(zg + head.bias.item());
  out.copy_probs = copy_distribution(out.attention, tokens_, v);
  out.mixed_probs = mix_distributions(out.gen_probs, out.copy_probs, out.gate);
  return out;
}

}  // namespace acn
