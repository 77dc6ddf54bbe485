#include "support.hpp"

#include <algorithm>
#include <cmath>

#include "acn/ops.hpp"
#include "acn/pipeline.hpp"
#include "acn/training.hpp"

namespace acn::testing {

double rel_err(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

Tensor random_tensor(Shape shape, Rng& rng, double scale, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

Tensor away_from_zero(Shape shape, Rng& rng, double margin, double scale) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    const double mag = margin + rng.uniform() * scale;
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

GradCheck grad_check(const std::string& name, const std::vector<Tensor>& leaves, const ScalarFn& f, double h) {
  GradCheck out;
  out.name = name;
  for (auto leaf : leaves) leaf.clear_grad();
  backward(f(leaves));
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    if (leaf.has_grad()) {
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.emplace_back(leaf.numel(), 0.0);
    }
  }
  NoGradGuard guard;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    auto data = leaf.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = f(leaves).item();
      data[i] = saved - h;
      const double fm = f(leaves).item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      out.max_rel_err = std::max(out.max_rel_err, rel_err(analytic[li][i], numeric));
      ++out.checked;
    }
  }
  return out;
}

namespace {

// Random linear functional of a tensor, so every output entry matters.
Tensor probe(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

}  // namespace

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layer = 2;
  c.n_head = 2;
  c.d_model = 8;
  c.d_ff = 12;
  c.vocab_size = 16;
  c.max_positions = 12;
  c.adapter_size = 3;
  return c;
}

void randomize(Model& model, Rng& rng, double scale) {
  for (auto& p : model.params()) {
    auto d = p.value.mutable_data();
    const bool gain = p.name.find("gamma") != std::string::npos;
    for (auto& x : d) x = (gain ? 1.0 : 0.0) + rng.normal() * scale;
  }
}

std::vector<GradCheck> gradient_suite(std::size_t seeds) {
  std::vector<GradCheck> results;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(1000 + s);
    const std::string tag = " seed " + std::to_string(s);
    auto add_check = [&](const std::string& name, std::vector<Tensor> leaves, const ScalarFn& f) {
      results.push_back(grad_check(name + tag, leaves, f));
    };

    {
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), w = random_tensor({3, 5}, rng, 1, false);
      add_check("matmul", {a, b}, [w](const auto& x) { return probe(matmul(x[0], x[1]), w); });
    }
    {
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({5, 4}, rng), w = random_tensor({3, 5}, rng, 1, false);
      add_check("matmul_nt", {a, b}, [w](const auto& x) { return probe(matmul_nt(x[0], x[1]), w); });
    }
    {
      Tensor a = random_tensor({3, 4}, rng), w = random_tensor({4, 3}, rng, 1, false);
      add_check("transpose", {a}, [w](const auto& x) { return probe(transpose(x[0]), w); });
    }
    {
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4}, rng), w = random_tensor({3, 4}, rng, 1, false);
      add_check("add broadcast", {a, b}, [w](const auto& x) { return probe(add(x[0], x[1]), w); });
    }
    {
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 1}, rng), w = random_tensor({3, 4}, rng, 1, false);
      add_check("sub broadcast", {a, b}, [w](const auto& x) { return probe(sub(x[0], x[1]), w); });
    }
    {
      Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({3, 4}, rng);
      Tensor w = random_tensor({2, 3, 4}, rng, 1, false);
      add_check("mul broadcast", {a, b}, [w](const auto& x) { return probe(mul(x[0], x[1]), w); });
    }
    {
      Tensor a = random_tensor({3, 4}, rng), w = random_tensor({3, 4}, rng, 1, false);
      add_check("scale", {a}, [w](const auto& x) { return probe(scale(x[0], -1.7), w); });
    }
    {
      Tensor a = away_from_zero({3, 4}, rng, 0.05), w = random_tensor({3, 4}, rng, 1, false);
      add_check("relu", {a}, [w](const auto& x) { return probe(relu(x[0]), w); });
    }
    {
      Tensor a = random_tensor({3, 4}, rng, 2.0), w = random_tensor({3, 4}, rng, 1, false);
      add_check("sigmoid", {a}, [w](const auto& x) { return probe(sigmoid(x[0]), w); });
    }
    {
      Tensor a = random_tensor({3, 4}, rng, 2.0), w = random_tensor({3, 4}, rng, 1, false);
      add_check("gelu", {a}, [w](const auto& x) { return probe(gelu(x[0]), w); });
    }
    {
      Tensor a = random_tensor({3, 4}, rng);
      add_check("sum", {a}, [](const auto& x) { return sum(x[0]); });
    }
    for (std::size_t axis : {0u, 1u}) {
      Tensor a = random_tensor({3, 4}, rng, 2.0), w = random_tensor({3, 4}, rng, 1, false);
      add_check("softmax axis " + std::to_string(axis), {a},
                [w, axis](const auto& x) { return probe(softmax(x[0], axis), w); });
    }
    {
      Tensor a = random_tensor({4, 4}, rng, 2.0), w = random_tensor({4, 4}, rng, 1, false);
      add_check("causal_softmax", {a}, [w](const auto& x) { return probe(causal_softmax(x[0]), w); });
    }
    {
      Tensor a = random_tensor({3, 5}, rng, 2.0), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
      Tensor w = random_tensor({3, 5}, rng, 1, false);
      add_check("layer_norm", {a, g, b}, [w](const auto& x) { return probe(layer_norm(x[0], x[1], x[2], 1e-5), w); });
    }
    {
      Tensor table = random_tensor({6, 3}, rng), w = random_tensor({5, 3}, rng, 1, false);
      const std::vector<TokenId> ids = {2, 0, 2, 5, 1};
      add_check("embedding", {table}, [w, ids](const auto& x) { return probe(embedding(x[0], ids), w); });
    }
    {
      Tensor a = random_tensor({3, 6}, rng), w = random_tensor({3, 2}, rng, 1, false);
      add_check("slice_cols", {a}, [w](const auto& x) { return probe(slice_cols(x[0], 3, 2), w); });
    }
    {
      Tensor a = random_tensor({3, 2}, rng), b = random_tensor({3, 4}, rng), w = random_tensor({3, 6}, rng, 1, false);
      add_check("concat_cols", {a, b}, [w](const auto& x) { return probe(concat_cols({x[0], x[1]}), w); });
    }
    {
      Tensor a = random_tensor({3, 4}, rng), w = random_tensor({3, 7}, rng, 1, false);
      const std::vector<TokenId> ids = {4, 1, 4, 6};
      add_check("scatter_to_vocab", {a},
                [w, ids](const auto& x) { return probe(scatter_to_vocab(x[0], ids, 7), w); });
    }
    {
      Tensor logits = random_tensor({5, 6}, rng, 2.0);
      const std::vector<TokenId> targets = {1, 5, 0, 3, 3};
      const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0};
      add_check("masked_cross_entropy", {logits},
                [targets, mask](const auto& x) { return masked_cross_entropy(x[0], targets, mask); });
    }
    {
      std::vector<double> v(5 * 6);
      for (auto& p : v) p = 0.1 + 0.9 * rng.uniform();
      Tensor probs = Tensor::from({5, 6}, v, true);
      const std::vector<TokenId> targets = {2, 2, 4, 0, 5};
      const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1};
      add_check("masked_nll", {probs}, [targets, mask](const auto& x) { return masked_nll(x[0], targets, mask); });
    }
    {
      // The bottleneck input is checked to stay clear of the ReLU kink.
      AdapterLayer ad;
      Tensor h, w;
      for (std::size_t attempt = 0;; ++attempt) {
        ad.ln_gamma = random_tensor({4}, rng);
        ad.ln_beta = random_tensor({4}, rng);
        ad.down = random_tensor({4, 3}, rng);
        ad.up = random_tensor({3, 4}, rng);
        h = random_tensor({3, 4}, rng);
        NoGradGuard g;
        Tensor pre = matmul(layer_norm(h, ad.ln_gamma, ad.ln_beta, 1e-5), ad.down);
        double m = 1e9;
        for (double z : pre.data()) m = std::min(m, std::abs(z));
        if (m > 1e-3) break;
      }
      w = random_tensor({3, 4}, rng, 1, false);
      add_check("adapter", {h, ad.ln_gamma, ad.ln_beta, ad.down, ad.up}, [w](const auto& x) {
        AdapterLayer a{x[1], x[2], x[3], x[4]};
        return probe(adapter_forward(a, x[0]), w);
      });
    }
    for (bool copy : {true, false}) {
      ModelConfig cfg = tiny_config();
      cfg.copy_enabled = copy;
      Model model(cfg, s);
      Example ex;
      for (std::size_t attempt = 0;; ++attempt) {
        Rng mr(50000 + 100 * s + attempt);
        randomize(model, mr);
        ex.tokens.clear();
        ex.mask.clear();
        for (std::size_t t = 0; t < 10; ++t) {
          ex.tokens.push_back(static_cast<TokenId>(mr.below(cfg.vocab_size)));
          ex.mask.push_back(t % 4 == 2 ? 0 : 1);
        }
        const Reference ref = reference_forward(model, ex.tokens);
        double m = 1e9;
        for (double z : ref.adapter_preacts) m = std::min(m, std::abs(z));
        if (m > 1e-3) break;
      }
      std::vector<Tensor> leaves;
      for (auto& p : model.params()) {
        p.value.set_requires_grad(true);
        leaves.push_back(p.value);
      }
      add_check(copy ? "model loss (copy)" : "model loss (no copy)", leaves,
                [&model, ex](const auto&) { return sequence_loss(model, ex); });
    }
  }
  return results;
}

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Vec values(const Model& m, const std::string& name) {
  auto d = m.param(name).value.data();
  return {d.begin(), d.end()};
}

// y = x W + b with W stored row-major [in,out]
Mat affine(const Mat& x, const Vec& w, const Vec* b, std::size_t out) {
  const std::size_t in = x.front().size();
  Mat y(x.size(), Vec(out, 0.0));
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (std::size_t j = 0; j < out; ++j) {
      double acc = b ? (*b)[j] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += x[t][i] * w[i * out + j];
      y[t][j] = acc;
    }
  }
  return y;
}

Mat norm(const Mat& x, const Vec& g, const Vec& b, double eps) {
  Mat y = x;
  for (auto& row : y) {
    const double n = static_cast<double>(row.size());
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
  }
  return y;
}

Vec softmax_row(const Vec& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  Vec p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - mx);
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

Reference reference_forward(const Model& model, const std::vector<TokenId>& tokens) {
  const ModelConfig& c = model.config();
  const std::size_t T = tokens.size(), H = c.d_model, V = c.vocab_size, nh = c.n_head, hd = H / nh;
  const Vec wte = values(model, "wte"), wpe = values(model, "wpe");
  Mat e(T, Vec(H));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < H; ++i) e[t][i] = wte[tokens[t] * H + i] + wpe[t * H + i];

  Reference ref;
  Mat x = e;
  Mat att_avg(T, Vec(T, 0.0));
  for (std::size_t l = 0; l < c.n_layer; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    const Vec qkv_b = values(model, p + "attn.qkv.b"), proj_b = values(model, p + "attn.proj.b");
    const Vec fc_b = values(model, p + "mlp.fc.b"), out_b = values(model, p + "mlp.out.b");
    Mat a = norm(x, values(model, p + "ln1.gamma"), values(model, p + "ln1.beta"), c.ln_eps);
    Mat qkv = affine(a, values(model, p + "attn.qkv.w"), &qkv_b, 3 * H);
    Mat y(T, Vec(H, 0.0));
    for (std::size_t hh = 0; hh < nh; ++hh) {
      for (std::size_t t = 0; t < T; ++t) {
        Vec scores(t + 1);
        for (std::size_t s = 0; s <= t; ++s) {
          double dot = 0.0;
          for (std::size_t i = 0; i < hd; ++i) dot += qkv[t][hh * hd + i] * qkv[s][H + hh * hd + i];
          scores[s] = dot / std::sqrt(static_cast<double>(hd));
        }
        const Vec w = softmax_row(scores);
        for (std::size_t s = 0; s <= t; ++s) {
          for (std::size_t i = 0; i < hd; ++i) y[t][hh * hd + i] += w[s] * qkv[s][2 * H + hh * hd + i];
          if (l + 1 == c.n_layer) att_avg[t][s] += w[s] / static_cast<double>(nh);
        }
      }
    }
    Mat o = affine(y, values(model, p + "attn.proj.w"), &proj_b, H);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < H; ++i) x[t][i] += o[t][i];
    Mat m = norm(x, values(model, p + "ln2.gamma"), values(model, p + "ln2.beta"), c.ln_eps);
    Mat f = affine(m, values(model, p + "mlp.fc.w"), &fc_b, c.d_ff);
    for (auto& row : f)
      for (auto& v : row) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
    Mat r = affine(f, values(model, p + "mlp.out.w"), &out_b, H);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < H; ++i) x[t][i] += r[t][i];
    if (c.adapter_enabled) {
      const std::string q = "adapter." + std::to_string(l) + ".";
      Mat z = affine(norm(x, values(model, q + "ln.gamma"), values(model, q + "ln.beta"), c.ln_eps),
                     values(model, q + "down"), nullptr, c.adapter_size);
      for (auto& row : z) {
        for (auto& v : row) {
          ref.adapter_preacts.push_back(v);
          v = std::max(v, 0.0);
        }
      }
      Mat u = affine(z, values(model, q + "up"), nullptr, H);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < H; ++i) x[t][i] += u[t][i];
    }
  }
  Mat hid = norm(x, values(model, "lnf.gamma"), values(model, "lnf.beta"), c.ln_eps);
  const Vec cw = values(model, "copy.weight"), cb = values(model, "copy.bias");
  for (std::size_t t = 0; t < T; ++t) {
    Vec logits(V, 0.0);
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t i = 0; i < H; ++i) logits[v] += hid[t][i] * wte[v * H + i];
    Vec gen = softmax_row(logits);
    Vec copy(V, 0.0);
    for (std::size_t s = 0; s <= t; ++s) copy[tokens[s]] += att_avg[t][s];
    double zc = cb[0];
    for (std::size_t i = 0; i < H; ++i) zc += cw[i] * e[t][i] + cw[H + i] * hid[t][i];
    const double g = c.copy_enabled ? 1.0 / (1.0 + std::exp(-zc)) : 0.0;
    Vec mixed(V);
    for (std::size_t v = 0; v < V; ++v) mixed[v] = c.copy_enabled ? (1.0 - g) * gen[v] + g * copy[v] : gen[v];
    ref.gen.push_back(gen);
    ref.copy.push_back(copy);
    ref.mixed.push_back(mixed);
    ref.gate.push_back(g);
  }
  return ref;
}

const OverfitFixture& overfit_fixture() {
  static const OverfitFixture fixture = [] {
    auto data = generate_synthetic(21, 1, EntityPool::Train);
    Vocab vocab = train_vocab(vocab_training_texts(data.corpus, {}), 400);
    ModelConfig c;
    c.n_layer = 2;
    c.n_head = 2;
    c.d_model = 48;
    c.d_ff = 96;
    c.vocab_size = vocab.size();
    c.max_positions = 512;
    c.adapter_size = 8;
    Model m(c, 21);
    TrainConfig tc;
    tc.mode = TrainMode::FinetuneFull;
    tc.learning_rate = 3e-3;
    tc.batch_size = 1;
    tc.epochs = 120;
    const auto log = finetune(m, dialogue_examples(vocab, data.corpus), m.partition_for(TrainMode::FinetuneFull), tc);
    return OverfitFixture{std::move(data), std::move(vocab), std::move(m), log.back().mean_loss};
  }();
  return fixture;
}

}  // namespace acn::testing
