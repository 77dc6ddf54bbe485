#include "acn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

namespace acn {

namespace {

using detail::Node;

std::shared_ptr<Node> make_node(Shape shape, const char* op, std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<Node>();
  node->data.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    }
  }
  return node;
}

std::shared_ptr<Node> make_node(Shape shape, const char* op, const std::vector<Tensor>& inputs) {
  auto node = std::make_shared<Node>();
  node->data.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor& t : inputs) node->inputs.push_back(t.node());
    }
  }
  return node;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

// C[m,n] += op(A) * op(B), row-major, op(A) is m x k.
void gemm(bool ta, bool tb, std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  const auto im = static_cast<Eigen::Index>(m), ik = static_cast<Eigen::Index>(k), in = static_cast<Eigen::Index>(n);
  Eigen::Map<RowMat> cm(c, im, in);
  if (!ta && !tb) cm.noalias() += ConstMap(a, im, ik) * ConstMap(b, ik, in);
  if (!ta && tb) cm.noalias() += ConstMap(a, im, ik) * ConstMap(b, in, ik).transpose();
  if (ta && !tb) cm.noalias() += ConstMap(a, ik, im).transpose() * ConstMap(b, ik, in);
  if (ta && tb) cm.noalias() += ConstMap(a, ik, im).transpose() * ConstMap(b, in, ik).transpose();
}

std::vector<double> transposed(std::size_t rows, std::size_t cols, const double* src) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

// For a broadcast of `b` into `a`'s shape, the index into b for every index of a.
// Returns an empty vector when no mapping is needed (identical shapes).
std::vector<std::size_t> broadcast_index(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return {};
  auto fail = [&] {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " into " + shape_str(a));
  };
  if (b.size() > a.size()) fail();
  const std::size_t offset = a.size() - b.size();
  std::vector<std::size_t> bstride(a.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = b.size(); d-- > 0;) {
    const std::size_t ad = a[d + offset];
    if (b[d] == ad) {
      bstride[d + offset] = stride;
    } else if (b[d] != 1) {
      fail();
    }
    stride *= b[d];
  }
  const std::size_t n = shape_numel(a);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(a.size(), 0);
  std::size_t bi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = bi;
    for (std::size_t d = a.size(); d-- > 0;) {
      ++counter[d];
      bi += bstride[d];
      if (counter[d] < a[d]) break;
      bi -= bstride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return map;
}

enum class BinKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinKind kind, const char* op) {
  auto map = broadcast_index(a.shape(), b.shape(), op);
  auto node = make_node(a.shape(), op, {&a, &b});
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t n = ad.size();
  auto bat = [&](std::size_t i) { return map.empty() ? bd[i] : bd[map[i]]; };
  for (std::size_t i = 0; i < n; ++i) {
    switch (kind) {
      case BinKind::Add: node->data[i] = ad[i] + bat(i); break;
      case BinKind::Sub: node->data[i] = ad[i] - bat(i); break;
      case BinKind::Mul: node->data[i] = ad[i] * bat(i); break;
    }
  }
  if (node->requires_grad) {
    node->backward = [kind, map = std::move(map)](Node& self) {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      const std::size_t n = self.data.size();
      auto bi = [&](std::size_t i) { return map.empty() ? i : map[i]; };
      if (na.requires_grad) {
        auto ga = na.grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
          ga[i] += kind == BinKind::Mul ? self.grad[i] * nb.data[bi(i)] : self.grad[i];
        }
      }
      if (nb.requires_grad) {
        auto gb = nb.grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
          double g = self.grad[i];
          if (kind == BinKind::Sub) g = -g;
          if (kind == BinKind::Mul) g *= na.data[i];
          gb[bi(i)] += g;
        }
      }
    };
  }
  return Tensor(node);
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  auto node = make_node(x.shape(), op, {&x});
  const auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) node->data[i] = fwd(xd[i]);
  if (node->requires_grad) {
    node->backward = [deriv](Node& self) {
      Node& in = *self.inputs[0];
      auto g = in.grad_buffer();
      for (std::size_t i = 0; i < self.data.size(); ++i) g[i] += self.grad[i] * deriv(in.data[i], self.data[i]);
    };
  }
  return Tensor(node);
}

void check_targets(const Tensor& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
                   const char* op) {
  require_matrix(logits, op);
  const std::size_t rows = logits.size(0);
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError(std::string(op) + ": " + std::to_string(rows) + " rows but " +
                         std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                         " mask entries");
  }
  std::size_t count = 0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    ++count;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= logits.size(1)) {
      throw DimensionError(std::string(op) + ": target id " + std::to_string(targets[t]) + " out of range at row " +
                           std::to_string(t));
    }
  }
  if (count == 0) throw EmptyMaskError(std::string(op) + ": loss mask has no active positions");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: inner dims differ for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  auto node = make_node({m, n}, "matmul", {&a, &b});
  gemm(false, false, m, k, n, a.data().data(), b.data().data(), node->data.data());
  if (node->requires_grad) {
    node->backward = [m, k, n](Node& self) {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      // dA = dC B^T, dB = A^T dC
      if (na.requires_grad) gemm(false, true, m, n, k, self.grad.data(), nb.data.data(), na.grad_buffer().data());
      if (nb.requires_grad) gemm(true, false, k, m, n, na.data.data(), self.grad.data(), nb.grad_buffer().data());
    };
  }
  return Tensor(node);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(0);
  if (b.size(1) != k) {
    throw DimensionError("matmul_nt: inner dims differ for " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
  }
  auto node = make_node({m, n}, "matmul_nt", {&a, &b});
  gemm(false, true, m, k, n, a.data().data(), b.data().data(), node->data.data());
  if (node->requires_grad) {
    node->backward = [m, k, n](Node& self) {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      if (na.requires_grad) gemm(false, false, m, n, k, self.grad.data(), nb.data.data(), na.grad_buffer().data());
      if (nb.requires_grad) gemm(true, false, n, m, k, self.grad.data(), na.data.data(), nb.grad_buffer().data());
    };
  }
  return Tensor(node);
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.size(0), c = x.size(1);
  auto node = make_node({c, r}, "transpose", {&x});
  node->data = transposed(r, c, x.data().data());
  if (node->requires_grad) {
    node->backward = [r, c](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    };
  }
  return Tensor(node);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
      [](double v, double) {
        const double u = kGeluC * (v + kGeluA * v * v * v);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor sum(const Tensor& x) {
  auto node = make_node({1}, "sum", {&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  node->data[0] = s;
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return Tensor(node);
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const std::size_t len = shape[axis];
  auto node = make_node(shape, "softmax", {&x});
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xd[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(xd[base + i * inner] - mx);
        node->data[base + i * inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t i = 0; i < len; ++i) node->data[base + i * inner] *= inv;
    }
  }
  if (node->requires_grad) {
    node->backward = [outer, inner, len](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += self.grad[base + i * inner] * self.data[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t at = base + i * inner;
            g[at] += self.data[at] * (self.grad[at] - dot);
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor causal_softmax(const Tensor& scores) {
  require_matrix(scores, "causal_softmax");
  const std::size_t t = scores.size(0);
  if (scores.size(1) != t) throw DimensionError("causal_softmax: expected square scores, got " + shape_str(scores.shape()));
  auto node = make_node(scores.shape(), "causal_softmax", {&scores});
  const auto sd = scores.data();
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = sd.data() + i * t;
    double* out = node->data.data() + i * t;
    double mx = row[0];
    for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      out[j] = std::exp(row[j] - mx);
      z += out[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j <= i; ++j) out[j] *= inv;
  }
  if (node->requires_grad) {
    node->backward = [t](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < t; ++i) {
        const double* y = self.data.data() + i * t;
        const double* dy = self.grad.data() + i * t;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j <= i; ++j) g[i * t + j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return Tensor(node);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t h = x.shape().back();
  if (gamma.numel() != h || beta.numel() != h) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                         " do not match last dim of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / h;
  auto node = make_node(x.shape(), "layer_norm", {&x, &gamma, &beta});
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * h;
    double mean = 0.0;
    for (std::size_t i = 0; i < h; ++i) mean += in[i];
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t i = 0; i < h; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(h);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < h; ++i) {
      const double v = (in[i] - mean) * rstd[r];
      xhat[r * h + i] = v;
      node->data[r * h + i] = v * gd[i] + bd[i];
    }
  }
  if (node->requires_grad) {
    node->backward = [h, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
      Node& nx = *self.inputs[0];
      Node& ng = *self.inputs[1];
      Node& nb = *self.inputs[2];
      if (ng.requires_grad) {
        auto g = ng.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < h; ++i) g[i] += self.grad[r * h + i] * xhat[r * h + i];
      }
      if (nb.requires_grad) {
        auto g = nb.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < h; ++i) g[i] += self.grad[r * h + i];
      }
      if (nx.requires_grad) {
        auto g = nx.grad_buffer();
        std::vector<double> dxhat(h);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t i = 0; i < h; ++i) {
            dxhat[i] = self.grad[r * h + i] * ng.data[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xhat[r * h + i];
          }
          mean_d /= static_cast<double>(h);
          mean_dx /= static_cast<double>(h);
          for (std::size_t i = 0; i < h; ++i) {
            g[r * h + i] += rstd[r] * (dxhat[i] - mean_d - xhat[r * h + i] * mean_dx);
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_matrix(table, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const std::size_t v = table.size(0), h = table.size(1);
  std::vector<TokenId> rows(ids.begin(), ids.end());
  for (TokenId id : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw DimensionError("embedding: id " + std::to_string(id) + " out of range for table " +
                           shape_str(table.shape()));
    }
  }
  auto node = make_node({rows.size(), h}, "embedding", {&table});
  const auto td = table.data();
  for (std::size_t t = 0; t < rows.size(); ++t) {
    std::copy_n(td.data() + static_cast<std::size_t>(rows[t]) * h, h, node->data.data() + t * h);
  }
  if (node->requires_grad) {
    node->backward = [h, rows = std::move(rows)](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t t = 0; t < rows.size(); ++t) {
        double* dst = g.data() + static_cast<std::size_t>(rows[t]) * h;
        const double* src = self.grad.data() + t * h;
        for (std::size_t i = 0; i < h; ++i) dst[i] += src[i];
      }
    };
  }
  return Tensor(node);
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t r = x.size(0), c = x.size(1);
  if (count == 0 || start + count > c) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(x.shape()));
  }
  auto node = make_node({r, count}, "slice_cols", {&x});
  const auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(xd.data() + i * c + start, count, node->data.data() + i * count);
  if (node->requires_grad) {
    node->backward = [r, c, start, count](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) g[i * c + start + j] += self.grad[i * count + j];
    };
  }
  return Tensor(node);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts.front().size(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.size(0) != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(p.size(1));
    total += p.size(1);
  }
  auto node = make_node({r, total}, "concat_cols", parts);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(pd.data() + i * widths[k], widths[k], node->data.data() + i * total + off);
    off += widths[k];
  }
  if (node->requires_grad) {
    node->backward = [r, total, widths = std::move(widths)](Node& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        Node& in = *self.inputs[k];
        if (in.requires_grad) {
          auto g = in.grad_buffer();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
        }
        off += widths[k];
      }
    };
  }
  return Tensor(node);
}

Tensor scatter_to_vocab(const Tensor& weights, std::span<const TokenId> ids, std::size_t vocab_size) {
  require_matrix(weights, "scatter_to_vocab");
  const std::size_t t = weights.size(0), k = weights.size(1);
  if (ids.size() != k) {
    throw DimensionError("scatter_to_vocab: " + std::to_string(k) + " weight columns but " +
                         std::to_string(ids.size()) + " ids");
  }
  std::vector<TokenId> cols(ids.begin(), ids.end());
  for (TokenId id : cols) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw DimensionError("scatter_to_vocab: id " + std::to_string(id) + " >= vocab size " +
                           std::to_string(vocab_size));
    }
  }
  auto node = make_node({t, vocab_size}, "scatter_to_vocab", {&weights});
  const auto wd = weights.data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < k; ++j) node->data[i * vocab_size + static_cast<std::size_t>(cols[j])] += wd[i * k + j];
  if (node->requires_grad) {
    node->backward = [t, k, vocab_size, cols = std::move(cols)](Node& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < k; ++j) g[i * k + j] += self.grad[i * vocab_size + static_cast<std::size_t>(cols[j])];
    };
  }
  return Tensor(node);
}

Tensor masked_cross_entropy(const Tensor& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask) {
  check_targets(logits, targets, mask, "masked_cross_entropy");
  const std::size_t rows = logits.size(0), v = logits.size(1);
  auto node = make_node({1}, "masked_cross_entropy", {&logits});
  const auto ld = logits.data();
  std::vector<double> lse(rows, 0.0);
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    const double* row = ld.data() + t * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    lse[t] = mx + std::log(z);
    total += lse[t] - row[static_cast<std::size_t>(targets[t])];
    ++count;
  }
  node->data[0] = total / static_cast<double>(count);
  if (node->requires_grad) {
    std::vector<TokenId> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> mk(mask.begin(), mask.end());
    node->backward = [rows, v, count, lse = std::move(lse), tg = std::move(tg), mk = std::move(mk)](Node& self) {
      Node& in = *self.inputs[0];
      auto g = in.grad_buffer();
      const double w = self.grad[0] / static_cast<double>(count);
      for (std::size_t t = 0; t < rows; ++t) {
        if (!mk[t]) continue;
        const double* row = in.data.data() + t * v;
        for (std::size_t j = 0; j < v; ++j) g[t * v + j] += w * std::exp(row[j] - lse[t]);
        g[t * v + static_cast<std::size_t>(tg[t])] -= w;
      }
    };
  }
  return Tensor(node);
}

Tensor masked_nll(const Tensor& probs, std::span<const TokenId> targets, std::span<const std::uint8_t> mask) {
  check_targets(probs, targets, mask, "masked_nll");
  const std::size_t rows = probs.size(0), v = probs.size(1);
  auto node = make_node({1}, "masked_nll", {&probs});
  const auto pd = probs.data();
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    total -= std::log(pd[t * v + static_cast<std::size_t>(targets[t])]);
    ++count;
  }
  node->data[0] = total / static_cast<double>(count);
  if (node->requires_grad) {
    std::vector<TokenId> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> mk(mask.begin(), mask.end());
    node->backward = [rows, v, count, tg = std::move(tg), mk = std::move(mk)](Node& self) {
      Node& in = *self.inputs[0];
      auto g = in.grad_buffer();
      const double w = self.grad[0] / static_cast<double>(count);
      for (std::size_t t = 0; t < rows; ++t) {
        if (!mk[t]) continue;
        const std::size_t at = t * v + static_cast<std::size_t>(tg[t]);
        g[at] -= w / in.data[at];
      }
    };
  }
  return Tensor(node);
}

}  // namespace acn
