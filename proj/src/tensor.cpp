#include "adjust/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace adjust {

namespace {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive");
    n *= d;
  }
  return n;
}

std::shared_ptr<Tensor::Node> make_leaf(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = std::move(shape);
  n->value.resize(shape_size(n->shape), 0.0);
  n->requires_grad = requires_grad;
  return n;
}

// Result node; records parents/backprop only if a parent needs gradients.
Tensor make_op(std::vector<int> shape, std::vector<Tensor> parents,
               std::function<void(Tensor::Node&)> backprop) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = std::move(shape);
  n->value.resize(shape_size(n->shape));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

void ensure_grad(Tensor::Node& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

void check_rank2(const Tensor& t, const char* who) {
  if (t.shape().size() != 2) throw std::invalid_argument(std::string(who) + ": rank-2 tensor required");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

// c[m,n] += a[m,k] * b[k,n]; contiguous inner loop over n so the compiler
// can vectorize.
void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<int64_t>(i) * k;
    double* crow = c + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * bt[n,k]^T
void gemm_bt_acc(const double* a, const double* bt, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<int64_t>(i) * k;
    double* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = bt + static_cast<int64_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[m,n] += at[k,m]^T * b[k,n]
void gemm_at_acc(const double* at, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* atrow = at + static_cast<int64_t>(p) * m;
    const double* brow = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = atrow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_row_inplace(const double* x, double* out, int n) {
  double mx = x[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double z = 0.0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(x[j] - mx);
    z += out[j];
  }
  for (int j = 0; j < n; ++j) out[j] /= z;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double fill, bool requires_grad) {
  auto n = make_leaf(std::move(shape), requires_grad);
  std::fill(n->value.begin(), n->value.end(), fill);
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  auto n = make_leaf(std::move(shape), requires_grad);
  if (static_cast<int64_t>(data.size()) != n->size())
    throw std::invalid_argument("from_data: shape does not match data length");
  n->value = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::gaussian(std::vector<int> shape, double stddev, RngStream& rng, bool requires_grad) {
  auto n = make_leaf(std::move(shape), requires_grad);
  for (double& v : n->value) v = stddev * rng.next_gaussian();
  return Tensor(std::move(n));
}

std::span<double> Tensor::mutable_data() {
  if (n_->backprop) throw std::logic_error("mutable_data: tensor is an op output, not a leaf");
  return n_->value;
}

std::span<const double> Tensor::grad() const {
  if (n_->grad.empty()) throw std::logic_error("grad: no gradient present; run backward() first");
  return n_->grad;
}

void Tensor::zero_grad() {
  std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
  n_->backward_done = false;
}

double Tensor::scalar() const {
  if (size() != 1) throw std::logic_error("scalar: tensor is not a scalar");
  return n_->value[0];
}

void Tensor::backward() const {
  if (size() != 1) throw std::logic_error("backward: loss must be a scalar");
  if (n_->backward_done)
    throw std::logic_error("backward: already invoked on this graph; zero_grad first");

  // Topological order by iterative DFS.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(n_.get(), 0);
  visited.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  ensure_grad(*n_);
  n_->grad[0] = 1.0;
  n_->backward_done = true;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) throw std::invalid_argument("matmul: inner dimensions differ");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_op({m, n}, {a, b}, [a, b, m, k, n](Tensor::Node& o) {
    if (a.requires_grad()) {
      ensure_grad(*a.node());
      gemm_bt_acc(o.grad.data(), b.data().data(), a.node()->grad.data(), m, n, k);
    }
    if (b.requires_grad()) {
      ensure_grad(*b.node());
      // dB[k,n] = A^T * dO
      gemm_at_acc(a.data().data(), o.grad.data(), b.node()->grad.data(), k, m, n);
    }
  });
  std::fill(out.node()->value.begin(), out.node()->value.end(), 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.node()->value.data(), m, k, n);
  return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& bt) {
  check_rank2(a, "matmul_transposed");
  check_rank2(bt, "matmul_transposed");
  if (a.dim(1) != bt.dim(1)) throw std::invalid_argument("matmul_transposed: inner dimensions differ");
  const int m = a.dim(0), k = a.dim(1), n = bt.dim(0);
  Tensor out = make_op({m, n}, {a, bt}, [a, bt, m, k, n](Tensor::Node& o) {
    if (a.requires_grad()) {
      ensure_grad(*a.node());
      // dA = dO * Bt
      gemm_acc(o.grad.data(), bt.data().data(), a.node()->grad.data(), m, n, k);
    }
    if (bt.requires_grad()) {
      ensure_grad(*bt.node());
      // dBt[n,k] = dO^T * A
      gemm_at_acc(o.grad.data(), a.data().data(), bt.node()->grad.data(), n, m, k);
    }
  });
  std::fill(out.node()->value.begin(), out.node()->value.end(), 0.0);
  gemm_bt_acc(a.data().data(), bt.data().data(), out.node()->value.data(), m, k, n);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_op(a.shape(), {a, b}, [a, b](Tensor::Node& o) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      ensure_grad(*t->node());
      auto& g = t->node()->grad;
      for (int64_t i = 0; i < o.size(); ++i) g[i] += o.grad[i];
    }
  });
  for (int64_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.data()[i] + b.data()[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_op(a.shape(), {a, b}, [a, b](Tensor::Node& o) {
    if (a.requires_grad()) {
      ensure_grad(*a.node());
      for (int64_t i = 0; i < o.size(); ++i) a.node()->grad[i] += o.grad[i];
    }
    if (b.requires_grad()) {
      ensure_grad(*b.node());
      for (int64_t i = 0; i < o.size(); ++i) b.node()->grad[i] -= o.grad[i];
    }
  });
  for (int64_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.data()[i] - b.data()[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_op(a.shape(), {a, b}, [a, b](Tensor::Node& o) {
    if (a.requires_grad()) {
      ensure_grad(*a.node());
      for (int64_t i = 0; i < o.size(); ++i) a.node()->grad[i] += o.grad[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      ensure_grad(*b.node());
      for (int64_t i = 0; i < o.size(); ++i) b.node()->grad[i] += o.grad[i] * a.data()[i];
    }
  });
  for (int64_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.data()[i] * b.data()[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = make_op(a.shape(), {a}, [a, s](Tensor::Node& o) {
    ensure_grad(*a.node());
    for (int64_t i = 0; i < o.size(); ++i) a.node()->grad[i] += o.grad[i] * s;
  });
  for (int64_t i = 0; i < a.size(); ++i) out.node()->value[i] = a.data()[i] * s;
  return out;
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& row) {
  check_rank2(a, "add_row_broadcast");
  if (row.shape().size() != 1 || row.dim(0) != a.dim(1))
    throw std::invalid_argument("add_row_broadcast: row length must equal column count");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = make_op(a.shape(), {a, row}, [a, row, m, n](Tensor::Node& o) {
    if (a.requires_grad()) {
      ensure_grad(*a.node());
      for (int64_t i = 0; i < o.size(); ++i) a.node()->grad[i] += o.grad[i];
    }
    if (row.requires_grad()) {
      ensure_grad(*row.node());
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) row.node()->grad[j] += o.grad[static_cast<int64_t>(i) * n + j];
    }
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.node()->value[static_cast<int64_t>(i) * n + j] = a.at(i, j) + row.at(j);
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_rank2(x, "layer_norm");
  const int m = x.dim(0), n = x.dim(1);
  if (gain.shape() != std::vector<int>{n} || bias.shape() != std::vector<int>{n})
    throw std::invalid_argument("layer_norm: gain/bias must be length-n vectors");

  // Cache per-row mean and inverse stddev for the backward pass.
  auto stats = std::make_shared<std::vector<double>>(2 * m);
  Tensor out = make_op(x.shape(), {x, gain, bias}, [x, gain, bias, stats, m, n](Tensor::Node& o) {
    for (int i = 0; i < m; ++i) {
      const double mu = (*stats)[2 * i], inv = (*stats)[2 * i + 1];
      const double* xr = x.data().data() + static_cast<int64_t>(i) * n;
      const double* go = o.grad.data() + static_cast<int64_t>(i) * n;
      // dnorm = go * gain; accumulate the two row sums the backward needs
      double sum_d = 0.0, sum_dx = 0.0;
      for (int j = 0; j < n; ++j) {
        double d = go[j] * gain.at(j);
        double xhat = (xr[j] - mu) * inv;
        sum_d += d;
        sum_dx += d * xhat;
      }
      if (x.requires_grad()) {
        ensure_grad(*x.node());
        double* gx = x.node()->grad.data() + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          double d = go[j] * gain.at(j);
          double xhat = (xr[j] - mu) * inv;
          gx[j] += inv * (d - sum_d / n - xhat * sum_dx / n);
        }
      }
      if (gain.requires_grad()) {
        ensure_grad(*gain.node());
        for (int j = 0; j < n; ++j)
          gain.node()->grad[j] += go[j] * (xr[j] - mu) * inv;
      }
      if (bias.requires_grad()) {
        ensure_grad(*bias.node());
        for (int j = 0; j < n; ++j) bias.node()->grad[j] += go[j];
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    const double* xr = x.data().data() + static_cast<int64_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xr[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= n;
    double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * i] = mu;
    (*stats)[2 * i + 1] = inv;
    double* orow = out.node()->value.data() + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = (xr[j] - mu) * inv * gain.at(j) + bias.at(j);
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  check_rank2(x, "softmax_rows");
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = make_op(x.shape(), {x}, [x, m, n](Tensor::Node& o) {
    ensure_grad(*x.node());
    for (int i = 0; i < m; ++i) {
      const double* p = o.value.data() + static_cast<int64_t>(i) * n;
      const double* go = o.grad.data() + static_cast<int64_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += go[j] * p[j];
      double* gx = x.node()->grad.data() + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) gx[j] += p[j] * (go[j] - dot);
    }
  });
  for (int i = 0; i < m; ++i)
    softmax_row_inplace(x.data().data() + static_cast<int64_t>(i) * n,
                        out.node()->value.data() + static_cast<int64_t>(i) * n, n);
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  check_rank2(x, "log_softmax_rows");
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = make_op(x.shape(), {x}, [x, m, n](Tensor::Node& o) {
    ensure_grad(*x.node());
    for (int i = 0; i < m; ++i) {
      const double* lp = o.value.data() + static_cast<int64_t>(i) * n;
      const double* go = o.grad.data() + static_cast<int64_t>(i) * n;
      double sum_go = 0.0;
      for (int j = 0; j < n; ++j) sum_go += go[j];
      double* gx = x.node()->grad.data() + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) gx[j] += go[j] - std::exp(lp[j]) * sum_go;
    }
  });
  for (int i = 0; i < m; ++i) {
    const double* xr = x.data().data() + static_cast<int64_t>(i) * n;
    double* orow = out.node()->value.data() + static_cast<int64_t>(i) * n;
    double mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    double lz = mx + std::log(z);
    for (int j = 0; j < n; ++j) orow[j] = xr[j] - lz;
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  check_rank2(table, "embedding_lookup");
  const int n = table.dim(1);
  const int m = static_cast<int>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= table.dim(0)) throw std::invalid_argument("embedding_lookup: id out of range");
  Tensor out = make_op({m, n}, {table}, [table, ids, m, n](Tensor::Node& o) {
    ensure_grad(*table.node());
    for (int i = 0; i < m; ++i) {
      double* trow = table.node()->grad.data() + static_cast<int64_t>(ids[i]) * n;
      const double* go = o.grad.data() + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) trow[j] += go[j];
    }
  });
  for (int i = 0; i < m; ++i) {
    const double* trow = table.data().data() + static_cast<int64_t>(ids[i]) * n;
    double* orow = out.node()->value.data() + static_cast<int64_t>(i) * n;
    std::copy(trow, trow + n, orow);
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_rank2(a, "concat_cols");
  check_rank2(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) throw std::invalid_argument("concat_cols: row counts differ");
  const int m = a.dim(0), na = a.dim(1), nb = b.dim(1);
  Tensor out = make_op({m, na + nb}, {a, b}, [a, b, m, na, nb](Tensor::Node& o) {
    for (int i = 0; i < m; ++i) {
      const double* go = o.grad.data() + static_cast<int64_t>(i) * (na + nb);
      if (a.requires_grad()) {
        ensure_grad(*a.node());
        double* ga = a.node()->grad.data() + static_cast<int64_t>(i) * na;
        for (int j = 0; j < na; ++j) ga[j] += go[j];
      }
      if (b.requires_grad()) {
        ensure_grad(*b.node());
        double* gb = b.node()->grad.data() + static_cast<int64_t>(i) * nb;
        for (int j = 0; j < nb; ++j) gb[j] += go[na + j];
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    double* orow = out.node()->value.data() + static_cast<int64_t>(i) * (na + nb);
    std::copy_n(a.data().data() + static_cast<int64_t>(i) * na, na, orow);
    std::copy_n(b.data().data() + static_cast<int64_t>(i) * nb, nb, orow + na);
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int begin, int count) {
  check_rank2(a, "slice_cols");
  if (begin < 0 || count <= 0 || begin + count > a.dim(1))
    throw std::invalid_argument("slice_cols: range out of bounds");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = make_op({m, count}, {a}, [a, begin, count, m, n](Tensor::Node& o) {
    ensure_grad(*a.node());
    for (int i = 0; i < m; ++i) {
      double* ga = a.node()->grad.data() + static_cast<int64_t>(i) * n + begin;
      const double* go = o.grad.data() + static_cast<int64_t>(i) * count;
      for (int j = 0; j < count; ++j) ga[j] += go[j];
    }
  });
  for (int i = 0; i < m; ++i)
    std::copy_n(a.data().data() + static_cast<int64_t>(i) * n + begin, count,
                out.node()->value.data() + static_cast<int64_t>(i) * count);
  return out;
}

Tensor slice_rows(const Tensor& a, int begin, int count) {
  check_rank2(a, "slice_rows");
  if (begin < 0 || count <= 0 || begin + count > a.dim(0))
    throw std::invalid_argument("slice_rows: range out of bounds");
  const int n = a.dim(1);
  Tensor out = make_op({count, n}, {a}, [a, begin, count, n](Tensor::Node& o) {
    ensure_grad(*a.node());
    double* ga = a.node()->grad.data() + static_cast<int64_t>(begin) * n;
    for (int64_t i = 0; i < static_cast<int64_t>(count) * n; ++i) ga[i] += o.grad[i];
  });
  std::copy_n(a.data().data() + static_cast<int64_t>(begin) * n,
              static_cast<int64_t>(count) * n, out.node()->value.data());
  return out;
}

Tensor gelu(const Tensor& x) {
  // tanh approximation, matching common transformer stacks
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kBeta = 0.044715;
  Tensor out = make_op(x.shape(), {x}, [x](Tensor::Node& o) {
    ensure_grad(*x.node());
    for (int64_t i = 0; i < o.size(); ++i) {
      double v = x.data()[i];
      double u = kAlpha * (v + kBeta * v * v * v);
      double t = std::tanh(u);
      double du = kAlpha * (1.0 + 3.0 * kBeta * v * v);
      double dgelu = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      x.node()->grad[i] += o.grad[i] * dgelu;
    }
  });
  for (int64_t i = 0; i < x.size(); ++i) {
    double v = x.data()[i];
    out.node()->value[i] = 0.5 * v * (1.0 + std::tanh(kAlpha * (v + kBeta * v * v * v)));
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = make_op({1}, {a}, [a](Tensor::Node& o) {
    ensure_grad(*a.node());
    for (int64_t i = 0; i < a.size(); ++i) a.node()->grad[i] += o.grad[0];
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.node()->value[0] = s;
  return out;
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = make_op({1}, {a}, [a, inv](Tensor::Node& o) {
    ensure_grad(*a.node());
    for (int64_t i = 0; i < a.size(); ++i) a.node()->grad[i] += o.grad[0] * inv;
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.node()->value[0] = s * inv;
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
  check_rank2(logits, "cross_entropy_rows");
  const int m = logits.dim(0), n = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    throw std::invalid_argument("cross_entropy_rows: one target per row required");
  int active = 0;
  for (int t : targets) {
    if (t >= n) throw std::invalid_argument("cross_entropy_rows: target out of range");
    if (t >= 0) ++active;
  }
  if (active == 0) throw std::invalid_argument("cross_entropy_rows: no active rows");
  const double inv = 1.0 / active;

  auto probs = std::make_shared<std::vector<double>>(static_cast<int64_t>(m) * n);
  Tensor out = make_op({1}, {logits}, [logits, targets, probs, m, n, inv](Tensor::Node& o) {
    ensure_grad(*logits.node());
    for (int i = 0; i < m; ++i) {
      if (targets[i] < 0) continue;
      const double* p = probs->data() + static_cast<int64_t>(i) * n;
      double* g = logits.node()->grad.data() + static_cast<int64_t>(i) * n;
      const double go = o.grad[0] * inv;
      for (int j = 0; j < n; ++j) g[j] += go * p[j];
      g[targets[i]] -= go;
    }
  });
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* xr = logits.data().data() + static_cast<int64_t>(i) * n;
    double* pr = probs->data() + static_cast<int64_t>(i) * n;
    softmax_row_inplace(xr, pr, n);
    if (targets[i] >= 0) loss -= std::log(std::max(pr[targets[i]], 1e-300));
  }
  out.node()->value[0] = loss * inv;
  return out;
}

Tensor kl_teacher_rows(const Tensor& teacher_probs, const Tensor& student_logits,
                       const std::vector<int>& rows) {
  check_rank2(teacher_probs, "kl_teacher_rows");
  check_rank2(student_logits, "kl_teacher_rows");
  check_same_shape(teacher_probs, student_logits, "kl_teacher_rows");
  if (rows.empty()) throw std::invalid_argument("kl_teacher_rows: no rows selected");
  const int m = student_logits.dim(0), n = student_logits.dim(1);
  for (int r : rows)
    if (r < 0 || r >= m) throw std::invalid_argument("kl_teacher_rows: row out of range");
  const double inv = 1.0 / static_cast<double>(rows.size());

  auto sprobs = std::make_shared<std::vector<double>>(static_cast<int64_t>(rows.size()) * n);
  Tensor out = make_op({1}, {student_logits},
                       [student_logits, teacher_probs, rows, sprobs, n, inv](Tensor::Node& o) {
    ensure_grad(*student_logits.node());
    for (size_t ri = 0; ri < rows.size(); ++ri) {
      const int r = rows[ri];
      const double* q = sprobs->data() + static_cast<int64_t>(ri) * n;
      const double* p = teacher_probs.data().data() + static_cast<int64_t>(r) * n;
      double* g = student_logits.node()->grad.data() + static_cast<int64_t>(r) * n;
      const double go = o.grad[0] * inv;
      double sp = 0.0;
      for (int j = 0; j < n; ++j) sp += p[j];
      // d/dz_j of sum_v p_v (log p_v - log_softmax(z)_v) = sp * q_j - p_j
      for (int j = 0; j < n; ++j) g[j] += go * (sp * q[j] - p[j]);
    }
  });
  double loss = 0.0;
  for (size_t ri = 0; ri < rows.size(); ++ri) {
    const int r = rows[ri];
    const double* z = student_logits.data().data() + static_cast<int64_t>(r) * n;
    double* q = sprobs->data() + static_cast<int64_t>(ri) * n;
    softmax_row_inplace(z, q, n);
    double mx = z[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, z[j]);
    double zsum = 0.0;
    for (int j = 0; j < n; ++j) zsum += std::exp(z[j] - mx);
    const double lz = mx + std::log(zsum);
    const double* p = teacher_probs.data().data() + static_cast<int64_t>(r) * n;
    for (int j = 0; j < n; ++j) {
      if (p[j] <= 0.0) continue;  // 0 * log 0 = 0
      loss += p[j] * (std::log(p[j]) - (z[j] - lz));
    }
  }
  out.node()->value[0] = loss * inv;
  return out;
}

}  // namespace adjust
