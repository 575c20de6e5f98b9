#include "xformparser/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace xfp::ad {

namespace {

int64_t shape_numel(const std::vector<int64_t>& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return s.empty() ? 0 : n;
}

[[noreturn]] void contract_fail(const std::string& op, const std::string& detail) {
  throw Error(ErrKind::Contract, op + ": " + detail);
}

void require(bool ok, const std::string& op, const std::string& detail) {
  if (!ok) contract_fail(op, detail);
}

// c[m,n] += a[m,k] * b[k,n]
void mm_nn_acc(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double s = ar[p];
      if (s == 0.0) continue;
      const double* br = b + p * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += s * br[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void mm_nt_acc(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += ar[p] * br[p];
      cr[j] += s;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_tn_acc(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    const double* br = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double s = ar[p];
      if (s == 0.0) continue;
      double* cr = c + p * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += s * br[j];
    }
  }
}

}  // namespace

Array::Array(std::vector<int64_t> s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

Array::Array(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    contract_fail("Array", "shape " + shape_str() + " does not match data length " +
                               std::to_string(data.size()));
}

int64_t Array::numel() const { return static_cast<int64_t>(data.size()); }

void Array::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool Array::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Array::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

Parameter& ParameterStore::create(const std::string& name, std::vector<int64_t> shape) {
  if (find(name)) contract_fail("ParameterStore::create", "duplicate parameter name " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Array(shape);
  p->grad = Array(shape);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

int64_t ParameterStore::total_values() const {
  int64_t n = 0;
  for (auto& p : params_) n += p->value.numel();
  return n;
}

Var Tape::input(Array v) {
  Node n;
  n.val = std::move(v);
  nodes_.push_back(std::move(n));
  return {static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Parameter& p) {
  Node n;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::emplace(Array v, std::function<void(Tape&, Var)> back) {
  if (finite_checks && !v.all_finite()) ++nonfinite_outputs;
  Node n;
  n.val = std::move(v);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {static_cast<int32_t>(nodes_.size() - 1)};
}

const Array& Tape::val(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  return n.param ? n.param->value : n.val;
}

Array& Tape::grad(Var v) {
  Node& n = nodes_[static_cast<size_t>(v.id)];
  if (n.param) return n.param->grad;
  if (!n.grad_alloc) {
    n.grad = Array(n.val.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  require(loss.valid() && val(loss).numel() == 1, "backward", "loss must be a scalar node");
  grad(loss).data[0] = 1.0;
  for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.back && n.grad_alloc) n.back(*this, Var{i});
  }
}

// ---- kernels ----

Var matmul(Tape& t, Var a, Var b) {
  const Array& av = t.val(a);
  const Array& bv = t.val(b);
  require(av.shape.size() == 2 && bv.shape.size() == 2 && av.shape[1] == bv.shape[0], "matmul",
          "incompatible shapes " + av.shape_str() + " and " + bv.shape_str());
  int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Array out({m, n});
  mm_nn_acc(out.data.data(), av.data.data(), bv.data.data(), m, k, n);
  return t.emplace(std::move(out), [a, b, m, k, n](Tape& tp, Var self) {
    const double* g = tp.grad(self).data.data();
    mm_nt_acc(tp.grad(a).data.data(), g, tp.val(b).data.data(), m, n, k);
    mm_tn_acc(tp.grad(b).data.data(), tp.val(a).data.data(), g, m, k, n);
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Array& av = t.val(a);
  const Array& bv = t.val(b);
  require(av.shape.size() == 2 && bv.shape.size() == 2 && av.shape[1] == bv.shape[1], "matmul_nt",
          "incompatible shapes " + av.shape_str() + " and " + bv.shape_str());
  int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[0];
  Array out({m, n});
  mm_nt_acc(out.data.data(), av.data.data(), bv.data.data(), m, k, n);
  return t.emplace(std::move(out), [a, b, m, k, n](Tape& tp, Var self) {
    const double* g = tp.grad(self).data.data();
    mm_nn_acc(tp.grad(a).data.data(), g, tp.val(b).data.data(), m, n, k);
    mm_tn_acc(tp.grad(b).data.data(), g, tp.val(a).data.data(), m, n, k);
  });
}

Var affine(Tape& t, Var x, Var w, Var b) {
  const Array& xv = t.val(x);
  const Array& wv = t.val(w);
  const Array& bv = t.val(b);
  require(xv.shape.size() == 2 && wv.shape.size() == 2 && xv.shape[1] == wv.shape[1] &&
              bv.numel() == wv.shape[0],
          "affine",
          "incompatible shapes " + xv.shape_str() + ", " + wv.shape_str() + ", " + bv.shape_str());
  int64_t m = xv.shape[0], in = xv.shape[1], out_dim = wv.shape[0];
  Array out({m, out_dim});
  for (int64_t i = 0; i < m; ++i)
    std::memcpy(out.data.data() + i * out_dim, bv.data.data(), sizeof(double) * static_cast<size_t>(out_dim));
  mm_nt_acc(out.data.data(), xv.data.data(), wv.data.data(), m, in, out_dim);
  return t.emplace(std::move(out), [x, w, b, m, in, out_dim](Tape& tp, Var self) {
    const double* g = tp.grad(self).data.data();
    mm_nn_acc(tp.grad(x).data.data(), g, tp.val(w).data.data(), m, out_dim, in);
    mm_tn_acc(tp.grad(w).data.data(), g, tp.val(x).data.data(), m, out_dim, in);
    double* db = tp.grad(b).data.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < out_dim; ++j) db[j] += g[i * out_dim + j];
  });
}

Var add(Tape& t, Var a, Var b) {
  const Array& av = t.val(a);
  const Array& bv = t.val(b);
  require(av.same_shape(bv), "add", "shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Array out = av;
  for (int64_t i = 0; i < out.numel(); ++i) out.data[static_cast<size_t>(i)] += bv.at(i);
  return t.emplace(std::move(out), [a, b](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    Array& ga = tp.grad(a);
    Array& gb = tp.grad(b);
    for (int64_t i = 0; i < g.numel(); ++i) {
      ga.at(i) += g.at(i);
      gb.at(i) += g.at(i);
    }
  });
}

Var add_list(Tape& t, std::span<const Var> vs) {
  require(!vs.empty(), "add_list", "empty operand list");
  Array out = t.val(vs[0]);
  for (size_t k = 1; k < vs.size(); ++k) {
    const Array& v = t.val(vs[k]);
    require(v.same_shape(out), "add_list", "shape mismatch " + v.shape_str() + " vs " + out.shape_str());
    for (int64_t i = 0; i < out.numel(); ++i) out.at(i) += v.at(i);
  }
  std::vector<Var> ops(vs.begin(), vs.end());
  return t.emplace(std::move(out), [ops](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    for (Var v : ops) {
      Array& gv = tp.grad(v);
      for (int64_t i = 0; i < g.numel(); ++i) gv.at(i) += g.at(i);
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Array& av = t.val(a);
  const Array& bv = t.val(b);
  require(av.same_shape(bv), "mul", "shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Array out = av;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) *= bv.at(i);
  return t.emplace(std::move(out), [a, b](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    const Array& av2 = tp.val(a);
    const Array& bv2 = tp.val(b);
    Array& ga = tp.grad(a);
    Array& gb = tp.grad(b);
    for (int64_t i = 0; i < g.numel(); ++i) {
      ga.at(i) += g.at(i) * bv2.at(i);
      gb.at(i) += g.at(i) * av2.at(i);
    }
  });
}

Var scale(Tape& t, Var a, double c) {
  Array out = t.val(a);
  for (auto& v : out.data) v *= c;
  return t.emplace(std::move(out), [a, c](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    Array& ga = tp.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += c * g.at(i);
  });
}

Var concat_cols(Tape& t, std::span<const Var> vs) {
  require(!vs.empty(), "concat_cols", "empty operand list");
  size_t rank = t.val(vs[0]).shape.size();
  require(rank == 1 || rank == 2, "concat_cols", "operands must be 1-D or 2-D");
  int64_t rows = rank == 1 ? 1 : t.val(vs[0]).shape[0];
  int64_t total = 0;
  for (Var v : vs) {
    const Array& a = t.val(v);
    require(a.shape.size() == rank && (rank == 1 || a.shape[0] == rows), "concat_cols",
            "row mismatch " + a.shape_str());
    total += rank == 1 ? a.shape[0] : a.shape[1];
  }
  Array out(rank == 1 ? std::vector<int64_t>{total} : std::vector<int64_t>{rows, total});
  int64_t off = 0;
  for (Var v : vs) {
    const Array& a = t.val(v);
    int64_t w = rank == 1 ? a.shape[0] : a.shape[1];
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(out.data.data() + r * total + off, a.data.data() + r * w,
                  sizeof(double) * static_cast<size_t>(w));
    off += w;
  }
  std::vector<Var> ops(vs.begin(), vs.end());
  return t.emplace(std::move(out), [ops, rows, total, rank](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    int64_t off2 = 0;
    for (Var v : ops) {
      Array& gv = tp.grad(v);
      int64_t w = rank == 1 ? gv.shape[0] : gv.shape[1];
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < w; ++j) gv.data[static_cast<size_t>(r * w + j)] += g.at(r * total + off2 + j);
      off2 += w;
    }
  });
}

Var stack_rows(Tape& t, std::span<const Var> vs) {
  require(!vs.empty(), "stack_rows", "empty operand list");
  int64_t n = t.val(vs[0]).numel();
  for (Var v : vs)
    require(t.val(v).shape.size() == 1 && t.val(v).numel() == n, "stack_rows",
            "operands must be equal-length vectors");
  Array out({static_cast<int64_t>(vs.size()), n});
  for (size_t r = 0; r < vs.size(); ++r)
    std::memcpy(out.data.data() + static_cast<int64_t>(r) * n, t.val(vs[r]).data.data(),
                sizeof(double) * static_cast<size_t>(n));
  std::vector<Var> ops(vs.begin(), vs.end());
  return t.emplace(std::move(out), [ops, n](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    for (size_t r = 0; r < ops.size(); ++r) {
      Array& gv = tp.grad(ops[r]);
      for (int64_t j = 0; j < n; ++j) gv.at(j) += g.at(static_cast<int64_t>(r) * n + j);
    }
  });
}

Var select_rows(Tape& t, Var m, std::vector<int64_t> idx) {
  const Array& mv = t.val(m);
  require(mv.shape.size() == 2, "select_rows", "operand must be 2-D, got " + mv.shape_str());
  int64_t cols = mv.shape[1];
  for (int64_t i : idx)
    require(i >= 0 && i < mv.shape[0], "select_rows", "row index " + std::to_string(i) + " out of range");
  Array out({static_cast<int64_t>(idx.size()), cols});
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data.data() + static_cast<int64_t>(r) * cols, mv.data.data() + idx[r] * cols,
                sizeof(double) * static_cast<size_t>(cols));
  return t.emplace(std::move(out), [m, idx = std::move(idx), cols](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    Array& gm = tp.grad(m);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t j = 0; j < cols; ++j)
        gm.data[static_cast<size_t>(idx[r] * cols + j)] += g.at(static_cast<int64_t>(r) * cols + j);
  });
}

Var group_mean_rows(Tape& t, Var m, std::vector<std::vector<int64_t>> groups) {
  const Array& mv = t.val(m);
  require(mv.shape.size() == 2, "group_mean_rows", "operand must be 2-D, got " + mv.shape_str());
  int64_t cols = mv.shape[1];
  Array out({static_cast<int64_t>(groups.size()), cols});
  std::vector<double> acc(static_cast<size_t>(cols));
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    require(!groups[gi].empty(), "group_mean_rows", "empty group " + std::to_string(gi));
    for (int64_t r : groups[gi])
      require(r >= 0 && r < mv.shape[0], "group_mean_rows", "row index out of range");
    // First-row-centered mean: pooling n copies of a row reproduces it exactly.
    int64_t r0 = groups[gi][0];
    double* orow = out.data.data() + static_cast<int64_t>(gi) * cols;
    std::memcpy(orow, mv.data.data() + r0 * cols, sizeof(double) * static_cast<size_t>(cols));
    if (groups[gi].size() > 1) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (size_t k = 1; k < groups[gi].size(); ++k) {
        const double* row = mv.data.data() + groups[gi][k] * cols;
        for (int64_t j = 0; j < cols; ++j) acc[static_cast<size_t>(j)] += row[j] - orow[j];
      }
      double inv = 1.0 / static_cast<double>(groups[gi].size());
      for (int64_t j = 0; j < cols; ++j) orow[j] += acc[static_cast<size_t>(j)] * inv;
    }
  }
  return t.emplace(std::move(out), [m, groups = std::move(groups), cols](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    Array& gm = tp.grad(m);
    for (size_t gi = 0; gi < groups.size(); ++gi) {
      double inv = 1.0 / static_cast<double>(groups[gi].size());
      for (int64_t r : groups[gi])
        for (int64_t j = 0; j < cols; ++j)
          gm.data[static_cast<size_t>(r * cols + j)] += inv * g.at(static_cast<int64_t>(gi), j);
    }
  });
}

Var slice_cols(Tape& t, Var m, int64_t start, int64_t len) {
  const Array& mv = t.val(m);
  require(mv.shape.size() == 2 && start >= 0 && len >= 0 && start + len <= mv.shape[1], "slice_cols",
          "bad slice [" + std::to_string(start) + "," + std::to_string(start + len) + ") of " +
              mv.shape_str());
  int64_t rows = mv.shape[0], cols = mv.shape[1];
  Array out({rows, len});
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(out.data.data() + r * len, mv.data.data() + r * cols + start,
                sizeof(double) * static_cast<size_t>(len));
  return t.emplace(std::move(out), [m, start, len, cols](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    Array& gm = tp.grad(m);
    int64_t rows2 = g.shape[0];
    for (int64_t r = 0; r < rows2; ++r)
      for (int64_t j = 0; j < len; ++j)
        gm.data[static_cast<size_t>(r * cols + start + j)] += g.at(r, j);
  });
}

Var reshape(Tape& t, Var v, std::vector<int64_t> shape) {
  const Array& av = t.val(v);
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  require(!shape.empty() && n == av.numel(), "reshape",
          "cannot reshape " + av.shape_str() + " to requested extents");
  Array out(std::move(shape), av.data);
  return t.emplace(std::move(out), [v](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    Array& gv = tp.grad(v);
    for (int64_t i = 0; i < g.numel(); ++i) gv.at(i) += g.at(i);
  });
}

namespace {
void softmax_rows_raw(const double* z, double* p, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* zr = z + r * cols;
    double* pr = p + r * cols;
    double mx = zr[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, zr[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      pr[j] = std::exp(zr[j] - mx);
      sum += pr[j];
    }
    double inv = 1.0 / sum;
    for (int64_t j = 0; j < cols; ++j) pr[j] *= inv;
  }
}
}  // namespace

Var softmax(Tape& t, Var v) {
  const Array& zv = t.val(v);
  require(zv.shape.size() == 1 || zv.shape.size() == 2, "softmax", "operand must be 1-D or 2-D");
  int64_t rows = zv.shape.size() == 1 ? 1 : zv.shape[0];
  int64_t cols = zv.shape.size() == 1 ? zv.shape[0] : zv.shape[1];
  Array out(zv.shape);
  softmax_rows_raw(zv.data.data(), out.data.data(), rows, cols);
  return t.emplace(std::move(out), [v, rows, cols](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    const Array& p = tp.val(self);
    Array& gv = tp.grad(v);
    for (int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int64_t j = 0; j < cols; ++j) dot += g.at(r * cols + j) * p.at(r * cols + j);
      for (int64_t j = 0; j < cols; ++j)
        gv.at(r * cols + j) += p.at(r * cols + j) * (g.at(r * cols + j) - dot);
    }
  });
}

Var tanh_(Tape& t, Var v) {
  Array out = t.val(v);
  for (auto& x : out.data) x = std::tanh(x);
  return t.emplace(std::move(out), [v](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    const Array& y = tp.val(self);
    Array& gv = tp.grad(v);
    for (int64_t i = 0; i < g.numel(); ++i) gv.at(i) += g.at(i) * (1.0 - y.at(i) * y.at(i));
  });
}

Var sigmoid_(Tape& t, Var v) {
  Array out = t.val(v);
  for (auto& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
  return t.emplace(std::move(out), [v](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    const Array& y = tp.val(self);
    Array& gv = tp.grad(v);
    for (int64_t i = 0; i < g.numel(); ++i) gv.at(i) += g.at(i) * y.at(i) * (1.0 - y.at(i));
  });
}

Var relu_(Tape& t, Var v) {
  Array out = t.val(v);
  for (auto& x : out.data) x = x > 0.0 ? x : 0.0;
  return t.emplace(std::move(out), [v](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    const Array& x = tp.val(v);
    Array& gv = tp.grad(v);
    for (int64_t i = 0; i < g.numel(); ++i)
      if (x.at(i) > 0.0) gv.at(i) += g.at(i);
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Array& xv = t.val(x);
  const Array& gv = t.val(gamma);
  const Array& bv = t.val(beta);
  require(xv.shape.size() == 2, "layer_norm", "input must be 2-D, got " + xv.shape_str());
  int64_t rows = xv.shape[0], cols = xv.shape[1];
  require(gv.numel() == cols && bv.numel() == cols, "layer_norm", "gamma/beta must have width " +
                                                                      std::to_string(cols));
  Array out({rows, cols});
  std::vector<double> inv_std(static_cast<size_t>(rows));
  std::vector<double> xhat(static_cast<size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int64_t j = 0; j < cols; ++j) mean += xv.at(r, j);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      double d = xv.at(r, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < cols; ++j) {
      double xh = (xv.at(r, j) - mean) * is;
      xhat[static_cast<size_t>(r * cols + j)] = xh;
      out.at(r, j) = gv.at(j) * xh + bv.at(j);
    }
  }
  return t.emplace(std::move(out), [x, gamma, beta, rows, cols, inv_std = std::move(inv_std),
                                    xhat = std::move(xhat)](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    const Array& gam = tp.val(gamma);
    Array& gx = tp.grad(x);
    Array& ggam = tp.grad(gamma);
    Array& gbet = tp.grad(beta);
    for (int64_t r = 0; r < rows; ++r) {
      double sum_gy = 0.0, sum_gyx = 0.0;
      for (int64_t j = 0; j < cols; ++j) {
        double gyj = g.at(r, j) * gam.at(j);
        double xh = xhat[static_cast<size_t>(r * cols + j)];
        sum_gy += gyj;
        sum_gyx += gyj * xh;
        ggam.at(j) += g.at(r, j) * xh;
        gbet.at(j) += g.at(r, j);
      }
      double inv_n = 1.0 / static_cast<double>(cols);
      for (int64_t j = 0; j < cols; ++j) {
        double gyj = g.at(r, j) * gam.at(j);
        double xh = xhat[static_cast<size_t>(r * cols + j)];
        gx.at(r, j) += inv_std[static_cast<size_t>(r)] * (gyj - inv_n * sum_gy - inv_n * xh * sum_gyx);
      }
    }
  });
}

Var dropout(Tape& t, Var v, double rate, rng::Xoshiro256* g) {
  if (g == nullptr || rate <= 0.0) return v;
  require(rate < 1.0, "dropout", "rate must be < 1");
  const Array& xv = t.val(v);
  double keep = 1.0 - rate;
  double inv_keep = 1.0 / keep;
  std::vector<double> mask(static_cast<size_t>(xv.numel()));
  Array out = xv;
  for (int64_t i = 0; i < xv.numel(); ++i) {
    double m = g->uniform() < keep ? inv_keep : 0.0;
    mask[static_cast<size_t>(i)] = m;
    out.at(i) *= m;
  }
  return t.emplace(std::move(out), [v, mask = std::move(mask)](Tape& tp, Var self) {
    const Array& gr = tp.grad(self);
    Array& gv = tp.grad(v);
    for (int64_t i = 0; i < gr.numel(); ++i) gv.at(i) += gr.at(i) * mask[static_cast<size_t>(i)];
  });
}

Var cross_entropy(Tape& t, Var logits, std::vector<int64_t> targets, Reduction r) {
  const Array& zv = t.val(logits);
  require(zv.shape.size() == 2, "cross_entropy", "logits must be 2-D, got " + zv.shape_str());
  int64_t rows = zv.shape[0], cols = zv.shape[1];
  require(static_cast<int64_t>(targets.size()) == rows, "cross_entropy",
          "targets length " + std::to_string(targets.size()) + " vs rows " + std::to_string(rows));
  for (int64_t tv : targets)
    require(tv >= 0 && tv < cols, "cross_entropy", "target index " + std::to_string(tv) + " out of range");
  std::vector<double> probs(static_cast<size_t>(rows * cols));
  softmax_rows_raw(zv.data.data(), probs.data(), rows, cols);
  double loss = 0.0;
  for (int64_t i = 0; i < rows; ++i) {
    const double* zr = zv.data.data() + i * cols;
    double mx = zr[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, zr[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) sum += std::exp(zr[j] - mx);
    loss += std::log(sum) + mx - zr[targets[static_cast<size_t>(i)]];
  }
  double scale_f = r == Reduction::Mean ? 1.0 / static_cast<double>(rows) : 1.0;
  loss *= scale_f;
  return t.emplace(Array::scalar(loss), [logits, targets = std::move(targets), probs = std::move(probs),
                                         rows, cols, scale_f](Tape& tp, Var self) {
    double g = tp.grad(self).data[0];
    Array& gz = tp.grad(logits);
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < cols; ++j)
        gz.at(i, j) += g * scale_f * probs[static_cast<size_t>(i * cols + j)];
      gz.at(i, targets[static_cast<size_t>(i)]) -= g * scale_f;
    }
  });
}

std::pair<Var, Var> lstm_cell(Tape& t, Var x, Var h, Var c, Var w_ih, Var w_hh, Var bias) {
  int64_t hidden = t.val(c).numel();
  require(t.val(w_ih).shape[0] == 4 * hidden && t.val(w_hh).shape[0] == 4 * hidden &&
              t.val(bias).numel() == 4 * hidden,
          "lstm_cell", "weight shapes do not match hidden size " + std::to_string(hidden));
  Var gates = add(t, affine(t, x, w_ih, bias), matmul_nt(t, h, w_hh));
  Var gi = sigmoid_(t, slice_cols(t, gates, 0, hidden));
  Var gf = sigmoid_(t, slice_cols(t, gates, hidden, hidden));
  Var gg = tanh_(t, slice_cols(t, gates, 2 * hidden, hidden));
  Var go = sigmoid_(t, slice_cols(t, gates, 3 * hidden, hidden));
  Var c_next = add(t, mul(t, gf, c), mul(t, gi, gg));
  Var h_next = mul(t, go, tanh_(t, c_next));
  return {h_next, c_next};
}

Var biaffine_pair_logits(Tape& t, Var heads, Var tails, Var u, Var w, Var b,
                         std::span<const std::pair<int64_t, int64_t>> pairs) {
  const Array& hv = t.val(heads);
  const Array& tv = t.val(tails);
  const Array& uv = t.val(u);
  const Array& wv = t.val(w);
  const Array& bv = t.val(b);
  require(hv.shape.size() == 2 && tv.shape.size() == 2 && hv.shape[1] == tv.shape[1],
          "biaffine_pair_logits", "head/tail dims differ: " + hv.shape_str() + " vs " + tv.shape_str());
  int64_t d = hv.shape[1];
  require(uv.shape == std::vector<int64_t>({2, d, d}), "biaffine_pair_logits",
          "U must be [2," + std::to_string(d) + "," + std::to_string(d) + "], got " + uv.shape_str());
  require(wv.shape == std::vector<int64_t>({2, 2 * d}) && bv.numel() == 2, "biaffine_pair_logits",
          "W must be [2,2d] and b length 2");
  int64_t np = static_cast<int64_t>(pairs.size());
  for (auto& pr : pairs)
    require(pr.first >= 0 && pr.first < hv.shape[0] && pr.second >= 0 && pr.second < tv.shape[0],
            "biaffine_pair_logits", "pair index out of range");
  Array out({np, 2});
  // Per-tail precompute of U[c]·tail keeps the pair loop cheap.
  int64_t nt = tv.shape[0];
  std::vector<double> ut(static_cast<size_t>(2 * nt * d), 0.0);
  for (int64_t c = 0; c < 2; ++c) {
    const double* uc = uv.data.data() + c * d * d;
    for (int64_t j = 0; j < nt; ++j) {
      const double* tr = tv.data.data() + j * d;
      double* dst = ut.data() + (c * nt + j) * d;
      for (int64_t a = 0; a < d; ++a) {
        const double* ua = uc + a * d;
        double s = 0.0;
        for (int64_t k = 0; k < d; ++k) s += ua[k] * tr[k];
        dst[a] = s;
      }
    }
  }
  for (int64_t p = 0; p < np; ++p) {
    int64_t i = pairs[static_cast<size_t>(p)].first;
    int64_t j = pairs[static_cast<size_t>(p)].second;
    const double* hr = hv.data.data() + i * d;
    const double* tr = tv.data.data() + j * d;
    for (int64_t c = 0; c < 2; ++c) {
      const double* utj = ut.data() + (c * nt + j) * d;
      const double* wc = wv.data.data() + c * 2 * d;
      double s = bv.at(c);
      for (int64_t a = 0; a < d; ++a) s += hr[a] * (utj[a] + wc[a]);
      for (int64_t k = 0; k < d; ++k) s += tr[k] * wc[d + k];
      out.at(p, c) = s;
    }
  }
  std::vector<std::pair<int64_t, int64_t>> prs(pairs.begin(), pairs.end());
  return t.emplace(std::move(out), [heads, tails, u, w, b, prs = std::move(prs), d](Tape& tp, Var self) {
    const Array& g = tp.grad(self);
    const Array& hv2 = tp.val(heads);
    const Array& tv2 = tp.val(tails);
    const Array& uv2 = tp.val(u);
    const Array& wv2 = tp.val(w);
    Array& gh = tp.grad(heads);
    Array& gt = tp.grad(tails);
    Array& gu = tp.grad(u);
    Array& gw = tp.grad(w);
    Array& gb = tp.grad(b);
    for (size_t p = 0; p < prs.size(); ++p) {
      int64_t i = prs[p].first, j = prs[p].second;
      const double* hr = hv2.data.data() + i * d;
      const double* tr = tv2.data.data() + j * d;
      for (int64_t c = 0; c < 2; ++c) {
        double gc = g.at(static_cast<int64_t>(p), c);
        if (gc == 0.0) continue;
        const double* uc = uv2.data.data() + c * d * d;
        const double* wc = wv2.data.data() + c * 2 * d;
        double* guc = gu.data.data() + c * d * d;
        double* gwc = gw.data.data() + c * 2 * d;
        gb.at(c) += gc;
        for (int64_t a = 0; a < d; ++a) {
          const double* ua = uc + a * d;
          double* gua = guc + a * d;
          double ha = hr[a];
          double acc = wc[a];
          for (int64_t k = 0; k < d; ++k) {
            acc += ua[k] * tr[k];
            gua[k] += gc * ha * tr[k];
          }
          gh.at(i, a) += gc * acc;
          gwc[a] += gc * ha;
        }
        for (int64_t k = 0; k < d; ++k) {
          double acc = wc[d + k];
          for (int64_t a = 0; a < d; ++a) acc += hr[a] * uc[a * d + k];
          gt.at(j, k) += gc * acc;
          gwc[d + k] += gc * tr[k];
        }
      }
    }
  });
}

double grad_check(const std::function<double(bool)>& loss, std::span<Parameter* const> params,
                  double eps, uint64_t seed, int min_coords) {
  for (Parameter* p : params) p->zero_grad();
  double base = loss(true);
  if (!std::isfinite(base)) throw Error(ErrKind::Contract, "grad_check: loss is not finite");

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  int64_t total = 0;
  for (Parameter* p : params) {
    analytic.push_back(p->grad.data);
    total += p->value.numel();
  }

  // Sample coordinates proportionally to tensor size, at least one per tensor.
  rng::Xoshiro256 g(seed);
  std::vector<std::pair<size_t, int64_t>> coords;
  if (total <= min_coords) {
    for (size_t pi = 0; pi < params.size(); ++pi)
      for (int64_t i = 0; i < params[pi]->value.numel(); ++i) coords.emplace_back(pi, i);
  } else {
    for (size_t pi = 0; pi < params.size(); ++pi) {
      int64_t n = params[pi]->value.numel();
      int64_t want = std::max<int64_t>(1, (min_coords * n + total - 1) / total);
      want = std::min(want, n);
      for (int64_t k = 0; k < want; ++k) coords.emplace_back(pi, static_cast<int64_t>(g.below(static_cast<uint64_t>(n))));
    }
    while (static_cast<int>(coords.size()) < min_coords) {
      size_t pi = static_cast<size_t>(g.below(params.size()));
      int64_t n = params[pi]->value.numel();
      coords.emplace_back(pi, static_cast<int64_t>(g.below(static_cast<uint64_t>(n))));
    }
  }

  double max_rel = 0.0;
  for (auto [pi, ci] : coords) {
    Parameter* p = params[pi];
    double orig = p->value.at(ci);
    p->value.at(ci) = orig + eps;
    double lp = loss(false);
    p->value.at(ci) = orig - eps;
    double lm = loss(false);
    p->value.at(ci) = orig;
    if (!std::isfinite(lp) || !std::isfinite(lm))
      throw Error(ErrKind::Contract, "grad_check: perturbed loss is not finite");
    double numeric = (lp - lm) / (2.0 * eps);
    double a = analytic[pi][static_cast<size_t>(ci)];
    double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

void glorot_init(Array& a, int64_t fan_in, int64_t fan_out, rng::Xoshiro256& g) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : a.data) v = g.uniform(-bound, bound);
}

void quantize_f32(Array& a) {
  for (auto& v : a.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace xfp::ad
