#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xformparser/common.hpp"
#include "xformparser/rng.hpp"

namespace xfp::ad {

// Dense row-major array of doubles. Training in 32-bit mode keeps every
// persistent value quantized to float precision (see quantize_f32), which
// makes float checkpoints lossless while all arithmetic runs in doubles.
struct Array {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(std::vector<int64_t> s);
  Array(std::vector<int64_t> s, std::vector<double> d);

  static Array zeros(std::vector<int64_t> s) { return Array(std::move(s)); }
  static Array scalar(double v) { return Array({1}, {v}); }

  int64_t numel() const;
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool same_shape(const Array& o) const { return shape == o.shape; }

  double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  void fill(double v);
  bool all_finite() const;
  std::string shape_str() const;
};

struct Parameter {
  std::string name;
  Array value;
  Array grad;

  void zero_grad() { grad.fill(0.0); }
};

// Owns parameters in registration order; order doubles as the checkpoint
// payload order and the initialization draw order.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, std::vector<int64_t> shape);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  size_t size() const { return params_.size(); }
  void zero_grads();
  int64_t total_values() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Dynamic tape. One forward pass records nodes in execution order; backward
// walks them in reverse. Parameter leaves accumulate straight into
// Parameter::grad so embedding tables are never copied per step.
class Tape {
 public:
  Var input(Array v);
  Var leaf(Parameter& p);

  const Array& val(Var v) const;
  Array& grad(Var v);  // allocates zeros on first touch

  void backward(Var loss);
  size_t size() const { return nodes_.size(); }

  // Kernel plumbing.
  Var emplace(Array v, std::function<void(Tape&, Var)> back);
  bool finite_checks = false;  // scan every kernel output when set
  uint64_t nonfinite_outputs = 0;

 private:
  struct Node {
    Array val;
    Parameter* param = nullptr;
    Array grad;
    bool grad_alloc = false;
    std::function<void(Tape&, Var)> back;
  };
  std::vector<Node> nodes_;
};

// ---- kernels (forward + exact reverse-mode backward) ----

Var matmul(Tape& t, Var a, Var b);                       // [m,k]x[k,n]
Var matmul_nt(Tape& t, Var a, Var b);                    // [m,k]x[n,k]ᵀ
Var affine(Tape& t, Var x, Var w, Var b);                // x·Wᵀ + b, W is [out,in]
Var add(Tape& t, Var a, Var b);                          // same shape
Var add_list(Tape& t, std::span<const Var> vs);          // n-ary same-shape add
Var mul(Tape& t, Var a, Var b);                          // elementwise
Var scale(Tape& t, Var a, double c);
Var concat_cols(Tape& t, std::span<const Var> vs);       // along last axis
Var stack_rows(Tape& t, std::span<const Var> vs);        // 1-D vectors -> matrix
Var select_rows(Tape& t, Var m, std::vector<int64_t> idx);
Var group_mean_rows(Tape& t, Var m, std::vector<std::vector<int64_t>> groups);
Var slice_cols(Tape& t, Var m, int64_t start, int64_t len);
Var reshape(Tape& t, Var v, std::vector<int64_t> shape);
Var softmax(Tape& t, Var v);                             // over last axis
Var tanh_(Tape& t, Var v);
Var sigmoid_(Tape& t, Var v);
Var relu_(Tape& t, Var v);
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
Var dropout(Tape& t, Var v, double rate, rng::Xoshiro256* g);  // g==nullptr: identity

enum class Reduction { Mean, Sum };
Var cross_entropy(Tape& t, Var logits, std::vector<int64_t> targets, Reduction r);

// Single LSTM step (gate order i,f,g,o). Composite of primitive kernels, so
// its gradients are exact by construction.
std::pair<Var, Var> lstm_cell(Tape& t, Var x, Var h, Var c, Var w_ih, Var w_hh, Var bias);

// logits[p][c] = headᵀ·U[c]·tail + W[c]·concat(head,tail) + b[c]
// heads:[nh,d] tails:[nt,d] u:[C,d,d] w:[C,2d] b:[C]; pairs index into rows.
Var biaffine_pair_logits(Tape& t, Var heads, Var tails, Var u, Var w, Var b,
                         std::span<const std::pair<int64_t, int64_t>> pairs);

// ---- verification & numeric policy ----

// Central finite differences against the analytic gradients left in params by
// loss(true). loss(false) must evaluate the same deterministic scalar without
// touching grads. Returns max over sampled coordinates of
// |analytic-numeric| / max(1e-8, |analytic|+|numeric|).
double grad_check(const std::function<double(bool)>& loss,
                  std::span<Parameter* const> params, double eps, uint64_t seed,
                  int min_coords = 50);

void glorot_init(Array& a, int64_t fan_in, int64_t fan_out, rng::Xoshiro256& g);

// Rounds every value to the nearest float; 32-bit training mode applies this
// to all persistent state so float checkpoints round-trip bit-exactly.
void quantize_f32(Array& a);

}  // namespace xfp::ad
