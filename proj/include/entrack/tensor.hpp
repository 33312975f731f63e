#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "entrack/rng.hpp"

namespace entrack {

// Dense row-major extents. Rank is 1 or 2 everywhere in this library; a
// scalar is represented as shape [1].
using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Primitive operations recorded on the tape. Shape rules are documented on
// the corresponding Tape methods.
enum class Op : int {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kAffine,
  kConcat,
  kSlice,
  kReshape,
  kTanh,
  kSigmoid,
  kSoftmax,
  kDot,
  kRows,
  kDropout,
  kNegLogPick,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kAffine: return "affine";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kReshape: return "reshape";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmax: return "softmax";
    case Op::kDot: return "dot";
    case Op::kRows: return "rows";
    case Op::kDropout: return "dropout";
    case Op::kNegLogPick: return "neg_log_pick";
  }
  return "?";
}

// Per-primitive arguments for the generic apply() entry point.
struct OpArgs {
  std::vector<int> indices;  // kRows: row ids; kNegLogPick: picked positions;
                             // kSlice: {lo, hi}; kReshape: target extents
  double scale = 1.0;        // kAffine: y = scale * x + shift
  double shift = 0.0;
  double rate = 0.0;         // kDropout
};

class Tape;

// Handle into a Tape node. Cheap to copy; values()/grad spans are
// invalidated by Tape::reset().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

  const Shape& shape() const;
  std::span<const double> values() const;
  bool requires_grad() const;
  double scalar() const;
  int64_t size() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Result of a backward pass: node id -> gradient buffer. Holds spans into
// the tape's gradient arena; valid until the next backward()/reset().
class GradientMap {
 public:
  GradientMap() = default;
  GradientMap(const Tape* tape, std::vector<int> leaves, uint64_t epoch)
      : tape_(tape), leaves_(std::move(leaves)), epoch_(epoch) {}

  // Ids of every requires-grad leaf, ascending.
  const std::vector<int>& leaf_ids() const { return leaves_; }

  std::span<const double> at(const Tensor& t) const;
  std::span<const double> at_id(int node_id) const;

 private:
  const Tape* tape_ = nullptr;
  std::vector<int> leaves_;
  uint64_t epoch_ = 0;
};

// Computation record for one define-by-run forward pass. Nodes are stored
// in creation order, which is a topological order by construction. The tape
// is rebuilt per training step; reset() keeps arena capacity.
//
// All values are double precision. Every forward op validates its input
// shapes (throwing std::invalid_argument naming both shapes) and rejects
// non-finite outputs (std::runtime_error).
class Tape {
 public:
  explicit Tape(uint64_t seed = 0) : rng_(seed) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves ---------------------------------------------------------

  Tensor leaf(const Shape& shape, std::span<const double> data,
              bool requires_grad) {
    check_shape_valid(shape);
    if (static_cast<int64_t>(data.size()) != numel(shape)) {
      throw std::invalid_argument(
          std::string("leaf: ") + std::to_string(data.size()) +
          " values do not fill shape " + shape_str(shape));
    }
    int id = new_node(Op::kLeaf, shape, requires_grad);
    std::copy(data.begin(), data.end(), values_.begin() + nodes_[id].val_off);
    finish_node(id);
    return Tensor(this, id);
  }

  Tensor leaf(const Shape& shape, const std::vector<double>& data,
              bool requires_grad) {
    return leaf(shape, std::span<const double>(data), requires_grad);
  }

  Tensor constant(const Shape& shape, double fill) {
    check_shape_valid(shape);
    int id = new_node(Op::kLeaf, shape, false);
    std::fill(values_.begin() + nodes_[id].val_off,
              values_.begin() + nodes_[id].val_off + nodes_[id].val_n, fill);
    finish_node(id);
    return Tensor(this, id);
  }

  Tensor scalar_value(double v) { return constant({1}, v); }

  // --- generic primitive application ----------------------------------

  // Records one primitive application. Equivalent to calling the named
  // wrapper for `op`; kept public so the record can be driven uniformly.
  Tensor apply(Op op, std::span<const Tensor> inputs, const OpArgs& args = {}) {
    switch (op) {
      case Op::kLeaf:
        throw std::invalid_argument("apply: leaf is not an applicable primitive");
      case Op::kMatmul: need(inputs, 2); return matmul(inputs[0], inputs[1]);
      case Op::kAdd: need(inputs, 2); return add(inputs[0], inputs[1]);
      case Op::kSub: need(inputs, 2); return sub(inputs[0], inputs[1]);
      case Op::kMul: need(inputs, 2); return mul(inputs[0], inputs[1]);
      case Op::kAffine: need(inputs, 1); return affine(inputs[0], args.scale, args.shift);
      case Op::kConcat: return concat(inputs);
      case Op::kSlice:
        need(inputs, 1);
        if (args.indices.size() != 2)
          throw std::invalid_argument("slice: expected {lo, hi} indices");
        return slice(inputs[0], args.indices[0], args.indices[1]);
      case Op::kReshape: need(inputs, 1); return reshape(inputs[0], Shape(args.indices.begin(), args.indices.end()));
      case Op::kTanh: need(inputs, 1); return tanh(inputs[0]);
      case Op::kSigmoid: need(inputs, 1); return sigmoid(inputs[0]);
      case Op::kSoftmax: need(inputs, 1); return softmax(inputs[0]);
      case Op::kDot: need(inputs, 2); return dot(inputs[0], inputs[1]);
      case Op::kRows: need(inputs, 1); return rows(inputs[0], args.indices);
      case Op::kDropout: need(inputs, 1); return dropout(inputs[0], args.rate);
      case Op::kNegLogPick: need(inputs, 1); return neg_log_pick(inputs[0], args.indices);
    }
    throw std::invalid_argument("apply: unknown primitive");
  }

  // --- named primitives -----------------------------------------------

  // [m,k] x [k,n] -> [m,n]; [m,k] x [k] -> [m].
  Tensor matmul(Tensor a, Tensor b) {
    own(a); own(b);
    const Shape& sa = shape_of(a.id());
    const Shape& sb = shape_of(b.id());
    if (sa.size() != 2 || (sb.size() != 2 && sb.size() != 1) ||
        sa[1] != sb[0]) {
      throw std::invalid_argument(std::string("matmul: incompatible shapes ") +
                                  shape_str(sa) + " and " + shape_str(sb));
    }
    Shape out = sb.size() == 2 ? Shape{sa[0], sb[1]} : Shape{sa[0]};
    int id = new_node(Op::kMatmul, out, a.requires_grad() || b.requires_grad());
    nodes_[id].in0 = a.id();
    nodes_[id].in1 = b.id();
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  Tensor add(Tensor a, Tensor b) { return binary(Op::kAdd, a, b); }
  Tensor sub(Tensor a, Tensor b) { return binary(Op::kSub, a, b); }
  Tensor mul(Tensor a, Tensor b) { return binary(Op::kMul, a, b); }

  // y = scale * x + shift, elementwise with constant coefficients.
  Tensor affine(Tensor x, double scale, double shift) {
    own(x);
    int id = new_node(Op::kAffine, shape_of(x.id()), x.requires_grad());
    nodes_[id].in0 = x.id();
    nodes_[id].a = scale;
    nodes_[id].b = shift;
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  // Concatenates rank-1 tensors in order.
  Tensor concat(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    int total = 0;
    bool grad = false;
    for (const Tensor& t : parts) {
      own(t);
      const Shape& s = shape_of(t.id());
      if (s.size() != 1) {
        throw std::invalid_argument(std::string("concat: rank-1 inputs required, got ") +
                                    shape_str(s));
      }
      total += s[0];
      grad = grad || t.requires_grad();
    }
    int id = new_node(Op::kConcat, {total}, grad);
    nodes_[id].in0 = parts[0].id();
    if (parts.size() > 1) nodes_[id].in1 = parts[1].id();
    if (parts.size() > 2) {
      nodes_[id].extra_off = static_cast<int>(extra_.size());
      nodes_[id].extra_n = static_cast<int>(parts.size()) - 2;
      for (size_t i = 2; i < parts.size(); ++i) extra_.push_back(parts[i].id());
    }
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  Tensor concat(std::initializer_list<Tensor> parts) {
    std::vector<Tensor> v(parts);
    return concat(std::span<const Tensor>(v));
  }

  // x[lo:hi) of a rank-1 tensor.
  Tensor slice(Tensor x, int lo, int hi) {
    own(x);
    const Shape& s = shape_of(x.id());
    if (s.size() != 1 || lo < 0 || hi > s[0] || lo >= hi) {
      throw std::invalid_argument(std::string("slice: range [") +
                                  std::to_string(lo) + ", " + std::to_string(hi) +
                                  ") invalid for shape " + shape_str(s));
    }
    int id = new_node(Op::kSlice, {hi - lo}, x.requires_grad());
    nodes_[id].in0 = x.id();
    nodes_[id].iarg_off = push_iargs({lo, hi});
    nodes_[id].iarg_n = 2;
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  Tensor reshape(Tensor x, const Shape& target) {
    own(x);
    check_shape_valid(target);
    const Shape& s = shape_of(x.id());
    if (numel(target) != numel(s)) {
      throw std::invalid_argument(std::string("reshape: cannot view ") +
                                  shape_str(s) + " as " + shape_str(target));
    }
    int id = new_node(Op::kReshape, target, x.requires_grad());
    nodes_[id].in0 = x.id();
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  Tensor tanh(Tensor x) { return unary(Op::kTanh, x); }
  Tensor sigmoid(Tensor x) { return unary(Op::kSigmoid, x); }

  // Softmax over the last axis, computed with max subtraction.
  Tensor softmax(Tensor x) {
    own(x);
    const Shape& s = shape_of(x.id());
    if (s.empty() || s.size() > 2) {
      throw std::invalid_argument(std::string("softmax: rank 1 or 2 required, got ") +
                                  shape_str(s));
    }
    return unary(Op::kSoftmax, x);
  }

  Tensor dot(Tensor a, Tensor b) {
    own(a); own(b);
    const Shape& sa = shape_of(a.id());
    const Shape& sb = shape_of(b.id());
    if (sa.size() != 1 || sb.size() != 1 || sa[0] != sb[0]) {
      throw std::invalid_argument(std::string("dot: incompatible shapes ") +
                                  shape_str(sa) + " and " + shape_str(sb));
    }
    int id = new_node(Op::kDot, {1}, a.requires_grad() || b.requires_grad());
    nodes_[id].in0 = a.id();
    nodes_[id].in1 = b.id();
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  // Embedding row lookup: table [v,e], k indices -> [k,e]. The gradient
  // scatters (accumulating) into the table rows.
  Tensor rows(Tensor table, std::span<const int> idx) {
    own(table);
    const Shape& s = shape_of(table.id());
    if (s.size() != 2) {
      throw std::invalid_argument(std::string("rows: rank-2 table required, got ") +
                                  shape_str(s));
    }
    if (idx.empty()) throw std::invalid_argument("rows: no indices");
    for (int i : idx) {
      if (i < 0 || i >= s[0]) {
        throw std::invalid_argument(std::string("rows: index ") + std::to_string(i) +
                                    " out of range for table " + shape_str(s));
      }
    }
    int id = new_node(Op::kRows, {static_cast<int>(idx.size()), s[1]},
                      table.requires_grad());
    nodes_[id].in0 = table.id();
    nodes_[id].iarg_off = push_iargs(idx);
    nodes_[id].iarg_n = static_cast<int>(idx.size());
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  Tensor rows(Tensor table, std::initializer_list<int> idx) {
    std::vector<int> v(idx);
    return rows(table, std::span<const int>(v));
  }

  // Single row as a rank-1 vector.
  Tensor row(Tensor table, int index) {
    Tensor r = rows(table, {index});
    return reshape(r, {shape_of(table.id())[1]});
  }

  // Inverted dropout: each element kept with probability 1-rate and scaled
  // by 1/(1-rate). The mask is drawn from the tape's seed on first
  // execution and saved, so replay() reproduces it exactly. rate 0 is the
  // identity.
  Tensor dropout(Tensor x, double rate) {
    own(x);
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw std::invalid_argument("dropout: rate must be in [0, 1)");
    }
    int id = new_node(Op::kDropout, shape_of(x.id()), x.requires_grad());
    nodes_[id].in0 = x.id();
    nodes_[id].a = rate;
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  // -ln(sum of p[i] over the picked positions). Positions must be distinct
  // and in range; the sum is taken in the given order. With a single pick
  // this is the usual negative log likelihood of one class.
  Tensor neg_log_pick(Tensor probs, std::span<const int> picks) {
    own(probs);
    const Shape& s = shape_of(probs.id());
    if (s.size() != 1) {
      throw std::invalid_argument(std::string("neg_log_pick: rank-1 input required, got ") +
                                  shape_str(s));
    }
    if (picks.empty()) throw std::invalid_argument("neg_log_pick: no positions");
    std::vector<int> sorted(picks.begin(), picks.end());
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 0; i < sorted.size(); ++i) {
      if (sorted[i] < 0 || sorted[i] >= s[0]) {
        throw std::invalid_argument(std::string("neg_log_pick: position ") +
                                    std::to_string(sorted[i]) +
                                    " out of range for " + shape_str(s));
      }
      if (i > 0 && sorted[i] == sorted[i - 1]) {
        throw std::invalid_argument("neg_log_pick: duplicate position " +
                                    std::to_string(sorted[i]));
      }
    }
    int id = new_node(Op::kNegLogPick, {1}, probs.requires_grad());
    nodes_[id].in0 = probs.id();
    nodes_[id].iarg_off = push_iargs(picks);
    nodes_[id].iarg_n = static_cast<int>(picks.size());
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  Tensor neg_log_pick(Tensor probs, std::initializer_list<int> picks) {
    std::vector<int> v(picks);
    return neg_log_pick(probs, std::span<const int>(v));
  }

  // --- backward ---------------------------------------------------------

  // Reverse pass from a scalar loss. Gradients accumulate; a node feeding
  // several consumers receives the sum of their contributions. Returns the
  // map of requires-grad leaves.
  GradientMap backward(Tensor loss) {
    own(loss);
    const Node& ln = nodes_[loss.id()];
    if (ln.val_n != 1) {
      throw std::invalid_argument(std::string("backward: scalar loss required, got ") +
                                  shape_str(shape_of(loss.id())));
    }
    grads_.assign(values_.size(), 0.0);
    ++grad_epoch_;
    grads_[ln.val_off] = 1.0;
    for (int i = loss.id(); i >= 0; --i) {
      const Node& n = nodes_[i];
      if (!n.requires_grad || n.op == Op::kLeaf) continue;
      backprop(i);
    }
    std::vector<int> leaves;
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::kLeaf && nodes_[i].requires_grad) {
        leaves.push_back(static_cast<int>(i));
      }
    }
    return GradientMap(this, std::move(leaves), grad_epoch_);
  }

  // Recomputes every node value in record order from the leaves. Dropout
  // masks are reused, so the results are bit-identical to the original
  // forward pass.
  void replay() {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::kLeaf) continue;
      compute(static_cast<int>(i));
    }
  }

  // Reseeds the dropout stream for the next forward pass.
  void reseed(uint64_t seed) { rng_ = Rng(seed); }

  // Clears the record between training steps; arena capacity is kept.
  void reset() {
    nodes_.clear();
    values_.clear();
    grads_.clear();
    saved_.clear();
    extra_.clear();
    iargs_.clear();
    shape_cache_.clear();
  }

  // --- introspection ----------------------------------------------------

  int size() const { return static_cast<int>(nodes_.size()); }

  Op op_at(int id) const { return nodes_.at(id).op; }

  std::vector<int> inputs_at(int id) const {
    const Node& n = nodes_.at(id);
    std::vector<int> in;
    if (n.in0 >= 0) in.push_back(n.in0);
    if (n.in1 >= 0) in.push_back(n.in1);
    for (int k = 0; k < n.extra_n; ++k) in.push_back(extra_[n.extra_off + k]);
    return in;
  }

  const Shape& shape_of(int id) const { return shape_cache_.at(id); }

  std::span<const double> values_of(int id) const {
    const Node& n = nodes_.at(id);
    return {values_.data() + n.val_off, static_cast<size_t>(n.val_n)};
  }

  std::span<const double> grad_of(int id) const {
    const Node& n = nodes_.at(id);
    if (!n.requires_grad) {
      throw std::invalid_argument("grad_of: node does not require grad");
    }
    if (grads_.size() != values_.size()) {
      throw std::runtime_error("grad_of: no backward pass has run");
    }
    return {grads_.data() + n.val_off, static_cast<size_t>(n.val_n)};
  }

  bool requires_grad_at(int id) const { return nodes_.at(id).requires_grad; }

  uint64_t grad_epoch() const { return grad_epoch_; }

 private:
  struct Node {
    Op op = Op::kLeaf;
    int in0 = -1, in1 = -1;
    int extra_off = 0, extra_n = 0;
    int64_t val_off = 0, val_n = 0;
    int iarg_off = 0, iarg_n = 0;
    int64_t sav_off = -1;
    double a = 1.0, b = 0.0;
    bool requires_grad = false;
  };

  static void need(std::span<const Tensor> inputs, size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument("apply: wrong number of inputs");
    }
  }

  void own(const Tensor& t) const {
    if (t.tape() != this || t.id() < 0 || t.id() >= size()) {
      throw std::invalid_argument("tensor does not belong to this record");
    }
  }

  static void check_shape_valid(const Shape& s) {
    if (s.empty()) throw std::invalid_argument("shape: rank 0 not supported");
    for (int d : s) {
      if (d <= 0) {
        throw std::invalid_argument(std::string("shape: non-positive extent in ") +
                                    shape_str(s));
      }
    }
  }

  int push_iargs(std::span<const int> v) {
    int off = static_cast<int>(iargs_.size());
    iargs_.insert(iargs_.end(), v.begin(), v.end());
    return off;
  }

  int push_iargs(std::initializer_list<int> v) {
    return push_iargs(std::span<const int>(v.begin(), v.end()));
  }

  int new_node(Op op, const Shape& shape, bool requires_grad) {
    Node n;
    n.op = op;
    n.requires_grad = requires_grad;
    n.val_off = static_cast<int64_t>(values_.size());
    n.val_n = numel(shape);
    values_.resize(values_.size() + n.val_n);
    nodes_.push_back(n);
    shape_cache_.push_back(shape);
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Forward outputs must be finite after every op.
  void finish_node(int id) {
    const Node& n = nodes_[id];
    const double* v = values_.data() + n.val_off;
    for (int64_t i = 0; i < n.val_n; ++i) {
      if (!std::isfinite(v[i])) {
        throw std::runtime_error(std::string(op_name(n.op)) +
                                 ": non-finite output rejected");
      }
    }
  }

  Tensor unary(Op op, Tensor x) {
    own(x);
    int id = new_node(op, shape_of(x.id()), x.requires_grad());
    nodes_[id].in0 = x.id();
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  Tensor binary(Op op, Tensor a, Tensor b) {
    own(a); own(b);
    const Shape& sa = shape_of(a.id());
    const Shape& sb = shape_of(b.id());
    if (sa != sb) {
      throw std::invalid_argument(std::string(op_name(op)) + ": shapes " +
                                  shape_str(sa) + " and " + shape_str(sb) +
                                  " differ");
    }
    int id = new_node(op, sa, a.requires_grad() || b.requires_grad());
    nodes_[id].in0 = a.id();
    nodes_[id].in1 = b.id();
    compute(id);
    finish_node(id);
    return Tensor(this, id);
  }

  std::span<const double> in_vals(const Node& n, int which) const {
    int id = which == 0 ? n.in0 : n.in1;
    const Node& m = nodes_[id];
    return {values_.data() + m.val_off, static_cast<size_t>(m.val_n)};
  }

  void compute(int id) {
    Node& n = nodes_[id];
    double* out = values_.data() + n.val_off;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatmul: {
        const Shape& sa = shape_cache_[n.in0];
        std::span<const double> a = in_vals(n, 0);
        std::span<const double> b = in_vals(n, 1);
        const Shape& sb = shape_cache_[n.in1];
        int m = sa[0], k = sa[1];
        int cols = sb.size() == 2 ? sb[1] : 1;
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += a[i * k + t] * b[t * cols + j];
            out[i * cols + j] = acc;
          }
        }
        break;
      }
      case Op::kAdd: {
        std::span<const double> a = in_vals(n, 0), b = in_vals(n, 1);
        for (int64_t i = 0; i < n.val_n; ++i) out[i] = a[i] + b[i];
        break;
      }
      case Op::kSub: {
        std::span<const double> a = in_vals(n, 0), b = in_vals(n, 1);
        for (int64_t i = 0; i < n.val_n; ++i) out[i] = a[i] - b[i];
        break;
      }
      case Op::kMul: {
        std::span<const double> a = in_vals(n, 0), b = in_vals(n, 1);
        for (int64_t i = 0; i < n.val_n; ++i) out[i] = a[i] * b[i];
        break;
      }
      case Op::kAffine: {
        std::span<const double> a = in_vals(n, 0);
        for (int64_t i = 0; i < n.val_n; ++i) out[i] = n.a * a[i] + n.b;
        break;
      }
      case Op::kConcat: {
        int64_t off = 0;
        for (int in : inputs_at(id)) {
          const Node& m = nodes_[in];
          std::copy(values_.begin() + m.val_off,
                    values_.begin() + m.val_off + m.val_n, out + off);
          off += m.val_n;
        }
        break;
      }
      case Op::kSlice: {
        std::span<const double> a = in_vals(n, 0);
        int lo = iargs_[n.iarg_off];
        for (int64_t i = 0; i < n.val_n; ++i) out[i] = a[lo + i];
        break;
      }
      case Op::kReshape: {
        std::span<const double> a = in_vals(n, 0);
        std::copy(a.begin(), a.end(), out);
        break;
      }
      case Op::kTanh: {
        std::span<const double> a = in_vals(n, 0);
        for (int64_t i = 0; i < n.val_n; ++i) out[i] = std::tanh(a[i]);
        break;
      }
      case Op::kSigmoid: {
        std::span<const double> a = in_vals(n, 0);
        for (int64_t i = 0; i < n.val_n; ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
        break;
      }
      case Op::kSoftmax: {
        std::span<const double> a = in_vals(n, 0);
        const Shape& s = shape_cache_[id];
        int rows_n = s.size() == 2 ? s[0] : 1;
        int cols = s.size() == 2 ? s[1] : s[0];
        for (int r = 0; r < rows_n; ++r) {
          const double* x = a.data() + static_cast<int64_t>(r) * cols;
          double* y = out + static_cast<int64_t>(r) * cols;
          double mx = x[0];
          for (int i = 1; i < cols; ++i) mx = std::max(mx, x[i]);
          double sum = 0.0;
          for (int i = 0; i < cols; ++i) {
            y[i] = std::exp(x[i] - mx);
            sum += y[i];
          }
          for (int i = 0; i < cols; ++i) y[i] /= sum;
        }
        break;
      }
      case Op::kDot: {
        std::span<const double> a = in_vals(n, 0), b = in_vals(n, 1);
        double acc = 0.0;
        for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
        out[0] = acc;
        break;
      }
      case Op::kRows: {
        std::span<const double> a = in_vals(n, 0);
        int e = shape_cache_[n.in0][1];
        for (int k = 0; k < n.iarg_n; ++k) {
          int r = iargs_[n.iarg_off + k];
          std::copy(a.begin() + static_cast<int64_t>(r) * e,
                    a.begin() + static_cast<int64_t>(r + 1) * e,
                    out + static_cast<int64_t>(k) * e);
        }
        break;
      }
      case Op::kDropout: {
        std::span<const double> a = in_vals(n, 0);
        if (n.sav_off < 0) {
          n.sav_off = static_cast<int64_t>(saved_.size());
          saved_.resize(saved_.size() + n.val_n);
          double keep = 1.0 - n.a;
          for (int64_t i = 0; i < n.val_n; ++i) {
            saved_[n.sav_off + i] = (n.a == 0.0 || rng_.uniform() >= n.a)
                                        ? 1.0 / keep
                                        : 0.0;
          }
        }
        for (int64_t i = 0; i < n.val_n; ++i) out[i] = a[i] * saved_[n.sav_off + i];
        break;
      }
      case Op::kNegLogPick: {
        std::span<const double> a = in_vals(n, 0);
        double sum = 0.0;
        for (int k = 0; k < n.iarg_n; ++k) sum += a[iargs_[n.iarg_off + k]];
        out[0] = -std::log(sum);
        break;
      }
    }
  }

  void backprop(int id) {
    const Node& n = nodes_[id];
    const double* g = grads_.data() + n.val_off;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatmul: {
        const Shape& sa = shape_cache_[n.in0];
        const Shape& sb = shape_cache_[n.in1];
        std::span<const double> a = in_vals(n, 0);
        std::span<const double> b = in_vals(n, 1);
        int m = sa[0], k = sa[1];
        int cols = sb.size() == 2 ? sb[1] : 1;
        if (nodes_[n.in0].requires_grad) {
          double* da = grads_.data() + nodes_[n.in0].val_off;
          for (int i = 0; i < m; ++i) {
            for (int t = 0; t < k; ++t) {
              double acc = 0.0;
              for (int j = 0; j < cols; ++j) acc += g[i * cols + j] * b[t * cols + j];
              da[i * k + t] += acc;
            }
          }
        }
        if (nodes_[n.in1].requires_grad) {
          double* db = grads_.data() + nodes_[n.in1].val_off;
          for (int t = 0; t < k; ++t) {
            for (int j = 0; j < cols; ++j) {
              double acc = 0.0;
              for (int i = 0; i < m; ++i) acc += a[i * k + t] * g[i * cols + j];
              db[t * cols + j] += acc;
            }
          }
        }
        break;
      }
      case Op::kAdd: {
        for (int which = 0; which < 2; ++which) {
          int in = which == 0 ? n.in0 : n.in1;
          if (!nodes_[in].requires_grad) continue;
          double* d = grads_.data() + nodes_[in].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        if (nodes_[n.in0].requires_grad) {
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] += g[i];
        }
        if (nodes_[n.in1].requires_grad) {
          double* d = grads_.data() + nodes_[n.in1].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        std::span<const double> a = in_vals(n, 0), b = in_vals(n, 1);
        if (nodes_[n.in0].requires_grad) {
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] += g[i] * b[i];
        }
        if (nodes_[n.in1].requires_grad) {
          double* d = grads_.data() + nodes_[n.in1].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] += g[i] * a[i];
        }
        break;
      }
      case Op::kAffine: {
        if (nodes_[n.in0].requires_grad) {
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] += n.a * g[i];
        }
        break;
      }
      case Op::kConcat: {
        int64_t off = 0;
        for (int in : inputs_at(id)) {
          const Node& m = nodes_[in];
          if (m.requires_grad) {
            double* d = grads_.data() + m.val_off;
            for (int64_t i = 0; i < m.val_n; ++i) d[i] += g[off + i];
          }
          off += m.val_n;
        }
        break;
      }
      case Op::kSlice: {
        if (nodes_[n.in0].requires_grad) {
          double* d = grads_.data() + nodes_[n.in0].val_off;
          int lo = iargs_[n.iarg_off];
          for (int64_t i = 0; i < n.val_n; ++i) d[lo + i] += g[i];
        }
        break;
      }
      case Op::kReshape: {
        if (nodes_[n.in0].requires_grad) {
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] += g[i];
        }
        break;
      }
      case Op::kTanh: {
        if (nodes_[n.in0].requires_grad) {
          const double* y = values_.data() + n.val_off;
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
        }
        break;
      }
      case Op::kSigmoid: {
        if (nodes_[n.in0].requires_grad) {
          const double* y = values_.data() + n.val_off;
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
        }
        break;
      }
      case Op::kSoftmax: {
        if (nodes_[n.in0].requires_grad) {
          const Shape& s = shape_cache_[id];
          int rows_n = s.size() == 2 ? s[0] : 1;
          int cols = s.size() == 2 ? s[1] : s[0];
          const double* y = values_.data() + n.val_off;
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int r = 0; r < rows_n; ++r) {
            const double* yr = y + static_cast<int64_t>(r) * cols;
            const double* gr = g + static_cast<int64_t>(r) * cols;
            double dotgy = 0.0;
            for (int i = 0; i < cols; ++i) dotgy += gr[i] * yr[i];
            double* dr = d + static_cast<int64_t>(r) * cols;
            for (int i = 0; i < cols; ++i) dr[i] += yr[i] * (gr[i] - dotgy);
          }
        }
        break;
      }
      case Op::kDot: {
        std::span<const double> a = in_vals(n, 0), b = in_vals(n, 1);
        double g0 = g[0];
        if (nodes_[n.in0].requires_grad) {
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (size_t i = 0; i < a.size(); ++i) d[i] += g0 * b[i];
        }
        if (nodes_[n.in1].requires_grad) {
          double* d = grads_.data() + nodes_[n.in1].val_off;
          for (size_t i = 0; i < b.size(); ++i) d[i] += g0 * a[i];
        }
        break;
      }
      case Op::kRows: {
        if (nodes_[n.in0].requires_grad) {
          int e = shape_cache_[n.in0][1];
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int k = 0; k < n.iarg_n; ++k) {
            int r = iargs_[n.iarg_off + k];
            for (int i = 0; i < e; ++i) {
              d[static_cast<int64_t>(r) * e + i] += g[static_cast<int64_t>(k) * e + i];
            }
          }
        }
        break;
      }
      case Op::kDropout: {
        if (nodes_[n.in0].requires_grad) {
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int64_t i = 0; i < n.val_n; ++i) d[i] += g[i] * saved_[n.sav_off + i];
        }
        break;
      }
      case Op::kNegLogPick: {
        if (nodes_[n.in0].requires_grad) {
          std::span<const double> a = in_vals(n, 0);
          double sum = 0.0;
          for (int k = 0; k < n.iarg_n; ++k) sum += a[iargs_[n.iarg_off + k]];
          double* d = grads_.data() + nodes_[n.in0].val_off;
          for (int k = 0; k < n.iarg_n; ++k) d[iargs_[n.iarg_off + k]] -= g[0] / sum;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Shape> shape_cache_;
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<double> saved_;
  std::vector<int> extra_;
  std::vector<int> iargs_;
  Rng rng_;
  uint64_t grad_epoch_ = 0;
};

inline const Shape& Tensor::shape() const { return tape_->shape_of(id_); }

inline std::span<const double> Tensor::values() const {
  return tape_->values_of(id_);
}

inline bool Tensor::requires_grad() const {
  return tape_->requires_grad_at(id_);
}

inline double Tensor::scalar() const {
  std::span<const double> v = values();
  if (v.size() != 1) {
    throw std::invalid_argument(std::string("scalar: tensor has shape ") +
                                shape_str(shape()));
  }
  return v[0];
}

inline int64_t Tensor::size() const { return numel(shape()); }

inline std::span<const double> GradientMap::at(const Tensor& t) const {
  return at_id(t.id());
}

inline std::span<const double> GradientMap::at_id(int node_id) const {
  if (tape_ == nullptr) throw std::runtime_error("gradient map is empty");
  if (tape_->grad_epoch() != epoch_) {
    throw std::runtime_error("gradient map is stale");
  }
  return tape_->grad_of(node_id);
}

}  // namespace entrack
