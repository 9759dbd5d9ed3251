#include "pixmatch/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "pixmatch/errors.hpp"

namespace pixmatch {

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  Tensor::BackwardFn backward;
  std::string_view op_name = "leaf";
  std::uint64_t sequence = 0;
};
}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                     shape_to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void require_defined(const Tensor& t, std::string_view what) {
  if (!t.defined()) throw ShapeError(std::string(what) + ": undefined tensor");
}

// Dot product with four independent accumulators in a fixed order.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

Tensor Tensor::from_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, BackwardFn backward,
                       std::string_view op_name) {
  const bool track = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                       return t.defined() && t.requires_grad();
                     });
  auto node = make_node(std::move(shape), std::move(data), track);
  node->op_name = op_name;
  if (track) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) node->inputs.push_back(in.node_);
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw Error("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !node_->backward; }
std::string_view Tensor::op_name() const { return node_->op_name; }
std::uint64_t Tensor::sequence() const { return node_->sequence; }

bool Tensor::has_grad() const { return node_->grad.has_value(); }

std::span<const double> Tensor::grad() const {
  if (!node_->grad) return {};
  return *node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad) std::fill(node_->grad->begin(), node_->grad->end(), 0.0);
}

void Tensor::clear_grad() { node_->grad.reset(); }

std::span<double> Tensor::grad_buffer() const {
  if (!node_->grad) node_->grad.emplace(node_->data.size(), 0.0);
  return *node_->grad;
}

void Tensor::accumulate_grad(std::span<const double> delta) const {
  if (!node_->requires_grad) return;
  if (delta.size() != node_->data.size()) throw ShapeError("gradient size mismatch");
  auto g = grad_buffer();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

std::span<double> Tensor::mutable_data_for_update() { return node_->data; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Tape

ComputationTape ComputationTape::record(const Tensor& root) {
  require_defined(root, "record");
  ComputationTape tape;
  std::unordered_set<const detail::Node*> visited;
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  if (root.node_->backward) stack.emplace_back(root.node_, 0);
  visited.insert(root.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->backward && visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      continue;
    }
    tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

std::vector<ComputationTape::Entry> ComputationTape::entries() const {
  std::vector<Entry> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back({n->sequence, n->op_name});
  return out;
}

std::vector<std::uint64_t> ComputationTape::replay_backward() const {
  std::vector<std::uint64_t> visits;
  if (nodes_.empty()) return visits;
  for (const auto& n : nodes_) n->grad.emplace(n->data.size(), 0.0);
  // Leaf gradients from earlier passes are set aside and added back once at the end, so a
  // replay contributes the same bits to a leaf whatever it already holds.
  std::vector<std::pair<detail::Node*, std::optional<std::vector<double>>>> leaves;
  std::unordered_set<detail::Node*> seen;
  for (const auto& n : nodes_) {
    for (const auto& in : n->inputs) {
      if (!in->backward && in->requires_grad && seen.insert(in.get()).second) {
        leaves.emplace_back(in.get(), std::move(in->grad));
        in->grad.reset();
      }
    }
  }
  auto& root = nodes_.back();
  std::fill(root->grad->begin(), root->grad->end(), 1.0);
  visits.reserve(nodes_.size());
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& n = **it;
    n.backward(*n.grad, n.data);
    visits.push_back(n.sequence);
  }
  for (auto& [leaf, previous] : leaves) {
    if (!previous) continue;
    if (!leaf->grad) {
      leaf->grad = std::move(previous);
      continue;
    }
    for (std::size_t i = 0; i < previous->size(); ++i) (*leaf->grad)[i] = (*previous)[i] + (*leaf->grad)[i];
  }
  return visits;
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) throw ShapeError("backward() requires a scalar loss, got shape " + shape_to_string(loss.shape()));
  if (loss.is_leaf()) {
    const double one = 1.0;
    loss.accumulate_grad(std::span<const double>(&one, 1));
    return;
  }
  ComputationTape::record(loss).replay_backward();
}

Tensor detach(const Tensor& t) {
  require_defined(t, "detach");
  auto data = std::vector<double>(t.data().begin(), t.data().end());
  return Tensor::from_data(t.shape(), std::move(data), false);
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

Tensor unary(const Tensor& a, std::string_view name, double (*f)(double), double (*df)(double x, double y)) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return Tensor::from_op(
      a.shape(), std::move(out), {a},
      [a, df](std::span<const double> g, std::span<const double> y) {
        auto ga = a.grad_buffer();
        const auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
      },
      name);
}

enum class Broadcast { none, lhs_scalar, rhs_scalar };

Broadcast check_binary(const Tensor& a, const Tensor& b, std::string_view name) {
  require_defined(a, name);
  require_defined(b, name);
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.numel() == 1) return Broadcast::rhs_scalar;
  if (a.numel() == 1) return Broadcast::lhs_scalar;
  throw ShapeError(std::string(name) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                   shape_to_string(b.shape()));
}

Tensor add_or_sub(const Tensor& a, const Tensor& b, double sign, std::string_view name);

}  // namespace

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  switch (kind) {
    case ElementwiseKind::add: return add(a, b);
    case ElementwiseKind::sub: return sub(a, b);
    case ElementwiseKind::mul: return mul(a, b);
    case ElementwiseKind::exp: return exp(a);
    case ElementwiseKind::log: return log(a);
    case ElementwiseKind::relu: return relu(a);
    case ElementwiseKind::square: return square(a);
  }
  throw Error("unknown elementwise kind");
}

Tensor add(const Tensor& a, const Tensor& b) { return add_or_sub(a, b, 1.0, "add"); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_or_sub(a, b, -1.0, "sub"); }

namespace {
Tensor add_or_sub(const Tensor& a, const Tensor& b, double sign, std::string_view name) {
  const auto bc = check_binary(a, b, name);
  const Tensor& big = bc == Broadcast::lhs_scalar ? b : a;
  std::vector<double> out(big.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[bc == Broadcast::lhs_scalar ? 0 : i] + sign * y[bc == Broadcast::rhs_scalar ? 0 : i];
  }
  return Tensor::from_op(
      big.shape(), std::move(out), {a, b},
      [a, b, bc, sign](std::span<const double> g, std::span<const double>) {
        if (a.requires_grad()) {
          auto ga = a.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) ga[bc == Broadcast::lhs_scalar ? 0 : i] += g[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gb[bc == Broadcast::rhs_scalar ? 0 : i] += sign * g[i];
        }
      },
      name);
}
}  // namespace

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto bc = check_binary(a, b, "mul");
  const Tensor& big = bc == Broadcast::lhs_scalar ? b : a;
  std::vector<double> out(big.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[bc == Broadcast::lhs_scalar ? 0 : i] * y[bc == Broadcast::rhs_scalar ? 0 : i];
  }
  return Tensor::from_op(
      big.shape(), std::move(out), {a, b},
      [a, b, bc](std::span<const double> g, std::span<const double>) {
        const auto x = a.data();
        const auto y = b.data();
        const std::size_t ia = bc == Broadcast::lhs_scalar ? 0 : 1;
        const std::size_t ib = bc == Broadcast::rhs_scalar ? 0 : 1;
        if (a.requires_grad()) {
          auto ga = a.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i * ia] += g[i] * y[i * ib];
        }
        if (b.requires_grad()) {
          auto gb = b.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i * ib] += g[i] * x[i * ia];
        }
      },
      "mul");
}

Tensor exp(const Tensor& a) {
  require_defined(a, "exp");
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  require_defined(a, "log");
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  return unary(
      a, "relu", [](double x) { return x < 0.0 ? 0.0 : x; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
  require_defined(a, "square");
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return Tensor::from_op(
      a.shape(), std::move(out), {a},
      [a, factor](std::span<const double> g, std::span<const double>) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
      },
      "scale");
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::from_op(
      {}, {s}, {a},
      [a](std::span<const double> g, std::span<const double>) {
        auto ga = a.grad_buffer();
        for (auto& v : ga) v += g[0];
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Convolution (im2col + blocked loops)

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

void im2col(const double* in, const ConvGeometry& g, double* col) {
  const auto P = g.p();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* plane = in + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* in_grad) {
  const auto P = g.p();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* plane = in_grad + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require_defined(input, "conv2d");
  require_defined(weight, "conv2d");
  require_defined(bias, "conv2d");
  if (input.dim() != 4 || weight.dim() != 4) throw ShapeError("conv2d expects 4-D input and weight");
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (ws[1] != is[1]) {
    throw ShapeError("conv2d channel mismatch: input " + shape_to_string(is) + " weight " + shape_to_string(ws));
  }
  if (bias.numel() != ws[0]) throw ShapeError("conv2d bias must have Cout elements");
  if (ws[2] % 2 == 0 || ws[3] % 2 == 0) throw ShapeError("conv2d kernel extents must be odd");
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  if (is[2] + 2 * padding < ws[2] || is[3] + 2 * padding < ws[3]) {
    throw ShapeError("conv2d kernel larger than padded input");
  }
  ConvGeometry g{is[0], is[1], is[2], is[3], ws[0], ws[2], ws[3], stride, padding, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const auto K = g.k();
  const auto P = g.p();
  const bool pointwise = g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
  const bool keep_cols = grad_enabled() && (input.requires_grad() || weight.requires_grad() || bias.requires_grad());

  auto cols = std::make_shared<std::vector<double>>();
  std::vector<double> scratch;
  if (!pointwise) {
    if (keep_cols) {
      cols->resize(g.n * K * P);
    } else {
      scratch.resize(K * P);
    }
  }

  std::vector<double> out(g.n * g.cout * P);
  const auto x = input.data();
  const auto wt = weight.data();
  const auto b = bias.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* col;
    if (pointwise) {
      col = x.data() + n * K * P;
    } else {
      double* dst = keep_cols ? cols->data() + n * K * P : scratch.data();
      im2col(x.data() + n * g.cin * g.h * g.w, g, dst);
      col = dst;
    }
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* row = out.data() + (n * g.cout + co) * P;
      std::fill(row, row + P, b[co]);
      const double* wrow = wt.data() + co * K;
      for (std::size_t k = 0; k < K; ++k) axpy(wrow[k], col + k * P, row, P);
    }
  }

  return Tensor::from_op(
      {g.n, g.cout, g.ho, g.wo}, std::move(out), {input, weight, bias},
      [input, weight, bias, g, cols, pointwise](std::span<const double> gout, std::span<const double>) {
        const auto K = g.k();
        const auto P = g.p();
        const auto wt = weight.data();
        std::vector<double> gcol(input.requires_grad() ? K * P : 0);
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* go = gout.data() + n * g.cout * P;
          const double* col = pointwise ? input.data().data() + n * K * P : cols->data() + n * K * P;
          if (bias.requires_grad()) {
            auto gb = bias.grad_buffer();
            for (std::size_t co = 0; co < g.cout; ++co) {
              double s = 0.0;
              for (std::size_t p = 0; p < P; ++p) s += go[co * P + p];
              gb[co] += s;
            }
          }
          if (weight.requires_grad()) {
            auto gw = weight.grad_buffer();
            for (std::size_t co = 0; co < g.cout; ++co) {
              for (std::size_t k = 0; k < K; ++k) gw[co * K + k] += dot(go + co * P, col + k * P, P);
            }
          }
          if (input.requires_grad()) {
            std::fill(gcol.begin(), gcol.end(), 0.0);
            for (std::size_t co = 0; co < g.cout; ++co) {
              const double* wrow = wt.data() + co * K;
              for (std::size_t k = 0; k < K; ++k) axpy(wrow[k], go + co * P, gcol.data() + k * P, P);
            }
            auto gi = input.grad_buffer();
            double* gin = gi.data() + n * g.cin * g.h * g.w;
            if (pointwise) {
              for (std::size_t i = 0; i < K * P; ++i) gin[i] += gcol[i];
            } else {
              col2im(gcol.data(), g, gin);
            }
          }
        }
      },
      "conv2d");
}

// ---------------------------------------------------------------------------
// Bilinear resize

namespace {

struct LerpTap {
  std::size_t i0, i1;
  double frac;
};

std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_defined(input, "upsample_bilinear");
  if (input.dim() != 4) throw ShapeError("upsample_bilinear expects [N,C,H,W]");
  if (out_h == 0 || out_w == 0) throw ShapeError("upsample_bilinear output extent must be positive");
  const auto& s = input.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  auto ty = lerp_taps(h, out_h);
  auto tx = lerp_taps(w, out_w);
  std::vector<double> out(planes * out_h * out_w);
  const auto x = input.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * h * w;
    double* dst = out.data() + pl * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      const double* r0 = src + a.i0 * w;
      const double* r1 = src + a.i1 * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const double top = r0[b.i0] + b.frac * (r0[b.i1] - r0[b.i0]);
        const double bot = r1[b.i0] + b.frac * (r1[b.i1] - r1[b.i0]);
        dst[oy * out_w + ox] = top + a.frac * (bot - top);
      }
    }
  }
  return Tensor::from_op(
      {s[0], s[1], out_h, out_w}, std::move(out), {input},
      [input, ty = std::move(ty), tx = std::move(tx), planes, h, w, out_h, out_w](std::span<const double> g,
                                                                                 std::span<const double>) {
        auto gi = input.grad_buffer();
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const double* go = g.data() + pl * out_h * out_w;
          double* dst = gi.data() + pl * h * w;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const auto& b = tx[ox];
              const double v = go[oy * out_w + ox];
              const double top = v * (1.0 - a.frac);
              const double bot = v * a.frac;
              dst[a.i0 * w + b.i0] += top * (1.0 - b.frac);
              dst[a.i0 * w + b.i1] += top * b.frac;
              dst[a.i1 * w + b.i0] += bot * (1.0 - b.frac);
              dst[a.i1 * w + b.i1] += bot * b.frac;
            }
          }
        }
      },
      "upsample_bilinear");
}

// ---------------------------------------------------------------------------
// Softmax over channels

Tensor softmax_channels(const Tensor& logits) {
  require_defined(logits, "softmax_channels");
  if (logits.dim() != 4) throw ShapeError("softmax_channels expects [N,C,H,W]");
  const auto& s = logits.shape();
  const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
  if (c < 2) throw ShapeError("softmax_channels requires at least 2 channels");
  std::vector<double> out(logits.numel());
  const auto x = logits.data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* in = x.data() + b * c * hw;
    double* o = out.data() + b * c * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      double m = in[p];
      for (std::size_t k = 1; k < c; ++k) m = std::max(m, in[k * hw + p]);
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double e = std::exp(in[k * hw + p] - m);
        o[k * hw + p] = e;
        z += e;
      }
      for (std::size_t k = 0; k < c; ++k) o[k * hw + p] /= z;
    }
  }
  return Tensor::from_op(
      s, std::move(out), {logits},
      [logits, n, c, hw](std::span<const double> g, std::span<const double> y) {
        auto gi = logits.grad_buffer();
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t base = b * c * hw;
          for (std::size_t p = 0; p < hw; ++p) {
            double dotp = 0.0;
            for (std::size_t k = 0; k < c; ++k) dotp += g[base + k * hw + p] * y[base + k * hw + p];
            for (std::size_t k = 0; k < c; ++k) {
              const auto i = base + k * hw + p;
              gi[i] += y[i] * (g[i] - dotp);
            }
          }
        }
      },
      "softmax_channels");
}

}  // namespace pixmatch
