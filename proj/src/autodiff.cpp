#include "nlmot/autodiff.hpp"

#include <cmath>
#include <sstream>

#include "nlmot/error.hpp"

namespace nlmot {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::silu: return "silu";
    case OpKind::softmax: return "softmax";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::mean: return "mean";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::smooth_l1: return "smooth_l1";
    case OpKind::tile_rows: return "tile_rows";
    case OpKind::attention: return "attention";
    case OpKind::concat_tokens: return "concat_tokens";
    case OpKind::select_token: return "select_token";
  }
  return "?";
}

namespace {

// Clamping keeps exp finite; sigmoid is saturated to double precision well
// before |x| = 700.
Tensor sigmoid_of(const Tensor& x) {
  return (1.0 + (-x.array().max(-700.0).min(700.0)).exp()).inverse().matrix();
}

[[noreturn]] void shape_error(const std::string& what) {
  throw Error(ErrorKind::shape_mismatch, what);
}

std::string shape_str(Index r, Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

// Sums consecutive blocks of `block_rows` rows: [k*q, c] -> [q, c].
void accumulate_blocks(const Tensor& src, Index block_rows, Tensor& dst) {
  const Index blocks = src.rows() / block_rows;
  for (Index b = 0; b < blocks; ++b) {
    dst.noalias() += src.middleRows(b * block_rows, block_rows);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction

NodeId Graph::push(Node node) {
  node.value.resize(node.rows, node.cols);
  node.value.setZero();
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id.index < 0 || id.index >= static_cast<int>(nodes_.size())) {
    throw Error(ErrorKind::invalid_input, "unknown graph node");
  }
  return nodes_[id.index];
}

std::string Graph::describe(int index) const {
  const Node& n = nodes_[index];
  std::ostringstream os;
  os << "node #" << index << " (" << to_string(n.kind);
  if (!n.name.empty()) os << " '" << n.name << "'";
  os << ")";
  return os.str();
}

NodeId Graph::input(std::string name, Index rows, Index cols) {
  if (rows <= 0 || cols <= 0) shape_error("input '" + name + "' needs a positive shape");
  if (find_input(name).valid()) {
    throw Error(ErrorKind::invalid_input, "duplicate graph input '" + name + "'");
  }
  Node n{OpKind::input, {}, rows, cols, std::move(name)};
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value, std::string name) {
  Node n{OpKind::constant, {}, value.rows(), value.cols(), std::move(name)};
  NodeId id = push(std::move(n));
  nodes_[id.index].value = std::move(value);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.cols != nb.rows) {
    shape_error("matmul " + shape_str(na.rows, na.cols) + " by " + shape_str(nb.rows, nb.cols) +
                " at node #" + std::to_string(nodes_.size()));
  }
  return push(Node{OpKind::matmul, {a.index, b.index}, na.rows, nb.cols});
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.cols != nb.cols || nb.rows == 0 || na.rows % nb.rows != 0) {
    shape_error("add " + shape_str(na.rows, na.cols) + " + " + shape_str(nb.rows, nb.cols) +
                " at node #" + std::to_string(nodes_.size()));
  }
  return push(Node{OpKind::add, {a.index, b.index}, na.rows, na.cols});
}

NodeId Graph::sub(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows || na.cols != nb.cols) {
    shape_error("sub " + shape_str(na.rows, na.cols) + " - " + shape_str(nb.rows, nb.cols) +
                " at node #" + std::to_string(nodes_.size()));
  }
  return push(Node{OpKind::sub, {a.index, b.index}, na.rows, na.cols});
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.cols != nb.cols || nb.rows == 0 || na.rows % nb.rows != 0) {
    shape_error("mul " + shape_str(na.rows, na.cols) + " * " + shape_str(nb.rows, nb.cols) +
                " at node #" + std::to_string(nodes_.size()));
  }
  return push(Node{OpKind::mul, {a.index, b.index}, na.rows, na.cols});
}

NodeId Graph::scale(NodeId a, double factor) {
  const Node& na = node(a);
  Node n{OpKind::scale, {a.index}, na.rows, na.cols};
  n.scalar = factor;
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId a) {
  const Node& na = node(a);
  return push(Node{OpKind::sigmoid, {a.index}, na.rows, na.cols});
}

NodeId Graph::silu(NodeId a) {
  const Node& na = node(a);
  return push(Node{OpKind::silu, {a.index}, na.rows, na.cols});
}

NodeId Graph::softmax(NodeId a) {
  const Node& na = node(a);
  return push(Node{OpKind::softmax, {a.index}, na.rows, na.cols});
}

NodeId Graph::concat(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows) {
    shape_error("concat row mismatch at node #" + std::to_string(nodes_.size()));
  }
  return push(Node{OpKind::concat, {a.index, b.index}, na.rows, na.cols + nb.cols});
}

NodeId Graph::slice(NodeId a, Index col_begin, Index col_count) {
  const Node& na = node(a);
  if (col_begin < 0 || col_count <= 0 || col_begin + col_count > na.cols) {
    shape_error("slice out of range at node #" + std::to_string(nodes_.size()));
  }
  Node n{OpKind::slice, {a.index}, na.rows, col_count};
  n.attr0 = col_begin;
  n.attr1 = col_count;
  return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
  node(a);
  return push(Node{OpKind::mean, {a.index}, 1, 1});
}

NodeId Graph::layer_norm(NodeId a, double epsilon) {
  const Node& na = node(a);
  Node n{OpKind::layer_norm, {a.index}, na.rows, na.cols};
  n.scalar = epsilon;
  return push(std::move(n));
}

NodeId Graph::smooth_l1(NodeId a) {
  const Node& na = node(a);
  return push(Node{OpKind::smooth_l1, {a.index}, na.rows, na.cols});
}

NodeId Graph::tile_rows(NodeId a, Index repeats) {
  const Node& na = node(a);
  if (repeats <= 0) shape_error("tile_rows needs a positive repeat count");
  Node n{OpKind::tile_rows, {a.index}, na.rows * repeats, na.cols};
  n.attr0 = repeats;
  return push(std::move(n));
}

NodeId Graph::attention(NodeId q, NodeId k, NodeId v, Index tokens, Index heads) {
  const Node& nq = node(q);
  const Node& nk = node(k);
  const Node& nv = node(v);
  if (nq.rows != nk.rows || nq.rows != nv.rows || nq.cols != nk.cols || nq.cols != nv.cols) {
    shape_error("attention operands disagree at node #" + std::to_string(nodes_.size()));
  }
  if (tokens <= 0 || nq.rows % tokens != 0 || heads <= 0 || nq.cols % heads != 0) {
    shape_error("attention token/head split invalid at node #" + std::to_string(nodes_.size()));
  }
  Node n{OpKind::attention, {q.index, k.index, v.index}, nq.rows, nq.cols};
  n.attr0 = tokens;
  n.attr1 = heads;
  // Cached attention weights: one tokens x tokens block per (sample, head).
  n.cache.resize((nq.rows / tokens) * heads * tokens, tokens);
  return push(std::move(n));
}

NodeId Graph::concat_tokens(NodeId a, NodeId b, Index tokens_a, Index tokens_b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (tokens_a <= 0 || tokens_b <= 0 || na.cols != nb.cols || na.rows % tokens_a != 0 ||
      nb.rows % tokens_b != 0 || na.rows / tokens_a != nb.rows / tokens_b) {
    shape_error("concat_tokens mismatch at node #" + std::to_string(nodes_.size()));
  }
  Node n{OpKind::concat_tokens, {a.index, b.index}, na.rows + nb.rows, na.cols};
  n.attr0 = tokens_a;
  n.attr1 = tokens_b;
  return push(std::move(n));
}

NodeId Graph::select_token(NodeId a, Index tokens, Index which) {
  const Node& na = node(a);
  if (tokens <= 0 || na.rows % tokens != 0 || which < 0 || which >= tokens) {
    shape_error("select_token out of range at node #" + std::to_string(nodes_.size()));
  }
  Node n{OpKind::select_token, {a.index}, na.rows / tokens, na.cols};
  n.attr0 = tokens;
  n.attr1 = which;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Accessors

const Tensor& Graph::value(NodeId id) const { return node(id).value; }

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = node(id);
  if (n.grad.size() == 0) {
    throw Error(ErrorKind::invalid_input, "no gradient: run backward() first");
  }
  return n.grad;
}

Index Graph::rows(NodeId id) const { return node(id).rows; }
Index Graph::cols(NodeId id) const { return node(id).cols; }
OpKind Graph::kind(NodeId id) const { return node(id).kind; }
const std::string& Graph::name(NodeId id) const { return node(id).name; }

NodeId Graph::find_input(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::input && nodes_[i].name == name) {
      return NodeId{static_cast<int>(i)};
    }
  }
  return NodeId{};
}

std::vector<NodeId> Graph::inputs() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::input) out.push_back(NodeId{static_cast<int>(i)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward

void Graph::forward(const TensorMap& bindings) {
  std::map<std::string, const Tensor*, std::less<>> refs;
  for (const auto& [k, v] : bindings) refs.emplace(k, &v);
  forward(refs);
}

void Graph::forward(const std::map<std::string, const Tensor*, std::less<>>& bindings) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.kind == OpKind::input) {
      auto it = bindings.find(n.name);
      if (it == bindings.end()) {
        shape_error("input '" + n.name + "' is not bound");
      }
      const Tensor& t = *it->second;
      if (t.rows() != n.rows || t.cols() != n.cols) {
        shape_error("input '" + n.name + "' expects " + shape_str(n.rows, n.cols) + ", got " +
                    shape_str(t.rows(), t.cols()));
      }
      n.value = t;
    } else if (n.kind != OpKind::constant) {
      evaluate(static_cast<int>(i));
    }
    // A finite sum implies every entry is finite; the exact scan only runs
    // when the sum overflowed or hit a NaN.
    if (!std::isfinite(n.value.sum()) && !n.value.allFinite()) {
      throw Error(ErrorKind::numeric, "non-finite value at " + describe(static_cast<int>(i)));
    }
  }
  evaluated_ = true;
}

void Graph::evaluate(int index) {
  Node& n = nodes_[index];
  auto arg = [&](int k) -> const Tensor& { return nodes_[n.args[k]].value; };
  Tensor& out = n.value;

  switch (n.kind) {
    case OpKind::input:
    case OpKind::constant:
      break;
    case OpKind::matmul:
      out.noalias() = arg(0) * arg(1);
      break;
    case OpKind::add: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      if (b.rows() == a.rows()) {
        out = a + b;
      } else if (b.rows() == 1) {
        out = a.rowwise() + b.row(0);
      } else {
        const Index q = b.rows();
        for (Index s = 0; s < a.rows(); s += q) out.middleRows(s, q) = a.middleRows(s, q) + b;
      }
      break;
    }
    case OpKind::sub:
      out = arg(0) - arg(1);
      break;
    case OpKind::mul: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      if (b.rows() == a.rows()) {
        out = a.cwiseProduct(b);
      } else {
        const Index q = b.rows();
        for (Index s = 0; s < a.rows(); s += q) {
          out.middleRows(s, q) = a.middleRows(s, q).cwiseProduct(b);
        }
      }
      break;
    }
    case OpKind::scale:
      out = arg(0) * n.scalar;
      break;
    case OpKind::sigmoid:
      out = sigmoid_of(arg(0));
      break;
    case OpKind::silu:
      n.cache = sigmoid_of(arg(0));
      out = arg(0).cwiseProduct(n.cache);
      break;
    case OpKind::softmax: {
      const Tensor& a = arg(0);
      for (Index r = 0; r < a.rows(); ++r) {
        const double m = a.row(r).maxCoeff();
        out.row(r) = (a.row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
      }
      break;
    }
    case OpKind::concat:
      out.leftCols(arg(0).cols()) = arg(0);
      out.rightCols(arg(1).cols()) = arg(1);
      break;
    case OpKind::slice:
      out = arg(0).middleCols(n.attr0, n.attr1);
      break;
    case OpKind::mean:
      out(0, 0) = arg(0).mean();
      break;
    case OpKind::layer_norm: {
      const Tensor& a = arg(0);
      n.cache.resize(a.rows(), 1);
      const double inv_cols = 1.0 / static_cast<double>(a.cols());
      for (Index r = 0; r < a.rows(); ++r) {
        const double mu = a.row(r).sum() * inv_cols;
        const double var = (a.row(r).array() - mu).square().sum() * inv_cols;
        const double rstd = 1.0 / std::sqrt(var + n.scalar);
        n.cache(r, 0) = rstd;
        out.row(r) = ((a.row(r).array() - mu) * rstd).matrix();
      }
      break;
    }
    case OpKind::smooth_l1:
      out = arg(0).unaryExpr([](double d) {
        const double ad = std::abs(d);
        return ad < 1.0 ? 0.5 * d * d : ad - 0.5;
      });
      break;
    case OpKind::tile_rows: {
      const Tensor& a = arg(0);
      for (Index k = 0; k < n.attr0; ++k) out.middleRows(k * a.rows(), a.rows()) = a;
      break;
    }
    case OpKind::attention: {
      const Tensor& q = arg(0);
      const Tensor& k = arg(1);
      const Tensor& v = arg(2);
      const Index tokens = n.attr0;
      const Index heads = n.attr1;
      const Index dh = q.cols() / heads;
      const Index batch = q.rows() / tokens;
      const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
      Tensor scores(tokens, tokens);
      for (Index b = 0; b < batch; ++b) {
        for (Index h = 0; h < heads; ++h) {
          const auto qb = q.block(b * tokens, h * dh, tokens, dh);
          const auto kb = k.block(b * tokens, h * dh, tokens, dh);
          const auto vb = v.block(b * tokens, h * dh, tokens, dh);
          scores.noalias() = qb * kb.transpose();
          scores *= inv_sqrt;
          auto p = n.cache.middleRows((b * heads + h) * tokens, tokens);
          for (Index r = 0; r < tokens; ++r) {
            const double m = scores.row(r).maxCoeff();
            p.row(r) = (scores.row(r).array() - m).exp().matrix();
            p.row(r) /= p.row(r).sum();
          }
          out.block(b * tokens, h * dh, tokens, dh).noalias() = p * vb;
        }
      }
      break;
    }
    case OpKind::concat_tokens: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      const Index ta = n.attr0;
      const Index tb = n.attr1;
      const Index batch = a.rows() / ta;
      for (Index s = 0; s < batch; ++s) {
        out.middleRows(s * (ta + tb), ta) = a.middleRows(s * ta, ta);
        out.middleRows(s * (ta + tb) + ta, tb) = b.middleRows(s * tb, tb);
      }
      break;
    }
    case OpKind::select_token: {
      const Tensor& a = arg(0);
      for (Index s = 0; s < out.rows(); ++s) out.row(s) = a.row(s * n.attr0 + n.attr1);
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Backward

void Graph::backward(NodeId output) {
  const Node& out = node(output);
  if (out.rows != 1 || out.cols != 1) {
    throw Error(ErrorKind::invalid_input, "backward() needs a scalar output, got " +
                                              shape_str(out.rows, out.cols) + " at " +
                                              describe(output.index));
  }
  if (!evaluated_) {
    throw Error(ErrorKind::invalid_input, "backward() called before forward()");
  }
  for (Node& n : nodes_) {
    n.grad.resize(n.rows, n.cols);
    n.grad.setZero();
  }
  nodes_[output.index].grad(0, 0) = 1.0;
  for (int i = output.index; i >= 0; --i) propagate(i);
}

void Graph::propagate(int index) {
  Node& n = nodes_[index];
  if (n.args.empty()) return;
  const Tensor& g = n.grad;
  auto val = [&](int k) -> const Tensor& { return nodes_[n.args[k]].value; };
  auto gin = [&](int k) -> Tensor& { return nodes_[n.args[k]].grad; };

  switch (n.kind) {
    case OpKind::input:
    case OpKind::constant:
      break;
    case OpKind::matmul:
      gin(0).noalias() += g * val(1).transpose();
      gin(1).noalias() += val(0).transpose() * g;
      break;
    case OpKind::add:
      gin(0) += g;
      if (val(1).rows() == g.rows()) {
        gin(1) += g;
      } else if (val(1).rows() == 1) {
        gin(1).row(0) += g.colwise().sum();
      } else {
        accumulate_blocks(g, val(1).rows(), gin(1));
      }
      break;
    case OpKind::sub:
      gin(0) += g;
      gin(1) -= g;
      break;
    case OpKind::mul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      if (b.rows() == a.rows()) {
        gin(0) += g.cwiseProduct(b);
        gin(1) += g.cwiseProduct(a);
      } else {
        const Index q = b.rows();
        for (Index s = 0; s < a.rows(); s += q) {
          gin(0).middleRows(s, q) += g.middleRows(s, q).cwiseProduct(b);
          gin(1) += g.middleRows(s, q).cwiseProduct(a.middleRows(s, q));
        }
      }
      break;
    }
    case OpKind::scale:
      gin(0) += g * n.scalar;
      break;
    case OpKind::sigmoid:
      gin(0).array() += g.array() * n.value.array() * (1.0 - n.value.array());
      break;
    case OpKind::silu: {
      const auto s = n.cache.array();
      const auto x = val(0).array();
      gin(0).array() += g.array() * (s + x * s * (1.0 - s));
      break;
    }
    case OpKind::softmax: {
      const Tensor& s = n.value;
      for (Index r = 0; r < s.rows(); ++r) {
        const double dot = g.row(r).dot(s.row(r));
        gin(0).row(r).array() += s.row(r).array() * (g.row(r).array() - dot);
      }
      break;
    }
    case OpKind::concat:
      gin(0) += g.leftCols(val(0).cols());
      gin(1) += g.rightCols(val(1).cols());
      break;
    case OpKind::slice:
      gin(0).middleCols(n.attr0, n.attr1) += g;
      break;
    case OpKind::mean:
      gin(0).array() += g(0, 0) / static_cast<double>(val(0).size());
      break;
    case OpKind::layer_norm: {
      const Tensor& xhat = n.value;
      const double inv_cols = 1.0 / static_cast<double>(xhat.cols());
      for (Index r = 0; r < xhat.rows(); ++r) {
        const double mean_g = g.row(r).sum() * inv_cols;
        const double mean_gx = g.row(r).dot(xhat.row(r)) * inv_cols;
        gin(0).row(r).array() +=
            n.cache(r, 0) * (g.row(r).array() - mean_g - xhat.row(r).array() * mean_gx);
      }
      break;
    }
    case OpKind::smooth_l1:
      gin(0).array() += g.array() * val(0).array().unaryExpr([](double d) {
        return std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
      });
      break;
    case OpKind::tile_rows:
      accumulate_blocks(g, val(0).rows(), gin(0));
      break;
    case OpKind::attention: {
      const Tensor& q = val(0);
      const Tensor& k = val(1);
      const Tensor& v = val(2);
      Tensor& gq = gin(0);
      Tensor& gk = gin(1);
      Tensor& gv = gin(2);
      const Index tokens = n.attr0;
      const Index heads = n.attr1;
      const Index dh = q.cols() / heads;
      const Index batch = q.rows() / tokens;
      const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
      Tensor dp(tokens, tokens);
      for (Index b = 0; b < batch; ++b) {
        for (Index h = 0; h < heads; ++h) {
          const auto p = n.cache.middleRows((b * heads + h) * tokens, tokens);
          const auto go = g.block(b * tokens, h * dh, tokens, dh);
          const auto qb = q.block(b * tokens, h * dh, tokens, dh);
          const auto kb = k.block(b * tokens, h * dh, tokens, dh);
          const auto vb = v.block(b * tokens, h * dh, tokens, dh);
          gv.block(b * tokens, h * dh, tokens, dh).noalias() += p.transpose() * go;
          dp.noalias() = go * vb.transpose();
          for (Index r = 0; r < tokens; ++r) {
            const double dot = dp.row(r).dot(p.row(r));
            dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
          }
          dp *= inv_sqrt;
          gq.block(b * tokens, h * dh, tokens, dh).noalias() += dp * kb;
          gk.block(b * tokens, h * dh, tokens, dh).noalias() += dp.transpose() * qb;
        }
      }
      break;
    }
    case OpKind::concat_tokens: {
      const Index ta = n.attr0;
      const Index tb = n.attr1;
      const Index batch = val(0).rows() / ta;
      for (Index s = 0; s < batch; ++s) {
        gin(0).middleRows(s * ta, ta) += g.middleRows(s * (ta + tb), ta);
        gin(1).middleRows(s * tb, tb) += g.middleRows(s * (ta + tb) + ta, tb);
      }
      break;
    }
    case OpKind::select_token:
      for (Index s = 0; s < g.rows(); ++s) gin(0).row(s * n.attr0 + n.attr1) += g.row(s);
      break;
  }
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state,
               double learning_rate) {
  if (!(learning_rate > 0.0)) {
    throw Error(ErrorKind::invalid_input, "learning rate must be positive");
  }
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw Error(ErrorKind::invalid_input, "gradient for unknown parameter '" + name + "'");
    }
    if (it->second.rows() != g.rows() || it->second.cols() != g.cols()) {
      throw Error(ErrorKind::invalid_input, "gradient shape mismatch for '" + name + "'");
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.find(name)->second;
    auto [mit, m_new] = state.first_moment.try_emplace(name, Tensor::Zero(g.rows(), g.cols()));
    auto [vit, v_new] = state.second_moment.try_emplace(name, Tensor::Zero(g.rows(), g.cols()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= learning_rate * (m.array() / bias1) /
                 ((v.array() / bias2).sqrt() + c.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Finite differences

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradientCheckReport finite_difference_check(
    const std::function<double(const TensorMap&)>& loss, TensorMap& params,
    const TensorMap& grads, double h, double tolerance) {
  if (!(h > 0.0)) throw Error(ErrorKind::invalid_input, "finite-difference step must be positive");
  GradientCheckReport report;
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    for (Index r = 0; r < p.rows(); ++r) {
      for (Index c = 0; c < p.cols(); ++c) {
        const double saved = p(r, c);
        p(r, c) = saved + h;
        const double up = loss(params);
        p(r, c) = saved - h;
        const double down = loss(params);
        p(r, c) = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = git == grads.end() ? 0.0 : git->second(r, c);
        const double rel = gradient_relative_error(analytic, numeric);
        report.max_relative_error = std::max(report.max_relative_error, rel);
        ++report.checked;
        if (rel > tolerance) report.flagged.push_back({name, r, c, analytic, numeric, rel});
      }
    }
  }
  return report;
}

}  // namespace nlmot
