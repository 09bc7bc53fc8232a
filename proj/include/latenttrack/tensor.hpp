#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation on a
// define-by-run tape. Rank 0..2 is all the models here need. A Tape and the
// Vars built on it are confined to one thread; independent tapes may run
// concurrently.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lt {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline void shape_check(bool ok, const char* op, const Shape& a, const Shape& b) {
    if (!ok) {
        std::ostringstream msg;
        msg << op << ": shape mismatch " << shape_str(a) << " vs " << shape_str(b);
        throw ShapeError(msg.str());
    }
}

// Persistent value holder: model parameters and any leaf that should receive
// gradients. Gradients accumulate additively across backward() calls until
// zero_grad().
struct Tensor {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, bool rg = false)
        : shape(std::move(s)), data(shape_numel(shape), 0.0), requires_grad(rg) {
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    std::size_t numel() const { return data.size(); }

    void zero_grad() { grad.assign(data.size(), 0.0); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
  public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

    const Shape& shape() const;
    std::span<const double> value() const;
    double scalar() const;
    std::vector<double> to_vector() const {
        auto v = value();
        return {v.begin(), v.end()};
    }

  private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
  public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> adj;                        // sized lazily during backward
        Tensor* leaf = nullptr;                         // set for watched parameter leaves
        bool needs_grad = false;
        std::function<void(Tape&, const Node&)> pull;   // pushes self adjoint to parents
    };

    // Watch a persistent tensor; backward() accumulates into t.grad.
    Var leaf(Tensor& t) {
        Node n;
        n.shape = t.shape;
        n.val = t.data;
        n.leaf = &t;
        n.needs_grad = grad_enabled_ && t.requires_grad;
        if (n.needs_grad) t.ensure_grad();
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<int>(nodes_.size() - 1));
    }

    Var constant(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("constant: value count does not match shape " + shape_str(shape));
        Node n;
        n.shape = std::move(shape);
        n.val = std::move(values);
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<int>(nodes_.size() - 1));
    }

    Var constant_scalar(double v) { return constant(Shape{1}, {v}); }

    Var constant_span(Shape shape, std::span<const double> values) {
        return constant(std::move(shape), std::vector<double>(values.begin(), values.end()));
    }

    // Value-identical node with no history; gradients stop here.
    Var detach(Var v) {
        const Node& src = node(v.id());
        Node n;
        n.shape = src.shape;
        n.val = src.val;
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<int>(nodes_.size() - 1));
    }

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss. Sweep adjoints are local to the call;
    // leaf tensor gradients accumulate across calls until zero_grad().
    void backward(Var loss) {
        if (!grad_enabled_) throw std::logic_error("backward: tape built with gradients disabled");
        if (loss.tape() != this) throw std::logic_error("backward: loss from another tape");
        Node& l = node(loss.id());
        if (l.val.size() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(l.shape));
        for (auto& n : nodes_) n.adj.clear();
        l.adj.assign(1, 1.0);
        for (int i = loss.id(); i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.adj.empty()) continue;
            if (n.leaf != nullptr && n.needs_grad) {
                n.leaf->ensure_grad();
                for (std::size_t j = 0; j < n.adj.size(); ++j) n.leaf->grad[j] += n.adj[j];
            }
            if (n.pull) n.pull(*this, n);
        }
    }

    std::vector<double>& adjoint(int id) {
        Node& n = node(id);
        if (n.adj.empty()) n.adj.assign(n.val.size(), 0.0);
        return n.adj;
    }

    void reset() { nodes_.clear(); }

    Var append_node(Node n) {
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<int>(nodes_.size() - 1));
    }

    Var make(Shape shape, std::vector<double> val, std::initializer_list<Var> parents,
             std::function<void(Tape&, const Node&)> pull) {
        Node n;
        n.shape = std::move(shape);
        n.val = std::move(val);
        bool ng = false;
        for (const Var& p : parents) {
            if (p.tape() != this) throw std::logic_error("op: operands from different tapes");
            ng = ng || node(p.id()).needs_grad;
        }
        n.needs_grad = grad_enabled_ && ng;
        if (n.needs_grad) n.pull = std::move(pull);
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<int>(nodes_.size() - 1));
    }

  private:
    std::vector<Node> nodes_;
    bool grad_enabled_;
};

inline const Shape& Var::shape() const { return tape_->node(id_).shape; }
inline std::span<const double> Var::value() const { return tape_->node(id_).val; }
inline double Var::scalar() const {
    const auto& v = tape_->node(id_).val;
    if (v.size() != 1)
        throw std::invalid_argument("scalar: node has " + std::to_string(v.size()) + " elements");
    return v[0];
}

namespace detail {
inline bool is_scalar(std::span<const double> v) { return v.size() == 1; }
}

// ---------------------------------------------------------------------------
// Primitive operations. Elementwise binaries accept equal shapes or a scalar
// on either side (broadcast-scalar). All define local gradients.
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    Tape& t = *a.tape();
    const auto av = a.value(), bv = b.value();
    const bool sa = detail::is_scalar(av), sb = detail::is_scalar(bv);
    shape_check(av.size() == bv.size() || sa || sb, "add", a.shape(), b.shape());
    std::vector<double> out(std::max(av.size(), bv.size()));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (sa ? av[0] : av[i]) + (sb ? bv[0] : bv[i]);
    const int ia = a.id(), ib = b.id();
    return t.make(sa ? b.shape() : a.shape(), std::move(out), {a, b},
                  [ia, ib, sa, sb](Tape& tp, const Tape::Node& self) {
                      auto& ga = tp.adjoint(ia);
                      auto& gb = tp.adjoint(ib);
                      for (std::size_t i = 0; i < self.adj.size(); ++i) {
                          ga[sa ? 0 : i] += self.adj[i];
                          gb[sb ? 0 : i] += self.adj[i];
                      }
                  });
}

inline Var sub(Var a, Var b) {
    Tape& t = *a.tape();
    const auto av = a.value(), bv = b.value();
    const bool sa = detail::is_scalar(av), sb = detail::is_scalar(bv);
    shape_check(av.size() == bv.size() || sa || sb, "sub", a.shape(), b.shape());
    std::vector<double> out(std::max(av.size(), bv.size()));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (sa ? av[0] : av[i]) - (sb ? bv[0] : bv[i]);
    const int ia = a.id(), ib = b.id();
    return t.make(sa ? b.shape() : a.shape(), std::move(out), {a, b},
                  [ia, ib, sa, sb](Tape& tp, const Tape::Node& self) {
                      auto& ga = tp.adjoint(ia);
                      auto& gb = tp.adjoint(ib);
                      for (std::size_t i = 0; i < self.adj.size(); ++i) {
                          ga[sa ? 0 : i] += self.adj[i];
                          gb[sb ? 0 : i] -= self.adj[i];
                      }
                  });
}

inline Var mul(Var a, Var b) {
    Tape& t = *a.tape();
    const auto av = a.value(), bv = b.value();
    const bool sa = detail::is_scalar(av), sb = detail::is_scalar(bv);
    shape_check(av.size() == bv.size() || sa || sb, "mul", a.shape(), b.shape());
    std::vector<double> out(std::max(av.size(), bv.size()));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (sa ? av[0] : av[i]) * (sb ? bv[0] : bv[i]);
    const int ia = a.id(), ib = b.id();
    return t.make(sa ? b.shape() : a.shape(), std::move(out), {a, b},
                  [ia, ib, sa, sb](Tape& tp, const Tape::Node& self) {
                      const auto& av2 = tp.node(ia).val;
                      const auto& bv2 = tp.node(ib).val;
                      auto& ga = tp.adjoint(ia);
                      auto& gb = tp.adjoint(ib);
                      for (std::size_t i = 0; i < self.adj.size(); ++i) {
                          ga[sa ? 0 : i] += self.adj[i] * (sb ? bv2[0] : bv2[i]);
                          gb[sb ? 0 : i] += self.adj[i] * (sa ? av2[0] : av2[i]);
                      }
                  });
}

// C = A x B for rank-2 operands.
inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape();
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    shape_check(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], "matmul", sa, sb);
    const int m = sa[0], k = sa[1], n = sb[1];
    const auto av = a.value(), bv = b.value();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double aip = av[static_cast<std::size_t>(i) * k + p];
            for (int j = 0; j < n; ++j)
                out[static_cast<std::size_t>(i) * n + j] += aip * bv[static_cast<std::size_t>(p) * n + j];
        }
    const int ia = a.id(), ib = b.id();
    return t.make(Shape{m, n}, std::move(out), {a, b},
                  [ia, ib, m, k, n](Tape& tp, const Tape::Node& self) {
                      const auto& av2 = tp.node(ia).val;
                      const auto& bv2 = tp.node(ib).val;
                      auto& ga = tp.adjoint(ia);
                      auto& gb = tp.adjoint(ib);
                      // dA += G B^T, dB += A^T G
                      for (int i = 0; i < m; ++i)
                          for (int j = 0; j < n; ++j) {
                              const double g = self.adj[static_cast<std::size_t>(i) * n + j];
                              if (g == 0.0) continue;
                              for (int p = 0; p < k; ++p) {
                                  ga[static_cast<std::size_t>(i) * k + p] += g * bv2[static_cast<std::size_t>(p) * n + j];
                                  gb[static_cast<std::size_t>(p) * n + j] += g * av2[static_cast<std::size_t>(i) * k + p];
                              }
                          }
                  });
}

// y = W x for rank-2 W [m,k] and rank-1 x [k].
inline Var matvec(Var w, Var x) {
    Tape& t = *w.tape();
    const Shape& sw = w.shape();
    const Shape& sx = x.shape();
    shape_check(sw.size() == 2 && sx.size() == 1 && sw[1] == sx[0], "matvec", sw, sx);
    const int m = sw[0], k = sw[1];
    const auto wv = w.value(), xv = x.value();
    std::vector<double> out(static_cast<std::size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
        const double* row = wv.data() + static_cast<std::size_t>(i) * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += row[p] * xv[p];
        out[static_cast<std::size_t>(i)] = acc;
    }
    const int iw = w.id(), ix = x.id();
    return t.make(Shape{m}, std::move(out), {w, x},
                  [iw, ix, m, k](Tape& tp, const Tape::Node& self) {
                      const auto& wv2 = tp.node(iw).val;
                      const auto& xv2 = tp.node(ix).val;
                      auto& gw = tp.adjoint(iw);
                      auto& gx = tp.adjoint(ix);
                      for (int i = 0; i < m; ++i) {
                          const double g = self.adj[static_cast<std::size_t>(i)];
                          if (g == 0.0) continue;
                          double* gwrow = gw.data() + static_cast<std::size_t>(i) * k;
                          const double* wrow = wv2.data() + static_cast<std::size_t>(i) * k;
                          for (int p = 0; p < k; ++p) {
                              gwrow[p] += g * xv2[p];
                              gx[static_cast<std::size_t>(p)] += g * wrow[p];
                          }
                      }
                  });
}

namespace detail {

template <class Fwd, class Bwd>
Var unary_op(const char* /*name*/, Var x, Fwd fwd, Bwd dfdx_from_xy) {
    Tape& t = *x.tape();
    const auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    const int ix = x.id();
    return t.make(x.shape(), std::move(out), {x},
                  [ix, dfdx_from_xy](Tape& tp, const Tape::Node& self) {
                      const auto& xv2 = tp.node(ix).val;
                      auto& gx = tp.adjoint(ix);
                      for (std::size_t i = 0; i < self.adj.size(); ++i)
                          gx[i] += self.adj[i] * dfdx_from_xy(xv2[i], self.val[i]);
                  });
}

}  // namespace detail

inline Var sigmoid(Var x) {
    return detail::unary_op(
        "sigmoid", x,
        [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var x) {
    return detail::unary_op("tanh", x, [](double v) { return std::tanh(v); },
                            [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var x) {
    return detail::unary_op("exp", x, [](double v) { return std::exp(v); },
                            [](double, double y) { return y; });
}

inline Var log(Var x) {
    return detail::unary_op("log", x, [](double v) { return std::log(v); },
                            [](double v, double) { return 1.0 / v; });
}

inline Var softplus(Var x) {
    return detail::unary_op(
        "softplus", x,
        [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
        [](double v, double) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

inline Var neg(Var x) {
    return detail::unary_op("neg", x, [](double v) { return -v; },
                            [](double, double) { return -1.0; });
}

// Gradient passes through where lo <= x <= hi and is zero outside.
inline Var clamp(Var x, double lo, double hi) {
    Tape& t = *x.tape();
    const auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(xv[i], lo), hi);
    const int ix = x.id();
    return t.make(x.shape(), std::move(out), {x},
                  [ix, lo, hi](Tape& tp, const Tape::Node& self) {
                      const auto& xv2 = tp.node(ix).val;
                      auto& gx = tp.adjoint(ix);
                      for (std::size_t i = 0; i < self.adj.size(); ++i)
                          if (xv2[i] >= lo && xv2[i] <= hi) gx[i] += self.adj[i];
                  });
}

inline Var add_scalar(Var x, double c) {
    Tape& t = *x.tape();
    const auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + c;
    const int ix = x.id();
    return t.make(x.shape(), std::move(out), {x}, [ix](Tape& tp, const Tape::Node& self) {
        auto& gx = tp.adjoint(ix);
        for (std::size_t i = 0; i < self.adj.size(); ++i) gx[i] += self.adj[i];
    });
}

inline Var mul_scalar(Var x, double c) {
    Tape& t = *x.tape();
    const auto xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
    const int ix = x.id();
    return t.make(x.shape(), std::move(out), {x}, [ix, c](Tape& tp, const Tape::Node& self) {
        auto& gx = tp.adjoint(ix);
        for (std::size_t i = 0; i < self.adj.size(); ++i) gx[i] += c * self.adj[i];
    });
}

inline Var sum(Var x) {
    Tape& t = *x.tape();
    const auto xv = x.value();
    double acc = 0.0;
    for (double v : xv) acc += v;
    const int ix = x.id();
    return t.make(Shape{1}, {acc}, {x}, [ix](Tape& tp, const Tape::Node& self) {
        auto& gx = tp.adjoint(ix);
        for (auto& g : gx) g += self.adj[0];
    });
}

inline Var mean(Var x) {
    Tape& t = *x.tape();
    const auto xv = x.value();
    double acc = 0.0;
    for (double v : xv) acc += v;
    const double inv = 1.0 / static_cast<double>(xv.size());
    const int ix = x.id();
    return t.make(Shape{1}, {acc * inv}, {x}, [ix, inv](Tape& tp, const Tape::Node& self) {
        auto& gx = tp.adjoint(ix);
        for (auto& g : gx) g += self.adj[0] * inv;
    });
}

// Concatenation of rank-1 vectors.
inline Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no operands");
    Tape& t = *parts[0].tape();
    std::vector<double> out;
    std::vector<int> ids;
    std::vector<std::size_t> sizes;
    for (const Var& p : parts) {
        shape_check(p.shape().size() == 1, "concat", p.shape(), Shape{});
        const auto pv = p.value();
        out.insert(out.end(), pv.begin(), pv.end());
        ids.push_back(p.id());
        sizes.push_back(pv.size());
    }
    Tape::Node n;
    n.shape = Shape{static_cast<int>(out.size())};
    n.val = std::move(out);
    bool ng = false;
    for (int id : ids) ng = ng || t.node(id).needs_grad;
    n.needs_grad = t.grad_enabled() && ng;
    if (n.needs_grad)
        n.pull = [ids, sizes](Tape& tp, const Tape::Node& self) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < ids.size(); ++p) {
                auto& g = tp.adjoint(ids[p]);
                for (std::size_t i = 0; i < sizes[p]; ++i) g[i] += self.adj[off + i];
                off += sizes[p];
            }
        };
    return t.append_node(std::move(n));
}

inline Var concat(Var a, Var b) { return concat(std::vector<Var>{a, b}); }

// Contiguous slice of a rank-1 vector.
inline Var slice(Var x, int offset, int len) {
    Tape& t = *x.tape();
    shape_check(x.shape().size() == 1, "slice", x.shape(), Shape{});
    const auto xv = x.value();
    if (offset < 0 || len < 0 || static_cast<std::size_t>(offset + len) > xv.size())
        throw std::invalid_argument("slice: range [" + std::to_string(offset) + "," +
                                    std::to_string(offset + len) + ") out of bounds for " +
                                    shape_str(x.shape()));
    std::vector<double> out(xv.begin() + offset, xv.begin() + offset + len);
    const int ix = x.id();
    return t.make(Shape{len}, std::move(out), {x},
                  [ix, offset](Tape& tp, const Tape::Node& self) {
                      auto& gx = tp.adjoint(ix);
                      for (std::size_t i = 0; i < self.adj.size(); ++i)
                          gx[static_cast<std::size_t>(offset) + i] += self.adj[i];
                  });
}

// Same data, new shape.
inline Var reshape(Var x, Shape shape) {
    Tape& t = *x.tape();
    if (shape_numel(shape) != x.value().size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    const auto xv = x.value();
    const int ix = x.id();
    return t.make(std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                  [ix](Tape& tp, const Tape::Node& self) {
                      auto& gx = tp.adjoint(ix);
                      for (std::size_t i = 0; i < self.adj.size(); ++i) gx[i] += self.adj[i];
                  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var detach(Var v) { return v.tape()->detach(v); }

}  // namespace lt
