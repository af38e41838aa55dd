#include "fctc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fctc {

ParameterStore::Param& ParameterStore::add(const std::string& name, Mat init) {
  if (entries_.count(name) > 0) {
    throw ConfigError("parameter already registered: " + name);
  }
  Param p;
  p.grad = Mat::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  return entries_.emplace(name, std::move(p)).first->second;
}

ParameterStore::Param& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const ParameterStore::Param& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grads() {
  for (auto& [name, p] : entries_) p.grad.setZero();
}

std::int64_t ParameterStore::count_params() const {
  std::int64_t n = 0;
  for (const auto& [name, p] : entries_) n += p.value.size();
  return n;
}

namespace ag {

const Mat& Node::value() const { return graph->value_of(id); }
const Mat& Node::grad() const { return graph->grad_of(id); }

Node Graph::make(Mat value, std::function<void(Graph&, const Mat&)> back) {
  Rec r;
  r.grad = Mat::Zero(value.rows(), value.cols());
  r.value = std::move(value);
  r.back = std::move(back);
  recs_.push_back(std::move(r));
  return Node{this, static_cast<int>(recs_.size()) - 1};
}

Node Graph::constant(Mat v) { return make(std::move(v), nullptr); }

Node Graph::scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Node Graph::param(ParameterStore& store, const std::string& name) {
  ParameterStore::Param& p = store.at(name);
  auto it = leaf_cache_.find(&p);
  if (it != leaf_cache_.end()) return Node{this, it->second};
  Node n = make(p.value, nullptr);
  leaf_cache_.emplace(&p, n.id);
  bindings_.emplace_back(n.id, &p.grad);
  return n;
}

void Graph::backward(Node loss) {
  if (loss.graph != this) throw DimensionError("backward: node from another graph");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw DimensionError("backward: loss must be scalar");
  }
  for (auto& r : recs_) r.grad.setZero();
  recs_[loss.id].grad(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    if (recs_[id].back) recs_[id].back(*this, recs_[id].grad);
  }
  for (auto& [id, slot] : bindings_) *slot += recs_[id].grad;
}

namespace {

void require_same_graph(Node a, Node b) {
  if (a.graph != b.graph) throw DimensionError("nodes belong to different graphs");
}

// b must either match a's shape or be a 1xC row broadcast over a's rows.
bool is_row_broadcast(Node a, Node b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return false;
  if (b.rows() == 1 && b.cols() == a.cols() && a.rows() > 1) return true;
  throw DimensionError("non-broadcastable shapes");
}

}  // namespace

Node matmul(Node a, Node b) {
  require_same_graph(a, b);
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Mat v = a.value() * b.value();
  int ia = a.id, ib = b.id;
  return a.graph->make(std::move(v), [ia, ib](Graph& g, const Mat& grad) {
    g.grad_of(ia) += grad * g.value_of(ib).transpose();
    g.grad_of(ib) += g.value_of(ia).transpose() * grad;
  });
}

Node transpose(Node a) {
  int ia = a.id;
  return a.graph->make(a.value().transpose(), [ia](Graph& g, const Mat& grad) {
    g.grad_of(ia) += grad.transpose();
  });
}

Node reshape(Node a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.rows() * a.cols()) throw DimensionError("reshape: size mismatch");
  Mat v = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  int ia = a.id;
  return a.graph->make(std::move(v), [ia](Graph& g, const Mat& grad) {
    Mat& pg = g.grad_of(ia);
    pg += Eigen::Map<const Mat>(grad.data(), pg.rows(), pg.cols());
  });
}

Node slice_cols(Node a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 1 || start + n > a.cols()) throw DimensionError("slice_cols: range");
  Mat v = a.value().middleCols(start, n);
  int ia = a.id;
  return a.graph->make(std::move(v), [ia, start, n](Graph& g, const Mat& grad) {
    g.grad_of(ia).middleCols(start, n) += grad;
  });
}

Node slice_rows(Node a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 1 || start + n > a.rows()) throw DimensionError("slice_rows: range");
  Mat v = a.value().middleRows(start, n);
  int ia = a.id;
  return a.graph->make(std::move(v), [ia, start, n](Graph& g, const Mat& grad) {
    g.grad_of(ia).middleRows(start, n) += grad;
  });
}

Node concat_cols(std::span<const Node> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  for (const Node& p : parts) {
    require_same_graph(parts[0], p);
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat v(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index off = 0;
  for (const Node& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id);
    widths.push_back(p.cols());
    off += p.cols();
  }
  return parts[0].graph->make(std::move(v), [ids, widths](Graph& g, const Mat& grad) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      g.grad_of(ids[i]) += grad.middleCols(off, widths[i]);
      off += widths[i];
    }
  });
}

Node concat_rows(std::span<const Node> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty");
  Eigen::Index cols = parts[0].cols(), rows = 0;
  for (const Node& p : parts) {
    require_same_graph(parts[0], p);
    if (p.cols() != cols) throw DimensionError("concat_rows: col mismatch");
    rows += p.rows();
  }
  Mat v(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  Eigen::Index off = 0;
  for (const Node& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    ids.push_back(p.id);
    heights.push_back(p.rows());
    off += p.rows();
  }
  return parts[0].graph->make(std::move(v), [ids, heights](Graph& g, const Mat& grad) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      g.grad_of(ids[i]) += grad.middleRows(off, heights[i]);
      off += heights[i];
    }
  });
}

Node gather(Node a, Eigen::Index r, Eigen::Index c) {
  if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) {
    throw DimensionError("gather: index out of range");
  }
  Mat v(1, 1);
  v(0, 0) = a.value()(r, c);
  int ia = a.id;
  return a.graph->make(std::move(v), [ia, r, c](Graph& g, const Mat& grad) {
    g.grad_of(ia)(r, c) += grad(0, 0);
  });
}

Node channels_to_rows(Node a, Eigen::Index h, Eigen::Index w) {
  const Eigen::Index c = a.rows();
  if (a.cols() != h * w) throw DimensionError("channels_to_rows: plane size mismatch");
  Mat v(h, c * w);
  for (Eigen::Index ci = 0; ci < c; ++ci) {
    for (Eigen::Index hi = 0; hi < h; ++hi) {
      v.block(hi, ci * w, 1, w) = a.value().block(ci, hi * w, 1, w);
    }
  }
  int ia = a.id;
  return a.graph->make(std::move(v), [ia, h, w, c](Graph& g, const Mat& grad) {
    Mat& pg = g.grad_of(ia);
    for (Eigen::Index ci = 0; ci < c; ++ci) {
      for (Eigen::Index hi = 0; hi < h; ++hi) {
        pg.block(ci, hi * w, 1, w) += grad.block(hi, ci * w, 1, w);
      }
    }
  });
}

Node add(Node a, Node b) {
  require_same_graph(a, b);
  const bool bc = is_row_broadcast(a, b);
  Mat v = bc ? Mat(a.value().rowwise() + b.value().row(0)) : Mat(a.value() + b.value());
  int ia = a.id, ib = b.id;
  return a.graph->make(std::move(v), [ia, ib, bc](Graph& g, const Mat& grad) {
    g.grad_of(ia) += grad;
    if (bc) {
      g.grad_of(ib).row(0) += grad.colwise().sum();
    } else {
      g.grad_of(ib) += grad;
    }
  });
}

Node sub(Node a, Node b) {
  require_same_graph(a, b);
  const bool bc = is_row_broadcast(a, b);
  Mat v = bc ? Mat(a.value().rowwise() - b.value().row(0)) : Mat(a.value() - b.value());
  int ia = a.id, ib = b.id;
  return a.graph->make(std::move(v), [ia, ib, bc](Graph& g, const Mat& grad) {
    g.grad_of(ia) += grad;
    if (bc) {
      g.grad_of(ib).row(0) -= grad.colwise().sum();
    } else {
      g.grad_of(ib) -= grad;
    }
  });
}

Node mul(Node a, Node b) {
  require_same_graph(a, b);
  const bool bc = is_row_broadcast(a, b);
  Mat v = bc ? Mat(a.value().array().rowwise() * b.value().row(0).array())
             : Mat(a.value().array() * b.value().array());
  int ia = a.id, ib = b.id;
  return a.graph->make(std::move(v), [ia, ib, bc](Graph& g, const Mat& grad) {
    const Mat& av = g.value_of(ia);
    const Mat& bv = g.value_of(ib);
    if (bc) {
      g.grad_of(ia) += (grad.array().rowwise() * bv.row(0).array()).matrix();
      g.grad_of(ib).row(0) += (grad.array() * av.array()).colwise().sum().matrix();
    } else {
      g.grad_of(ia) += (grad.array() * bv.array()).matrix();
      g.grad_of(ib) += (grad.array() * av.array()).matrix();
    }
  });
}

Node scale(Node a, double c) {
  int ia = a.id;
  return a.graph->make(a.value() * c, [ia, c](Graph& g, const Mat& grad) {
    g.grad_of(ia) += grad * c;
  });
}

namespace {

template <class Fwd, class Bwd>
Node unary(Node a, Fwd fwd, Bwd bwd) {
  // bwd(parent_value, out_value, grad) -> matrix added to parent grad
  Mat v = fwd(a.value());
  Graph* g = a.graph;
  int ia = a.id;
  int iout = g->size();  // id the new node will get
  return g->make(std::move(v), [ia, iout, bwd](Graph& gg, const Mat& grad) {
    gg.grad_of(ia) += bwd(gg.value_of(ia), gg.value_of(iout), grad);
  });
}

}  // namespace

Node sigmoid(Node a) {
  return unary(
      a,
      [](const Mat& x) { return Mat((1.0 / (1.0 + (-x.array()).exp())).matrix()); },
      [](const Mat&, const Mat& y, const Mat& grad) {
        return Mat((grad.array() * y.array() * (1.0 - y.array())).matrix());
      });
}

Node tanh_n(Node a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.array().tanh()); },
      [](const Mat&, const Mat& y, const Mat& grad) {
        return Mat((grad.array() * (1.0 - y.array().square())).matrix());
      });
}

Node relu(Node a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.cwiseMax(0.0)); },
      [](const Mat& x, const Mat&, const Mat& grad) {
        return Mat((grad.array() * (x.array() > 0.0).cast<double>()).matrix());
      });
}

Node swish(Node a) {
  return unary(
      a,
      [](const Mat& x) {
        return Mat((x.array() / (1.0 + (-x.array()).exp())).matrix());
      },
      [](const Mat& x, const Mat&, const Mat& grad) {
        Eigen::ArrayXXd s = 1.0 / (1.0 + (-x.array()).exp());
        return Mat((grad.array() * (s + x.array() * s * (1.0 - s))).matrix());
      });
}

Node exp_n(Node a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.array().exp().matrix()); },
      [](const Mat&, const Mat& y, const Mat& grad) {
        return Mat((grad.array() * y.array()).matrix());
      });
}

Node log_n(Node a) {
  return unary(
      a, [](const Mat& x) { return Mat(x.array().log().matrix()); },
      [](const Mat& x, const Mat&, const Mat& grad) {
        return Mat((grad.array() / x.array()).matrix());
      });
}

Node sum(Node a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  int ia = a.id;
  return a.graph->make(std::move(v), [ia](Graph& g, const Mat& grad) {
    g.grad_of(ia).array() += grad(0, 0);
  });
}

Node softmax_rows(Node x) {
  if (x.cols() < 1) throw DimensionError("softmax_rows: empty rows");
  Mat v(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.value().row(r).maxCoeff();
    Eigen::ArrayXd e = (x.value().row(r).array() - m).exp();
    v.row(r) = (e / e.sum()).matrix();
  }
  int ix = x.id;
  Graph* g = x.graph;
  int iout = g->size();
  return g->make(std::move(v), [ix, iout](Graph& gg, const Mat& grad) {
    const Mat& y = gg.value_of(iout);
    Mat& pg = gg.grad_of(ix);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = grad.row(r).dot(y.row(r));
      pg.row(r) += (y.row(r).array() * (grad.row(r).array() - dot)).matrix();
    }
  });
}

Node layer_norm(Node x, Node gain, Node bias) {
  require_same_graph(x, gain);
  require_same_graph(x, bias);
  const Eigen::Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain/bias must be 1xD");
  }
  constexpr double kEps = 1e-12;
  Mat xhat(x.rows(), d);
  Eigen::ArrayXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    Eigen::ArrayXd c = x.value().row(r).array() - mu;
    const double var = c.square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kEps);
    xhat.row(r) = (c * inv_std(r)).matrix();
  }
  Mat v = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  v.rowwise() += bias.value().row(0);
  int ix = x.id, igain = gain.id, ibias = bias.id;
  return x.graph->make(
      std::move(v), [ix, igain, ibias, xhat, inv_std](Graph& g, const Mat& grad) {
        const Eigen::Index d = xhat.cols();
        using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;
        const RowArr gain_row = g.value_of(igain).row(0).array();
        Mat& xg = g.grad_of(ix);
        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
          const RowArr dxhat = grad.row(r).array() * gain_row;
          const RowArr xh = xhat.row(r).array();
          const double m1 = dxhat.mean();
          const double m2 = (dxhat * xh).mean();
          xg.row(r) += (inv_std(r) * (dxhat - m1 - xh * m2)).matrix();
        }
        g.grad_of(igain).row(0) +=
            (grad.array() * xhat.array()).colwise().sum().matrix();
        g.grad_of(ibias).row(0) += grad.colwise().sum();
        (void)d;
      });
}

Node logsumexp(std::span<const Node> xs) {
  if (xs.empty()) throw DimensionError("logsumexp: empty");
  Graph* g = xs[0].graph;
  double m = -std::numeric_limits<double>::infinity();
  for (const Node& x : xs) {
    require_same_graph(xs[0], x);
    if (x.rows() != 1 || x.cols() != 1) throw DimensionError("logsumexp: scalars only");
    m = std::max(m, x.value()(0, 0));
  }
  Mat v(1, 1);
  std::vector<int> ids;
  for (const Node& x : xs) ids.push_back(x.id);
  if (std::isinf(m) && m < 0) {
    v(0, 0) = m;
    return g->make(std::move(v), nullptr);  // all -inf: no gradient path
  }
  double s = 0.0;
  for (const Node& x : xs) s += std::exp(x.value()(0, 0) - m);
  v(0, 0) = m + std::log(s);
  Graph* gr = g;
  int iout = gr->size();
  return gr->make(std::move(v), [ids, iout](Graph& gg, const Mat& grad) {
    const double out = gg.value_of(iout)(0, 0);
    for (int id : ids) {
      const double x = gg.value_of(id)(0, 0);
      if (std::isinf(x) && x < 0) continue;
      gg.grad_of(id)(0, 0) += grad(0, 0) * std::exp(x - out);
    }
  });
}

Node dropout(Node a, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (!train || rate == 0.0) return a;
  Mat mask(a.rows(), a.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) {
      mask(r, c) = rng.uniform() >= rate ? keep_scale : 0.0;
    }
  }
  Node m = a.graph->constant(std::move(mask));
  return mul(a, m);
}

Node conv2d_s2(Node input, Eigen::Index h, Eigen::Index w, Node weight, Node bias) {
  require_same_graph(input, weight);
  require_same_graph(input, bias);
  const Eigen::Index cin = input.rows();
  if (input.cols() != h * w) throw DimensionError("conv2d_s2: input plane size mismatch");
  if (h < 3 || w < 3) throw DimensionError("conv2d_s2: plane too small for 3x3 kernel");
  const Eigen::Index cout = weight.rows();
  if (weight.cols() != cin * 9) throw DimensionError("conv2d_s2: weight shape");
  if (bias.rows() != 1 || bias.cols() != cout) throw DimensionError("conv2d_s2: bias shape");
  const Eigen::Index oh = (h - 3) / 2 + 1;
  const Eigen::Index ow = (w - 3) / 2 + 1;
  Mat v(cout, oh * ow);
  const Mat& in = input.value();
  const Mat& wt = weight.value();
  for (Eigen::Index co = 0; co < cout; ++co) {
    for (Eigen::Index oy = 0; oy < oh; ++oy) {
      for (Eigen::Index ox = 0; ox < ow; ++ox) {
        double acc = bias.value()(0, co);
        for (Eigen::Index ci = 0; ci < cin; ++ci) {
          for (Eigen::Index ky = 0; ky < 3; ++ky) {
            for (Eigen::Index kx = 0; kx < 3; ++kx) {
              acc += in(ci, (2 * oy + ky) * w + 2 * ox + kx) * wt(co, ci * 9 + ky * 3 + kx);
            }
          }
        }
        v(co, oy * ow + ox) = acc;
      }
    }
  }
  int ii = input.id, iw = weight.id, ib = bias.id;
  return input.graph->make(
      std::move(v), [ii, iw, ib, h, w, oh, ow, cin, cout](Graph& g, const Mat& grad) {
        const Mat& in = g.value_of(ii);
        const Mat& wt = g.value_of(iw);
        Mat& ig = g.grad_of(ii);
        Mat& wg = g.grad_of(iw);
        Mat& bg = g.grad_of(ib);
        for (Eigen::Index co = 0; co < cout; ++co) {
          for (Eigen::Index oy = 0; oy < oh; ++oy) {
            for (Eigen::Index ox = 0; ox < ow; ++ox) {
              const double go = grad(co, oy * ow + ox);
              if (go == 0.0) continue;
              bg(0, co) += go;
              for (Eigen::Index ci = 0; ci < cin; ++ci) {
                for (Eigen::Index ky = 0; ky < 3; ++ky) {
                  for (Eigen::Index kx = 0; kx < 3; ++kx) {
                    const Eigen::Index ip = (2 * oy + ky) * w + 2 * ox + kx;
                    ig(ci, ip) += go * wt(co, ci * 9 + ky * 3 + kx);
                    wg(co, ci * 9 + ky * 3 + kx) += go * in(ci, ip);
                  }
                }
              }
            }
          }
        }
      });
}

Node depthwise_conv1d(Node x, Node weight, Node bias) {
  require_same_graph(x, weight);
  require_same_graph(x, bias);
  const Eigen::Index t = x.rows(), c = x.cols(), k = weight.rows();
  if (k % 2 == 0) throw DimensionError("depthwise_conv1d: kernel must be odd");
  if (weight.cols() != c) throw DimensionError("depthwise_conv1d: channel mismatch");
  if (bias.rows() != 1 || bias.cols() != c) throw DimensionError("depthwise_conv1d: bias shape");
  const Eigen::Index pad = k / 2;
  Mat v = Mat::Zero(t, c);
  const Mat& xv = x.value();
  const Mat& wv = weight.value();
  for (Eigen::Index ti = 0; ti < t; ++ti) {
    for (Eigen::Index ki = 0; ki < k; ++ki) {
      const Eigen::Index src = ti + ki - pad;
      if (src < 0 || src >= t) continue;
      v.row(ti).array() += xv.row(src).array() * wv.row(ki).array();
    }
    v.row(ti) += bias.value().row(0);
  }
  int ix = x.id, iw = weight.id, ib = bias.id;
  return x.graph->make(std::move(v), [ix, iw, ib, t, k, pad](Graph& g, const Mat& grad) {
    const Mat& xv = g.value_of(ix);
    const Mat& wv = g.value_of(iw);
    Mat& xg = g.grad_of(ix);
    Mat& wg = g.grad_of(iw);
    Mat& bg = g.grad_of(ib);
    for (Eigen::Index ti = 0; ti < t; ++ti) {
      for (Eigen::Index ki = 0; ki < k; ++ki) {
        const Eigen::Index src = ti + ki - pad;
        if (src < 0 || src >= t) continue;
        xg.row(src).array() += grad.row(ti).array() * wv.row(ki).array();
        wg.row(ki).array() += grad.row(ti).array() * xv.row(src).array();
      }
      bg.row(0) += grad.row(ti);
    }
  });
}

}  // namespace ag
}  // namespace fctc
