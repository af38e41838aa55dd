#ifndef FCTC_GRAPH_HPP
#define FCTC_GRAPH_HPP

#include "fctc/common.hpp"

#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fctc {

/// Flat named collection of trainable tensors with gradient slots.
/// A parameter shared across several use sites (the folded encoder block,
/// the vocabulary projection) is registered under a single name; every
/// graph that reads it accumulates gradients into the one slot.
class ParameterStore {
 public:
  struct Param {
    Mat value;
    Mat grad;
  };

  Param& add(const std::string& name, Mat init);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }

  void zero_grads();

  /// Trainable scalar count, each storage slot counted once.
  std::int64_t count_params() const;

  // std::map keeps iteration lexicographic by name.
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, Param> entries_;
};

namespace ag {

class Graph;

/// Handle to a value on a Graph's tape.
struct Node {
  Graph* graph = nullptr;
  int id = -1;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// Dynamic tape rebuilt per forward pass. Creation order is topological
/// order, so the backward sweep is a reverse walk over the tape.
class Graph {
 public:
  Node constant(Mat v);
  Node scalar(double v);

  /// Leaf node for a named parameter. Cached per graph: repeated reads of
  /// the same parameter return the same node, which is what makes gradient
  /// accumulation across shared use sites automatic.
  Node param(ParameterStore& store, const std::string& name);

  /// Reverse sweep from a scalar loss. Internal grads are reset first, then
  /// leaf grads are added into their ParameterStore slots, so calling this
  /// twice without zeroing the store doubles the stored gradients.
  void backward(Node loss);

  int size() const { return static_cast<int>(recs_.size()); }

  // Internal use by op implementations.
  Node make(Mat value, std::function<void(Graph&, const Mat&)> back);
  const Mat& value_of(int id) const { return recs_[id].value; }
  Mat& grad_of(int id) { return recs_[id].grad; }

 private:
  struct Rec {
    Mat value;
    Mat grad;
    std::function<void(Graph&, const Mat&)> back;  // null for leaves
  };
  std::vector<Rec> recs_;
  std::vector<std::pair<int, Mat*>> bindings_;  // leaf id -> store grad slot
  std::unordered_map<const void*, int> leaf_cache_;
};

// --- Structural ops ---------------------------------------------------------

Node matmul(Node a, Node b);
Node transpose(Node a);
Node reshape(Node a, Eigen::Index rows, Eigen::Index cols);  // row-major
Node slice_cols(Node a, Eigen::Index start, Eigen::Index n);
Node slice_rows(Node a, Eigen::Index start, Eigen::Index n);
Node concat_cols(std::span<const Node> parts);
Node concat_rows(std::span<const Node> parts);
Node gather(Node a, Eigen::Index r, Eigen::Index c);  // 1x1 element pick

/// Reorder C x (H*W) channel planes into H rows of concatenated per-channel
/// W-slices: out(h, c*W + w) = in(c, h*W + w). Used to turn conv feature
/// maps into time-major frames.
Node channels_to_rows(Node a, Eigen::Index h, Eigen::Index w);

// --- Elementwise ops (b may be a 1xC row broadcast over a's rows) -----------

Node add(Node a, Node b);
Node sub(Node a, Node b);
Node mul(Node a, Node b);
Node scale(Node a, double c);
Node sigmoid(Node a);
Node tanh_n(Node a);
Node relu(Node a);
Node swish(Node a);
Node exp_n(Node a);
Node log_n(Node a);

// --- Reductions and normalizations ------------------------------------------

Node sum(Node a);  // 1x1
Node softmax_rows(Node a);
Node layer_norm(Node x, Node gain, Node bias);  // gain/bias are 1xD

/// log(sum(exp(x_i))) over scalar nodes; -inf inputs are short-circuited.
Node logsumexp(std::span<const Node> xs);

// --- Stochastic / convolutional ops -----------------------------------------

/// Inverted-scaling dropout; identity when train is false or rate is 0.
Node dropout(Node a, double rate, Rng& rng, bool train);

/// 3x3, stride 2, valid padding. Input is Cin x (H*W) row-major planes,
/// weight Cout x (Cin*9), bias 1 x Cout. Output Cout x (H'*W') with
/// H' = floor((H-1)/2), W' = floor((W-1)/2).
Node conv2d_s2(Node input, Eigen::Index h, Eigen::Index w, Node weight, Node bias);

/// Per-channel 1-D convolution over time with same padding.
/// x is T x C, weight K x C (K odd), bias 1 x C.
Node depthwise_conv1d(Node x, Node weight, Node bias);

}  // namespace ag
}  // namespace fctc

#endif  // FCTC_GRAPH_HPP
