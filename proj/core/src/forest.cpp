#include "saecount/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "saecount/errors.hpp"
#include "saecount/log.hpp"
#include "saecount/parallel.hpp"

namespace saecount {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct SplitChoice {
  double decrease = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool found = false;
};

struct NodeTask {
  int node = 0;
  int begin = 0;
  int end = 0;
};

// Per-tree growing scratch. Row weights already fold in bag multiplicity.
// Split-candidate randomness is keyed to (tree token, node row content), so
// a node over unchanged rows draws the same candidates no matter how the
// rest of the tree moved; iterative refits can then reach exact fixed
// points instead of re-randomizing whole trees on any structural change.
struct TreeBuilder {
  const Eigen::MatrixXd& x;
  const Eigen::VectorXd& t;
  const std::vector<double>& weight;      // bag_count * normalized case weight
  const std::vector<std::uint32_t>& mult; // bag multiplicity
  int mtry;
  int min_node_size;
  std::uint64_t tree_token;
  std::vector<int> rows;                   // partitioned in place
  std::vector<std::pair<double, int>> sorted;  // (value, row) per node/feature
  std::vector<int> feature_pool;
  std::vector<TreeNode> nodes;
  std::vector<double>* importance = nullptr;

  TreeBuilder(const Eigen::MatrixXd& x_, const Eigen::VectorXd& t_,
              const std::vector<double>& w_, const std::vector<std::uint32_t>& m_,
              const ForestParams& params, std::uint64_t token)
      : x(x_), t(t_), weight(w_), mult(m_), mtry(params.mtry),
        min_node_size(std::max(1, params.min_node_size)), tree_token(token) {
    feature_pool.resize(static_cast<std::size_t>(x.cols()));
  }

  std::uint64_t node_signature(const NodeTask& task) const {
    std::uint64_t sig = 0x6b79e5a31ULL;
    for (int k = task.begin; k < task.end; ++k) {
      sig += mix64(static_cast<std::uint64_t>(rows[static_cast<std::size_t>(k)]) + 0x51ULL);
    }
    return mix64(sig ^ static_cast<std::uint64_t>(task.end - task.begin));
  }

  void grow() {
    rows.clear();
    for (int i = 0; i < static_cast<int>(mult.size()); ++i) {
      if (mult[static_cast<std::size_t>(i)] > 0) rows.push_back(i);
    }
    nodes.clear();
    nodes.emplace_back();
    std::vector<NodeTask> stack;
    stack.push_back({0, 0, static_cast<int>(rows.size())});
    while (!stack.empty()) {
      const NodeTask task = stack.back();
      stack.pop_back();
      process(task, stack);
    }
  }

  void process(const NodeTask& task, std::vector<NodeTask>& stack) {
    double w_sum = 0.0, wt_sum = 0.0;
    long long count = 0;
    for (int k = task.begin; k < task.end; ++k) {
      const int r = rows[static_cast<std::size_t>(k)];
      w_sum += weight[static_cast<std::size_t>(r)];
      wt_sum += weight[static_cast<std::size_t>(r)] * t(r);
      count += mult[static_cast<std::size_t>(r)];
    }
    double mean;
    if (w_sum > 0.0) {
      mean = wt_sum / w_sum;
    } else {
      // All case weights zero in this node: fall back to the plain mean.
      double s = 0.0;
      for (int k = task.begin; k < task.end; ++k) s += t(rows[static_cast<std::size_t>(k)]);
      mean = task.end > task.begin ? s / (task.end - task.begin) : 0.0;
    }

    TreeNode& node = nodes[static_cast<std::size_t>(task.node)];
    node.value = mean;
    if (count < 2LL * min_node_size || task.end - task.begin < 2) return;

    // Centered impurity: exact zero for constant targets.
    double parent_sse = 0.0;
    for (int k = task.begin; k < task.end; ++k) {
      const int r = rows[static_cast<std::size_t>(k)];
      const double s = t(r) - mean;
      parent_sse += weight[static_cast<std::size_t>(r)] * s * s;
    }
    if (!(parent_sse > 0.0)) return;

    const SplitChoice best = best_split(task, mean, parent_sse, w_sum, count);
    if (!best.found) return;

    const int split_at = partition(task, best);
    const int left_id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    nodes.emplace_back();
    TreeNode& parent = nodes[static_cast<std::size_t>(task.node)];
    parent.feature = best.feature;
    parent.threshold = best.threshold;
    parent.left = left_id;
    parent.right = left_id + 1;
    if (importance) {
      (*importance)[static_cast<std::size_t>(best.feature)] += best.decrease;
    }
    stack.push_back({left_id + 1, split_at, task.end});
    stack.push_back({left_id, task.begin, split_at});
  }

  SplitChoice best_split(const NodeTask& task, double mean, double parent_sse, double w_total,
                         long long count_total) {
    const int p = static_cast<int>(x.cols());
    const int m = std::min(mtry, p);
    // Partial Fisher-Yates, then ascending order so impurity ties resolve
    // to the lowest feature index.
    for (int j = 0; j < p; ++j) feature_pool[static_cast<std::size_t>(j)] = j;
    if (m < p) {
      RngHandle node_rng(tree_token, node_signature(task));
      for (int j = 0; j < m; ++j) {
        const int pick = j + static_cast<int>(node_rng.bounded(static_cast<std::uint64_t>(p - j)));
        std::swap(feature_pool[static_cast<std::size_t>(j)], feature_pool[static_cast<std::size_t>(pick)]);
      }
      std::sort(feature_pool.begin(), feature_pool.begin() + m);
    }

    SplitChoice best;
    for (int jj = 0; jj < m; ++jj) {
      const int f = feature_pool[static_cast<std::size_t>(jj)];
      sorted.clear();
      for (int k = task.begin; k < task.end; ++k) {
        const int r = rows[static_cast<std::size_t>(k)];
        sorted.emplace_back(x(r, f), r);
      }
      std::sort(sorted.begin(), sorted.end());

      double w_left = 0.0, ws_left = 0.0, ws2_left = 0.0;
      long long count_left = 0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        const int r = sorted[i].second;
        const double w = weight[static_cast<std::size_t>(r)];
        const double s = t(r) - mean;
        w_left += w;
        ws_left += w * s;
        ws2_left += w * s * s;
        count_left += mult[static_cast<std::size_t>(r)];
        if (sorted[i].first >= sorted[i + 1].first) continue;
        const long long count_right = count_total - count_left;
        if (count_left < min_node_size || count_right < min_node_size) continue;
        const double w_right = w_total - w_left;
        const double sse_left = w_left > 0.0 ? ws2_left - ws_left * ws_left / w_left : 0.0;
        const double ws_right = -ws_left;  // total centered weighted sum is ~0
        const double ws2_right = parent_sse - ws2_left;
        const double sse_right = w_right > 0.0 ? ws2_right - ws_right * ws_right / w_right : 0.0;
        const double decrease = parent_sse - sse_left - sse_right;
        if (decrease > best.decrease) {
          double thr = sorted[i].first + 0.5 * (sorted[i + 1].first - sorted[i].first);
          if (!(thr > sorted[i].first)) thr = sorted[i + 1].first;
          best.decrease = decrease;
          best.feature = f;
          best.threshold = thr;
          best.found = true;
        }
      }
    }
    return best;
  }

  int partition(const NodeTask& task, const SplitChoice& split) {
    auto begin_it = rows.begin() + task.begin;
    auto end_it = rows.begin() + task.end;
    auto mid = std::partition(begin_it, end_it, [&](int r) {
      return x(r, split.feature) < split.threshold;
    });
    return static_cast<int>(mid - rows.begin());
  }
};

}  // namespace

Forest fit_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                  const Eigen::VectorXd& case_weights, const ForestParams& params, RngHandle rng) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (n == 0) throw validation_error("fit_forest: no training rows");
  if (targets.size() != n) throw validation_error("fit_forest: target length mismatch");
  if (case_weights.size() != n) throw validation_error("fit_forest: weight length mismatch");
  if (params.num_trees <= 0) throw validation_error("fit_forest: num_trees must be positive");
  double w_total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = case_weights(i);
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw validation_error("fit_forest: case weights must be finite and >= 0");
    }
    w_total += w;
  }
  if (!(w_total > 0.0)) throw validation_error("fit_forest: case weights must not all be zero");
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(targets(i))) throw validation_error("fit_forest: non-finite target");
  }

  Forest forest;
  forest.params_ = params;
  if (forest.params_.mtry <= 0) forest.params_.mtry = std::max(1, p / 3);
  forest.p_ = p;
  forest.n_train_ = n;
  forest.train_x_ = x;
  forest.trees_.resize(static_cast<std::size_t>(params.num_trees));
  forest.bags_.resize(static_cast<std::size_t>(params.num_trees));
  forest.importance_ = Eigen::VectorXd::Zero(p);

  // Normalizing the case weights to mean one keeps split decisions, leaf
  // values and importances invariant under rescaling of the weight vector.
  std::vector<double> norm_w(static_cast<std::size_t>(n));
  const double scale = static_cast<double>(n) / w_total;
  for (int i = 0; i < n; ++i) norm_w[static_cast<std::size_t>(i)] = case_weights(i) * scale;

  std::vector<std::vector<double>> tree_importance(
      static_cast<std::size_t>(params.num_trees), std::vector<double>(static_cast<std::size_t>(p), 0.0));

  parallel_for(params.num_trees, params.threads, [&](int tree_idx) {
    RngHandle tree_rng = rng.split(static_cast<std::uint64_t>(tree_idx));
    auto& bag = forest.bags_[static_cast<std::size_t>(tree_idx)];
    bag.assign(static_cast<std::size_t>(n), 0);
    if (forest.params_.bootstrap) {
      for (int i = 0; i < n; ++i) {
        ++bag[tree_rng.bounded(static_cast<std::uint64_t>(n))];
      }
    } else {
      bag.assign(static_cast<std::size_t>(n), 1);
    }

    std::vector<double> row_weight(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      row_weight[static_cast<std::size_t>(i)] =
          static_cast<double>(bag[static_cast<std::size_t>(i)]) * norm_w[static_cast<std::size_t>(i)];
    }

    TreeBuilder builder(x, targets, row_weight, bag, forest.params_, tree_rng.next_u64());
    builder.importance = &tree_importance[static_cast<std::size_t>(tree_idx)];
    builder.grow();
    forest.trees_[static_cast<std::size_t>(tree_idx)] = std::move(builder.nodes);
  });

  for (int tree_idx = 0; tree_idx < params.num_trees; ++tree_idx) {
    for (int f = 0; f < p; ++f) {
      forest.importance_(f) += tree_importance[static_cast<std::size_t>(tree_idx)][static_cast<std::size_t>(f)];
    }
  }
  forest.importance_ /= static_cast<double>(params.num_trees);
  return forest;
}

double Forest::tree_predict(const std::vector<TreeNode>& nodes, const double* x) const {
  int idx = 0;
  for (;;) {
    const TreeNode& node = nodes[static_cast<std::size_t>(idx)];
    if (node.is_leaf()) return node.value;
    idx = x[node.feature] < node.threshold ? node.left : node.right;
  }
}

double Forest::predict_row(const double* x) const {
  if (trees_.empty()) throw validation_error("predict on an unfitted forest");
  double sum = 0.0;
  for (const auto& tree : trees_) sum += tree_predict(tree, x);
  return sum / static_cast<double>(trees_.size());
}

double Forest::predict_row(const Eigen::VectorXd& x) const {
  if (static_cast<int>(x.size()) != p_) {
    throw validation_error("predict_row: expected " + std::to_string(p_) + " features, got " +
                           std::to_string(x.size()));
  }
  return predict_row(x.data());
}

Eigen::VectorXd Forest::predict(const Eigen::MatrixXd& x, int threads) const {
  if (static_cast<int>(x.cols()) != p_) {
    throw validation_error("predict: expected " + std::to_string(p_) + " feature columns, got " +
                           std::to_string(x.cols()));
  }
  const int m = static_cast<int>(x.rows());
  Eigen::VectorXd out(m);
  const int blocks = threads > 1 ? std::min(threads * 8, std::max(1, m)) : 1;
  const int chunk = (m + blocks - 1) / std::max(1, blocks);
  parallel_for(blocks, threads, [&](int b) {
    std::vector<double> row(static_cast<std::size_t>(p_));
    const int lo = b * chunk;
    const int hi = std::min(m, lo + chunk);
    for (int r = lo; r < hi; ++r) {
      for (int j = 0; j < p_; ++j) row[static_cast<std::size_t>(j)] = x(r, j);
      out(r) = predict_row(row.data());
    }
  });
  return out;
}

double Forest::predict_oob(int row) const {
  if (row < 0 || row >= n_train_) throw validation_error("predict_oob: row out of range");
  if (!has_training_data()) throw validation_error("predict_oob needs the fitted training data");
  std::vector<double> xrow(static_cast<std::size_t>(p_));
  for (int j = 0; j < p_; ++j) xrow[static_cast<std::size_t>(j)] = train_x_(row, j);
  double sum = 0.0;
  int used = 0;
  for (std::size_t tr = 0; tr < trees_.size(); ++tr) {
    if (bags_[tr][static_cast<std::size_t>(row)] == 0) {
      sum += tree_predict(trees_[tr], xrow.data());
      ++used;
    }
  }
  if (used == 0) {
    log_event(LogLevel::warn, "oob_fallback", {{"row", row}});
    return predict_row(xrow.data());
  }
  return sum / used;
}

Eigen::VectorXd Forest::oob_predictions() const {
  if (!has_training_data()) throw validation_error("oob_predictions needs the fitted training data");
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(n_train_);
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_train_);
  std::vector<double> xrow(static_cast<std::size_t>(p_));
  for (std::size_t tr = 0; tr < trees_.size(); ++tr) {
    const auto& bag = bags_[tr];
    for (int r = 0; r < n_train_; ++r) {
      if (bag[static_cast<std::size_t>(r)] == 0) {
        for (int j = 0; j < p_; ++j) xrow[static_cast<std::size_t>(j)] = train_x_(r, j);
        sums(r) += tree_predict(trees_[tr], xrow.data());
        counts(r) += 1;
      }
    }
  }
  Eigen::VectorXd out(n_train_);
  int fallbacks = 0;
  for (int r = 0; r < n_train_; ++r) {
    if (counts(r) > 0) {
      out(r) = sums(r) / counts(r);
    } else {
      for (int j = 0; j < p_; ++j) xrow[static_cast<std::size_t>(j)] = train_x_(r, j);
      out(r) = predict_row(xrow.data());
      ++fallbacks;
    }
  }
  if (fallbacks > 0) {
    log_event(LogLevel::warn, "oob_fallback_rows", {{"count", fallbacks}});
  }
  return out;
}

Eigen::VectorXd Forest::variable_importance() const {
  if (trees_.empty()) throw validation_error("variable_importance on an unfitted forest");
  return importance_;
}

std::vector<double> Forest::partial_dependence(int feature, std::span<const double> grid) const {
  if (feature < 0 || feature >= p_) throw validation_error("partial_dependence: feature out of range");
  if (!has_training_data()) throw validation_error("partial_dependence needs the fitted training data");
  std::vector<double> out;
  out.reserve(grid.size());
  std::vector<double> xrow(static_cast<std::size_t>(p_));
  for (double g : grid) {
    if (!std::isfinite(g)) throw validation_error("partial_dependence: grid values must be finite");
    double sum = 0.0;
    for (int r = 0; r < n_train_; ++r) {
      for (int j = 0; j < p_; ++j) xrow[static_cast<std::size_t>(j)] = train_x_(r, j);
      xrow[static_cast<std::size_t>(feature)] = g;
      sum += predict_row(xrow.data());
    }
    out.push_back(sum / static_cast<double>(n_train_));
  }
  return out;
}

Forest Forest::with_targets(const Eigen::VectorXd& targets,
                            const Eigen::VectorXd& case_weights) const {
  if (!has_training_data()) throw validation_error("with_targets needs the fitted training data");
  if (targets.size() != n_train_ || case_weights.size() != n_train_) {
    throw validation_error("with_targets: length mismatch with the training data");
  }
  double w_total = 0.0;
  for (int i = 0; i < n_train_; ++i) {
    if (!(case_weights(i) >= 0.0)) throw validation_error("with_targets: negative case weight");
    w_total += case_weights(i);
  }
  if (!(w_total > 0.0)) throw validation_error("with_targets: case weights must not all be zero");
  const double scale = static_cast<double>(n_train_) / w_total;

  Forest out = *this;
  std::vector<double> xrow(static_cast<std::size_t>(p_));
  std::vector<double> wsum, wtsum, tsum;
  std::vector<int> count;
  for (std::size_t tr = 0; tr < out.trees_.size(); ++tr) {
    auto& nodes = out.trees_[tr];
    const auto& bag = bags_[tr];
    wsum.assign(nodes.size(), 0.0);
    wtsum.assign(nodes.size(), 0.0);
    tsum.assign(nodes.size(), 0.0);
    count.assign(nodes.size(), 0);
    for (int r = 0; r < n_train_; ++r) {
      if (bag[static_cast<std::size_t>(r)] == 0) continue;
      for (int j = 0; j < p_; ++j) xrow[static_cast<std::size_t>(j)] = train_x_(r, j);
      int idx = 0;
      while (!nodes[static_cast<std::size_t>(idx)].is_leaf()) {
        const auto& nd = nodes[static_cast<std::size_t>(idx)];
        idx = xrow[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
      }
      const double w = bag[static_cast<std::size_t>(r)] * case_weights(r) * scale;
      wsum[static_cast<std::size_t>(idx)] += w;
      wtsum[static_cast<std::size_t>(idx)] += w * targets(r);
      tsum[static_cast<std::size_t>(idx)] += bag[static_cast<std::size_t>(r)] * targets(r);
      count[static_cast<std::size_t>(idx)] += bag[static_cast<std::size_t>(r)];
    }
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (!nodes[k].is_leaf()) continue;
      if (wsum[k] > 0.0) {
        nodes[k].value = wtsum[k] / wsum[k];
      } else if (count[k] > 0) {
        nodes[k].value = tsum[k] / count[k];
      }
    }
  }
  return out;
}

Forest forest_from_parts(ForestParams params, int p, std::vector<std::vector<TreeNode>> trees,
                         Eigen::VectorXd importance) {
  Forest forest;
  forest.params_ = params;
  forest.p_ = p;
  forest.trees_ = std::move(trees);
  forest.importance_ = std::move(importance);
  return forest;
}

}  // namespace saecount
