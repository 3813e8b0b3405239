#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "saecount/rng.hpp"

namespace saecount {

struct ForestParams {
  int num_trees = 500;
  int mtry = 0;  // 0: max(1, p/3)
  int min_node_size = 5;
  bool bootstrap = true;  // false: bag = identity (every row once)
  int threads = 1;
};

// Flat node record; feature == -1 marks a leaf. Leaf value is the
// case-weighted mean of the training targets routed there.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
};

// Bagged regression forest with per-tree bag membership for out-of-bag
// prediction. Immutable once fitted; shareable across threads.
class Forest {
 public:
  Forest() = default;

  int num_trees() const { return static_cast<int>(trees_.size()); }
  int num_features() const { return p_; }
  int num_training_rows() const { return n_train_; }
  bool has_training_data() const { return train_x_.size() > 0; }

  double predict_row(const double* x) const;
  double predict_row(const Eigen::VectorXd& x) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x, int threads = 1) const;

  // Mean over trees whose bag excludes the row; falls back to the in-bag
  // prediction (with a warning event) when no tree excludes it.
  double predict_oob(int row) const;
  Eigen::VectorXd oob_predictions() const;

  // Per-feature impurity decrease summed over splits, averaged over trees.
  Eigen::VectorXd variable_importance() const;

  // Mean prediction over the training rows with `feature` overwritten by
  // each grid value. Needs the retained training covariates.
  std::vector<double> partial_dependence(int feature, std::span<const double> grid) const;

  // Same tree structures with leaf values recomputed from new targets and
  // case weights over the stored training rows and bags. Used by the
  // iterative fitters: once the partition is learned, value-only updates
  // make the alternation a fixed linear map with an exact fixed point.
  Forest with_targets(const Eigen::VectorXd& targets, const Eigen::VectorXd& case_weights) const;

  // Versioned JSON artifact (structure only: training data and bags are
  // not persisted, so a deserialized forest supports predict/importance).
  std::string to_json() const;
  static Forest from_json(std::string_view text);

  const std::vector<std::vector<TreeNode>>& trees() const { return trees_; }
  const std::vector<std::vector<std::uint32_t>>& bag_counts() const { return bags_; }
  const ForestParams& params() const { return params_; }

 private:
  friend Forest fit_forest(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                           const Eigen::VectorXd&, const ForestParams&, RngHandle);
  friend Forest forest_from_parts(ForestParams, int, std::vector<std::vector<TreeNode>>,
                                  Eigen::VectorXd);

  double tree_predict(const std::vector<TreeNode>& nodes, const double* x) const;

  ForestParams params_;
  int p_ = 0;
  int n_train_ = 0;
  std::vector<std::vector<TreeNode>> trees_;
  std::vector<std::vector<std::uint32_t>> bags_;  // per tree: bag multiplicity per row
  Eigen::MatrixXd train_x_;
  Eigen::VectorXd importance_;
};

// Grows `params.num_trees` CART trees on weighted bootstrap resamples.
// Splits minimize the case-weighted sum-of-squares impurity over `mtry`
// randomly chosen features; thresholds sit at midpoints between sorted
// distinct values; impurity ties break toward the lowest feature index,
// then the smallest threshold. Per-tree RNG streams are derived from
// (rng, tree index), so parallel fits are bit-identical to serial ones.
Forest fit_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                  const Eigen::VectorXd& case_weights, const ForestParams& params, RngHandle rng);

// Rebuilds a forest from deserialized parts (no training data, no bags).
Forest forest_from_parts(ForestParams params, int p, std::vector<std::vector<TreeNode>> trees,
                         Eigen::VectorXd importance);

}  // namespace saecount
