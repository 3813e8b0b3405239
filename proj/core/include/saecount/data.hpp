#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace saecount {

// One unit row: area label, count outcome (absent for census prediction
// rows), covariate vector.
struct UnitData {
  std::int64_t domain_id = 0;
  std::optional<double> y;  // nonnegative integral count when present
  Eigen::VectorXd x;
};

// Maps each domain id to the row positions holding its units. Ids are kept
// in ascending order so every per-domain iteration in the library is
// deterministic.
class DomainIndex {
 public:
  DomainIndex() = default;
  explicit DomainIndex(const std::vector<std::int64_t>& domain_of_row);

  int num_domains() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::int64_t>& ids() const { return ids_; }
  bool contains(std::int64_t id) const { return pos_.count(id) > 0; }
  // Position of `id` in ids(), or -1.
  int position(std::int64_t id) const;
  const std::vector<int>& rows(std::int64_t id) const;
  const std::vector<int>& rows_at(int position) const { return rows_[position]; }
  // Number of units in the domain; 0 when the id is unknown.
  int size(std::int64_t id) const;

 private:
  std::vector<std::int64_t> ids_;
  std::vector<std::vector<int>> rows_;
  std::unordered_map<std::int64_t, int> pos_;
};

// Columnar storage shared by Population and Sample. Immutable after
// construction; safe to share across concurrent readers.
class UnitFrame {
 public:
  int n() const { return static_cast<int>(domain_.size()); }
  int p() const { return static_cast<int>(x_.cols()); }
  bool has_outcome() const { return !y_.empty(); }

  const std::vector<std::int64_t>& domains() const { return domain_; }
  const std::vector<double>& outcomes() const { return y_; }
  const Eigen::MatrixXd& covariates() const { return x_; }
  const std::vector<std::string>& covariate_names() const { return names_; }
  const DomainIndex& index() const { return index_; }

  UnitData unit(int row) const;

 protected:
  UnitFrame(std::vector<std::int64_t> domain, std::vector<double> y, Eigen::MatrixXd x,
            std::vector<std::string> names, bool outcome_required);
  ~UnitFrame() = default;

 private:
  std::vector<std::int64_t> domain_;
  std::vector<double> y_;  // empty when the frame has no outcome column
  Eigen::MatrixXd x_;      // n x p
  std::vector<std::string> names_;
  DomainIndex index_;
};

// Census-side container: covariates known for every unit, outcome optional
// (present for design-based simulation censuses).
class Population : public UnitFrame {
 public:
  Population(std::vector<std::int64_t> domain, Eigen::MatrixXd x, std::vector<std::string> names,
             std::vector<double> y = {})
      : UnitFrame(std::move(domain), std::move(y), std::move(x), std::move(names),
                  /*outcome_required=*/false) {}

  // N_i; 0 for unknown ids.
  int domain_size(std::int64_t id) const { return index().size(id); }
};

// Survey-side container: outcome present for every unit.
class Sample : public UnitFrame {
 public:
  Sample(std::vector<std::int64_t> domain, Eigen::MatrixXd x, std::vector<std::string> names,
         std::vector<double> y)
      : UnitFrame(std::move(domain), std::move(y), std::move(x), std::move(names),
                  /*outcome_required=*/true) {}

  // n_i; 0 for domains absent from the sample (out-of-sample areas).
  int domain_size(std::int64_t id) const { return index().size(id); }
};

// Checks the pairing invariants: every sample domain occurs in the
// population, n_i <= N_i, and the covariate layouts agree. Throws
// validation_error with the offending domain or column.
void validate_sample_against_population(const Sample& sample, const Population& population);

}  // namespace saecount
