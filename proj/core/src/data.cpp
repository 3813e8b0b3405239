#include "saecount/data.hpp"

#include <algorithm>
#include <cmath>

#include "saecount/errors.hpp"

namespace saecount {

DomainIndex::DomainIndex(const std::vector<std::int64_t>& domain_of_row) {
  ids_ = domain_of_row;
  std::sort(ids_.begin(), ids_.end());
  ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
  rows_.resize(ids_.size());
  pos_.reserve(ids_.size());
  for (int d = 0; d < static_cast<int>(ids_.size()); ++d) pos_[ids_[d]] = d;
  for (int r = 0; r < static_cast<int>(domain_of_row.size()); ++r) {
    rows_[pos_.at(domain_of_row[r])].push_back(r);
  }
}

int DomainIndex::position(std::int64_t id) const {
  auto it = pos_.find(id);
  return it == pos_.end() ? -1 : it->second;
}

const std::vector<int>& DomainIndex::rows(std::int64_t id) const {
  auto it = pos_.find(id);
  if (it == pos_.end()) throw validation_error("unknown domain id " + std::to_string(id));
  return rows_[it->second];
}

int DomainIndex::size(std::int64_t id) const {
  auto it = pos_.find(id);
  return it == pos_.end() ? 0 : static_cast<int>(rows_[it->second].size());
}

UnitFrame::UnitFrame(std::vector<std::int64_t> domain, std::vector<double> y, Eigen::MatrixXd x,
                     std::vector<std::string> names, bool outcome_required)
    : domain_(std::move(domain)), y_(std::move(y)), x_(std::move(x)), names_(std::move(names)) {
  const auto n = domain_.size();
  if (static_cast<std::size_t>(x_.rows()) != n) {
    throw validation_error("covariate matrix has " + std::to_string(x_.rows()) +
                           " rows for " + std::to_string(n) + " units");
  }
  if (!names_.empty() && static_cast<int>(names_.size()) != x_.cols()) {
    throw validation_error("covariate name count does not match covariate columns");
  }
  if (names_.empty()) {
    names_.reserve(static_cast<std::size_t>(x_.cols()));
    for (int j = 0; j < x_.cols(); ++j) names_.push_back("x" + std::to_string(j + 1));
  }
  if (outcome_required && y_.size() != n) {
    throw validation_error("outcome required for every unit; got " + std::to_string(y_.size()) +
                           " of " + std::to_string(n));
  }
  if (!y_.empty()) {
    if (y_.size() != n) throw validation_error("outcome vector length does not match unit count");
    for (std::size_t i = 0; i < y_.size(); ++i) {
      const double v = y_[i];
      if (!std::isfinite(v) || v < 0.0 || std::floor(v) != v) {
        throw validation_error("outcome must be a nonnegative integer; row " +
                               std::to_string(i + 1) + " has " + std::to_string(v));
      }
    }
  }
  index_ = DomainIndex(domain_);
}

UnitData UnitFrame::unit(int row) const {
  UnitData u;
  u.domain_id = domain_[static_cast<std::size_t>(row)];
  if (has_outcome()) u.y = y_[static_cast<std::size_t>(row)];
  u.x = x_.row(row);
  return u;
}

void validate_sample_against_population(const Sample& sample, const Population& population) {
  if (sample.p() != population.p()) {
    throw validation_error("sample has " + std::to_string(sample.p()) +
                           " covariates, population has " + std::to_string(population.p()));
  }
  for (int j = 0; j < sample.p(); ++j) {
    if (sample.covariate_names()[static_cast<std::size_t>(j)] !=
        population.covariate_names()[static_cast<std::size_t>(j)]) {
      throw validation_error("covariate column " + std::to_string(j + 1) +
                             " name mismatch: sample '" +
                             sample.covariate_names()[static_cast<std::size_t>(j)] +
                             "' vs population '" +
                             population.covariate_names()[static_cast<std::size_t>(j)] + "'");
    }
  }
  for (std::int64_t id : sample.index().ids()) {
    const int n_i = sample.domain_size(id);
    const int cap = population.domain_size(id);
    if (cap == 0) {
      throw validation_error("sample domain " + std::to_string(id) + " missing from population");
    }
    if (n_i > cap) {
      throw validation_error("domain " + std::to_string(id) + " has n_i = " + std::to_string(n_i) +
                             " > N_i = " + std::to_string(cap));
    }
  }
}

}  // namespace saecount
