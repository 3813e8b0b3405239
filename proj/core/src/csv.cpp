#include "saecount/csv.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "saecount/errors.hpp"

namespace saecount {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

double parse_double(const std::string& cell, const std::string& col, std::size_t row) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first < last && *first == ' ') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw parse_error("column '" + col + "', row " + std::to_string(row) +
                      ": cannot parse '" + cell + "' as a number");
  }
  return v;
}

struct ParsedFile {
  std::vector<std::int64_t> domain;
  std::vector<double> y;
  Eigen::MatrixXd x;
  std::vector<std::string> names;
};

ParsedFile parse_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path + "'");

  std::string line;
  bool have_header = false;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> data;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      header = split_line(line);
      have_header = true;
    } else {
      data.push_back(split_line(line));
    }
  }
  if (!have_header) throw io_error("'" + path + "' is empty");

  auto column_of = [&](const std::string& name) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return static_cast<int>(j);
    }
    throw schema_error("column '" + name + "' not found in '" + path + "'");
  };

  const int dom_col = column_of(schema.domain_col);
  const int out_col = schema.outcome_col ? column_of(*schema.outcome_col) : -1;
  std::vector<int> cov_cols;
  cov_cols.reserve(schema.covariate_cols.size());
  for (const auto& name : schema.covariate_cols) cov_cols.push_back(column_of(name));

  ParsedFile out;
  const std::size_t n = data.size();
  const std::size_t p = cov_cols.size();
  out.domain.reserve(n);
  out.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  out.names = schema.covariate_cols;
  if (out_col >= 0) out.y.reserve(n);

  for (std::size_t r = 0; r < n; ++r) {
    const auto& cells = data[r];
    const std::size_t row_no = r + 1;  // 1-based data row for messages
    if (cells.size() != header.size()) {
      throw parse_error("row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
    }
    const double dom = parse_double(cells[static_cast<std::size_t>(dom_col)], schema.domain_col, row_no);
    if (std::floor(dom) != dom) {
      throw parse_error("column '" + schema.domain_col + "', row " + std::to_string(row_no) +
                        ": domain id must be an integer");
    }
    out.domain.push_back(static_cast<std::int64_t>(dom));
    if (out_col >= 0) {
      const double v = parse_double(cells[static_cast<std::size_t>(out_col)], *schema.outcome_col, row_no);
      if (!std::isfinite(v) || v < 0.0 || std::floor(v) != v) {
        throw parse_error("column '" + *schema.outcome_col + "', row " + std::to_string(row_no) +
                          ": outcome '" + cells[static_cast<std::size_t>(out_col)] +
                          "' is not a nonnegative integer");
      }
      out.y.push_back(v);
    }
    for (std::size_t j = 0; j < p; ++j) {
      out.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          parse_double(cells[static_cast<std::size_t>(cov_cols[j])], schema.covariate_cols[j], row_no);
    }
  }
  return out;
}

}  // namespace

Population load_population_csv(const std::string& path, const CsvSchema& schema) {
  ParsedFile f = parse_csv(path, schema);
  return Population(std::move(f.domain), std::move(f.x), std::move(f.names), std::move(f.y));
}

Sample load_sample_csv(const std::string& path, const CsvSchema& schema) {
  if (!schema.outcome_col) throw schema_error("survey schema needs an outcome column");
  ParsedFile f = parse_csv(path, schema);
  return Sample(std::move(f.domain), std::move(f.x), std::move(f.names), std::move(f.y));
}

std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_short(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_frame_csv(const std::string& path, const UnitFrame& frame,
                     const std::vector<std::string>& header_comment) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write '" + path + "'");
  for (const auto& c : header_comment) out << "# " << c << "\n";
  out << "domain";
  if (frame.has_outcome()) out << ",y";
  for (const auto& name : frame.covariate_names()) out << ',' << name;
  out << "\n";
  for (int r = 0; r < frame.n(); ++r) {
    out << frame.domains()[static_cast<std::size_t>(r)];
    if (frame.has_outcome()) out << ',' << format_full(frame.outcomes()[static_cast<std::size_t>(r)]);
    for (int j = 0; j < frame.p(); ++j) out << ',' << format_full(frame.covariates()(r, j));
    out << "\n";
  }
  if (!out) throw io_error("failed writing '" + path + "'");
}

void write_table_csv(const std::string& path, const std::vector<std::string>& columns,
                     const std::vector<std::vector<std::string>>& rows,
                     const std::vector<std::string>& header_comment) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write '" + path + "'");
  for (const auto& c : header_comment) out << "# " << c << "\n";
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (j) out << ',';
    out << columns[j];
  }
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      out << row[j];
    }
    out << "\n";
  }
  if (!out) throw io_error("failed writing '" + path + "'");
}

}  // namespace saecount
