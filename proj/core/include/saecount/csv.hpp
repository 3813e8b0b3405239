#pragma once

#include <optional>
#include <string>
#include <vector>

#include "saecount/data.hpp"

namespace saecount {

// Column-name mapping for survey/census files. Files are comma-separated
// with a header row; lines starting with '#' are skipped.
struct CsvSchema {
  std::string domain_col;
  std::optional<std::string> outcome_col;  // absent: census prediction rows
  std::vector<std::string> covariate_cols;
};

Population load_population_csv(const std::string& path, const CsvSchema& schema);
Sample load_sample_csv(const std::string& path, const CsvSchema& schema);

// Writes domain, outcome (when present) and covariates with full printed
// precision so a reload reproduces every value exactly. `header_comment`
// lines are emitted first, prefixed with "# ".
void write_frame_csv(const std::string& path, const UnitFrame& frame,
                     const std::vector<std::string>& header_comment = {});

// Generic table writer for report CSVs: numeric cells are preformatted by
// the caller.
void write_table_csv(const std::string& path, const std::vector<std::string>& columns,
                     const std::vector<std::vector<std::string>>& rows,
                     const std::vector<std::string>& header_comment = {});

std::string format_full(double v);   // round-trip precision (%.17g)
std::string format_short(double v);  // report precision (%.10g); NaN -> "NA"

}  // namespace saecount
