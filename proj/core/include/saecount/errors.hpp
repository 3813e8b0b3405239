#pragma once

#include <stdexcept>
#include <string>

namespace saecount {

// I/O failures: unreadable files, unwritable output directories.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Column-mapping problems: a declared column is missing from the file.
struct schema_error : std::runtime_error {
  explicit schema_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Cell-level problems: a value does not parse as the declared type.
// Messages carry the 1-based data row number of the offending cell.
struct parse_error : std::runtime_error {
  explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Contract violations detected before or during computation.
struct validation_error : std::runtime_error {
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace saecount
