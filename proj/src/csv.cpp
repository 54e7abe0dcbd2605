#include <cerrno>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dtrval/core.hpp"
#include "dtrval/error.hpp"

namespace dtrval {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\"");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\"");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(trim(current));
  return fields;
}

bool is_missing(const std::string& field) {
  return field.empty() || field == "NA" || field == "NaN" || field == "nan" || field == "null";
}

double parse_number(const std::string& field, std::size_t row, const std::string& column) {
  if (is_missing(field)) {
    throw DataError("missing value in row " + std::to_string(row) + ", column '" + column + "'");
  }
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw DataError("non-numeric value '" + field + "' in row " + std::to_string(row) +
                    ", column '" + column + "'");
  }
  return value;
}

}  // namespace

Dataset parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV input: missing header row");
  const std::vector<std::string> header = split_fields(line);

  int a_col = -1;
  int y_col = -1;
  std::vector<int> w_cols;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == "A") {
      if (a_col >= 0) throw DataError("duplicate column 'A' in header");
      a_col = static_cast<int>(j);
    } else if (header[j] == "Y") {
      if (y_col >= 0) throw DataError("duplicate column 'Y' in header");
      y_col = static_cast<int>(j);
    } else {
      w_cols.push_back(static_cast<int>(j));
      names.push_back(header[j]);
    }
  }
  if (a_col < 0) throw DataError("CSV header has no treatment column 'A'");
  if (y_col < 0) throw DataError("CSV header has no outcome column 'Y'");

  std::vector<std::vector<double>> w_rows;
  std::vector<int> a_values;
  std::vector<double> y_values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    const double a = parse_number(fields[static_cast<std::size_t>(a_col)], row, "A");
    if (a != 0.0 && a != 1.0) {
      throw DataError("treatment 'A' must be 0 or 1 (row " + std::to_string(row) + " has " +
                      fields[static_cast<std::size_t>(a_col)] + ")");
    }
    a_values.push_back(static_cast<int>(a));
    y_values.push_back(parse_number(fields[static_cast<std::size_t>(y_col)], row, "Y"));
    std::vector<double> w;
    w.reserve(w_cols.size());
    for (std::size_t k = 0; k < w_cols.size(); ++k) {
      w.push_back(parse_number(fields[static_cast<std::size_t>(w_cols[k])], row, names[k]));
    }
    w_rows.push_back(std::move(w));
  }
  if (row == 0) throw DataError("CSV contains a header but no data rows");

  const Index n = static_cast<Index>(row);
  const Index p = static_cast<Index>(w_cols.size());
  Eigen::MatrixXd w(n, p);
  Eigen::VectorXi a(n);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    for (Index j = 0; j < p; ++j) w(i, j) = w_rows[r][static_cast<std::size_t>(j)];
    a[i] = a_values[r];
    y[i] = y_values[r];
  }
  return Dataset(std::move(w), std::move(a), std::move(y), std::move(names));
}

Dataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());
  return parse_csv(in);
}

void write_csv(std::ostream& out, const Dataset& d) {
  const Dataset raw = unscale_outcome(d);
  out << std::setprecision(17);
  for (const auto& name : raw.column_names()) out << name << ',';
  out << "A,Y\n";
  for (Index i = 0; i < raw.covariates().rows(); ++i) {
    for (Index j = 0; j < raw.dim(); ++j) out << raw.covariates()(i, j) << ',';
    out << raw.treatment()[i] << ',' << raw.outcome()[i] << '\n';
  }
}

}  // namespace dtrval
