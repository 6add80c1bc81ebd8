#include "magfield/measured.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "magfield/error.hpp"

namespace magfield {

namespace {

struct Row {
  long x;
  long y;
  double b[3];
};

bool parse_numbers(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::string s = line;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    double v = 0.0;
    const auto* first = tok.data();
    const auto* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) return false;
    out.push_back(v);
  }
  return true;
}

}  // namespace

Sample import_measured(std::istream& in, double spacing) {
  if (!(spacing > 0.0)) throw DomainError("measurement spacing must be positive");
  std::vector<Row> rows;
  std::vector<double> nums;
  std::string line;
  int line_no = 0;
  bool seen_data = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    if (!parse_numbers(line, nums)) {
      if (!seen_data) continue;  // header line
      throw IngestionError("line " + std::to_string(line_no) + ": not numeric");
    }
    if (nums.size() != 4 && nums.size() != 5) {
      throw IngestionError("line " + std::to_string(line_no) + ": expected 4 or 5 columns, got " +
                           std::to_string(nums.size()));
    }
    seen_data = true;
    if (nums[0] != std::floor(nums[0]) || nums[1] != std::floor(nums[1])) {
      throw IngestionError("line " + std::to_string(line_no) + ": non-integer pixel index");
    }
    Row r{static_cast<long>(nums[0]), static_cast<long>(nums[1]),
          {nums[2], nums[3], nums.size() == 5 ? nums[4] : 0.0}};
    for (double v : r.b) {
      if (!std::isfinite(v)) {
        throw IngestionError("line " + std::to_string(line_no) + ": non-finite field value");
      }
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw IngestionError("measured table has no data rows");

  long x0 = std::numeric_limits<long>::max(), y0 = x0;
  long x1 = std::numeric_limits<long>::min(), y1 = x1;
  for (const auto& r : rows) {
    x0 = std::min(x0, r.x);
    x1 = std::max(x1, r.x);
    y0 = std::min(y0, r.y);
    y1 = std::max(y1, r.y);
  }
  const long width = x1 - x0 + 1;
  const long height = y1 - y0 + 1;
  if (width < 3 || height < 3) throw IngestionError("measured grid smaller than 3x3");

  std::vector<int> seen(static_cast<std::size_t>(width * height), 0);
  Sample s;
  s.field = FieldGrid(static_cast<int>(height), static_cast<int>(width), spacing, spacing, spacing);
  s.area_side = spacing * static_cast<double>(std::max(width, height));
  s.source = Source::measured;
  s.has_flanking_layers = false;
  for (const auto& r : rows) {
    const long col = r.x - x0;
    const long row = r.y - y0;
    auto& count = seen[static_cast<std::size_t>(row * width + col)];
    if (count++ > 0) {
      throw IngestionError("duplicate pixel (" + std::to_string(r.x) + ", " + std::to_string(r.y) +
                           ")");
    }
    for (int c = 0; c < kComponents; ++c) {
      s.field.at(static_cast<int>(Layer::measurement), c, static_cast<int>(row),
                 static_cast<int>(col)) = r.b[c];
    }
  }
  std::ostringstream missing;
  std::size_t n_missing = 0;
  for (long row = 0; row < height; ++row) {
    for (long col = 0; col < width; ++col) {
      if (seen[static_cast<std::size_t>(row * width + col)] == 0) {
        if (n_missing < 20) missing << " (" << col + x0 << ", " << row + y0 << ")";
        ++n_missing;
      }
    }
  }
  if (n_missing > 0) {
    throw IngestionError("index set is not rectangular; " + std::to_string(n_missing) +
                         " missing pixel(s):" + missing.str() + (n_missing > 20 ? " ..." : ""));
  }
  return s;
}

void write_measured_table(std::ostream& out, const FieldPlane& plane) {
  out << "# x_index y_index Bx By Bz\n";
  out.precision(std::numeric_limits<double>::max_digits10);
  for (int row = 0; row < plane.height(); ++row) {
    for (int col = 0; col < plane.width(); ++col) {
      out << col << ' ' << row << ' ' << plane.at(0, row, col) << ' ' << plane.at(1, row, col)
          << ' ' << plane.at(2, row, col) << '\n';
    }
  }
}

}  // namespace magfield
