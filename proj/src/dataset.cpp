#include "cinn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cinn/error.hpp"
#include "cinn/random.hpp"

namespace cinn::data {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"') {
      if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
        cell.push_back('"');
        ++i;
      } else {
        quoted = !quoted;
      }
    } else if (c == ',' && !quoted) {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace

TabularDataset load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open data file: " + path.string());

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw Error(ErrorKind::kInput, "no header row in " + path.string());

  TabularDataset ds;
  ds.column_names = header;
  ds.column_kinds.assign(header.size(), ColumnKind::kContinuous);
  for (const auto& name : schema.categorical) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorKind::kInput, "categorical column not in header: " + name);
    ds.column_kinds[static_cast<std::size_t>(it - header.begin())] = ColumnKind::kCategorical;
  }
  if (schema.target.empty()) {
    ds.target_column = header.size() - 1;
  } else {
    auto it = std::find(header.begin(), header.end(), schema.target);
    if (it == header.end()) throw Error(ErrorKind::kInput, "target column not in header: " + schema.target);
    ds.target_column = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<std::vector<std::string>> raw;
  std::vector<std::string> problems;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      problems.push_back("row at line " + std::to_string(line_no) + " has " +
                         std::to_string(cells.size()) + " cells, expected " +
                         std::to_string(header.size()));
      continue;
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        problems.push_back("missing value at line " + std::to_string(line_no) + ", column " + header[c]);
      } else if (ds.column_kinds[c] == ColumnKind::kContinuous) {
        double v = 0.0;
        if (!parse_double(cells[c], v)) {
          problems.push_back("non-numeric value '" + cells[c] + "' at line " +
                             std::to_string(line_no) + ", column " + header[c]);
        }
      }
    }
    raw.push_back(std::move(cells));
  }
  if (!problems.empty()) {
    std::ostringstream msg;
    msg << path.string() << ": " << problems.size() << " malformed cell(s)";
    for (std::size_t i = 0; i < std::min<std::size_t>(problems.size(), 10); ++i) msg << "\n  " << problems[i];
    throw Error(ErrorKind::kInput, msg.str());
  }
  if (raw.empty()) throw Error(ErrorKind::kInput, "no data rows in " + path.string());

  const auto n = static_cast<Eigen::Index>(raw.size());
  ds.numeric = Matrix::Constant(n, static_cast<Eigen::Index>(header.size()),
                                std::numeric_limits<double>::quiet_NaN());
  ds.text.resize(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (ds.column_kinds[c] == ColumnKind::kCategorical) ds.text[c].reserve(raw.size());
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& cells = raw[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (ds.column_kinds[c] == ColumnKind::kCategorical) {
        ds.text[c].push_back(cells[c]);
      } else {
        parse_double(cells[c], ds.numeric(r, static_cast<Eigen::Index>(c)));
      }
    }
  }
  return ds;
}

std::size_t PreprocessPlan::output_width() const {
  std::size_t w = 0;
  for (const auto& c : columns) w += c.width();
  return w;
}

std::size_t PreprocessPlan::encoded_offset(std::size_t source_column) const {
  std::size_t offset = 0;
  for (std::size_t c = 0; c < source_column; ++c) offset += columns.at(c).width();
  return offset;
}

std::vector<std::string> PreprocessPlan::encoded_names() const {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].kind == ColumnKind::kContinuous) {
      names.push_back(source_names[c]);
    } else {
      for (const auto& v : columns[c].vocabulary) names.push_back(source_names[c] + "=" + v);
    }
  }
  return names;
}

PreprocessPlan fit_preprocess(const TabularDataset& data, const IndexList& fit_indices) {
  if (fit_indices.empty()) throw Error(ErrorKind::kData, "fit_preprocess: empty fit index set");
  PreprocessPlan plan;
  plan.source_names = data.column_names;
  plan.columns.resize(data.n_columns());
  const double n = static_cast<double>(fit_indices.size());
  for (std::size_t c = 0; c < data.n_columns(); ++c) {
    auto& col = plan.columns[c];
    col.kind = data.column_kinds[c];
    if (col.kind == ColumnKind::kCategorical) {
      for (auto r : fit_indices) {
        const auto& v = data.text[c].at(r);
        if (std::find(col.vocabulary.begin(), col.vocabulary.end(), v) == col.vocabulary.end()) {
          col.vocabulary.push_back(v);
        }
      }
      continue;
    }
    const auto ci = static_cast<Eigen::Index>(c);
    double sum = 0.0;
    for (auto r : fit_indices) sum += data.numeric(static_cast<Eigen::Index>(r), ci);
    const double mean = sum / n;
    double ss = 0.0;
    for (auto r : fit_indices) {
      const double dev = data.numeric(static_cast<Eigen::Index>(r), ci) - mean;
      ss += dev * dev;
    }
    const double sd = std::sqrt(ss / n);
    if (!(sd > 0.0)) {
      throw Error(ErrorKind::kData, "column '" + data.column_names[c] + "' is constant on the fit rows");
    }
    col.mean = mean;
    col.stddev = sd;
  }
  return plan;
}

Matrix apply_preprocess(const PreprocessPlan& plan, const TabularDataset& data,
                        const IndexList& indices, UnseenCategory policy) {
  if (plan.columns.size() != data.n_columns()) {
    throw Error(ErrorKind::kShape, "apply_preprocess: plan/dataset column count mismatch");
  }
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(indices.size()),
                            static_cast<Eigen::Index>(plan.output_width()));
  Eigen::Index offset = 0;
  for (std::size_t c = 0; c < plan.columns.size(); ++c) {
    const auto& col = plan.columns[c];
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      if (col.kind == ColumnKind::kContinuous) {
        out(row, offset) =
            (data.numeric(static_cast<Eigen::Index>(indices[i]), static_cast<Eigen::Index>(c)) - col.mean) /
            col.stddev;
        continue;
      }
      const auto& v = data.text[c].at(indices[i]);
      auto it = std::find(col.vocabulary.begin(), col.vocabulary.end(), v);
      if (it == col.vocabulary.end()) {
        if (policy == UnseenCategory::kStrict) {
          throw Error(ErrorKind::kData, "unseen category '" + v + "' in column " + plan.source_names[c]);
        }
        continue;
      }
      out(row, offset + (it - col.vocabulary.begin())) = 1.0;
    }
    offset += static_cast<Eigen::Index>(col.width());
  }
  return out;
}

std::vector<FoldSplit> make_folds(std::size_t n_rows, std::size_t n_folds, std::uint64_t seed,
                                  double val_fraction) {
  if (n_folds < 2) throw Error(ErrorKind::kInput, "make_folds: need at least 2 folds");
  if (n_folds > n_rows) throw Error(ErrorKind::kInput, "make_folds: more folds than rows");

  IndexList order(n_rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, Stream::kFolds);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<FoldSplit> folds(n_folds);
  const std::size_t base = n_rows / n_folds;
  const std::size_t extra = n_rows % n_folds;
  std::size_t start = 0;
  for (std::size_t k = 0; k < n_folds; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    auto& f = folds[k];
    f.fold_index = k;
    f.seed = seed;
    IndexList rest;
    rest.reserve(n_rows - len);
    for (std::size_t i = 0; i < n_rows; ++i) {
      if (i >= start && i < start + len) {
        f.test_indices.push_back(order[i]);
      } else {
        rest.push_back(order[i]);
      }
    }
    // Each fold draws its own validation rows from what is left.
    auto val_rng = make_stream(seed, Stream::kFolds, k + 1);
    std::shuffle(rest.begin(), rest.end(), val_rng);
    std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(rest.size())));
    if (n_val == 0 && rest.size() >= 2) n_val = 1;
    f.val_indices.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    f.train_indices.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
    std::sort(f.test_indices.begin(), f.test_indices.end());
    std::sort(f.val_indices.begin(), f.val_indices.end());
    std::sort(f.train_indices.begin(), f.train_indices.end());
    start += len;
  }
  return folds;
}

std::pair<IndexList, IndexList> holdout_split(std::size_t n_rows, double train_fraction,
                                              std::uint64_t seed) {
  IndexList order(n_rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, Stream::kFolds, 0xd15c);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(n_rows)));
  IndexList train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  IndexList test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

}  // namespace cinn::data
