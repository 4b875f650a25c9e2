#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cinn::data {

using Matrix = Eigen::MatrixXd;
using IndexList = std::vector<std::size_t>;

enum class ColumnKind { kContinuous, kCategorical };

// Column-kind declaration. Columns not listed as categorical are continuous.
struct Schema {
  std::vector<std::string> categorical;
  std::string target;
};

// Raw table as read from disk. Continuous cells live in `numeric`; categorical
// cells live in `text[column]` (empty vector for continuous columns) and hold
// NaN in `numeric`.
struct TabularDataset {
  std::vector<std::string> column_names;
  std::vector<ColumnKind> column_kinds;
  Matrix numeric;
  std::vector<std::vector<std::string>> text;
  std::size_t target_column = 0;

  std::size_t n_rows() const { return static_cast<std::size_t>(numeric.rows()); }
  std::size_t n_columns() const { return column_names.size(); }
};

TabularDataset load_csv(const std::filesystem::path& path, const Schema& schema);

struct ColumnPlan {
  ColumnKind kind = ColumnKind::kContinuous;
  double mean = 0.0;
  double stddev = 1.0;
  std::vector<std::string> vocabulary;  // first-seen order

  std::size_t width() const {
    return kind == ColumnKind::kContinuous ? 1 : vocabulary.size();
  }
};

struct PreprocessPlan {
  std::vector<std::string> source_names;
  std::vector<ColumnPlan> columns;

  std::size_t output_width() const;
  // First encoded column of a source column.
  std::size_t encoded_offset(std::size_t source_column) const;
  std::vector<std::string> encoded_names() const;
};

enum class UnseenCategory { kLenient, kStrict };

// Statistics use population variance and only rows in `fit_indices`.
PreprocessPlan fit_preprocess(const TabularDataset& data, const IndexList& fit_indices);

Matrix apply_preprocess(const PreprocessPlan& plan, const TabularDataset& data,
                        const IndexList& indices,
                        UnseenCategory policy = UnseenCategory::kLenient);

struct FoldSplit {
  std::size_t fold_index = 0;
  IndexList train_indices;
  IndexList val_indices;
  IndexList test_indices;
  std::uint64_t seed = 0;
};

std::vector<FoldSplit> make_folds(std::size_t n_rows, std::size_t n_folds,
                                  std::uint64_t seed, double val_fraction = 0.1);

// Seeded train/test split used to carve the discovery set.
std::pair<IndexList, IndexList> holdout_split(std::size_t n_rows, double train_fraction,
                                              std::uint64_t seed);

}  // namespace cinn::data
