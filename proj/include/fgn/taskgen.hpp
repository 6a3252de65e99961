#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgn/mlp.hpp"
#include "fgn/types.hpp"

namespace fgn {

enum class TaskKind { kRegression, kClassification };

TaskKind task_kind_from_string(std::string_view name);
std::string_view to_string(TaskKind k);

struct TaskSpec {
  int task_id = 0;
  TaskKind kind = TaskKind::kRegression;
  int classes = 0;  // classification only, >= 2
  Scalar difficulty_scale = 1.0;
  Index samples = 1;

  Index label_width() const {
    return kind == TaskKind::kClassification ? classes : 1;
  }
  void validate() const;
};

struct LocalDataset {
  Matrix inputs;
  Matrix labels;
  Index size() const { return inputs.rows(); }
};

/// Ground truth behind all synthetic tasks: one low-dimensional representation
/// map shared by every task, plus one small linear head per task. Tasks with
/// identical label width and sample count draw the same base head;
/// difficulty_scale then rescales it, so scaled copies of a task stay exactly
/// proportional while tasks with different dataset sizes get independent
/// heads.
struct SyntheticWorld {
  MlpSpec shared_spec;  // input_dim -> repr_dim, repr_dim < input_dim
  ParamVector shared_map;
  std::vector<TaskSpec> tasks;
  std::vector<MlpSpec> head_specs;
  std::vector<ParamVector> heads;
  Scalar noise_std = 0.0;

  Index input_dim() const { return shared_spec.input_width(); }
  Index repr_dim() const { return shared_spec.output_width(); }
  Index task_index(int task_id) const;
};

SyntheticWorld generate_world(Index input_dim, Index repr_dim,
                              const std::vector<TaskSpec>& tasks,
                              std::uint64_t seed, Scalar noise_std = 0.0);

/// Standard-normal inputs; regression labels are the true maps plus gaussian
/// noise, classification labels one-hot encode the argmax of the true maps.
LocalDataset sample_dataset(const SyntheticWorld& world, const TaskSpec& task,
                            std::uint64_t seed);

/// Mean squared error over all entries (regression) or mean softmax
/// cross-entropy over rows (classification).
Scalar loss(TaskKind kind, const Matrix& predictions, const Matrix& labels);

/// Derivative of `loss` with respect to the predictions.
Matrix loss_grad(TaskKind kind, const Matrix& predictions, const Matrix& labels);

struct DatasetSchema {
  std::vector<std::string> feature_columns;
  std::vector<std::string> label_columns;
  TaskKind kind = TaskKind::kRegression;
  int classes = 0;  // classification: a single label column holds class ids
  char delimiter = ',';
};

/// Reads a delimited UTF-8 text file with a header row, one sample per line.
/// Rejects non-finite values and malformed rows with the offending line
/// number. Classification labels come out one-hot.
LocalDataset ingest_dataset(const std::string& path, const DatasetSchema& schema);

}  // namespace fgn
