#include "fgn/taskgen.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fgn/seeding.hpp"

namespace fgn {

namespace {

std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

std::uint64_t head_stream(Index label_width, Index samples) {
  std::uint64_t h = fnv1a_u64(static_cast<std::uint64_t>(label_width), fnv1a("head"));
  return fnv1a_u64(static_cast<std::uint64_t>(samples), h);
}

}  // namespace

TaskKind task_kind_from_string(std::string_view name) {
  if (name == "regression") return TaskKind::kRegression;
  if (name == "classification") return TaskKind::kClassification;
  throw Error("unknown task kind: " + std::string(name));
}

std::string_view to_string(TaskKind k) {
  return k == TaskKind::kRegression ? "regression" : "classification";
}

void TaskSpec::validate() const {
  if (!(difficulty_scale > 0)) {
    throw Error("task " + std::to_string(task_id) + ": difficulty_scale must be > 0");
  }
  if (samples < 1) {
    throw Error("task " + std::to_string(task_id) + ": samples must be >= 1");
  }
  if (kind == TaskKind::kClassification && classes < 2) {
    throw Error("task " + std::to_string(task_id) +
                ": classification needs >= 2 classes, got " + std::to_string(classes));
  }
}

Index SyntheticWorld::task_index(int task_id) const {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].task_id == task_id) return static_cast<Index>(i);
  }
  throw Error("world has no task with id " + std::to_string(task_id));
}

SyntheticWorld generate_world(Index input_dim, Index repr_dim,
                              const std::vector<TaskSpec>& tasks,
                              std::uint64_t seed, Scalar noise_std) {
  if (repr_dim < 1 || input_dim < 1 || repr_dim >= input_dim) {
    throw Error("generate_world: need 1 <= repr_dim < input_dim, got repr_dim=" +
                std::to_string(repr_dim) + " input_dim=" + std::to_string(input_dim));
  }
  if (tasks.size() < 2) {
    throw Error("generate_world: need at least 2 tasks");
  }
  if (noise_std < 0) {
    throw Error("generate_world: noise_std must be >= 0");
  }
  for (const TaskSpec& t : tasks) t.validate();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t j = i + 1; j < tasks.size(); ++j) {
      if (tasks[i].task_id == tasks[j].task_id) {
        throw Error("generate_world: duplicate task id " +
                    std::to_string(tasks[i].task_id));
      }
    }
  }

  SyntheticWorld world;
  world.tasks = tasks;
  world.noise_std = noise_std;
  world.shared_spec = MlpSpec{{input_dim, repr_dim}, {}};
  world.shared_map = init_params(world.shared_spec, mix_seed(seed, fnv1a("shared")));
  for (const TaskSpec& t : tasks) {
    MlpSpec head_spec{{repr_dim, t.label_width()}, {}};
    ParamVector head =
        init_params(head_spec, mix_seed(seed, head_stream(t.label_width(), t.samples)));
    head.values *= t.difficulty_scale;
    world.head_specs.push_back(std::move(head_spec));
    world.heads.push_back(std::move(head));
  }
  return world;
}

LocalDataset sample_dataset(const SyntheticWorld& world, const TaskSpec& task,
                            std::uint64_t seed) {
  task.validate();
  const Index i = world.task_index(task.task_id);
  const Index n = task.samples;

  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(0, 1);
  Matrix inputs(n, world.input_dim());
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < world.input_dim(); ++c) inputs(r, c) = normal(rng);
  }

  const Matrix repr = forward(world.shared_spec, world.shared_map, inputs);
  const Matrix clean = forward(world.head_specs[i], world.heads[i], repr);

  LocalDataset data;
  data.inputs = std::move(inputs);
  if (task.kind == TaskKind::kRegression) {
    data.labels = clean;
    if (world.noise_std > 0) {
      for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c < data.labels.cols(); ++c) {
          data.labels(r, c) += world.noise_std * normal(rng);
        }
      }
    }
  } else {
    data.labels = Matrix::Zero(n, task.classes);
    for (Index r = 0; r < n; ++r) {
      Index best = 0;
      clean.row(r).maxCoeff(&best);
      data.labels(r, best) = 1;
    }
  }
  return data;
}

namespace {

void require_same_shape(const Matrix& predictions, const Matrix& labels,
                        const char* op) {
  if (predictions.rows() != labels.rows() || predictions.cols() != labels.cols()) {
    throw Error(std::string(op) + ": predictions are " +
                shape_str(predictions.rows(), predictions.cols()) + " but labels are " +
                shape_str(labels.rows(), labels.cols()));
  }
  if (!predictions.allFinite()) {
    throw Error(std::string(op) + ": non-finite prediction");
  }
}

Matrix row_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace

Scalar loss(TaskKind kind, const Matrix& predictions, const Matrix& labels) {
  require_same_shape(predictions, labels, "loss");
  if (kind == TaskKind::kRegression) {
    return (predictions - labels).squaredNorm() /
           Scalar(predictions.rows() * predictions.cols());
  }
  Scalar total = 0;
  for (Index r = 0; r < predictions.rows(); ++r) {
    const Scalar m = predictions.row(r).maxCoeff();
    const Scalar lse = m + std::log((predictions.row(r).array() - m).exp().sum());
    total += lse - predictions.row(r).dot(labels.row(r));
  }
  return total / Scalar(predictions.rows());
}

Matrix loss_grad(TaskKind kind, const Matrix& predictions, const Matrix& labels) {
  require_same_shape(predictions, labels, "loss_grad");
  if (kind == TaskKind::kRegression) {
    return (predictions - labels) *
           (Scalar(2) / Scalar(predictions.rows() * predictions.cols()));
  }
  return (row_softmax(predictions) - labels) / Scalar(predictions.rows());
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, delimiter)) fields.push_back(field);
  if (!line.empty() && line.back() == delimiter) fields.emplace_back();
  return fields;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

Scalar parse_value(const std::string& token, std::size_t line_no,
                   const std::string& column) {
  const std::string t = trim(token);
  Scalar value = 0;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || t.empty()) {
    throw Error("parse error at line " + std::to_string(line_no) + ", column '" +
                column + "': cannot parse '" + t + "' as a number");
  }
  if (!std::isfinite(value)) {
    throw Error("parse error at line " + std::to_string(line_no) + ", column '" +
                column + "': non-finite value '" + t + "'");
  }
  return value;
}

}  // namespace

LocalDataset ingest_dataset(const std::string& path, const DatasetSchema& schema) {
  if (schema.feature_columns.empty() || schema.label_columns.empty()) {
    throw Error("ingest_dataset: schema needs at least one feature and one label column");
  }
  const bool class_id_labels = schema.kind == TaskKind::kClassification &&
                               schema.label_columns.size() == 1;
  if (schema.kind == TaskKind::kClassification) {
    if (schema.classes < 2) {
      throw Error("ingest_dataset: classification schema needs >= 2 classes");
    }
    if (!class_id_labels &&
        static_cast<int>(schema.label_columns.size()) != schema.classes) {
      throw Error("ingest_dataset: one-hot schema needs exactly one label column per class");
    }
  }

  std::ifstream in(path);
  if (!in) throw Error("ingest_dataset: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw Error("ingest_dataset: '" + path + "' is empty (missing header row)");
  }

  const std::vector<std::string> header = split_line(line, schema.delimiter);
  auto column_index = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    throw Error("ingest_dataset: column '" + name + "' not found in header of '" +
                path + "'");
  };
  std::vector<std::size_t> feature_idx, label_idx;
  for (const auto& name : schema.feature_columns) feature_idx.push_back(column_index(name));
  for (const auto& name : schema.label_columns) label_idx.push_back(column_index(name));

  std::vector<std::vector<Scalar>> feature_rows, label_rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_line(line, schema.delimiter);
    if (fields.size() != header.size()) {
      throw Error("parse error at line " + std::to_string(line_no) + ": expected " +
                  std::to_string(header.size()) + " fields, got " +
                  std::to_string(fields.size()));
    }
    std::vector<Scalar> features, labels;
    for (std::size_t k = 0; k < feature_idx.size(); ++k) {
      features.push_back(parse_value(fields[feature_idx[k]], line_no,
                                     schema.feature_columns[k]));
    }
    for (std::size_t k = 0; k < label_idx.size(); ++k) {
      labels.push_back(parse_value(fields[label_idx[k]], line_no,
                                   schema.label_columns[k]));
    }
    feature_rows.push_back(std::move(features));
    label_rows.push_back(std::move(labels));
  }
  if (feature_rows.empty()) {
    throw Error("ingest_dataset: '" + path + "' has no data rows");
  }

  const Index n = static_cast<Index>(feature_rows.size());
  LocalDataset data;
  data.inputs.resize(n, static_cast<Index>(schema.feature_columns.size()));
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < data.inputs.cols(); ++c) {
      data.inputs(r, c) = feature_rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
  }

  if (class_id_labels) {
    data.labels = Matrix::Zero(n, schema.classes);
    for (Index r = 0; r < n; ++r) {
      const Scalar v = label_rows[static_cast<std::size_t>(r)][0];
      const auto cls = static_cast<long>(v);
      if (static_cast<Scalar>(cls) != v || cls < 0 || cls >= schema.classes) {
        throw Error("parse error at line " + std::to_string(r + 2) +
                    ": class id must be an integer in [0, " +
                    std::to_string(schema.classes) + "), got " + std::to_string(v));
      }
      data.labels(r, cls) = 1;
    }
  } else {
    data.labels.resize(n, static_cast<Index>(schema.label_columns.size()));
    for (Index r = 0; r < n; ++r) {
      for (Index c = 0; c < data.labels.cols(); ++c) {
        data.labels(r, c) = label_rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      }
    }
    if (schema.kind == TaskKind::kClassification) {
      for (Index r = 0; r < n; ++r) {
        int ones = 0;
        for (Index c = 0; c < data.labels.cols(); ++c) {
          const Scalar v = data.labels(r, c);
          if (v == 1) ++ones;
          else if (v != 0) throw Error("parse error at line " + std::to_string(r + 2) +
                                       ": one-hot labels must be 0 or 1");
        }
        if (ones != 1) {
          throw Error("parse error at line " + std::to_string(r + 2) +
                      ": label row is not one-hot");
        }
      }
    }
  }
  return data;
}

}  // namespace fgn
