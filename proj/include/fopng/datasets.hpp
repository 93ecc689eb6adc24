#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fopng/model.hpp"
#include "fopng/rng.hpp"
#include "fopng/types.hpp"

namespace fopng {

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IdxBadMagicError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxTruncatedError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxCountMismatchError : public IdxError {
 public:
  using IdxError::IdxError;
};

enum class Split { Train, Validation, Test };

struct Dataset {
  MatX images;              // n x d, pixel values in [0, 1]
  std::vector<int> labels;  // class indices
  Split split = Split::Train;

  Index size() const { return images.rows(); }
  Batch as_batch() const { return Batch{images, labels}; }
};

enum class StreamKind { Permuted, Rotated, Split, Synthetic };

struct Task {
  Dataset train;
  Dataset test;
  int id = 0;  // 1-based
};

/// Ordered sequence of labeled tasks produced by transforms over a base
/// dataset.
struct TaskStream {
  std::vector<Task> tasks;
  StreamKind kind = StreamKind::Synthetic;

  int num_tasks() const { return static_cast<int>(tasks.size()); }
};

/// Parses a big-endian IDX image/label file pair: magic 2051 for images and
/// 2049 for labels, pixel bytes scaled by 1/255, counts cross-checked.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path,
                 Split split = Split::Train);

/// Bilinear rotation about the image center, positive angles
/// counter-clockwise, zero fill outside; images are rows of side*side pixels.
MatX rotate_images(const MatX& images, double angle_deg);

/// Task 1 is the identity; tasks 2..n apply independent fixed pixel
/// permutations, shared between the train and test sets of the task.
TaskStream make_permuted_stream(const Dataset& base_train,
                                const Dataset& base_test, int n_tasks,
                                Rng& rng);

TaskStream make_rotated_stream(const Dataset& base_train,
                               const Dataset& base_test,
                               const std::vector<double>& angles_deg = {
                                   0, 10, 20, 30, 40});

/// Label-disjoint class pairs in the original 0..C-1 label space (single
/// shared prediction head): task t holds classes {2t-2, 2t-1}.
TaskStream make_split_stream(const Dataset& base_train,
                             const Dataset& base_test,
                             int classes_per_task = 2);

/// Gaussian class clusters on a circle in the first two dimensions; each
/// task rotates the cluster means by a fixed angle in that plane, so tasks
/// are related but shifted. With rotation 0 all tasks are identical draws.
/// split_classes instead partitions the classes over the tasks (two per
/// task, single shared label space), the desk-scale analogue of the split
/// benchmarks; n_train/n_test then count samples per task.
struct SyntheticConfig {
  int n_tasks = 5;
  int dim = 16;
  int classes = 4;
  double rotation_per_task_deg = 10.0;
  Index n_train = 600;
  Index n_test = 300;
  double radius = 2.0;
  double sigma = 0.4;
  bool split_classes = false;
};

TaskStream make_synthetic_stream(const SyntheticConfig& cfg, Rng& rng);

/// Uniform random subset of at most cap samples (all samples if cap <= 0 or
/// cap >= n), kept in ascending original order.
Dataset subset(const Dataset& ds, Index cap, Rng& rng);

/// Holds out round(fraction * n) samples as a validation set, selected by the
/// rng; both halves keep ascending original order.
std::pair<Dataset, Dataset> split_validation(const Dataset& train,
                                             double fraction, Rng& rng);

}  // namespace fopng
