#include "fopng/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fopng {

namespace {

std::uint32_t read_u32_be(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IdxTruncatedError("IDX: truncated while reading " + what);
  return (static_cast<std::uint32_t>(b[0]) << 24) |
         (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

std::vector<unsigned char> read_bytes(std::istream& is, std::size_t n,
                                      const std::string& what) {
  std::vector<unsigned char> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw IdxTruncatedError("IDX: truncated while reading " + what);
  }
  return buf;
}

Dataset select_rows(const Dataset& ds, const std::vector<std::size_t>& rows) {
  Dataset out;
  out.split = ds.split;
  out.images.resize(static_cast<Index>(rows.size()), ds.images.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.images.row(static_cast<Index>(i)) = ds.images.row(static_cast<Index>(rows[i]));
    out.labels[i] = ds.labels[rows[i]];
  }
  return out;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, Split split) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IdxError("IDX: cannot open " + images_path.string());
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IdxError("IDX: cannot open " + labels_path.string());

  const std::uint32_t img_magic = read_u32_be(img, "image magic");
  if (img_magic != 2051) {
    throw IdxBadMagicError("IDX: bad image magic " + std::to_string(img_magic) +
                           " (expected 2051)");
  }
  const std::uint32_t n_images = read_u32_be(img, "image count");
  const std::uint32_t rows = read_u32_be(img, "image rows");
  const std::uint32_t cols = read_u32_be(img, "image cols");

  const std::uint32_t lab_magic = read_u32_be(lab, "label magic");
  if (lab_magic != 2049) {
    throw IdxBadMagicError("IDX: bad label magic " + std::to_string(lab_magic) +
                           " (expected 2049)");
  }
  const std::uint32_t n_labels = read_u32_be(lab, "label count");
  if (n_images != n_labels) {
    throw IdxCountMismatchError("IDX: " + std::to_string(n_images) +
                                " images vs " + std::to_string(n_labels) +
                                " labels");
  }

  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  const auto pixels = read_bytes(img, static_cast<std::size_t>(n_images) * d,
                                 "image data");
  const auto label_bytes = read_bytes(lab, n_labels, "label data");

  Dataset out;
  out.split = split;
  out.images.resize(static_cast<Index>(n_images), static_cast<Index>(d));
  out.labels.resize(n_labels);
  for (std::size_t i = 0; i < n_images; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out.images(static_cast<Index>(i), static_cast<Index>(j)) =
          static_cast<double>(pixels[i * d + j]) / 255.0;
    }
    out.labels[i] = static_cast<int>(label_bytes[i]);
  }
  return out;
}

MatX rotate_images(const MatX& images, double angle_deg) {
  const Index d = images.cols();
  const Index side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(d))));
  if (side * side != d) {
    throw std::invalid_argument("rotate_images: images are not square");
  }
  const double rad = angle_deg * M_PI / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const double center = static_cast<double>(side - 1) / 2.0;

  MatX out = MatX::Zero(images.rows(), d);
  for (Index r = 0; r < side; ++r) {
    for (Index col = 0; col < side; ++col) {
      // y axis points up (decreasing row index); positive angle rotates the
      // image content counter-clockwise, so sample from the inverse rotation.
      const double x = static_cast<double>(col) - center;
      const double y = center - static_cast<double>(r);
      const double sx = c * x + s * y;
      const double sy = -s * x + c * y;
      const double src_col = center + sx;
      const double src_row = center - sy;

      const double fc = std::floor(src_col);
      const double fr = std::floor(src_row);
      const Index c0 = static_cast<Index>(fc);
      const Index r0 = static_cast<Index>(fr);
      const double wc = src_col - fc;
      const double wr = src_row - fr;

      const Index out_px = r * side + col;
      for (int dr = 0; dr <= 1; ++dr) {
        for (int dc = 0; dc <= 1; ++dc) {
          const Index rr = r0 + dr;
          const Index cc = c0 + dc;
          if (rr < 0 || rr >= side || cc < 0 || cc >= side) continue;
          const double w = (dr == 0 ? 1.0 - wr : wr) * (dc == 0 ? 1.0 - wc : wc);
          if (w == 0.0) continue;
          out.col(out_px) += w * images.col(rr * side + cc);
        }
      }
    }
  }
  return out;
}

TaskStream make_permuted_stream(const Dataset& base_train,
                                const Dataset& base_test, int n_tasks,
                                Rng& rng) {
  if (n_tasks < 1) throw std::invalid_argument("make_permuted_stream: n_tasks < 1");
  TaskStream stream;
  stream.kind = StreamKind::Permuted;
  const Index d = base_train.images.cols();
  for (int t = 1; t <= n_tasks; ++t) {
    Task task;
    task.id = t;
    if (t == 1) {
      task.train = base_train;
      task.test = base_test;
    } else {
      const auto perm = rng.permutation(static_cast<std::size_t>(d));
      task.train.split = Split::Train;
      task.test.split = Split::Test;
      task.train.labels = base_train.labels;
      task.test.labels = base_test.labels;
      task.train.images.resize(base_train.images.rows(), d);
      task.test.images.resize(base_test.images.rows(), d);
      for (Index j = 0; j < d; ++j) {
        task.train.images.col(j) = base_train.images.col(static_cast<Index>(perm[static_cast<std::size_t>(j)]));
        task.test.images.col(j) = base_test.images.col(static_cast<Index>(perm[static_cast<std::size_t>(j)]));
      }
    }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

TaskStream make_rotated_stream(const Dataset& base_train,
                               const Dataset& base_test,
                               const std::vector<double>& angles_deg) {
  if (angles_deg.empty()) {
    throw std::invalid_argument("make_rotated_stream: no angles");
  }
  TaskStream stream;
  stream.kind = StreamKind::Rotated;
  for (std::size_t t = 0; t < angles_deg.size(); ++t) {
    Task task;
    task.id = static_cast<int>(t + 1);
    task.train.split = Split::Train;
    task.test.split = Split::Test;
    task.train.images = rotate_images(base_train.images, angles_deg[t]);
    task.test.images = rotate_images(base_test.images, angles_deg[t]);
    task.train.labels = base_train.labels;
    task.test.labels = base_test.labels;
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

TaskStream make_split_stream(const Dataset& base_train,
                             const Dataset& base_test, int classes_per_task) {
  if (classes_per_task < 1) {
    throw std::invalid_argument("make_split_stream: classes_per_task < 1");
  }
  const int num_classes =
      1 + *std::max_element(base_train.labels.begin(), base_train.labels.end());
  const int n_tasks = (num_classes + classes_per_task - 1) / classes_per_task;
  TaskStream stream;
  stream.kind = StreamKind::Split;
  for (int t = 1; t <= n_tasks; ++t) {
    const int lo = (t - 1) * classes_per_task;
    const int hi = std::min(lo + classes_per_task, num_classes);  // exclusive
    auto in_task = [&](int label) { return label >= lo && label < hi; };
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < base_train.labels.size(); ++i) {
      if (in_task(base_train.labels[i])) train_rows.push_back(i);
    }
    for (std::size_t i = 0; i < base_test.labels.size(); ++i) {
      if (in_task(base_test.labels[i])) test_rows.push_back(i);
    }
    Task task;
    task.id = t;
    task.train = select_rows(base_train, train_rows);
    task.train.split = Split::Train;
    task.test = select_rows(base_test, test_rows);
    task.test.split = Split::Test;
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

namespace {

// One synthetic task: Gaussian clusters around per-class means. Every task
// reuses the same child stream, so with rotation 0 the tasks are
// bitwise-identical draws; only the cluster means move.
Task sample_synthetic_task(const SyntheticConfig& cfg, const Rng& rng,
                           int task_index) {
  Rng task_rng = rng.child({0x53594e5448ULL});
  const double rot =
      cfg.rotation_per_task_deg * M_PI / 180.0 * static_cast<double>(task_index);
  MatX means = MatX::Zero(cfg.classes, cfg.dim);
  if (cfg.split_classes) {
    // signed axis pairs: classes k and k + classes/2 share coordinate axis k
    // with opposite signs, so later tasks rewire detectors that earlier
    // classes depend on (the way disjoint digit sets still share strokes)
    const int half = (cfg.classes + 1) / 2;
    if (cfg.dim < half) {
      throw std::invalid_argument("make_synthetic_stream: split_classes needs dim >= classes/2");
    }
    for (int k = 0; k < cfg.classes; ++k) {
      means(k, k % half) = (k < half ? 1.0 : -1.0) * cfg.radius;
    }
  } else {
    for (int k = 0; k < cfg.classes; ++k) {
      const double phi = 2.0 * M_PI * k / cfg.classes + rot;
      means(k, 0) = cfg.radius * std::cos(phi);
      means(k, 1) = cfg.radius * std::sin(phi);
    }
  }
  auto draw = [&](Index n, Split split) {
    Dataset ds;
    ds.split = split;
    ds.images.resize(n, cfg.dim);
    ds.labels.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const int k = static_cast<int>(i % cfg.classes);  // balanced within 1
      ds.labels[static_cast<std::size_t>(i)] = k;
      for (Index j = 0; j < cfg.dim; ++j) {
        ds.images(i, j) = means(k, j) + cfg.sigma * task_rng.normal();
      }
    }
    return ds;
  };
  Task task;
  task.id = task_index + 1;
  task.train = draw(cfg.n_train, Split::Train);
  task.test = draw(cfg.n_test, Split::Test);
  return task;
}

}  // namespace

TaskStream make_synthetic_stream(const SyntheticConfig& cfg, Rng& rng) {
  if (cfg.dim < 2) throw std::invalid_argument("make_synthetic_stream: dim < 2");
  if (cfg.classes < 2 || cfg.n_tasks < 1 || cfg.n_train < 1 || cfg.n_test < 1) {
    throw std::invalid_argument("make_synthetic_stream: bad config");
  }

  TaskStream stream;
  stream.kind = StreamKind::Synthetic;
  if (cfg.split_classes) {
    if (cfg.classes % cfg.n_tasks != 0) {
      throw std::invalid_argument(
          "make_synthetic_stream: split_classes needs classes divisible by n_tasks");
    }
    SyntheticConfig base_cfg = cfg;
    base_cfg.n_train = cfg.n_train * cfg.n_tasks;
    base_cfg.n_test = cfg.n_test * cfg.n_tasks;
    const Task base = sample_synthetic_task(base_cfg, rng, 0);
    TaskStream split =
        make_split_stream(base.train, base.test, cfg.classes / cfg.n_tasks);
    stream.tasks = std::move(split.tasks);
    return stream;
  }
  for (int t = 0; t < cfg.n_tasks; ++t) {
    stream.tasks.push_back(sample_synthetic_task(cfg, rng, t));
  }
  return stream;
}

Dataset subset(const Dataset& ds, Index cap, Rng& rng) {
  if (cap <= 0 || cap >= ds.size()) return ds;
  auto rows = rng.sample_without_replacement(static_cast<std::size_t>(ds.size()),
                                             static_cast<std::size_t>(cap));
  std::sort(rows.begin(), rows.end());
  return select_rows(ds, rows);
}

std::pair<Dataset, Dataset> split_validation(const Dataset& train,
                                             double fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split_validation: fraction outside [0, 1)");
  }
  const std::size_t n = static_cast<std::size_t>(train.size());
  const std::size_t n_val =
      static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  auto picked = rng.sample_without_replacement(n, n_val);
  std::sort(picked.begin(), picked.end());
  std::vector<char> is_val(n, 0);
  for (std::size_t i : picked) is_val[i] = 1;
  std::vector<std::size_t> train_rows;
  train_rows.reserve(n - n_val);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_val[i]) train_rows.push_back(i);
  }
  Dataset train_out = select_rows(train, train_rows);
  train_out.split = Split::Train;
  Dataset val_out = select_rows(train, picked);
  val_out.split = Split::Validation;
  return {std::move(train_out), std::move(val_out)};
}

}  // namespace fopng
