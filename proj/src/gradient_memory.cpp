#include "fopng/gradient_memory.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fopng {

namespace {

constexpr char kMagic[4] = {'F', 'O', 'G', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  const std::uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

GradientMemory::GradientMemory(Index p, Index max_directions,
                               MemoryVariant variant)
    : columns_(MatX::Zero(p, max_directions)), variant_(variant) {
  if (p < 1 || max_directions < 0) {
    throw std::invalid_argument("GradientMemory: bad dimensions");
  }
}

void GradientMemory::store_task_gradients(const Mlp& model,
                                          const VecX& theta_star,
                                          const Batch& task_data, int k,
                                          int task_id,
                                          const DiagFisher* task_fisher,
                                          Rng& rng, StoredGradKind kind) {
  if (k < 1) throw std::invalid_argument("store_task_gradients: k < 1");
  if (m_ + k > max_directions()) {
    throw CapacityError("store_task_gradients: would exceed max_directions");
  }
  if (variant_ == MemoryVariant::PreFisher && task_fisher == nullptr) {
    throw std::invalid_argument(
        "store_task_gradients: PreFisher variant needs the task Fisher");
  }

  const auto order = rng.permutation(static_cast<std::size_t>(task_data.size()));
  int accepted = 0;
  for (std::size_t pos = 0; pos < order.size() && accepted < k; ++pos) {
    const Index i = static_cast<Index>(order[pos]);
    const VecX x = task_data.inputs.row(i).transpose();
    const int y = task_data.labels[static_cast<std::size_t>(i)];
    VecX col;
    if (kind == StoredGradKind::GroundTruthLogit) {
      col = model.ground_truth_logit_grad(theta_star, x, y);
    } else {
      col = -model.score_grad(theta_star, x, y);  // per-sample loss gradient
    }
    if (variant_ == MemoryVariant::PreFisher) {
      col.array() *= task_fisher->values.array();
    }
    if (col.squaredNorm() == 0.0 || !col.allFinite()) {
      continue;  // rejected; the permutation walk resamples
    }
    columns_.col(m_) = col;
    task_of_column_.push_back(task_id);
    ++m_;
    ++accepted;
  }
  if (accepted < k) {
    throw std::runtime_error(
        "store_task_gradients: dataset exhausted before k nonzero gradients");
  }
}

void GradientMemory::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("GradientMemory::save: cannot open " + path.string());
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u64(os, static_cast<std::uint64_t>(dim()));
  put_u64(os, static_cast<std::uint64_t>(m_));
  const std::uint8_t variant = static_cast<std::uint8_t>(variant_);
  os.write(reinterpret_cast<const char*>(&variant), 1);
  for (Index c = 0; c < m_; ++c) {
    for (Index r = 0; r < dim(); ++r) put_f64(os, columns_(r, c));
  }
  if (!os) throw std::runtime_error("GradientMemory::save: write failed");
}

GradientMemory GradientMemory::load(const std::filesystem::path& path,
                                    Index max_directions) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("GradientMemory::load: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("GradientMemory::load: bad magic");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("GradientMemory::load: unsupported version");
  }
  const Index p = static_cast<Index>(get_u64(is));
  const Index m = static_cast<Index>(get_u64(is));
  std::uint8_t variant;
  is.read(reinterpret_cast<char*>(&variant), 1);
  if (!is || variant > 1) {
    throw std::runtime_error("GradientMemory::load: corrupt header");
  }
  GradientMemory out(p, std::max(m, max_directions),
                     static_cast<MemoryVariant>(variant));
  for (Index c = 0; c < m; ++c) {
    for (Index r = 0; r < p; ++r) out.columns_(r, c) = get_f64(is);
  }
  if (!is) throw std::runtime_error("GradientMemory::load: truncated file");
  out.m_ = m;
  out.task_of_column_.assign(static_cast<std::size_t>(m), -1);
  return out;
}

}  // namespace fopng
