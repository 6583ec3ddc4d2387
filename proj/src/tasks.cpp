#include "tdvcl/tasks.hpp"

#include "tdvcl/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace tdvcl {

void TaskDataset::validate() const {
  if (labels.empty()) throw ContractError("task dataset: no examples");
  if (inputs.rank() != 2 || inputs.rows() != labels.size()) {
    throw ContractError("task dataset: " + std::to_string(labels.size()) + " labels for inputs " +
                        inputs.shape_string());
  }
  for (int y : labels) {
    if (y < 0 || y >= class_count) {
      throw ContractError("task dataset: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(class_count) + ")");
    }
  }
  if (!inputs.all_finite()) throw ContractError("task dataset: non-finite input");
}

TaskDataset TaskDataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ContractError("task dataset: empty subset");
  const std::size_t d = input_dim();
  TaskDataset out{Tensor({indices.size(), d}), {}, task_id, class_count, head};
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t src = indices[r];
    if (src >= size()) throw ContractError("task dataset: subset index out of range");
    std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(src * d), d,
                out.inputs.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    out.labels.push_back(labels[src]);
  }
  return out;
}

LabeledBatch TaskDataset::batch() const { return {inputs, labels, head}; }

std::size_t TaskStream::input_dim() const {
  if (tasks.empty()) throw ContractError("task stream is empty");
  return tasks.front().train.input_dim();
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError("idx: truncated header in " + path);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("idx: cannot open " + path);
  return in;
}

}  // namespace

TaskDataset load_idx(const std::string& images_path, const std::string& labels_path,
                     std::size_t limit) {
  std::ifstream img = open_binary(images_path);
  std::ifstream lab = open_binary(labels_path);

  if (read_be32(img, images_path) != 0x00000803u) {
    throw FormatError("idx: " + images_path + " is not an image file (magic != 0x803)");
  }
  const std::size_t n_img = read_be32(img, images_path);
  const std::size_t rows = read_be32(img, images_path);
  const std::size_t cols = read_be32(img, images_path);
  if (read_be32(lab, labels_path) != 0x00000801u) {
    throw FormatError("idx: " + labels_path + " is not a label file (magic != 0x801)");
  }
  const std::size_t n_lab = read_be32(lab, labels_path);
  if (n_img != n_lab) {
    throw FormatError("idx: " + std::to_string(n_img) + " images but " + std::to_string(n_lab) +
                      " labels");
  }
  if (n_img == 0 || rows * cols == 0) throw FormatError("idx: empty dataset");

  const std::size_t n = limit > 0 ? std::min(limit, n_img) : n_img;
  const std::size_t d = rows * cols;
  std::vector<unsigned char> pixels(n * d), raw_labels(n);
  if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
    throw IoError("idx: truncated pixel data in " + images_path);
  }
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n))) {
    throw IoError("idx: truncated label data in " + labels_path);
  }

  TaskDataset out{Tensor({n, d}), {}, 0, 0, {}};
  for (std::size_t k = 0; k < pixels.size(); ++k) out.inputs[k] = pixels[k] / 255.0;
  out.labels.assign(raw_labels.begin(), raw_labels.end());
  out.class_count = 1 + *std::max_element(out.labels.begin(), out.labels.end());
  return out;
}

namespace {

std::vector<std::size_t> random_indices(std::size_t population, std::size_t count, SeededRng& rng) {
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), 0);
  count = std::min(count, population);
  // Partial Fisher-Yates: the first `count` slots become a uniform subset.
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(population - i)]);
  idx.resize(count);
  return idx;
}

}  // namespace

TaskDataset sample_subset(const TaskDataset& data, std::size_t count, SeededRng& rng) {
  if (count >= data.size()) return data;
  auto idx = random_indices(data.size(), count, rng);
  std::sort(idx.begin(), idx.end());
  return data.subset(idx);
}

namespace {

TaskDataset permute_pixels(const TaskDataset& base, const std::vector<std::size_t>& perm, int task_id) {
  TaskDataset out = base;
  out.task_id = task_id;
  const std::size_t d = base.input_dim();
  for (std::size_t r = 0; r < base.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) out.inputs.at(r, c) = base.inputs.at(r, perm[c]);
  }
  return out;
}

}  // namespace

TaskStream make_permuted_stream(const TaskDataset& base_train, const TaskDataset& base_test,
                                int task_count, SeededRng& rng) {
  if (task_count < 1) throw ContractError("permuted stream: task count must be >= 1");
  if (base_train.input_dim() != base_test.input_dim()) {
    throw ContractError("permuted stream: train/test input dimensions differ");
  }
  TaskStream stream;
  stream.protocol = Protocol::Permuted;
  stream.output_dim = static_cast<std::size_t>(std::max(base_train.class_count, base_test.class_count));
  std::vector<std::size_t> perm(base_train.input_dim());
  for (int t = 1; t <= task_count; ++t) {
    std::iota(perm.begin(), perm.end(), 0);
    if (t > 1) rng.shuffle(std::span<std::size_t>(perm));
    TaskPair pair{permute_pixels(base_train, perm, t), permute_pixels(base_test, perm, t)};
    pair.train.class_count = pair.test.class_count = static_cast<int>(stream.output_dim);
    stream.tasks.push_back(std::move(pair));
  }
  return stream;
}

namespace {

TaskDataset filter_pair(const TaskDataset& base, std::pair<int, int> classes, int task_id, Head head) {
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < base.size(); ++r) {
    if (base.labels[r] == classes.first || base.labels[r] == classes.second) keep.push_back(r);
  }
  if (keep.empty()) {
    throw ContractError("split stream: no examples of classes " + std::to_string(classes.first) +
                        "/" + std::to_string(classes.second));
  }
  TaskDataset out = base.subset(keep);
  for (int& y : out.labels) y = y == classes.first ? 0 : 1;
  out.task_id = task_id;
  out.class_count = 2;
  out.head = head;
  return out;
}

}  // namespace

TaskStream make_split_stream(const TaskDataset& base_train, const TaskDataset& base_test,
                             const std::vector<std::pair<int, int>>& pairs, HeadMode mode) {
  if (pairs.empty()) throw ContractError("split stream: no class pairs");
  std::set<int> seen;
  for (auto [a, b] : pairs) {
    if (a == b || !seen.insert(a).second || !seen.insert(b).second) {
      throw ContractError("split stream: class pairs overlap");
    }
  }
  TaskStream stream;
  stream.protocol = Protocol::Split;
  stream.output_dim = mode == HeadMode::Multi ? 2 * pairs.size() : 2;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Head head = mode == HeadMode::Multi ? Head{2 * i, 2} : Head{};
    const int id = static_cast<int>(i) + 1;
    stream.tasks.push_back({filter_pair(base_train, pairs[i], id, head),
                            filter_pair(base_test, pairs[i], id, head)});
  }
  return stream;
}

TaskStream make_synthetic_stream(const SyntheticOptions& options, SeededRng& rng) {
  if (options.task_count < 1 || options.input_dim < 1 || options.train_per_task < 2 ||
      options.test_per_task < 1) {
    throw ContractError("synthetic stream: invalid options");
  }
  const std::size_t d = options.input_dim;
  TaskStream stream;
  stream.protocol = Protocol::Synthetic;
  stream.output_dim = 2;
  auto draw = [&](std::size_t n, const std::vector<double>& dir, int task_id) {
    TaskDataset out{Tensor({n, d}), {}, task_id, 2, {}};
    for (std::size_t r = 0; r < n; ++r) {
      const int y = static_cast<int>(r % 2);
      const double shift = (y == 1 ? 1.0 : -1.0) * options.margin;
      for (std::size_t c = 0; c < d; ++c) {
        const double z = rng.normal() + shift * dir[c];
        out.inputs.at(r, c) = 1.0 / (1.0 + std::exp(-z));
      }
      out.labels.push_back(y);
    }
    return out;
  };
  for (int t = 1; t <= options.task_count; ++t) {
    std::vector<double> dir(d);
    double norm = 0.0;
    for (double& v : dir) {
      v = rng.normal();
      norm += v * v;
    }
    for (double& v : dir) v /= std::sqrt(norm);
    TaskDataset train = draw(options.train_per_task, dir, t);
    TaskDataset test = draw(options.test_per_task, dir, t);
    stream.tasks.push_back({std::move(train), std::move(test)});
  }
  return stream;
}

ReplayBuffer::ReplayBuffer(std::size_t max_tasks, std::size_t per_task)
    : max_tasks_(max_tasks), per_task_(per_task) {}

void ReplayBuffer::update(const TaskDataset& finished, SeededRng& rng) {
  if (!stored_.empty() && finished.task_id <= stored_.back().task_id) {
    throw ContractError("replay buffer: task " + std::to_string(finished.task_id) +
                        " is not newer than stored task " + std::to_string(stored_.back().task_id));
  }
  if (max_tasks_ == 0 || per_task_ == 0) return;
  stored_.push_back(sample_subset(finished, per_task_, rng));
  while (stored_.size() > max_tasks_) stored_.pop_front();
}

LabeledBatch ReplayBuffer::batch(int current_task, int lag, std::size_t batch_size,
                                 SeededRng& rng) const {
  if (lag < 1) throw ContractError("replay buffer: lag must be >= 1");
  const TaskDataset* data = find(current_task - lag);
  if (data == nullptr || batch_size == 0) return {};
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = rng.below(data->size());
  TaskDataset drawn = data->subset(idx);
  return {std::move(drawn.inputs), std::move(drawn.labels), drawn.head};
}

std::size_t ReplayBuffer::total_examples() const noexcept {
  std::size_t total = 0;
  for (const auto& d : stored_) total += d.size();
  return total;
}

std::vector<int> ReplayBuffer::stored_tasks() const {
  std::vector<int> ids;
  for (const auto& d : stored_) ids.push_back(d.task_id);
  return ids;
}

const TaskDataset* ReplayBuffer::find(int task_id) const {
  for (const auto& d : stored_) {
    if (d.task_id == task_id) return &d;
  }
  return nullptr;
}

CoreSet::CoreSet(std::size_t per_task) : per_task_(per_task) {}

TaskDataset CoreSet::reserve(const TaskDataset& train, SeededRng& rng) {
  if (train.size() < 2) throw ContractError("core set: task too small to split");
  const std::size_t count = std::min(per_task_, train.size() - 1);
  if (count == 0) return train;
  auto idx = random_indices(train.size(), train.size(), rng);
  std::vector<std::size_t> core(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
  std::vector<std::size_t> rest(idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end());
  std::sort(core.begin(), core.end());
  std::sort(rest.begin(), rest.end());
  stored_.push_back(train.subset(core));
  return train.subset(rest);
}

std::size_t CoreSet::total_examples() const noexcept {
  std::size_t total = 0;
  for (const auto& d : stored_) total += d.size();
  return total;
}

}  // namespace tdvcl
