#include "doctest.h"

#include "tdvcl/errors.hpp"
#include "tdvcl/tasks.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

using namespace tdvcl;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

struct IdxFixture {
  fs::path dir;
  fs::path images, labels;

  IdxFixture() {
    dir = fs::temp_directory_path() / ("tdvcl_idx_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    images = dir / "images.idx";
    labels = dir / "labels.idx";
    // Two 2x3 images: 0..5 and 255,254,...
    std::ofstream img(images, std::ios::binary);
    put_be32(img, 0x803);
    put_be32(img, 2);
    put_be32(img, 2);
    put_be32(img, 3);
    const unsigned char px[12] = {0, 1, 2, 3, 4, 5, 255, 254, 253, 252, 251, 250};
    img.write(reinterpret_cast<const char*>(px), 12);
    std::ofstream lab(labels, std::ios::binary);
    put_be32(lab, 0x801);
    put_be32(lab, 2);
    const unsigned char ys[2] = {7, 3};
    lab.write(reinterpret_cast<const char*>(ys), 2);
  }
  ~IdxFixture() { fs::remove_all(dir); }
};

TaskDataset random_images(std::size_t n, std::size_t d, int classes, SeededRng& rng) {
  TaskDataset out{Tensor({n, d}), {}, 0, classes, {}};
  for (double& v : out.inputs.data()) v = static_cast<double>(rng.below(256)) / 255.0;
  for (std::size_t r = 0; r < n; ++r) out.labels.push_back(static_cast<int>(rng.below(classes)));
  return out;
}

std::vector<double> sorted_row(const TaskDataset& d, std::size_t r) {
  std::vector<double> row(d.inputs.data().begin() + static_cast<std::ptrdiff_t>(r * d.input_dim()),
                          d.inputs.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * d.input_dim()));
  std::sort(row.begin(), row.end());
  return row;
}

}  // namespace

TEST_CASE("load_idx: hand-built fixture") {
  IdxFixture fx;
  TaskDataset d = load_idx(fx.images.string(), fx.labels.string());
  REQUIRE(d.size() == 2);
  CHECK(d.inputs.shape() == std::vector<std::size_t>{2, 6});
  CHECK(d.inputs.at(0, 5) == 5.0 / 255.0);
  CHECK(d.inputs.at(1, 0) == 1.0);
  CHECK(d.labels == std::vector<int>{7, 3});
  CHECK(d.class_count == 8);
  CHECK(load_idx(fx.images.string(), fx.labels.string(), 1).size() == 1);
}

TEST_CASE("load_idx: malformed inputs") {
  IdxFixture fx;
  CHECK_THROWS_AS(load_idx(fx.labels.string(), fx.labels.string()), FormatError);
  CHECK_THROWS_AS(load_idx(fx.images.string(), fx.images.string()), FormatError);
  CHECK_THROWS_AS(load_idx((fx.dir / "missing").string(), fx.labels.string()), IoError);

  // Count mismatch.
  {
    std::ofstream lab(fx.dir / "three.idx", std::ios::binary);
    put_be32(lab, 0x801);
    put_be32(lab, 3);
    const char ys[3] = {1, 2, 3};
    lab.write(ys, 3);
  }
  CHECK_THROWS_AS(load_idx(fx.images.string(), (fx.dir / "three.idx").string()), FormatError);

  // Truncated pixels.
  fs::resize_file(fx.images, 16 + 7);
  CHECK_THROWS_AS(load_idx(fx.images.string(), fx.labels.string()), IoError);
}

TEST_CASE("permuted stream: identity first task, permutation invariants, determinism") {
  SeededRng data_rng(1);
  TaskDataset train = random_images(20, 16, 10, data_rng);
  TaskDataset test = random_images(8, 16, 10, data_rng);

  SeededRng a(5), b(5);
  TaskStream s = make_permuted_stream(train, test, 4, a);
  TaskStream s2 = make_permuted_stream(train, test, 4, b);
  REQUIRE(s.size() == 4);
  CHECK(s.tasks[0].train.inputs == train.inputs);
  CHECK(s.tasks[0].test.inputs == test.inputs);
  CHECK(s.output_dim == 10);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(s.tasks[t].train.inputs == s2.tasks[t].train.inputs);
    CHECK(s.tasks[t].train.labels == train.labels);
    CHECK(s.tasks[t].train.task_id == static_cast<int>(t) + 1);
    for (std::size_t r = 0; r < train.size(); ++r) CHECK(sorted_row(s.tasks[t].train, r) == sorted_row(train, r));
  }
  CHECK(s.tasks[1].train.inputs != train.inputs);

  // Train and test of a task share the permutation: a one-hot pixel moves to the same column.
  TaskDataset probe{Tensor({1, 16}), {0}, 0, 10, {}};
  probe.inputs.at(0, 3) = 1.0;
  SeededRng c(5);
  TaskStream ps = make_permuted_stream(probe, probe, 3, c);
  CHECK(ps.tasks[2].train.inputs == ps.tasks[2].test.inputs);
}

TEST_CASE("split stream: filtering, relabelling, heads") {
  SeededRng rng(2);
  TaskDataset train = random_images(300, 4, 10, rng);
  TaskDataset test = random_images(100, 4, 10, rng);

  TaskStream one = make_split_stream(train, test, {{0, 1}});
  REQUIRE(one.size() == 1);
  const auto expected = std::count_if(train.labels.begin(), train.labels.end(), [](int y) { return y < 2; });
  CHECK(static_cast<long>(one.tasks[0].train.size()) == expected);

  const std::vector<std::pair<int, int>> pairs = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
  TaskStream s = make_split_stream(train, test, pairs);
  CHECK(s.size() == 5);
  CHECK(s.output_dim == 2);
  std::size_t total = 0;
  for (const auto& task : s.tasks) {
    for (int y : task.train.labels) CHECK((y == 0 || y == 1));
    CHECK(task.train.head.classes == 0);
    total += task.train.size();
  }
  CHECK(total == train.size());  // the five pairs partition all ten classes

  TaskStream multi = make_split_stream(train, test, pairs, HeadMode::Multi);
  CHECK(multi.output_dim == 10);
  CHECK(multi.tasks[3].test.head.offset == 6);
  CHECK(multi.tasks[3].test.head.classes == 2);

  CHECK_THROWS_AS(make_split_stream(train, test, {{0, 1}, {1, 2}}), ContractError);
  CHECK_THROWS_AS(make_split_stream(train, test, {{3, 3}}), ContractError);
}

TEST_CASE("synthetic stream: shapes and range") {
  SeededRng rng(3);
  TaskStream s = make_synthetic_stream({3, 5, 40, 10, 2.0}, rng);
  REQUIRE(s.size() == 3);
  for (const auto& task : s.tasks) {
    task.train.validate();
    task.test.validate();
    CHECK(task.train.inputs.cols() == 5);
    for (double v : task.train.inputs.data()) CHECK((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("replay buffer: restriction examples") {
  SeededRng rng(4);
  ReplayBuffer buffer(2, 200);
  for (int t = 1; t <= 3; ++t) {
    TaskDataset d = random_images(500, 3, 10, rng);
    d.task_id = t;
    buffer.update(d, rng);
  }
  CHECK(buffer.stored_tasks() == std::vector<int>{2, 3});
  CHECK(buffer.find(2)->size() == 200);
  CHECK(buffer.total_examples() == 400);

  ReplayBuffer split(1, 40);
  for (int t = 1; t <= 4; ++t) {
    TaskDataset d = random_images(100, 3, 2, rng);
    d.task_id = t;
    split.update(d, rng);
  }
  CHECK(split.stored_tasks() == std::vector<int>{4});
  CHECK(split.total_examples() == 40);

  ReplayBuffer clamp(2, 1000);
  TaskDataset small = random_images(30, 3, 2, rng);
  small.task_id = 1;
  clamp.update(small, rng);
  CHECK(clamp.find(1)->inputs == small.inputs);

  CHECK_THROWS_AS(clamp.update(small, rng), ContractError);
}

TEST_CASE("replay buffer: lag batches") {
  SeededRng rng(5);
  ReplayBuffer buffer(2, 50);
  for (int t = 1; t <= 3; ++t) {
    TaskDataset d = random_images(80, 3, 10, rng);
    d.task_id = t;
    buffer.update(d, rng);
  }
  // Learning task 4: lag 1 -> task 3, lag 2 -> task 2, lag 3 -> task 1 (evicted).
  SeededRng a(9), b(9);
  LabeledBatch lag1 = buffer.batch(4, 1, 64, a);
  CHECK(lag1.size() == 64);
  CHECK(buffer.batch(4, 1, 64, b).inputs == lag1.inputs);
  CHECK_FALSE(buffer.batch(4, 2, 10, a).empty());
  CHECK(buffer.batch(4, 3, 10, a).empty());
  CHECK_THROWS_AS(buffer.batch(4, 0, 10, a), ContractError);

  // Rows come from the stored subset.
  const TaskDataset* stored = buffer.find(3);
  for (std::size_t r = 0; r < lag1.size(); ++r) {
    bool found = false;
    for (std::size_t s = 0; s < stored->size() && !found; ++s) {
      found = std::equal(lag1.inputs.data().begin() + static_cast<std::ptrdiff_t>(r * 3),
                         lag1.inputs.data().begin() + static_cast<std::ptrdiff_t>(r * 3 + 3),
                         stored->inputs.data().begin() + static_cast<std::ptrdiff_t>(s * 3));
    }
    CHECK(found);
  }
}

TEST_CASE("property: replay buffer never exceeds T*B nor holds current data") {
  SeededRng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = rng.below(4), B = 1 + rng.below(30);
    ReplayBuffer buffer(T, B);
    const int tasks = 1 + static_cast<int>(rng.below(8));
    for (int t = 1; t <= tasks; ++t) {
      // While learning task t, every stored task is strictly older.
      for (int id : buffer.stored_tasks()) CHECK(id < t);
      CHECK(buffer.total_examples() <= T * B);
      TaskDataset d = random_images(1 + rng.below(60), 2, 3, rng);
      d.task_id = t;
      buffer.update(d, rng);
    }
    CHECK(buffer.stored_tasks().size() <= T);
  }
}

TEST_CASE("core set: reserved examples leave the training split") {
  SeededRng rng(7);
  TaskDataset train = random_images(50, 4, 10, rng);
  for (std::size_t r = 0; r < train.size(); ++r) train.inputs.at(r, 0) = static_cast<double>(r);  // row tag
  CoreSet core(12);
  TaskDataset rest = core.reserve(train, rng);
  CHECK(rest.size() == 38);
  CHECK(core.total_examples() == 12);
  std::set<double> tags;
  for (std::size_t r = 0; r < rest.size(); ++r) tags.insert(rest.inputs.at(r, 0));
  for (std::size_t r = 0; r < core.tasks()[0].size(); ++r) {
    CHECK(tags.insert(core.tasks()[0].inputs.at(r, 0)).second);
  }
  CHECK(tags.size() == 50);
}

TEST_CASE("task dataset: validation") {
  TaskDataset d{Tensor({2, 2}), {0, 3}, 1, 2, {}};
  CHECK_THROWS_AS(d.validate(), ContractError);
  d.labels = {0, 1};
  CHECK_NOTHROW(d.validate());
  std::vector<std::size_t> bad = {2};
  CHECK_THROWS_AS(d.subset(bad), ContractError);
}
