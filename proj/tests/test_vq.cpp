#include <cmath>

#include "doctest.h"
#include "fullband/vq.hpp"

using namespace fullband;
using nn::Tensor;

namespace {

std::vector<double> random_vec(Rng& rng, int d, double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(d));
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

// independent exhaustive scan
int nearest_ref(const Codebook& book, const std::vector<double>& v) {
  int best = 0;
  double best_d = 1e300;
  for (int k = 0; k < book.entry_count(); ++k) {
    auto e = book.entry(k);
    double d = 0;
    for (size_t i = 0; i < v.size(); ++i) d += (v[i] - e[i]) * (v[i] - e[i]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

double quantize_mse(const Codebook& book, const std::vector<std::vector<double>>& data) {
  double total = 0;
  for (const auto& v : data) {
    auto [idx, code] = book.quantize(v);
    for (size_t i = 0; i < v.size(); ++i) total += (v[i] - code[i]) * (v[i] - code[i]);
  }
  return total / static_cast<double>(data.size());
}

std::vector<std::vector<double>> four_clusters(Rng& rng, int per_cluster, int d) {
  std::vector<std::vector<double>> centers;
  for (int c = 0; c < 4; ++c) {
    std::vector<double> center(static_cast<size_t>(d), 0.0);
    center[static_cast<size_t>(c % d)] = c < 2 ? 5.0 : -5.0;
    center[static_cast<size_t>((c + 1) % d)] = c % 2 ? 5.0 : -5.0;
    centers.push_back(center);
  }
  std::vector<std::vector<double>> data;
  for (int i = 0; i < 4 * per_cluster; ++i) {
    auto v = centers[static_cast<size_t>(i % 4)];
    for (auto& x : v) x += rng.normal() * 0.3;
    data.push_back(std::move(v));
  }
  return data;
}

void train_epochs(Codebook& book, const std::vector<std::vector<double>>& data, int epochs,
                  Rng& rng) {
  int d = book.dim();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    book.reset_usage();
    Tensor batch(static_cast<int>(data.size()), d);
    std::vector<int> assign(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
      assign[i] = book.quantize(data[i]).first;
      std::copy(data[i].begin(), data[i].end(),
                batch.data.begin() + static_cast<ptrdiff_t>(i) * d);
    }
    book.ema_update(batch, assign, 0.99);
    book.accumulate_usage(assign);
    book.random_restart(data, 1.0, rng);
  }
}

}  // namespace

TEST_SUITE("vq") {

TEST_CASE("quantize returns exact matches and Euclidean winners") {
  Rng rng(1);
  Codebook book(16, 8);
  book.init_random(rng, 1.0);
  auto e7 = book.entry(7);
  auto [idx, code] = book.quantize(e7);
  CHECK(idx == 7);
  CHECK(code == e7);

  // two-entry book: {[0,0],[1,1]}, query [0.9, 0.8] -> entry 1
  nn::Checkpoint ck;
  ck.i64["b.shape"] = {2, 2};
  ck.f32["b.entries"] = {0.f, 0.f, 1.f, 1.f};
  ck.f64["b.ema_counts"] = [] {
    fullband::nn::Tensor t(2, 1);
    t.data = {1.0, 1.0};
    return t;
  }();
  ck.f64["b.ema_sums"] = [] {
    fullband::nn::Tensor t(2, 2);
    t.data = {0.0, 0.0, 1.0, 1.0};
    return t;
  }();
  ck.i64["b.usage"] = {0, 0};
  Codebook two = Codebook::from(ck, "b");
  CHECK(two.quantize(std::vector<double>{0.9, 0.8}).first == 1);
  CHECK(two.quantize(std::vector<double>{0.5, 0.5}).first == 0);  // tie -> lowest index

  CHECK_THROWS_AS(book.quantize(std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("quantize matches the exhaustive-scan oracle") {
  Rng rng(2);
  Codebook book(64, 12);
  book.init_random(rng, 1.0);
  for (int i = 0; i < 1000; ++i) {
    auto v = random_vec(rng, 12, 2.0);
    CHECK(book.quantize(v).first == nearest_ref(book, v));
  }
}

TEST_CASE("quantizing a codeword is idempotent") {
  Rng rng(3);
  Codebook book(32, 6);
  book.init_random(rng, 1.0);
  for (int k = 0; k < book.entry_count(); ++k) {
    auto [idx, code] = book.quantize(book.entry(k));
    CHECK(book.quantize(code).first == idx);
  }
}

TEST_CASE("ema update follows the hand-evaluated formula") {
  // one entry, d=2, entries=[1,1], counts=1, sums=[1,1]
  nn::Checkpoint ck;
  ck.i64["b.shape"] = {1, 2};
  ck.f32["b.entries"] = {1.f, 1.f};
  ck.f64["b.ema_counts"] = [] {
    fullband::nn::Tensor t(1, 1);
    t.data = {1.0};
    return t;
  }();
  ck.f64["b.ema_sums"] = [] {
    fullband::nn::Tensor t(1, 2);
    t.data = {1.0, 1.0};
    return t;
  }();
  ck.i64["b.usage"] = {0};
  Codebook book = Codebook::from(ck, "b");

  // four copies of v* = [3, -1], decay 0.99
  Tensor batch(4, 2);
  for (int i = 0; i < 4; ++i) {
    batch.at(i, 0) = 3.0;
    batch.at(i, 1) = -1.0;
  }
  book.ema_update(batch, {0, 0, 0, 0}, 0.99);
  double count = 0.99 * 1.0 + 0.01 * 4.0;  // 1.03
  double sum0 = 0.99 * 1.0 + 0.01 * 12.0;  // 1.11
  double sum1 = 0.99 * 1.0 + 0.01 * -4.0;  // 0.95
  CHECK(book.entry(0)[0] == doctest::Approx(sum0 / (count + 1e-5)).epsilon(1e-6));
  CHECK(book.entry(0)[1] == doctest::Approx(sum1 / (count + 1e-5)).epsilon(1e-6));
  // moved toward v* from [1,1]
  CHECK(book.entry(0)[0] > 1.0);
  CHECK(book.entry(0)[1] < 1.0);
}

TEST_CASE("unassigned entries keep their direction") {
  Rng rng(4);
  Codebook book(4, 3);
  book.init_random(rng, 1.0);
  auto before = book.entry(3);
  Tensor batch(2, 3);
  std::vector<int> assign = {0, 1};
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 3; ++c) batch.at(i, c) = rng.normal();
  book.ema_update(batch, assign, 0.99);
  auto after = book.entry(3);
  for (int c = 0; c < 3; ++c)
    CHECK(after[static_cast<size_t>(c)] ==
          doctest::Approx(before[static_cast<size_t>(c)]).epsilon(1e-3));
}

TEST_CASE("two ema steps equal one step with squared decay plus geometric mass") {
  Rng rng(5);
  Codebook a(8, 4);
  a.init_random(rng, 1.0);
  Rng rng2(5);
  Codebook b(8, 4);
  b.init_random(rng2, 1.0);

  Tensor batch(6, 4);
  Rng data_rng(6);
  for (auto& v : batch.data) v = data_rng.normal();
  std::vector<int> assign;
  for (int i = 0; i < 6; ++i) assign.push_back(static_cast<int>(data_rng.uniform_int(0, 7)));

  double d = 0.9;
  a.ema_update(batch, assign, d);
  a.ema_update(batch, assign, d);
  double total0 = 8.0;  // init counts are 1
  CHECK(a.total_ema_mass() ==
        doctest::Approx(d * d * total0 + (1 - d) * (1 + d) * 6.0).epsilon(1e-5));

  b.ema_update(batch, assign, d);
  CHECK(b.total_ema_mass() == doctest::Approx(d * total0 + (1 - d) * 6.0).epsilon(1e-5));
}

TEST_CASE("ema mass conservation across steps") {
  Rng rng(7);
  Codebook book(16, 4);
  book.init_random(rng, 1.0);
  double mass = book.total_ema_mass();
  for (int step = 0; step < 10; ++step) {
    Tensor batch(5, 4);
    std::vector<int> assign;
    for (auto& v : batch.data) v = rng.normal();
    for (int i = 0; i < 5; ++i) assign.push_back(static_cast<int>(rng.uniform_int(0, 15)));
    book.ema_update(batch, assign, 0.99);
    double expected = 0.99 * mass + 0.01 * 5.0;
    CHECK(book.total_ema_mass() == doctest::Approx(expected).epsilon(1e-6));
    mass = book.total_ema_mass();
  }
}

TEST_CASE("random restart reseats only dead entries") {
  Rng rng(8);
  Codebook book(4, 3);
  book.init_random(rng, 1.0);
  book.reset_usage();
  std::vector<int> used = {0, 1, 2};  // entry 3 dead
  book.accumulate_usage(used);
  std::vector<std::vector<double>> pool;
  for (int i = 0; i < 100; ++i) pool.push_back(random_vec(rng, 3));

  auto alive = book.entry(0);
  CHECK(book.random_restart(pool, 1.0, rng) == 1);
  CHECK(book.entry(0) == alive);
  auto reseeded = book.entry(3);
  bool found = false;
  for (const auto& p : pool) {
    bool eq = true;
    for (int c = 0; c < 3; ++c)
      eq = eq && static_cast<float>(p[static_cast<size_t>(c)]) ==
                     static_cast<float>(reseeded[static_cast<size_t>(c)]);
    found = found || eq;
  }
  CHECK(found);

  book.reset_usage();
  book.accumulate_usage(std::vector<int>{0, 1, 2, 3});
  CHECK(book.random_restart(pool, 1.0, rng) == 0);

  CHECK_THROWS_AS(book.random_restart({}, 1.0, rng), ValidationError);
}

TEST_CASE("training with restarts beats a frozen random codebook on planted clusters") {
  Rng rng(9);
  auto data = four_clusters(rng, 64, 8);
  Codebook frozen(8, 8);
  frozen.init_random(rng, 1.0);
  Codebook trained = frozen;  // same start
  Rng train_rng(10);
  train_epochs(trained, data, 12, train_rng);
  CHECK(trained.used_entries() >= 4);
  CHECK(quantize_mse(trained, data) < 0.5 * quantize_mse(frozen, data));
}

TEST_CASE("quantization error is non-increasing over epochs within 5% jitter") {
  Rng rng(11);
  auto data = four_clusters(rng, 48, 6);
  Codebook book(8, 6);
  book.init_random(rng, 1.0);
  Rng train_rng(12);
  double prev = quantize_mse(book, data);
  for (int epoch = 0; epoch < 10; ++epoch) {
    train_epochs(book, data, 1, train_rng);
    double now = quantize_mse(book, data);
    CHECK(now <= prev * 1.05);
    prev = now;
  }
}

TEST_CASE("codebook checkpoints reload bit-exactly") {
  Rng rng(13);
  Codebook book(64, 128);
  book.init_random(rng, 0.5);
  Tensor batch(10, 128);
  std::vector<int> assign;
  for (auto& v : batch.data) v = rng.normal();
  for (int i = 0; i < 10; ++i) assign.push_back(static_cast<int>(rng.uniform_int(0, 63)));
  book.ema_update(batch, assign, 0.99);
  book.accumulate_usage(assign);

  std::string path = "/tmp/fullband_test_book.bin";
  book.save(path);
  Codebook back = Codebook::load(path);
  CHECK(back == book);
}

}  // TEST_SUITE
