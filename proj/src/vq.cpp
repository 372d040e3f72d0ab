#include "fullband/vq.hpp"

#include <cmath>

namespace fullband {

Codebook::Codebook(int entry_count, int dim)
    : k_(entry_count),
      d_(dim),
      entries_(static_cast<size_t>(entry_count) * dim, 0.0f),
      ema_counts_(static_cast<size_t>(entry_count), 1.0),
      ema_sums_(static_cast<size_t>(entry_count) * dim, 0.0),
      usage_(static_cast<size_t>(entry_count), 0) {
  if (entry_count < 1 || dim < 1) throw ValidationError("codebook needs positive K and D");
}

void Codebook::init_random(Rng& rng, double stddev) {
  for (auto& e : entries_) e = static_cast<float>(rng.normal() * stddev);
  // EMA state starts at the fixpoint count=1, sum=entry
  for (int k = 0; k < k_; ++k) {
    ema_counts_[static_cast<size_t>(k)] = 1.0;
    for (int c = 0; c < d_; ++c)
      ema_sums_[static_cast<size_t>(k) * d_ + c] =
          static_cast<double>(entries_[static_cast<size_t>(k) * d_ + c]);
  }
}

std::pair<int, std::vector<double>> Codebook::quantize(std::span<const double> v) const {
  if (static_cast<int>(v.size()) != d_)
    throw ValidationError("quantize: expected dim " + std::to_string(d_) + ", got " +
                          std::to_string(v.size()));
  int best = 0;
  double best_dist = 0;
  for (int k = 0; k < k_; ++k) {
    double dist = 0;
    for (int c = 0; c < d_; ++c) {
      double diff = v[static_cast<size_t>(c)] -
                    static_cast<double>(entries_[static_cast<size_t>(k) * d_ + c]);
      dist += diff * diff;
    }
    if (k == 0 || dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return {best, entry(best)};
}

std::vector<double> Codebook::entry(int index) const {
  if (index < 0 || index >= k_) throw ValidationError("codebook index out of range");
  std::vector<double> out(static_cast<size_t>(d_));
  for (int c = 0; c < d_; ++c)
    out[static_cast<size_t>(c)] = static_cast<double>(entries_[static_cast<size_t>(index) * d_ + c]);
  return out;
}

void Codebook::ema_update(const nn::Tensor& batch, const std::vector<int>& assignments,
                          double decay) {
  if (decay <= 0.0 || decay >= 1.0) throw ValidationError("ema decay must lie in (0,1)");
  if (batch.cols != d_ || batch.rows != static_cast<int>(assignments.size()))
    throw ValidationError("ema_update: batch shape mismatch");
  std::vector<double> n_k(static_cast<size_t>(k_), 0.0);
  std::vector<double> sum_k(static_cast<size_t>(k_) * d_, 0.0);
  for (int i = 0; i < batch.rows; ++i) {
    int k = assignments[static_cast<size_t>(i)];
    if (k < 0 || k >= k_) throw ValidationError("ema_update: assignment out of range");
    n_k[static_cast<size_t>(k)] += 1.0;
    for (int c = 0; c < d_; ++c)
      sum_k[static_cast<size_t>(k) * d_ + c] += batch.at(i, c);
  }
  constexpr double eps = 1e-5;
  for (int k = 0; k < k_; ++k) {
    double count = decay * ema_counts_[static_cast<size_t>(k)] +
                   (1.0 - decay) * n_k[static_cast<size_t>(k)];
    ema_counts_[static_cast<size_t>(k)] = count;
    for (int c = 0; c < d_; ++c) {
      size_t at = static_cast<size_t>(k) * d_ + c;
      double sum = decay * ema_sums_[at] + (1.0 - decay) * sum_k[at];
      ema_sums_[at] = sum;
      entries_[at] = static_cast<float>(sum / (count + eps));
    }
  }
}

int Codebook::random_restart(const std::vector<std::vector<double>>& pool, double threshold,
                             Rng& rng) {
  if (pool.empty()) throw ValidationError("random_restart: empty pool");
  int restarted = 0;
  for (int k = 0; k < k_; ++k) {
    if (static_cast<double>(usage_[static_cast<size_t>(k)]) >= threshold) continue;
    const auto& src = pool[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
    if (static_cast<int>(src.size()) != d_)
      throw ValidationError("random_restart: pool vector dim mismatch");
    for (int c = 0; c < d_; ++c) {
      size_t at = static_cast<size_t>(k) * d_ + c;
      entries_[at] = static_cast<float>(src[static_cast<size_t>(c)]);
      ema_sums_[at] = static_cast<double>(entries_[at]);
    }
    ema_counts_[static_cast<size_t>(k)] = 1.0;
    ++restarted;
  }
  return restarted;
}

void Codebook::reset_usage() { std::fill(usage_.begin(), usage_.end(), 0); }

void Codebook::accumulate_usage(std::span<const int> assignments) {
  for (int k : assignments) {
    if (k < 0 || k >= k_) throw ValidationError("usage: assignment out of range");
    ++usage_[static_cast<size_t>(k)];
  }
}

int Codebook::used_entries() const {
  int used = 0;
  for (int64_t u : usage_) used += u > 0;
  return used;
}

double Codebook::total_ema_mass() const {
  double total = 0;
  for (double c : ema_counts_) total += c;
  return total;
}

void Codebook::put(nn::Checkpoint& ck, const std::string& prefix) const {
  ck.i64[prefix + ".shape"] = {k_, d_};
  ck.f32[prefix + ".entries"] = entries_;
  nn::Tensor counts(k_, 1), sums(k_, d_);
  counts.data = ema_counts_;
  sums.data = ema_sums_;
  ck.f64[prefix + ".ema_counts"] = std::move(counts);
  ck.f64[prefix + ".ema_sums"] = std::move(sums);
  ck.i64[prefix + ".usage"] = usage_;
}

Codebook Codebook::from(const nn::Checkpoint& ck, const std::string& prefix) {
  auto shape_it = ck.i64.find(prefix + ".shape");
  if (shape_it == ck.i64.end() || shape_it->second.size() != 2)
    throw ValidationError("checkpoint missing codebook " + prefix);
  Codebook book(static_cast<int>(shape_it->second[0]), static_cast<int>(shape_it->second[1]));
  auto get32 = [&](const std::string& name, size_t expected) -> const std::vector<float>& {
    auto it = ck.f32.find(name);
    if (it == ck.f32.end() || it->second.size() != expected)
      throw ValidationError("checkpoint missing or malformed array " + name);
    return it->second;
  };
  auto get64 = [&](const std::string& name, size_t expected) -> const nn::Tensor& {
    auto it = ck.f64.find(name);
    if (it == ck.f64.end() || it->second.size() != expected)
      throw ValidationError("checkpoint missing or malformed array " + name);
    return it->second;
  };
  book.entries_ = get32(prefix + ".entries", book.entries_.size());
  book.ema_counts_ = get64(prefix + ".ema_counts", book.ema_counts_.size()).data;
  book.ema_sums_ = get64(prefix + ".ema_sums", book.ema_sums_.size()).data;
  auto usage_it = ck.i64.find(prefix + ".usage");
  if (usage_it == ck.i64.end() || usage_it->second.size() != book.usage_.size())
    throw ValidationError("checkpoint missing codebook usage " + prefix);
  book.usage_ = usage_it->second;
  return book;
}

void Codebook::save(const std::string& path) const {
  nn::Checkpoint ck;
  ck.kind = "codebook";
  put(ck, "codebook");
  ck.save(path);
}

Codebook Codebook::load(const std::string& path) {
  nn::Checkpoint ck = nn::Checkpoint::load(path);
  if (ck.kind != "codebook") throw ValidationError("not a codebook checkpoint: " + path);
  return from(ck, "codebook");
}

bool Codebook::operator==(const Codebook& o) const {
  return k_ == o.k_ && d_ == o.d_ && entries_ == o.entries_ && ema_counts_ == o.ema_counts_ &&
         ema_sums_ == o.ema_sums_ && usage_ == o.usage_;
}

}  // namespace fullband
