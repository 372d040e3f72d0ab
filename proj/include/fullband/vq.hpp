#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fullband/common.hpp"
#include "fullband/nn.hpp"

namespace fullband {

// Vector-quantization codebook learned by exponential-moving-average updates
// with random restart of dead entries. Entries are kept in float32 (the
// checkpoint stores them row-major as float32); the EMA accumulators stay in
// double so mass bookkeeping is exact, and both reload bit-exactly.
//
// quantize() is pure; ema_update / random_restart / usage mutate the book
// and must be externally serialized (single writer).
class Codebook {
 public:
  Codebook(int entry_count, int dim);

  int entry_count() const { return k_; }
  int dim() const { return d_; }

  void init_random(Rng& rng, double stddev = 1.0);

  // Nearest entry by Euclidean distance, ties to the lowest index.
  // Returns the index and a copy of the winning entry.
  std::pair<int, std::vector<double>> quantize(std::span<const double> v) const;

  std::vector<double> entry(int index) const;

  // counts_k <- decay*counts_k + (1-decay)*n_k
  // sums_k   <- decay*sums_k   + (1-decay)*sum of assigned vectors
  // entry_k  <- sums_k / (counts_k + 1e-5)
  void ema_update(const nn::Tensor& batch, const std::vector<int>& assignments, double decay);

  // Every entry whose epoch usage is below the threshold is reassigned to a
  // uniformly sampled pool vector with EMA state reset (count 1, sum = entry).
  // Returns the number of restarted entries.
  int random_restart(const std::vector<std::vector<double>>& pool, double threshold, Rng& rng);

  void reset_usage();
  void accumulate_usage(std::span<const int> assignments);
  int64_t usage_of(int index) const { return usage_[static_cast<size_t>(index)]; }
  int used_entries() const;

  double total_ema_mass() const;

  // checkpoint embedding (shape header + float32 entries + EMA state + usage)
  void put(nn::Checkpoint& ck, const std::string& prefix) const;
  static Codebook from(const nn::Checkpoint& ck, const std::string& prefix);
  void save(const std::string& path) const;
  static Codebook load(const std::string& path);

  bool operator==(const Codebook& o) const;

 private:
  int k_, d_;
  std::vector<float> entries_;      // k x d row-major
  std::vector<double> ema_counts_;  // k
  std::vector<double> ema_sums_;    // k x d
  std::vector<int64_t> usage_;      // per-epoch assignment counts
};

}  // namespace fullband
