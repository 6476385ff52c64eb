#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "combo/ids.hpp"
#include "combo/model_params.hpp"
#include "combo/rng.hpp"

namespace combo {

struct SgdConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 128;
  std::size_t local_steps = 40;  // tau
};

struct Metrics {
  double loss = 0.0;
  std::optional<double> accuracy;
  // F(w) - F(W*) where the task knows its optimum.
  std::optional<double> suboptimality;
};

// Seeded per-worker sample order, reshuffled at every epoch boundary.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t sample_count, std::uint64_t seed);

  // Indices of the next batch; a batch never straddles an epoch boundary.
  std::span<const std::size_t> next_batch(std::size_t batch_size);

  std::uint64_t epochs() const noexcept { return epochs_; }

 private:
  void reshuffle();

  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epochs_ = 0;
};

class Task {
 public:
  virtual ~Task() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t num_workers() const = 0;
  virtual std::uint64_t dataset_size(WorkerId worker) const = 0;

  // F_i and its exact gradient over the worker's whole local dataset.
  virtual double local_loss(WorkerId worker, std::span<const double> w) const = 0;
  virtual std::vector<double> local_gradient(WorkerId worker,
                                             std::span<const double> w) const = 0;

  // Gradient used by SGD. Full-batch tasks ignore the sampler.
  virtual std::vector<double> sgd_gradient(WorkerId worker, std::span<const double> w,
                                           MinibatchSampler& sampler,
                                           std::size_t batch_size) const;

  virtual Metrics evaluate(const ModelParams& model) const = 0;

  virtual std::optional<ModelParams> optimum() const { return std::nullopt; }

  // |D|-weighted mean of the local gradients over all workers of the task.
  std::vector<double> global_gradient(std::span<const double> w) const;
};

// One worker's strongly convex quadratic F_i(w) = 1/2 (w-c)^T A (w-c).
struct QuadraticWorker {
  std::vector<double> matrix;  // row-major dim x dim, symmetric
  std::vector<double> center;
  std::uint64_t dataset_size = 1;
};

struct QuadraticSpec {
  std::size_t dim = 20;
  std::size_t workers = 30;
  double mu = 0.02;
  double lipschitz = 2.0;  // L
  double center_spread = 0.1;
  double center_offset = 3.0;
  std::uint64_t min_dataset_size = 100;
  std::uint64_t max_dataset_size = 100;
  bool identical_workers = false;
  std::uint64_t seed = 0;
};

class QuadraticTask final : public Task {
 public:
  // Validates symmetry and that every spectrum lies in [mu, lipschitz].
  QuadraticTask(std::size_t dim, std::vector<QuadraticWorker> workers, double mu,
                double lipschitz);

  static QuadraticTask generate(const QuadraticSpec& spec);

  std::size_t dim() const override { return dim_; }
  std::size_t num_workers() const override { return workers_.size(); }
  std::uint64_t dataset_size(WorkerId worker) const override;
  double local_loss(WorkerId worker, std::span<const double> w) const override;
  std::vector<double> local_gradient(WorkerId worker,
                                     std::span<const double> w) const override;
  Metrics evaluate(const ModelParams& model) const override;
  std::optional<ModelParams> optimum() const override { return optimum_; }

  double mu() const noexcept { return mu_; }
  double lipschitz() const noexcept { return lipschitz_; }
  double global_loss(std::span<const double> w) const;
  double min_loss() const noexcept { return min_loss_; }

 private:
  const QuadraticWorker& worker(WorkerId id) const;

  std::size_t dim_;
  std::vector<QuadraticWorker> workers_;
  double mu_;
  double lipschitz_;
  std::optional<ModelParams> optimum_;
  double min_loss_ = 0.0;
};

struct LogisticSpec {
  std::size_t features = 10;
  std::size_t workers = 30;
  std::uint64_t min_dataset_size = 200;
  std::uint64_t max_dataset_size = 200;
  std::size_t validation_size = 2000;
  double separation = 1.0;  // distance of each class mean from the origin
  double noise = 1.0;       // per-feature standard deviation
  double l2 = 1e-3;
  std::uint64_t seed = 0;
};

// Binary logistic regression on two Gaussian classes; the last parameter is
// the bias. Validation samples are shared by every worker.
class LogisticTask final : public Task {
 public:
  static LogisticTask generate(const LogisticSpec& spec);

  std::size_t dim() const override { return features_ + 1; }
  std::size_t num_workers() const override { return samples_.size(); }
  std::uint64_t dataset_size(WorkerId worker) const override;
  double local_loss(WorkerId worker, std::span<const double> w) const override;
  std::vector<double> local_gradient(WorkerId worker,
                                     std::span<const double> w) const override;
  std::vector<double> sgd_gradient(WorkerId worker, std::span<const double> w,
                                   MinibatchSampler& sampler,
                                   std::size_t batch_size) const override;
  Metrics evaluate(const ModelParams& model) const override;

  double l2() const noexcept { return l2_; }

 private:
  struct Samples {
    std::vector<double> x;  // row-major, features_ columns
    std::vector<double> y;  // 0 or 1
    std::size_t size() const noexcept { return y.size(); }
  };

  LogisticTask(std::size_t features, double l2, std::vector<Samples> samples,
               Samples validation)
      : features_(features), l2_(l2), samples_(std::move(samples)),
        validation_(std::move(validation)) {}

  const Samples& samples(WorkerId worker) const;
  double mean_loss(const Samples& s, std::span<const double> w) const;
  void accumulate_gradient(const Samples& s, std::size_t row, std::span<const double> w,
                           std::span<double> grad) const;

  std::size_t features_;
  double l2_;
  std::vector<Samples> samples_;
  Samples validation_;
};

using IterateVisitor = std::function<void(std::span<const double>)>;

/// Runs sgd.local_steps steps of w <- w - alpha * g(w) on the worker's data.
///
/// `visit`, when set, sees every iterate at which a gradient is taken. The
/// update fails with Errc::numeric_failure once the parameter norm exceeds
/// 1e12 or turns non-finite.
ModelParams local_update(const Task& task, WorkerId worker, const ModelParams& model,
                         const SgdConfig& sgd, MinibatchSampler& sampler,
                         const IterateVisitor& visit = {});

// Empirical gradient divergence: max over workers and points of
// ||grad F_i(W) - grad F(W)||. Zero for an empty point set.
double measure_delta(const Task& task, std::span<const ModelParams> points);

struct AggregationSnapshot {
  ModelParams oracle;                    // FedAvg aggregate W_t
  std::vector<ModelParams> aggregated;   // every worker's W_{t,i}
};

// Empirical aggregation divergence: max over rounds and workers of
// ||W_{t,i} - W_t||.
double measure_rho(std::span<const AggregationSnapshot> rounds);

struct BoundParams {
  double mu = 0.0;
  double lipschitz = 0.0;
  double learning_rate = 0.0;
  std::size_t local_steps = 1;
  double delta = 0.0;
  double rho = 0.0;
  double initial_distance = 0.0;  // ||W_0 - W*||
};

/// Upper bound on ||W_{t,i} - W*|| after `round` aggregation rounds:
///   theta^(t tau) d0 + (1 - theta^(t tau)) [rho / (1 - theta^tau) + alpha delta / (1 - theta)]
/// with theta = 1 - alpha mu. Throws unless 0 < theta < 1 and alpha <= 1/L.
double theorem1_bound(const BoundParams& params, std::uint64_t round);

// Limit of theorem1_bound as the round count grows.
double theorem1_limit(const BoundParams& params);

}  // namespace combo
