#include "combo/tasks.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "combo/error.hpp"

namespace combo {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::uint64_t draw_size(Rng& rng, std::uint64_t lo, std::uint64_t hi) {
  if (lo == 0 || hi < lo) {
    throw Error(Errc::invalid_argument, "dataset size range must satisfy 1 <= min <= max");
  }
  return lo + rng.below(static_cast<std::size_t>(hi - lo + 1));
}

// Stable log(1 + exp(z)).
double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

MinibatchSampler::MinibatchSampler(std::size_t sample_count, std::uint64_t seed)
    : rng_(seed), order_(sample_count) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!order_.empty()) reshuffle();
}

void MinibatchSampler::reshuffle() {
  rng_.shuffle(std::span<std::size_t>(order_));
  cursor_ = 0;
}

std::span<const std::size_t> MinibatchSampler::next_batch(std::size_t batch_size) {
  if (order_.empty() || batch_size == 0) {
    throw Error(Errc::invalid_argument, "empty sampler or zero batch size");
  }
  if (cursor_ >= order_.size()) {
    ++epochs_;
    reshuffle();
  }
  const std::size_t take = std::min(batch_size, order_.size() - cursor_);
  std::span<const std::size_t> batch(order_.data() + cursor_, take);
  cursor_ += take;
  return batch;
}

std::vector<double> Task::sgd_gradient(WorkerId worker, std::span<const double> w,
                                       MinibatchSampler&, std::size_t) const {
  return local_gradient(worker, w);
}

std::vector<double> Task::global_gradient(std::span<const double> w) const {
  std::vector<double> out(dim(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < num_workers(); ++i) {
    const auto id = worker_id(static_cast<std::uint32_t>(i));
    const double weight = static_cast<double>(dataset_size(id));
    const auto g = local_gradient(id, w);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += weight * g[k];
    total += weight;
  }
  for (double& x : out) x /= total;
  return out;
}

// ---------------------------------------------------------------------------
// Quadratic

QuadraticTask::QuadraticTask(std::size_t dim, std::vector<QuadraticWorker> workers,
                             double mu, double lipschitz)
    : dim_(dim), workers_(std::move(workers)), mu_(mu), lipschitz_(lipschitz) {
  if (dim_ == 0 || workers_.empty()) {
    throw Error(Errc::invalid_argument, "quadratic task needs dim >= 1 and a worker");
  }
  if (!(mu_ > 0.0) || lipschitz_ < mu_) {
    throw Error(Errc::invalid_argument, "need 0 < mu <= L");
  }
  RowMatrix hessian = RowMatrix::Zero(dim_, dim_);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim_);
  double total = 0.0;
  for (std::size_t i = 0; i < workers_.size(); ++i) {
    const auto& w = workers_[i];
    if (w.matrix.size() != dim_ * dim_ || w.center.size() != dim_) {
      throw Error(Errc::dimension_mismatch,
                  "quadratic worker " + std::to_string(i) + " has wrong shape");
    }
    if (w.dataset_size == 0) {
      throw Error(Errc::non_positive_weight, "dataset size must be positive");
    }
    ConstMatrixMap a(w.matrix.data(), dim_, dim_);
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff())) {
      throw Error(Errc::invalid_argument, "matrix of worker " + std::to_string(i) + " is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<RowMatrix> eig(a);
    const double tol = 1e-9 * lipschitz_;
    if (eig.eigenvalues().minCoeff() < mu_ - tol || eig.eigenvalues().maxCoeff() > lipschitz_ + tol) {
      throw Error(Errc::invalid_argument,
                  "spectrum of worker " + std::to_string(i) + " leaves [mu, L]");
    }
    const double p = static_cast<double>(w.dataset_size);
    hessian += p * a;
    rhs += p * (a * ConstVectorMap(w.center.data(), dim_));
    total += p;
  }
  hessian /= total;
  rhs /= total;
  Eigen::VectorXd opt = hessian.llt().solve(rhs);
  optimum_ = ModelParams(std::vector<double>(opt.data(), opt.data() + dim_));
  min_loss_ = global_loss(optimum_->values());
}

QuadraticTask QuadraticTask::generate(const QuadraticSpec& spec) {
  if (spec.dim == 0 || spec.workers == 0) {
    throw Error(Errc::invalid_argument, "quadratic task needs dim >= 1 and a worker");
  }
  Rng shared(derive_seed(spec.seed, "task-shared"));
  Eigen::VectorXd offset(spec.dim);
  for (std::size_t k = 0; k < spec.dim; ++k) offset[k] = spec.center_offset * shared.normal();
  // Every worker shares one curvature: a random rotation of a geometric
  // spectrum running from mu to L. Workers differ in centers and sizes.
  RowMatrix g(spec.dim, spec.dim);
  for (std::size_t r = 0; r < spec.dim; ++r)
    for (std::size_t c = 0; c < spec.dim; ++c) g(r, c) = shared.normal();
  RowMatrix q = Eigen::HouseholderQR<RowMatrix>(g).householderQ();
  Eigen::VectorXd eig(spec.dim);
  for (std::size_t k = 0; k < spec.dim; ++k) {
    const double f = spec.dim == 1 ? 1.0 : static_cast<double>(k) / static_cast<double>(spec.dim - 1);
    eig[k] = std::min(spec.lipschitz, std::max(spec.mu, spec.mu * std::pow(spec.lipschitz / spec.mu, f)));
  }
  RowMatrix a = q * eig.asDiagonal() * q.transpose();
  a = 0.5 * (a + a.transpose()).eval();

  std::vector<QuadraticWorker> workers;
  workers.reserve(spec.workers);
  for (std::size_t i = 0; i < spec.workers; ++i) {
    // Identical workers all reuse stream 0, so every worker gets the same
    // objective and dataset size.
    Rng rng(derive_seed(spec.seed, "task-worker", spec.identical_workers ? 0 : i));
    QuadraticWorker w;
    w.matrix.assign(a.data(), a.data() + a.size());
    w.center.resize(spec.dim);
    for (std::size_t k = 0; k < spec.dim; ++k) {
      w.center[k] = offset[k] + spec.center_spread * rng.normal();
    }
    w.dataset_size = draw_size(rng, spec.min_dataset_size, spec.max_dataset_size);
    workers.push_back(std::move(w));
  }
  return QuadraticTask(spec.dim, std::move(workers), spec.mu, spec.lipschitz);
}

const QuadraticWorker& QuadraticTask::worker(WorkerId id) const {
  if (raw(id) >= workers_.size()) {
    throw Error(Errc::invalid_argument, "task has no worker " + std::to_string(raw(id)));
  }
  return workers_[raw(id)];
}

std::uint64_t QuadraticTask::dataset_size(WorkerId id) const {
  return worker(id).dataset_size;
}

double QuadraticTask::local_loss(WorkerId id, std::span<const double> w) const {
  const auto& q = worker(id);
  ConstMatrixMap a(q.matrix.data(), dim_, dim_);
  Eigen::VectorXd d = ConstVectorMap(w.data(), dim_) - ConstVectorMap(q.center.data(), dim_);
  return 0.5 * d.dot(a * d);
}

std::vector<double> QuadraticTask::local_gradient(WorkerId id,
                                                  std::span<const double> w) const {
  const auto& q = worker(id);
  ConstMatrixMap a(q.matrix.data(), dim_, dim_);
  Eigen::VectorXd g = a * (ConstVectorMap(w.data(), dim_) - ConstVectorMap(q.center.data(), dim_));
  return {g.data(), g.data() + dim_};
}

double QuadraticTask::global_loss(std::span<const double> w) const {
  double acc = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < workers_.size(); ++i) {
    const double p = static_cast<double>(workers_[i].dataset_size);
    acc += p * local_loss(worker_id(static_cast<std::uint32_t>(i)), w);
    total += p;
  }
  return acc / total;
}

Metrics QuadraticTask::evaluate(const ModelParams& model) const {
  if (model.dim() != dim_) {
    throw Error(Errc::dimension_mismatch, "model does not match the task");
  }
  Metrics m;
  m.loss = global_loss(model.values());
  m.suboptimality = std::max(0.0, m.loss - min_loss_);
  return m;
}

// ---------------------------------------------------------------------------
// Logistic

LogisticTask LogisticTask::generate(const LogisticSpec& spec) {
  if (spec.features == 0 || spec.workers == 0 || spec.validation_size == 0) {
    throw Error(Errc::invalid_argument, "logistic task needs features, workers and validation samples");
  }
  Rng shared(derive_seed(spec.seed, "task-shared"));
  std::vector<double> direction(spec.features);
  for (double& d : direction) d = shared.normal();
  const double len = norm(direction);
  for (double& d : direction) d /= len;

  auto draw = [&](Rng& rng, std::size_t count) {
    Samples s;
    s.x.reserve(count * spec.features);
    s.y.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
      const bool positive = rng.uniform() < 0.5;
      const double sign = positive ? 1.0 : -1.0;
      for (std::size_t k = 0; k < spec.features; ++k) {
        s.x.push_back(sign * spec.separation * direction[k] + spec.noise * rng.normal());
      }
      s.y.push_back(positive ? 1.0 : 0.0);
    }
    return s;
  };

  std::vector<Samples> samples;
  samples.reserve(spec.workers);
  for (std::size_t i = 0; i < spec.workers; ++i) {
    Rng rng(derive_seed(spec.seed, "task-worker", i));
    const auto size = draw_size(rng, spec.min_dataset_size, spec.max_dataset_size);
    samples.push_back(draw(rng, static_cast<std::size_t>(size)));
  }
  Rng val_rng(derive_seed(spec.seed, "task-validation"));
  auto validation = draw(val_rng, spec.validation_size);
  return LogisticTask(spec.features, spec.l2, std::move(samples), std::move(validation));
}

const LogisticTask::Samples& LogisticTask::samples(WorkerId worker) const {
  if (raw(worker) >= samples_.size()) {
    throw Error(Errc::invalid_argument, "task has no worker " + std::to_string(raw(worker)));
  }
  return samples_[raw(worker)];
}

std::uint64_t LogisticTask::dataset_size(WorkerId worker) const {
  return samples(worker).size();
}

double LogisticTask::mean_loss(const Samples& s, std::span<const double> w) const {
  double acc = 0.0;
  for (std::size_t n = 0; n < s.size(); ++n) {
    double z = w[features_];
    const double* row = s.x.data() + n * features_;
    for (std::size_t k = 0; k < features_; ++k) z += w[k] * row[k];
    // -log p(y | x) for y in {0, 1}
    acc += s.y[n] > 0.5 ? softplus(-z) : softplus(z);
  }
  double reg = 0.0;
  for (double x : w) reg += x * x;
  return acc / static_cast<double>(s.size()) + 0.5 * l2_ * reg;
}

void LogisticTask::accumulate_gradient(const Samples& s, std::size_t row,
                                       std::span<const double> w,
                                       std::span<double> grad) const {
  const double* x = s.x.data() + row * features_;
  double z = w[features_];
  for (std::size_t k = 0; k < features_; ++k) z += w[k] * x[k];
  const double r = sigmoid(z) - s.y[row];
  for (std::size_t k = 0; k < features_; ++k) grad[k] += r * x[k];
  grad[features_] += r;
}

double LogisticTask::local_loss(WorkerId worker, std::span<const double> w) const {
  return mean_loss(samples(worker), w);
}

std::vector<double> LogisticTask::local_gradient(WorkerId worker,
                                                 std::span<const double> w) const {
  const auto& s = samples(worker);
  std::vector<double> grad(dim(), 0.0);
  for (std::size_t n = 0; n < s.size(); ++n) accumulate_gradient(s, n, w, grad);
  const double inv = 1.0 / static_cast<double>(s.size());
  for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = grad[k] * inv + l2_ * w[k];
  return grad;
}

std::vector<double> LogisticTask::sgd_gradient(WorkerId worker, std::span<const double> w,
                                               MinibatchSampler& sampler,
                                               std::size_t batch_size) const {
  const auto& s = samples(worker);
  const auto batch = sampler.next_batch(batch_size);
  std::vector<double> grad(dim(), 0.0);
  for (std::size_t n : batch) accumulate_gradient(s, n, w, grad);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = grad[k] * inv + l2_ * w[k];
  return grad;
}

Metrics LogisticTask::evaluate(const ModelParams& model) const {
  if (model.dim() != dim()) {
    throw Error(Errc::dimension_mismatch, "model does not match the task");
  }
  const auto w = model.values();
  std::size_t correct = 0;
  for (std::size_t n = 0; n < validation_.size(); ++n) {
    double z = w[features_];
    const double* row = validation_.x.data() + n * features_;
    for (std::size_t k = 0; k < features_; ++k) z += w[k] * row[k];
    const bool predicted = z > 0.0;
    if (predicted == (validation_.y[n] > 0.5)) ++correct;
  }
  Metrics m;
  m.loss = mean_loss(validation_, w);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(validation_.size());
  return m;
}

// ---------------------------------------------------------------------------

ModelParams local_update(const Task& task, WorkerId worker, const ModelParams& model,
                         const SgdConfig& sgd, MinibatchSampler& sampler,
                         const IterateVisitor& visit) {
  if (model.dim() != task.dim()) {
    throw Error(Errc::dimension_mismatch, "model does not match the task");
  }
  if (!(sgd.learning_rate > 0.0)) {
    throw Error(Errc::invalid_argument, "learning rate must be positive");
  }
  std::vector<double> w(model.values().begin(), model.values().end());
  for (std::size_t step = 0; step < sgd.local_steps; ++step) {
    if (visit) visit(w);
    const auto g = task.sgd_gradient(worker, w, sampler, sgd.batch_size);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= sgd.learning_rate * g[k];
    const double n = norm(w);
    if (!std::isfinite(n) || n > 1e12) {
      throw Error(Errc::numeric_failure,
                  "worker " + std::to_string(raw(worker)) + " diverged at local step " +
                      std::to_string(step + 1));
    }
  }
  return ModelParams(std::move(w));
}

double measure_delta(const Task& task, std::span<const ModelParams> points) {
  const std::size_t n = task.num_workers();
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += static_cast<double>(task.dataset_size(worker_id(static_cast<std::uint32_t>(j))));
  double delta = 0.0;
  for (const auto& p : points) {
    std::vector<std::vector<double>> grads;
    grads.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      grads.push_back(task.local_gradient(worker_id(static_cast<std::uint32_t>(i)), p.values()));
    }
    // grad_i - grad = sum_j w_j (grad_i - grad_j) / W, exact zero for identical workers
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> diff(p.dim(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double w = static_cast<double>(task.dataset_size(worker_id(static_cast<std::uint32_t>(j)))) / total;
        for (std::size_t k = 0; k < diff.size(); ++k) diff[k] += w * (grads[i][k] - grads[j][k]);
      }
      double sq = 0.0;
      for (double d : diff) sq += d * d;
      delta = std::max(delta, std::sqrt(sq));
    }
  }
  return delta;
}

double measure_rho(std::span<const AggregationSnapshot> rounds) {
  double rho = 0.0;
  for (const auto& r : rounds) {
    for (const auto& m : r.aggregated) {
      if (m.dim() != r.oracle.dim()) {
        throw Error(Errc::dimension_mismatch, "snapshot dimensions differ");
      }
      rho = std::max(rho, distance(m.values(), r.oracle.values()));
    }
  }
  return rho;
}

namespace {

double checked_theta(const BoundParams& p) {
  if (!(p.learning_rate > 0.0) || !(p.mu > 0.0) || p.lipschitz < p.mu) {
    throw Error(Errc::invalid_argument, "bound needs alpha > 0 and 0 < mu <= L");
  }
  if (p.learning_rate > 1.0 / p.lipschitz) {
    throw Error(Errc::invalid_argument, "bound needs alpha <= 1/L");
  }
  if (p.local_steps == 0 || p.delta < 0.0 || p.rho < 0.0 || p.initial_distance < 0.0) {
    throw Error(Errc::invalid_argument, "bound needs tau >= 1 and non-negative delta, rho, d0");
  }
  const double theta = 1.0 - p.learning_rate * p.mu;
  if (!(theta > 0.0 && theta < 1.0)) {
    throw Error(Errc::invalid_argument, "theta = 1 - alpha mu must lie in (0, 1)");
  }
  return theta;
}

}  // namespace

double theorem1_limit(const BoundParams& p) {
  const double theta = checked_theta(p);
  const double tau = static_cast<double>(p.local_steps);
  return p.rho / (1.0 - std::pow(theta, tau)) + p.learning_rate * p.delta / (1.0 - theta);
}

double theorem1_bound(const BoundParams& p, std::uint64_t round) {
  const double theta = checked_theta(p);
  const double decay = std::pow(theta, static_cast<double>(round) * static_cast<double>(p.local_steps));
  return decay * p.initial_distance + (1.0 - decay) * theorem1_limit(p);
}

}  // namespace combo
