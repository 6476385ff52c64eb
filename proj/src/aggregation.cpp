#include "combo/aggregation.hpp"

#include <algorithm>
#include <string>

#include "combo/error.hpp"

namespace combo {
namespace {

// Sums w_j * (x_j - x_0) around the first provider's value so a single
// provider, or identical providers, reproduce their input bit-exactly.
void weighted_mean_into(std::span<const std::span<const double>> values,
                        std::span<const std::uint64_t> weights,
                        std::span<double> out) {
  double total = 0.0;
  for (auto w : weights) total += static_cast<double>(w);
  const auto& base = values.front();
  for (std::size_t c = 0; c < out.size(); ++c) {
    const double x0 = base[c];
    double lo = x0;
    double hi = x0;
    double acc = 0.0;
    for (std::size_t k = 1; k < values.size(); ++k) {
      const double x = values[k][c];
      acc += static_cast<double>(weights[k]) * (x - x0);
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    out[c] = std::clamp(x0 + acc / total, lo, hi);
  }
}

}  // namespace

std::vector<double> aggregate_segment(std::span<const Contribution> providers) {
  if (providers.empty()) {
    throw Error(Errc::empty_providers, "segment has no providers");
  }
  std::vector<const Contribution*> order;
  order.reserve(providers.size());
  for (const auto& p : providers) order.push_back(&p);
  std::sort(order.begin(), order.end(),
            [](const Contribution* a, const Contribution* b) { return a->worker < b->worker; });

  const std::size_t len = order.front()->values.size();
  std::vector<std::span<const double>> values;
  std::vector<std::uint64_t> weights;
  values.reserve(order.size());
  weights.reserve(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& p = *order[k];
    if (k > 0 && order[k - 1]->worker == p.worker) {
      throw Error(Errc::duplicate_provider,
                  "worker " + std::to_string(raw(p.worker)) + " provides the segment twice");
    }
    if (p.weight == 0) {
      throw Error(Errc::non_positive_weight,
                  "worker " + std::to_string(raw(p.worker)) + " has zero weight");
    }
    if (p.values.size() != len) {
      throw Error(Errc::segment_length, "provider segment lengths differ");
    }
    values.push_back(p.values);
    weights.push_back(p.weight);
  }
  std::vector<double> out(len);
  weighted_mean_into(values, weights, out);
  return out;
}

ModelParams aggregate_model(const std::optional<LocalModel>& local,
                            std::span<const Segment> pulled,
                            const SegmentationScheme& scheme,
                            const WeightTable& weights) {
  if (local && local->model.dim() != scheme.dim()) {
    throw Error(Errc::dimension_mismatch, "local model does not match the scheme");
  }
  auto weight_of = [&](WorkerId id) {
    auto it = weights.find(id);
    if (it == weights.end()) {
      throw Error(Errc::invalid_argument,
                  "no weight for worker " + std::to_string(raw(id)));
    }
    return it->second;
  };

  const std::size_t count = scheme.num_segments();
  std::vector<std::vector<Contribution>> per_segment(count);
  if (local) {
    const auto values = local->model.values();
    const auto w = weight_of(local->id);
    for (std::size_t l = 0; l < count; ++l) {
      const auto& r = scheme.range(l);
      per_segment[l].push_back({local->id, w, values.subspan(r.begin, r.size())});
    }
  }
  for (const auto& seg : pulled) {
    if (seg.index >= count) {
      throw Error(Errc::invalid_argument,
                  "segment index " + std::to_string(seg.index) + " out of range");
    }
    if (seg.values.size() != scheme.range(seg.index).size()) {
      throw Error(Errc::segment_length,
                  "pulled segment " + std::to_string(seg.index) + " has wrong length");
    }
    per_segment[seg.index].push_back({seg.provider, weight_of(seg.provider), seg.values});
  }

  std::vector<double> values(scheme.dim());
  for (std::size_t l = 0; l < count; ++l) {
    const auto merged = aggregate_segment(per_segment[l]);
    std::copy(merged.begin(), merged.end(),
              values.begin() + static_cast<std::ptrdiff_t>(scheme.range(l).begin));
  }
  return ModelParams(std::move(values));
}

ModelParams global_average_oracle(std::span<const ModelParams> models,
                                  std::span<const std::uint64_t> weights) {
  if (models.empty()) {
    throw Error(Errc::empty_providers, "no models to average");
  }
  if (weights.size() != models.size()) {
    throw Error(Errc::invalid_argument, "one weight per model required");
  }
  const std::size_t dim = models.front().dim();
  std::vector<std::span<const double>> values;
  values.reserve(models.size());
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (models[k].dim() != dim) {
      throw Error(Errc::dimension_mismatch, "models differ in dimension");
    }
    if (weights[k] == 0) {
      throw Error(Errc::non_positive_weight, "zero weight in global average");
    }
    values.push_back(models[k].values());
  }
  std::vector<double> out(dim);
  weighted_mean_into(values, weights, out);
  return ModelParams(std::move(out));
}

}  // namespace combo
