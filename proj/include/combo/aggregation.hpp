#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "combo/ids.hpp"
#include "combo/model_params.hpp"

namespace combo {

// One provider's copy of a segment, weighted by its dataset size |D_j|.
struct Contribution {
  WorkerId worker{};
  std::uint64_t weight = 0;
  std::span<const double> values;
};

using WeightTable = std::map<WorkerId, std::uint64_t>;

/// Weighted coordinate-wise mean of one segment over its provider set.
///
/// Providers are summed in ascending worker id order whatever the input
/// order, so the result is bit-reproducible. Each coordinate is clamped to
/// the providers' [min, max] to absorb the last-ulp rounding of the mean.
/// Throws on an empty list, zero weight, mismatched lengths or a worker
/// appearing twice.
std::vector<double> aggregate_segment(std::span<const Contribution> providers);

struct LocalModel {
  WorkerId id{};
  const ModelParams& model;
};

/// Segment-wise aggregation of the local model with every pulled segment.
///
/// `pulled` is the flat list of segments from all R mixed models; each
/// carries its provider, so a segment may have fewer than R replicas when a
/// pull could not be re-routed. Passing no local model aggregates the pulled
/// segments alone (a newcomer joining the federation). Weights for every
/// participating worker must be present in `weights`.
ModelParams aggregate_model(const std::optional<LocalModel>& local,
                            std::span<const Segment> pulled,
                            const SegmentationScheme& scheme,
                            const WeightTable& weights);

// Weighted mean of whole models (FedAvg). models[k] has weight weights[k];
// summation follows input order.
ModelParams global_average_oracle(std::span<const ModelParams> models,
                                  std::span<const std::uint64_t> weights);

}  // namespace combo
