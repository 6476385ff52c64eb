#include "combo/model_params.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "combo/error.hpp"

namespace combo {

ModelParams::ModelParams(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) {
    throw Error(Errc::invalid_argument, "model dimension must be positive");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw Error(Errc::numeric_failure,
                  "non-finite parameter at index " + std::to_string(i));
    }
  }
}

ModelParams ModelParams::zeros(std::size_t dim) {
  return ModelParams(std::vector<double>(dim, 0.0));
}

const SegmentRange& SegmentationScheme::range(std::size_t segment) const {
  if (segment >= ranges_.size()) {
    throw Error(Errc::invalid_argument,
                "segment index " + std::to_string(segment) + " out of range");
  }
  return ranges_[segment];
}

std::size_t SegmentationScheme::segment_of(std::size_t index) const {
  if (index >= dim_) {
    throw Error(Errc::invalid_argument,
                "parameter index " + std::to_string(index) + " out of range");
  }
  auto it = std::upper_bound(
      ranges_.begin(), ranges_.end(), index,
      [](std::size_t i, const SegmentRange& r) { return i < r.end; });
  return static_cast<std::size_t>(it - ranges_.begin());
}

SegmentationScheme make_scheme(std::size_t dim, std::size_t segments) {
  if (segments == 0 || segments > dim) {
    throw Error(Errc::invalid_scheme,
                "need 1 <= S <= dim, got S=" + std::to_string(segments) +
                    " dim=" + std::to_string(dim));
  }
  const std::size_t base = dim / segments;
  const std::size_t extra = dim % segments;
  std::vector<SegmentRange> ranges;
  ranges.reserve(segments);
  std::size_t begin = 0;
  for (std::size_t l = 0; l < segments; ++l) {
    const std::size_t len = base + (l < extra ? 1 : 0);
    ranges.push_back({begin, begin + len});
    begin += len;
  }
  return SegmentationScheme(dim, std::move(ranges));
}

std::vector<Segment> split(const ModelParams& model,
                           const SegmentationScheme& scheme, WorkerId provider) {
  if (model.dim() != scheme.dim()) {
    throw Error(Errc::dimension_mismatch,
                "model dim " + std::to_string(model.dim()) + " vs scheme dim " +
                    std::to_string(scheme.dim()));
  }
  std::vector<Segment> out;
  out.reserve(scheme.num_segments());
  const auto values = model.values();
  for (std::size_t l = 0; l < scheme.num_segments(); ++l) {
    const auto& r = scheme.range(l);
    out.push_back({l, {values.begin() + r.begin, values.begin() + r.end}, provider});
  }
  return out;
}

ModelParams rebuild(std::span<const Segment> segments,
                    const SegmentationScheme& scheme) {
  const std::size_t count = scheme.num_segments();
  std::vector<const Segment*> by_index(count, nullptr);
  for (const auto& seg : segments) {
    if (seg.index >= count) {
      throw Error(Errc::invalid_argument,
                  "segment index " + std::to_string(seg.index) + " out of range");
    }
    if (by_index[seg.index] != nullptr) {
      throw Error(Errc::duplicate_segment,
                  "segment " + std::to_string(seg.index) + " supplied twice");
    }
    if (seg.values.size() != scheme.range(seg.index).size()) {
      throw Error(Errc::segment_length,
                  "segment " + std::to_string(seg.index) + " has length " +
                      std::to_string(seg.values.size()) + ", expected " +
                      std::to_string(scheme.range(seg.index).size()));
    }
    by_index[seg.index] = &seg;
  }
  std::vector<double> values;
  values.reserve(scheme.dim());
  for (std::size_t l = 0; l < count; ++l) {
    if (by_index[l] == nullptr) {
      throw Error(Errc::missing_segment, "segment " + std::to_string(l) + " missing");
    }
    values.insert(values.end(), by_index[l]->values.begin(), by_index[l]->values.end());
  }
  return ModelParams(std::move(values));
}

}  // namespace combo
