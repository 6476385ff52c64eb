#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "combo/ids.hpp"

namespace combo {

// Flat parameter vector. Construction rejects empty or non-finite input, so
// every ModelParams in circulation has dim >= 1 and finite entries.
class ModelParams {
 public:
  explicit ModelParams(std::vector<double> values);

  static ModelParams zeros(std::size_t dim);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  std::vector<double> values_;
};

struct SegmentRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const SegmentRange&, const SegmentRange&) = default;
};

// S contiguous, sorted, disjoint ranges covering [0, dim). Only make_scheme
// creates instances, so the equal-split invariant always holds.
class SegmentationScheme {
 public:
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_segments() const noexcept { return ranges_.size(); }
  const SegmentRange& range(std::size_t segment) const;
  std::span<const SegmentRange> ranges() const noexcept { return ranges_; }

  // Segment index holding parameter `index`.
  std::size_t segment_of(std::size_t index) const;

  friend bool operator==(const SegmentationScheme&,
                         const SegmentationScheme&) = default;

 private:
  friend SegmentationScheme make_scheme(std::size_t dim, std::size_t segments);
  SegmentationScheme(std::size_t dim, std::vector<SegmentRange> ranges)
      : dim_(dim), ranges_(std::move(ranges)) {}

  std::size_t dim_;
  std::vector<SegmentRange> ranges_;
};

struct Segment {
  std::size_t index = 0;
  std::vector<double> values;
  WorkerId provider{};
};

// Equal split; the first dim % S segments get one extra parameter.
// Throws Errc::invalid_scheme unless 1 <= segments <= dim.
SegmentationScheme make_scheme(std::size_t dim, std::size_t segments);

std::vector<Segment> split(const ModelParams& model,
                           const SegmentationScheme& scheme,
                           WorkerId provider = WorkerId{});

// Concatenates one segment per index, in index order regardless of the
// order supplied. Providers may differ per segment (a mixed model).
ModelParams rebuild(std::span<const Segment> segments,
                    const SegmentationScheme& scheme);

}  // namespace combo
