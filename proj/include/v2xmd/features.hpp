#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "v2xmd/domain.hpp"
#include "v2xmd/ingestion.hpp"

namespace v2xmd {

inline constexpr int kDefaultMinSequenceLength = 15;  // messages per segment
inline constexpr int kWindowLength = 10;              // model input steps

// Per-feature z-score statistics fitted on benign data.
struct NormStats {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> std{};  // degenerate stds replaced by 1.0

  double normalize(int f, double x) const { return (x - mean[f]) / std[f]; }
  double denormalize(int f, double z) const { return z * std[f] + mean[f]; }
};

// 10 normalized input steps plus the 11th step as target, all cut from one
// segment.
struct TrainingWindow {
  std::array<float, kWindowLength * kFeatureCount> input{};  // time-major
  std::array<float, kFeatureCount> target{};
  std::string sender_id;
  AttackLabel label = AttackLabel::A0;
};

struct FeatureError {
  size_t rejected_nonfinite = 0;
};

// Component f of the result is cam.state[f] - ego.state[f].
RelativeFeatureVector extract_features(const AlignedObservation& obs);

struct SplitStats {
  size_t dropped_short_segments = 0;
};

// Maximal runs with inter-message gap <= threshold; runs shorter than
// min_length are dropped. Observations with non-finite features are
// rejected up front.
SenderSequence split_on_gaps(const std::string& sender_id,
                             const std::vector<AlignedObservation>& observations,
                             double gap_threshold, int min_length, SplitStats& stats,
                             FeatureError* feature_errors = nullptr);

// Population mean/std per feature over every vector of every segment.
NormStats fit_norm_stats(const std::vector<SenderSequence>& benign_sequences);

std::vector<TrainingWindow> make_windows(const SenderSequence& seq, const NormStats& stats,
                                         int window_length = kWindowLength);

struct SenderSplit {
  std::unordered_set<std::string> train, val, test;
};

// Deterministic shuffle by seed; each sender lands in exactly one split.
SenderSplit split_by_sender(std::vector<std::string> sender_ids, double train_ratio,
                            double val_ratio, uint64_t seed);

}  // namespace v2xmd
