#include "v2xmd/features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "v2xmd/rng.hpp"

namespace v2xmd {

RelativeFeatureVector extract_features(const AlignedObservation& obs) {
  RelativeFeatureVector v;
  for (int f = 0; f < kFeatureCount; ++f)
    v.d[f] = obs.cam.state.component(f) - obs.ego.state.component(f);
  v.timestamp = obs.cam.recv_time;
  return v;
}

SenderSequence split_on_gaps(const std::string& sender_id,
                             const std::vector<AlignedObservation>& observations,
                             double gap_threshold, int min_length, SplitStats& stats,
                             FeatureError* feature_errors) {
  SenderSequence seq;
  seq.sender_id = sender_id;

  std::vector<RelativeFeatureVector> usable;
  usable.reserve(observations.size());
  for (const auto& obs : observations) {
    RelativeFeatureVector v = extract_features(obs);
    if (!v.finite()) {
      if (feature_errors) ++feature_errors->rejected_nonfinite;
      continue;
    }
    if (seq.label == AttackLabel::A0) seq.label = obs.cam.label;
    usable.push_back(std::move(v));
  }

  Segment current;
  auto flush = [&] {
    if (static_cast<int>(current.size()) >= min_length)
      seq.segments.push_back(std::move(current));
    else if (!current.empty())
      ++stats.dropped_short_segments;
    current.clear();
  };
  for (const auto& v : usable) {
    if (!current.empty() && v.timestamp - current.back().timestamp > gap_threshold) flush();
    current.push_back(v);
  }
  flush();
  return seq;
}

NormStats fit_norm_stats(const std::vector<SenderSequence>& benign_sequences) {
  // streaming Welford per feature
  std::array<double, kFeatureCount> mean{}, m2{};
  size_t n = 0;
  for (const auto& seq : benign_sequences) {
    for (const auto& segment : seq.segments) {
      for (const auto& v : segment) {
        ++n;
        for (int f = 0; f < kFeatureCount; ++f) {
          const double delta = v.d[f] - mean[f];
          mean[f] += delta / static_cast<double>(n);
          m2[f] += delta * (v.d[f] - mean[f]);
        }
      }
    }
  }
  if (n < 2) throw std::invalid_argument("fit_norm_stats: need at least 2 feature vectors");
  NormStats stats;
  for (int f = 0; f < kFeatureCount; ++f) {
    stats.mean[f] = mean[f];
    const double sd = std::sqrt(m2[f] / static_cast<double>(n));  // population
    stats.std[f] = sd < 1e-8 ? 1.0 : sd;
  }
  return stats;
}

std::vector<TrainingWindow> make_windows(const SenderSequence& seq, const NormStats& stats,
                                         int window_length) {
  std::vector<TrainingWindow> windows;
  for (const auto& segment : seq.segments) {
    const int L = static_cast<int>(segment.size());
    for (int start = 0; start + window_length < L; ++start) {
      TrainingWindow w;
      w.sender_id = seq.sender_id;
      w.label = seq.label;
      for (int t = 0; t < window_length; ++t)
        for (int f = 0; f < kFeatureCount; ++f)
          w.input[t * kFeatureCount + f] =
              static_cast<float>(stats.normalize(f, segment[start + t].d[f]));
      for (int f = 0; f < kFeatureCount; ++f)
        w.target[f] = static_cast<float>(stats.normalize(f, segment[start + window_length].d[f]));
      windows.push_back(std::move(w));
    }
  }
  return windows;
}

SenderSplit split_by_sender(std::vector<std::string> sender_ids, double train_ratio,
                            double val_ratio, uint64_t seed) {
  if (sender_ids.size() < 3)
    throw std::invalid_argument("split_by_sender: need at least 3 senders, got " +
                                std::to_string(sender_ids.size()));
  if (train_ratio <= 0 || val_ratio <= 0 || train_ratio + val_ratio >= 1.0)
    throw std::invalid_argument("split_by_sender: ratios must be positive and sum below 1");

  std::sort(sender_ids.begin(), sender_ids.end());  // independent of input order
  Rng rng(seed, /*stream=*/0x73706c6974ull);
  rng.shuffle(sender_ids);

  const size_t n = sender_ids.size();
  size_t n_train = static_cast<size_t>(train_ratio * n);
  size_t n_val = static_cast<size_t>(val_ratio * n);
  n_train = std::max<size_t>(1, n_train);
  n_val = std::max<size_t>(1, n_val);
  if (n_train + n_val >= n) n_train = n - n_val - 1;

  SenderSplit split;
  for (size_t i = 0; i < n; ++i) {
    if (i < n_train)
      split.train.insert(sender_ids[i]);
    else if (i < n_train + n_val)
      split.val.insert(sender_ids[i]);
    else
      split.test.insert(sender_ids[i]);
  }
  return split;
}

}  // namespace v2xmd
