#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "v2xmd/domain.hpp"

namespace v2xmd {

struct TraceFile {
  std::string path;
  std::vector<CamRecord> records;  // file order
};

struct ParseReport {
  size_t lines = 0;
  size_t parsed = 0;
  size_t errors = 0;  // malformed lines, counted and skipped
};

// One received CAM paired with the latest ego state at or before it.
struct AlignedObservation {
  CamRecord cam;
  CamRecord ego;
  double gap = 0;  // cam.recv_time - ego.recv_time, within [0, threshold]
};

struct AlignReport {
  size_t aligned = 0;
  size_t discarded = 0;  // no preceding ego, or gap over threshold
};

inline constexpr double kDefaultGapThreshold = 2.0;  // seconds

// Newline-delimited JSON, one object per line. Unknown fields are ignored;
// malformed lines are counted, not fatal.
TraceFile parse_trace(std::istream& in, ParseReport& report);
TraceFile load_trace(const std::string& path, ParseReport& report);

void write_trace(const TraceFile& trace, std::ostream& out);
void save_trace(const TraceFile& trace, const std::string& path);

// Pairs each Received record with the most recent Ego record; drops pairs
// whose temporal gap exceeds the threshold.
std::vector<AlignedObservation> align(const TraceFile& trace, AlignReport& report,
                                      double gap_threshold = kDefaultGapThreshold);

// Per-sender lists, strictly sorted by recv_time; duplicate
// (sender, recv_time) pairs keep the first occurrence.
std::map<std::string, std::vector<AlignedObservation>> group_by_sender(
    std::vector<AlignedObservation> observations);

}  // namespace v2xmd
