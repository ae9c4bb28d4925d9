#include "v2xmd/ingestion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace v2xmd {

namespace {

using nlohmann::json;

bool read_pair(const json& j, const char* key, double& x, double& y) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array() || it->size() < 2) return false;
  if (!(*it)[0].is_number() || !(*it)[1].is_number()) return false;
  x = (*it)[0].get<double>();
  y = (*it)[1].get<double>();
  return std::isfinite(x) && std::isfinite(y);
}

// Accepts heading as a 2- or 3-array; renormalizes to unit length, zeroes
// near-degenerate vectors.
void normalize_heading(double& hx, double& hy) {
  const double mag = std::sqrt(hx * hx + hy * hy);
  if (mag < 1e-6) {
    hx = hy = 0.0;
    return;
  }
  hx /= mag;
  hy /= mag;
}

bool parse_line(const std::string& line, CamRecord& rec) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) return false;

  auto type_it = j.find("type");
  if (type_it == j.end() || !type_it->is_number_integer()) return false;
  const int type = type_it->get<int>();
  if (type != 2 && type != 3) return false;
  rec.msg_type = type == 2 ? MsgType::Ego : MsgType::Received;

  auto num = [&](const char* key, double& out) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) return false;
    out = it->get<double>();
    return std::isfinite(out);
  };
  if (!num("rcvTime", rec.recv_time)) return false;
  if (!num("sendTime", rec.send_time)) rec.send_time = rec.recv_time;

  if (rec.msg_type == MsgType::Received) {
    if (rec.recv_time < rec.send_time || rec.send_time < 0) return false;
    auto sid = j.find("sender");
    if (sid == j.end()) return false;
    if (sid->is_string())
      rec.sender_id = sid->get<std::string>();
    else if (sid->is_number_integer())
      rec.sender_id = std::to_string(sid->get<int64_t>());
    else
      return false;
    if (rec.sender_id.empty() || rec.sender_id == kEgoSenderId) return false;
  } else {
    rec.sender_id = kEgoSenderId;
  }

  KinematicState& s = rec.state;
  if (!read_pair(j, "pos", s.pos_x, s.pos_y)) return false;
  if (!read_pair(j, "spd", s.spd_x, s.spd_y)) return false;
  if (!read_pair(j, "acl", s.acl_x, s.acl_y)) return false;
  if (!read_pair(j, "hed", s.hed_x, s.hed_y)) return false;
  normalize_heading(s.hed_x, s.hed_y);

  rec.label = AttackLabel::A0;
  if (auto it = j.find("label"); it != j.end()) {
    if (it->is_string()) {
      auto l = attack_label_from_string(it->get<std::string>());
      if (!l) return false;
      rec.label = *l;
    } else if (it->is_number_integer()) {
      const int v = it->get<int>();
      if (v < 0 || v >= kAttackLabelCount) return false;
      rec.label = static_cast<AttackLabel>(v);
    }
  } else if (auto at = j.find("attackerType"); at != j.end() && at->is_number_integer()) {
    const int v = at->get<int>();
    if (v >= 0 && v < kAttackLabelCount) rec.label = static_cast<AttackLabel>(v);
  }
  return true;
}

}  // namespace

TraceFile parse_trace(std::istream& in, ParseReport& report) {
  TraceFile trace;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++report.lines;
    CamRecord rec;
    if (parse_line(line, rec)) {
      trace.records.push_back(std::move(rec));
      ++report.parsed;
    } else {
      ++report.errors;
    }
  }
  return trace;
}

TraceFile load_trace(const std::string& path, ParseReport& report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  TraceFile t = parse_trace(in, report);
  if (in.bad()) throw std::runtime_error("I/O error while reading " + path);
  t.path = path;
  return t;
}

void write_trace(const TraceFile& trace, std::ostream& out) {
  for (const auto& r : trace.records) {
    json j;
    j["type"] = r.msg_type == MsgType::Ego ? 2 : 3;
    j["rcvTime"] = r.recv_time;
    j["sendTime"] = r.send_time;
    j["sender"] = r.sender_id;
    j["label"] = to_string(r.label);
    j["pos"] = {r.state.pos_x, r.state.pos_y};
    j["spd"] = {r.state.spd_x, r.state.spd_y};
    j["acl"] = {r.state.acl_x, r.state.acl_y};
    j["hed"] = {r.state.hed_x, r.state.hed_y};
    out << j.dump() << '\n';
  }
}

void save_trace(const TraceFile& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_trace(trace, out);
  if (!out) throw std::runtime_error("I/O error while writing " + path);
}

std::vector<AlignedObservation> align(const TraceFile& trace, AlignReport& report,
                                      double gap_threshold) {
  std::vector<AlignedObservation> out;
  const CamRecord* latest_ego = nullptr;  // single cursor over the file order
  for (const auto& rec : trace.records) {
    if (rec.msg_type == MsgType::Ego) {
      if (!latest_ego || rec.recv_time >= latest_ego->recv_time) latest_ego = &rec;
      continue;
    }
    if (!latest_ego || latest_ego->recv_time > rec.recv_time) {
      ++report.discarded;
      continue;
    }
    const double gap = rec.recv_time - latest_ego->recv_time;
    if (gap > gap_threshold) {
      ++report.discarded;
      continue;
    }
    out.push_back(AlignedObservation{rec, *latest_ego, gap});
    ++report.aligned;
  }
  return out;
}

std::map<std::string, std::vector<AlignedObservation>> group_by_sender(
    std::vector<AlignedObservation> observations) {
  std::map<std::string, std::vector<AlignedObservation>> groups;
  for (auto& obs : observations) groups[obs.cam.sender_id].push_back(std::move(obs));
  for (auto& [id, list] : groups) {
    std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
      return a.cam.recv_time < b.cam.recv_time;
    });
    list.erase(std::unique(list.begin(), list.end(),
                           [](const auto& a, const auto& b) {
                             return a.cam.recv_time == b.cam.recv_time;
                           }),
               list.end());
  }
  return groups;
}

}  // namespace v2xmd
