#include "dtr/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dtr {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_real(const std::string& s, const std::string& what) {
  const char* c = s.c_str();
  char* end = nullptr;
  double v = std::strtod(c, &end);
  while (end && *end != '\0' && std::isspace(static_cast<unsigned char>(*end)))
    ++end;
  if (end == c || (end && *end != '\0') || !std::isfinite(v))
    fail("non-numeric " + what + ": \"" + s + "\"");
  return v;
}

int parse_int(const std::string& s, const std::string& what) {
  double v = parse_real(s, what);
  double r = std::round(v);
  if (std::abs(v - r) > 0.0) fail("non-integer " + what + ": \"" + s + "\"");
  return static_cast<int>(r);
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

int Dataset::stage_of(double t) const {
  // Largest m with b_m <= t; times before the first boundary map to stage 1.
  int m = 1;
  for (std::size_t j = 1; j < stage_boundaries.size(); ++j) {
    if (t >= stage_boundaries[j])
      m = static_cast<int>(j) + 1;
    else
      break;
  }
  return m;
}

void Dataset::validate() const {
  if (p <= 0) fail("dataset: p must be positive");
  if (k < 2) fail("dataset: k must be at least 2");
  if (stage_boundaries.empty() || stage_boundaries.front() != 0.0)
    fail("dataset: stage boundaries must start at 0");
  for (std::size_t j = 1; j < stage_boundaries.size(); ++j)
    if (!(stage_boundaries[j] > stage_boundaries[j - 1]))
      fail("dataset: stage boundaries must be strictly increasing");
  std::set<std::string> seen;
  for (const Trajectory& subj : subjects) {
    if (!seen.insert(subj.id).second)
      fail("dataset: duplicate subject id \"" + subj.id + "\"");
    if (!(subj.time >= 0.0) || !std::isfinite(subj.time))
      fail("subject \"" + subj.id + "\": invalid observed time");
    if (subj.event != 0 && subj.event != 1)
      fail("subject \"" + subj.id + "\": event must be 0 or 1");
    const int m_exit = stage_of(subj.time);
    if (static_cast<int>(subj.stages.size()) != m_exit)
      fail("subject \"" + subj.id + "\": expected " + std::to_string(m_exit) +
           " stage records, found " + std::to_string(subj.stages.size()));
    for (std::size_t m = 0; m < subj.stages.size(); ++m) {
      const StageRecord& rec = subj.stages[m];
      if (static_cast<int>(rec.x.size()) != p)
        fail("subject \"" + subj.id + "\" stage " + std::to_string(m + 1) +
             ": expected " + std::to_string(p) + " covariates");
      if (rec.treatment < 1 || rec.treatment > k)
        fail("subject \"" + subj.id + "\" stage " + std::to_string(m + 1) +
             ": treatment " + std::to_string(rec.treatment) +
             " outside 1.." + std::to_string(k));
      for (double v : rec.x)
        if (!std::isfinite(v))
          fail("subject \"" + subj.id + "\" stage " + std::to_string(m + 1) +
               ": non-finite covariate");
    }
  }
}

TimeGrid build_time_grid(const Dataset& data, double t_g) {
  if (!(t_g > 0.0) || !std::isfinite(t_g))
    throw std::invalid_argument("build_time_grid: t_g must be positive");
  const std::vector<double>& b = data.stage_boundaries;
  if (b.size() >= 2) {
    const double width = b.back() - b[b.size() - 2];
    if (t_g > b.back() + width)
      throw std::invalid_argument(
          "build_time_grid: t_g lies beyond the last stage");
  }
  std::vector<double> events;
  for (const Trajectory& subj : data.subjects)
    if (subj.event == 1 && subj.time > 0.0 && subj.time < t_g)
      events.push_back(subj.time);
  std::sort(events.begin(), events.end());
  events.erase(std::unique(events.begin(), events.end()), events.end());
  events.push_back(t_g);

  TimeGrid grid;
  grid.t_g = t_g;
  grid.points = std::move(events);
  grid.stage.reserve(grid.points.size());
  for (double t : grid.points) grid.stage.push_back(data.stage_of(t));
  return grid;
}

std::vector<double> history_vector(const Trajectory& subj, int stage, int p) {
  if (stage < 1 || stage > static_cast<int>(subj.stages.size()))
    throw std::invalid_argument("history_vector: subject \"" + subj.id +
                                "\" has no stage " + std::to_string(stage));
  std::vector<double> h;
  h.reserve(history_dim(stage, p));
  for (int m = 0; m < stage; ++m)
    h.insert(h.end(), subj.stages[m].x.begin(), subj.stages[m].x.end());
  for (int m = 0; m + 1 < stage; ++m)
    h.push_back(static_cast<double>(subj.stages[m].treatment));
  return h;
}

Dataset subset(const Dataset& data, const std::vector<int>& subject_indices) {
  Dataset out;
  out.p = data.p;
  out.k = data.k;
  out.stage_boundaries = data.stage_boundaries;
  out.subjects.reserve(subject_indices.size());
  for (int i : subject_indices) {
    if (i < 0 || i >= data.n())
      fail("subset: subject index out of range");
    out.subjects.push_back(data.subjects[i]);
  }
  return out;
}

Dataset load_long_csv(const std::string& subjects_path,
                      const std::string& stages_path,
                      const DatasetSchema& schema) {
  if (schema.k < 2) fail("load_long_csv: schema needs k >= 2");
  if (schema.stage_boundaries.empty())
    fail("load_long_csv: schema needs stage boundaries");

  std::ifstream subj_in(subjects_path);
  if (!subj_in) fail("cannot open " + subjects_path);
  std::string line;
  if (!std::getline(subj_in, line)) fail(subjects_path + ": empty file");
  if (strip_cr(line) != "id,time,event")
    fail(subjects_path + ": expected header id,time,event");

  Dataset data;
  data.k = schema.k;
  data.stage_boundaries = schema.stage_boundaries;

  std::map<std::string, int> index_of;
  while (std::getline(subj_in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 3) fail(subjects_path + ": malformed row \"" + line + "\"");
    Trajectory subj;
    subj.id = f[0];
    subj.time = parse_real(f[1], "time");
    subj.event = parse_int(f[2], "event");
    if (index_of.count(subj.id))
      fail(subjects_path + ": duplicate subject id \"" + subj.id + "\"");
    index_of[subj.id] = data.n();
    data.subjects.push_back(std::move(subj));
  }
  if (data.subjects.empty()) fail(subjects_path + ": no subjects");

  std::ifstream stage_in(stages_path);
  if (!stage_in) fail("cannot open " + stages_path);
  if (!std::getline(stage_in, line)) fail(stages_path + ": empty file");
  {
    const std::vector<std::string> head = split_csv_line(strip_cr(line));
    if (head.size() < 4 || head[0] != "id" || head[1] != "stage" ||
        head[2] != "treatment")
      fail(stages_path + ": expected header id,stage,treatment,x1,...");
    for (std::size_t j = 3; j < head.size(); ++j)
      if (head[j] != "x" + std::to_string(j - 2))
        fail(stages_path + ": expected covariate column x" +
             std::to_string(j - 2) + ", found \"" + head[j] + "\"");
    data.p = static_cast<int>(head.size()) - 3;
  }

  // Collect rows per subject, then place them by stage index.
  std::vector<std::map<int, StageRecord>> rows(data.n());
  while (std::getline(stage_in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (static_cast<int>(f.size()) != 3 + data.p)
      fail(stages_path + ": malformed row \"" + line + "\"");
    const auto it = index_of.find(f[0]);
    if (it == index_of.end())
      fail(stages_path + ": unknown subject id \"" + f[0] + "\"");
    const int stage = parse_int(f[1], "stage");
    if (stage < 1 || stage > data.n_stages())
      fail(stages_path + ": subject \"" + f[0] + "\": stage " +
           std::to_string(stage) + " outside 1.." +
           std::to_string(data.n_stages()));
    StageRecord rec;
    rec.treatment = parse_int(f[2], "treatment");
    if (rec.treatment < 1 || rec.treatment > data.k)
      fail(stages_path + ": subject \"" + f[0] + "\": treatment " +
           f[2] + " outside 1.." + std::to_string(data.k));
    rec.x.reserve(data.p);
    for (int j = 0; j < data.p; ++j)
      rec.x.push_back(parse_real(f[3 + j], "covariate x" + std::to_string(j + 1)));
    if (!rows[it->second].emplace(stage, std::move(rec)).second)
      fail(stages_path + ": subject \"" + f[0] + "\": duplicate stage " +
           std::to_string(stage));
  }

  for (int i = 0; i < data.n(); ++i) {
    Trajectory& subj = data.subjects[i];
    const int m_exit = data.stage_of(subj.time);
    for (int m = 1; m <= m_exit; ++m) {
      auto it = rows[i].find(m);
      if (it == rows[i].end())
        fail("subject \"" + subj.id + "\": missing stage " + std::to_string(m));
      subj.stages.push_back(std::move(it->second));
      rows[i].erase(it);
    }
    if (!rows[i].empty())
      fail("subject \"" + subj.id + "\": stage " +
           std::to_string(rows[i].begin()->first) +
           " recorded after exit at time " + std::to_string(subj.time));
  }

  data.validate();
  return data;
}

void write_long_csv(const Dataset& data, const std::string& subjects_path,
                    const std::string& stages_path) {
  char buf[64];
  std::ofstream subj_out(subjects_path);
  if (!subj_out) fail("cannot write " + subjects_path);
  subj_out << "id,time,event\n";
  for (const Trajectory& subj : data.subjects) {
    std::snprintf(buf, sizeof buf, "%.17g", subj.time);
    subj_out << subj.id << ',' << buf << ',' << subj.event << '\n';
  }

  std::ofstream stage_out(stages_path);
  if (!stage_out) fail("cannot write " + stages_path);
  stage_out << "id,stage,treatment";
  for (int j = 1; j <= data.p; ++j) stage_out << ",x" << j;
  stage_out << '\n';
  for (const Trajectory& subj : data.subjects)
    for (std::size_t m = 0; m < subj.stages.size(); ++m) {
      const StageRecord& rec = subj.stages[m];
      stage_out << subj.id << ',' << (m + 1) << ',' << rec.treatment;
      for (double v : rec.x) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        stage_out << ',' << buf;
      }
      stage_out << '\n';
    }
}

}  // namespace dtr
