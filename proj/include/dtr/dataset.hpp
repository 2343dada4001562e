#pragma once

#include <string>
#include <vector>

namespace dtr {

// One stage of one subject: the covariates measured at stage entry and the
// treatment assigned for that stage.
struct StageRecord {
  std::vector<double> x;  // length p
  int treatment = 0;      // label in 1..K
};

// A right-censored multi-stage trajectory.  Stage records cover stages
// 1..m(time) exactly: every stage whose start the subject reached.
struct Trajectory {
  std::string id;
  double time = 0.0;  // observed exit time Y = min(T, C)
  int event = 0;      // 1 = failure observed, 0 = censored
  std::vector<StageRecord> stages;
};

struct Dataset {
  int p = 0;  // covariates per stage
  int k = 0;  // number of treatment arms
  std::vector<double> stage_boundaries;  // stage start times; first must be 0
  std::vector<Trajectory> subjects;

  int n() const { return static_cast<int>(subjects.size()); }
  int n_stages() const { return static_cast<int>(stage_boundaries.size()); }

  // Stage index m(t): the stage whose interval [b_m, b_{m+1}) contains t.
  // Times at or past the last boundary map to the last stage.
  int stage_of(double t) const;

  // Throws std::runtime_error on any structural violation (stage counts,
  // treatment range, covariate length, boundary ordering).
  void validate() const;
};

// Grid for the survival product: the sorted distinct observed failure times
// strictly below t_g, followed by t_g itself.  Points are 1-based in the
// notation (s = 1..g); t_0 = 0 belongs to stage 1 by convention.
struct TimeGrid {
  double t_g = 0.0;
  std::vector<double> points;  // strictly increasing; back() == t_g
  std::vector<int> stage;      // stage[s-1] = m(points[s-1])

  int g() const { return static_cast<int>(points.size()); }

  // Stage m(t_{s-1}) used by the weights of the s-th hazard factor.
  int weight_stage(int s) const { return s <= 1 ? 1 : stage[s - 2]; }
};

// Builds the grid for horizon t_g.  Throws std::invalid_argument when
// t_g <= 0 or t_g lies beyond the last stage boundary plus one stage width.
TimeGrid build_time_grid(const Dataset& data, double t_g);

// Accrued history H_m = (X_1, ..., X_m, A_1, ..., A_{m-1}) with treatments
// included as raw labels cast to real.  Length m*p + (m-1).
// Throws std::invalid_argument when the subject lacks stage m.
std::vector<double> history_vector(const Trajectory& subj, int stage, int p);

inline int history_dim(int stage, int p) { return stage * p + (stage - 1); }

// Copy of the dataset restricted to the given subject indices (in the given
// order).  Schema fields carry over.
Dataset subset(const Dataset& data, const std::vector<int>& subject_indices);

// Schema values that the two CSV files cannot carry on their own.
struct DatasetSchema {
  int k = 0;
  std::vector<double> stage_boundaries;
};

// Loads the long format: subjects CSV with header id,time,event and stages
// CSV with header id,stage,treatment,x1,...,xp.  Row order in the stages
// file is arbitrary; subjects keep the order of the subjects file.
// Throws std::runtime_error on malformed input (missing stages, duplicate
// rows, treatments outside 1..K, non-numeric fields, orphan ids).
Dataset load_long_csv(const std::string& subjects_path,
                      const std::string& stages_path,
                      const DatasetSchema& schema);

// Writes the same long format with 17-significant-digit reals, so a
// load_long_csv round trip reproduces the dataset exactly.
void write_long_csv(const Dataset& data, const std::string& subjects_path,
                    const std::string& stages_path);

}  // namespace dtr
