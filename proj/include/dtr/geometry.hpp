#pragma once

#include <vector>

#include "dtr/dataset.hpp"
#include "dtr/linalg.hpp"

namespace dtr {

// Simplex vertex code for K arms: K unit vectors in R^{K-1} with constant
// pairwise inner product -1/(K-1) and zero vertex sum.  Arm j is encoded by
// row j-1.
struct SimplexCode {
  int k = 0;
  Mat v;  // K x (K-1)
};

// Throws std::invalid_argument when k < 2.
SimplexCode build_simplex(int k);

// Inner products <V_a, f> for every arm a (the angle ranking of f).
// Throws std::invalid_argument when f has the wrong length.
std::vector<double> classify_scores(const SimplexCode& code,
                                    const std::vector<double>& f);

// Arm with the smallest angle to f, i.e. argmax_a <V_a, f>; ties resolve to
// the smallest arm label.  f = 0 therefore recommends arm 1.
int recommend(const SimplexCode& code, const std::vector<double>& f);

// One decision stage: f_m(h) = coef * h + intercept.
struct PolicyStage {
  Mat coef;                       // (K-1) x dim(H_m)
  std::vector<double> intercept;  // K-1
};

// Decision rules for stages 1..m_g.
struct PolicySet {
  int p = 0;
  int k = 0;
  int m_g = 0;
  std::vector<double> stage_boundaries;
  std::vector<PolicyStage> stages;
};

// f_m(h) for the given stage (1-based).  Throws std::invalid_argument on a
// stage outside 1..m_g or a history of the wrong length.
std::vector<double> evaluate_policy(const PolicySet& policy, int stage,
                                    const std::vector<double>& h);

// The treatment the policy recommends for history h at the given stage.
int recommend(const PolicySet& policy, const SimplexCode& code, int stage,
              const std::vector<double>& h);

}  // namespace dtr
