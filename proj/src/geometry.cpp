#include "dtr/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace dtr {

SimplexCode build_simplex(int k) {
  if (k < 2) throw std::invalid_argument("build_simplex: k must be >= 2");
  SimplexCode code;
  code.k = k;
  code.v = Mat(k, k - 1);
  const double km1 = static_cast<double>(k - 1);
  const double a = 1.0 / std::sqrt(km1);              // V_1 entries
  const double b = -(1.0 + std::sqrt(static_cast<double>(k))) /
                   (km1 * std::sqrt(km1));            // shared offset
  const double c = std::sqrt(static_cast<double>(k) / km1);  // basis bump
  for (int j = 0; j < k - 1; ++j) code.v(0, j) = a;
  for (int i = 1; i < k; ++i)
    for (int j = 0; j < k - 1; ++j)
      code.v(i, j) = b + (j == i - 1 ? c : 0.0);
  return code;
}

std::vector<double> classify_scores(const SimplexCode& code,
                                    const std::vector<double>& f) {
  if (static_cast<int>(f.size()) != code.k - 1)
    throw std::invalid_argument("classify_scores: f must have length K-1");
  std::vector<double> scores(code.k);
  for (int a = 0; a < code.k; ++a)
    scores[a] = dot(code.v.row(a), f.data(), code.k - 1);
  return scores;
}

int recommend(const SimplexCode& code, const std::vector<double>& f) {
  const std::vector<double> scores = classify_scores(code, f);
  int best = 0;
  for (int a = 1; a < code.k; ++a)
    if (scores[a] > scores[best]) best = a;
  return best + 1;
}

std::vector<double> evaluate_policy(const PolicySet& policy, int stage,
                                    const std::vector<double>& h) {
  if (stage < 1 || stage > policy.m_g)
    throw std::invalid_argument("evaluate_policy: stage outside 1..m_g");
  const PolicyStage& ps = policy.stages[stage - 1];
  if (static_cast<int>(h.size()) != ps.coef.cols)
    throw std::invalid_argument("evaluate_policy: history has length " +
                                std::to_string(h.size()) + ", expected " +
                                std::to_string(ps.coef.cols));
  std::vector<double> f(policy.k - 1);
  for (int r = 0; r < policy.k - 1; ++r)
    f[r] = ps.intercept[r] + dot(ps.coef.row(r), h.data(), ps.coef.cols);
  return f;
}

int recommend(const PolicySet& policy, const SimplexCode& code, int stage,
              const std::vector<double>& h) {
  return recommend(code, evaluate_policy(policy, stage, h));
}

}  // namespace dtr
