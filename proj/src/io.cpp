#include "dtr/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dtr {

using nlohmann::json;

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows; ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols; ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows > 0 ? static_cast<int>(j.at(0).size()) : 0;
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = j.at(r);
    if (static_cast<int>(row.size()) != cols)
      throw std::runtime_error("ragged matrix in JSON input");
    for (int c = 0; c < cols; ++c) m(r, c) = row.at(c).get<double>();
  }
  return m;
}

json parse(const std::string& text) {
  return json::parse(text);  // throws json::parse_error with position info
}

}  // namespace

std::string policy_to_json(const PolicySet& policy) {
  json j;
  j["p"] = policy.p;
  j["k"] = policy.k;
  j["m_g"] = policy.m_g;
  j["stage_boundaries"] = policy.stage_boundaries;
  json stages = json::array();
  for (const PolicyStage& stage : policy.stages) {
    json s;
    s["coef"] = mat_to_json(stage.coef);
    s["intercept"] = stage.intercept;
    stages.push_back(std::move(s));
  }
  j["stages"] = std::move(stages);
  return j.dump(2) + "\n";
}

PolicySet policy_from_json(const std::string& text) {
  const json j = parse(text);
  PolicySet policy;
  policy.p = j.at("p").get<int>();
  policy.k = j.at("k").get<int>();
  policy.m_g = j.at("m_g").get<int>();
  policy.stage_boundaries =
      j.at("stage_boundaries").get<std::vector<double>>();
  for (const json& s : j.at("stages")) {
    PolicyStage stage;
    stage.coef = mat_from_json(s.at("coef"));
    stage.intercept = s.at("intercept").get<std::vector<double>>();
    policy.stages.push_back(std::move(stage));
  }
  if (static_cast<int>(policy.stages.size()) != policy.m_g)
    throw std::runtime_error("policy JSON: stage count does not match m_g");
  return policy;
}

std::string propensity_model_to_json(const PropensityModel& model) {
  json j;
  j["k"] = model.k;
  json stages = json::array();
  for (const StagePropensityModel& stage : model.stages) {
    json s;
    s["stage"] = stage.stage;
    s["lambda_star"] = stage.lambda_star;
    s["intercept"] = stage.intercept;
    s["coef"] = mat_to_json(stage.coef);
    stages.push_back(std::move(s));
  }
  j["stages"] = std::move(stages);
  return j.dump(2) + "\n";
}

PropensityModel propensity_model_from_json(const std::string& text) {
  const json j = parse(text);
  PropensityModel model;
  model.k = j.at("k").get<int>();
  for (const json& s : j.at("stages")) {
    StagePropensityModel stage;
    stage.stage = s.at("stage").get<int>();
    stage.lambda_star = s.at("lambda_star").get<double>();
    stage.intercept = s.at("intercept").get<std::vector<double>>();
    stage.coef = mat_from_json(s.at("coef"));
    model.stages.push_back(std::move(stage));
  }
  return model;
}

FitConfig fit_config_from_json(const std::string& text) {
  const json j = parse(text);
  FitConfig config;
  config.t_g = j.value("t_g", config.t_g);
  config.lambda = j.value("lambda", config.lambda);
  config.b = j.value("b", config.b);
  config.cbar = j.value("cbar", config.cbar);
  const std::string mode = j.value("u0_mode", std::string("population"));
  if (mode == "population") {
    config.u0_mode = U0Mode::kPopulation;
  } else if (mode == "empirical") {
    config.u0_mode = U0Mode::kEmpirical;
  } else {
    throw std::invalid_argument("fit_config_from_json: unknown u0_mode '" +
                                mode + "'");
  }
  config.max_iter = j.value("max_iter", config.max_iter);
  config.epsilon = j.value("epsilon", config.epsilon);
  config.eta0 = j.value("eta0", config.eta0);
  config.step_min = j.value("step_min", config.step_min);
  config.step_max = j.value("step_max", config.step_max);
  config.seed = j.value("seed", config.seed);
  config.n_starts = j.value("n_starts", config.n_starts);
  return config;
}

std::string fit_config_to_json(const FitConfig& config) {
  json j;
  j["t_g"] = config.t_g;
  j["lambda"] = config.lambda;
  j["b"] = config.b;
  j["cbar"] = config.cbar;
  j["u0_mode"] =
      config.u0_mode == U0Mode::kEmpirical ? "empirical" : "population";
  j["max_iter"] = config.max_iter;
  j["epsilon"] = config.epsilon;
  j["eta0"] = config.eta0;
  j["step_min"] = config.step_min;
  j["step_max"] = config.step_max;
  j["seed"] = config.seed;
  j["n_starts"] = config.n_starts;
  return j.dump(2) + "\n";
}

std::string fit_result_to_json(const FitResult& result) {
  json j;
  j["objective"] = result.objective;
  j["converged"] = result.converged;
  j["iterations"] = result.iterations;
  j["best_start"] = result.best_start;
  j["cq"] = result.cq;
  j["u0"] = result.u0;
  j["objective_trace"] = result.objective_trace;
  j["policy"] = json::parse(policy_to_json(result.policy));
  return j.dump(2) + "\n";
}

TuningGrid tuning_grid_from_json(const std::string& text) {
  const json j = parse(text);
  TuningGrid grid;
  grid.b_values = j.at("b_values").get<std::vector<double>>();
  grid.lambda_values = j.at("lambda_values").get<std::vector<double>>();
  grid.d = j.value("d", grid.d);
  grid.seed = j.value("seed", grid.seed);
  return grid;
}

std::string cv_report_to_csv(const CvReport& report) {
  std::string out = "b,lambda,fold,score,skipped,note\n";
  for (const CvCell& cell : report.cells) {
    out += fmt_g17(cell.b) + "," + fmt_g17(cell.lambda) + "," +
           std::to_string(cell.fold) + "," +
           (cell.skipped ? "" : fmt_g17(cell.score)) + "," +
           (cell.skipped ? "1" : "0") + ",";
    std::string note = cell.note;
    for (char& c : note)
      if (c == ',' || c == '\n' || c == '\r') c = ';';
    out += note + "\n";
  }
  return out;
}

namespace {

ScenarioSpec scenario_from_json(const json& j) {
  ScenarioSpec spec;
  spec.example_id = j.value("example_id", spec.example_id);
  spec.n_train = j.value("n_train", spec.n_train);
  spec.n_test = j.value("n_test", spec.n_test);
  spec.p = j.value("p", spec.p);
  spec.n_stages = j.value("n_stages", spec.n_stages);
  spec.k = j.value("k", spec.k);
  spec.censor_rate = j.value("censor_rate", spec.censor_rate);
  spec.t_g = j.value("t_g", spec.t_g);
  spec.replications = j.value("replications", spec.replications);
  spec.seed = j.value("seed", spec.seed);
  spec.c0 = j.value("c0", spec.c0);
  if (j.value("stage_digit_indexing", false))
    spec.indexing = CovariateIndexing::kStageDigit;
  return spec;
}

}  // namespace

BenchConfig bench_config_from_json(const std::string& text) {
  const json j = parse(text);
  BenchConfig config;
  for (const json& s : j.at("scenarios"))
    config.scenarios.push_back(scenario_from_json(s));
  if (j.contains("grid"))
    config.grid = tuning_grid_from_json(j.at("grid").dump());
  if (j.contains("fit"))
    config.base = fit_config_from_json(j.at("fit").dump());
  config.threads = j.value("threads", config.threads);
  return config;
}

std::string bench_report_to_csv(const BenchReport& report) {
  std::string out =
      "example,t_g,censor_rate,n_train,replication,value,mean,sd,"
      "sec_per_rep\n";
  for (const BenchRow& row : report.rows) {
    for (std::size_t r = 0; r < row.values.size(); ++r) {
      out += std::to_string(row.spec.example_id) + "," +
             fmt_g17(row.spec.t_g) + "," + fmt_g17(row.spec.censor_rate) +
             "," + std::to_string(row.spec.n_train) + "," +
             std::to_string(r + 1) + "," + fmt_g17(row.values[r]) + "," +
             fmt_g17(row.mean) + "," + fmt_g17(row.sd) + "," +
             fmt_g17(row.mean_seconds) + "\n";
    }
  }
  return out;
}

void save_dataset_dir(const Dataset& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_long_csv(data, dir + "/subjects.csv", dir + "/stages.csv");
  json meta;
  meta["k"] = data.k;
  meta["stage_boundaries"] = data.stage_boundaries;
  write_file(dir + "/meta.json", meta.dump(2) + "\n");
}

Dataset load_dataset_dir(const std::string& dir) {
  const json meta = parse(read_file(dir + "/meta.json"));
  DatasetSchema schema;
  schema.k = meta.at("k").get<int>();
  schema.stage_boundaries =
      meta.at("stage_boundaries").get<std::vector<double>>();
  return load_long_csv(dir + "/subjects.csv", dir + "/stages.csv", schema);
}

void save_ground_truth(const GroundTruth& truth, const std::string& path) {
  std::string out = "subject,t_true,c_true";
  for (int m = 1; m <= truth.d.cols; ++m)
    out += ",d" + std::to_string(m);
  out += "\n";
  for (int i = 0; i < truth.d.rows; ++i) {
    out += std::to_string(i + 1) + "," + fmt_g17(truth.t_true[i]) + "," +
           fmt_g17(truth.c_true[i]);
    for (int m = 0; m < truth.d.cols; ++m)
      out += "," + std::to_string(static_cast<int>(truth.d(i, m)));
    out += "\n";
  }
  return write_file(path, out);
}

std::string run_manifest(const std::string& command, std::uint64_t seed,
                         const std::string& config_text) {
  json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config_hash"] = content_hash(config_text);
  return j.dump(2) + "\n";
}

}  // namespace dtr
