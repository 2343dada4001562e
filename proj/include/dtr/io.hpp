#pragma once

#include <string>

#include "dtr/simbench.hpp"

namespace dtr {

// All reals in text output use 17 significant digits so values round-trip.
std::string fmt_g17(double v);

// FNV-1a 64-bit content hash, hex-encoded (run manifests).
std::string content_hash(const std::string& bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// JSON round-trips.
std::string policy_to_json(const PolicySet& policy);
PolicySet policy_from_json(const std::string& text);

std::string propensity_model_to_json(const PropensityModel& model);
PropensityModel propensity_model_from_json(const std::string& text);

// FitConfig JSON uses field defaults for missing keys.
FitConfig fit_config_from_json(const std::string& text);
std::string fit_config_to_json(const FitConfig& config);

std::string fit_result_to_json(const FitResult& result);

TuningGrid tuning_grid_from_json(const std::string& text);
std::string cv_report_to_csv(const CvReport& report);

BenchConfig bench_config_from_json(const std::string& text);
std::string bench_report_to_csv(const BenchReport& report);

// Dataset directory: subjects.csv + stages.csv + meta.json carrying the
// schema (k, stage_boundaries) the CSVs cannot express.
void save_dataset_dir(const Dataset& data, const std::string& dir);
Dataset load_dataset_dir(const std::string& dir);

void save_ground_truth(const GroundTruth& truth, const std::string& path);

// Run manifest written next to every CLI output.
std::string run_manifest(const std::string& command, std::uint64_t seed,
                         const std::string& config_text);

}  // namespace dtr
