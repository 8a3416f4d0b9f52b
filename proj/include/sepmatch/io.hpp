#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sepmatch/entropy.hpp"
#include "sepmatch/montecarlo.hpp"
#include "sepmatch/types.hpp"

namespace sepmatch {

// Matching CSV: header `x,y,mu`; y=0 rows are single men, x=0 rows single
// women, (0,0) is invalid; missing cells read as zero; types are 1-based.
MatchingPatterns read_matching_csv(const std::string& path);
void write_matching_csv(const MatchingPatterns& mu, const std::string& path);

// Margins CSV: header `side,type,mass` with side in {men,women}, 1-based
// contiguous types per side.
Margins read_margins_csv(const std::string& path);
void write_margins_csv(const Margins& q, const std::string& path);

// Basis CSV: header `x,y,phi1,...,phiK`; one row per couple cell.
Eigen::MatrixXd read_basis_csv(const std::string& path, const TypeSpace& space);
void write_basis_csv(const Eigen::MatrixXd& phi, const TypeSpace& space,
                     const std::string& path);

// Surplus CSV: header `x,y,phi`; one row per couple cell, grid inferred.
Eigen::MatrixXd read_surplus_csv(const std::string& path);

// Model JSON -> validated EntropyModel. Parameter-range violations are
// reported with their field path.
EntropyModel parse_model_config(const std::string& json_text);
EntropyModel load_model_config(const std::string& path);

// Study JSON -> StudyConfig (family parsed with parse_model_config).
StudyConfig parse_study_config(const std::string& json_text);
StudyConfig load_study_config(const std::string& path);

// 64-bit FNV-1a over the file bytes, lowercase hex.
std::string digest_file(const std::string& path);

// manifest.json written into out_dir: subcommand, resolved config, input
// digests, tool version, seed, creation timestamp.
void write_run_manifest(const std::string& out_dir, const std::string& subcommand,
                        const std::string& resolved_config_json,
                        const std::vector<std::string>& input_paths, std::uint64_t seed);

std::string tool_version();

}  // namespace sepmatch
