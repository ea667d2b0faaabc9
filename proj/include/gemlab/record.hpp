#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace gemlab {

struct StepScalars {
    std::size_t step = 0;   // optimizer steps taken so far
    std::size_t epoch = 0;  // 1-based epoch (exact mode: equals step)
    double loss = 0.0;
    double grad_norm = 0.0;
    double entropy = 0.0;   // mean conditional entropy over training contexts
    double param_distance = 0.0;

    friend bool operator==(const StepScalars&, const StepScalars&) = default;
};

/// Everything one training/evaluation cell produced. All scalars except
/// wall_time_s are deterministic functions of (config, seed).
struct RunRecord {
    std::string cell;
    std::string loss;  // LossSpec label
    std::string config_hash;
    std::string version;
    std::uint64_t seed = 0;
    std::vector<StepScalars> steps;
    std::vector<std::string> batch_order_digests;  // one per epoch, hex FNV-1a of the example order
    std::map<std::string, double> final_metrics;
    std::map<std::string, std::vector<double>> curves;
    double wall_time_s = 0.0;
    std::vector<std::string> artifacts;
    std::string status = "ok";
    std::string error;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& doc);
};

}  // namespace gemlab
