#include "gemlab/record.hpp"

#include "gemlab/errors.hpp"

namespace gemlab {

nlohmann::json RunRecord::to_json() const {
    nlohmann::json steps_json = nlohmann::json::array();
    for (const StepScalars& s : steps) {
        steps_json.push_back({{"step", s.step},
                              {"epoch", s.epoch},
                              {"loss", s.loss},
                              {"grad_norm", s.grad_norm},
                              {"entropy", s.entropy},
                              {"param_distance", s.param_distance}});
    }
    return {{"cell", cell},
            {"loss", loss},
            {"config_hash", config_hash},
            {"version", version},
            {"seed", seed},
            {"steps", std::move(steps_json)},
            {"batch_order_digests", batch_order_digests},
            {"final_metrics", final_metrics},
            {"curves", curves},
            {"wall_time_s", wall_time_s},
            {"artifacts", artifacts},
            {"status", status},
            {"error", error}};
}

RunRecord RunRecord::from_json(const nlohmann::json& doc) {
    try {
        RunRecord r;
        r.cell = doc.at("cell").get<std::string>();
        r.loss = doc.at("loss").get<std::string>();
        r.config_hash = doc.at("config_hash").get<std::string>();
        r.version = doc.at("version").get<std::string>();
        r.seed = doc.at("seed").get<std::uint64_t>();
        for (const auto& s : doc.at("steps")) {
            r.steps.push_back({s.at("step").get<std::size_t>(), s.at("epoch").get<std::size_t>(),
                               s.at("loss").get<double>(), s.at("grad_norm").get<double>(),
                               s.at("entropy").get<double>(), s.at("param_distance").get<double>()});
        }
        r.batch_order_digests = doc.at("batch_order_digests").get<std::vector<std::string>>();
        r.final_metrics = doc.at("final_metrics").get<std::map<std::string, double>>();
        r.curves = doc.at("curves").get<std::map<std::string, std::vector<double>>>();
        r.wall_time_s = doc.at("wall_time_s").get<double>();
        r.artifacts = doc.at("artifacts").get<std::vector<std::string>>();
        r.status = doc.at("status").get<std::string>();
        r.error = doc.at("error").get<std::string>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed run record: ") + e.what());
    }
}

}  // namespace gemlab
