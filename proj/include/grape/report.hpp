#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grape/errors.hpp"
#include "grape/metrics.hpp"
#include "grape/train.hpp"

namespace grape {

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    j["epoch"] = r.epoch;
    j["indicator_names"] = r.indicator_names;
    j["cutoffs"] = nlohmann::json::array();
    for (const auto& c : r.cutoffs) {
        j["cutoffs"].push_back({{"n", c.cutoff}, {"hr", c.hr}, {"ndcg", c.ndcg}, {"mean_indicators", c.mean_indicators}});
    }
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.config_hash = j.at("config_hash").get<std::uint64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.epoch = j.at("epoch").get<int>();
    r.indicator_names = j.at("indicator_names").get<std::vector<std::string>>();
    for (const auto& c : j.at("cutoffs")) {
        CutoffMetrics m;
        m.cutoff = c.at("n").get<int>();
        m.hr = c.at("hr").get<double>();
        m.ndcg = c.at("ndcg").get<double>();
        m.mean_indicators = c.at("mean_indicators").get<std::vector<double>>();
        r.cutoffs.push_back(std::move(m));
    }
    return r;
}

inline std::string report_csv_header(const std::vector<std::string>& indicator_names) {
    std::string h = "cutoff,hr,ndcg";
    for (const auto& name : indicator_names) h += ",mean_" + name;
    h += ",seed,epoch,config_hash";
    return h;
}

inline void write_report_csv(const std::string& path, const EvalReport& r) {
    std::ofstream f(path);
    if (!f) throw IngestError("cannot write report: " + path);
    f.precision(17);
    f << report_csv_header(r.indicator_names) << "\n";
    for (const auto& c : r.cutoffs) {
        f << c.cutoff << "," << c.hr << "," << c.ndcg;
        for (const double v : c.mean_indicators) f << "," << v;
        f << "," << r.seed << "," << r.epoch << "," << r.config_hash << "\n";
    }
}

inline void write_report_json(const std::string& path, const EvalReport& r) {
    std::ofstream f(path);
    if (!f) throw IngestError("cannot write report: " + path);
    f << report_to_json(r).dump(2) << "\n";
}

inline void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream f(path);
    if (!f) throw IngestError("cannot write training log: " + path);
    f.precision(17);
    f << "epoch,loss_total,loss_normal,loss_green,val_hr@10,val_ndcg@10,improved\n";
    for (const auto& e : log) {
        f << e.epoch << "," << e.loss_total << "," << e.loss_normal << "," << e.loss_green << "," << e.val_hr10 << ","
          << e.val_ndcg10 << "," << (e.improved ? 1 : 0) << "\n";
    }
}

}  // namespace grape
