#pragma once

// Checkpoint container shared by the pipeline trainer and the emotion
// classifier: named parameter arrays (f64), batch-norm buffers, optional
// optimizer state, plus a json manifest describing shapes and configs.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "emodub/array_file.hpp"
#include "emodub/nn.hpp"

namespace emodub {

using Mat = Eigen::MatrixXd;

constexpr int kCheckpointFormatVersion = 1;

inline void params_to_arrays(const nn::ParamStore& store, ArrayFile& file, const std::string& prefix) {
    for (const auto& [name, p] : store.params()) file.add(NamedArray::f64(prefix + name, p->val));
    for (const auto& [name, s] : store.bn_stats()) {
        if (s.mean.size() == 0) continue;
        file.add(NamedArray::f64(prefix + "stats." + name + ".mean", s.mean));
        file.add(NamedArray::f64(prefix + "stats." + name + ".var", s.var));
    }
}

inline void arrays_to_params(const ArrayFile& file, nn::ParamStore& store, const std::string& prefix) {
    for (auto& [name, p] : store.params()) {
        const NamedArray& a = file.require(prefix + name);
        Mat m = a.as_matrix();
        if (m.rows() != p->val.rows() || m.cols() != p->val.cols())
            throw IoError("checkpoint: shape mismatch for '" + name + "'");
        p->val = std::move(m);
    }
    for (auto& a : file.arrays) {
        const std::string stats_prefix = prefix + "stats.";
        if (a.name.rfind(stats_prefix, 0) != 0) continue;
        std::string rest = a.name.substr(stats_prefix.size());
        bool is_mean = rest.size() > 5 && rest.substr(rest.size() - 5) == ".mean";
        bool is_var = rest.size() > 4 && rest.substr(rest.size() - 4) == ".var";
        if (!is_mean && !is_var) throw IoError("checkpoint: unrecognized stats array '" + a.name + "'");
        std::string key = rest.substr(0, rest.size() - (is_mean ? 5 : 4));
        auto& st = store.bn_stats()[key];
        if (is_mean)
            st.mean = a.as_matrix().row(0);
        else
            st.var = a.as_matrix().row(0);
    }
}

inline void adam_to_arrays(nn::Adam& adam, ArrayFile& file, const std::string& prefix) {
    for (const auto& [name, mv] : adam.moments()) {
        file.add(NamedArray::f64(prefix + "m." + name, mv.first));
        file.add(NamedArray::f64(prefix + "v." + name, mv.second));
    }
}

inline void arrays_to_adam(const ArrayFile& file, nn::Adam& adam, const std::string& prefix) {
    for (const auto& a : file.arrays) {
        if (a.name.rfind(prefix + "m.", 0) == 0)
            adam.moments()[a.name.substr(prefix.size() + 2)].first = a.as_matrix();
        else if (a.name.rfind(prefix + "v.", 0) == 0)
            adam.moments()[a.name.substr(prefix.size() + 2)].second = a.as_matrix();
    }
}

inline nlohmann::json shapes_manifest(const nn::ParamStore& store) {
    nlohmann::json shapes = nlohmann::json::object();
    for (const auto& [name, p] : store.params())
        shapes[name] = {p->val.rows(), p->val.cols()};
    return shapes;
}

inline void write_manifest(const std::string& dir, const nlohmann::json& manifest) {
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw IoError("cannot write '" + dir + "/manifest.json'");
    out << manifest.dump(2) << "\n";
}

inline nlohmann::json read_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw IoError("cannot open '" + dir + "/manifest.json'");
    return nlohmann::json::parse(in);
}

}  // namespace emodub
