#pragma once

// Run configuration for the command line: built-in defaults overlaid by a
// json config file and then by --set key=value flags, with per-field
// provenance. Unknown fields are rejected by name.

#include <string>
#include <vector>

#include <json.hpp>

#include "emodub/corpus.hpp"
#include "emodub/guidance.hpp"
#include "emodub/model.hpp"
#include "emodub/trainer.hpp"

namespace emodub {

struct RunConfig {
    uint64_t seed = 0;
    int count = 0;  // corpus sample count for generate-data; 0 means unset
    CorpusConfig corpus;
    ModelConfig model;
    TrainConfig train;
    ClassifierConfig classifier;
    ClassifierTrainConfig classifier_train;
    FlowConfig flow;
    EvalConfig eval;

    nlohmann::json to_json() const {
        return {{"seed", seed},
                {"count", count},
                {"corpus", corpus.to_json()},
                {"model", model.to_json()},
                {"train", train.to_json()},
                {"classifier", classifier.to_json()},
                {"classifier_train", classifier_train.to_json()},
                {"flow", flow.to_json()},
                {"eval", eval.to_json()}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        c.seed = j.at("seed").get<uint64_t>();
        c.count = j.at("count").get<int>();
        c.corpus = CorpusConfig::from_json(j.at("corpus"));
        c.model = ModelConfig::from_json(j.at("model"));
        c.train = TrainConfig::from_json(j.at("train"));
        c.classifier = ClassifierConfig::from_json(j.at("classifier"));
        c.classifier_train = ClassifierTrainConfig::from_json(j.at("classifier_train"));
        c.flow = FlowConfig::from_json(j.at("flow"));
        c.eval = EvalConfig::from_json(j.at("eval"));
        return c;
    }
};

namespace detail {

inline void flatten_paths(const nlohmann::json& j, const std::string& prefix,
                          std::vector<std::string>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it.value().is_object())
            flatten_paths(it.value(), path, out);
        else
            out.push_back(path);
    }
}

inline const nlohmann::json* find_path(const nlohmann::json& j, const std::string& path) {
    const nlohmann::json* cur = &j;
    size_t pos = 0;
    while (pos != std::string::npos) {
        size_t dot = path.find('.', pos);
        std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        pos = dot == std::string::npos ? std::string::npos : dot + 1;
    }
    return cur;
}

inline void set_path(nlohmann::json& j, const std::string& path, nlohmann::json value) {
    nlohmann::json* cur = &j;
    size_t pos = 0;
    for (;;) {
        size_t dot = path.find('.', pos);
        if (dot == std::string::npos) {
            (*cur)[path.substr(pos)] = std::move(value);
            return;
        }
        cur = &(*cur)[path.substr(pos, dot - pos)];
        pos = dot + 1;
    }
}

inline void check_known(const nlohmann::json& candidate, const nlohmann::json& schema,
                        const std::string& prefix, const std::string& origin) {
    for (auto it = candidate.begin(); it != candidate.end(); ++it) {
        std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!schema.contains(it.key()))
            throw ConfigError(origin + ": unknown config field '" + path + "'");
        if (it.value().is_object()) {
            if (!schema[it.key()].is_object())
                throw ConfigError(origin + ": field '" + path + "' is not a section");
            check_known(it.value(), schema[it.key()], path, origin);
        }
    }
}

}  // namespace detail

// Resolution result: the merged config plus where each leaf value came from.
struct ResolvedConfig {
    RunConfig config;
    nlohmann::json resolved;                      // full json form
    std::map<std::string, std::string> provenance;  // leaf path -> default | file | flag

    nlohmann::json provenance_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : provenance) j[k] = v;
        return j;
    }

    bool section_touched(const std::string& section) const {
        for (const auto& [k, v] : provenance)
            if (k.rfind(section + ".", 0) == 0 && v != "default") return true;
        return false;
    }
};

// Precedence: flag > file > default. `sets` holds "path=value" strings;
// values parse as json when possible and fall back to strings.
inline ResolvedConfig resolve_config(const std::string& config_file,
                                     const std::vector<std::string>& sets) {
    nlohmann::json merged = RunConfig{}.to_json();

    std::vector<std::string> leaves;
    detail::flatten_paths(merged, "", leaves);
    ResolvedConfig out;
    for (const auto& path : leaves) out.provenance[path] = "default";

    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw ConfigError("cannot open config file '" + config_file + "'");
        nlohmann::json file_json;
        try {
            file_json = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("config file '" + config_file + "': " + e.what());
        }
        detail::check_known(file_json, merged, "", "config file '" + config_file + "'");
        std::vector<std::string> file_leaves;
        detail::flatten_paths(file_json, "", file_leaves);
        for (const auto& path : file_leaves) {
            const nlohmann::json* v = detail::find_path(file_json, path);
            detail::set_path(merged, path, *v);
            out.provenance[path] = "file";
        }
    }

    for (const std::string& s : sets) {
        size_t eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        std::string path = s.substr(0, eq);
        std::string raw = s.substr(eq + 1);
        if (!out.provenance.count(path)) throw ConfigError("--set: unknown config field '" + path + "'");
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::parse_error&) {
            value = raw;  // bare string
        }
        detail::set_path(merged, path, std::move(value));
        out.provenance[path] = "flag";
    }

    // Sub-seeds follow the global seed unless pinned explicitly.
    uint64_t seed = merged.at("seed").get<uint64_t>();
    for (const char* field : {"corpus.seed", "train.seed", "classifier_train.seed", "eval.seed"})
        if (out.provenance.at(field) == "default") detail::set_path(merged, field, seed);

    try {
        out.config = RunConfig::from_json(merged);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    out.resolved = merged;
    return out;
}

}  // namespace emodub
