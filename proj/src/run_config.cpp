#include "eatseg/run_config.hpp"

#include <cstdlib>
#include <fstream>

#include "eatseg/errors.hpp"

namespace eatseg {

using json = nlohmann::json;

void to_json(json& j, const RunConfig& c) {
    TrainConfig train = c.train;
    train.seed = c.seed;
    j = json{{"seed", c.seed},
             {"phantom", c.phantom},
             {"preprocess", c.preprocess},
             {"augment", c.augment},
             {"model", c.model},
             {"train", train},
             {"quantify",
              {{"threshold", c.quantify.threshold},
               {"clamp", c.quantify.clamp},
               {"aggregation", c.quantify.aggregation == Aggregation::per_slice ? "per_slice" : "per_patient"}}},
             {"paths", {{"manifest", c.paths.manifest.generic_string()}, {"output_dir", c.paths.output_dir.generic_string()}}}};
}

void from_json(const json& j, RunConfig& c) {
    const RunConfig d;
    c.seed = j.value("seed", d.seed);
    if (j.contains("phantom")) c.phantom = j.at("phantom").get<PhantomConfig>();
    if (j.contains("preprocess")) c.preprocess = j.at("preprocess").get<PreprocessConfig>();
    if (j.contains("augment")) c.augment = j.at("augment").get<AugmentPolicy>();
    if (j.contains("model")) c.model = j.at("model").get<SegModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    c.train.seed = c.seed;
    if (j.contains("quantify")) {
        const auto& q = j.at("quantify");
        c.quantify.threshold = q.value("threshold", d.quantify.threshold);
        c.quantify.clamp = q.value("clamp", d.quantify.clamp);
        const std::string agg = q.value("aggregation", std::string("per_slice"));
        require(agg == "per_slice" || agg == "per_patient", ErrorKind::parse,
                "quantify.aggregation: expected \"per_slice\" or \"per_patient\"");
        c.quantify.aggregation = agg == "per_slice" ? Aggregation::per_slice : Aggregation::per_patient;
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        c.paths.manifest = p.value("manifest", std::string());
        c.paths.output_dir = p.value("output_dir", d.paths.output_dir.string());
    }
}

void validate(const RunConfig& c) {
    validate(c.preprocess);
    validate(c.augment);
    validate(c.model);
    validate(c.train);
    validate(c.phantom);
    require(c.model.input_size == c.preprocess.target_size, ErrorKind::configuration,
            "model.input_size (" + std::to_string(c.model.input_size) + ") must equal preprocess.target_size (" +
                std::to_string(c.preprocess.target_size) + ")");
    require(c.quantify.threshold >= 0 && c.quantify.threshold <= 1, ErrorKind::configuration,
            "quantify.threshold must lie in [0, 1]");
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::invalid_argument,
            "override \"" + assignment + "\" is not of the form key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        require(node->is_object() && node->contains(part), ErrorKind::invalid_argument,
                "override: unknown config key \"" + key + "\"");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    require(!node->is_object(), ErrorKind::invalid_argument, "override: \"" + key + "\" names a section, not a value");
    *node = value;
}

namespace {

void reject_unknown(const json& defaults, const json& user, const std::string& where) {
    for (const auto& [k, v] : user.items()) {
        const std::string path = where.empty() ? k : where + "." + k;
        require(defaults.contains(k), ErrorKind::parse, "config: unknown key \"" + path + "\"");
        if (v.is_object() && defaults[k].is_object()) reject_unknown(defaults[k], v, path);
    }
}

}  // namespace

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
    json doc = RunConfig{};
    if (file) {
        std::ifstream is(*file);
        require(static_cast<bool>(is), ErrorKind::missing_asset, "config file " + file->string() + " not found");
        json user;
        try {
            user = json::parse(is);
        } catch (const json::parse_error& e) {
            fail(ErrorKind::parse, "config " + file->string() + ": " + e.what());
        }
        require(user.is_object(), ErrorKind::parse, "config " + file->string() + ": top level must be an object");
        reject_unknown(doc, user, "");
        // A train.seed in the file is honoured unless a top-level seed is given too.
        if (user.contains("train") && user["train"].contains("seed") && !user.contains("seed"))
            user["seed"] = user["train"]["seed"];
        doc.merge_patch(user);
    }
    for (const auto& o : overrides) {
        apply_override(doc, o);
        if (o.rfind("train.seed=", 0) == 0) doc["seed"] = doc["train"]["seed"];
    }
    RunConfig c;
    try {
        c = doc.get<RunConfig>();
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, std::string("config: ") + e.what());
    }
    validate(c);
    return c;
}

std::filesystem::path resolve_output_dir(const RunConfig& c) {
    if (c.paths.output_dir.is_absolute()) return c.paths.output_dir;
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / c.paths.output_dir;
    return c.paths.output_dir;
}

void archive_config(const RunConfig& c, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / "effective_config.json", std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write " + (dir / "effective_config.json").string());
    os << json(c).dump(2) << '\n';
}

}  // namespace eatseg
