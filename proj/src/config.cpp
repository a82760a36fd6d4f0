#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rastream/config.hpp"

namespace rastream {

using nlohmann::json;

namespace {

const std::set<std::string> kSourceKinds = {"synthetic", "source"};
const std::set<std::string> kFilterKinds = {"resample", "smooth",   "bandmath", "pansharpen",
                                            "glcm",     "classify", "meanshift", "stats"};
const std::set<std::string> kMapperKinds = {"writer", "sink"};

std::vector<std::string> node_inputs(const json& node) {
    std::vector<std::string> inputs;
    if (node.contains("input")) inputs.push_back(node.at("input").get<std::string>());
    if (node.contains("inputs"))
        for (const auto& i : node.at("inputs")) inputs.push_back(i.get<std::string>());
    return inputs;
}

SplitStrategy parse_split(const json& j, std::vector<std::string>& errors) {
    SplitStrategy s;
    const std::string strategy = j.value("strategy", "striped");
    if (strategy == "striped") {
        s.kind = SplitStrategy::Kind::Striped;
        s.striped_count = j.value("count", std::int64_t{1});
        if (s.striped_count < 1) errors.push_back("split: striped count must be >= 1");
    } else if (strategy == "tiled") {
        s.kind = SplitStrategy::Kind::Tiled;
        s.tile_w = j.value("w", std::int64_t{256});
        s.tile_h = j.value("h", std::int64_t{256});
        if (s.tile_w < 1 || s.tile_h < 1) errors.push_back("split: tile size must be >= 1");
    } else if (strategy == "auto") {
        s.kind = SplitStrategy::Kind::Auto;
        s.memory_budget_bytes = j.value("budget_bytes", std::uint64_t{64ull << 20});
    } else {
        errors.push_back("split: unknown strategy '" + strategy + "'");
    }
    return s;
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    std::vector<std::string> errors;
    PipelineConfig cfg;
    cfg.name = doc.value("name", "pipeline");
    cfg.world_size = doc.value("world", 1);

    if (!doc.contains("nodes") || !doc.at("nodes").is_object()) {
        throw ConfigError("config: missing 'nodes' object");
    }
    for (const auto& [name, node] : doc.at("nodes").items()) {
        PipelineConfig::Node n;
        n.name = name;
        if (!node.is_object() || !node.contains("kind")) {
            errors.push_back("node '" + name + "': missing kind");
            continue;
        }
        n.kind = node.at("kind").get<std::string>();
        n.inputs = node_inputs(node);
        n.params_json = node.dump();
        cfg.nodes.push_back(std::move(n));
    }

    std::set<std::string> known;
    for (const auto& n : cfg.nodes) known.insert(n.name);

    std::vector<std::string> mappers;
    for (const auto& n : cfg.nodes) {
        const bool is_source = kSourceKinds.count(n.kind) > 0;
        const bool is_filter = kFilterKinds.count(n.kind) > 0;
        const bool is_mapper = kMapperKinds.count(n.kind) > 0;
        if (!is_source && !is_filter && !is_mapper)
            errors.push_back("node '" + n.name + "': unknown kind '" + n.kind + "'");
        if (is_source && !n.inputs.empty())
            errors.push_back("node '" + n.name + "': sources take no inputs");
        if ((is_filter || is_mapper) && n.inputs.empty())
            errors.push_back("node '" + n.name + "': requires an input");
        if (is_mapper) mappers.push_back(n.name);
        for (const auto& in : n.inputs)
            if (!known.count(in))
                errors.push_back("node '" + n.name + "': undefined input '" + in + "'");
    }
    if (mappers.empty())
        errors.push_back("config: no mapper node (add a 'writer' or 'sink')");
    else if (mappers.size() > 1) {
        std::string list;
        for (const auto& m : mappers) list += (list.empty() ? "" : ", ") + m;
        errors.push_back("config: exactly one mapper expected, found: " + list);
    } else {
        cfg.mapper_node = mappers[0];
    }

    // Cycle detection over node names.
    std::map<std::string, int> state;  // 0 unvisited, 1 in progress, 2 done
    std::function<bool(const std::string&, std::string&)> dfs =
        [&](const std::string& name, std::string& where) -> bool {
        if (state[name] == 1) {
            where = name;
            return true;
        }
        if (state[name] == 2) return false;
        state[name] = 1;
        for (const auto& n : cfg.nodes)
            if (n.name == name)
                for (const auto& in : n.inputs)
                    if (known.count(in) && dfs(in, where)) {
                        where += " <- " + name;
                        return true;
                    }
        state[name] = 2;
        return false;
    };
    for (const auto& n : cfg.nodes) {
        std::string where;
        if (dfs(n.name, where)) {
            errors.push_back("config: cycle through " + where);
            break;
        }
    }

    if (doc.contains("split"))
        cfg.split = parse_split(doc.at("split"), errors);

    if (!errors.empty()) {
        std::string msg = "invalid pipeline config:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

PipelineConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

namespace {

std::shared_ptr<ProcessObject> make_node(const PipelineConfig::Node& n,
                                         const SplitStrategy& split,
                                         const std::string& output_override) {
    const json p = json::parse(n.params_json);
    try {
        if (n.kind == "synthetic") {
            SyntheticSpec spec;
            const std::string pattern = p.value("pattern", "constant");
            if (pattern == "constant")
                spec.kind = SyntheticKind::Constant;
            else if (pattern == "checkerboard")
                spec.kind = SyntheticKind::Checkerboard;
            else if (pattern == "random")
                spec.kind = SyntheticKind::Random;
            else
                throw ConfigError("unknown synthetic pattern '" + pattern + "'");
            spec.info.width = p.at("width").get<std::int64_t>();
            spec.info.height = p.at("height").get<std::int64_t>();
            spec.info.bands = p.value("bands", 1);
            spec.info.sample_type = parse_sample_type(p.value("sample_type", "u16"));
            spec.value = p.value("value", 0.0);
            spec.period = p.value("period", std::int64_t{1});
            spec.low = p.value("low", 0.0);
            spec.high = p.value("high", 1.0);
            spec.seed = p.value("seed", std::uint64_t{0});
            return std::make_shared<SyntheticSource>(spec);
        }
        if (n.kind == "source") return std::make_shared<FileSource>(p.at("path").get<std::string>());
        if (n.kind == "resample") {
            AffineGeoTransform t;
            t.scale_x = p.value("scale_x", 1.0);
            t.scale_y = p.value("scale_y", 1.0);
            t.offset_x = p.value("offset_x", 0.0);
            t.offset_y = p.value("offset_y", 0.0);
            const std::string mode = p.value("mode", "nearest");
            if (mode != "nearest" && mode != "bilinear")
                throw ConfigError("unknown resample mode '" + mode + "'");
            return std::make_shared<ResampleFilter>(
                t, mode == "nearest" ? ResampleMode::Nearest : ResampleMode::Bilinear,
                p.at("out_width").get<std::int64_t>(), p.at("out_height").get<std::int64_t>());
        }
        if (n.kind == "smooth")
            return std::make_shared<SmoothFilter>(p.value("radius", std::int64_t{1}));
        if (n.kind == "bandmath")
            return std::make_shared<BandMathFilter>(p.at("expr").get<std::string>());
        if (n.kind == "pansharpen")
            return std::make_shared<PansharpenFilter>(p.value("radius", std::int64_t{2}));
        if (n.kind == "glcm") {
            auto features = p.value("features", std::vector<std::string>{"energy", "contrast"});
            bool energy = false, contrast = false;
            for (const auto& f : features) {
                if (f == "energy")
                    energy = true;
                else if (f == "contrast")
                    contrast = true;
                else
                    throw ConfigError("unknown glcm feature '" + f + "'");
            }
            auto g = std::make_shared<GlcmFilter>(
                p.value("radius", std::int64_t{2}), p.value("levels", 16),
                p.value("dx", std::int64_t{1}), p.value("dy", std::int64_t{0}), energy, contrast);
            if (p.contains("min") && p.contains("max"))
                g->set_bounds(p.at("min").get<double>(), p.at("max").get<double>());
            return g;
        }
        if (n.kind == "classify") {
            DecisionRule rule;
            rule.default_class = p.value("default", 0);
            for (const auto& s : p.value("stumps", json::array())) {
                DecisionRule::Stump stump;
                stump.band = s.at("band").get<int>();
                stump.threshold = s.at("threshold").get<double>();
                if (s.contains("le") && !s.at("le").is_null())
                    stump.class_le = s.at("le").get<int>();
                if (s.contains("gt") && !s.at("gt").is_null())
                    stump.class_gt = s.at("gt").get<int>();
                rule.stumps.push_back(stump);
            }
            return std::make_shared<ClassifyFilter>(rule);
        }
        if (n.kind == "meanshift")
            return std::make_shared<MeanshiftFilter>(p.value("spatial_radius", std::int64_t{2}),
                                                     p.value("range_radius", 16.0),
                                                     p.value("max_iter", 3));
        if (n.kind == "stats") return std::make_shared<StatsFilter>();
        if (n.kind == "writer") {
            std::string path = p.at("path").get<std::string>();
            if (!output_override.empty()) path = output_override;
            return std::make_shared<MapperObject>(split, make_file_sink(path));
        }
        if (n.kind == "sink")
            return std::make_shared<MapperObject>(split, make_null_sink());
    } catch (const json::exception& e) {
        throw ConfigError("node '" + n.name + "': " + e.what());
    }
    throw ConfigError("node '" + n.name + "': unknown kind '" + n.kind + "'");
}

}  // namespace

PipelineInstance build_pipeline(const PipelineConfig& config, const std::string& output_override) {
    PipelineInstance inst;
    std::function<std::shared_ptr<ProcessObject>(const std::string&)> build =
        [&](const std::string& name) -> std::shared_ptr<ProcessObject> {
        auto it = inst.nodes.find(name);
        if (it != inst.nodes.end()) return it->second;
        const PipelineConfig::Node* decl = nullptr;
        for (const auto& n : config.nodes)
            if (n.name == name) decl = &n;
        if (!decl) throw ConfigError("undefined node '" + name + "'");
        auto obj = make_node(*decl, config.split, output_override);
        for (std::size_t i = 0; i < decl->inputs.size(); ++i)
            obj->set_input(i, build(decl->inputs[i]));
        inst.nodes[name] = obj;
        return obj;
    };
    auto mapper = std::dynamic_pointer_cast<MapperObject>(build(config.mapper_node));
    if (!mapper) throw ConfigError("mapper node '" + config.mapper_node + "' is not a mapper");
    inst.mapper = mapper;
    return inst;
}

UpdateReport run_pipeline(const PipelineConfig& config, Communicator& comm,
                          const std::string& output_override) {
    PipelineInstance inst = build_pipeline(config, output_override);

    // GLCM quantization bounds come from a prior statistics pass over the
    // same source chain when the config does not pin them.
    for (const auto& n : config.nodes) {
        if (n.kind != "glcm") continue;
        auto glcm = std::dynamic_pointer_cast<GlcmFilter>(inst.nodes.at(n.name));
        if (glcm->has_bounds()) continue;
        PipelineInstance pre = build_pipeline(config, output_override);
        auto stats = std::make_shared<StatsFilter>();
        stats->set_input(0, pre.nodes.at(n.inputs.at(0)));
        auto pre_mapper = std::make_shared<MapperObject>(config.split, make_null_sink());
        pre_mapper->set_input(0, stats);
        pre_mapper->update(comm);
        const BandStats& s = stats->result().at(0);
        glcm->set_bounds(s.min, s.max);
    }

    return inst.mapper->update(comm);
}

}  // namespace rastream
