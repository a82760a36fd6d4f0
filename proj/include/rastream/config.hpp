#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rastream/filters.hpp"
#include "rastream/pipeline.hpp"

namespace rastream {

/// Validated pipeline description: named nodes, edges, split strategy.
/// Parsed from JSON (see docs/pipeline-config.md for the schema).
struct PipelineConfig {
    struct Node {
        std::string name;
        std::string kind;
        std::vector<std::string> inputs;
        std::string params_json;  // the node's raw JSON object
    };

    std::string name = "pipeline";
    std::vector<Node> nodes;      // declaration order
    std::string mapper_node;
    SplitStrategy split;
    int world_size = 1;
};

/// Parses and validates; throws ConfigError whose message lists every schema
/// error with the offending node names.
PipelineConfig parse_config(const std::string& text);

PipelineConfig parse_config_file(const std::string& path);

/// One freshly built pipeline instance (never shared across ranks).
struct PipelineInstance {
    std::shared_ptr<MapperObject> mapper;
    std::map<std::string, std::shared_ptr<ProcessObject>> nodes;
};

/// Builds the process-object graph for one rank. output_override, when
/// nonempty, replaces the writer's destination path.
PipelineInstance build_pipeline(const PipelineConfig& config,
                                const std::string& output_override = "");

/// Executes the pipeline on this rank: resolves GLCM quantization bounds via
/// a statistics pre-pass when needed, then runs the mapper update.
UpdateReport run_pipeline(const PipelineConfig& config, Communicator& comm,
                          const std::string& output_override = "");

}  // namespace rastream
