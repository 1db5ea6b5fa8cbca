#pragma once

#include <functional>
#include <string>

#include <json.hpp>

namespace tap::run {

using nlohmann::json;

// Every command takes a JSON object of arguments and returns a JSON summary. Unknown argument
// keys are rejected so typos surface as config errors.
json cmd_gen(const json& args);
json cmd_train(const json& args);  // {"config": {...}, "overrides": {...}}
json cmd_eval(const json& args);
json cmd_bottleneck(const json& args);
json cmd_plan(const json& args);
json cmd_recursive(const json& args);
json cmd_dump_frames(const json& args);

// Dispatches by subcommand name (gen, train, eval, bottleneck, plan, recursive, dump-frames).
json run_command(const std::string& name, const json& args);

// Progress lines (one per epoch during training); defaults to no output.
void set_progress_sink(std::function<void(const std::string&)> sink);

}  // namespace tap::run
