#pragma once

#include "json.hpp"

#include "headsmith/nnet.hpp"

// Shared JSON shape for architecture layer lists: the "spec" array of a model
// file and the "architecture" field of search-log lines use the same encoding.

namespace headsmith::nnet::detail {

nlohmann::ordered_json spec_to_json(const ArchitectureSpec& spec);
ArchitectureSpec spec_from_json(const nlohmann::ordered_json& layers);

}  // namespace headsmith::nnet::detail
