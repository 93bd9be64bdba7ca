#pragma once

#include <string>

#include "noprop/model.hpp"

namespace noprop {

// Apply one "key = value" assignment. Unknown keys are errors, never ignored.
void config_apply(TrainConfig& cfg, const std::string& key, const std::string& value);

// Parse plain "key = value" lines ('#' starts a comment).
TrainConfig config_from_text(const std::string& text, TrainConfig base = {});
TrainConfig config_from_file(const std::string& path, TrainConfig base = {});

// Full round-trippable snapshot of a config.
std::string config_to_text(const TrainConfig& cfg);

}  // namespace noprop
