#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "smart/config.hpp"
#include "smart/decoder.hpp"
#include "smart/trainer.hpp"

namespace smart {

// Entry point of the `smartvlm` tool. `args` excludes the program name.
// Returns the process exit code; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Config keys accepted in --config files (flags map onto the same keys).
const std::vector<std::string>& known_config_keys();

ModelConfig model_config_from(const Config& cfg);
TrainConfig train_config_from(const Config& cfg);
LoraConfig lora_config_from(const Config& cfg);

}  // namespace smart
