#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stochsol {

struct RunConfig {
  std::string subcommand;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  unsigned threads = 1;
  bool svg = false;
  // Experiment parameters, validated and with every default filled in.
  nlohmann::json params = nlohmann::json::object();

  bool operator==(const RunConfig&) const = default;
};

const std::vector<std::string>& subcommands();

// Parses a JSON document of flat keys: the global keys subcommand, seed, out,
// threads, svg plus the experiment keys of the subcommand. `subcommand` is
// used when the document does not name one. Throws ConfigError naming the
// offending key.
RunConfig parse_config(std::string_view text, const std::string& subcommand = "");
RunConfig default_config(const std::string& subcommand);
// The parameter table of a subcommand with defaults, as JSON.
nlohmann::json default_params(const std::string& subcommand);

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<unsigned> threads;
  std::optional<bool> svg;
};
void apply_overrides(RunConfig& config, const CliOverrides& overrides);

struct RunResult {
  nlohmann::json summary;
  std::vector<std::string> files;  // names inside out_dir, manifest last
};

// Runs the experiment, writing its CSVs (and SVG when asked) plus
// manifest.json into out_dir. Module errors are rethrown with the
// subcommand prefixed.
RunResult run(const RunConfig& config);

// Flag parsing and error-to-exit-code mapping: 0 ok, 2 config, 3 numerical
// or precondition, 1 anything else.
int main_entry(int argc, char** argv);

}  // namespace stochsol
