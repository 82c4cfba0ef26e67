#pragma once

#include "marglik/config.hpp"

#include <iosfwd>
#include <optional>
#include <string>

namespace marglik {

// 17 significant digits, round-trip exact for doubles.
std::string format_double(double v);

// Flat little-endian float64 parameters plus a JSON sidecar recording the
// layout, epoch, and hyperparameters; written as <prefix>.bin / <prefix>.json.
void save_state(const std::string& prefix, const Network& net, const TrainedState& st,
                const Hyperparameters& h);
TrainedState load_state(const std::string& prefix, const Network& net,
                        Hyperparameters* h);

Dataset build_dataset(const RunConfig& cfg);
Network build_network(const RunConfig& cfg, const Dataset& ds);

// CLI commands; each writes <command>_<timestamp>.csv plus meta.json into
// out_dir and returns a process exit code.
int cmd_train(RunConfig cfg, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override, std::ostream& log);
int cmd_grid(RunConfig cfg, const std::string& out_dir,
             std::optional<std::uint64_t> seed_override, std::ostream& log);
int cmd_pareto(RunConfig cfg, const std::string& out_dir,
               std::optional<std::uint64_t> seed_override, std::ostream& log);

// Oracle and property suite; prints one line per property with counts and
// returns nonzero on any failure.
int cmd_check(std::ostream& log);

}  // namespace marglik
