#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "contrastcat_cli/run_config.hpp"

namespace ccat::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitInvariant = 4 };

/// args excludes the program name. Never throws; every failure maps to an
/// exit code with a message on err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Subcommand bodies; cfg must already be resolved (absolute paths, output
/// directory created). Throw ccat::Error subclasses on failure.
void cmd_train(const RunConfig& cfg, std::ostream& out);
void cmd_build_reflib(const RunConfig& cfg, std::ostream& out);
void cmd_attribute(const RunConfig& cfg, std::ostream& out);
void cmd_evaluate(const RunConfig& cfg, std::ostream& out);
void cmd_ablate(const RunConfig& cfg, std::ostream& out);
void cmd_pca_export(const RunConfig& cfg, std::ostream& out);

}  // namespace ccat::cli
