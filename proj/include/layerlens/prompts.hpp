#pragma once

#include "layerlens/probes.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <utility>

namespace layerlens {

// Few-shot exemplar blocks keyed by template id, loaded from
// <dir>/<template_id>.txt. Trailing whitespace is stripped; the block is
// joined to the per-item frame with a blank line.
struct prompt_library {
  std::map<std::string, std::string> blocks;

  const std::string &block(const std::string &template_id) const;
};

prompt_library load_templates(const std::filesystem::path &dir);

std::string template_id_for_task(probe_task task);

// Returns (prompt text, option text). The prompt is the exemplar block
// plus the task frame ("Q: ...\nA: ", with a "P:" context line for
// logical items); the option is the candidate continuation, verbatim.
std::pair<std::string, std::string>
assemble_prompt(const prompt_library &lib, const probe_item &item,
                std::size_t option_index);

} // namespace layerlens
