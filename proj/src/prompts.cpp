#include "layerlens/prompts.hpp"

#include "layerlens/errors.hpp"

#include <fstream>
#include <sstream>

namespace layerlens {

namespace {

const char *k_template_ids[] = {"arithmetic", "truthfulqa", "lama", "logical",
                                "mps"};

std::string strip_trailing(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' ||
                        s.back() == ' ' || s.back() == '\t'))
    s.pop_back();
  return s;
}

} // namespace

const std::string &prompt_library::block(const std::string &template_id) const {
  const auto it = blocks.find(template_id);
  if (it == blocks.end())
    throw config_error("unknown prompt template: " + template_id);
  return it->second;
}

prompt_library load_templates(const std::filesystem::path &dir) {
  prompt_library lib;
  for (const char *id : k_template_ids) {
    const auto path = dir / (std::string(id) + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw io_error("cannot open prompt template: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    lib.blocks[id] = strip_trailing(ss.str());
  }
  return lib;
}

std::string template_id_for_task(probe_task task) {
  switch (task) {
  case probe_task::arith_int:
  case probe_task::arith_float:
    return "arithmetic";
  case probe_task::truthfulqa:
    return "truthfulqa";
  case probe_task::lama:
    return "lama";
  case probe_task::reclor:
    return "logical";
  case probe_task::mps_cal:
  case probe_task::mps_rea:
  case probe_task::xmps_cal:
  case probe_task::xmps_rea:
    // The English chain-of-thought block is used for every language.
    return "mps";
  }
  throw config_error("no template for task");
}

std::pair<std::string, std::string>
assemble_prompt(const prompt_library &lib, const probe_item &item,
                std::size_t option_index) {
  if (option_index >= item.options.size())
    throw input_error("option index out of range for item " + item.id);
  const std::string &block = lib.block(template_id_for_task(item.task));
  std::string prompt = block + "\n\n";
  if (item.task == probe_task::reclor) {
    if (!item.context)
      throw validation_error("logical item without context: " + item.id);
    prompt += "P: " + *item.context + "\n";
  }
  prompt += "Q: " + item.question + "\nA: ";
  return {std::move(prompt), item.options[option_index]};
}

} // namespace layerlens
