#pragma once

#include "layerlens/rational.hpp"
#include "layerlens/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace layerlens {

enum class probe_task {
  arith_int,
  arith_float,
  mps_cal,
  mps_rea,
  xmps_cal,
  xmps_rea,
  truthfulqa,
  lama,
  reclor,
};

std::string task_to_string(probe_task t);
probe_task task_from_string(const std::string &s);

// One multiple-choice probe. `correct` is a sorted set of option indices;
// only truthfulqa items may have more than one.
struct probe_item {
  std::string id;
  probe_task task = probe_task::arith_int;
  std::optional<std::string> context;
  std::string question;
  std::vector<std::string> options;
  std::vector<std::size_t> correct;
  std::string language = "en";
  std::optional<int> n_steps;

  bool operator==(const probe_item &o) const = default;
};

struct probe_dataset {
  std::vector<probe_item> items;
  std::string task;        // family tag: arith, mps_cal, truthfulqa, ...
  std::string template_id; // prompt template the task is scored with
  std::string provenance;  // generator spec text or source file hash

  bool operator==(const probe_dataset &o) const = default;
};

enum class number_type { integer_kind, float3 };
enum class digit_bin { b12, b34, b56 };

// One (type, bin, column) generation cell.
struct expression_spec {
  number_type type = number_type::integer_kind;
  digit_bin bin = digit_bin::b12;
  std::string column;             // add sub mul div mix2 mix3
  std::vector<char> operator_set; // subset of + - * /
  int n_operators = 1;
};

struct arithmetic_spec {
  std::size_t count_per_cell = 200;
  double delta_max = 20.0;
  std::uint64_t seed = 0;
  std::vector<number_type> types = {number_type::integer_kind,
                                    number_type::float3};
  std::vector<digit_bin> bins = {digit_bin::b12, digit_bin::b34,
                                 digit_bin::b56};
  std::vector<std::string> columns = {"add", "sub", "mul", "div",
                                      "mix2", "mix3"};
};

expression_spec make_cell(number_type type, digit_bin bin,
                          const std::string &column);

// Uniform operand: integers over [1,100] / [100,10000] / [10000,1000000],
// floats over the same interval rounded half-away-from-zero to 3 decimals.
rational sample_operand(rand_source &rng, number_type type, digit_bin bin);

struct built_expression {
  std::string text;     // "2331 + 2693"
  rational value;       // exact
  std::string rendered; // "5024" or "552.0"
  bool uses_division = false;
};

// Draws operators uniformly with replacement, operands per sample_operand,
// evaluates with standard precedence (* / before + -, left-associative) in
// exact rationals, resampling the whole expression on a zero divisor.
built_expression build_and_eval_expression(rand_source &rng,
                                           const expression_spec &cell);

// Evaluate a fixed operand/operator chain (test access to the exact
// arithmetic; throws numeric_error on a zero divisor).
rational eval_expression(const std::vector<rational> &operands,
                         const std::vector<char> &ops);
std::string render_answer(const rational &value, bool integer_rendering);
std::string render_operand(const rational &value, number_type type);

// Three distinct near-miss options within (0, delta_max] of the answer.
std::array<std::string, 3> make_distractors(const rational &answer,
                                            bool integer_rendering,
                                            rand_source &rng,
                                            double delta_max = 20.0);

probe_dataset gen_arithmetic(const arithmetic_spec &spec);

// Line-delimited records; '#' comment lines and blank lines are skipped.
// `task_tag` is a family tag ("arith" accepts arith_int and arith_float).
probe_dataset ingest_jsonl(const std::filesystem::path &path,
                           const std::string &task_tag);
void save_jsonl(const probe_dataset &ds, const std::filesystem::path &path,
                const std::string &manifest_comment = "");

// Parse "columns" style text into a cell grid; throws config_error with a
// line number on bad tokens.
arithmetic_spec parse_gen_spec(const std::string &text);

// Cell label ("int-12-add") -> item count, for the generation summary.
std::map<std::string, std::size_t> per_cell_counts(const probe_dataset &ds);

} // namespace layerlens
