#include "layerlens/probes.hpp"

#include "layerlens/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace layerlens {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr int k_max_resample = 1000;

struct bin_range {
  std::int64_t lo;
  std::int64_t hi;
};

bin_range range_for(digit_bin bin) {
  switch (bin) {
  case digit_bin::b12:
    return {1, 100};
  case digit_bin::b34:
    return {100, 10000};
  case digit_bin::b56:
    return {10000, 1000000};
  }
  return {1, 100};
}

const char *bin_label(digit_bin bin) {
  switch (bin) {
  case digit_bin::b12:
    return "12";
  case digit_bin::b34:
    return "34";
  case digit_bin::b56:
    return "56";
  }
  return "12";
}

rational apply_op(const rational &a, char op, const rational &b) {
  switch (op) {
  case '+':
    return a + b;
  case '-':
    return a - b;
  case '*':
    return a * b;
  case '/':
    return a / b;
  }
  throw config_error(std::string("unknown operator: ") + op);
}

} // namespace

std::string task_to_string(probe_task t) {
  switch (t) {
  case probe_task::arith_int:
    return "arith_int";
  case probe_task::arith_float:
    return "arith_float";
  case probe_task::mps_cal:
    return "mps_cal";
  case probe_task::mps_rea:
    return "mps_rea";
  case probe_task::xmps_cal:
    return "xmps_cal";
  case probe_task::xmps_rea:
    return "xmps_rea";
  case probe_task::truthfulqa:
    return "truthfulqa";
  case probe_task::lama:
    return "lama";
  case probe_task::reclor:
    return "reclor";
  }
  return "arith_int";
}

probe_task task_from_string(const std::string &s) {
  static const std::map<std::string, probe_task> table = {
      {"arith_int", probe_task::arith_int},
      {"arith_float", probe_task::arith_float},
      {"mps_cal", probe_task::mps_cal},
      {"mps_rea", probe_task::mps_rea},
      {"xmps_cal", probe_task::xmps_cal},
      {"xmps_rea", probe_task::xmps_rea},
      {"truthfulqa", probe_task::truthfulqa},
      {"lama", probe_task::lama},
      {"reclor", probe_task::reclor},
  };
  const auto it = table.find(s);
  if (it == table.end())
    throw validation_error("unknown task tag: " + s);
  return it->second;
}

expression_spec make_cell(number_type type, digit_bin bin,
                          const std::string &column) {
  expression_spec cell;
  cell.type = type;
  cell.bin = bin;
  cell.column = column;
  if (column == "add")
    cell.operator_set = {'+'};
  else if (column == "sub")
    cell.operator_set = {'-'};
  else if (column == "mul")
    cell.operator_set = {'*'};
  else if (column == "div")
    cell.operator_set = {'/'};
  else if (column == "mix2" || column == "mix3")
    cell.operator_set = {'+', '-', '*', '/'};
  else
    throw config_error("unknown column: " + column);
  cell.n_operators = column == "mix2" ? 2 : column == "mix3" ? 3 : 1;
  return cell;
}

rational sample_operand(rand_source &rng, number_type type, digit_bin bin) {
  const bin_range r = range_for(bin);
  if (type == number_type::integer_kind)
    return rational::from_int(rng.randint(r.lo, r.hi));
  const double v = rng.uniform(static_cast<double>(r.lo),
                               static_cast<double>(r.hi));
  // Round half-away-from-zero to 3 decimals; operands are positive.
  const auto scaled = static_cast<std::int64_t>(v * 1000.0 + 0.5);
  return rational::from_scaled(scaled, 1000);
}

rational eval_expression(const std::vector<rational> &operands,
                         const std::vector<char> &ops) {
  if (operands.size() != ops.size() + 1)
    throw config_error("eval_expression: need n_ops + 1 operands");
  // First pass: fold * and / runs. Second pass: fold + and -.
  std::vector<rational> terms;
  std::vector<char> term_ops;
  rational cur = operands[0];
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const char op = ops[i];
    if (op == '*' || op == '/') {
      if (op == '/' && operands[i + 1].is_zero())
        throw numeric_error("division by zero operand");
      cur = apply_op(cur, op, operands[i + 1]);
    } else {
      terms.push_back(cur);
      term_ops.push_back(op);
      cur = operands[i + 1];
    }
  }
  terms.push_back(cur);
  rational acc = terms[0];
  for (std::size_t i = 0; i < term_ops.size(); ++i)
    acc = apply_op(acc, term_ops[i], terms[i + 1]);
  return acc;
}

std::string render_operand(const rational &value, number_type type) {
  if (type == number_type::integer_kind)
    return render_integer(value);
  return render_decimal3(value);
}

std::string render_answer(const rational &value, bool integer_rendering) {
  if (integer_rendering)
    return render_integer(value);
  return render_decimal3(value);
}

built_expression build_and_eval_expression(rand_source &rng,
                                           const expression_spec &cell) {
  for (int attempt = 0; attempt < k_max_resample; ++attempt) {
    std::vector<char> ops(static_cast<std::size_t>(cell.n_operators));
    for (auto &op : ops)
      op = cell.operator_set[static_cast<std::size_t>(rng.randint(
          0, static_cast<std::int64_t>(cell.operator_set.size()) - 1))];
    std::vector<rational> operands(ops.size() + 1);
    for (auto &v : operands)
      v = sample_operand(rng, cell.type, cell.bin);

    rational value;
    try {
      value = eval_expression(operands, ops);
    } catch (const numeric_error &) {
      continue; // zero divisor: full resample
    }

    built_expression out;
    out.uses_division =
        std::find(ops.begin(), ops.end(), '/') != ops.end();
    const bool integer_rendering =
        cell.type == number_type::integer_kind && !out.uses_division;
    std::ostringstream text;
    for (std::size_t i = 0; i < operands.size(); ++i) {
      if (i > 0)
        text << " " << ops[i - 1] << " ";
      text << render_operand(operands[i], cell.type);
    }
    out.text = text.str();
    out.value = value;
    out.rendered = render_answer(value, integer_rendering);
    return out;
  }
  throw resample_error("expression resampling exhausted after " +
                       std::to_string(k_max_resample) + " attempts");
}

std::array<std::string, 3> make_distractors(const rational &answer,
                                            bool integer_rendering,
                                            rand_source &rng,
                                            double delta_max) {
  const std::string answer_text = render_answer(answer, integer_rendering);
  std::array<std::string, 3> out;
  std::size_t filled = 0;
  const std::int64_t int_span = static_cast<std::int64_t>(delta_max);
  for (int attempt = 0; attempt < k_max_resample && filled < 3; ++attempt) {
    rational delta;
    if (integer_rendering) {
      std::int64_t d = rng.randint(-int_span, int_span);
      if (d == 0)
        continue;
      delta = rational::from_int(d);
    } else {
      const double raw = rng.uniform(-delta_max, delta_max);
      const auto scaled = static_cast<std::int64_t>(
          raw >= 0 ? raw * 1000.0 + 0.5 : raw * 1000.0 - 0.5);
      if (std::abs(scaled) < 1) // |delta| >= 0.001 at 3-decimal resolution
        continue;
      delta = rational::from_scaled(scaled, 1000);
    }
    const std::string text =
        render_answer(answer + delta, integer_rendering);
    if (text == answer_text)
      continue;
    bool dup = false;
    for (std::size_t i = 0; i < filled; ++i)
      dup = dup || out[i] == text;
    if (dup)
      continue;
    out[filled++] = text;
  }
  if (filled < 3)
    throw resample_error("distractor resampling exhausted");
  return out;
}

probe_dataset gen_arithmetic(const arithmetic_spec &spec) {
  if (spec.count_per_cell < 1)
    throw config_error("count_per_cell must be >= 1");
  if (!(spec.delta_max > 0.0))
    throw config_error("delta_max must be positive");

  probe_dataset ds;
  ds.task = "arith";
  ds.template_id = "arithmetic";
  {
    std::ostringstream prov;
    prov << "gen_arithmetic seed=" << spec.seed
         << " count_per_cell=" << spec.count_per_cell
         << " delta_max=" << spec.delta_max;
    ds.provenance = prov.str();
  }

  mt19937_source rng(splitmix64(spec.seed));
  for (number_type type : spec.types) {
    for (digit_bin bin : spec.bins) {
      for (const std::string &column : spec.columns) {
        const expression_spec cell = make_cell(type, bin, column);
        const char *type_label =
            type == number_type::integer_kind ? "int" : "float";
        for (std::size_t i = 0; i < spec.count_per_cell; ++i) {
          const built_expression expr = build_and_eval_expression(rng, cell);
          const bool integer_rendering =
              type == number_type::integer_kind && !expr.uses_division;
          const auto distractors =
              make_distractors(expr.value, integer_rendering, rng,
                               spec.delta_max);

          probe_item item;
          char idx[8];
          std::snprintf(idx, sizeof idx, "%04zu", i);
          item.id = std::string("arith_") + type_label + "-" +
                    bin_label(bin) + "-" + column + "-" + idx;
          item.task = type == number_type::integer_kind
                          ? probe_task::arith_int
                          : probe_task::arith_float;
          item.question = expr.text + " = ?";
          item.options = {expr.rendered, distractors[0], distractors[1],
                          distractors[2]};
          // Uniform Fisher-Yates permutation of the four options.
          std::array<std::size_t, 4> order = {0, 1, 2, 3};
          for (std::size_t j = 3; j > 0; --j) {
            const auto pick = static_cast<std::size_t>(
                rng.randint(0, static_cast<std::int64_t>(j)));
            std::swap(order[j], order[pick]);
          }
          std::vector<std::string> permuted(4);
          for (std::size_t j = 0; j < 4; ++j) {
            permuted[j] = item.options[order[j]];
            if (order[j] == 0)
              item.correct = {j};
          }
          item.options = std::move(permuted);
          item.language = "en";
          ds.items.push_back(std::move(item));
        }
      }
    }
  }
  return ds;
}

namespace {

bool task_matches_family(probe_task task, const std::string &family) {
  if (family == "arith")
    return task == probe_task::arith_int || task == probe_task::arith_float;
  return task_to_string(task) == family;
}

const std::set<std::string> k_languages = {"en", "es", "fr", "zh", "th"};

probe_item parse_item_line(const std::string &line, int line_no) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const ordered_json::exception &e) {
    throw parse_error("line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!j.is_object())
    throw parse_error("line " + std::to_string(line_no) +
                      ": record is not an object");
  static const std::set<std::string> expected = {
      "id", "task", "context", "question", "options",
      "correct", "language", "n_steps"};
  for (const auto &[key, _] : j.items())
    if (!expected.count(key))
      throw parse_error("line " + std::to_string(line_no) +
                        ": unexpected field: " + key);
  for (const auto &key : expected)
    if (!j.contains(key))
      throw parse_error("line " + std::to_string(line_no) +
                        ": missing field: " + key);

  probe_item item;
  try {
    item.id = j.at("id").get<std::string>();
    item.task = task_from_string(j.at("task").get<std::string>());
    if (!j.at("context").is_null())
      item.context = j.at("context").get<std::string>();
    item.question = j.at("question").get<std::string>();
    item.options = j.at("options").get<std::vector<std::string>>();
    item.correct = j.at("correct").get<std::vector<std::size_t>>();
    item.language = j.at("language").get<std::string>();
    if (!j.at("n_steps").is_null())
      item.n_steps = j.at("n_steps").get<int>();
  } catch (const ordered_json::exception &e) {
    throw parse_error("line " + std::to_string(line_no) + ": " + e.what());
  } catch (const validation_error &e) {
    throw parse_error("line " + std::to_string(line_no) + ": " + e.what());
  }
  return item;
}

void validate_item(probe_item &item, int line_no) {
  const std::string where =
      "line " + std::to_string(line_no) + " (" + item.id + "): ";
  if (item.id.empty() ||
      item.id.find_first_of(",\n\r") != std::string::npos)
    throw validation_error(where +
                           "item ids must be non-empty and csv-safe");
  if (item.options.size() < 2)
    throw validation_error(where + "need at least two options");
  if (item.correct.empty())
    throw validation_error(where + "empty correct set");
  std::set<std::size_t> correct_set(item.correct.begin(), item.correct.end());
  if (correct_set.size() != item.correct.size())
    throw validation_error(where + "duplicate correct indices");
  // `correct` is a set of indices; keep it in canonical sorted order.
  item.correct.assign(correct_set.begin(), correct_set.end());
  for (std::size_t c : item.correct)
    if (c >= item.options.size())
      throw validation_error(where + "correct index out of range: " +
                             std::to_string(c));
  std::set<std::string> texts(item.options.begin(), item.options.end());
  if (texts.size() != item.options.size())
    throw validation_error(where + "duplicate option strings");
  if (!k_languages.count(item.language))
    throw validation_error(where + "unknown language tag: " + item.language);
  if (item.task != probe_task::truthfulqa && item.correct.size() != 1)
    throw validation_error(where +
                           "only truthfulqa items may have several answers");
  if (item.task == probe_task::reclor) {
    if (item.options.size() != 4)
      throw validation_error(where + "reclor items need exactly 4 options");
    if (!item.context)
      throw validation_error(where + "reclor items need a context");
  }
  if (item.task == probe_task::lama &&
      (item.options.size() < 9 || item.options.size() > 10))
    std::fprintf(stderr,
                 "layerlens: note: lama item %s has %zu options "
                 "(9-10 typical)\n",
                 item.id.c_str(), item.options.size());
}

std::string template_for_family(const std::string &family) {
  if (family == "arith")
    return "arithmetic";
  if (family == "reclor")
    return "logical";
  if (family == "mps_cal" || family == "mps_rea" || family == "xmps_cal" ||
      family == "xmps_rea")
    return "mps";
  return family; // truthfulqa, lama
}

} // namespace

probe_dataset ingest_jsonl(const std::filesystem::path &path,
                           const std::string &task_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw io_error("cannot open dataset: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  probe_dataset ds;
  ds.task = task_tag;
  ds.template_id = template_for_family(task_tag);
  ds.provenance = path.filename().string() + " fnv1a:" +
                  hash_to_hex(fnv1a64(content));

  std::istringstream lines(content);
  std::string line;
  int line_no = 0;
  std::set<std::string> ids;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line[0] == '#')
      continue;
    probe_item item = parse_item_line(line, line_no);
    validate_item(item, line_no);
    if (!task_matches_family(item.task, task_tag))
      throw validation_error("line " + std::to_string(line_no) + ": task " +
                             task_to_string(item.task) +
                             " does not belong to dataset tag " + task_tag);
    if (!ids.insert(item.id).second)
      throw validation_error("line " + std::to_string(line_no) +
                             ": duplicate item id: " + item.id);
    ds.items.push_back(std::move(item));
  }
  if (ds.items.empty())
    throw validation_error("dataset has no items: " + path.string());
  return ds;
}

void save_jsonl(const probe_dataset &ds, const std::filesystem::path &path,
                const std::string &manifest_comment) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw io_error("cannot open for writing: " + path.string());
  if (!manifest_comment.empty())
    out << "# " << manifest_comment << "\n";
  for (const auto &item : ds.items) {
    ordered_json j;
    j["id"] = item.id;
    j["task"] = task_to_string(item.task);
    j["context"] = item.context ? ordered_json(*item.context)
                                : ordered_json(nullptr);
    j["question"] = item.question;
    j["options"] = item.options;
    j["correct"] = item.correct;
    j["language"] = item.language;
    j["n_steps"] =
        item.n_steps ? ordered_json(*item.n_steps) : ordered_json(nullptr);
    out << j.dump() << "\n";
  }
  if (!out)
    throw io_error("write failed: " + path.string());
}

arithmetic_spec parse_gen_spec(const std::string &text) {
  arithmetic_spec spec;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string &msg) {
    throw config_error("gen spec line " + std::to_string(line_no) + ": " +
                       msg);
  };
  auto split_csv = [](const std::string &s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const auto a = tok.find_first_not_of(" \t");
      const auto b = tok.find_last_not_of(" \t");
      out.push_back(a == std::string::npos ? "" : tok.substr(a, b - a + 1));
    }
    return out;
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto a = line.find_first_not_of(" \t\r\n");
    if (a == std::string::npos || line[a] == '#')
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("expected key = value");
    const auto trim = [](std::string s) {
      const auto x = s.find_first_not_of(" \t\r\n");
      const auto y = s.find_last_not_of(" \t\r\n");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "count_per_cell") {
      try {
        spec.count_per_cell = std::stoul(value);
      } catch (const std::exception &) {
        fail("bad count: " + value);
      }
    } else if (key == "delta_max") {
      try {
        spec.delta_max = std::stod(value);
      } catch (const std::exception &) {
        fail("bad number: " + value);
      }
    } else if (key == "seed") {
      try {
        spec.seed = std::stoull(value);
      } catch (const std::exception &) {
        fail("bad seed: " + value);
      }
    } else if (key == "types") {
      spec.types.clear();
      for (const auto &t : split_csv(value)) {
        if (t == "int")
          spec.types.push_back(number_type::integer_kind);
        else if (t == "float")
          spec.types.push_back(number_type::float3);
        else
          fail("invalid type token: " + t);
      }
      if (spec.types.empty())
        fail("types list is empty");
    } else if (key == "bins") {
      spec.bins.clear();
      for (const auto &b : split_csv(value)) {
        if (b == "12")
          spec.bins.push_back(digit_bin::b12);
        else if (b == "34")
          spec.bins.push_back(digit_bin::b34);
        else if (b == "56")
          spec.bins.push_back(digit_bin::b56);
        else
          fail("invalid bin token: " + b);
      }
      if (spec.bins.empty())
        fail("bins list is empty");
    } else if (key == "columns") {
      spec.columns.clear();
      for (const auto &c : split_csv(value)) {
        if (c == "add" || c == "sub" || c == "mul" || c == "div" ||
            c == "mix2" || c == "mix3")
          spec.columns.push_back(c);
        else
          fail("invalid operator token: " + c);
      }
      if (spec.columns.empty())
        fail("columns list is empty");
    } else {
      fail("unknown key: " + key);
    }
  }
  return spec;
}

std::map<std::string, std::size_t> per_cell_counts(const probe_dataset &ds) {
  std::map<std::string, std::size_t> counts;
  for (const auto &item : ds.items) {
    // id layout: arith_<type>-<bin>-<column>-<index>
    const auto last_dash = item.id.rfind('-');
    if (last_dash == std::string::npos)
      continue;
    counts[item.id.substr(0, last_dash)]++;
  }
  return counts;
}

} // namespace layerlens
