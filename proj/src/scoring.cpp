#include "layerlens/scoring.hpp"

#include "layerlens/errors.hpp"
#include "layerlens/transformer.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace layerlens {

normalization normalization_from_string(const std::string &s) {
  if (s == "sum")
    return normalization::sum;
  if (s == "mean")
    return normalization::mean;
  throw config_error("unknown normalization: " + s);
}

tie_break tie_break_from_string(const std::string &s) {
  if (s == "lowest_index")
    return tie_break::lowest_index;
  if (s == "seeded_random")
    return tie_break::seeded_random;
  throw config_error("unknown tie-break: " + s);
}

std::string to_string(normalization n) {
  return n == normalization::sum ? "sum" : "mean";
}

std::string to_string(tie_break t) {
  return t == tie_break::lowest_index ? "lowest_index" : "seeded_random";
}

std::vector<std::size_t> parse_layers(const std::string &text,
                                      std::size_t n_layers) {
  std::vector<std::size_t> out;
  if (text == "all") {
    for (std::size_t l = 1; l <= n_layers; ++l)
      out.push_back(l);
    return out;
  }
  if (text == "last")
    return {n_layers};
  std::istringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "last") {
      out.push_back(n_layers);
      continue;
    }
    std::size_t v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      throw config_error("bad layer token: " + tok);
    if (v < 1 || v > n_layers)
      throw config_error("layer out of range: " + tok);
    out.push_back(v);
  }
  if (out.empty())
    throw config_error("empty layer list");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

// Option continuation ids: encode prompt and prompt+option separately and
// take the suffix. BPE can re-merge across the seam; fall back to the
// longest common prefix and log it.
struct continuation {
  std::vector<int> full; // prompt + option ids
  std::size_t prompt_len = 0;
};

continuation split_continuation(const tokenizer &tok,
                                const std::string &prompt,
                                const std::string &option) {
  continuation c;
  const std::vector<int> p = tok.encode(prompt);
  c.full = tok.encode(prompt + option);
  c.prompt_len = p.size();
  const bool clean_prefix =
      c.full.size() >= p.size() &&
      std::equal(p.begin(), p.end(), c.full.begin());
  if (!clean_prefix) {
    std::size_t lcp = 0;
    while (lcp < p.size() && lcp < c.full.size() && p[lcp] == c.full[lcp])
      ++lcp;
    if (lcp == 0)
      throw scoring_error("prompt/option encodings share no prefix");
    std::fprintf(stderr,
                 "layerlens: note: tokenizer merged across the prompt/option "
                 "seam; scoring %zu continuation tokens from the common "
                 "prefix\n",
                 c.full.size() - lcp);
    c.prompt_len = lcp;
  }
  if (c.full.size() == c.prompt_len)
    throw scoring_error("empty option continuation");
  return c;
}

option_score score_from_lens(const forward_result &res,
                             const model_bundle &bundle,
                             const continuation &c, std::size_t layer,
                             bool lens_final_norm) {
  // Sequence fed to the model is [bos] + full; option token j sits at
  // absolute index 1 + prompt_len + j and is predicted from the row
  // before it.
  const std::size_t n_option = c.full.size() - c.prompt_len;
  option_score s;
  s.token_count = n_option;
  const bool final_layer = layer == bundle.config.n_layers;
  for (std::size_t j = 0; j < n_option; ++j) {
    const std::size_t row = c.prompt_len + j; // index of preceding position
    const int target = c.full[c.prompt_len + j];
    std::vector<float> lp;
    if (final_layer && lens_final_norm)
      lp = log_softmax(res.logits_row(row));
    else
      lp = logit_lens(bundle, res.hidden_row(layer, row), lens_final_norm);
    s.sum_logprob += static_cast<double>(lp[static_cast<std::size_t>(target)]);
  }
  s.mean_logprob = s.sum_logprob / static_cast<double>(s.token_count);
  return s;
}

} // namespace

std::map<std::size_t, option_score>
option_logprob_layers(const model_bundle &bundle, const tokenizer &tok,
                      const std::string &prompt, const std::string &option,
                      const std::vector<std::size_t> &layers,
                      bool lens_final_norm) {
  const continuation c = split_continuation(tok, prompt, option);

  forward_request req;
  req.tokens.reserve(c.full.size() + 1);
  req.tokens.push_back(tok.bos_id());
  req.tokens.insert(req.tokens.end(), c.full.begin(), c.full.end());
  req.want_hidden = true;
  for (std::size_t l : layers)
    if (l != bundle.config.n_layers || !lens_final_norm)
      req.tap_layers.insert(l);
  // Raw-residual readout needs the tap even at the final layer.
  const forward_result res = forward(bundle, req);

  std::map<std::size_t, option_score> out;
  for (std::size_t l : layers)
    out[l] = score_from_lens(res, bundle, c, l, lens_final_norm);
  return out;
}

option_score option_logprob(const model_bundle &bundle, const tokenizer &tok,
                            const std::string &prompt,
                            const std::string &option, std::size_t layer,
                            bool lens_final_norm) {
  auto scores = option_logprob_layers(bundle, tok, prompt, option, {layer},
                                      lens_final_norm);
  return scores.at(layer);
}

std::size_t choose_index(const std::vector<option_score> &scores,
                         const eval_config &cfg, const std::string &item_id,
                         std::size_t layer) {
  if (scores.empty())
    throw scoring_error("no option scores for item " + item_id);
  auto value = [&](const option_score &s) {
    return cfg.norm == normalization::sum ? s.sum_logprob : s.mean_logprob;
  };
  double best = value(scores[0]);
  for (const auto &s : scores)
    best = std::max(best, value(s));
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (value(scores[i]) == best)
      tied.push_back(i);
  if (tied.size() == 1 || cfg.tie == tie_break::lowest_index)
    return tied.front();
  std::mt19937_64 engine(splitmix64(cfg.seed ^ fnv1a64(item_id) ^
                                    (0x9e3779b9ULL * (layer + 1))));
  return tied[engine() % tied.size()];
}

std::pair<std::size_t, std::vector<option_score>>
score_item(const model_bundle &bundle, const tokenizer &tok,
           const prompt_library &lib, const probe_item &item,
           const eval_config &cfg, std::size_t layer) {
  std::vector<option_score> scores;
  scores.reserve(item.options.size());
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    const auto [prompt, option] = assemble_prompt(lib, item, i);
    option_score s = option_logprob(bundle, tok, prompt, option, layer,
                                    cfg.lens_final_norm);
    s.option_index = i;
    scores.push_back(s);
  }
  return {choose_index(scores, cfg, item.id, layer), std::move(scores)};
}

double accuracy(const std::vector<std::size_t> &chosen,
                const std::vector<const probe_item *> &items) {
  if (chosen.empty() || chosen.size() != items.size())
    throw metric_error("accuracy over an empty or mismatched result set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto &correct = items[i]->correct;
    if (std::find(correct.begin(), correct.end(), chosen[i]) != correct.end())
      ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(chosen.size());
}

std::pair<double, double>
truthfulqa_metrics(const std::vector<option_score> &scores,
                   const std::vector<std::size_t> &correct,
                   normalization norm) {
  if (correct.empty())
    throw metric_error("truthfulqa item without correct answers");
  auto value = [&](const option_score &s) {
    return norm == normalization::sum ? s.sum_logprob : s.mean_logprob;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (value(scores[i]) > value(scores[best]))
      best = i;
  const bool best_true =
      std::find(correct.begin(), correct.end(), best) != correct.end();

  // log-sum-exp over all and over true options.
  double mx = value(scores[0]);
  for (const auto &s : scores)
    mx = std::max(mx, value(s));
  double sum_all = 0.0, sum_true = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double e = std::exp(value(scores[i]) - mx);
    sum_all += e;
    if (std::find(correct.begin(), correct.end(), i) != correct.end())
      sum_true += e;
  }
  return {best_true ? 1.0 : 0.0, sum_true / sum_all};
}

std::vector<result_row> score_dataset(const model_bundle &bundle,
                                      const tokenizer &tok,
                                      const probe_dataset &ds,
                                      const prompt_library &lib,
                                      const eval_config &cfg) {
  if (cfg.layers.empty())
    throw config_error("eval config has no layers");

  struct job {
    std::size_t item_idx;
    std::size_t option_idx;
  };
  std::vector<job> jobs;
  for (std::size_t i = 0; i < ds.items.size(); ++i)
    for (std::size_t o = 0; o < ds.items[i].options.size(); ++o)
      jobs.push_back({i, o});

  std::vector<std::vector<result_row>> per_job(jobs.size());
  std::string failure;
  std::mutex failure_mutex;

  auto run_job = [&](std::size_t j) {
    const probe_item &item = ds.items[jobs[j].item_idx];
    const auto [prompt, option] =
        assemble_prompt(lib, item, jobs[j].option_idx);
    const auto by_layer = option_logprob_layers(
        bundle, tok, prompt, option, cfg.layers, cfg.lens_final_norm);
    auto &rows = per_job[j];
    rows.reserve(by_layer.size());
    for (const auto &[layer, s] : by_layer)
      rows.push_back({item.id, jobs[j].option_idx, layer, s.sum_logprob,
                      s.token_count});
  };

  const int threads = std::max(1, cfg.threads);
  if (threads == 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      try {
        run_job(j);
      } catch (const error &e) {
        throw scoring_error("item " + ds.items[jobs[j].item_idx].id + ": " +
                            e.what());
      }
    }
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          const std::size_t j = next.fetch_add(1);
          if (j >= jobs.size())
            return;
          try {
            run_job(j);
          } catch (const error &e) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (failure.empty())
              failure = "item " + ds.items[jobs[j].item_idx].id + ": " +
                        e.what();
          }
        }
      });
    }
    for (auto &th : pool)
      th.join();
    if (!failure.empty())
      throw scoring_error(failure);
  }

  // Deterministic reduction order: jobs are already (item, option) ordered.
  std::vector<result_row> rows;
  rows.reserve(jobs.size() * cfg.layers.size());
  for (auto &r : per_job)
    rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

namespace {

struct item_layer_scores {
  std::vector<option_score> scores; // indexed by option
};

} // namespace

layer_scores aggregate_results(const std::vector<result_row> &rows,
                               const probe_dataset &ds,
                               const eval_config &cfg) {
  if (rows.empty())
    throw metric_error("no result rows to aggregate");

  std::map<std::string, const probe_item *> by_id;
  for (const auto &item : ds.items)
    by_id[item.id] = &item;

  // Sorted fold: (item id, option, layer).
  std::vector<const result_row *> sorted;
  sorted.reserve(rows.size());
  for (const auto &r : rows)
    sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const result_row *a, const result_row *b) {
              if (a->item_id != b->item_id)
                return a->item_id < b->item_id;
              if (a->option_index != b->option_index)
                return a->option_index < b->option_index;
              return a->layer < b->layer;
            });

  // layer -> item id -> option scores
  std::map<std::size_t, std::map<std::string, item_layer_scores>> table;
  for (const result_row *r : sorted) {
    const auto it = by_id.find(r->item_id);
    if (it == by_id.end())
      throw validation_error("results reference unknown item: " + r->item_id);
    if (r->option_index >= it->second->options.size())
      throw validation_error("results option index out of range for item " +
                             r->item_id);
    auto &entry = table[r->layer][r->item_id];
    if (entry.scores.empty())
      entry.scores.resize(it->second->options.size());
    option_score s;
    s.option_index = r->option_index;
    s.sum_logprob = r->sum_logprob;
    s.token_count = r->token_count;
    if (s.token_count == 0)
      throw validation_error("zero token count in results for item " +
                             r->item_id);
    s.mean_logprob = s.sum_logprob / static_cast<double>(s.token_count);
    entry.scores[r->option_index] = s;
  }

  layer_scores out;
  out.task = ds.task;
  for (auto &[layer, items] : table) {
    std::vector<const probe_item *> item_ptrs;
    std::vector<std::size_t> chosen;
    std::vector<std::pair<double, double>> mc; // (mc1, mc3)
    for (auto &[id, entry] : items) {
      const probe_item *item = by_id.at(id);
      for (std::size_t o = 0; o < entry.scores.size(); ++o)
        if (entry.scores[o].token_count == 0)
          throw validation_error("missing option " + std::to_string(o) +
                                 " in results for item " + id);
      item_ptrs.push_back(item);
      chosen.push_back(choose_index(entry.scores, cfg, id, layer));
      if (item->task == probe_task::truthfulqa)
        mc.push_back(truthfulqa_metrics(entry.scores, item->correct,
                                        cfg.norm));
    }

    layer_metrics m;
    m.items = item_ptrs.size();
    m.accuracy = accuracy(chosen, item_ptrs);
    if (!mc.empty()) {
      m.has_mc = true;
      for (const auto &[mc1, mc3] : mc) {
        m.mc1 += mc1;
        m.mc3 += mc3;
      }
      m.mc1 /= static_cast<double>(mc.size());
      m.mc3 /= static_cast<double>(mc.size());
    }

    // Task-qualified accuracies when the dataset mixes item tasks.
    std::map<std::string, std::pair<std::size_t, std::size_t>> split;
    for (std::size_t i = 0; i < item_ptrs.size(); ++i) {
      auto &slot = split[task_to_string(item_ptrs[i]->task)];
      ++slot.second;
      const auto &correct = item_ptrs[i]->correct;
      if (std::find(correct.begin(), correct.end(), chosen[i]) !=
          correct.end())
        ++slot.first;
    }
    if (split.size() > 1)
      for (const auto &[task, counts] : split)
        m.task_split[task] = static_cast<double>(counts.first) /
                             static_cast<double>(counts.second);

    m.steps = steps_breakdown(chosen, item_ptrs);
    out.rows[layer] = std::move(m);
  }
  return out;
}

layer_scores layer_sweep(const model_bundle &bundle, const tokenizer &tok,
                         const probe_dataset &ds, const prompt_library &lib,
                         const eval_config &cfg) {
  return aggregate_results(score_dataset(bundle, tok, ds, lib, cfg), ds, cfg);
}

std::map<int, std::pair<double, std::size_t>>
steps_breakdown(const std::vector<std::size_t> &chosen,
                const std::vector<const probe_item *> &items,
                std::size_t *excluded) {
  std::map<int, std::pair<std::size_t, std::size_t>> buckets; // hits, total
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i]->n_steps) {
      ++skipped;
      continue;
    }
    auto &b = buckets[*items[i]->n_steps];
    ++b.second;
    const auto &correct = items[i]->correct;
    if (std::find(correct.begin(), correct.end(), chosen[i]) != correct.end())
      ++b.first;
  }
  if (excluded)
    *excluded = skipped;
  std::map<int, std::pair<double, std::size_t>> out;
  for (const auto &[steps, b] : buckets)
    out[steps] = {static_cast<double>(b.first) /
                      static_cast<double>(b.second),
                  b.second};
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

void write_results_csv(const std::filesystem::path &path,
                       const std::vector<result_row> &rows,
                       const std::string &manifest_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw io_error("cannot open for writing: " + path.string());
  out << "# manifest: " << manifest_hash << "\n";
  out << "item_id,option_index,layer,sum_logprob,token_count\n";
  for (const auto &r : rows)
    out << r.item_id << "," << r.option_index << "," << r.layer << ","
        << format_double(r.sum_logprob) << "," << r.token_count << "\n";
  if (!out)
    throw io_error("write failed: " + path.string());
}

std::vector<result_row> read_results_csv(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw io_error("cannot open results file: " + path.string());
  std::vector<result_row> rows;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#')
      continue;
    if (!header_seen) {
      if (line != "item_id,option_index,layer,sum_logprob,token_count")
        throw schema_error("results header mismatch at line " +
                           std::to_string(line_no));
      header_seen = true;
      continue;
    }
    std::istringstream ss(line);
    std::string field;
    result_row r;
    try {
      std::getline(ss, r.item_id, ',');
      std::getline(ss, field, ',');
      r.option_index = std::stoul(field);
      std::getline(ss, field, ',');
      r.layer = std::stoul(field);
      std::getline(ss, field, ',');
      r.sum_logprob = std::stod(field);
      std::getline(ss, field, ',');
      r.token_count = std::stoul(field);
    } catch (const std::exception &) {
      throw parse_error("results line " + std::to_string(line_no) +
                        ": bad record");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_metrics_csv(const std::filesystem::path &path,
                       const layer_scores &scores,
                       const metrics_metadata &meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw io_error("cannot open for writing: " + path.string());
  out << "# manifest: " << meta.manifest_hash << "\n";
  out << "# task: " << meta.task << "\n";
  out << "# model: " << meta.model_label << "\n";
  out << "# normalization: " << meta.normalization_name << "\n";

  // Fixed header for the file: union of columns over all rows.
  std::set<std::string> split_cols;
  std::set<int> step_cols;
  bool has_mc = false;
  for (const auto &[layer, m] : scores.rows) {
    for (const auto &[task, _] : m.task_split)
      split_cols.insert(task);
    for (const auto &[steps, _] : m.steps)
      step_cols.insert(steps);
    has_mc = has_mc || m.has_mc;
  }

  out << "layer,items,accuracy";
  for (const auto &c : split_cols)
    out << ",acc_" << c;
  if (has_mc)
    out << ",mc1,mc3";
  for (int s : step_cols)
    out << ",steps" << s << "_acc,steps" << s << "_n";
  out << "\n";

  for (const auto &[layer, m] : scores.rows) {
    out << layer << "," << m.items << "," << format_double(m.accuracy);
    for (const auto &c : split_cols) {
      const auto it = m.task_split.find(c);
      out << ",";
      if (it != m.task_split.end())
        out << format_double(it->second);
    }
    if (has_mc)
      out << "," << format_double(m.mc1) << "," << format_double(m.mc3);
    for (int s : step_cols) {
      const auto it = m.steps.find(s);
      out << ",";
      if (it != m.steps.end())
        out << format_double(it->second.first) << "," << it->second.second;
      else
        out << ","; // bucket absent at this layer
    }
    out << "\n";
  }
  if (!out)
    throw io_error("write failed: " + path.string());
}

layer_scores read_metrics_csv(const std::filesystem::path &path,
                              metrics_metadata *meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw io_error("cannot open metrics file: " + path.string());
  layer_scores out;
  metrics_metadata md;
  std::vector<std::string> header;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    if (line[0] == '#') {
      const auto colon = line.find(": ");
      if (colon != std::string::npos) {
        const std::string key = line.substr(2, colon - 2);
        const std::string value = line.substr(colon + 2);
        if (key == "manifest")
          md.manifest_hash = value;
        else if (key == "task")
          md.task = value;
        else if (key == "model")
          md.model_label = value;
        else if (key == "normalization")
          md.normalization_name = value;
      }
      continue;
    }
    std::vector<std::string> fields;
    {
      std::istringstream ss(line);
      std::string f;
      while (std::getline(ss, f, ','))
        fields.push_back(f);
      if (!line.empty() && line.back() == ',')
        fields.push_back("");
    }
    if (header.empty()) {
      header = fields;
      if (header.size() < 3 || header[0] != "layer" ||
          header[1] != "items" || header[2] != "accuracy")
        throw schema_error("metrics header mismatch in " + path.string());
      continue;
    }
    if (fields.size() != header.size())
      throw schema_error("metrics line " + std::to_string(line_no) +
                         ": column count mismatch");
    layer_metrics m;
    std::size_t layer = 0;
    try {
      layer = std::stoul(fields[0]);
      m.items = std::stoul(fields[1]);
      m.accuracy = std::stod(fields[2]);
      for (std::size_t i = 3; i < fields.size(); ++i) {
        const std::string &col = header[i];
        if (fields[i].empty())
          continue;
        if (col.rfind("acc_", 0) == 0) {
          m.task_split[col.substr(4)] = std::stod(fields[i]);
        } else if (col == "mc1") {
          m.mc1 = std::stod(fields[i]);
          m.has_mc = true;
        } else if (col == "mc3") {
          m.mc3 = std::stod(fields[i]);
          m.has_mc = true;
        } else if (col.rfind("steps", 0) == 0) {
          const auto us = col.rfind('_');
          const int steps = std::stoi(col.substr(5, us - 5));
          if (col.substr(us + 1) == "acc")
            m.steps[steps].first = std::stod(fields[i]);
          else
            m.steps[steps].second = std::stoul(fields[i]);
        } else {
          throw schema_error("unknown metrics column: " + col);
        }
      }
    } catch (const schema_error &) {
      throw;
    } catch (const std::exception &) {
      throw parse_error("metrics line " + std::to_string(line_no) +
                        ": bad record");
    }
    out.rows[layer] = std::move(m);
  }
  if (header.empty())
    throw schema_error("metrics file has no header: " + path.string());
  out.task = md.task;
  if (meta)
    *meta = md;
  return out;
}

} // namespace layerlens
