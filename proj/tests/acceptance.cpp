// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Returns the failure count.

#include "layerlens/errors.hpp"
#include "layerlens/fixtures.hpp"
#include "layerlens/report.hpp"
#include "layerlens/scoring.hpp"
#include "layerlens/transformer.hpp"
#include "layerlens/tsne.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <unistd.h>

using namespace layerlens;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report_criterion(int number, const std::string &what, bool pass,
                      const std::string &detail = "") {
  std::printf("criterion %2d: %s — %s%s%s\n", number, pass ? "PASS" : "FAIL",
              what.c_str(), detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  if (!pass)
    ++failures;
}

void report_skip(int number, const std::string &what, const std::string &why) {
  std::printf("criterion %2d: SKIP — %s — %s\n", number, what.c_str(),
              why.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

struct scratch_dir {
  fs::path path;
  explicit scratch_dir(const char *tag) {
    path = fs::temp_directory_path() /
           (std::string("layerlens_accept_") + tag + "_" +
            std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~scratch_dir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path &p, const std::string &content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

rational rat(std::int64_t n, std::int64_t d = 1) {
  return rational::from_scaled(n, d);
}

rational parse_rat(const std::string &tok) {
  const auto dot = tok.find('.');
  if (dot == std::string::npos)
    return rat(std::stoll(tok));
  std::string digits = tok.substr(0, dot) + tok.substr(dot + 1);
  std::int64_t scale = 1;
  for (std::size_t i = dot + 1; i < tok.size(); ++i)
    scale *= 10;
  return rat(std::stoll(digits), scale);
}

rational eval_str(const std::string &text) {
  std::vector<rational> operands;
  std::vector<char> ops;
  std::istringstream ss(text);
  std::string tok;
  bool operand = true;
  while (ss >> tok) {
    if (operand)
      operands.push_back(parse_rat(tok));
    else
      ops.push_back(tok[0]);
    operand = !operand;
  }
  return eval_expression(operands, ops);
}

// Independent per-prefix scorer (own softmax, one forward per prefix).
double per_prefix_oracle(const model_bundle &b, const tokenizer &tok,
                         const std::string &prompt,
                         const std::string &option) {
  const std::vector<int> p = tok.encode(prompt);
  const std::vector<int> full = tok.encode(prompt + option);
  double total = 0.0;
  for (std::size_t t = p.size(); t < full.size(); ++t) {
    std::vector<int> prefix;
    prefix.push_back(tok.bos_id());
    prefix.insert(prefix.end(), full.begin(), full.begin() + t);
    forward_request req;
    req.tokens = prefix;
    const forward_result res = forward(b, req);
    const auto row = res.logits_row(res.seq_len - 1);
    double mx = row[0];
    for (float v : row)
      mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (float v : row)
      z += std::exp(static_cast<double>(v) - mx);
    total += static_cast<double>(row[static_cast<std::size_t>(full[t])]) -
             mx - std::log(z);
  }
  return total;
}

// Character-level BPE tokenizer with a 64-entry vocab for the scoring
// equivalence bundle.
tokenizer vocab64_tokenizer() {
  std::ostringstream vocab;
  int id = 0;
  vocab << id++ << "\t<s>\n";
  vocab << id++ << "\t</s>\n";
  const std::string chars = "abcdefghijklmnopqrstuvwxyz0123456789 :.\nQA,";
  for (char c : chars)
    vocab << id++ << "\t" << escape_token(std::string(1, c)) << "\n";
  vocab << id++ << "\tQ:\n";
  const std::string merges = "Q :\n";
  return load_bpe(vocab.str(), merges);
}

// ---- criteria ----

void criterion_1_generator() {
  const auto start = std::chrono::steady_clock::now();
  arithmetic_spec spec;
  spec.seed = 7;
  const probe_dataset ds = gen_arithmetic(spec);
  const double elapsed = seconds_since(start);

  bool pass = true;
  const auto counts = per_cell_counts(ds);
  pass = pass && counts.size() == 36;
  for (const auto &[cell, count] : counts)
    pass = pass && count == 200;
  std::size_t n_int = 0, n_float = 0;
  for (const auto &item : ds.items)
    (item.task == probe_task::arith_int ? n_int : n_float) += 1;
  pass = pass && n_int == 3600 && n_float == 3600 && ds.items.size() == 7200;

  // Distractor band, in exact arithmetic (values reach ~1e18 where a
  // double cannot resolve a +/-20 offset): re-derive the correct value
  // from the question text and check each distractor lies within
  // (0, 20.0005] of it (the 0.0005 covers the 3-decimal rendering).
  const rational band_hi = rat(200005, 10000);
  for (const auto &item : ds.items) {
    const std::string expr =
        item.question.substr(0, item.question.find(" = ?"));
    const rational truth = eval_str(expr);
    const std::set<std::string> distinct(item.options.begin(),
                                         item.options.end());
    pass = pass && distinct.size() == 4 && item.correct.size() == 1;
    for (std::size_t o = 0; o < item.options.size(); ++o) {
      if (o == item.correct.front())
        continue;
      rational delta = rational_from_decimal(item.options[o]) - truth;
      if (delta.num < 0)
        delta.num = -delta.num;
      const bool nonzero = !delta.is_zero();
      // |delta| <= band_hi  <=>  delta.num * band_hi.den <= band_hi.num * delta.den
      const bool within =
          delta.num * band_hi.den <= band_hi.num * delta.den;
      pass = pass && nonzero && within;
    }
  }
  pass = pass && elapsed < 5.0;
  char buf[176];
  std::snprintf(buf, sizeof buf,
                "36 cells x 200 = 7200 items (3600 per number type; see "
                "decisions ledger on the 3600/7200 reading), %.2fs",
                elapsed);
  report_criterion(1, "generator statistics", pass, buf);
}

void criterion_2_expression_oracle() {
  bool pass = true;
  pass = pass && render_answer(eval_str("2331 + 2693"), true) == "5024";
  pass = pass && render_answer(eval_str("109848 / 199"), false) == "552.0";
  pass = pass && render_answer(eval_str("7.682 + 28.894"), false) == "36.576";
  pass = pass && render_answer(eval_str("84 + 72 - 1 * 3"), true) == "153";
  pass = pass && render_answer(eval_str("9 + 7"), true) == "16";
  pass = pass && render_answer(eval_str("9 * 7"), true) == "63";
  pass = pass && render_answer(eval_str("9 - 3 * 6"), true) == "-9";
  pass = pass && eval_str("44 / 2 / 4 + 2") == rat(75, 10);
  pass = pass && render_answer(eval_str("44 / 2 / 4 + 2"), false) == "7.5";
  // The mixed-division exemplar: exact value is 306/77; its printed final
  // comes from the exemplar's own chain "2 + 1.974025974025974".
  pass = pass && eval_str("84 - 82 + 152 / 77") == (rat(306) / rat(77));
  pass = pass && shortest_double_string(
                     eval_str("2 + 1.974025974025974").to_double()) ==
                     "3.974025974025974";
  report_criterion(2, "expression oracle worked values", pass);
}

void criterion_3_scoring_equivalence() {
  model_config cfg;
  cfg.n_layers = 2;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.n_kv_heads = 2;
  cfg.d_ff = 64;
  cfg.vocab_size = 64;
  cfg.max_seq_len = 256;
  const model_bundle b = random_bundle(cfg, 404);
  const tokenizer tok = vocab64_tokenizer();

  mt19937_source rng(1234);
  bool pass = true;
  int pairs = 0;
  int chosen_matches = 0;
  int prompts = 0;
  while (pairs < 100) {
    std::string prompt = "Q: ";
    const auto plen = static_cast<std::size_t>(rng.randint(5, 24));
    for (std::size_t i = 0; i < plen; ++i)
      prompt.push_back(static_cast<char>(rng.randint('a', 'z')));
    prompt += "\nA: ";
    std::size_t best_fast = 0, best_slow = 0;
    double fast_best = -1e300, slow_best = -1e300;
    for (int o = 0; o < 4 && pairs < 100; ++o, ++pairs) {
      std::string option;
      const auto olen = static_cast<std::size_t>(rng.randint(1, 6));
      for (std::size_t i = 0; i < olen; ++i)
        option.push_back(static_cast<char>(rng.randint('0', '9')));
      const auto fast = option_logprob(b, tok, prompt, option, cfg.n_layers);
      const double slow = per_prefix_oracle(b, tok, prompt, option);
      pass = pass && std::abs(fast.sum_logprob - slow) <=
                         1e-5 * std::max(1.0, std::abs(slow));
      if (fast.sum_logprob > fast_best) {
        fast_best = fast.sum_logprob;
        best_fast = static_cast<std::size_t>(o);
      }
      if (slow > slow_best) {
        slow_best = slow;
        best_slow = static_cast<std::size_t>(o);
      }
    }
    ++prompts;
    chosen_matches += best_fast == best_slow ? 1 : 0;
  }
  pass = pass && chosen_matches == prompts;
  char buf[96];
  std::snprintf(buf, sizeof buf, "100 pairs, %d/%d chosen indices identical",
                chosen_matches, prompts);
  report_criterion(3, "one-pass scoring vs per-prefix oracle (1e-5)", pass,
                   buf);
}

void criterion_4_lens_identity() {
  const model_config cfg = fixture_config(4, 32, 320);
  const model_bundle b = random_bundle(cfg, 7);
  const tokenizer tok = byte_fallback_tokenizer(cfg.vocab_size);
  prompt_library lib;
  lib.blocks["arithmetic"] = "Answer.";

  arithmetic_spec spec;
  spec.seed = 5;
  spec.count_per_cell = 1;
  const probe_dataset ds = gen_arithmetic(spec); // 36 items

  eval_config all_cfg;
  all_cfg.layers = parse_layers("all", cfg.n_layers);
  eval_config last_cfg;
  last_cfg.layers = {cfg.n_layers};

  const auto rows_all = score_dataset(b, tok, ds, lib, all_cfg);
  const auto rows_last = score_dataset(b, tok, ds, lib, last_cfg);
  const layer_scores m_all = aggregate_results(rows_all, ds, all_cfg);
  const layer_scores m_last = aggregate_results(rows_last, ds, last_cfg);

  bool pass = std::abs(m_all.rows.at(cfg.n_layers).accuracy -
                       m_last.rows.at(cfg.n_layers).accuracy) <= 1e-6;
  // Identical scores drive identical chosen indices; compare the
  // final-layer rows of both runs.
  std::map<std::pair<std::string, std::size_t>, double> final_scores;
  for (const auto &r : rows_all)
    if (r.layer == cfg.n_layers)
      final_scores[{r.item_id, r.option_index}] = r.sum_logprob;
  for (const auto &r : rows_last) {
    const auto it = final_scores.find({r.item_id, r.option_index});
    pass = pass && it != final_scores.end() && it->second == r.sum_logprob;
  }
  report_criterion(4, "final-layer lens row equals plain evaluation", pass);
}

void criterion_5_uniform_model() {
  const model_config cfg = fixture_config(1, 8, 300, 640);
  const model_bundle b = constant_logit_bundle(cfg);
  const tokenizer tok = byte_fallback_tokenizer(cfg.vocab_size);
  const prompt_library lib = load_templates(LAYERLENS_TEMPLATE_DIR);

  arithmetic_spec spec;
  spec.seed = 99;
  const probe_dataset ds = gen_arithmetic(spec);

  eval_config cfg_eval;
  cfg_eval.layers = {cfg.n_layers};
  cfg_eval.norm = normalization::mean; // every option ties under the uniform model
  cfg_eval.tie = tie_break::seeded_random;
  cfg_eval.seed = 31337;
  cfg_eval.threads = 2;
  const auto rows = score_dataset(b, tok, ds, lib, cfg_eval);

  const layer_scores random_ties = aggregate_results(rows, ds, cfg_eval);
  const double acc_random = random_ties.rows.at(cfg.n_layers).accuracy;

  eval_config lowest = cfg_eval;
  lowest.tie = tie_break::lowest_index;
  const layer_scores lowest_ties = aggregate_results(rows, ds, lowest);
  const double acc_lowest = lowest_ties.rows.at(cfg.n_layers).accuracy;

  double at_zero = 0.0;
  for (const auto &item : ds.items)
    at_zero += item.correct.front() == 0 ? 1.0 : 0.0;
  at_zero /= static_cast<double>(ds.items.size());

  const bool pass =
      acc_random >= 0.22 && acc_random <= 0.28 && acc_lowest == at_zero;
  char buf[144];
  std::snprintf(buf, sizeof buf,
                "seeded_random %.4f in [0.22,0.28]; lowest_index %.4f == "
                "fraction-at-0 %.4f",
                acc_random, acc_lowest, at_zero);
  report_criterion(5, "uniform-model calibration", pass, buf);
}

void criterion_6_mc_metrics() {
  auto mk = [](std::size_t idx, double logp) {
    option_score s;
    s.option_index = idx;
    s.sum_logprob = logp;
    s.token_count = 1;
    s.mean_logprob = logp;
    return s;
  };
  bool pass = true;
  {
    const std::vector<option_score> scores = {
        mk(0, std::log(0.3)), mk(1, std::log(0.5)), mk(2, std::log(0.2))};
    const auto [mc1, mc3] =
        truthfulqa_metrics(scores, {0, 2}, normalization::sum);
    pass = pass && mc1 == 0.0 && std::abs(mc3 - 0.5) <= 1e-9;
  }
  {
    const std::vector<option_score> one = {mk(0, std::log(0.4))};
    const auto [mc1, mc3] = truthfulqa_metrics(one, {0}, normalization::sum);
    pass = pass && mc1 == 1.0 && std::abs(mc3 - 1.0) <= 1e-9;
  }
  mt19937_source rng(606);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<option_score> scores;
    const auto n = static_cast<std::size_t>(rng.randint(2, 8));
    for (std::size_t i = 0; i < n; ++i)
      scores.push_back(mk(i, rng.uniform(-20, 0)));
    const std::vector<std::size_t> correct = {
        static_cast<std::size_t>(rng.randint(0, static_cast<int>(n) - 1))};
    const auto [a1, a3] =
        truthfulqa_metrics(scores, correct, normalization::sum);
    const double shift = rng.uniform(-40, 40);
    for (auto &s : scores) {
      s.sum_logprob += shift;
      s.mean_logprob = s.sum_logprob;
    }
    const auto [b1, b3] =
        truthfulqa_metrics(scores, correct, normalization::sum);
    pass = pass && a1 == b1 && std::abs(a3 - b3) <= 1e-9;
  }
  report_criterion(6, "MC1/MC3 exactness and shift invariance", pass);
}

void criterion_7_transformer() {
  bool pass = true;

  // Causality on 50 random inputs.
  model_config cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_kv_heads = 1;
  cfg.d_ff = 32;
  cfg.vocab_size = 64;
  cfg.max_seq_len = 32;
  const model_bundle b = random_bundle(cfg, 99);
  mt19937_source rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> tokens(10);
    for (auto &t : tokens)
      t = static_cast<int>(rng.randint(0, 63));
    forward_request req;
    req.tokens = tokens;
    const forward_result base = forward(b, req);
    const auto pos = static_cast<std::size_t>(rng.randint(1, 9));
    auto mutated = tokens;
    mutated[pos] = static_cast<int>((mutated[pos] + 7) % 64);
    forward_request req2;
    req2.tokens = mutated;
    const forward_result alt = forward(b, req2);
    pass = pass &&
           std::memcmp(base.final_logits.data(), alt.final_logits.data(),
                       pos * cfg.vocab_size * sizeof(float)) == 0;
  }

  // GQA with n_kv_heads == n_heads equals a plain multi-head reference.
  model_config mha = cfg;
  mha.n_kv_heads = mha.n_heads;
  const model_bundle mb = random_bundle(mha, 55);
  {
    const std::vector<int> tokens = {3, 17, 42, 8, 25, 61};
    forward_request req;
    req.tokens = tokens;
    const forward_result got = forward(mb, req);

    // Local reference: plain multi-head attention forward in doubles.
    namespace tn = tensor_names;
    const std::size_t d = mha.d_model, hd = mha.head_dim(),
                      seq = tokens.size();
    std::vector<std::vector<double>> x(seq, std::vector<double>(d));
    const auto emb = mb.tensor(tn::token_embedding());
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t i = 0; i < d; ++i)
        x[t][i] = emb[static_cast<std::size_t>(tokens[t]) * d + i];
    auto matv = [&](std::span<const float> w, std::size_t rows,
                    std::size_t cols, const std::vector<double> &v) {
      std::vector<double> y(rows, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          y[r] += static_cast<double>(w[r * cols + c]) * v[c];
      return y;
    };
    auto norm = [&](const std::vector<double> &v, std::span<const float> g) {
      double ms = 0.0;
      for (double u : v)
        ms += u * u;
      ms /= static_cast<double>(v.size());
      std::vector<double> y(v.size());
      for (std::size_t i = 0; i < v.size(); ++i)
        y[i] = v[i] / std::sqrt(ms + mha.rms_eps) * g[i];
      return y;
    };
    auto rope = [&](std::vector<double> &v, std::size_t off, double pos) {
      for (std::size_t k2 = 0; k2 < hd / 2; ++k2) {
        const double ang =
            pos * std::pow(static_cast<double>(mha.rope_theta),
                           -2.0 * static_cast<double>(k2) /
                               static_cast<double>(hd));
        const double a = v[off + 2 * k2], bb = v[off + 2 * k2 + 1];
        v[off + 2 * k2] = a * std::cos(ang) - bb * std::sin(ang);
        v[off + 2 * k2 + 1] = a * std::sin(ang) + bb * std::cos(ang);
      }
    };
    for (std::size_t layer = 0; layer < mha.n_layers; ++layer) {
      std::vector<std::vector<double>> q(seq), k(seq), v(seq);
      for (std::size_t t = 0; t < seq; ++t) {
        const auto n = norm(x[t], mb.tensor(tn::attention_norm(layer)));
        q[t] = matv(mb.tensor(tn::wq(layer)), d, d, n);
        k[t] = matv(mb.tensor(tn::wk(layer)), d, d, n);
        v[t] = matv(mb.tensor(tn::wv(layer)), d, d, n);
        for (std::size_t h = 0; h < mha.n_heads; ++h) {
          rope(q[t], h * hd, static_cast<double>(t));
          rope(k[t], h * hd, static_cast<double>(t));
        }
      }
      for (std::size_t t = 0; t < seq; ++t) {
        std::vector<double> cat(d, 0.0);
        for (std::size_t h = 0; h < mha.n_heads; ++h) {
          std::vector<double> sc(t + 1);
          for (std::size_t s = 0; s <= t; ++s) {
            double acc = 0.0;
            for (std::size_t i = 0; i < hd; ++i)
              acc += q[t][h * hd + i] * k[s][h * hd + i];
            sc[s] = acc / std::sqrt(static_cast<double>(hd));
          }
          double mx = sc[0];
          for (double u : sc)
            mx = std::max(mx, u);
          double z = 0.0;
          for (double &u : sc) {
            u = std::exp(u - mx);
            z += u;
          }
          for (std::size_t s = 0; s <= t; ++s)
            for (std::size_t i = 0; i < hd; ++i)
              cat[h * hd + i] += sc[s] / z * v[s][h * hd + i];
        }
        const auto o = matv(mb.tensor(tn::wo(layer)), d, d, cat);
        for (std::size_t i = 0; i < d; ++i)
          x[t][i] += o[i];
      }
      for (std::size_t t = 0; t < seq; ++t) {
        const auto n = norm(x[t], mb.tensor(tn::ffn_norm(layer)));
        const auto g = matv(mb.tensor(tn::w_gate(layer)), mha.d_ff, d, n);
        const auto u = matv(mb.tensor(tn::w_up(layer)), mha.d_ff, d, n);
        std::vector<double> act(mha.d_ff);
        for (std::size_t i = 0; i < mha.d_ff; ++i)
          act[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
        const auto dn = matv(mb.tensor(tn::w_down(layer)), d, mha.d_ff, act);
        for (std::size_t i = 0; i < d; ++i)
          x[t][i] += dn[i];
      }
    }
    for (std::size_t t = 0; t < seq; ++t) {
      const auto n = norm(x[t], mb.tensor(tn::final_norm()));
      const auto logits =
          matv(mb.tensor(tn::unembedding()), mha.vocab_size, d, n);
      for (std::size_t o = 0; o < mha.vocab_size; ++o) {
        const double diff = std::abs(got.logits_row(t)[o] - logits[o]);
        pass = pass && diff <= 1e-6 * std::max(1.0, std::abs(logits[o]));
      }
    }
  }

  // RoPE preserves norms within 1e-6.
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> v(8);
    for (auto &f : v)
      f = static_cast<float>(rng.uniform(-4, 4));
    double before = 0.0;
    for (float f : v)
      before += static_cast<double>(f) * f;
    apply_rope(v, rng.uniform(0, 50), 10000.0);
    double after = 0.0;
    for (float f : v)
      after += static_cast<double>(f) * f;
    pass = pass && std::abs(std::sqrt(after) - std::sqrt(before)) <=
                       1e-6 * std::max(1.0, std::sqrt(before));
  }

  report_criterion(7, "causality, GQA reference, RoPE norm preservation",
                   pass);
}

void criterion_8_tsne() {
  const auto start = std::chrono::steady_clock::now();
  embedding_set emb;
  emb.d = 50;
  mt19937_source rng(4242);
  const char *names[3] = {"en", "es", "zh"};
  for (int c = 0; c < 3; ++c) {
    std::vector<double> center(emb.d, 0.0);
    center[static_cast<std::size_t>(c)] = 10.0 * c;
    center[10 + static_cast<std::size_t>(c)] = c == 0 ? 10.0 : 0.0;
    for (int i = 0; i < 50; ++i) {
      for (std::size_t j = 0; j < emb.d; ++j)
        emb.x.push_back(center[j] + rng.gaussian());
      emb.labels.push_back(names[c]);
      emb.ids.push_back(std::to_string(emb.n));
      ++emb.n;
    }
  }

  tsne_params params;
  params.seed = 11;
  const auto p = pairwise_affinities(emb.x, emb.n, emb.d,
                                     params.resolve_perplexity(emb.n));
  const auto res = tsne_project(p, emb.n, params);

  // Independent KL evaluator.
  auto kl_of = [&](const std::vector<double> &y) {
    double z = 0.0;
    for (std::size_t i = 0; i < emb.n; ++i)
      for (std::size_t j = 0; j < emb.n; ++j) {
        if (i == j)
          continue;
        const double d0 = y[2 * i] - y[2 * j];
        const double d1 = y[2 * i + 1] - y[2 * j + 1];
        z += 1.0 / (1.0 + d0 * d0 + d1 * d1);
      }
    double kl = 0.0;
    for (std::size_t i = 0; i < emb.n; ++i)
      for (std::size_t j = 0; j < emb.n; ++j) {
        if (i == j || p[i * emb.n + j] <= 0.0)
          continue;
        const double d0 = y[2 * i] - y[2 * j];
        const double d1 = y[2 * i + 1] - y[2 * j + 1];
        const double q =
            std::max(1.0 / ((1.0 + d0 * d0 + d1 * d1) * z), 1e-12);
        kl += p[i * emb.n + j] * std::log(p[i * emb.n + j] / q);
      }
    return kl;
  };

  // Independent brute-force purity at k = 10.
  double purity = 0.0;
  for (std::size_t i = 0; i < emb.n; ++i) {
    std::vector<std::pair<double, std::size_t>> dists;
    for (std::size_t j = 0; j < emb.n; ++j) {
      if (j == i)
        continue;
      const double d0 = res.y[2 * i] - res.y[2 * j];
      const double d1 = res.y[2 * i + 1] - res.y[2 * j + 1];
      dists.push_back({d0 * d0 + d1 * d1, j});
    }
    std::sort(dists.begin(), dists.end());
    std::size_t same = 0;
    for (std::size_t j = 0; j < 10; ++j)
      same += emb.labels[dists[j].second] == emb.labels[i] ? 1 : 0;
    purity += static_cast<double>(same) / 10.0;
  }
  purity /= static_cast<double>(emb.n);

  const double kl_final = kl_of(res.y);
  const double kl_initial = res.kl_initial;
  const double elapsed = seconds_since(start);
  const bool pass = purity >= 0.9 && kl_final < kl_initial && elapsed < 60.0;
  char buf[128];
  std::snprintf(buf, sizeof buf, "purity %.3f >= 0.9, KL %.4f -> %.4f, %.1fs",
                purity, kl_initial, kl_final, elapsed);
  report_criterion(8, "t-SNE cluster separation and KL decrease", pass, buf);
}

void criterion_9_container() {
  scratch_dir dir("container");
  bool pass = true;

  tensor_container c;
  c.tensors.emplace("w.f32",
                    make_f32_record("w.f32", {3, 2},
                                    {1.5f, -2.0f, 0.25f, 8.0f, -0.125f,
                                     3.0f}));
  c.tensors.emplace("w.f16",
                    make_f16_record("w.f16", {4}, {0.5f, -1.5f, 2.0f, 4.0f}));
  const auto path = dir.path / "c.tensors";
  save_container(c, path);
  const tensor_container back = load_container(path);
  pass = pass && back == c;

  // Missing tensor, surfaced through bundle validation with its name.
  try {
    model_config cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_kv_heads = 2;
    cfg.d_ff = 16;
    cfg.vocab_size = 300;
    cfg.max_seq_len = 32;
    model_bundle bundle = random_bundle(cfg, 3);
    bundle.store.tensors.erase("output.weight");
    tensor_container doctored = bundle.store;
    config_into_metadata(cfg, doctored.metadata);
    const auto p3 = dir.path / "no_unembed.tensors";
    save_container(doctored, p3);
    load_bundle(p3);
    pass = false; // should have thrown
  } catch (const missing_tensor_error &e) {
    pass = pass &&
           std::string(e.what()).find("output.weight") != std::string::npos;
  } catch (const error &) {
    pass = false;
  }

  // Declared shape incompatible with the stored byte count.
  try {
    const std::string header =
        R"({"t":{"dtype":"F32","shape":[4,4],"data_offsets":[0,60]}})";
    std::string bytes;
    for (int i = 0; i < 8; ++i)
      bytes.push_back(static_cast<char>((header.size() >> (8 * i)) & 0xff));
    bytes += header;
    bytes += std::string(60, '\0');
    const auto p4 = dir.path / "badshape.tensors";
    spit(p4, bytes);
    load_container(p4);
    pass = false;
  } catch (const shape_error &) {
  } catch (const error &) {
    pass = false;
  }

  // Truncation mid-payload.
  try {
    std::string bytes = slurp(path);
    bytes.resize(bytes.size() - 3);
    const auto p5 = dir.path / "trunc.tensors";
    spit(p5, bytes);
    load_container(p5);
    pass = false;
  } catch (const corrupt_container_error &) {
  } catch (const error &) {
    pass = false;
  }

  report_criterion(9, "container round-trip and typed failure modes", pass);
}

void criterion_10_pipeline() {
  const auto start = std::chrono::steady_clock::now();
  const char *cli = LAYERLENS_CLI_PATH;
  scratch_dir dir("pipeline");
  setenv("SOURCE_DATE_EPOCH", "1754600000", 1);

  // Deterministic 4-layer fixture bundle.
  const model_config cfg = fixture_config();
  save_bundle(random_bundle(cfg, 7), dir.path / "fixture4.tensors");
  spit(dir.path / "gen.spec", "count_per_cell = 3\nseed = 11\n");

  auto run = [&](const std::string &args) {
    const std::string cmd = "cd " + dir.path.string() + " && " + cli + " " +
                            args + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };

  // Small multilingual dataset for the projection leg.
  {
    std::ostringstream xmps;
    const char *langs[5] = {"en", "es", "fr", "zh", "th"};
    for (int i = 0; i < 10; ++i) {
      xmps << R"({"id":"xmps_rea-)" << i << R"(","task":"xmps_rea",)"
           << R"("context":null,"question":"Add )" << i << " and " << i + 1
           << R"(.","options":["sum )" << i << R"( a","sum )" << i
           << R"( b"],"correct":[)" << i % 2 << R"(],"language":")"
           << langs[i % 5] << R"(","n_steps":)" << (i % 3) + 1 << "}\n";
    }
    spit(dir.path / "xmps.jsonl", xmps.str());
  }

  bool pass = true;
  for (const char *tag : {"a", "b"}) {
    const std::string t(tag);
    pass = pass && run("gen --spec gen.spec --out data_" + t + ".jsonl");
    pass = pass && run("eval --bundle fixture4.tensors --dataset data_" + t +
                       ".jsonl --out ev_" + t + " --layers all --threads 2" +
                       " --template-dir " +
                       std::string(LAYERLENS_TEMPLATE_DIR) +
                       " --model-label fixture4");
    pass = pass &&
           run("report --metrics ev_" + t + "/metrics.csv --out rep_" + t);
    pass = pass && run("project --bundle fixture4.tensors --dataset "
                       "xmps.jsonl --out proj_" + t +
                       " --layers 1,last --iterations 250 --knn 3"
                       " --template-dir " +
                       std::string(LAYERLENS_TEMPLATE_DIR));
  }

  const std::vector<std::pair<fs::path, fs::path>> compare = {
      {"data_a.jsonl", "data_b.jsonl"},
      {"ev_a/results.csv", "ev_b/results.csv"},
      {"ev_a/metrics.csv", "ev_b/metrics.csv"},
      {"rep_a/size_table.csv", "rep_b/size_table.csv"},
      {"rep_a/layer_grid_fixture4.csv", "rep_b/layer_grid_fixture4.csv"},
      {"rep_a/fig_layers.csv", "rep_b/fig_layers.csv"},
      {"rep_a/fig_steps.csv", "rep_b/fig_steps.csv"},
      {"proj_a/projection_layer1.csv", "proj_b/projection_layer1.csv"},
      {"proj_a/projection_layer4.csv", "proj_b/projection_layer4.csv"},
      {"proj_a/purity.csv", "proj_b/purity.csv"},
  };
  for (const auto &[left, right] : compare)
    pass = pass && !slurp(dir.path / left).empty() &&
           slurp(dir.path / left) == slurp(dir.path / right);

  // The two projection files of one run embed the same manifest hash.
  {
    auto first_line = [&](const fs::path &p) {
      const std::string s = slurp(dir.path / p);
      return s.substr(0, s.find('\n'));
    };
    pass = pass && first_line("proj_a/projection_layer1.csv") ==
                       first_line("proj_a/projection_layer4.csv");
    pass = pass && first_line("proj_a/projection_layer1.csv")
                           .rfind("# manifest: ", 0) == 0;
  }

  // Golden files: regenerate with LAYERLENS_REGEN_GOLDEN=1, compare
  // otherwise.
  const fs::path golden = LAYERLENS_GOLDEN_DIR;
  const std::vector<fs::path> golden_files = {
      "data_a.jsonl",
      "ev_a/results.csv",
      "ev_a/metrics.csv",
      "rep_a/size_table.csv",
      "rep_a/layer_grid_fixture4.csv",
      "rep_a/fig_layers.csv",
      "rep_a/fig_steps.csv"};
  const bool regen = std::getenv("LAYERLENS_REGEN_GOLDEN") != nullptr;
  std::string golden_note;
  if (regen) {
    fs::create_directories(golden);
    for (const auto &f : golden_files)
      spit(golden / f.filename(), slurp(dir.path / f));
    golden_note = "golden files regenerated";
  } else {
    for (const auto &f : golden_files) {
      const std::string want = slurp(golden / f.filename());
      const std::string got = slurp(dir.path / f);
      if (want.empty() || want != got) {
        pass = false;
        golden_note += f.filename().string() + " mismatch; ";
      }
    }
    if (golden_note.empty())
      golden_note = "matches checked-in golden files";
  }

  const double elapsed = seconds_since(start);
  pass = pass && elapsed < 120.0;
  char buf[224];
  std::snprintf(buf, sizeof buf, "%s, %.1fs", golden_note.c_str(), elapsed);
  report_criterion(10, "end-to-end pipeline determinism and golden files",
                   pass, buf);
}

void criterion_11_real_checkpoint() {
  const char *bundle_path = std::getenv("LAYERLENS_REAL_BUNDLE");
  if (bundle_path == nullptr) {
    report_skip(11, "real-checkpoint layer sweep (informational)",
                "LAYERLENS_REAL_BUNDLE not set");
    return;
  }
  try {
    const model_bundle b = load_bundle(bundle_path);
    const tokenizer tok = tokenizer_for_bundle(b);
    const prompt_library lib = load_templates(LAYERLENS_TEMPLATE_DIR);

    arithmetic_spec spec;
    spec.seed = 1;
    spec.count_per_cell = 3; // 108 items, trimmed to the first 100
    probe_dataset ds = gen_arithmetic(spec);
    ds.items.resize(100);

    eval_config cfg;
    cfg.layers = parse_layers("all", b.config.n_layers);
    cfg.threads = 2;
    const layer_scores scores = layer_sweep(b, tok, ds, lib, cfg);
    const bool well_formed = scores.rows.size() == b.config.n_layers;
    char buf[96];
    std::snprintf(buf, sizeof buf,
                  "%zu layer rows over 100 items (no thresholds asserted)",
                  scores.rows.size());
    report_criterion(11, "real-checkpoint layer sweep (informational)",
                     well_formed, buf);
  } catch (const error &e) {
    report_criterion(11, "real-checkpoint layer sweep (informational)", false,
                     e.what());
  }
}

} // namespace

int main() {
  std::printf("layerlens acceptance suite\n");
  criterion_1_generator();
  criterion_2_expression_oracle();
  criterion_3_scoring_equivalence();
  criterion_4_lens_identity();
  criterion_5_uniform_model();
  criterion_6_mc_metrics();
  criterion_7_transformer();
  criterion_8_tsne();
  criterion_9_container();
  criterion_10_pipeline();
  criterion_11_real_checkpoint();
  if (failures == 0)
    std::printf("all criteria passed\n");
  else
    std::printf("%d criterion(s) failed\n", failures);
  return failures;
}
