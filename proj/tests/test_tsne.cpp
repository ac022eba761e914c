#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "layerlens/errors.hpp"
#include "layerlens/fixtures.hpp"
#include "layerlens/rng.hpp"
#include "layerlens/scoring.hpp"
#include "layerlens/tsne.hpp"

#include <algorithm>
#include <cmath>

using namespace layerlens;

namespace {

// Independent KL evaluator (own q computation, separate from tsne_kl).
double reference_kl(const std::vector<double> &p, const std::vector<double> &y,
                    std::size_t n) {
  std::vector<double> w(n * n, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j)
        continue;
      const double d0 = y[2 * i] - y[2 * j];
      const double d1 = y[2 * i + 1] - y[2 * j + 1];
      w[i * n + j] = 1.0 / (1.0 + d0 * d0 + d1 * d1);
      z += w[i * n + j];
    }
  double kl = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    if (p[i] <= 0.0)
      continue;
    const double q = std::max(w[i] / z, 1e-12);
    kl += p[i] * std::log(p[i] / q);
  }
  return kl;
}

// Brute-force neighbour purity, independent of nn_purity.
double reference_purity(const std::vector<double> &y, std::size_t n,
                        const std::vector<std::string> &labels,
                        std::size_t k) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i)
        continue;
      const double d0 = y[2 * i] - y[2 * j];
      const double d1 = y[2 * i + 1] - y[2 * j + 1];
      d.push_back({d0 * d0 + d1 * d1, j});
    }
    std::sort(d.begin(), d.end());
    std::size_t same = 0;
    for (std::size_t j = 0; j < k; ++j)
      same += labels[d[j].second] == labels[i] ? 1 : 0;
    total += static_cast<double>(same) / static_cast<double>(k);
  }
  return total / static_cast<double>(n);
}

embedding_set gaussian_clusters(std::size_t per_cluster, std::size_t d,
                                double separation, std::uint64_t seed) {
  embedding_set emb;
  emb.d = d;
  emb.layer = 1;
  mt19937_source rng(seed);
  const char *names[3] = {"en", "es", "zh"};
  for (int c = 0; c < 3; ++c) {
    std::vector<double> center(d);
    for (auto &v : center)
      v = rng.gaussian() * separation;
    for (std::size_t i = 0; i < per_cluster; ++i) {
      for (std::size_t j = 0; j < d; ++j)
        emb.x.push_back(center[j] + rng.gaussian());
      emb.labels.push_back(names[c]);
      emb.ids.push_back(std::string(names[c]) + "-" + std::to_string(i));
      ++emb.n;
    }
  }
  return emb;
}

} // namespace

TEST_CASE("affinities: three equidistant points are fully symmetric") {
  // Standard basis vectors: pairwise squared distance exactly 2.
  const std::vector<double> x = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const auto p = pairwise_affinities(x, 3, 3, 1.0);
  // Off-diagonal entries all equal 1/6.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j)
        CHECK(p[i * 3 + j] == 0.0);
      else
        CHECK(p[i * 3 + j] == doctest::Approx(1.0 / 6.0).epsilon(1e-9));
    }
}

TEST_CASE("affinities: 4-point rectangle row sums are 1/n by symmetry") {
  // The rectangle's symmetry group is transitive on the corners, so every
  // conditional row carries the same pattern and the symmetrized rows all
  // sum to 1/4 regardless of the bandwidth search outcome.
  const std::vector<double> x = {0, 0, 3, 0, 0, 1, 3, 1};
  const auto p = pairwise_affinities(x, 4, 2, 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 4; ++j)
      row += p[i * 4 + j];
    CHECK(row == doctest::Approx(0.25).epsilon(1e-6));
    total += row;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("affinities: global sum is 1 and matrix is symmetric") {
  mt19937_source rng(77);
  const std::size_t n = 40, d = 7;
  std::vector<double> x(n * d);
  for (auto &v : x)
    v = rng.gaussian();
  const auto p = pairwise_affinities(x, n, d, 10.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      total += p[i * n + j];
      CHECK(p[i * n + j] == doctest::Approx(p[j * n + i]).epsilon(1e-12));
      CHECK(p[i * n + j] >= 0.0);
    }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("affinities: duplicate points raise a degenerate-input error") {
  const std::vector<double> x = {1, 2, 3, 1, 2, 3, 0, 0, 0};
  CHECK_THROWS_WITH_AS(pairwise_affinities(x, 3, 3, 1.0),
                       doctest::Contains("rows 0 and 1"),
                       degenerate_input_error);
}

TEST_CASE("perplexity bounds are enforced") {
  const std::vector<double> x = {0, 0, 1, 1, 2, 0, 3, 1};
  CHECK_THROWS_AS(pairwise_affinities(x, 4, 2, 0.5), config_error);
  CHECK_THROWS_AS(pairwise_affinities(x, 4, 2, 3.5), config_error);
}

TEST_CASE("projection: two points repel to distinct outputs") {
  const std::vector<double> x = {0.0, 0.0, 0.0, 1.0, 1.0, 1.0};
  const auto p = pairwise_affinities(x, 2, 3, 1.0);
  tsne_params params;
  params.iterations = 300;
  params.seed = 5;
  const auto res = tsne_project(p, 2, params);
  const double dx = res.y[0] - res.y[2];
  const double dy = res.y[1] - res.y[3];
  CHECK(dx * dx + dy * dy > 1e-8);
  for (double v : res.y)
    CHECK(std::isfinite(v));
}

TEST_CASE("projection: same seed gives bitwise-identical output") {
  auto emb = gaussian_clusters(10, 5, 4.0, 11);
  tsne_params params;
  params.iterations = 260;
  params.seed = 17;
  const auto a = tsne_project(emb, params);
  const auto b = tsne_project(emb, params);
  CHECK(a.y == b.y);
  CHECK(a.kl_final == b.kl_final);
}

TEST_CASE("projection: clusters separate and KL decreases") {
  // 3 Gaussian clusters, n = 150, d = 50, centers ~10 sigma apart.
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
  REQUIRE(emb.n == 150);

  tsne_params params;
  params.seed = 7;
  const auto p = pairwise_affinities(emb.x, emb.n, emb.d,
                                     params.resolve_perplexity(emb.n));
  const auto res = tsne_project(p, emb.n, params);

  // Independent evaluators confirm the optimizer's own numbers.
  CHECK(reference_kl(p, res.y, emb.n) ==
        doctest::Approx(res.kl_final).epsilon(1e-9));
  CHECK(res.kl_final < res.kl_initial);
  const double purity = reference_purity(res.y, emb.n, emb.labels, 10);
  CHECK(purity >= 0.9);
  // And the library's own purity agrees with the brute-force one.
  CHECK(nn_purity(res.y, emb.n, 2, emb.labels, 10) ==
        doctest::Approx(purity).epsilon(1e-12));
}

TEST_CASE("nn_purity properties") {
  // Perfectly separated clusters: purity 1 for k below the cluster size.
  std::vector<double> y;
  std::vector<std::string> labels;
  for (int i = 0; i < 8; ++i) {
    y.push_back(i < 4 ? 0.0 + i * 0.01 : 100.0 + i * 0.01);
    y.push_back(0.0);
    labels.push_back(i < 4 ? "a" : "b");
  }
  CHECK(nn_purity(y, 8, 2, labels, 3) == 1.0);
  CHECK_THROWS_AS(nn_purity(y, 8, 2, labels, 8), input_error);

  // Random labels over two balanced classes: purity near 0.5.
  mt19937_source rng(31);
  const std::size_t n = 400;
  std::vector<double> ry;
  std::vector<std::string> rl;
  for (std::size_t i = 0; i < n; ++i) {
    ry.push_back(rng.gaussian());
    ry.push_back(rng.gaussian());
    rl.push_back(i % 2 ? "a" : "b");
  }
  const double p = nn_purity(ry, n, 2, rl, 10);
  CHECK(p > 0.45);
  CHECK(p < 0.55);

  // Permuting point order leaves the value unchanged.
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i)
    perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
  std::vector<double> py(n * 2);
  std::vector<std::string> pl(n);
  for (std::size_t i = 0; i < n; ++i) {
    py[2 * i] = ry[2 * perm[i]];
    py[2 * i + 1] = ry[2 * perm[i] + 1];
    pl[i] = rl[perm[i]];
  }
  CHECK(nn_purity(py, n, 2, pl, 10) == doctest::Approx(p).epsilon(1e-12));
}

TEST_CASE("extract_embeddings pools tapped hidden states") {
  const model_config cfg = fixture_config(2, 16, 300, 128);
  const model_bundle b = random_bundle(cfg, 3);
  const tokenizer tok = byte_fallback_tokenizer(cfg.vocab_size);
  prompt_library lib;
  lib.blocks["mps"] = "Solve.";

  probe_dataset ds;
  ds.task = "xmps_rea";
  for (int i = 0; i < 3; ++i) {
    probe_item item;
    item.id = "x-" + std::to_string(i);
    item.task = probe_task::xmps_rea;
    item.question = "What is 2 + 2?";
    item.options = {"4", "5"};
    item.correct = {0};
    item.language = i == 0 ? "en" : i == 1 ? "es" : "en";
    ds.items.push_back(item);
  }

  const embedding_set emb =
      extract_embeddings(b, tok, ds, lib, 1, pooling::last_token);
  CHECK(emb.n == 3);
  CHECK(emb.d == cfg.d_model);
  CHECK(emb.labels[1] == "es");
  // Items 0 and 2 share their text: identical rows.
  for (std::size_t j = 0; j < emb.d; ++j)
    CHECK(emb.x[0 * emb.d + j] == emb.x[2 * emb.d + j]);

  // Single-token option: last_token pooling equals mean over option tokens.
  const embedding_set mean_emb =
      extract_embeddings(b, tok, ds, lib, 1, pooling::mean_option_tokens);
  for (std::size_t j = 0; j < emb.d; ++j)
    CHECK(emb.x[j] == doctest::Approx(mean_emb.x[j]).epsilon(1e-12));
}

TEST_CASE("tsne rejects too-few iterations") {
  tsne_params params;
  params.iterations = 100;
  const std::vector<double> p = {0, 0.5, 0.5, 0};
  CHECK_THROWS_AS(tsne_project(p, 2, params), config_error);
}
