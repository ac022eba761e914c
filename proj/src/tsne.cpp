#include "layerlens/tsne.hpp"

#include "layerlens/errors.hpp"
#include "layerlens/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace layerlens {

pooling pooling_from_string(const std::string &s) {
  if (s == "last_token")
    return pooling::last_token;
  if (s == "mean_option_tokens")
    return pooling::mean_option_tokens;
  throw config_error("unknown pooling: " + s);
}

std::string to_string(pooling p) {
  return p == pooling::last_token ? "last_token" : "mean_option_tokens";
}

embedding_set extract_embeddings(const model_bundle &bundle,
                                 const tokenizer &tok,
                                 const probe_dataset &ds,
                                 const prompt_library &lib, std::size_t layer,
                                 pooling pool) {
  const std::size_t d = bundle.config.d_model;
  embedding_set out;
  out.d = d;
  out.layer = layer;
  out.pool = pool;
  for (const auto &item : ds.items) {
    const std::size_t correct = item.correct.front();
    const auto [prompt, option] = assemble_prompt(lib, item, correct);
    const std::vector<int> p = tok.encode(prompt);
    const std::vector<int> full = tok.encode(prompt + option);

    forward_request req;
    req.tokens.push_back(tok.bos_id());
    req.tokens.insert(req.tokens.end(), full.begin(), full.end());
    req.tap_layers = {layer};
    req.want_hidden = true;
    const forward_result res = forward(bundle, req);

    std::vector<double> row(d, 0.0);
    if (pool == pooling::last_token) {
      const auto h = res.hidden_row(layer, res.seq_len - 1);
      for (std::size_t i = 0; i < d; ++i)
        row[i] = h[i];
    } else {
      // Mean over the option-token positions (absolute indices after the
      // bos-shifted prompt).
      std::size_t prefix = p.size();
      if (full.size() <= prefix ||
          !std::equal(p.begin(), p.end(), full.begin())) {
        std::size_t lcp = 0;
        while (lcp < p.size() && lcp < full.size() && p[lcp] == full[lcp])
          ++lcp;
        prefix = lcp;
      }
      if (full.size() <= prefix)
        throw scoring_error("empty option continuation for item " + item.id);
      const std::size_t count = full.size() - prefix;
      for (std::size_t j = 0; j < count; ++j) {
        const auto h = res.hidden_row(layer, 1 + prefix + j);
        for (std::size_t i = 0; i < d; ++i)
          row[i] += h[i];
      }
      for (std::size_t i = 0; i < d; ++i)
        row[i] /= static_cast<double>(count);
    }
    out.x.insert(out.x.end(), row.begin(), row.end());
    out.labels.push_back(item.language);
    out.ids.push_back(item.id);
    ++out.n;
  }
  for (double v : out.x)
    if (!std::isfinite(v))
      throw numeric_error("non-finite embedding value");
  if (out.n < 2)
    throw degenerate_input_error("need at least two embedding rows");
  return out;
}

double tsne_params::resolve_perplexity(std::size_t n) const {
  if (perplexity > 0.0)
    return perplexity;
  const double by_n = (static_cast<double>(n) - 1.0) / 3.0;
  return std::max(1.0, std::min(30.0, by_n));
}

std::vector<double> pairwise_affinities(const std::vector<double> &x,
                                        std::size_t n, std::size_t d,
                                        double perplexity) {
  if (n < 2)
    throw degenerate_input_error("affinities need at least two points");
  if (perplexity < 1.0 || perplexity > static_cast<double>(n - 1))
    throw config_error("perplexity must lie in [1, n-1]");

  std::vector<double> dist2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      const double *xi = x.data() + i * d;
      const double *xj = x.data() + j * d;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = xi[k] - xj[k];
        acc += diff * diff;
      }
      if (acc == 0.0)
        throw degenerate_input_error(
            "duplicate points make the target perplexity unreachable: rows " +
            std::to_string(i) + " and " + std::to_string(j));
      dist2[i * n + j] = acc;
      dist2[j * n + i] = acc;
    }
  }

  const double target_entropy = std::log(perplexity);
  std::vector<double> conditional(n * n, 0.0);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Shift by the nearest-neighbour distance so the largest term is
    // exp(0); keeps the row away from underflow at large beta.
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i)
        dmin = std::min(dmin, dist2[i * n + j]);

    auto fill_row = [&](double beta) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0
                        : std::exp(-beta * (dist2[i * n + j] - dmin));
        sum += row[j];
      }
      return sum;
    };

    double beta = 1.0;
    double beta_min = 0.0;
    double beta_max = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 64; ++iter) {
      const double sum = fill_row(beta);
      // Shannon entropy of the conditional distribution in nats.
      double entropy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (row[j] > 0.0) {
          const double p = row[j] / sum;
          entropy -= p * std::log(p);
        }
      }
      const double diff = entropy - target_entropy;
      if (std::abs(diff) < 1e-5)
        break;
      if (diff > 0.0) { // too flat: sharpen
        beta_min = beta;
        beta = std::isinf(beta_max) ? beta * 2.0 : (beta + beta_max) / 2.0;
      } else {
        beta_max = beta;
        beta = (beta + beta_min) / 2.0;
      }
    }
    const double sum = fill_row(beta);
    for (std::size_t j = 0; j < n; ++j)
      conditional[i * n + j] = row[j] / sum;
  }

  std::vector<double> p(n * n, 0.0);
  const double denom = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j)
        p[i * n + j] =
            (conditional[i * n + j] + conditional[j * n + i]) / denom;
  return p;
}

double tsne_kl(const std::vector<double> &affinities,
               const std::vector<double> &y, std::size_t n) {
  double qsum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dy0 = y[2 * i] - y[2 * j];
      const double dy1 = y[2 * i + 1] - y[2 * j + 1];
      qsum += 2.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
    }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j)
        continue;
      const double pij = affinities[i * n + j];
      if (pij <= 0.0)
        continue;
      const double dy0 = y[2 * i] - y[2 * j];
      const double dy1 = y[2 * i + 1] - y[2 * j + 1];
      const double qij =
          std::max(1.0 / ((1.0 + dy0 * dy0 + dy1 * dy1) * qsum), 1e-12);
      kl += pij * std::log(pij / qij);
    }
  return kl;
}

tsne_result tsne_project(const std::vector<double> &affinities, std::size_t n,
                         const tsne_params &params) {
  if (params.iterations < 250)
    throw config_error("tsne needs at least 250 iterations");
  constexpr std::size_t k_exaggeration_end = 250;
  constexpr double k_clip_norm = 100.0;

  tsne_result res;
  res.y.resize(n * 2);
  mt19937_source rng(splitmix64(params.seed ^ 0x74736e65ULL));
  for (auto &v : res.y)
    v = rng.gaussian() * 1e-4;

  res.kl_initial = tsne_kl(affinities, res.y, n);
  res.kl_trace.emplace_back(0, res.kl_initial);

  std::vector<double> velocity(n * 2, 0.0);
  std::vector<double> grad(n * 2, 0.0);
  std::vector<double> w(n * n, 0.0);

  for (std::size_t iter = 0; iter < params.iterations; ++iter) {
    const double exaggeration =
        iter < k_exaggeration_end ? params.early_exaggeration : 1.0;
    const double momentum = iter < k_exaggeration_end ? params.momentum_early
                                                      : params.momentum_late;

    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dy0 = res.y[2 * i] - res.y[2 * j];
        const double dy1 = res.y[2 * i + 1] - res.y[2 * j + 1];
        const double wij = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        w[i * n + j] = wij;
        w[j * n + i] = wij;
        wsum += 2.0 * wij;
      }

    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j)
          continue;
        const double wij = w[i * n + j];
        const double qij = std::max(wij / wsum, 1e-12);
        const double pij = exaggeration * affinities[i * n + j];
        const double mult = 4.0 * (pij - qij) * wij;
        grad[2 * i] += mult * (res.y[2 * i] - res.y[2 * j]);
        grad[2 * i + 1] += mult * (res.y[2 * i + 1] - res.y[2 * j + 1]);
      }
      const double gnorm = std::sqrt(grad[2 * i] * grad[2 * i] +
                                     grad[2 * i + 1] * grad[2 * i + 1]);
      if (!std::isfinite(gnorm))
        throw numeric_error("non-finite gradient at iteration " +
                            std::to_string(iter));
      if (gnorm > k_clip_norm) {
        grad[2 * i] *= k_clip_norm / gnorm;
        grad[2 * i + 1] *= k_clip_norm / gnorm;
      }
    }

    for (std::size_t i = 0; i < 2 * n; ++i) {
      velocity[i] = momentum * velocity[i] - params.learning_rate * grad[i];
      res.y[i] += velocity[i];
    }

    if ((iter + 1) % 50 == 0)
      res.kl_trace.emplace_back(iter + 1, tsne_kl(affinities, res.y, n));
  }

  for (double v : res.y)
    if (!std::isfinite(v))
      throw numeric_error("non-finite projection output");
  res.kl_final = tsne_kl(affinities, res.y, n);
  return res;
}

tsne_result tsne_project(const embedding_set &emb, const tsne_params &params) {
  const double perplexity = params.resolve_perplexity(emb.n);
  const auto p = pairwise_affinities(emb.x, emb.n, emb.d, perplexity);
  return tsne_project(p, emb.n, params);
}

double nn_purity(const std::vector<double> &y, std::size_t n, std::size_t dim,
                 const std::vector<std::string> &labels, std::size_t k) {
  if (k >= n)
    throw input_error("nn_purity needs k < n");
  if (k == 0)
    throw input_error("nn_purity needs k >= 1");
  std::vector<std::pair<double, std::size_t>> dists(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = y[i * dim + c] - y[j * dim + c];
        acc += diff * diff;
      }
      dists[j] = {acc, j};
    }
    dists[i].first = std::numeric_limits<double>::infinity(); // exclude self
    std::sort(dists.begin(), dists.end());
    std::size_t same = 0;
    for (std::size_t j = 0; j < k; ++j)
      if (labels[dists[j].second] == labels[i])
        ++same;
    total += static_cast<double>(same) / static_cast<double>(k);
  }
  return total / static_cast<double>(n);
}

void write_projection_csv(const std::filesystem::path &path,
                          const embedding_set &emb, const tsne_result &res,
                          const tsne_params &params,
                          const std::string &manifest_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw io_error("cannot open for writing: " + path.string());
  char buf[160];
  out << "# manifest: " << manifest_hash << "\n";
  std::snprintf(buf, sizeof buf,
                "# params: perplexity=%.17g iterations=%zu "
                "learning_rate=%.17g early_exaggeration=%.17g seed=%llu",
                params.resolve_perplexity(emb.n), params.iterations,
                params.learning_rate, params.early_exaggeration,
                static_cast<unsigned long long>(params.seed));
  out << buf << "\n";
  out << "# pooling: " << to_string(emb.pool) << "\n";
  out << "# kl_trace:";
  for (const auto &[iter, kl] : res.kl_trace) {
    std::snprintf(buf, sizeof buf, " %zu=%.9g", iter, kl);
    out << buf;
  }
  out << "\n";
  out << "id,label,layer,y1,y2\n";
  for (std::size_t i = 0; i < emb.n; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", res.y[2 * i],
                  res.y[2 * i + 1]);
    out << emb.ids[i] << "," << emb.labels[i] << "," << emb.layer << ","
        << buf << "\n";
  }
  if (!out)
    throw io_error("write failed: " + path.string());
}

} // namespace layerlens
