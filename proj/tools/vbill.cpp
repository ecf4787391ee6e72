// Command-line front end: dataset simulation, chunking, VBILL fits, MCMC
// baselines, and side-by-side comparison reports.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "vbill/fit.hpp"
#include "vbill/mcmc.hpp"
#include "vbill/simulate.hpp"

namespace fs = std::filesystem;
using namespace vbill;

namespace {

std::string data_dir_default() {
  if (const char* env = std::getenv("VBILL_DATA_DIR")) return env;
  return ".";
}

void write_config_echo(const CLI::App* cmd, const std::string& out_dir) {
  std::ofstream out(fs::path(out_dir) / "config_resolved.cfg");
  out << cmd->config_to_str(true, false);
}

void write_summary(const std::string& out_dir, const std::vector<std::string>& names,
                   const Vector& mean, const Vector& sd) {
  std::ofstream out(fs::path(out_dir) / "summary.csv");
  out.precision(10);
  out << "param,mean,sd\n";
  for (Index j = 0; j < mean.size(); ++j)
    out << names[static_cast<std::size_t>(j)] << "," << mean[j] << "," << sd[j] << "\n";
}

void write_metrics(const std::string& out_dir, double seconds, long iterations,
                   std::uint64_t fingerprint) {
  std::ofstream out(fs::path(out_dir) / "metrics.txt");
  out << "wall_seconds " << seconds << "\n"
      << "iterations " << iterations << "\n"
      << "fingerprint " << fingerprint << "\n";
}

std::vector<std::string> param_names(const chunkstore::ChunkManifest& m, Index d) {
  std::vector<std::string> names;
  if (m.schema == chunkstore::Schema::Panel) {
    for (Index j = 0; j + 1 < d; ++j) names.push_back("beta" + std::to_string(j));
    names.push_back("gamma");
  } else {
    for (Index j = 0; j < d; ++j) names.push_back("beta" + std::to_string(j));
  }
  return names;
}

struct Summary {
  std::vector<std::string> names;
  Vector mean, sd;
  double seconds = 0.0;
  long iterations = 0;
  std::uint64_t fingerprint = 0;
};

Summary read_summary(const std::string& dir) {
  Summary s;
  std::ifstream in(fs::path(dir) / "summary.csv");
  if (!in) throw std::runtime_error("missing summary.csv in " + dir);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> means, sds;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name, m, sd;
    std::getline(ss, name, ',');
    std::getline(ss, m, ',');
    std::getline(ss, sd, ',');
    s.names.push_back(name);
    means.push_back(std::stod(m));
    sds.push_back(std::stod(sd));
  }
  s.mean = Eigen::Map<Vector>(means.data(), static_cast<Index>(means.size()));
  s.sd = Eigen::Map<Vector>(sds.data(), static_cast<Index>(sds.size()));
  std::ifstream met(fs::path(dir) / "metrics.txt");
  std::string key;
  while (met >> key) {
    if (key == "wall_seconds") met >> s.seconds;
    else if (key == "iterations") met >> s.iterations;
    else if (key == "fingerprint") met >> s.fingerprint;
    else { std::string skip; met >> skip; }
  }
  return s;
}

void write_density_grids(const std::string& out_dir, const VariationalParams& lam,
                         const std::vector<std::string>& names) {
  std::ofstream out(fs::path(out_dir) / "density_grid.csv");
  out.precision(10);
  out << "param,x,density\n";
  for (Index j = 0; j < lam.dim(); ++j) {
    const double sd = marginal_sd(lam, j);
    for (int k = 0; k < 201; ++k) {
      const double x = lam.mu[j] + sd * (-5.0 + 0.05 * k);
      const double dens = std::exp(normal_logpdf(x, lam.mu[j], sd * sd));
      out << names[static_cast<std::size_t>(j)] << "," << x << "," << dens << "\n";
    }
  }
}

int run_simulate(const std::string& kind, long n, long T, std::uint64_t seed,
                 const std::string& out, long rows_per_chunk) {
  fs::create_directories(out);
  Matrix table;
  std::ofstream truth(fs::path(out) / "truth.txt");
  truth.precision(10);
  if (kind == "logistic") {
    Vector beta(4);
    beta << -1.609, -0.159, 0.085, 0.766;
    table = simulate_logistic_table(n, beta, seed);
    truth << "beta " << beta.transpose() << "\n";
    chunkstore::write_chunks(table, chunkstore::Schema::Logistic,
                             rows_per_chunk > 0 ? rows_per_chunk : std::max(n, 1L), out);
  } else if (kind == "panel") {
    const Vector beta = panel_true_beta();
    const double gamma = panel_true_gamma();
    table = simulate_panel_table(n, T, beta, gamma, seed);
    truth << "beta " << beta.transpose() << "\n";
    truth << "gamma " << gamma << "\n";
    chunkstore::write_chunks(table, chunkstore::Schema::Panel,
                             rows_per_chunk > 0 ? rows_per_chunk : std::max(n * T, 1L), out);
  } else {
    throw CLI::ValidationError("--kind must be logistic or panel");
  }
  std::cout << "wrote " << table.rows() << " rows to " << out << "\n";
  return 0;
}

int run_chunk(const std::string& input, long rows_per_chunk, const std::string& out,
              bool shuffle, std::uint64_t seed) {
  const auto manifest = chunkstore::read_manifest(input);
  const Matrix all = chunkstore::read_all(manifest);
  fs::create_directories(out);
  const auto rechunked = chunkstore::write_chunks(all, manifest.schema, rows_per_chunk,
                                                  out, seed, shuffle);
  std::cout << "wrote " << rechunked.num_chunks() << " chunks to " << out << "\n";
  return 0;
}

int run_fit_vbill(const std::string& data, const std::string& out, double prior_var,
                  long m, long S, const std::string& source, double eps_stop,
                  long max_iter, long is_samples, std::uint64_t seed,
                  const CLI::App* cmd) {
  const auto manifest = chunkstore::read_manifest(data);
  fs::create_directories(out);
  PriorSpec prior{prior_var};
  OptimizerConfig cfg;
  cfg.subsample_size = m;
  cfg.draws_per_iteration = S;
  cfg.source = source == "rqmc" ? PointSource::RQMC : PointSource::MC;
  cfg.stopping_threshold = eps_stop;
  cfg.max_iterations = max_iter;
  cfg.seed = seed;

  const auto t0 = std::chrono::steady_clock::now();
  VbillRun run;
  if (manifest.schema == chunkstore::Schema::Logistic) {
    if (manifest.num_chunks() > 1) {
      // chunked pipeline: MLE and cache via chunk-at-a-time passes
      const auto subset = initialization_subset(manifest.n, 0.3, seed);
      const Matrix sub_rows = chunkstore::fetch_rows(manifest, subset);
      const auto sub_model = chunkstore::logistic_from_table(sub_rows);
      std::vector<long> all_sub(static_cast<std::size_t>(sub_model.n()));
      std::iota(all_sub.begin(), all_sub.end(), 0L);
      const MleResult mle = logistic_subsample_mle(sub_model, all_sub);
      ControlVariateCache cache;
      cache.theta_bar = mle.theta;
      cache.a_sum = Vector::Zero(sub_model.dim());
      cache.b_sum = Matrix::Zero(sub_model.dim(), sub_model.dim());
      cache.n = manifest.n;
      cache.fingerprint = manifest.fingerprint;
      for (long k = 0; k < manifest.num_chunks(); ++k) {
        const auto cm = chunkstore::logistic_from_table(chunkstore::read_chunk(manifest, k));
        const auto part = build_control_variates(cm, mle.theta);
        cache.a_sum += part.a_sum;
        cache.b_sum += part.b_sum;
        cache.loglik_sum += part.loglik_sum;
      }
      const VariationalParams lam0 = init_lambda(
          mle.theta, mle.information, manifest.n, static_cast<long>(subset.size()));
      run.theta_bar = mle.theta;
      run.fit = vbill_fit(chunked_logistic_estimator(manifest, cache, m), lam0,
                          manifest.n, cfg, prior);
    } else {
      const auto model = chunkstore::logistic_from_table(chunkstore::read_all(manifest));
      run = fit_logistic_vbill(model, cfg, prior);
    }
  } else {
    const auto model = chunkstore::panel_from_table(chunkstore::read_all(manifest));
    ISConfig is_cfg;
    is_cfg.num_samples = is_samples;
    is_cfg.source = cfg.source;
    Vector theta0 = Vector::Zero(model.dim());
    run = fit_panel_vbill(model, cfg, prior, is_cfg, theta0);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto names = param_names(manifest, run.fit.lambda.dim());
  Vector mean = run.fit.lambda.mu;
  Vector sd(mean.size());
  for (Index j = 0; j < mean.size(); ++j) sd[j] = marginal_sd(run.fit.lambda, j);
  write_summary(out, names, mean, sd);
  write_metrics(out, seconds, static_cast<long>(run.fit.trace.size()),
                manifest.fingerprint);
  write_density_grids(out, run.fit.lambda, names);
  {
    std::ofstream lam(fs::path(out) / "lambda.txt");
    lam.precision(17);
    lam << "mu " << run.fit.lambda.mu.transpose() << "\n"
        << "B " << run.fit.lambda.b.transpose() << "\n"
        << "c " << std::fabs(run.fit.lambda.c) << "\n";
  }
  {
    std::ofstream tr(fs::path(out) / "trace.csv");
    tr.precision(12);
    tr << "iteration,scaled_lb,gradient_norm,step_norm,seconds\n";
    for (const auto& tp : run.fit.trace)
      tr << tp.iteration << "," << tp.lower_bound.scaled_value << ","
         << tp.gradient_norm << "," << tp.step_norm << "," << tp.seconds << "\n";
  }
  write_config_echo(cmd, out);
  std::cout << "vbill fit: " << run.fit.trace.size() << " iterations, "
            << seconds << " s\n";
  return 0;
}

int run_fit_mcmc(const std::string& data, const std::string& out, double prior_var,
                 long iterations, long burn_in, long is_samples, std::uint64_t seed,
                 const CLI::App* cmd) {
  const auto manifest = chunkstore::read_manifest(data);
  fs::create_directories(out);
  const double s0 = prior_var;

  const auto t0 = std::chrono::steady_clock::now();
  mcmc::ChainConfig cfg;
  cfg.iterations = iterations;
  cfg.burn_in = burn_in;
  cfg.seed = seed;
  mcmc::ChainOutput chain;
  Index d;
  if (manifest.schema == chunkstore::Schema::Logistic) {
    const auto model = chunkstore::logistic_from_table(chunkstore::read_all(manifest));
    d = model.dim();
    cfg.initial = Vector::Zero(d);
    auto log_post = [&](const Vector& beta) {
      return model.loglik_all(beta) - beta.squaredNorm() / (2.0 * s0);
    };
    chain = mcmc::adaptive_rw_mh(log_post, cfg);
  } else {
    const auto model = chunkstore::panel_from_table(chunkstore::read_all(manifest));
    d = model.dim();
    cfg.initial = Vector::Zero(d);
    ISConfig is_cfg;
    long N = is_samples;
    if (N <= 0) {
      // tune so var(log L-hat) ~ 1 at the prior mean
      const Vector theta_bar = Vector::Zero(d);
      N = mcmc::tune_is_samples(
          [&](long NN, Rng& rng) {
            ISConfig c;
            c.num_samples = NN;
            return total_loglik_estimate(model, theta_bar, c, rng.bits());
          },
          seed);
      std::cout << "tuned IS samples: N = " << N << "\n";
    }
    is_cfg.num_samples = N;
    auto log_lik = [&](const Vector& theta, Rng& rng) {
      return total_loglik_estimate(model, theta, is_cfg, rng.bits());
    };
    auto log_prior = [&](const Vector& theta) {
      return -theta.squaredNorm() / (2.0 * s0);
    };
    chain = mcmc::pmmh(log_lik, log_prior, cfg);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto names = param_names(manifest, d);
  write_summary(out, names, chain.mean, chain.sd);
  write_metrics(out, seconds, iterations, manifest.fingerprint);
  mcmc::write_chain(chain, cfg, (fs::path(out) / "draws_header.txt").string(),
                    (fs::path(out) / "draws.bin").string());
  write_config_echo(cmd, out);
  std::cout << "mcmc fit: acceptance " << chain.acceptance_rate << ", "
            << seconds << " s\n";
  return 0;
}

int run_compare(const std::string& vbill_dir, const std::string& mcmc_dir,
                const std::string& out) {
  const Summary v = read_summary(vbill_dir);
  const Summary m = read_summary(mcmc_dir);
  if (v.fingerprint != m.fingerprint)
    throw std::runtime_error("compare: results come from different datasets (fingerprint mismatch)");
  if (v.mean.size() != m.mean.size())
    throw std::runtime_error("compare: parameter count mismatch");

  std::ostringstream text;
  text.precision(6);
  text << "param  vbill_mean  vbill_sd  mcmc_mean  mcmc_sd  |dmean|/sd_mcmc\n";
  std::ostringstream json;
  json.precision(10);
  json << "{\n  \"params\": [\n";
  for (Index j = 0; j < v.mean.size(); ++j) {
    const double rel = std::fabs(v.mean[j] - m.mean[j]) / m.sd[j];
    text << v.names[static_cast<std::size_t>(j)] << "  " << v.mean[j] << "  "
         << v.sd[j] << "  " << m.mean[j] << "  " << m.sd[j] << "  " << rel << "\n";
    json << "    {\"name\": \"" << v.names[static_cast<std::size_t>(j)]
         << "\", \"vbill_mean\": " << v.mean[j] << ", \"vbill_sd\": " << v.sd[j]
         << ", \"mcmc_mean\": " << m.mean[j] << ", \"mcmc_sd\": " << m.sd[j]
         << ", \"rel_discrepancy\": " << rel << "}"
         << (j + 1 < v.mean.size() ? ",\n" : "\n");
  }
  const double time_ratio = m.seconds > 0 ? m.seconds / std::max(v.seconds, 1e-9) : 0.0;
  text << "iterations: vbill " << v.iterations << ", mcmc " << m.iterations << "\n";
  text << "wall-time ratio (mcmc/vbill): " << time_ratio << "\n";
  json << "  ],\n  \"vbill_iterations\": " << v.iterations
       << ",\n  \"mcmc_iterations\": " << m.iterations
       << ",\n  \"time_ratio\": " << time_ratio << "\n}\n";

  std::cout << text.str();
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "report.txt") << text.str();
    std::ofstream(fs::path(out) / "report.json") << json.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VBILL: variational Bayes with estimated log-likelihood gradients"};
  app.require_subcommand(1);
  app.set_config("--config");

  std::string kind = "logistic", input, out, data, vbill_dir, mcmc_dir;
  std::string source = "rqmc";
  long n = 1000, T = 5, rows_per_chunk = 0, m = 100, S = 256;
  long max_iter = 500, iterations = 30000, burn_in = 10000, is_samples = 256;
  long mcmc_is_samples = 0;
  bool shuffle = false;
  double prior_var = 50.0, eps_stop = 1e-7;
  std::uint64_t seed = 1;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  sim->add_option("--kind", kind, "logistic or panel");
  sim->add_option("--n", n, "observations (logistic) or panels (panel)");
  sim->add_option("--T", T, "observations per panel");
  sim->add_option("--seed", seed);
  sim->add_option("--rows-per-chunk", rows_per_chunk, "0 = single chunk");
  sim->add_option("--out", out)->default_val(data_dir_default());

  auto* chunk = app.add_subcommand("chunk", "re-chunk a dataset");
  chunk->add_option("--input", input)->required();
  chunk->add_option("--rows-per-chunk", rows_per_chunk)->required();
  chunk->add_option("--out", out)->required();
  chunk->add_flag("--shuffle", shuffle, "randomize row-to-chunk assignment");
  chunk->add_option("--seed", seed);

  auto* fitv = app.add_subcommand("fit-vbill", "natural-gradient variational fit");
  fitv->add_option("--data", data)->default_val(data_dir_default());
  fitv->add_option("--out", out)->required();
  fitv->add_option("--prior-var", prior_var);
  fitv->add_option("--m", m, "subsample size per draw");
  fitv->add_option("--S", S, "draws per iteration (power of 2 for rqmc)");
  fitv->add_option("--source", source, "mc or rqmc");
  fitv->add_option("--eps-stop", eps_stop);
  fitv->add_option("--max-iter", max_iter);
  fitv->add_option("--N", is_samples, "importance samples per panel");
  fitv->add_option("--seed", seed);

  auto* fitm = app.add_subcommand("fit-mcmc", "MCMC baseline fit");
  fitm->add_option("--data", data)->default_val(data_dir_default());
  fitm->add_option("--out", out)->required();
  fitm->add_option("--prior-var", prior_var);
  fitm->add_option("--iterations", iterations);
  fitm->add_option("--burn-in", burn_in);
  fitm->add_option("--N", mcmc_is_samples, "importance samples per panel; 0 = tune");
  fitm->add_option("--seed", seed);

  auto* cmp = app.add_subcommand("compare", "compare a VBILL and an MCMC fit");
  cmp->add_option("--vbill", vbill_dir)->required();
  cmp->add_option("--mcmc", mcmc_dir)->required();
  cmp->add_option("--out", out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run_simulate(kind, n, T, seed, out, rows_per_chunk);
    if (chunk->parsed()) return run_chunk(input, rows_per_chunk, out, shuffle, seed);
    if (fitv->parsed())
      return run_fit_vbill(data, out, prior_var, m, S, source, eps_stop, max_iter,
                           is_samples, seed, fitv);
    if (fitm->parsed())
      return run_fit_mcmc(data, out, prior_var, iterations, burn_in,
                          mcmc_is_samples, seed, fitm);
    if (cmp->parsed()) return run_compare(vbill_dir, mcmc_dir, out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error[invalid-argument]: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error[runtime]: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 1;
}
