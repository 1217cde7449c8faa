// Command-line front end for the two-stage fitting pipeline.
//
// Subcommands: simulate, fit-stage1, fit-stage2, recover-effects, evaluate,
// summarize. All artifacts of one run live in a single directory; stage 1
// records a manifest there so later stages can find the pieces.
//
// Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "vfbayes/diagnostics.hpp"
#include "vfbayes/evaluation.hpp"

namespace fs = std::filesystem;
using namespace vfb;

namespace {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string safe_name(const std::string& id) {
  std::string out;
  for (char c : id) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

// RNG stream ids per purpose; individual streams are keyed by the id hash so
// results do not depend on scheduling
constexpr std::uint64_t kStreamSimulate = 0x51000000ULL;
constexpr std::uint64_t kStreamStage1 = 0x10000000ULL;
constexpr std::uint64_t kStreamRecover = 0x6E000000ULL;
constexpr std::uint64_t kStreamPpc = 0x50000000ULL;

std::uint64_t individual_stream(std::uint64_t base, const std::string& id) {
  return base ^ (fnv1a64(id) >> 8);
}

void run_parallel(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs < 1) jobs = std::max(1u, std::thread::hardware_concurrency());
  if (jobs == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mx;
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mx);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Run-directory manifest

struct Manifest {
  ModelVariant model = ModelVariant::Model1;
  std::string dataset;  // file name inside the run directory
  std::vector<std::string> ids;
};

void write_manifest(const fs::path& dir, const Manifest& m) {
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
  out << "model=" << static_cast<int>(m.model) << "\n";
  out << "dataset=" << m.dataset << "\n";
  for (const auto& id : m.ids) out << "individual=" << id << "\n";
}

Manifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw IoError("cannot read " + (dir / "manifest.txt").string() + " (run fit-stage1 first)");
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "model")
      m.model = model_variant_from_int(std::stoi(val));
    else if (key == "dataset")
      m.dataset = val;
    else if (key == "individual")
      m.ids.push_back(val);
  }
  if (m.ids.empty()) throw IoError("manifest lists no individuals");
  return m;
}

std::vector<IndividualData> load_dataset(const fs::path& dir, const Manifest& m) {
  auto data = ingest_file((dir / m.dataset).string());
  if (data.size() != m.ids.size()) throw IoError("dataset does not match manifest individual count");
  return data;
}

fs::path pool_path(const fs::path& dir, const std::string& id) { return dir / ("pool_" + safe_name(id) + ".csv"); }
fs::path effects_path(const fs::path& dir, const std::string& id) {
  return dir / ("effects_" + safe_name(id) + ".csv");
}
fs::path theta_path(const fs::path& dir, const std::string& id) { return dir / ("theta_" + safe_name(id) + ".csv"); }
fs::path recovered_path(const fs::path& dir, const std::string& id) {
  return dir / ("recovered_" + safe_name(id) + ".csv");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

// ---------------------------------------------------------------------------
// Shared option plumbing

struct CommonOpts {
  int model = 1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string preset = "desk";
  int iterations = -1, burn_in = -1, thin = -1, chains = -1, jobs = 0;
  std::string in_path, out_path;
};

void add_seed(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--seed", o.seed, "RNG seed (required, no wall-clock default)")->required();
}

Stage1Config stage1_config(const CommonOpts& o) {
  Stage1Config cfg =
      o.preset == "paper" ? Stage1Config::paper(model_variant_from_int(o.model)) : Stage1Config::desk(model_variant_from_int(o.model));
  if (o.iterations > 0) cfg.iterations = o.iterations;
  if (o.burn_in >= 0) cfg.burn_in = o.burn_in;
  if (o.thin > 0) cfg.thin = o.thin;
  cfg.validate();
  return cfg;
}

Stage2Config stage2_config(const CommonOpts& o) {
  Stage2Config cfg;
  if (o.preset == "paper") {
    cfg.iterations = 20000;
    cfg.burn_in = 10000;
  }
  if (o.iterations > 0) cfg.iterations = o.iterations;
  if (o.burn_in >= 0) cfg.burn_in = o.burn_in;
  if (o.thin > 0) cfg.thin = o.thin;
  if (o.chains > 0) cfg.chains = o.chains;
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_simulate(const CommonOpts& o, int individuals, int visits, int locations, int eyes,
                 const std::string& truth_preset) {
  SimulateConfig cfg;
  cfg.n_individuals = individuals;
  cfg.visits_per_eye = visits;
  cfg.locations_per_hemifield = locations;
  cfg.eyes = eyes;
  if (truth_preset == "table2")
    cfg.truth = SimulateTruth::table2_model3();
  else if (truth_preset == "exploratory")
    cfg.truth = SimulateTruth::exploratory_model3();
  else if (truth_preset != "default")
    throw std::invalid_argument("unknown truth preset: " + truth_preset);
  cfg.truth.model = model_variant_from_int(o.model);
  cfg.validate();

  const fs::path dir = o.out_path;
  ensure_dir(dir);
  RngStream rng(o.seed, kStreamSimulate);
  const auto [records, gt] = simulate(cfg, rng);
  write_records((dir / "dataset.csv").string(), records);
  write_truth((dir / "truth.txt").string(), gt, cfg);

  std::size_t zeros = 0;
  for (const auto& r : records) zeros += r.sensitivity_db == 0.0;
  std::cout << "individuals=" << individuals << " observations=" << records.size() << " censored_rate="
            << static_cast<double>(zeros) / records.size() << " capped=" << gt.capped_count << "\n";
  return 0;
}

int cmd_fit_stage1(const CommonOpts& o) {
  const Stage1Config cfg = stage1_config(o);
  const fs::path dir = o.out_path;
  ensure_dir(dir);
  const auto data = ingest_file(o.in_path);
  if (data.empty()) throw IoError("no usable individuals in " + o.in_path);

  Manifest m;
  m.model = cfg.model;
  m.dataset = "dataset.csv";
  for (const auto& d : data) m.ids.push_back(d.individual_id);
  if (fs::absolute(o.in_path) != fs::absolute(dir / m.dataset)) fs::copy_file(o.in_path, dir / m.dataset, fs::copy_options::overwrite_existing);
  write_manifest(dir, m);

  std::mutex io_mx;
  run_parallel(data.size(), o.jobs, [&](std::size_t i) {
    RngStream rng(o.seed, individual_stream(kStreamStage1, data[i].individual_id));
    const SamplePool pool = fit_individual(data[i], cfg, rng);
    write_pool(pool_path(dir, pool.individual_id).string(), pool);
    write_pool_effects(effects_path(dir, pool.individual_id).string(), EffectIndex(data[i]), pool);
    std::lock_guard<std::mutex> lk(io_mx);
    std::cerr << "stage1: " << pool.individual_id << " done (" << pool.draws.size() << " draws)\n";
  });
  std::cout << "stage1 pools written for " << data.size() << " individuals\n";
  return 0;
}

void write_stage2_outputs(const fs::path& dir, const Stage2Result& res) {
  for (std::size_t c = 0; c < res.chains.size(); ++c)
    write_chain_csv((dir / ("chain_" + std::to_string(c + 1) + ".csv")).string(), res.columns,
                    res.chains[c].population_draws);

  // per-individual theta draws, chains concatenated in order
  const auto cols = pool_columns(res.model);
  for (std::size_t i = 0; i < res.ids.size(); ++i) {
    std::vector<std::vector<double>> rows;
    for (const auto& chain : res.chains)
      for (const auto& draws : chain.theta_draws) rows.push_back(pool_row(draws[i], res.model));
    write_chain_csv(theta_path(dir, res.ids[i]).string(), cols, rows);
  }
}

std::pair<std::vector<SummaryRow>, std::vector<std::pair<std::string, double>>> summarize_chains(
    const std::vector<std::string>& columns, const std::vector<std::vector<std::vector<double>>>& chains) {
  std::vector<SummaryRow> summary;
  std::vector<std::pair<std::string, double>> rhats;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    std::vector<double> pooled;
    std::vector<std::vector<double>> per_chain;
    for (const auto& chain : chains) {
      std::vector<double> v;
      for (const auto& row : chain) v.push_back(row[j]);
      pooled.insert(pooled.end(), v.begin(), v.end());
      per_chain.push_back(std::move(v));
    }
    summary.push_back(summarize_draws(columns[j], pooled));
    rhats.emplace_back(columns[j], split_rhat(per_chain));
  }
  return {summary, rhats};
}

void write_rhat_csv(const fs::path& path, const std::vector<std::pair<std::string, double>>& rhats) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "parameter,rhat\n";
  for (const auto& [name, r] : rhats) out << name << ',' << format_double(r) << "\n";
}

int cmd_fit_stage2(const CommonOpts& o) {
  const Stage2Config cfg = stage2_config(o);
  const fs::path dir = o.in_path;
  const fs::path out = o.out_path.empty() ? dir : fs::path(o.out_path);
  ensure_dir(out);
  const Manifest m = read_manifest(dir);
  if (o.model != 0 && model_variant_from_int(o.model) != m.model)
    throw std::invalid_argument("requested model does not match the fitted artifacts in " + dir.string());

  std::vector<SamplePool> pools;
  std::vector<std::string> missing;
  for (const auto& id : m.ids) {
    const fs::path p = pool_path(dir, id);
    if (!fs::exists(p)) {
      missing.push_back(id);
      continue;
    }
    pools.push_back(read_pool(p.string(), id, m.model));
    if (pools.back().draws.size() < 100)
      std::cerr << "warning: pool for " << id << " has only " << pools.back().draws.size() << " draws\n";
  }
  if (!missing.empty()) {
    std::string msg = "missing stage-1 pools for:";
    for (const auto& id : missing) msg += " " + id;
    throw IoError(msg);
  }

  const Stage2Result res = run_stage2(pools, cfg, o.seed);
  write_stage2_outputs(out, res);

  std::vector<std::vector<std::vector<double>>> chains;
  for (const auto& c : res.chains) chains.push_back(c.population_draws);
  const auto [summary, rhats] = summarize_chains(res.columns, chains);
  write_summary_csv((out / "summary.csv").string(), summary);
  write_rhat_csv(out / "rhat.csv", rhats);
  for (const auto& [name, r] : rhats) std::cout << "rhat " << name << " " << format_double(r) << "\n";
  double worst = 0.0;
  for (const auto& [name, r] : rhats) worst = std::max(worst, r);
  std::cerr << "stage2: " << res.chains.size() << " chains, max rhat " << worst << "\n";
  return 0;
}

std::vector<SamplePoolDraw> read_theta_chain(const fs::path& dir, const std::string& id, ModelVariant model) {
  const auto [cols, rows] = read_chain_csv(theta_path(dir, id).string());
  if (cols != pool_columns(model)) throw IoError(theta_path(dir, id).string() + ": header does not match model");
  std::vector<SamplePoolDraw> out;
  for (const auto& r : rows) out.push_back(pool_draw_from_row(r, model));
  return out;
}

void write_recovered(const fs::path& path, const EffectIndex& idx, const RecoveredEffects& rec) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const auto cols = effect_columns(idx);
  out << "draw_index";
  for (const auto& c : cols) out << ',' << c;
  out << "\n";
  char buf[32];
  for (std::size_t k = 0; k < rec.draws.size(); ++k) {
    out << rec.draw_indices[k];
    const auto row = effect_row(idx, rec.draws[k]);
    for (double v : row) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
}

std::pair<std::vector<int>, std::vector<RandomEffects>> read_recovered(const fs::path& path, const EffectIndex& idx) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  std::vector<int> indices;
  std::vector<RandomEffects> draws;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    indices.push_back(std::stoi(f[0]));
    std::vector<double> v(f.size() - 1);
    for (std::size_t i = 1; i < f.size(); ++i) v[i - 1] = std::stod(f[i]);
    draws.push_back(effects_from_row(idx, v));
  }
  return {indices, draws};
}

void recover_all(const fs::path& dir, const Manifest& m, const std::vector<IndividualData>& data,
                 const RecoveryConfig& rcfg, std::uint64_t seed, int jobs) {
  std::mutex io_mx;
  run_parallel(data.size(), jobs, [&](std::size_t i) {
    const auto chain = read_theta_chain(dir, data[i].individual_id, m.model);
    RngStream rng(seed, individual_stream(kStreamRecover, data[i].individual_id));
    const RecoveredEffects rec = recover_random_effects(data[i], chain, m.model, rcfg, rng);
    write_recovered(recovered_path(dir, data[i].individual_id), EffectIndex(data[i]), rec);
    std::lock_guard<std::mutex> lk(io_mx);
    std::cerr << "recover: " << data[i].individual_id << " done (" << rec.draws.size() << " draws, " << rec.skipped
              << " skipped)\n";
  });
}

int cmd_recover(const CommonOpts& o, int draws, int inner) {
  const fs::path dir = o.in_path;
  const Manifest m = read_manifest(dir);
  const auto data = load_dataset(dir, m);
  RecoveryConfig rcfg;
  if (draws > 0) rcfg.draws = draws;
  if (inner > 0) {
    rcfg.inner_iterations = inner;
    rcfg.adapt_iterations = inner / 2;
  }
  recover_all(dir, m, data, rcfg, o.seed, o.jobs);
  std::cout << "recovered effects written for " << data.size() << " individuals\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& o, int draws, int inner) {
  const fs::path dir = o.in_path;
  const Manifest m = read_manifest(dir);
  if (o.model != 0 && model_variant_from_int(o.model) != m.model)
    throw std::invalid_argument("requested model does not match the fitted artifacts in " + dir.string());
  const auto data = load_dataset(dir, m);

  // posterior predictive check over the stage-1 chains
  PppReport rep;
  std::vector<double> ppp(data.size());
  run_parallel(data.size(), o.jobs, [&](std::size_t i) {
    SamplePool pool = read_pool(pool_path(dir, data[i].individual_id).string(), data[i].individual_id, m.model);
    pool.effects = read_pool_effects(effects_path(dir, data[i].individual_id).string(), EffectIndex(data[i]));
    RngStream rng(o.seed, individual_stream(kStreamPpc, data[i].individual_id));
    ppp[i] = ppc_individual(data[i], pool, rng);
  });
  for (std::size_t i = 0; i < data.size(); ++i) rep.per_individual.emplace_back(data[i].individual_id, ppp[i]);
  rep.finalize();
  write_ppp_csv((dir / "ppp.csv").string(), rep);
  std::cout << "mean_ppp " << format_double(rep.mean_ppp) << "\n";
  for (const auto& id : rep.flagged) std::cerr << "flagged individual: " << id << "\n";

  // DIC over matched stage-2 and recovered draws
  bool have_recovered = true;
  for (const auto& d : data) have_recovered = have_recovered && fs::exists(recovered_path(dir, d.individual_id));
  if (!have_recovered) {
    std::cerr << "note: recovered effects missing, running recovery with default settings\n";
    RecoveryConfig rcfg;
    if (draws > 0) rcfg.draws = draws;
    if (inner > 0) {
      rcfg.inner_iterations = inner;
      rcfg.adapt_iterations = inner / 2;
    }
    recover_all(dir, m, data, rcfg, o.seed, o.jobs);
  }

  std::vector<RecoveredEffects> recovered;
  std::vector<std::vector<SamplePoolDraw>> theta_draws;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const EffectIndex idx(data[i]);
    auto [indices, effect_draws] = read_recovered(recovered_path(dir, data[i].individual_id), idx);
    RecoveredEffects rec;
    rec.individual_id = data[i].individual_id;
    rec.draw_indices = std::move(indices);
    rec.draws = std::move(effect_draws);
    const auto chain = read_theta_chain(dir, data[i].individual_id, m.model);
    if (i == 0) {
      theta_draws.resize(rec.draw_indices.size());
      for (auto& row : theta_draws) row.resize(data.size());
    }
    if (rec.draw_indices.size() != theta_draws.size())
      throw IoError("recovered draw counts differ between individuals; re-run recover-effects");
    for (std::size_t k = 0; k < rec.draw_indices.size(); ++k)
      theta_draws[k][i] = chain.at(rec.draw_indices[k]);
    recovered.push_back(std::move(rec));
  }
  const DicReport dic = compute_dic(data, theta_draws, recovered, m.model);
  write_dic_csv((dir / "dic.csv").string(), dic);
  std::cout << "dic " << format_double(dic.dic) << " dbar " << format_double(dic.dbar) << " p_d "
            << format_double(dic.p_d) << "\n";
  return 0;
}

int cmd_summarize(const CommonOpts& o) {
  const fs::path dir = o.in_path;
  std::vector<std::vector<std::vector<double>>> chains;
  std::vector<std::string> columns;
  for (int c = 1;; ++c) {
    const fs::path p = dir / ("chain_" + std::to_string(c) + ".csv");
    if (!fs::exists(p)) break;
    auto [cols, rows] = read_chain_csv(p.string());
    if (columns.empty())
      columns = cols;
    else if (columns != cols)
      throw IoError("chain files disagree on columns");
    chains.push_back(std::move(rows));
  }
  if (chains.empty()) throw IoError("no chain files found in " + dir.string());
  const auto [summary, rhats] = summarize_chains(columns, chains);
  const fs::path out = o.out_path.empty() ? dir : fs::path(o.out_path);
  ensure_dir(out);
  write_summary_csv((out / "summary.csv").string(), summary);
  write_rhat_csv(out / "rhat.csv", rhats);
  std::cout << "parameter,mean,sd,median,ci2.5,ci97.5,rhat\n";
  for (std::size_t j = 0; j < summary.size(); ++j) {
    const auto& r = summary[j];
    std::cout << r.parameter << ',' << format_double(r.mean) << ',' << format_double(r.sd) << ','
              << format_double(r.median) << ',' << format_double(r.ci_lo) << ',' << format_double(r.ci_hi) << ','
              << format_double(rhats[j].second) << "\n";
  }
  return 0;
}

// Pull options from a plain key=value file named by --config. File entries
// are appended only when the same flag is absent from the command line, so
// explicit flags always win.
void apply_config_file(std::vector<std::string>& args) {
  std::string cfg_path;
  for (auto it = args.begin(); it != args.end();) {
    if (*it == "--config") {
      if (std::next(it) == args.end()) {
        cfg_path = "";
        it = args.erase(it);
        throw IoError("--config requires a path");
      }
      cfg_path = *std::next(it);
      it = args.erase(it, it + 2);
    } else if (it->rfind("--config=", 0) == 0) {
      cfg_path = it->substr(9);
      it = args.erase(it);
    } else {
      ++it;
    }
  }
  if (cfg_path.empty()) return;
  std::ifstream in(cfg_path);
  if (!in) throw IoError("cannot read config file " + cfg_path);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty()) continue;
    const std::string flag = "--" + key;
    bool present = false;
    for (const auto& a : args) present = present || a == flag || a.rfind(flag + "=", 0) == 0;
    if (!present) {
      args.push_back(flag);
      args.push_back(val);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage Bayesian fitting pipeline for longitudinal visual-field models"};
  app.require_subcommand(1);

  CommonOpts o;
  int model_check = 0;  // for subcommands where the artifacts already fix the model
  int individuals = 20, visits = 10, locations = 26, eyes = 2;
  std::string truth_preset = "default";
  int rec_draws = 0, rec_inner = 0;

  auto add_common_mcmc = [&](CLI::App* cmd) {
    cmd->add_option("--iterations", o.iterations, "Total MCMC iterations");
    cmd->add_option("--burn-in", o.burn_in, "Burn-in iterations");
    cmd->add_option("--thin", o.thin, "Thinning interval");
    cmd->add_option("--preset", o.preset, "Run-length preset")->check(CLI::IsMember({"desk", "paper"}));
    add_seed(cmd, o);
  };

  CLI::App* sim = app.add_subcommand("simulate", "Generate a synthetic dataset with known truth");
  sim->add_option("--model", o.model, "Model variant 1, 2 or 3")->check(CLI::Range(1, 3));
  add_seed(sim, o);
  sim->add_option("--individuals", individuals, "Number of individuals")->check(CLI::PositiveNumber);
  sim->add_option("--visits", visits, "Visits per eye")->check(CLI::PositiveNumber);
  sim->add_option("--locations", locations, "Locations per hemifield")->check(CLI::Range(1, 26));
  sim->add_option("--eyes", eyes, "Eyes per individual")->check(CLI::Range(1, 2));
  sim->add_option("--truth-preset", truth_preset, "Truth values: default, table2, exploratory");
  sim->add_option("--out", o.out_path, "Output directory")->required();

  CLI::App* s1 = app.add_subcommand("fit-stage1", "Fit each individual independently");
  s1->add_option("--model", o.model, "Model variant 1, 2 or 3")->check(CLI::Range(1, 3));
  add_common_mcmc(s1);
  s1->add_option("--in", o.in_path, "Dataset CSV")->required();
  s1->add_option("--out", o.out_path, "Run directory for pools and manifest")->required();
  s1->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");

  CLI::App* s2 = app.add_subcommand("fit-stage2", "Combine the stage-1 pools into a population fit");
  s2->add_option("--model", model_check, "Model variant, must match the fitted artifacts")->check(CLI::Range(1, 3));
  add_common_mcmc(s2);
  s2->add_option("--chains", o.chains, "Number of chains")->check(CLI::Range(2, 64));
  s2->add_option("--in", o.in_path, "Run directory holding stage-1 pools")->required();
  s2->add_option("--out", o.out_path, "Output directory (defaults to the run directory)");

  CLI::App* rec = app.add_subcommand("recover-effects", "Recover location-level effects per stage-2 draw");
  rec->add_option("--model", model_check, "Model variant, must match the fitted artifacts")->check(CLI::Range(1, 3));
  add_seed(rec, o);
  rec->add_option("--in", o.in_path, "Run directory")->required();
  rec->add_option("--draws", rec_draws, "Stage-2 draws to condition on");
  rec->add_option("--inner-iterations", rec_inner, "Inner chain length per draw");
  rec->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");

  CLI::App* ev = app.add_subcommand("evaluate", "Posterior predictive check and DIC");
  ev->add_option("--model", model_check, "Model variant, must match the fitted artifacts")->check(CLI::Range(1, 3));
  add_seed(ev, o);
  ev->add_option("--in", o.in_path, "Run directory")->required();
  ev->add_option("--draws", rec_draws, "Recovery draws if recovery must be run");
  ev->add_option("--inner-iterations", rec_inner, "Recovery inner chain length");
  ev->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");

  CLI::App* sum = app.add_subcommand("summarize", "Summaries and split-Rhat from saved chains");
  sum->add_option("--in", o.in_path, "Directory holding chain_*.csv")->required();
  sum->add_option("--out", o.out_path, "Output directory (defaults to --in)");

  app.footer("Options may also come from a key-value file given as --config PATH;\nexplicit command-line flags take precedence over file entries.");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    apply_config_file(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) return cmd_simulate(o, individuals, visits, locations, eyes, truth_preset);
    if (s1->parsed()) return cmd_fit_stage1(o);
    o.model = model_check;  // 0 means "take the model from the manifest"
    if (s2->parsed()) return cmd_fit_stage2(o);
    if (rec->parsed()) return cmd_recover(o, rec_draws, rec_inner);
    if (ev->parsed()) return cmd_evaluate(o, rec_draws, rec_inner);
    if (sum->parsed()) return cmd_summarize(o);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
