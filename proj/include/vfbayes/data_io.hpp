#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "model.hpp"

namespace vfb {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Grid geometry: 54 raw test locations, two of which fall on the blind spot
// and are dropped. The remaining 52 are ranked in index order; ranks 1-26
// form hemifield 1 (superior), ranks 27-52 hemifield 2 (inferior).

inline constexpr int kBlindSpotA = 26;
inline constexpr int kBlindSpotB = 35;

inline bool is_blind_spot(int raw_location) { return raw_location == kBlindSpotA || raw_location == kBlindSpotB; }

/// raw 1..54 -> (hemifield, location); blind-spot entries return {0, 0}.
inline std::pair<int, int> raw_to_hemifield(int raw_location) {
  if (raw_location < 1 || raw_location > 54) throw IoError("location index out of range 1..54");
  if (is_blind_spot(raw_location)) return {0, 0};
  int rank = raw_location;
  if (raw_location > kBlindSpotA) --rank;
  if (raw_location > kBlindSpotB) --rank;
  return rank <= 26 ? std::make_pair(1, rank) : std::make_pair(2, rank - 26);
}

inline int hemifield_to_raw(int hemifield, int location) {
  int rank = (hemifield - 1) * 26 + location;
  int raw = rank;
  if (raw >= kBlindSpotA) ++raw;
  if (raw >= kBlindSpotB) ++raw;
  return raw;
}

// ---------------------------------------------------------------------------
// Record file

struct VfRecord {
  std::string patient_id;
  int eye = 1;  // 1 = OD, 2 = OS
  double years = 0.0;
  int raw_location = 1;
  double sensitivity_db = 0.0;
  int reliable = 1;
};

inline const char* kRecordHeader = "patient_id,eye,years,location,sensitivity_db,reliable";

inline void write_records(const std::string& path, const std::vector<VfRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << kRecordHeader << "\n";
  for (const auto& r : records)
    out << r.patient_id << ',' << (r.eye == 1 ? "OD" : "OS") << ',' << format_double(r.years) << ','
        << r.raw_location << ',' << format_double(r.sensitivity_db) << ',' << r.reliable << "\n";
  if (!out) throw IoError("write failed: " + path);
}

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

inline std::vector<VfRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  std::vector<VfRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 6) throw IoError(path + ":" + std::to_string(lineno) + ": expected 6 fields");
    VfRecord r;
    try {
      r.patient_id = f[0];
      if (f[1] == "OD" || f[1] == "1")
        r.eye = 1;
      else if (f[1] == "OS" || f[1] == "2")
        r.eye = 2;
      else
        throw IoError("eye must be OD or OS");
      r.years = std::stod(f[2]);
      r.raw_location = std::stoi(f[3]);
      r.sensitivity_db = std::stod(f[4]);
      r.reliable = std::stoi(f[5]);
    } catch (const std::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed row (" + e.what() + ")");
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion

/// Groups records per individual, drops unreliable rows and blind-spot
/// locations, computes years since each individual's first visit and sets
/// censoring flags where the recorded sensitivity is 0 dB.
inline std::vector<IndividualData> ingest(const std::vector<VfRecord>& records) {
  std::map<std::string, std::vector<const VfRecord*>> by_id;
  for (const auto& r : records) {
    if (r.sensitivity_db < 0.0 || r.sensitivity_db > 50.0) throw IoError("sensitivity outside [0, 50] for patient " + r.patient_id);
    if (!r.reliable) continue;
    if (is_blind_spot(r.raw_location)) continue;
    by_id[r.patient_id].push_back(&r);
  }
  std::vector<IndividualData> out;
  for (auto& [id, rows] : by_id) {
    IndividualData ind;
    ind.individual_id = id;
    double first = rows.front()->years;
    for (const auto* r : rows) first = std::min(first, r->years);
    std::array<std::set<double>, 2> times;
    for (const auto* r : rows) times[r->eye - 1].insert(r->years - first);
    for (int e = 0; e < 2; ++e) ind.visit_times[e].assign(times[e].begin(), times[e].end());
    std::set<std::tuple<int, double, int>> seen;
    for (const auto* r : rows) {
      if (!seen.insert({r->eye, r->years, r->raw_location}).second)
        throw IoError("duplicate (patient, eye, visit, location) record for patient " + id);
      Observation o;
      o.individual = static_cast<int>(out.size()) + 1;
      o.eye = r->eye;
      std::tie(o.hemifield, o.location) = raw_to_hemifield(r->raw_location);
      o.years = r->years - first;
      const auto& vt = ind.visit_times[r->eye - 1];
      o.visit = 1 + static_cast<int>(std::lower_bound(vt.begin(), vt.end(), o.years) - vt.begin());
      o.observed_db = r->sensitivity_db;
      o.censored = (r->sensitivity_db == 0.0);
      o.validate();
      ind.observations.push_back(o);
    }
    std::sort(ind.observations.begin(), ind.observations.end(), [](const Observation& a, const Observation& b) {
      return std::tie(a.eye, a.visit, a.hemifield, a.location) < std::tie(b.eye, b.visit, b.hemifield, b.location);
    });
    out.push_back(std::move(ind));
  }
  return out;
}

inline std::vector<IndividualData> ingest_file(const std::string& path) { return ingest(read_records(path)); }

// ---------------------------------------------------------------------------
// Synthetic generator

struct SimulateTruth {
  ModelVariant model = ModelVariant::Model1;
  FixedEffects fixed{20.0, -0.3};
  VarianceParams var{2.82, -0.08, 13.0};
  GveScale gve{1.87};
  Mat2 sigma_alpha, sigma_gamma, sigma_eta, sigma_lambda;

  SimulateTruth() {
    sigma_alpha(0, 0) = 25.0;
    sigma_alpha(1, 1) = 0.09;
    sigma_gamma(0, 0) = 4.0;
    sigma_gamma(1, 1) = 0.04;
    sigma_eta(0, 0) = 2.0;
    sigma_eta(1, 1) = 0.02;
    sigma_lambda(0, 0) = 9.0;
    sigma_lambda(1, 1) = 0.04;
  }

  /// Variance-link coefficients as reported for the fitted model.
  static SimulateTruth table2_model3() {
    SimulateTruth t;
    t.model = ModelVariant::Model3;
    t.fixed = {19.89, -0.31};
    t.var = {2.82, -0.08, 13.0};
    return t;
  }

  /// Exploratory-analysis variance-link pair.
  static SimulateTruth exploratory_model3() {
    SimulateTruth t = table2_model3();
    t.var.beta_star0 = 2.60;
    t.var.beta_star1 = -0.06;
    return t;
  }
};

struct SimulateConfig {
  SimulateTruth truth;
  int n_individuals = 20;
  int visits_per_eye = 10;
  int eyes = 2;
  int locations_per_hemifield = 26;
  double visit_spacing_years = 0.5;
  double visit_jitter_years = 1.0 / 12.0;
  double cap_db = 50.0;

  void validate() const {
    if (n_individuals < 1 || visits_per_eye < 1) throw std::invalid_argument("simulate: counts must be positive");
    if (eyes < 1 || eyes > 2) throw std::invalid_argument("simulate: eyes must be 1 or 2");
    if (locations_per_hemifield < 1 || locations_per_hemifield > 26)
      throw std::invalid_argument("simulate: locations per hemifield must be 1..26");
  }
};

struct GeneratorTruth {
  SimulateTruth truth;
  std::vector<std::string> ids;
  std::vector<EffectIndex> index;
  std::vector<RandomEffects> effects;
  int capped_count = 0;
};

inline std::pair<std::vector<VfRecord>, GeneratorTruth> simulate(const SimulateConfig& cfg, RngStream& rng) {
  cfg.validate();
  const SimulateTruth& tr = cfg.truth;
  const Mat2 La = cholesky2(tr.sigma_alpha), Lg = cholesky2(tr.sigma_gamma), Le = cholesky2(tr.sigma_eta),
             Ll = cholesky2(tr.sigma_lambda);
  GeneratorTruth gt;
  gt.truth = tr;
  std::vector<VfRecord> records;
  for (int i = 1; i <= cfg.n_individuals; ++i) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "P%03d", i);
    const std::string id = idbuf;

    std::vector<double> times(cfg.visits_per_eye);
    times[0] = 0.0;
    for (int t = 1; t < cfg.visits_per_eye; ++t)
      times[t] = t * cfg.visit_spacing_years + cfg.visit_jitter_years * (2.0 * rng.uniform() - 1.0);

    // dense skeleton so the effect index matches the emitted observations
    IndividualData skel;
    skel.individual_id = id;
    for (int e = 1; e <= cfg.eyes; ++e) skel.visit_times[e - 1] = times;
    for (int e = 1; e <= cfg.eyes; ++e)
      for (int t = 1; t <= cfg.visits_per_eye; ++t)
        for (int h = 1; h <= 2; ++h)
          for (int l = 1; l <= cfg.locations_per_hemifield; ++l) {
            Observation o;
            o.individual = i;
            o.eye = e;
            o.hemifield = h;
            o.location = l;
            o.visit = t;
            o.years = times[t - 1];
            skel.observations.push_back(o);
          }
    EffectIndex idx(skel);
    RandomEffects re = RandomEffects::zeros(idx);
    re.alpha = sample_mvn_chol<2>({0.0, 0.0}, La, rng);
    for (auto& g : re.gamma) g = sample_mvn_chol<2>({0.0, 0.0}, Lg, rng);
    for (auto& g : re.eta) g = sample_mvn_chol<2>({0.0, 0.0}, Le, rng);
    for (auto& g : re.lambda) g = sample_mvn_chol<2>({0.0, 0.0}, Ll, rng);
    if (has_visit_effect(tr.model))
      for (auto& p : re.phi) p = sample_gve_t(std::sqrt(tr.gve.sigma2_phi), rng);

    for (auto& o : skel.observations) {
      const ObsSlots s = resolve_slots(o, idx);
      const double mu = linear_predictor(tr.fixed, re, s, o.years, tr.model);
      const double sd = residual_sd(mu, tr.var, tr.model);
      double y = mu + sd * rng.normal();
      if (y > cfg.cap_db) {
        y = cfg.cap_db;
        ++gt.capped_count;
      }
      VfRecord r;
      r.patient_id = id;
      r.eye = o.eye;
      r.years = o.years;
      r.raw_location = hemifield_to_raw(o.hemifield, o.location);
      r.sensitivity_db = censor(y);
      r.reliable = 1;
      records.push_back(std::move(r));
    }
    gt.ids.push_back(id);
    gt.index.push_back(std::move(idx));
    gt.effects.push_back(std::move(re));
  }
  return {std::move(records), std::move(gt)};
}

// ---------------------------------------------------------------------------
// Truth record: flat key-value text

inline void write_truth(const std::string& path, const GeneratorTruth& gt, const SimulateConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  auto kv = [&out](const std::string& k, double v) { out << k << "=" << format_double(v) << "\n"; };
  out << "model=" << static_cast<int>(gt.truth.model) << "\n";
  kv("beta0", gt.truth.fixed.beta0);
  kv("beta1", gt.truth.fixed.beta1);
  kv("beta_star0", gt.truth.var.beta_star0);
  kv("beta_star1", gt.truth.var.beta_star1);
  kv("sigma2", gt.truth.var.sigma2);
  kv("sigma2_phi", gt.truth.gve.sigma2_phi);
  const std::pair<const char*, const Mat2*> blocks[] = {{"sigma_alpha", &gt.truth.sigma_alpha},
                                                        {"sigma_gamma", &gt.truth.sigma_gamma},
                                                        {"sigma_eta", &gt.truth.sigma_eta},
                                                        {"sigma_lambda", &gt.truth.sigma_lambda}};
  for (const auto& [name, m] : blocks) {
    kv(std::string(name) + ".11", (*m)(0, 0));
    kv(std::string(name) + ".21", (*m)(1, 0));
    kv(std::string(name) + ".22", (*m)(1, 1));
  }
  kv("capped_count", gt.capped_count);
  kv("n_individuals", cfg.n_individuals);
  kv("visits_per_eye", cfg.visits_per_eye);
  for (std::size_t i = 0; i < gt.ids.size(); ++i) {
    const std::string p = "re." + gt.ids[i] + ".";
    const EffectIndex& idx = gt.index[i];
    const RandomEffects& re = gt.effects[i];
    kv(p + "alpha0", re.alpha[0]);
    kv(p + "alpha1", re.alpha[1]);
    for (int e = 1; e <= 2; ++e) {
      if (idx.gamma_slot[e - 1] < 0) continue;
      kv(p + "gamma0.e" + std::to_string(e), re.gamma[idx.gamma_slot[e - 1]][0]);
      kv(p + "gamma1.e" + std::to_string(e), re.gamma[idx.gamma_slot[e - 1]][1]);
      for (int h = 1; h <= 2; ++h) {
        if (idx.eta_slot[e - 1][h - 1] < 0) continue;
        const std::string eh = ".e" + std::to_string(e) + ".h" + std::to_string(h);
        kv(p + "eta0" + eh, re.eta[idx.eta_slot[e - 1][h - 1]][0]);
        kv(p + "eta1" + eh, re.eta[idx.eta_slot[e - 1][h - 1]][1]);
        for (int l = 1; l <= EffectIndex::kMaxLoc; ++l) {
          const int ls = idx.lambda(e, h, l);
          if (ls < 0) continue;
          kv(p + "lambda0" + eh + ".l" + std::to_string(l), re.lambda[ls][0]);
          kv(p + "lambda1" + eh + ".l" + std::to_string(l), re.lambda[ls][1]);
        }
      }
      for (std::size_t t = 1; t <= idx.phi_slot[e - 1].size(); ++t) {
        const int ps = idx.phi_slot[e - 1][t - 1];
        if (ps < 0) continue;
        kv(p + "phi.e" + std::to_string(e) + ".t" + std::to_string(t), re.phi[ps]);
      }
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::map<std::string, double> read_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::map<std::string, double> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
  }
  return out;
}

}  // namespace vfb
