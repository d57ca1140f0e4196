#include "cwce/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cwce/errors.hpp"

namespace cwce {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw IoError("parse_double: not a number: " + s);
  return v;
}

namespace {

json matrix3_to_json(const Eigen::Matrix3d& m) {
  json rows = json::array();
  for (int i = 0; i < 3; ++i) {
    json row = json::array();
    for (int j = 0; j < 3; ++j) row.push_back(format_double(m(i, j)));
    rows.push_back(row);
  }
  return rows;
}

Eigen::Matrix3d matrix3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("expected a 3x3 matrix");
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_array() || j[i].size() != 3) throw IoError("expected a 3x3 matrix");
    for (int k = 0; k < 3; ++k) m(i, k) = parse_double(j[i][k].get<std::string>());
  }
  return m;
}

double num_field(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_string()) return parse_double(v.get<std::string>());
  return v.get<double>();
}

}  // namespace

json params_to_json(const ScmParams& p) {
  json j;
  j["kind"] = to_string(p.kind);
  j["mu"] = format_double(p.mu);
  j["beta1"] = format_double(p.beta1);
  j["beta2"] = format_double(p.beta2);
  j["beta_c"] = format_double(p.beta_c);
  j["alpha0"] = format_double(p.alpha0);
  j["alpha1"] = format_double(p.alpha1);
  j["alpha2"] = format_double(p.alpha2);
  j["alpha3"] = format_double(p.alpha3);
  j["tau0"] = format_double(p.tau0);
  j["tau1"] = format_double(p.tau1);
  j["tau2"] = format_double(p.tau2);
  j["sigma"] = format_double(p.sigma);
  j["latent_corr"] = matrix3_to_json(p.latent_corr);
  json law = json::array();
  for (const auto& atom : p.confounder_law)
    law.push_back({{"value", format_double(atom.value)}, {"prob", format_double(atom.prob)}});
  j["confounder_law"] = law;
  j["delta"] = format_double(p.delta);
  return j;
}

ScmParams params_from_json(const json& j) {
  ScmParams p;
  p.kind = scm_kind_from_string(j.at("kind").get<std::string>());
  p.mu = num_field(j, "mu");
  p.beta1 = num_field(j, "beta1");
  p.beta2 = num_field(j, "beta2");
  p.beta_c = num_field(j, "beta_c");
  p.alpha0 = num_field(j, "alpha0");
  p.alpha1 = num_field(j, "alpha1");
  p.alpha2 = num_field(j, "alpha2");
  p.alpha3 = num_field(j, "alpha3");
  p.tau0 = num_field(j, "tau0");
  p.tau1 = num_field(j, "tau1");
  p.tau2 = num_field(j, "tau2");
  p.sigma = num_field(j, "sigma");
  if (j.contains("latent_corr")) p.latent_corr = matrix3_from_json(j.at("latent_corr"));
  p.confounder_law.clear();
  if (j.contains("confounder_law")) {
    for (const auto& atom : j.at("confounder_law"))
      p.confounder_law.push_back({num_field(atom, "value"), num_field(atom, "prob")});
  }
  p.delta = j.contains("delta") ? num_field(j, "delta") : 0.0;
  p.validate();
  return p;
}

json fit_to_json(const RemlFit& fit) {
  json j;
  json beta = json::array();
  for (int i = 0; i < 4; ++i) beta.push_back(format_double(fit.beta(i)));
  j["beta"] = beta;
  j["tau0"] = format_double(fit.tau0);
  j["tau1"] = format_double(fit.tau1);
  j["tau2"] = format_double(fit.tau2);
  j["sigma"] = format_double(fit.sigma);
  j["sigma_u"] = matrix3_to_json(fit.sigma_u);
  j["restricted_loglik"] = format_double(fit.restricted_loglik);
  j["converged"] = fit.converged;
  j["n_iter"] = fit.n_iter;
  j["gradient_norm"] = format_double(fit.gradient_norm);
  j["response_transform"] =
      fit.spec.response_transform == ResponseTransform::Log ? "log" : "identity";
  j["random_cov_structure"] =
      fit.spec.random_cov_structure == RandomCovStructure::Unstructured ? "unstructured"
                                                                        : "diagonal";
  return j;
}

RemlFit fit_from_json(const json& j) {
  RemlFit fit;
  for (int i = 0; i < 4; ++i) fit.beta(i) = parse_double(j.at("beta")[i].get<std::string>());
  fit.tau0 = num_field(j, "tau0");
  fit.tau1 = num_field(j, "tau1");
  fit.tau2 = num_field(j, "tau2");
  fit.sigma = num_field(j, "sigma");
  fit.sigma_u = matrix3_from_json(j.at("sigma_u"));
  fit.restricted_loglik = num_field(j, "restricted_loglik");
  fit.converged = j.at("converged").get<bool>();
  fit.n_iter = j.at("n_iter").get<int>();
  fit.gradient_norm = num_field(j, "gradient_norm");
  fit.spec.response_transform = j.at("response_transform").get<std::string>() == "log"
                                    ? ResponseTransform::Log
                                    : ResponseTransform::Identity;
  fit.spec.random_cov_structure =
      j.at("random_cov_structure").get<std::string>() == "unstructured"
          ? RandomCovStructure::Unstructured
          : RandomCovStructure::Diagonal;
  return fit;
}

json dist_to_json(const CwceDistribution& d) {
  json j;
  switch (d.kind()) {
    case CwceDistribution::Kind::Gaussian:
      j["kind"] = "gaussian";
      j["mean"] = format_double(d.gaussian_mean());
      j["var"] = format_double(d.gaussian_var());
      break;
    case CwceDistribution::Kind::Degenerate:
      j["kind"] = "degenerate";
      j["value"] = format_double(d.value());
      break;
    case CwceDistribution::Kind::Discrete:
      j["kind"] = "discrete";
      j["p_minus1"] = format_double(d.p_minus1());
      j["p_0"] = format_double(d.p_0());
      j["p_plus1"] = format_double(d.p_plus1());
      break;
    case CwceDistribution::Kind::Grid: {
      j["kind"] = "grid";
      json pts = json::array(), dens = json::array();
      for (double v : d.grid_points()) pts.push_back(format_double(v));
      for (double v : d.grid_density()) dens.push_back(format_double(v));
      j["points"] = pts;
      j["density"] = dens;
      break;
    }
  }
  return j;
}

CwceDistribution dist_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian")
    return CwceDistribution::make_gaussian(num_field(j, "mean"), num_field(j, "var"));
  if (kind == "degenerate")
    return CwceDistribution::make_degenerate(num_field(j, "value"));
  if (kind == "discrete")
    return CwceDistribution::make_discrete(num_field(j, "p_minus1"), num_field(j, "p_0"),
                                           num_field(j, "p_plus1"));
  if (kind == "grid") {
    std::vector<double> pts, dens;
    for (const auto& v : j.at("points")) pts.push_back(parse_double(v.get<std::string>()));
    for (const auto& v : j.at("density")) dens.push_back(parse_double(v.get<std::string>()));
    return CwceDistribution::make_grid(std::move(pts), std::move(dens));
  }
  throw IoError("dist_from_json: unknown kind " + kind);
}

void write_panel(const Panel& panel, const std::filesystem::path& csv_path,
                 const std::filesystem::path& meta_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("write_panel: cannot open " + csv_path.string());
  const bool with_d = (panel.params.kind == ScmKind::TruncatedLmm);
  csv << "id,k,c,a,y" << (with_d ? ",d" : "") << ",u0,u1,u2,n_y\n";
  for (int i = 0; i < panel.n(); ++i) {
    const Individual& ind = panel.individuals[i];
    for (int k = 1; k <= static_cast<int>(ind.y.size()); ++k) {
      csv << i << ',' << k << ',' << format_double(ind.c[k - 1]) << ',' << ind.a[k - 1]
          << ',' << format_double(ind.y[k - 1]);
      if (with_d) csv << ',' << ind.d[k - 1];
      csv << ',' << format_double(ind.u0) << ',' << format_double(ind.u1) << ','
          << format_double(ind.u2) << ',' << format_double(ind.noise_y[k - 1]) << '\n';
    }
  }
  if (!csv) throw IoError("write_panel: write failed for " + csv_path.string());

  json meta;
  meta["params"] = params_to_json(panel.params);
  meta["seed"] = panel.seed;
  meta["n"] = panel.n();
  meta["m"] = panel.m;
  std::ofstream metaf(meta_path);
  if (!metaf) throw IoError("write_panel: cannot open " + meta_path.string());
  metaf << meta.dump(2) << '\n';
}

Panel read_panel(const std::filesystem::path& csv_path,
                 const std::filesystem::path& meta_path) {
  std::ifstream metaf(meta_path);
  if (!metaf) throw IoError("read_panel: cannot open " + meta_path.string());
  json meta = json::parse(metaf);
  Panel panel;
  panel.params = params_from_json(meta.at("params"));
  panel.seed = meta.at("seed").get<std::uint64_t>();
  panel.m = meta.at("m").get<int>();
  const int n = meta.at("n").get<int>();
  panel.individuals.resize(n);
  const bool with_d = (panel.params.kind == ScmKind::TruncatedLmm);
  for (Individual& ind : panel.individuals) {
    ind.noise_y.resize(panel.m);
    ind.noise_a.assign(panel.m, 0.0);  // assignment uniforms are not persisted
    ind.c.resize(panel.m);
    ind.a.resize(panel.m);
    ind.y.resize(panel.m);
    if (with_d) ind.d.resize(panel.m);
  }

  std::ifstream csv(csv_path);
  if (!csv) throw IoError("read_panel: cannot open " + csv_path.string());
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    auto next = [&]() {
      if (!std::getline(ss, field, ',')) throw IoError("read_panel: short row");
      return field;
    };
    const int id = std::stoi(next());
    const int k = std::stoi(next());
    if (id < 0 || id >= n || k < 1 || k > panel.m)
      throw IoError("read_panel: row out of range");
    Individual& ind = panel.individuals[id];
    ind.c[k - 1] = parse_double(next());
    ind.a[k - 1] = std::stoi(next());
    ind.y[k - 1] = parse_double(next());
    if (with_d) ind.d[k - 1] = std::stoi(next());
    ind.u0 = parse_double(next());
    ind.u1 = parse_double(next());
    ind.u2 = parse_double(next());
    ind.noise_y[k - 1] = parse_double(next());
  }
  return panel;
}

std::string sha256_bytes(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
    throw IoError("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("sha256_file: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_bytes(ss.str());
}

ExperimentConfig config_from_json(const json& j) {
  static const std::vector<std::string> known = {
      "schema_version", "recipe", "scm", "scm_preset", "n", "m",
      "seed", "k", "regime", "subset_grid", "outputs"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("config: unknown key \"" + it.key() + "\" (fail-closed)");
  }
  ExperimentConfig cfg;
  cfg.schema_version = j.at("schema_version").get<int>();
  if (cfg.schema_version != 1)
    throw ConfigError("config: unsupported schema_version");
  cfg.recipe = j.at("recipe").get<std::string>();

  const bool has_scm = j.contains("scm");
  const bool has_preset = j.contains("scm_preset");
  if (has_scm == has_preset)
    throw ConfigError("config: exactly one of \"scm\" / \"scm_preset\" required");
  cfg.scm = has_scm ? params_from_json(j.at("scm"))
                    : ScmParams::preset(j.at("scm_preset").get<std::string>());

  cfg.n = j.value("n", 0);
  cfg.m = j.value("m", 0);
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.k = j.value("k", 3);
  if (j.contains("regime"))
    for (const auto& v : j.at("regime")) cfg.regime.a.push_back(v.get<int>());
  if (j.contains("subset_grid")) {
    for (const auto& cell : j.at("subset_grid")) {
      if (!cell.is_array() || cell.size() != 2)
        throw ConfigError("config: subset_grid entries must be [n, m] pairs");
      cfg.subset_grid.emplace_back(cell[0].get<int>(), cell[1].get<int>());
    }
  }
  cfg.outputs = j.value("outputs", std::string("out"));
  cfg.regime.validate();
  for (const auto& [ns, ms] : cfg.subset_grid)
    if (ns > cfg.n || ms > cfg.m || ns < 1 || ms < 1)
      throw ConfigError("config: subset sizes must lie in 1..(n, m)");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = cfg.schema_version;
  j["recipe"] = cfg.recipe;
  j["scm"] = params_to_json(cfg.scm);
  j["n"] = cfg.n;
  j["m"] = cfg.m;
  j["seed"] = cfg.seed;
  j["k"] = cfg.k;
  j["regime"] = cfg.regime.a;
  json grid = json::array();
  for (const auto& [ns, ms] : cfg.subset_grid) grid.push_back({ns, ms});
  j["subset_grid"] = grid;
  j["outputs"] = cfg.outputs;
  return j;
}

}  // namespace cwce
