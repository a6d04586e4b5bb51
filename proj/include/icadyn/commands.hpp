#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "icadyn/config.hpp"
#include "icadyn/io.hpp"
#include "icadyn/particles.hpp"
#include "icadyn/phases.hpp"
#include "icadyn/pipeline.hpp"

namespace icadyn {

struct CommandResult {
  std::vector<std::string> outputs;  // file names relative to output_dir
  json summary;
};

namespace cmd_detail {

inline constexpr int kSchemaVersion = 1;

inline void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                           const CommandResult& result) {
  json manifest;
  manifest["command"] = cfg.command;
  manifest["config"] = cfg.to_json();
  manifest["config_hash"] = config_hash(cfg.to_json());
  manifest["seed"] = cfg.seed;
  manifest["artifact_versions"] = {{"schema", kSchemaVersion},
                                   {"trajectory_csv", 1},
                                   {"histogram_csv", 1},
                                   {"basis_bin", 1}};
  manifest["outputs"] = result.outputs;
  manifest["summary"] = result.summary;
  write_json(dir / "manifest.json", manifest);
}

inline void write_ode_csv(const std::filesystem::path& path, const OdeResult& res) {
  CsvWriter csv(path, "t,i,j,Q_ij");
  for (size_t k = 0; k < res.ts.size(); ++k)
    for (Eigen::Index i = 0; i < res.Qs[k].rows(); ++i)
      for (Eigen::Index j = 0; j < res.Qs[k].cols(); ++j)
        csv.row({format_double(res.ts[k]), std::to_string(i), std::to_string(j),
                 format_double(res.Qs[k](i, j))});
}

inline ComponentBasis make_basis(const SimulateCfg& c, Rng& rng) {
  switch (c.basis.kind) {
    case BasisCfg::Kind::Haar:
      return build_basis(static_cast<int>(c.n), c.p, BasisConstruction::Haar, rng);
    case BasisCfg::Kind::Sparse:
      return build_basis(static_cast<int>(c.n), c.p, BasisConstruction::SparseBernoulli, rng,
                         c.basis.rho);
    case BasisCfg::Kind::File:
      return load_basis(c.basis.path);
  }
  throw std::logic_error("unreachable basis kind");
}

}  // namespace cmd_detail

inline CommandResult cmd_simulate(const ExperimentConfig& cfg) {
  const SimulateCfg& c = *cfg.simulate;
  const std::filesystem::path dir = cfg.output_dir;
  CommandResult out;
  Rng basis_rng = make_stream(cfg.seed, 0);
  ComponentBasis basis = cmd_detail::make_basis(c, basis_rng);
  const long steps = static_cast<long>(std::llround(c.horizon * static_cast<double>(c.n)));
  const Eigen::MatrixXd Q0 = c.q0.matrix(c.p);

  std::vector<RunResult> runs;
  for (int r = 0; r < c.replicas; ++r) {
    Rng rng = make_stream(cfg.seed, 100 + static_cast<std::uint64_t>(r));
    InitResult init = init_estimates(basis, Q0, rng);
    runs.push_back(run_online(basis, c.specs, init.state, c.tau, c.f, c.reg, steps,
                              c.record_every, c.scheme, rng));
    const std::string name = "replica_" + std::to_string(r) + ".csv";
    write_trajectory_csv(dir / name, runs.back());
    out.outputs.push_back(name);
  }

  // Cross-replica mean and sample std on the shared recording grid.
  {
    CsvWriter csv(dir / "sim_summary.csv", "t,i,j,mean,std");
    const size_t n_pts = runs.front().points.size();
    const int p = c.p;
    for (size_t k = 0; k < n_pts; ++k)
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) {
          double sum = 0.0, sumsq = 0.0;
          for (const auto& run : runs) {
            const double v = run.points[k].Q(i, j);
            sum += v;
            sumsq += v * v;
          }
          const double R = static_cast<double>(runs.size());
          const double mean = sum / R;
          const double var = R > 1.0 ? std::max(0.0, (sumsq - R * mean * mean) / (R - 1.0)) : 0.0;
          csv.row({format_double(runs.front().points[k].t), std::to_string(i),
                   std::to_string(j), format_double(mean), format_double(std::sqrt(var))});
        }
    out.outputs.push_back("sim_summary.csv");
  }
  save_basis(dir / "basis.bin", basis);
  out.outputs.push_back("basis.bin");
  out.summary = {{"replicas", c.replicas}, {"steps", steps}};
  cmd_detail::write_manifest(dir, cfg, out);
  return out;
}

inline CommandResult cmd_predict(const ExperimentConfig& cfg) {
  const PredictCfg& c = *cfg.predict;
  const std::filesystem::path dir = cfg.output_dir;
  const Eigen::MatrixXd Q0 = c.q0.matrix(c.p);
  RhsFn rhs;
  if (c.rhs == "cubic_p2") {
    const std::array<MomentSet, 2> m = {c.specs[0].moments(), c.specs[1].moments()};
    const int sign = cubic_sign(c.f);
    rhs = [=](const Eigen::MatrixXd& Q) { return rhs_cubic_p2(Q, c.tau, m, sign); };
  } else {
    rhs = [&c](const Eigen::MatrixXd& Q) {
      return rhs_generic(Q, c.tau, c.f, c.specs, c.coeffs);
    };
  }
  OdeResult res = integrate_overlap(rhs, Q0, c.opts);
  CommandResult out;
  cmd_detail::write_ode_csv(dir / "ode_trajectory.csv", res);
  out.outputs.push_back("ode_trajectory.csv");
  out.summary = {{"steady", res.steady}, {"points", res.ts.size()}};
  if (res.steady) out.summary["t_steady"] = res.t_steady;
  cmd_detail::write_manifest(dir, cfg, out);
  return out;
}

inline CommandResult cmd_particles(const ExperimentConfig& cfg) {
  const ParticlesCfg& c = *cfg.particles;
  const std::filesystem::path dir = cfg.output_dir;
  const int p = static_cast<int>(c.specs.size());
  Rng rng = make_stream(cfg.seed, 0);
  ParticleCloud cloud = init_cloud_sparse(c.N, c.rho, c.q0.matrix(p), rng);
  CommandResult out;

  std::vector<double> snaps = c.snapshots;
  std::sort(snaps.begin(), snaps.end());
  if (snaps.empty() || snaps.back() < c.opts.t_end) snaps.push_back(c.opts.t_end);

  CsvWriter qcsv(dir / "qhat_trajectory.csv", "t,i,j,Qhat_ij");
  auto dump_qhat = [&](const std::vector<CloudRecord>& records) {
    for (const auto& rec : records)
      for (Eigen::Index i = 0; i < rec.Qhat.rows(); ++i)
        for (Eigen::Index j = 0; j < rec.Qhat.cols(); ++j)
          qcsv.row({format_double(rec.t), std::to_string(i), std::to_string(j),
                    format_double(rec.Qhat(i, j))});
  };
  out.outputs.push_back("qhat_trajectory.csv");

  json warnings = json::array();
  json modes = json::object();
  auto snapshot = [&](double t) {
    const std::string tag = format_double(t);
    {
      Histogram2D h = histogram2d(cloud, 0, std::min(1, p - 1), c.bins, c.range[0], c.range[1]);
      CsvWriter csv(dir / ("hist2d_t" + tag + ".csv"), "axis_a,axis_b,bin_a_lo,bin_b_lo,mass");
      for (int a = 0; a < c.bins; ++a)
        for (int b = 0; b < c.bins; ++b)
          csv.row({std::to_string(h.axis_a), std::to_string(h.axis_b),
                   format_double(h.lo + a * h.width), format_double(h.lo + b * h.width),
                   format_double(h.mass(a, b))});
      out.outputs.push_back("hist2d_t" + tag + ".csv");
      modes[tag] = count_modes(h);
    }
    for (int axis = 0; axis < p; ++axis) {
      Histogram1D h = histogram1d(cloud, axis, c.bins, c.range[0], c.range[1]);
      CsvWriter csv(dir / ("hist1d_axis" + std::to_string(axis) + "_t" + tag + ".csv"),
                    "axis,bin_lo,bin_hi,mass");
      for (int b = 0; b < c.bins; ++b)
        csv.row({std::to_string(axis), format_double(h.lo + b * h.width),
                 format_double(h.lo + (b + 1) * h.width), format_double(h.mass(b))});
      out.outputs.push_back("hist1d_axis" + std::to_string(axis) + "_t" + tag + ".csv");
    }
  };

  double prev = 0.0;
  bool first_segment = true;
  for (double t_snap : snaps) {
    if (t_snap < prev)
      throw ConfigError("snapshots", "snapshot times must be nonnegative and sorted");
    if (t_snap == 0.0 || t_snap > prev) {
      if (t_snap > prev) {
        CloudOpts opts = c.opts;
        opts.t_end = t_snap - prev;
        CloudRunResult seg = evolve_cloud(cloud, c.tau, c.f, c.reg, c.specs, opts, rng);
        // drop the duplicated segment-start record on later segments
        dump_qhat(first_segment
                      ? seg.records
                      : std::vector<CloudRecord>(seg.records.begin() + 1, seg.records.end()));
        for (const auto& w : seg.warnings) warnings.push_back(w);
        first_segment = false;
      } else if (first_segment) {
        dump_qhat({CloudRecord{0.0, empirical_overlap(cloud)}});
        first_segment = false;
      }
      snapshot(t_snap);
      prev = t_snap;
    }
  }
  out.summary = {{"N", c.N}, {"warnings", warnings}, {"modes", modes}};
  cmd_detail::write_manifest(dir, cfg, out);
  return out;
}

inline CommandResult cmd_phase(const ExperimentConfig& cfg) {
  const PhaseCfg& c = *cfg.phase;
  const std::filesystem::path dir = cfg.output_dir;
  CommandResult out;
  if (c.m4_grid) {
    CsvWriter csv(dir / "learnability.csv", "m4,m6,tau,learnable");
    long cells = 0;
    for (double m4 : c.m4_grid->values())
      for (double m6 : c.m6_grid->values()) {
        if (c.feasible_only && m6 < m4 * m4) continue;  // E[x^4]^2 <= E[x^2] E[x^6]
        for (double tau : c.taus) {
          const bool learn = is_learnable({tau, m4, m6});
          csv.row({format_double(m4), format_double(m6), format_double(tau),
                   learn ? "1" : "0"});
          ++cells;
        }
      }
    out.outputs.push_back("learnability.csv");
    out.summary["grid_cells"] = cells;
  }
  if (c.field) {
    const std::array<MomentSet, 2> m = {
        SourceSpec::beta_mixture(c.field->betas[0]).moments(),
        SourceSpec::beta_mixture(c.field->betas[1]).moments()};
    const std::vector<double> grid = c.field->grid.values();
    CsvWriter csv(dir / "field.csv", "q_a,q_b,dq_a,dq_b");
    for (const auto& pt : phase_field(grid, grid, c.field->tau, m, c.field->sign))
      csv.row({format_double(pt.qa), format_double(pt.qb), format_double(pt.dqa),
               format_double(pt.dqb)});
    out.outputs.push_back("field.csv");
    out.summary["field_rows"] = grid.size() * grid.size();
  }
  cmd_detail::write_manifest(dir, cfg, out);
  return out;
}

inline CommandResult cmd_staircase(const ExperimentConfig& cfg) {
  const StaircaseCfg& c = *cfg.staircase;
  const std::filesystem::path dir = cfg.output_dir;
  std::vector<MomentSet> moments;
  for (double b : c.betas) moments.push_back(SourceSpec::beta_mixture(b).moments());
  std::vector<StaircaseRow> rows = staircase(c.taus, moments, c.opts);
  CommandResult out;
  CsvWriter csv(dir / "staircase.csv", "tau,count_decoupled,count_competition");
  json failures = json::array();
  for (const auto& row : rows) {
    csv.row({format_double(row.tau), std::to_string(row.count_decoupled),
             std::to_string(row.ode_failed ? -1 : row.count_competition)});
    if (row.ode_failed) failures.push_back({{"tau", row.tau}, {"error", row.error}});
  }
  out.outputs.push_back("staircase.csv");
  out.summary = {{"failures", failures}};
  cmd_detail::write_manifest(dir, cfg, out);
  return out;
}

inline CommandResult cmd_taumax(const ExperimentConfig& cfg) {
  const TauMaxCfg& c = *cfg.taumax;
  const std::filesystem::path dir = cfg.output_dir;
  CommandResult out;
  CsvWriter csv(dir / "taumax.csv", "ratio,tau_max,conv_time");
  for (const auto& entry : c.entries) {
    std::vector<MomentSet> moments;
    for (double b : entry.betas) moments.push_back(SourceSpec::beta_mixture(b).moments());
    TauMaxReport rep = tau_max_and_time(moments, c.opts);
    csv.row({format_double(entry.ratio),
             rep.tau_max ? format_double(*rep.tau_max) : "nan",
             rep.conv_time ? format_double(*rep.conv_time) : "nan"});
  }
  out.outputs.push_back("taumax.csv");
  cmd_detail::write_manifest(dir, cfg, out);
  return out;
}

inline CommandResult cmd_realdata(const ExperimentConfig& cfg) {
  const RealdataCfg& c = *cfg.realdata;
  const std::filesystem::path dir = cfg.output_dir;
  LabeledMatrix data;
  if (c.synthetic) {
    Rng rng = make_stream(cfg.seed, 7);
    data = synthetic_standin(c.synthetic->N, c.synthetic->B, c.synthetic->n1, c.synthetic->n2,
                             rng);
  } else {
    auto rows = read_csv(*c.data);
    if (rows.empty()) throw std::runtime_error("data file is empty");
    const size_t B = rows.front().size();
    data.Y.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(B));
    for (size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != B) throw std::runtime_error("ragged data row " + std::to_string(r));
      for (size_t b = 0; b < B; ++b)
        data.Y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(b)) =
            std::stod(rows[r][b]);
    }
    auto lrows = read_csv(*c.labels);
    if (lrows.size() != rows.size())
      throw std::runtime_error("labels and data disagree on sample count");
    data.labels.resize(rows.size());
    for (size_t r = 0; r < lrows.size(); ++r) data.labels[r] = std::stoi(lrows[r][0]);
  }

  RealExperimentConfig rc;
  rc.class_ids = c.classes;
  rc.specs = c.specs;
  rc.tau = c.tau;
  rc.Q0 = c.q0.matrix(static_cast<int>(c.classes.size()));
  rc.replicas = c.replicas;
  rc.horizon = c.horizon;
  rc.seed = cfg.seed;
  RealExperimentResult res = run_real_experiment(data, rc);

  CommandResult out;
  save_basis(dir / "components.bin", res.basis);
  out.outputs.push_back("components.bin");
  for (size_t r = 0; r < res.replicas.size(); ++r) {
    const std::string name = "replica_" + std::to_string(r) + ".csv";
    write_trajectory_csv(dir / name, res.replicas[r]);
    out.outputs.push_back(name);
  }
  cmd_detail::write_ode_csv(dir / "ode_trajectory.csv", res.ode);
  out.outputs.push_back("ode_trajectory.csv");

  {
    const int W = c.grid[1];
    CsvWriter csv(dir / "activations.csv", "row,col,class,value");
    for (Eigen::Index k = 0; k < res.activations.rows(); ++k)
      for (size_t i = 0; i < res.matched_component.size(); ++i) {
        const long row = W > 0 ? k / W : k;
        const long col = W > 0 ? k % W : 0;
        csv.row({std::to_string(row), std::to_string(col),
                 std::to_string(c.classes[static_cast<size_t>(res.matched_component[i])]),
                 format_double(res.matched_sign[i] *
                               res.activations(k, static_cast<Eigen::Index>(i)))});
      }
    out.outputs.push_back("activations.csv");
  }

  json ious = json::object();
  for (size_t i = 0; i < res.matched_component.size(); ++i) {
    const int cls = c.classes[static_cast<size_t>(res.matched_component[i])];
    Eigen::VectorXd act = res.matched_sign[i] * res.activations.col(static_cast<Eigen::Index>(i));
    ious[std::to_string(cls)] = activation_iou(act, data.labels, cls);
  }
  out.summary = {{"iou", ious}};
  cmd_detail::write_manifest(dir, cfg, out);
  return out;
}

inline CommandResult cmd_compare(const ExperimentConfig& cfg) {
  const CompareCfg& c = *cfg.compare;
  const std::filesystem::path dir = cfg.output_dir;
  auto sim_rows = read_csv(c.sim);
  auto ode_rows = read_csv(c.ode);
  if (sim_rows.size() < 2 || ode_rows.size() < 2)
    throw std::runtime_error("comparison inputs are empty");
  // sim: t,i,j,mean,std ; ode: t,i,j,Q_ij. Join on the (t, i, j) key.
  std::map<std::string, std::pair<double, double>> sim;
  for (size_t r = 1; r < sim_rows.size(); ++r) {
    const auto& row = sim_rows[r];
    if (row.size() < 5) throw std::runtime_error("bad summary row " + std::to_string(r));
    sim[row[0] + "|" + row[1] + "|" + row[2]] = {std::stod(row[3]), std::stod(row[4])};
  }
  struct Acc {
    double max_dev = 0.0;
    long inside = 0, total = 0;
  };
  std::map<std::string, Acc> per_entry;
  for (size_t r = 1; r < ode_rows.size(); ++r) {
    const auto& row = ode_rows[r];
    if (row.size() < 4) throw std::runtime_error("bad trajectory row " + std::to_string(r));
    auto it = sim.find(row[0] + "|" + row[1] + "|" + row[2]);
    if (it == sim.end()) continue;
    const double dev = std::abs(std::stod(row[3]) - it->second.first);
    Acc& acc = per_entry[row[1] + "," + row[2]];
    acc.max_dev = std::max(acc.max_dev, dev);
    acc.total += 1;
    if (dev <= c.band * it->second.second) acc.inside += 1;
  }
  if (per_entry.empty())
    throw std::runtime_error("no common (t, i, j) records between the two inputs");
  json entries = json::array();
  long inside = 0, total = 0;
  for (const auto& [key, acc] : per_entry) {
    entries.push_back({{"entry", key},
                       {"max_dev", acc.max_dev},
                       {"band_fraction", static_cast<double>(acc.inside) / acc.total}});
    inside += acc.inside;
    total += acc.total;
  }
  CommandResult out;
  out.summary = {{"band", c.band},
                 {"entries", entries},
                 {"overall_fraction", static_cast<double>(inside) / total}};
  write_json(dir / "compare.json", out.summary);
  out.outputs.push_back("compare.json");
  cmd_detail::write_manifest(dir, cfg, out);
  return out;
}

inline CommandResult run_command(const ExperimentConfig& cfg) {
  if (cfg.simulate) return cmd_simulate(cfg);
  if (cfg.predict) return cmd_predict(cfg);
  if (cfg.particles) return cmd_particles(cfg);
  if (cfg.phase) return cmd_phase(cfg);
  if (cfg.staircase) return cmd_staircase(cfg);
  if (cfg.taumax) return cmd_taumax(cfg);
  if (cfg.realdata) return cmd_realdata(cfg);
  if (cfg.compare) return cmd_compare(cfg);
  throw std::logic_error("config carries no command block");
}

}  // namespace icadyn
