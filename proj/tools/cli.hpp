#pragma once

// Command-line workflows: fit, select, cluster, simulate, verify.
// run() returns the process exit code: 0 ok, 2 configuration or validation
// error, 3 numerical failure, 4 oracle size guard exceeded.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hmmvb/hmmvb.hpp"
#include "json.hpp"

namespace hmmvb::cli {

enum ExitCode : int { kOk = 0, kConfig = 2, kNumerical = 3, kGuard = 4 };

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string data;
  std::string blocks;
  std::string out = ".";
  std::string model;
  std::string grid;
  std::string regime = "flat-gmm-50";
  std::string start_mode = "viterbi-means";
  std::string init = "kmeans-full";
  std::uint64_t seed = 0;
  int threads = 0;
  int restarts = 5;
  int max_iterations = 500;
  long long n = 10000;
  int points = 20;
  double tolerance = 1e-6;
  double shrinkage = 0.5;
  double subset_fraction = 0.1;
  double merge_tol = 1e-3;
  double bound = kDefaultMappedGuard;
  double verify_tol = 1e-9;
  bool standardize = false;
  bool header = false;
  bool prefer_simplest = false;
};

inline json read_json_file(const std::string& path, const std::string& field) {
  std::ifstream in(path);
  if (!in) throw ValidationError(field, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(field, path + ": " + e.what());
  }
}

inline fs::path output_dir(const Options& o) {
  fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("out", "cannot create directory '" + o.out + "'");
  return dir;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ValidationError("out", "cannot write '" + path.string() + "'");
  out << text;
}

inline int thread_count(const Options& o) { return o.threads > 0 ? o.threads : default_thread_count(); }

/// Block config: {"blocks": [{"columns": [..], "states": M}, ...]}. Columns
/// are 0-based indices or header names; block order is chain order.
inline BlockStructure parse_blocks(const json& j, const std::vector<std::string>& header, int data_cols) {
  const json& blocks = j.is_array() ? j : j.value("blocks", json());
  if (!blocks.is_array() || blocks.empty()) throw ValidationError("blocks", "expected a non-empty 'blocks' array");
  std::vector<int> dims, states, order;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string where = "blocks[" + std::to_string(b) + "]";
    const json& blk = blocks[b];
    if (!blk.is_object() || !blk.contains("columns") || !blk.contains("states"))
      throw ValidationError(where, "needs 'columns' and 'states'");
    const json& cols = blk["columns"];
    if (!cols.is_array() || cols.empty()) throw ValidationError(where + ".columns", "must be a non-empty array");
    for (const json& c : cols) {
      int idx = -1;
      if (c.is_number_integer()) {
        idx = c.get<int>();
      } else if (c.is_string()) {
        const auto it = std::find(header.begin(), header.end(), c.get<std::string>());
        if (it == header.end())
          throw ValidationError(where + ".columns", "no column named '" + c.get<std::string>() + "'");
        idx = static_cast<int>(it - header.begin());
      }
      if (idx < 0 || idx >= data_cols)
        throw ValidationError(where + ".columns", "column " + c.dump() + " out of range");
      order.push_back(idx);
    }
    if (!blk["states"].is_number_integer()) throw ValidationError(where + ".states", "must be an integer");
    dims.push_back(static_cast<int>(cols.size()));
    states.push_back(blk["states"].get<int>());
  }
  if (static_cast<int>(order.size()) != data_cols)
    throw ValidationError("blocks", "blocks cover " + std::to_string(order.size()) + " columns, data has " +
                                        std::to_string(data_cols));
  return BlockStructure::from_layout_order(std::move(dims), std::move(states), order);
}

struct LoadedData {
  RowMatrix raw;
  std::vector<std::string> header;
};

inline LoadedData load_data(const Options& o) {
  if (o.data.empty()) throw ValidationError("data", "--data is required");
  if (!fs::exists(o.data)) throw ValidationError("data", "file not found: '" + o.data + "'");
  CsvTable t = read_csv(o.data, o.header);
  return {std::move(t.values), std::move(t.header)};
}

inline FitConfig fit_config(const Options& o) {
  FitConfig c;
  c.max_iterations = o.max_iterations;
  c.rel_loglik_tolerance = o.tolerance;
  c.covariance_shrinkage = o.shrinkage;
  c.restarts = o.restarts;
  c.rng_seed = o.seed;
  c.threads = thread_count(o);
  if (o.init == "kmeans-full") c.init = InitScheme::kmeans_full();
  else if (o.init == "kmeans-subset") c.init = InitScheme::kmeans_subset(o.subset_fraction);
  else if (o.init == "random-centroids") c.init = InitScheme::random_centroids();
  else throw ValidationError("init", "unknown scheme '" + o.init + "'");
  c.validate();
  return c;
}

inline ModeSearchConfig mode_config(const Options& o) {
  ModeSearchConfig c;
  c.merge_tolerance = o.merge_tol;
  c.threads = thread_count(o);
  if (o.start_mode == "viterbi-means") c.start_mode = StartMode::viterbi_means;
  else if (o.start_mode == "data-points") c.start_mode = StartMode::data_points;
  else throw ValidationError("start-mode", "unknown start mode '" + o.start_mode + "'");
  return c;
}

/// Data after optional standardization, with the transform recorded.
struct Prepared {
  Dataset data;
  std::optional<Standardization> standardization;
};

inline Prepared prepare(const Options& o, const LoadedData& d) {
  if (o.blocks.empty()) throw ValidationError("blocks", "--blocks is required");
  const BlockStructure s = parse_blocks(read_json_file(o.blocks, "blocks"), d.header, static_cast<int>(d.raw.cols()));
  Prepared p;
  if (o.standardize) {
    p.standardization = fit_standardization(d.raw);
    p.data = Dataset(apply_standardization(*p.standardization, d.raw), s);
  } else {
    p.data = Dataset(d.raw, s);
  }
  return p;
}

inline int cmd_fit(const Options& o, std::ostream& out) {
  const LoadedData d = load_data(o);
  const Prepared p = prepare(o, d);
  FitResult fit = baum_welch_fit(p.data, p.data.structure(), fit_config(o));
  fit.model.standardization = p.standardization;
  const fs::path dir = output_dir(o);
  save_model(fit.model, (dir / "model.json").string());
  write_text(dir / "report.json", report_to_json(fit.report).dump(2) + "\n");
  std::ostringstream trace;
  trace << "iteration,log_likelihood\n";
  for (std::size_t i = 0; i < fit.report.trace.size(); ++i)
    trace << i << "," << format_real(fit.report.trace[i]) << "\n";
  write_text(dir / "loglik.csv", trace.str());
  out << "log-likelihood " << format_real(fit.report.log_likelihood) << ", BIC " << format_real(fit.report.bic)
      << ", iterations " << fit.report.iterations << (fit.report.converged ? " (converged)" : " (not converged)")
      << ", nonempty components " << fit.report.nonempty_total << "\n";
  return kOk;
}

inline std::vector<std::vector<int>> parse_grid(const json& j) {
  const json& cells = j.is_array() ? j : j.value("grid", json());
  if (!cells.is_array()) throw ValidationError("grid", "expected an array of state-count vectors");
  if (cells.empty()) throw ValidationError("grid", "must contain at least one cell");
  std::vector<std::vector<int>> grid;
  for (const json& c : cells) {
    if (!c.is_array()) throw ValidationError("grid", "each cell must be an array of state counts");
    std::vector<int> cell;
    for (const json& v : c) {
      if (!v.is_number_integer()) throw ValidationError("grid", "state counts must be integers");
      cell.push_back(v.get<int>());
    }
    grid.push_back(std::move(cell));
  }
  return grid;
}

inline std::string join(const std::vector<int>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + std::to_string(v[i]);
  return s;
}

inline int cmd_select(const Options& o, std::ostream& out) {
  if (o.grid.empty()) throw ValidationError("grid", "--grid is required");
  const auto grid = parse_grid(read_json_file(o.grid, "grid"));
  const LoadedData d = load_data(o);
  const Prepared p = prepare(o, d);
  SelectOptions so;
  so.mode_search = mode_config(o);
  so.prefer_simplest = o.prefer_simplest;
  Selection sel = select_model(p.data, grid, fit_config(o), so);
  sel.best_model.standardization = p.standardization;
  const fs::path dir = output_dir(o);
  std::ostringstream table;
  table << "state_counts,ok,bic,log_likelihood,free_parameters,nonempty_components,clusters,selected,error\n";
  for (std::size_t c = 0; c < sel.rows.size(); ++c) {
    const SelectionRow& r = sel.rows[c];
    table << join(r.state_counts, ' ') << "," << (r.ok ? 1 : 0) << ",";
    if (r.ok)
      table << format_real(r.report.bic) << "," << format_real(r.report.log_likelihood) << ","
            << r.report.free_parameters << "," << r.report.nonempty_total << ","
            << (r.clusters ? std::to_string(*r.clusters) : "");
    else
      table << ",,,,";
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    table << "," << (static_cast<int>(c) == sel.best_index ? 1 : 0) << "," << err << "\n";
  }
  write_text(dir / "selection.csv", table.str());
  save_model(sel.best_model, (dir / "model.json").string());
  out << "selected state counts (" << join(sel.rows[sel.best_index].state_counts, ',') << "), BIC "
      << format_real(sel.rows[sel.best_index].report.bic) << "\n";
  return kOk;
}

inline int cmd_cluster(const Options& o, std::ostream& out) {
  if (o.model.empty()) throw ValidationError("model", "--model is required");
  if (!fs::exists(o.model)) throw ValidationError("model", "file not found: '" + o.model + "'");
  const HmmVbModel model = load_model(o.model);
  const LoadedData d = load_data(o);
  RowMatrix raw = d.raw;
  if (model.standardization) raw = apply_standardization(*model.standardization, raw);
  const Dataset data(raw, model.structure);
  const ClusteringResult result = cluster(model, data, mode_config(o));
  const fs::path dir = output_dir(o);

  std::ostringstream labels;
  labels << "index,viterbi,mode,cluster\n";
  for (std::size_t i = 0; i < result.labels.size(); ++i)
    labels << i << "," << join(result.sequences[i], '-') << "," << result.mode_index[i] << "," << result.labels[i]
           << "\n";
  write_text(dir / "labels.csv", labels.str());

  json modes = json::array();
  const std::vector<Vector> raw_modes = raw_cluster_modes(result, model);
  for (int c = 0; c < result.num_clusters(); ++c) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < result.searches.size(); ++j)
      if (result.search_cluster[j] == c) best = std::max(best, result.searches[j].log_density);
    modes.push_back({{"cluster", c},
                     {"size", result.cluster_sizes[c]},
                     {"log_density", best},
                     {"mode", std::vector<double>(raw_modes[c].data(), raw_modes[c].data() + raw_modes[c].size())}});
  }
  write_text(dir / "modes.json", modes.dump(2) + "\n");

  std::size_t unconverged = 0;
  for (const auto& s : result.searches) unconverged += s.converged ? 0 : 1;
  const json summary{{"clusters", result.num_clusters()},
                     {"cluster_sizes", result.cluster_sizes},
                     {"distinct_sequences", result.distinct_sequences},
                     {"searches", result.searches.size()},
                     {"unconverged_searches", unconverged},
                     {"start_mode", result.start_mode == StartMode::viterbi_means ? "viterbi-means" : "data-points"}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << result.num_clusters() << " clusters; sizes";
  for (std::size_t s : result.cluster_sizes) out << " " << s;
  out << "\n";
  return kOk;
}

inline int cmd_simulate(const Options& o, std::ostream& out) {
  const Regime regime = parse_regime(o.regime);
  if (o.n < 1) throw ValidationError("n", "must be >= 1");
  const LabeledSample s = generate(SimSpec{regime, static_cast<Eigen::Index>(o.n), o.seed});
  const fs::path dir = output_dir(o);
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < s.points.cols(); ++j) header.push_back("x" + std::to_string(j + 1));
  write_csv((dir / "data.csv").string(), s.points, header);
  std::ostringstream labels;
  labels << "index,component,target\n";
  for (Eigen::Index i = 0; i < s.size(); ++i) labels << i << "," << s.component[i] << "," << s.target_class[i] << "\n";
  write_text(dir / "labels.csv", labels.str());
  const auto counts = s.target_counts();
  out << regime_name(regime) << ": " << s.size() << " points, target counts";
  for (std::size_t j = 1; j < counts.size(); ++j) out << " " << counts[j];
  out << "\n";
  return kOk;
}

inline int cmd_verify(const Options& o, std::ostream& out) {
  if (o.model.empty()) throw ValidationError("model", "--model is required");
  if (!fs::exists(o.model)) throw ValidationError("model", "file not found: '" + o.model + "'");
  if (o.points < 1) throw ValidationError("points", "must be >= 1");
  const HmmVbModel model = load_model(o.model);
  const BlockStructure& s = model.structure;
  // Probe points: a random sequence mean plus unit Gaussian noise.
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<Vector> probes;
  for (int p = 0; p < o.points; ++p) {
    std::vector<int> seq(s.num_blocks());
    for (int t = 0; t < s.num_blocks(); ++t) seq[t] = std::uniform_int_distribution<int>(0, s.states(t) - 1)(rng);
    Vector x = model.sequence_mean(seq);
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += z(rng);
    probes.push_back(std::move(x));
  }
  const OracleDeviations dev = verify_against_mapped(model, probes, o.bound);
  const bool ok = dev.max_deviation() <= o.verify_tol && dev.viterbi_mismatches == 0;
  const json report{{"components", dev.components},     {"points", dev.points},
                    {"log_density", dev.log_density},   {"state_posterior", dev.state_posterior},
                    {"pair_posterior", dev.pair_posterior}, {"viterbi_log_joint", dev.viterbi_log_joint},
                    {"viterbi_mismatches", dev.viterbi_mismatches}, {"mbw_step", dev.mbw_step},
                    {"tolerance", o.verify_tol},        {"ok", ok}};
  out << report.dump(2) << "\n";
  return ok ? kOk : kNumerical;
}

/// Parses `args` (without the program name) and runs the chosen command.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"HMM-VB: fit, select, cluster, simulate and verify hidden Markov models on variable blocks"};
  app.require_subcommand(1);
  Options o;

  auto data_flags = [&](CLI::App* c) {
    c->add_option("--data", o.data, "CSV file, one point per row");
    c->add_flag("--header", o.header, "first CSV row is a header");
    c->add_option("--threads", o.threads, "worker threads (0 = all cores)");
  };
  auto fit_flags = [&](CLI::App* c) {
    c->add_option("--blocks", o.blocks, "JSON block-structure config");
    c->add_flag("--standardize", o.standardize, "center and scale each column before fitting");
    c->add_option("--restarts", o.restarts, "independent initializations");
    c->add_option("--seed", o.seed, "random seed");
    c->add_option("--max-iter", o.max_iterations, "Baum-Welch iteration cap");
    c->add_option("--tol", o.tolerance, "relative log-likelihood tolerance");
    c->add_option("--shrinkage", o.shrinkage, "weight on cluster-specific covariance at initialization");
    c->add_option("--init", o.init, "kmeans-full | kmeans-subset | random-centroids");
    c->add_option("--subset-fraction", o.subset_fraction, "subset size for kmeans-subset");
  };
  auto mode_flags = [&](CLI::App* c) {
    c->add_option("--start-mode", o.start_mode, "viterbi-means | data-points");
    c->add_option("--merge-tol", o.merge_tol, "mode merge tolerance in scaled units");
  };

  CLI::App* fit = app.add_subcommand("fit", "fit a model by Baum-Welch");
  data_flags(fit);
  fit_flags(fit);
  fit->add_option("--out", o.out, "output directory");

  CLI::App* select = app.add_subcommand("select", "fit a grid of state counts and pick the min-BIC cell");
  data_flags(select);
  fit_flags(select);
  mode_flags(select);
  select->add_option("--grid", o.grid, "JSON array of state-count vectors");
  select->add_flag("--prefer-simplest", o.prefer_simplest, "among equal cluster counts prefer fewer parameters");
  select->add_option("--out", o.out, "output directory");

  CLI::App* clus = app.add_subcommand("cluster", "modal clustering with a fitted model");
  data_flags(clus);
  mode_flags(clus);
  clus->add_option("--model", o.model, "model JSON");
  clus->add_option("--out", o.out, "output directory");

  CLI::App* sim = app.add_subcommand("simulate", "draw a synthetic labeled dataset");
  sim->add_option("--regime", o.regime, "two-block | three-block | flat-gmm-50");
  sim->add_option("--n", o.n, "number of points");
  sim->add_option("--seed", o.seed, "random seed");
  sim->add_option("--out", o.out, "output directory");

  CLI::App* ver = app.add_subcommand("verify", "cross-check a model against its enumerated mixture");
  ver->add_option("--model", o.model, "model JSON");
  ver->add_option("--bound", o.bound, "largest number of enumerated sequences");
  ver->add_option("--points", o.points, "number of probe points");
  ver->add_option("--seed", o.seed, "probe seed");
  ver->add_option("--tol", o.verify_tol, "largest acceptable deviation");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::Success&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    if (fit->parsed()) return cmd_fit(o, out);
    if (select->parsed()) return cmd_select(o, out);
    if (clus->parsed()) return cmd_cluster(o, out);
    if (sim->parsed()) return cmd_simulate(o, out);
    if (ver->parsed()) return cmd_verify(o, out);
  } catch (const ValidationError& e) {
    err << "error [" << e.field() << "]: " << e.what() << "\n";
    return kConfig;
  } catch (const GuardError& e) {
    err << "error: " << e.what() << "\n";
    return kGuard;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  }
  return kConfig;
}

}  // namespace hmmvb::cli
