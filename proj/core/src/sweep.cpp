#include "mirrorflow/sweep.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mirrorflow/errors.hpp"
#include "mirrorflow/serialize.hpp"

namespace mirrorflow {

namespace {

using nlohmann::json;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vec(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

json vec(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

std::string group_label(const RunConfig& c) {
  std::ostringstream os;
  os << potential_label(c.potential);
  if (c.potential.base.kind != PotentialKind::Euclidean) os << " lambda=" << c.potential.base.lambda;
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  if (std::isnan(v)) {
    os << "nan";
  } else {
    os << v;
  }
  return os.str();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& config) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(to_json(config));
  return os.str();
}

void save_run(const RunConfig& config, const RunResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  RunConfig stored = config;
  stored.data.source = DataSource::File;
  stored.data.path = "data.csv";
  write_text(dir / "config.json", to_json(stored));
  write_dataset_csv(result.data, dir / "data.csv");
  if (result.data.provenance.teacher) write_text(dir / "teacher.json", teacher_to_json(*result.data.provenance.teacher));
  write_params_csv(result.initial.theta, config.net.widths, dir / "params_init.csv");
  write_params_csv(result.final_state.theta, config.net.widths, dir / "params.csv");
  write_metrics_csv(result.records, dir / "metrics.csv");
  write_text(dir / "status.txt", std::string(to_string(result.status)) + "\n" + result.message + "\n");
}

LoadedRun load_run(const std::filesystem::path& dir) {
  LoadedRun r;
  r.config = parse_config(dir / "config.json");
  r.data = make_dataset(r.config.data);
  r.theta = read_params_csv(dir / "params.csv");
  if (std::filesystem::exists(dir / "params_init.csv")) r.theta_init = read_params_csv(dir / "params_init.csv");
  r.records = read_metrics_csv(dir / "metrics.csv");
  const HomogeneousNet net(r.config.net.widths, r.config.net.activation, r.config.net.input_bias);
  try {
    net.check(r.theta);
  } catch (const std::invalid_argument& e) {
    throw IoError((dir / "params.csv").string() + ": " + e.what());
  }
  return r;
}

std::string diagnose_json(const LoadedRun& run, const DiagnoseOptions& options) {
  const auto& c = run.config;
  const HomogeneousNet net(c.net.widths, c.net.activation, c.net.input_bias);
  const PotentialSet potentials = resolve_potentials(c);
  const LossGrad eval = net.loss_and_grad(run.theta, run.data);
  json out;

  const auto m = margin_report(potentials, net, run.theta, eval, run.data.size(), c.margins);
  json lk = {{"1", num(m.lk_margins.l1)}, {"2", num(m.lk_margins.l2)}, {fmt(c.margins.p), num(m.lk_margins.lp)}};
  out["final_margins"] = {{"q_margin", num(m.q_margin)},       {"q_soft_margin", num(m.q_soft_margin)},
                          {"gap_bound", num(m.gap_bound)},     {"lk_margins", lk},
                          {"horizon_margin", num(m.horizon_margin)}, {"multi_q_margin", num(m.multi_q_margin)},
                          {"q_min", num(m.q_min)},             {"log_loss", num(m.log_loss)}};
  if (m.lk_layerwise) {
    out["final_margins"]["lk_layerwise"] = {{"1", num(m.lk_layerwise->l1)},
                                            {"2", num(m.lk_layerwise->l2)},
                                            {fmt(c.margins.p), num(m.lk_layerwise->lp)}};
  }

  const auto k = kkt_report(potentials, net, run.theta, eval);
  out["kkt"] = {{"epsilon", num(k.epsilon)}, {"delta", num(k.delta)},       {"multipliers", vec(k.multipliers)},
                {"beta", num(k.beta)},       {"e_tan", num(k.e_tan)},       {"feasible", k.feasible},
                {"heuristic", k.heuristic}};

  if (same_geometry(potentials)) {
    try {
      const auto rr = rate_report(run.records, net.depth(), potentials.front().alpha());
      out["rates"] = {{"loss_slope", num(rr.loss_slope)}, {"q_over_logt", vec(rr.q_over_logt)},
                      {"g_bound_ok", rr.g_bound_ok},       {"t0", num(rr.t0)}};
    } catch (const std::exception& e) {
      out["rates"] = {{"error", e.what()}};
    }
  } else {
    out["rates"] = {{"error", "rates need a single alpha across layers"}};
  }

  const auto a = alignment_gap(potentials, run.theta);
  out["alignment"] = {{"gap", num(a.gap)}, {"bound", num(a.bound)}};

  if (net.depth() == 2 && same_geometry(potentials)) {
    TwoLayerOptions opts;
    opts.tau = c.tau;
    opts.potentials = std::make_pair(potentials[0], potentials[1]);
    if (!run.theta_init.layers.empty()) {
      opts.initial = std::make_pair(Vector(run.theta_init.layers[1].row(0).transpose()), run.theta_init.layers[0]);
    }
    const auto t = two_layer_report(run.theta, potentials.front().alpha(), opts);
    out["sparsity"] = {{"a_tilde", vec(t.a_tilde)},
                       {"objective", num(t.objective)},
                       {"active_count", t.active_count},
                       {"neuron_balance", vec(t.neuron_balance)}};
  } else {
    out["sparsity"] = {{"error", "sparsity metrics need a 2-layer network with one alpha"}};
  }

  json curve = json::array();
  for (const auto& p : prune_eval(net, run.theta, run.data, options.prune_fractions)) {
    curve.push_back({{"fraction", p.fraction}, {"train_accuracy", p.train_accuracy}});
  }
  out["prune_curve"] = curve;
  return out.dump(2);
}

std::vector<RunConfig> expand_grid(const std::string& base_config_text, const std::string& grid_text,
                                   const std::filesystem::path& base_dir) {
  json base;
  json grid;
  try {
    base = json::parse(base_config_text);
    grid = json::parse(grid_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("sweep input is not valid JSON: ") + e.what());
  }
  if (!grid.is_object()) throw ConfigError("grid must be a JSON object");
  for (const auto& [key, value] : grid.items()) {
    if (key != "variants" && key != "lambda" && key != "p" && key != "lr" && key != "seed" &&
        key != "init_seed") {
      throw ConfigError("unknown grid key '" + key + "'");
    }
    if (!value.is_array() || value.empty()) throw ConfigError("grid key '" + key + "' must be a non-empty list");
  }
  std::vector<json> variants = grid.contains("variants") ? grid["variants"].get<std::vector<json>>()
                                                         : std::vector<json>{json::object()};
  const auto axis = [&](const char* key) {
    std::vector<json> v;
    if (grid.contains(key)) {
      for (const auto& x : grid[key]) v.push_back(x);
    } else {
      v.push_back(nullptr);
    }
    return v;
  };
  std::vector<RunConfig> out;
  std::set<std::string> seen;
  for (const auto& variant : variants) {
    json merged = base;
    merged.merge_patch(variant);
    for (const auto& lam : axis("lambda")) {
      for (const auto& p : axis("p")) {
        for (const auto& lr : axis("lr")) {
          for (const auto& seed : axis("seed")) {
            for (const auto& init_seed : axis("init_seed")) {
            json j = merged;
            const bool euclid = j.contains("potential") && j["potential"].value("kind", "") == "euclidean";
            if (!lam.is_null() && !euclid) j["potential"]["lambda"] = lam;
            if (!p.is_null() && j["potential"].value("kind", "") == "smoothed") j["potential"]["p"] = p;
            if (!lr.is_null()) j["train"]["lr"] = lr;
            if (!seed.is_null()) {
              j["train"]["seed"] = seed;
              j["data"]["seed"] = seed;
              j["data"]["teacher_seed"] = seed;
            }
            if (!init_seed.is_null()) j["train"]["seed"] = init_seed;
            RunConfig c = parse_config_text(j.dump(), base_dir);
            if (seen.insert(to_json(c)).second) out.push_back(std::move(c));
            }
          }
        }
      }
    }
  }
  return out;
}

std::vector<SweepRow> run_sweep(const std::vector<RunConfig>& configs, const std::filesystem::path& out_dir,
                                int jobs) {
  std::filesystem::create_directories(out_dir);
  std::vector<SweepRow> rows(configs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      SweepRow& row = rows[i];
      row.config = configs[i];
      row.hash = config_hash(row.config);
      row.dir = out_dir / (potential_label(row.config.potential) + "_" + row.hash);
      try {
        const RunResult res = run(row.config);
        save_run(row.config, res, row.dir);
        row.status = std::string(to_string(res.status));
        row.error = res.message;
        row.ok = res.status != RunStatus::Diverged && !res.records.empty();
        if (!res.records.empty()) row.final_record = res.records.back();
      } catch (const std::exception& e) {
        row.status = "failed";
        row.error = e.what();
        row.ok = false;
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(configs.size())));
  std::vector<std::jthread> pool;
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  pool.clear();
  return rows;
}

const std::vector<std::string>& summary_margins() {
  static const std::vector<std::string> names = {"q_margin",  "q_soft_margin", "margin_l1",      "margin_l2",
                                                 "margin_lp", "horizon_margin", "multi_q_margin"};
  return names;
}

double margin_value(const MetricsRecord& r, const std::string& name) {
  if (name == "q_margin") return r.q_margin;
  if (name == "q_soft_margin") return r.q_soft_margin;
  if (name == "margin_l1") return r.margin_l1;
  if (name == "margin_l2") return r.margin_l2;
  if (name == "margin_lp") return r.margin_lp;
  if (name == "horizon_margin") return r.horizon_margin;
  if (name == "multi_q_margin") return r.multi_q_margin;
  throw std::invalid_argument("unknown margin column '" + name + "'");
}

std::vector<std::pair<std::string, std::string>> best_per_margin(const std::vector<SweepRow>& rows) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& name : summary_margins()) {
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& r : rows) {
      if (!r.ok) continue;
      const double v = margin_value(r.final_record, name);
      if (!std::isfinite(v)) continue;
      auto& a = acc[group_label(r.config)];
      a.first += v;
      a.second += 1;
    }
    std::string best;
    double best_mean = -std::numeric_limits<double>::infinity();
    for (const auto& [label, a] : acc) {
      const double mean = a.first / a.second;
      if (mean > best_mean) {
        best_mean = mean;
        best = label;
      }
    }
    out.emplace_back(name, best);
  }
  return out;
}

void write_summary_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  const auto best = best_per_margin(rows);
  os << "run,hash,potential,lambda,p,lr,seed,status,steps,time,log_loss,q_min";
  for (const auto& m : summary_margins()) os << ',' << m;
  os << ",active_neurons,kkt_eps,beta,best_per_margin\n";
  for (const auto& r : rows) {
    const auto& c = r.config;
    const auto& f = r.final_record;
    const std::string label = group_label(c);
    std::string marks;
    for (const auto& [name, who] : best) {
      if (who == label) marks += (marks.empty() ? "" : ";") + name;
    }
    os << r.dir.filename().string() << ',' << r.hash << ',' << label << ',' << fmt(c.potential.base.lambda) << ','
       << fmt(c.potential.base.p) << ',' << fmt(c.train.lr) << ',' << c.train.seed << ',' << r.status << ',';
    if (r.ok) {
      os << f.step << ',' << fmt(f.time) << ',' << fmt(f.log_loss) << ',' << fmt(f.q_min);
      for (const auto& m : summary_margins()) os << ',' << fmt(margin_value(f, m));
      os << ',' << f.active_neurons << ',' << fmt(f.kkt_eps) << ',' << fmt(f.beta);
    } else {
      os << ",,,";
      for (std::size_t i = 0; i < summary_margins().size(); ++i) os << ',';
      os << ",,,";
    }
    os << ',' << marks << '\n';
  }
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

SummaryTable read_summary_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open summary '" + path.string() + "'");
  SummaryTable t;
  std::string line;
  if (!std::getline(is, line)) throw IoError(path.string() + ": missing header");
  t.header = split(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) throw IoError(path.string() + ": ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

std::string render_report(const SummaryTable& table) {
  const auto col = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < table.header.size(); ++i) {
      if (table.header[i] == name) return i;
    }
    throw IoError("summary is missing column '" + name + "'");
  };
  const std::size_t pot = col("potential");
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<double, int>>> acc;
  const auto& margins = summary_margins();
  for (const auto& row : table.rows) {
    const auto& label = row[pot];
    if (!acc.count(label)) {
      order.push_back(label);
      acc[label].assign(margins.size(), {0.0, 0});
    }
    for (std::size_t m = 0; m < margins.size(); ++m) {
      const auto& cell = row[col(margins[m])];
      if (cell.empty() || cell == "nan") continue;
      acc[label][m].first += std::stod(cell);
      acc[label][m].second += 1;
    }
  }
  std::vector<std::vector<std::string>> cells;
  std::vector<double> best(margins.size(), -std::numeric_limits<double>::infinity());
  for (const auto& label : order) {
    for (std::size_t m = 0; m < margins.size(); ++m) {
      const auto& a = acc[label][m];
      if (a.second) best[m] = std::max(best[m], a.first / a.second);
    }
  }
  std::vector<std::string> head = {"potential", "runs"};
  head.insert(head.end(), margins.begin(), margins.end());
  cells.push_back(head);
  for (const auto& label : order) {
    std::vector<std::string> line = {label, std::to_string(acc[label].empty() ? 0 : acc[label][0].second)};
    for (std::size_t m = 0; m < margins.size(); ++m) {
      const auto& a = acc[label][m];
      if (!a.second) {
        line.push_back("-");
        continue;
      }
      const double mean = a.first / a.second;
      std::ostringstream os;
      os << std::scientific << std::setprecision(3) << mean << (mean == best[m] ? " *" : "  ");
      line.push_back(os.str());
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream os;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      os << (i ? "  " : "") << std::left << std::setw(static_cast<int>(width[i])) << line[i];
    }
    os << '\n';
  }
  os << "* largest mean per column\n";
  return os.str();
}

}  // namespace mirrorflow
