#include "magfield/bench.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>

#include "magfield/error.hpp"
#include "magfield/rng.hpp"

namespace magfield::bench {

namespace pt = boost::property_tree;

namespace {

constexpr std::uint64_t kMaskStream = 0xbe7c0000ULL;

const std::pair<Method, const char*> kNames[] = {
    {Method::linear, "linear"}, {Method::spline, "spline"},   {Method::biharmonic, "biharmonic"},
    {Method::gp, "gp"},         {Method::wgan_gp, "wgan_gp"}, {Method::ours, "ours"},
    {Method::oracle, "oracle"},
};

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string canonical(const BenchConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "methods=";
  for (std::size_t i = 0; i < c.methods.size(); ++i) os << (i ? "," : "") << method_name(c.methods[i]);
  os << "\ntask=" << task_label(c.task) << "\nside_px=" << c.task.side_px
     << "\njitter_frac=" << c.task.jitter_frac << "\nn_regions=" << c.task.n_regions
     << "\nregion_side_px=" << c.task.region_side_px << "\ns_pad=" << c.task.s_pad
     << "\ninpaint_pad=" << c.task.inpaint_pad << "\nn=" << c.n << "\nseed=" << c.seed
     << "\ntest_fraction=" << c.test_fraction << "\nknot_spacing=" << c.spline.knot_spacing
     << "\nsmoothing=" << c.spline.smoothing << "\ngp_lengthscale=" << c.gp.lengthscale
     << "\ngp_signal_variance=" << c.gp.signal_variance << "\ngp_noise_jitter=" << c.gp.noise_jitter
     << '\n';
  for (const auto& [m, p] : c.checkpoints) os << "checkpoint." << method_name(m) << '=' << p.string() << '\n';
  return os.str();
}

FieldPlane run_method(Method m, const FieldPlane& input, const FieldPlane& truth, const Mask& mask,
                      const BenchConfig& c, const std::map<Method, gan::Checkpoint>& nets) {
  switch (m) {
    case Method::linear: return linear_interp(input, mask);
    case Method::spline: return spline_interp(input, mask, c.spline);
    case Method::biharmonic: return biharmonic_inpaint(input, mask);
    case Method::gp: return gp_predict(input, mask, c.gp);
    case Method::wgan_gp:
    case Method::ours: return gan::predict(nets.at(m), input, mask);
    case Method::oracle: return truth;
  }
  throw ContractError("unknown method");
}

}  // namespace

std::string method_name(Method m) {
  for (const auto& [k, n] : kNames) {
    if (k == m) return n;
  }
  throw ContractError("unknown method");
}

Method parse_method(const std::string& name) {
  for (const auto& [k, n] : kNames) {
    if (name == n) return k;
  }
  throw UsageError("unknown method '" + name + "'");
}

bool is_learned(Method m) { return m == Method::wgan_gp || m == Method::ours; }

std::string task_label(const TaskSpec& t) {
  if (t.kind == TaskKind::inpaint) return "inpaint_" + std::to_string(t.side_px);
  return "outpaint_" + std::to_string(t.region_side_px) + "x" + std::to_string(t.region_side_px);
}

void BenchConfig::validate() const {
  if (methods.empty()) throw UsageError("bench: no methods requested");
  if (n == 0) throw UsageError("bench: n must be positive");
  if (!(test_fraction > 0.0 && test_fraction <= 1.0)) {
    throw UsageError("bench: test_fraction must lie in (0, 1]");
  }
  if (timing_reps < 1 || timing_warmup < 0) throw UsageError("bench: bad timing repetitions");
  gp.validate();
  for (Method m : methods) {
    if (is_learned(m) && !checkpoints.count(m)) {
      throw UsageError("bench: method " + method_name(m) + " needs a checkpoint");
    }
  }
}

BenchConfig parse_bench_config(const std::string& ini_text) {
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw FormatError(std::string("bench config: ") + e.what());
  }
  BenchConfig c;
  // The [task] section is shared with training.
  c.task = gan::parse_train_config(ini_text).task;
  if (const auto b = tree.get_child_optional("bench")) {
    const auto& s = *b;
    if (const auto m = s.get_optional<std::string>("methods")) {
      c.methods.clear();
      for (const auto& name : split(*m, ',')) c.methods.push_back(parse_method(name));
    }
    c.n = s.get("n", c.n);
    c.seed = s.get("seed", c.seed);
    c.test_fraction = s.get("test_fraction", c.test_fraction);
    c.timing = s.get("timing", c.timing);
    c.timing_reps = s.get("timing_reps", c.timing_reps);
    c.timing_warmup = s.get("timing_warmup", c.timing_warmup);
    c.spline.knot_spacing = s.get("knot_spacing", c.spline.knot_spacing);
    c.spline.smoothing = s.get("smoothing", c.spline.smoothing);
    c.gp.lengthscale = s.get("gp_lengthscale", c.gp.lengthscale);
    c.gp.signal_variance = s.get("gp_signal_variance", c.gp.signal_variance);
    c.gp.noise_jitter = s.get("gp_noise_jitter", c.gp.noise_jitter);
    for (Method m : {Method::wgan_gp, Method::ours}) {
      if (const auto p = s.get_optional<std::string>("checkpoint_" + method_name(m))) {
        c.checkpoints[m] = *p;
      }
    }
  }
  return c;
}

BenchConfig load_bench_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_bench_config(text);
}

Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) {
    s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

std::vector<std::size_t> held_out_indices(std::size_t size, const BenchConfig& c) {
  const auto test = static_cast<std::size_t>(std::ceil(c.test_fraction * static_cast<double>(size)));
  const std::size_t start = size - std::min(test, size);
  if (size - start < c.n) {
    throw UsageError("bench: " + std::to_string(c.n) + " samples requested but only " +
                     std::to_string(size - start) + " are held out");
  }
  std::vector<std::size_t> idx(c.n);
  for (std::size_t i = 0; i < c.n; ++i) idx[i] = start + i;
  return idx;
}

Mask paired_mask(const BenchConfig& c, std::size_t slot, int height, int width) {
  Rng rng = stream_rng(c.seed ^ kMaskStream, slot);
  return make_mask(rng, c.task, height, width);
}

std::optional<std::string> skip_reason(Method m, const TaskSpec& task,
                                       const std::vector<Mask>& masks) {
  if (m == Method::linear && task.kind == TaskKind::outpaint) {
    return "linear interpolation does not support extrapolation";
  }
  if (m == Method::gp && task.kind == TaskKind::inpaint) {
    std::size_t given = 0;
    for (const auto& mk : masks) given = std::max(given, mk.given_count());
    if (given > kGpDensePoints) {
      return "gp on dense inpainting input (" + std::to_string(given) +
             " given pixels) is computationally prohibitive";
    }
  }
  return std::nullopt;
}

BenchReport run_bench(const DatasetReader& data, const BenchConfig& c, std::ostream* log) {
  c.validate();
  const int h = static_cast<int>(data.header().height);
  const int w = static_cast<int>(data.header().width);
  c.task.validate(h, w);

  BenchReport rep;
  rep.dataset_digest = to_hex(data.header().config_digest);
  rep.config_digest = to_hex(sha256(canonical(c)));
  rep.seed = c.seed;
  rep.sample_indices = held_out_indices(data.size(), c);
  const std::size_t n = rep.sample_indices.size();

  std::vector<Mask> masks(n);
  for (std::size_t i = 0; i < n; ++i) masks[i] = paired_mask(c, i, h, w);

  std::map<Method, gan::Checkpoint> nets;
  std::vector<Method> active;
  for (Method m : c.methods) {
    MethodRow row;
    row.method = m;
    row.task = task_label(c.task);
    if (const auto why = skip_reason(m, c.task, masks)) {
      row.skipped = true;
      row.skip_reason = *why;
      const std::string msg = "skip " + method_name(m) + " on " + row.task + ": " + *why;
      rep.log.push_back(msg);
      if (log) *log << msg << '\n';
    } else {
      if (is_learned(m)) {
        gan::Checkpoint ck = gan::load_checkpoint(c.checkpoints.at(m));
        if (c.precision) ck.config.precision = *c.precision;
        nets.emplace(m, std::move(ck));
      }
      active.push_back(m);
    }
    rep.rows.push_back(std::move(row));
  }

  struct Cell {
    MetricReport metrics;
    double seconds = std::numeric_limits<double>::quiet_NaN();
  };
  std::vector<std::vector<Cell>> cells(active.size(), std::vector<Cell>(n));
  std::vector<std::exception_ptr> errors(n);

  auto evaluate_slot = [&](std::size_t i) {
    try {
      const Sample s = data.read(rep.sample_indices[i]);
      const FieldPlane truth = s.field.plane(static_cast<int>(Layer::measurement));
      const FieldPlane input = make_input(truth, masks[i]);
      for (std::size_t k = 0; k < active.size(); ++k) {
        const FieldPlane pred = run_method(active[k], input, truth, masks[i], c, nets);
        cells[k][i].metrics = evaluate(pred, s, masks[i], true);
        if (c.timing) {
          for (int r = 1; r < c.timing_warmup; ++r) run_method(active[k], input, truth, masks[i], c, nets);
          std::vector<double> t;
          for (int r = 0; r < c.timing_reps; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            run_method(active[k], input, truth, masks[i], c, nets);
            t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
          }
          std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
          cells[k][i].seconds = t[t.size() / 2];
        }
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  // Timing runs serially so repetitions do not compete for cores. The first
  // evaluation of each sample doubles as the warm-up.
  if (c.timing) {
    for (std::size_t i = 0; i < n; ++i) evaluate_slot(i);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) evaluate_slot(i);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::size_t k = 0;
  for (auto& row : rep.rows) {
    if (row.skipped) {
      row.mae = row.l_div = row.l_curl = summarize({});
      row.seconds = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    std::vector<double> mae, div, curl, secs;
    std::vector<std::vector<ProfileBin>> profiles;
    for (const auto& cell : cells[k]) {
      mae.push_back(cell.metrics.mae);
      div.push_back(cell.metrics.l_div);
      curl.push_back(cell.metrics.l_curl);
      secs.push_back(cell.seconds);
      row.z_terms = row.z_terms && cell.metrics.z_terms;
      profiles.push_back(cell.metrics.profile);
    }
    row.samples = n;
    row.mae = summarize(mae);
    row.l_div = summarize(div);
    row.l_curl = summarize(curl);
    row.seconds = summarize(secs).mean;
    row.profile = pool_profiles(profiles);
    row.sample_mae = std::move(mae);
    ++k;
  }
  return rep;
}

std::string report_tsv(const BenchReport& r) {
  std::ostringstream os;
  os << "# dataset_digest=" << r.dataset_digest << " config_digest=" << r.config_digest
     << " seed=" << r.seed << '\n';
  os << "method\ttask\tstatus\tsamples\tmae_mean_mT\tmae_std_mT\tl_div_mean_mT_px\tl_div_std_mT_px"
        "\tl_curl_mean_uT_px\tl_curl_std_uT_px\tz_terms\n";
  for (const auto& row : r.rows) {
    os << method_name(row.method) << '\t' << row.task << '\t';
    if (row.skipped) {
      os << "skipped\t0\tnan\tnan\tnan\tnan\tnan\tnan\tn/a\n";
      continue;
    }
    os << "ok\t" << row.samples << '\t' << fmt(row.mae.mean) << '\t' << fmt(row.mae.std) << '\t'
       << fmt(row.l_div.mean) << '\t' << fmt(row.l_div.std) << '\t' << fmt(row.l_curl.mean) << '\t'
       << fmt(row.l_curl.std) << '\t' << (row.z_terms ? "yes" : "n/a") << '\n';
  }
  for (const auto& line : r.log) os << "# " << line << '\n';
  return os.str();
}

std::string report_json(const BenchReport& r, const BenchConfig& c) {
  nlohmann::ordered_json j;
  j["dataset_digest"] = r.dataset_digest;
  j["config_digest"] = r.config_digest;
  j["config"] = canonical(c);
  j["seed"] = r.seed;
  j["sample_indices"] = r.sample_indices;
  auto rows = nlohmann::ordered_json::array();
  auto num = [](double v) { return std::isnan(v) ? nlohmann::ordered_json() : nlohmann::ordered_json(v); };
  for (const auto& row : r.rows) {
    nlohmann::ordered_json o;
    o["method"] = method_name(row.method);
    o["task"] = row.task;
    o["skipped"] = row.skipped;
    if (row.skipped) {
      o["skip_reason"] = row.skip_reason;
    } else {
      o["samples"] = row.samples;
      o["mae_mT"] = {{"mean", num(row.mae.mean)}, {"std", num(row.mae.std)}};
      o["l_div_mT_px"] = {{"mean", num(row.l_div.mean)}, {"std", num(row.l_div.std)}};
      o["l_curl_uT_px"] = {{"mean", num(row.l_curl.mean)}, {"std", num(row.l_curl.std)}};
      o["z_terms"] = row.z_terms;
      auto prof = nlohmann::ordered_json::array();
      for (const auto& b : row.profile) prof.push_back({b.distance, b.count, b.mae});
      o["profile"] = prof;
    }
    rows.push_back(o);
  }
  j["rows"] = rows;
  j["log"] = r.log;
  return j.dump(2) + "\n";
}

std::string timing_tsv(const BenchReport& r) {
  std::ostringstream os;
  os << "method\ttask\tmean_seconds\n";
  for (const auto& row : r.rows) {
    os << method_name(row.method) << '\t' << row.task << '\t'
       << (row.skipped ? "nan" : fmt(row.seconds)) << '\n';
  }
  return os.str();
}

std::string report_table(const BenchReport& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-11s %-14s %-22s %-22s %-22s %s\n", "method", "task",
                "MAE [mT]", "L_div [mT/px]", "L_curl [uT/px]", "time [s]");
  os << line;
  for (const auto& row : r.rows) {
    if (row.skipped) {
      std::snprintf(line, sizeof line, "%-11s %-14s skipped: %s\n", method_name(row.method).c_str(),
                    row.task.c_str(), row.skip_reason.c_str());
    } else {
      const std::string curl = row.z_terms ? fmt(row.l_curl.mean) + " +- " + fmt(row.l_curl.std)
                                           : "n/a (in-plane " + fmt(row.l_curl.mean) + ")";
      std::snprintf(line, sizeof line, "%-11s %-14s %-22s %-22s %-22s %s\n",
                    method_name(row.method).c_str(), row.task.c_str(),
                    (fmt(row.mae.mean) + " +- " + fmt(row.mae.std)).c_str(),
                    (fmt(row.l_div.mean) + " +- " + fmt(row.l_div.std)).c_str(), curl.c_str(),
                    std::isnan(row.seconds) ? "-" : fmt(row.seconds).c_str());
    }
    os << line;
  }
  return os.str();
}

std::vector<ProfileBin> pool_profiles(const std::vector<std::vector<ProfileBin>>& profiles) {
  std::size_t bins = 0;
  for (const auto& p : profiles) bins = std::max(bins, p.size());
  std::vector<ProfileBin> out(bins);
  std::vector<double> sum(bins, 0.0);
  for (std::size_t b = 0; b < bins; ++b) out[b].distance = static_cast<int>(b) + 1;
  for (const auto& p : profiles) {
    for (std::size_t b = 0; b < p.size(); ++b) {
      out[b].count += p[b].count;
      sum[b] += p[b].mae * static_cast<double>(p[b].count);
    }
  }
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].mae = out[b].count ? sum[b] / static_cast<double>(out[b].count) : 0.0;
  }
  return out;
}

std::optional<int> crossover(const std::vector<ProfileBin>& m, const std::vector<ProfileBin>& ref) {
  bool was_above = false;
  const std::size_t bins = std::min(m.size(), ref.size());
  for (std::size_t b = 0; b < bins; ++b) {
    if (m[b].count == 0 || ref[b].count == 0) continue;
    if (m[b].mae < ref[b].mae) {
      if (was_above) return m[b].distance;
    } else {
      was_above = true;
    }
  }
  return std::nullopt;
}

std::string profile_tsv(const std::vector<ProfileBin>& m, const std::vector<ProfileBin>& ref,
                        const std::string& ml, const std::string& rl) {
  std::ostringstream os;
  os << "distance_px\tcount\t" << ml << "_mae_mT\t" << rl << "_mae_mT\n";
  const std::size_t bins = std::max(m.size(), ref.size());
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t count = b < m.size() ? m[b].count : ref[b].count;
    os << b + 1 << '\t' << count << '\t' << (b < m.size() ? fmt(m[b].mae) : "nan") << '\t'
       << (b < ref.size() ? fmt(ref[b].mae) : "nan") << '\n';
  }
  const auto x = crossover(m, ref);
  os << "# crossover_px=" << (x ? std::to_string(*x) : "none") << '\n';
  return os.str();
}

// ------------------------------------------------------------ ablation

namespace {

std::string value_label(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

AblationRun finish_run(std::string label, std::uint64_t seed, const gan::TrainConfig& cfg,
                       gan::Checkpoint ck, int tail) {
  AblationRun r;
  r.label = std::move(label);
  r.seed = seed;
  r.physics = cfg.physics_losses;
  r.lambda_match = cfg.lambdas.match;
  r.trace = std::move(ck.trace);
  for (auto it = r.trace.rbegin(); it != r.trace.rend(); ++it) {
    if (!std::isnan(it->val_mae)) {
      r.final_validation = *it;
      break;
    }
  }
  if (!r.trace.empty()) {
    r.final_match = r.trace.back().generator.match;
    const std::size_t from = r.trace.size() > static_cast<std::size_t>(tail) ? r.trace.size() - tail : 0;
    double s = 0.0;
    for (std::size_t i = from; i < r.trace.size(); ++i) s += r.trace[i].generator.match;
    r.tail_match = s / static_cast<double>(r.trace.size() - from);
  }
  return r;
}

}  // namespace

std::vector<AblationRun> run_ablation(const DatasetReader& data, const gan::TrainConfig& base,
                                      const AblationConfig& config,
                                      const std::optional<std::filesystem::path>& out_dir,
                                      std::ostream* log) {
  if (config.seeds.empty()) throw UsageError("ablate: no seeds");
  if (config.mode == AblationMode::lambda_match && config.lambda_match_values.empty()) {
    throw UsageError("ablate: no lambda_match values");
  }
  if (out_dir) std::filesystem::create_directories(*out_dir);

  struct Job {
    std::string label;
    gan::TrainConfig cfg;
  };
  std::vector<Job> jobs;
  for (std::uint64_t seed : config.seeds) {
    gan::TrainConfig cfg = base;
    cfg.seed = seed;
    if (config.mode == AblationMode::physics) {
      for (bool on : {true, false}) {
        cfg.physics_losses = on;
        jobs.push_back({"seed" + std::to_string(seed) + "_physics_" + (on ? "on" : "off"), cfg});
      }
    } else {
      for (double v : config.lambda_match_values) {
        cfg.lambdas.match = v;
        jobs.push_back({"seed" + std::to_string(seed) + "_lambda_match_" + value_label(v), cfg});
      }
    }
  }

  std::vector<AblationRun> runs;
  for (const auto& job : jobs) {
    if (log) *log << "ablate: training " << job.label << '\n';
    gan::Checkpoint ck = gan::train(job.cfg, data, std::nullopt, {});
    if (out_dir) gan::write_trace(ck.trace, *out_dir / (job.label + ".tsv"));
    runs.push_back(finish_run(job.label, job.cfg.seed, job.cfg, std::move(ck), config.tail));
  }
  if (out_dir) {
    std::ofstream out(*out_dir / "summary.tsv", std::ios::binary);
    out << ablation_summary(runs);
  }
  return runs;
}

std::string ablation_summary(const std::vector<AblationRun>& runs) {
  std::ostringstream os;
  os << "run\tseed\tphysics\tlambda_match\titerations\tfinal_val_MAE_mT\tfinal_val_L_div_mT_px"
        "\tfinal_val_L_curl_uT_px\tfinal_L_WGAN_GP\tfinal_L_match\ttail_mean_L_match\n";
  for (const auto& r : runs) {
    const gan::TraceRow& v = r.final_validation;
    os << r.label << '\t' << r.seed << '\t' << (r.physics ? "on" : "off") << '\t'
       << fmt(r.lambda_match) << '\t' << r.trace.size() << '\t' << fmt(v.val_mae) << '\t'
       << fmt(v.val_l_div) << '\t' << fmt(v.val_l_curl) << '\t'
       << (r.trace.empty() ? "nan" : fmt(r.trace.back().wgan_gp)) << '\t' << fmt(r.final_match)
       << '\t' << fmt(r.tail_match) << '\n';
  }
  return os.str();
}

}  // namespace magfield::bench
