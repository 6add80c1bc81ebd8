#include "magfield/cli.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "magfield/bench.hpp"
#include "magfield/dataset.hpp"
#include "magfield/error.hpp"
#include "magfield/gan/train.hpp"
#include "magfield/magnetsim.hpp"
#include "magfield/measured.hpp"

namespace magfield::cli {

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::optional<std::string> precision;
};

std::optional<gan::Precision> precision_of(const Globals& g) {
  if (!g.precision) return std::nullopt;
  return *g.precision == "double" ? gan::Precision::double_ : gan::Precision::single;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void require_file(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::exists(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

struct TaskFlags {
  std::optional<std::string> kind;
  std::optional<int> side;
  std::optional<int> region_side;
  std::optional<int> regions;

  void add(CLI::App* cmd) {
    cmd->add_option("--task", kind, "inpaint or outpaint")
        ->check(CLI::IsMember({"inpaint", "outpaint"}));
    cmd->add_option("--side", side, "inpaint mask side in pixels");
    cmd->add_option("--region-side", region_side, "outpaint given-region side in pixels");
    cmd->add_option("--regions", regions, "outpaint given-region count");
  }
  void apply(TaskSpec& t) const {
    if (kind) t.kind = *kind == "inpaint" ? TaskKind::inpaint : TaskKind::outpaint;
    if (side) t.side_px = *side;
    if (region_side) t.region_side_px = *region_side;
    if (regions) t.n_regions = *regions;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Magnetic field inpainting and outpainting toolkit", "magfield"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--threads", g.threads, "worker threads (0 = runtime default)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--precision", g.precision, "network precision")
      ->check(CLI::IsMember({"single", "double"}));

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
  std::optional<std::filesystem::path> gen_config;
  std::size_t gen_n = 0;
  std::optional<int> gen_size;
  std::filesystem::path gen_out;
  gen->add_option("--config", gen_config, "config file ([dataset] section)");
  gen->add_option("--n", gen_n, "sample count")->required();
  gen->add_option("--size", gen_size, "plane side in pixels (overrides the config)");
  gen->add_option("--out", gen_out, "dataset file")->required();

  // train
  auto* tr = app.add_subcommand("train", "train the generator and critic");
  std::optional<std::filesystem::path> tr_config, tr_resume;
  std::filesystem::path tr_data, tr_out;
  std::optional<int> tr_iters;
  std::optional<std::string> tr_physics;
  tr->add_option("--config", tr_config, "config file ([task], [train])");
  tr->add_option("--data", tr_data, "dataset file")->required();
  tr->add_option("--out", tr_out, "checkpoint path; the trace goes to <out>.trace.tsv")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  tr->add_option("--iterations", tr_iters, "total iteration target");
  tr->add_option("--physics", tr_physics, "physics losses")->check(CLI::IsMember({"on", "off"}));

  // bench
  auto* be = app.add_subcommand("bench", "evaluate methods on held-out samples");
  std::optional<std::filesystem::path> be_config;
  std::filesystem::path be_data, be_out;
  std::optional<std::string> be_methods;
  std::optional<std::size_t> be_n;
  std::optional<double> be_frac, pr_frac;
  std::vector<std::string> be_ckpts;
  bool be_timing = false;
  TaskFlags be_task;
  be->add_option("--config", be_config, "config file ([task], [bench])");
  be->add_option("--data", be_data, "dataset file")->required();
  be->add_option("--methods", be_methods, "comma-separated methods");
  be->add_option("--n", be_n, "held-out samples to evaluate");
  be->add_option("--test-fraction", be_frac, "held-out fraction at the end of the file (1 = all)");
  be->add_option("--checkpoint", be_ckpts, "checkpoint, as PATH or METHOD=PATH");
  be->add_flag("--timing", be_timing, "measure inference time (serial)");
  be->add_option("--out", be_out, "report path (TSV); sidecars <out>.json and <out>.timing.tsv")
      ->required();
  be_task.add(be);

  // profile-distance
  auto* pr = app.add_subcommand("profile-distance", "MAE versus distance to the nearest given pixel");
  std::optional<std::filesystem::path> pr_config;
  std::filesystem::path pr_data, pr_out;
  std::string pr_method, pr_reference = "spline";
  std::optional<std::size_t> pr_n;
  std::vector<std::string> pr_ckpts;
  TaskFlags pr_task;
  pr->add_option("--config", pr_config, "config file ([task], [bench])");
  pr->add_option("--data", pr_data, "dataset file")->required();
  pr->add_option("--method", pr_method, "method to profile")->required();
  pr->add_option("--reference", pr_reference, "reference method for the crossover");
  pr->add_option("--n", pr_n, "held-out samples");
  pr->add_option("--test-fraction", pr_frac, "held-out fraction at the end of the file (1 = all)");
  pr->add_option("--checkpoint", pr_ckpts, "checkpoint, as PATH or METHOD=PATH");
  pr->add_option("--out", pr_out, "profile table (TSV)")->required();
  pr_task.add(pr);

  // ingest-measured
  auto* in = app.add_subcommand("ingest-measured", "convert a measured-field table to a dataset");
  std::filesystem::path in_in, in_out;
  double in_spacing = 0.0;
  in->add_option("--in", in_in, "measurement table")->required();
  in->add_option("--spacing", in_spacing, "pixel spacing in meters")->required();
  in->add_option("--out", in_out, "dataset file")->required();

  // ablate
  auto* ab = app.add_subcommand("ablate", "paired training runs: physics on/off or a lambda_match sweep");
  std::filesystem::path ab_data, ab_out;
  std::optional<std::filesystem::path> ab_config;
  std::string ab_seeds = "1,2,3", ab_mode = "physics", ab_values = "7.2,1000";
  std::optional<int> ab_iters;
  ab->add_option("--data", ab_data, "dataset file")->required();
  ab->add_option("--config", ab_config, "desk-scale config ([task], [train])");
  ab->add_option("--seeds", ab_seeds, "comma-separated seeds");
  ab->add_option("--mode", ab_mode, "physics or lambda_match")
      ->check(CLI::IsMember({"physics", "lambda_match"}));
  ab->add_option("--lambda-match", ab_values, "comma-separated lambda_match values");
  ab->add_option("--iterations", ab_iters, "iterations per run");
  ab->add_option("--out", ab_out, "output directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto checkpoints = [](const std::vector<std::string>& specs,
                        const std::vector<bench::Method>& methods) {
    std::map<bench::Method, std::filesystem::path> m;
    for (const auto& s : specs) {
      const auto eq = s.find('=');
      if (eq != std::string::npos) {
        m[bench::parse_method(s.substr(0, eq))] = s.substr(eq + 1);
      } else {
        for (auto meth : methods) {
          if (bench::is_learned(meth)) m[meth] = s;
        }
      }
    }
    for (const auto& [meth, path] : m) require_file(path, "checkpoint");
    return m;
  };

  try {
    if (g.threads > 0) omp_set_num_threads(g.threads);

    if (*gen) {
      if (gen_n == 0) throw UsageError("gen-data: --n must be positive");
      sim::AssemblyConfig cfg = gen_config ? sim::load_assembly_config(*gen_config) : sim::AssemblyConfig{};
      if (gen_size) cfg.height = cfg.width = *gen_size;
      const auto h = sim::generate_dataset(gen_n, cfg, g.seed.value_or(1), gen_out);
      out << "samples=" << h.sample_count << " size=" << h.height << "x" << h.width
          << " dx=" << h.dx << " dz=" << h.dz << " config_digest=" << to_hex(h.config_digest) << '\n';
    } else if (*tr) {
      require_file(tr_data, "dataset");
      gan::TrainConfig cfg = tr_config ? gan::load_train_config(*tr_config) : gan::TrainConfig{};
      if (g.seed) cfg.seed = *g.seed;
      if (tr_iters) cfg.iterations = *tr_iters;
      if (tr_physics) cfg.physics_losses = *tr_physics == "on";
      if (auto p = precision_of(g)) cfg.precision = *p;
      cfg.validate();
      std::optional<gan::Checkpoint> resume;
      if (tr_resume) {
        require_file(*tr_resume, "checkpoint");
        resume = gan::load_checkpoint(*tr_resume);
      }
      const DatasetReader data(tr_data);
      gan::TrainHooks hooks;
      hooks.checkpoint_path = tr_out;
      hooks.checkpoint_interval = 500;
      hooks.diagnostic_path = tr_out.string() + ".diagnostic.txt";
      hooks.on_row = [&](const gan::TraceRow& row) {
        if (!std::isnan(row.val_mae)) {
          err << "iteration " << row.iteration << " val_MAE=" << row.val_mae << " mT\n";
        }
      };
      const gan::Checkpoint ck = gan::train(cfg, data, std::move(resume), hooks);
      gan::write_trace(ck.trace, tr_out.string() + ".trace.tsv");
      out << "iterations=" << ck.iteration << " best_val_MAE=" << ck.best_val_mae
          << " checkpoint=" << tr_out.string() << '\n';
    } else if (*be) {
      require_file(be_data, "dataset");
      bench::BenchConfig cfg = be_config ? bench::load_bench_config(*be_config) : bench::BenchConfig{};
      if (be_methods) {
        cfg.methods.clear();
        for (const auto& m : split(*be_methods)) cfg.methods.push_back(bench::parse_method(m));
      }
      if (be_n) cfg.n = *be_n;
      if (be_frac) cfg.test_fraction = *be_frac;
      if (g.seed) cfg.seed = *g.seed;
      if (be_timing) cfg.timing = true;
      be_task.apply(cfg.task);
      for (const auto& [m, p] : checkpoints(be_ckpts, cfg.methods)) cfg.checkpoints[m] = p;
      cfg.precision = precision_of(g);
      const DatasetReader data(be_data);
      const bench::BenchReport rep = bench::run_bench(data, cfg, &err);
      write_file(be_out, bench::report_tsv(rep));
      write_file(be_out.string() + ".json", bench::report_json(rep, cfg));
      if (cfg.timing) write_file(be_out.string() + ".timing.tsv", bench::timing_tsv(rep));
      out << bench::report_table(rep);
    } else if (*pr) {
      require_file(pr_data, "dataset");
      bench::BenchConfig cfg = pr_config ? bench::load_bench_config(*pr_config) : bench::BenchConfig{};
      const auto method = bench::parse_method(pr_method);
      const auto reference = bench::parse_method(pr_reference);
      cfg.methods = {method, reference};
      if (method == reference) cfg.methods.pop_back();
      if (pr_n) cfg.n = *pr_n;
      if (pr_frac) cfg.test_fraction = *pr_frac;
      if (g.seed) cfg.seed = *g.seed;
      cfg.timing = false;
      pr_task.apply(cfg.task);
      for (const auto& [m, p] : checkpoints(pr_ckpts, cfg.methods)) cfg.checkpoints[m] = p;
      cfg.precision = precision_of(g);
      const DatasetReader data(pr_data);
      const bench::BenchReport rep = bench::run_bench(data, cfg, &err);
      for (const auto& row : rep.rows) {
        if (row.skipped) throw UsageError("profile-distance: " + bench::method_name(row.method) +
                                          " skipped: " + row.skip_reason);
      }
      const auto& mrow = rep.rows.front();
      const auto& rrow = rep.rows.back();
      const std::string text = bench::profile_tsv(mrow.profile, rrow.profile, pr_method, pr_reference);
      write_file(pr_out, text);
      const auto x = bench::crossover(mrow.profile, rrow.profile);
      out << "bins=" << mrow.profile.size() << " crossover_px=" << (x ? std::to_string(*x) : "none")
          << '\n';
    } else if (*in) {
      if (!(in_spacing > 0.0)) throw UsageError("ingest-measured: --spacing must be positive");
      std::ifstream table(in_in);
      if (!table) throw IoError("cannot open " + in_in.string());
      const Sample s = import_measured(table, in_spacing);
      save_dataset({s}, in_out);
      out << "samples=1 size=" << s.field.height() << "x" << s.field.width()
          << " source=measured flanking_layers=no\n";
    } else if (*ab) {
      require_file(ab_data, "dataset");
      gan::TrainConfig cfg = ab_config ? gan::load_train_config(*ab_config) : gan::TrainConfig{};
      if (ab_iters) cfg.iterations = *ab_iters;
      if (auto p = precision_of(g)) cfg.precision = *p;
      cfg.validate();
      bench::AblationConfig ac;
      ac.mode = ab_mode == "physics" ? bench::AblationMode::physics : bench::AblationMode::lambda_match;
      ac.seeds.clear();
      for (const auto& s : split(ab_seeds)) ac.seeds.push_back(std::stoull(s));
      ac.lambda_match_values.clear();
      for (const auto& v : split(ab_values)) ac.lambda_match_values.push_back(std::stod(v));
      const DatasetReader data(ab_data);
      const auto runs = bench::run_ablation(data, cfg, ac, ab_out, &err);
      out << bench::ablation_summary(runs);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SpecError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "usage error: bad number: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace magfield::cli
