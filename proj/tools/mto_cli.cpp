#include "mto/entropy_oracle.hpp"
#include "mto/harness.hpp"
#include "mto/plots.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace mto;

namespace {

fs::path resolve_run_dir(const ExperimentConfig& cfg, const std::string& override_dir, const std::string& prefix) {
  if (!override_dir.empty()) return override_dir;
  if (!cfg.output.run_dir.empty()) return cfg.output.run_dir;
  return default_run_root() / (prefix + "-" + config_hash(cfg));
}

TrainHooks progress_hooks(bool quiet, std::size_t steps) {
  TrainHooks h;
  if (quiet) return h;
  const std::size_t every = std::max<std::size_t>(1, steps / 20);
  h.on_step = [every](std::size_t step, const StepLog& log) {
    if (step % every == 0)
      std::fprintf(stderr, "step %6zu  lr %.2e  total %.5f  ss %.5f  h0 %.4f%s\n", step, log.lr, log.total, log.parts.ss, log.h0,
                   log.guard ? "  [guard]" : "");
  };
  return h;
}

std::vector<PatchGrid<double>> load_analysis_data(const std::string& spec, Index image_size, Index patch, std::size_t count) {
  std::vector<Image> images;
  if (spec.rfind("synthetic", 0) == 0) {
    std::uint64_t seed = 0;
    if (auto colon = spec.find(':'); colon != std::string::npos) seed = std::stoull(spec.substr(colon + 1));
    images = synthetic_corpus(count, image_size, seed);
  } else if (fs::is_directory(spec)) {
    images = load_image_directory(spec, image_size);
  } else if (fs::exists(spec)) {
    images = read_raw_tensor(spec);
    if (!images.empty() && images.front().height != image_size)
      throw DimensionError("raw tensor images do not match the checkpoint image size");
  } else {
    throw IoError("data path '" + spec + "' does not exist");
  }
  if (images.size() > count) images.resize(count);
  return patchify_all(images, patch);
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoull(tok));
  return out;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked token optimization laboratory"};
  app.require_subcommand(1);

  std::string config_path, run_dir;
  bool quiet = false;
  auto* pretrain = app.add_subcommand("pretrain", "Train one model from a config file");
  pretrain->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  pretrain->add_option("--run-dir", run_dir, "Output directory (overrides output.run_dir)");
  pretrain->add_flag("--quiet", quiet, "No progress lines");

  std::string checkpoint, data, compare, out_dir;
  double ratio = -1;
  std::uint64_t mask_seed = 0;
  std::size_t n_images = 64;
  auto* analyze = app.add_subcommand("analyze", "Heterogeneity profile and quadrant maps of a checkpoint");
  analyze->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  analyze->add_option("--data", data, "Image directory, raw tensor file, or synthetic[:seed]")->required();
  analyze->add_option("--compare", compare, "Earlier checkpoint of the same run")->check(CLI::ExistingFile);
  analyze->add_option("--ratio", ratio, "Mask ratio (default 0.6, or 0.75 for decoder_masked)");
  analyze->add_option("--mask-seed", mask_seed, "Mask seed");
  analyze->add_option("--images", n_images, "Number of images to analyse");
  analyze->add_option("--out", out_dir, "Directory for quadrant maps");

  std::string curve1, curve2;
  double e1 = 0, e2 = 0;
  auto* rauc_cmd = app.add_subcommand("rauc", "Relative area under two training curves");
  rauc_cmd->add_option("curve1", curve1, "Baseline curve CSV")->required()->check(CLI::ExistingFile);
  rauc_cmd->add_option("curve2", curve2, "Compared curve CSV")->required()->check(CLI::ExistingFile);
  rauc_cmd->add_option("--e1", e1, "Window start epoch")->required();
  rauc_cmd->add_option("--e2", e2, "Window end epoch")->required();

  Index n = 1, N = 2, grid_steps = 50;
  double floor = 1e-4;
  auto* prove = app.add_subcommand("prove", "Enumerate attention rows for the entropy inequality");
  prove->add_option("--n", n, "Masked tokens")->required();
  prove->add_option("--N", N, "Total tokens")->required();
  prove->add_option("--grid-steps", grid_steps, "Simplex grid resolution");
  prove->add_option("--floor", floor, "Entry floor");

  std::string seeds_arg;
  auto* ablate = app.add_subcommand("ablate", "Run the 8-row loss-flag matrix");
  ablate->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  ablate->add_option("--seeds", seeds_arg, "Comma-separated seeds (default: optimization.seed)");
  ablate->add_option("--run-dir", run_dir, "Output directory");
  ablate->add_flag("--quiet", quiet, "No progress lines");

  std::vector<std::string> runs;
  auto* plot = app.add_subcommand("plot", "Curve, profile and quadrant plots for finished runs");
  plot->add_option("--runs", runs, "Run directories")->required()->expected(1, -1);
  plot->add_option("--out", out_dir, "Output directory (default: first run directory)");

  std::string l_spa_list = "0,0.001", l_e_list = "0,0.05", l_r_list = "0,0.1";
  auto* grid = app.add_subcommand("grid", "Grid search over loss weights");
  grid->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  grid->add_option("--lambda-spa", l_spa_list, "Comma-separated values");
  grid->add_option("--lambda-e", l_e_list, "Comma-separated values");
  grid->add_option("--lambda-r", l_r_list, "Comma-separated values");
  grid->add_option("--run-dir", run_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pretrain) {
      ExperimentConfig cfg = load_config(config_path);
      cfg.output.run_dir = resolve_run_dir(cfg, run_dir, "pretrain").string();
      const RunRecord r = train(cfg, load_dataset(cfg), progress_hooks(quiet, cfg.optimization.steps));
      std::cout << "run_dir: " << r.run_dir << "\nconfig_hash: " << r.config_hash << "\nstatus: " << r.status
                << "\nsteps: " << r.steps_completed << "\nfinal_score: " << r.final_score()
                << "\nscore: " << r.score_definition << "\nguard_events: " << r.guard_events << '\n';
      if (!r.profiles.empty()) std::cout << "final_monotonicity: " << r.profiles.back().monotonicity << '\n';
      return r.completed() ? 0 : 1;
    }

    if (*analyze) {
      const Params late = load_checkpoint<double>(checkpoint);
      const ModelConfig& mc = late.config;
      if (ratio < 0) ratio = mc.routing == Routing::decoder_masked ? 0.75 : 0.6;
      const auto batch = load_analysis_data(data, mc.image_size, mc.patch_size, n_images);
      json report;
      if (!compare.empty()) {
        const Params early = load_checkpoint<double>(compare);
        const CheckpointComparison c = compare_checkpoints(early, late, batch, ratio, mask_seed);
        report = {{"early", to_json(c.early)},
                  {"late", to_json(c.late)},
                  {"early_score", c.early_score},
                  {"late_score", c.late_score},
                  {"score_difference", c.score_difference}};
      } else {
        const auto traces = trace_batch(late, batch, ratio, mask_seed);
        HeterogeneityProfile p = profile(traces);
        p.checkpoint_id = checkpoint;
        p.batch_descriptor = data + "[0:" + std::to_string(batch.size()) + "]";
        report = to_json(p);
        if (!out_dir.empty()) {
          fs::create_directories(out_dir);
          const auto& t = traces.front();
          json quads = json::array();
          for (std::size_t d = 0; d < t.states().size(); ++d) {
            const QuadrantMap q = quadrant_map(t.states()[d], t.mask);
            const std::string stem = (fs::path(out_dir) / ("quadrant_d" + std::to_string(d))).string();
            write_gray_png(q.matrix, stem + ".png");
            std::ofstream csv(stem + ".csv");
            for (Index y = 0; y < q.matrix.rows(); ++y)
              for (Index x = 0; x < q.matrix.cols(); ++x) csv << q.matrix(y, x) << (x + 1 == q.matrix.cols() ? '\n' : ',');
            quads.push_back({{"depth", d}, {"quadrant_means", q.quadrant_means}, {"image", stem + ".png"}});
          }
          report["quadrants"] = quads;
        }
      }
      std::cout << report.dump(2) << '\n';
      return 0;
    }

    if (*rauc_cmd) {
      const double v = rauc(read_curve_csv(curve1, "curve1"), read_curve_csv(curve2, "curve2"), e1, e2);
      std::printf("%.4f\n", v);
      return 0;
    }

    if (*prove) {
      const EntropyCaseReport r = entropy_case_oracle(n, N, grid_steps, floor);
      const json j = {{"n", r.n},
                      {"N", r.N},
                      {"grid_steps", r.grid_steps},
                      {"floor", r.floor},
                      {"case1_count", r.case1_count},
                      {"case2_count", r.case2_count},
                      {"case1_entropy_range", {r.min_case1_entropy, r.max_case1_entropy}},
                      {"case2_entropy_range", {r.min_case2_entropy, r.max_case2_entropy}},
                      {"case1_near_limit_entropy", r.case1_near_limit_entropy},
                      {"case2_near_limit_entropy", r.case2_near_limit_entropy},
                      {"case1_limit_entropy", r.case1_limit_entropy},
                      {"case2_limit_entropy", r.case2_limit_entropy},
                      {"log_n", std::log(static_cast<double>(r.n))},
                      {"case1_monotone", r.case1_monotone},
                      {"case2_monotone", r.case2_monotone},
                      {"inequality_holds", r.inequality_holds}};
      std::cout << j.dump(2) << '\n';
      return r.inequality_holds ? 0 : 1;
    }

    if (*ablate) {
      ExperimentConfig cfg = load_config(config_path);
      const fs::path root = resolve_run_dir(cfg, run_dir, "ablate");
      cfg.output.run_dir = root.string();
      const AblationReport rep = run_ablation(cfg, parse_seeds(seeds_arg), [&](const AblationEntry& e) {
        if (!quiet)
          std::fprintf(stderr, "seed %llu row %-9s final %.6f  %s\n", static_cast<unsigned long long>(e.seed),
                       e.flags.name().c_str(), e.final_score, e.status.c_str());
      });
      write_json(root / "ablation.json", to_json(rep));
      const std::string table = format_ablation(rep);
      std::ofstream(root / "ablation.txt") << table;
      std::cout << table;
      return 0;
    }

    if (*plot) {
      std::vector<RunRecord> records;
      for (const auto& d : runs) records.push_back(read_run_record(d));
      const fs::path out = out_dir.empty() ? fs::path(runs.front()) / "plots" : fs::path(out_dir);
      for (const auto& f : emit_plots(records, out)) std::cout << f << '\n';
      return 0;
    }

    if (*grid) {
      ExperimentConfig cfg = load_config(config_path);
      const fs::path root = resolve_run_dir(cfg, run_dir, "grid");
      const Dataset ds = load_dataset(cfg);
      ExperimentConfig base = cfg;
      base.loss.enable_spa = base.loss.enable_e = base.loss.enable_r = false;
      base.output.run_dir = (root / "baseline").string();
      const RunRecord ref = train(base, ds);
      std::printf("%-10s %-10s %-10s %14s %10s\n", "lambda_spa", "lambda_e", "lambda_r", "final_score", "rauc");
      json rows = json::array();
      for (double a : parse_list(l_spa_list))
        for (double b : parse_list(l_e_list))
          for (double c : parse_list(l_r_list)) {
            ExperimentConfig g = cfg;
            g.loss.enable_spa = g.loss.enable_e = g.loss.enable_r = true;
            g.loss.weights.lambda_spa = a;
            g.loss.weights.lambda_e = b;
            g.loss.weights.lambda_r = c;
            std::ostringstream name;
            name << "spa" << a << "_e" << b << "_r" << c;
            g.output.run_dir = (root / name.str()).string();
            const RunRecord r = train(g, ds);
            double v = std::nan("");
            if (r.completed()) try {
                v = rauc_window(ref.curve, r.curve, 0.2);
              } catch (const DegenerateBaselineError&) {
              }
            std::printf("%-10g %-10g %-10g %14.6f %10.4f\n", a, b, c, r.final_score(), v);
            rows.push_back({{"lambda_spa", a}, {"lambda_e", b}, {"lambda_r", c}, {"final_score", r.final_score()},
                            {"rauc_vs_baseline", std::isnan(v) ? json(nullptr) : json(v)}, {"status", r.status}});
          }
      write_json(root / "grid.json", {{"baseline_final_score", ref.final_score()}, {"rows", rows}});
      return 0;
    }
  } catch (const mto::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
