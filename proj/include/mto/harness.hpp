#pragma once

#include "mto/analysis.hpp"
#include "mto/backbone.hpp"
#include "mto/checkpoint.hpp"
#include "mto/config.hpp"
#include "mto/dataset.hpp"
#include "mto/image_io.hpp"
#include "mto/metrics.hpp"
#include "mto/objectives.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace mto {

using Params = ModelParameters<double>;

inline const char* kScoreDefinition = "negated mean held-out masked-patch squared error (higher is better)";

// --- data -----------------------------------------------------------------

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  const Index size = cfg.model.image_size;
  std::vector<Image> images;
  std::string descriptor;
  if (d.format == "synthetic") {
    images = synthetic_corpus(d.train_count + d.holdout_count, size, d.seed);
    descriptor = "synthetic:" + std::to_string(images.size()) + "@" + std::to_string(size) + ":seed" + std::to_string(d.seed);
  } else if (d.format == "images") {
    images = load_image_directory(d.path, size);
    descriptor = "images:" + d.path;
  } else {
    images = read_raw_tensor(d.path);
    if (!images.empty() && (images.front().height != size || images.front().width != size))
      throw DimensionError("raw tensor '" + d.path + "' images are " + std::to_string(images.front().height) + "x" +
                           std::to_string(images.front().width) + ", model expects " + std::to_string(size));
    descriptor = "raw:" + d.path;
  }
  return split_dataset(std::move(images), d.holdout_count, cfg.model.patch_size, d.seed, descriptor);
}

// --- optimiser ------------------------------------------------------------

inline double learning_rate_at(const OptimizationConfig& o, std::size_t step) {
  const auto warmup = static_cast<std::size_t>(std::ceil(o.warmup_fraction * static_cast<double>(o.steps)));
  if (step < warmup) return o.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::size_t>(1, o.steps - warmup));
  const double t = std::min(1.0, static_cast<double>(step - warmup) / span);
  return 0.5 * o.learning_rate * (1.0 + std::cos(M_PI * t));
}

template <typename T>
std::vector<std::pair<std::string, Mat<T>*>> parameter_list(ModelParameters<T>& p) {
  std::vector<std::pair<std::string, Mat<T>*>> out;
  p.visit([&](const std::string& name, Mat<T>& m) { out.emplace_back(name, &m); });
  return out;
}

// Adam with decoupled weight decay on projection matrices.
class Adam {
 public:
  Adam(const Params& params, const OptimizationConfig& o) : opt_(o), m_(params.zeros_like()), v_(params.zeros_like()) {}

  void step(Params& params, Params& grad, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    auto p = parameter_list(params);
    auto g = parameter_list(grad);
    auto m = parameter_list(m_);
    auto v = parameter_list(v_);
    for (std::size_t k = 0; k < p.size(); ++k) {
      Mat<double>& w = *p[k].second;
      const Mat<double>& gk = *g[k].second;
      Mat<double>& mk = *m[k].second;
      Mat<double>& vk = *v[k].second;
      mk = opt_.beta1 * mk + (1.0 - opt_.beta1) * gk;
      vk = opt_.beta2 * vk + (1.0 - opt_.beta2) * gk.cwiseAbs2();
      if (opt_.weight_decay > 0 && p[k].first.ends_with(".weight")) w *= 1.0 - lr * opt_.weight_decay;
      w.array() -= lr * (mk.array() / bc1) / ((vk.array() / bc2).sqrt() + 1e-8);
    }
  }

 private:
  OptimizationConfig opt_;
  Params m_;
  Params v_;
  std::size_t t_ = 0;
};

// --- objective ------------------------------------------------------------

struct BatchObjective {
  LossParts parts;                   // batch means
  std::vector<double> mean_profile;  // batch-mean H per traced depth
  LossWeights weights;               // effective weights after the guard
  bool guard = false;
  double total = 0;
  Params grad;
};

namespace detail {

inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t, std::size_t)>& body) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i, 0);
    return;
  }
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w)
    threads.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) body(i, w);
    });
  for (auto& t : threads) t.join();
}

struct ImageTerms {
  ForwardPass<double> fp;
  ValueGrad<double> recon;
  std::vector<ValueGrad<double>> h;
  ValueGrad<double> spa;
};

}  // namespace detail

// Per-image losses averaged over the batch; gradient of the weighted total.
// With workers > 1 the per-worker gradients are merged in completion order.
inline BatchObjective batch_objective(const Params& params, const std::vector<const PatchGrid<double>*>& batch,
                                      const std::vector<MaskSpec>& masks, const LossConfig& loss,
                                      std::size_t workers = 1) {
  if (batch.empty() || batch.size() != masks.size()) throw ArgumentError("batch_objective: batch and masks differ in size");
  const AffinityOptions aff{loss.scaled_affinity};
  BatchObjective out;
  out.weights = loss.effective();
  const bool need_h_grad = out.weights.lambda_e > 0 || out.weights.lambda_r > 0;
  const std::size_t B = batch.size();
  const Routing routing = params.config.routing;

  std::vector<detail::ImageTerms> terms(B);
  detail::parallel_for(B, workers, [&](std::size_t i, std::size_t) {
    auto& t = terms[i];
    t.fp = forward_pass(*batch[i], masks[i], params, routing);
    const auto& states = t.fp.trace.states();
    const Mat<double> pred = detail::linear(states.back(), params.head_w, params.head_b);
    t.recon = recon_loss_with_grad(pred, batch[i]->patches, masks[i]);
    for (std::size_t l = 0; l < states.size(); ++l) {
      if (need_h_grad) {
        t.h.push_back(heterogeneity_with_grad(states[l], masks[i], aff));
      } else {
        t.h.push_back({heterogeneity(states[l], masks[i], aff), {}});
      }
    }
    if (out.weights.lambda_spa > 0)
      t.spa = l_spa_with_grad(states[0], masks[i], aff);
    else
      t.spa.value = l_spa(states[0], masks[i], aff);
  });

  const std::size_t depth = terms[0].h.size();
  out.mean_profile.assign(depth, 0.0);
  std::vector<std::vector<double>> profiles(B);
  for (std::size_t i = 0; i < B; ++i) {
    auto& prof = profiles[i];
    for (const auto& h : terms[i].h) prof.push_back(h.value);
    for (std::size_t l = 0; l < depth; ++l) out.mean_profile[l] += prof[l] / static_cast<double>(B);
    out.parts.ss += terms[i].recon.value / static_cast<double>(B);
    out.parts.spa += terms[i].spa.value / static_cast<double>(B);
    out.parts.e += l_e(prof[0], loss.weights.epsilon) / static_cast<double>(B);
    out.parts.r += l_r(prof, loss.rank_direction) / static_cast<double>(B);
  }
  if (out.weights.lambda_r > 0 &&
      *std::min_element(out.mean_profile.begin(), out.mean_profile.end()) < loss.guard_floor) {
    out.weights.lambda_r = 0;
    out.guard = true;
  }
  out.total = total_loss(out.parts, out.weights);

  const double inv_b = 1.0 / static_cast<double>(B);
  const std::size_t n_acc = std::max<std::size_t>(1, std::min(workers, B));
  std::vector<Params> acc(n_acc, params.zeros_like());
  std::vector<char> done(n_acc, 0);
  std::mutex merge_mutex;
  std::vector<std::size_t> finish_order;
  detail::parallel_for(B, n_acc, [&](std::size_t i, std::size_t w) {
    auto& t = terms[i];
    const Mat<double> d_pred = t.recon.grad * inv_b;
    std::vector<Mat<double>> d_states(depth);
    if (need_h_grad) {
      const std::vector<double> dr = l_r_gradient(profiles[i], loss.rank_direction);
      for (std::size_t l = 0; l < depth; ++l) {
        double c = out.weights.lambda_r * dr[l];
        if (l == 0) c += out.weights.lambda_e * l_e_derivative(profiles[i][0], loss.weights.epsilon);
        if (c != 0) d_states[l] = (c * inv_b) * t.h[l].grad;
      }
    }
    if (out.weights.lambda_spa > 0) {
      const Mat<double> ds = (out.weights.lambda_spa * inv_b) * t.spa.grad;
      if (d_states[0].size() == 0)
        d_states[0] = ds;
      else
        d_states[0] += ds;
    }
    accumulate_backward(t.fp, params, d_pred, d_states, acc[w]);
    if (n_acc > 1 && (i + n_acc >= B)) {
      std::lock_guard<std::mutex> lock(merge_mutex);
      finish_order.push_back(w);
    }
  });
  if (n_acc == 1) {
    out.grad = std::move(acc[0]);
  } else {
    out.grad = params.zeros_like();
    auto dst = parameter_list(out.grad);
    for (std::size_t w : finish_order) {
      auto src = parameter_list(acc[w]);
      for (std::size_t k = 0; k < dst.size(); ++k) *dst[k].second += *src[k].second;
    }
  }
  return out;
}

// Negated mean masked-patch error over the held-out split with fixed masks.
inline double evaluate_score(const Params& params, const std::vector<PatchGrid<double>>& holdout, double ratio,
                             std::uint64_t seed) {
  if (holdout.empty()) throw ArgumentError("evaluate_score: empty held-out split");
  double sum = 0;
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    const MaskSpec mask = sample_mask(holdout[i].n_patches(), ratio, mix_seed(seed, i));
    const auto trace = forward_trace(holdout[i], mask, params, params.config.routing);
    sum += recon_loss(predict_pixels(trace, params), holdout[i], mask);
  }
  return -sum / static_cast<double>(holdout.size());
}

// --- run record -------------------------------------------------------------

struct StepLog {
  std::size_t step = 0;
  double lr = 0;
  LossParts parts;
  LossWeights weights;
  double total = 0;
  bool guard = false;
  double h0 = 0;
};

struct ProfileSnapshot {
  std::size_t step = 0;
  HeterogeneityProfile profile;
  double monotonicity = 0;
};

struct RunRecord {
  json config;
  std::string config_hash;
  std::uint64_t init_seed = 0;
  std::uint64_t mask_seed = 0;
  std::uint64_t data_seed = 0;
  std::string score_definition = kScoreDefinition;
  std::string dataset;
  std::string status = "ok";
  std::string run_dir;
  std::size_t steps_completed = 0;
  std::size_t guard_events = 0;
  double seconds = 0;
  std::vector<StepLog> steps;
  TrainingCurve curve;
  std::vector<std::string> checkpoints;
  std::vector<ProfileSnapshot> profiles;
  std::vector<QuadrantMap> quadrants;  // one per traced depth, final parameters

  bool completed() const { return status == "ok"; }
  double final_score() const { return curve.samples.empty() ? std::nan("") : curve.samples.back().score; }
};

inline json to_json(const HeterogeneityProfile& p) {
  return json{{"values", p.values},
              {"depths", p.depths},
              {"routing", to_string(p.routing)},
              {"checkpoint", p.checkpoint_id},
              {"batch", p.batch_descriptor},
              {"warnings", p.warnings},
              {"monotonicity", monotonicity_score(p)}};
}

inline HeterogeneityProfile profile_from_json(const json& j) {
  HeterogeneityProfile p;
  p.values = j.at("values").get<std::vector<double>>();
  p.depths = j.at("depths").get<std::vector<Index>>();
  p.routing = routing_from_string(j.at("routing").get<std::string>());
  p.checkpoint_id = j.value("checkpoint", "");
  p.batch_descriptor = j.value("batch", "");
  p.warnings = j.value("warnings", std::vector<std::string>{});
  return p;
}

inline json to_json(const QuadrantMap& q) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(q.matrix.rows()));
  for (Index r = 0; r < q.matrix.rows(); ++r)
    for (Index c = 0; c < q.matrix.cols(); ++c) rows[static_cast<std::size_t>(r)].push_back(q.matrix(r, c));
  return json{{"matrix", rows}, {"ordering", q.ordering}, {"masked_count", q.masked_count}, {"quadrant_means", q.quadrant_means}};
}

inline QuadrantMap quadrant_from_json(const json& j) {
  QuadrantMap q;
  const auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
  q.matrix = Mat<double>(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) q.matrix(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  q.ordering = j.at("ordering").get<std::vector<Index>>();
  q.masked_count = j.at("masked_count").get<Index>();
  q.quadrant_means = j.at("quadrant_means").get<std::array<double, 4>>();
  return q;
}

inline json to_json(const RunRecord& r) {
  json steps = json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"step", s.step},
                     {"lr", s.lr},
                     {"ss", s.parts.ss},
                     {"spa", s.parts.spa},
                     {"e", s.parts.e},
                     {"r", s.parts.r},
                     {"lambda_spa", s.weights.lambda_spa},
                     {"lambda_e", s.weights.lambda_e},
                     {"lambda_r", s.weights.lambda_r},
                     {"total", s.total},
                     {"guard", s.guard},
                     {"h0", s.h0}});
  json curve = json::array();
  for (const auto& s : r.curve.samples) curve.push_back({s.epoch, s.score});
  json profiles = json::array();
  for (const auto& p : r.profiles) {
    json pj = to_json(p.profile);
    pj["step"] = p.step;
    profiles.push_back(pj);
  }
  json quads = json::array();
  for (const auto& q : r.quadrants) quads.push_back(to_json(q));
  return json{{"config", r.config},
              {"config_hash", r.config_hash},
              {"seeds", {{"init", r.init_seed}, {"mask", r.mask_seed}, {"data", r.data_seed}}},
              {"score_definition", r.score_definition},
              {"dataset", r.dataset},
              {"status", r.status},
              {"steps_completed", r.steps_completed},
              {"guard_events", r.guard_events},
              {"seconds", r.seconds},
              {"method", r.curve.method_name},
              {"curve", curve},
              {"checkpoints", r.checkpoints},
              {"profiles", profiles},
              {"quadrants", quads},
              {"steps", steps}};
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.config = j.at("config");
  r.config_hash = j.at("config_hash").get<std::string>();
  r.init_seed = j.at("seeds").at("init").get<std::uint64_t>();
  r.mask_seed = j.at("seeds").at("mask").get<std::uint64_t>();
  r.data_seed = j.at("seeds").at("data").get<std::uint64_t>();
  r.score_definition = j.value("score_definition", kScoreDefinition);
  r.dataset = j.value("dataset", "");
  r.status = j.at("status").get<std::string>();
  r.steps_completed = j.value("steps_completed", std::size_t{0});
  r.guard_events = j.value("guard_events", std::size_t{0});
  r.seconds = j.value("seconds", 0.0);
  r.curve.method_name = j.value("method", "");
  for (const auto& s : j.at("curve")) r.curve.samples.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
  r.checkpoints = j.value("checkpoints", std::vector<std::string>{});
  for (const auto& p : j.at("profiles"))
    r.profiles.push_back({p.at("step").get<std::size_t>(), profile_from_json(p), p.at("monotonicity").get<double>()});
  for (const auto& q : j.at("quadrants")) r.quadrants.push_back(quadrant_from_json(q));
  for (const auto& s : j.value("steps", json::array())) {
    StepLog l;
    l.step = s.at("step").get<std::size_t>();
    l.lr = s.at("lr").get<double>();
    l.parts = {s.at("ss").get<double>(), s.at("spa").get<double>(), s.at("e").get<double>(), s.at("r").get<double>()};
    l.weights.lambda_spa = s.at("lambda_spa").get<double>();
    l.weights.lambda_e = s.at("lambda_e").get<double>();
    l.weights.lambda_r = s.at("lambda_r").get<double>();
    l.total = s.at("total").get<double>();
    l.guard = s.at("guard").get<bool>();
    l.h0 = s.at("h0").get<double>();
    r.steps.push_back(l);
  }
  r.run_dir = j.value("run_dir", "");
  return r;
}

inline void write_run_record(const RunRecord& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "record.json");
    if (!out) throw IoError("cannot write " + (dir / "record.json").string());
    out << to_json(r).dump(1) << '\n';
  }
  if (r.curve.samples.size() >= 2) write_curve_csv(r.curve, (dir / "curve.csv").string());
  std::ofstream prof(dir / "profiles.csv");
  prof << "step,depth,heterogeneity\n";
  prof.precision(17);
  for (const auto& p : r.profiles)
    for (std::size_t k = 0; k < p.profile.values.size(); ++k)
      prof << p.step << ',' << p.profile.depths[k] << ',' << p.profile.values[k] << '\n';
}

inline RunRecord read_run_record(const std::filesystem::path& dir) {
  std::ifstream in(dir / "record.json");
  if (!in) throw IoError("no record.json in '" + dir.string() + "'");
  try {
    RunRecord r = record_from_json(json::parse(in));
    r.run_dir = dir.string();
    return r;
  } catch (const json::exception& e) {
    throw IoError("malformed record in '" + dir.string() + "': " + e.what());
  }
}

// --- training ---------------------------------------------------------------

inline std::string method_name(const LossConfig& l) {
  const LossWeights w = l.effective();
  std::string name;
  if (w.lambda_spa > 0) name += "+spa";
  if (w.lambda_e > 0) name += "+e";
  if (w.lambda_r > 0) name += "+r";
  return name.empty() ? "baseline" : "baseline" + name;
}

inline std::uint64_t analysis_mask_seed(const ExperimentConfig& cfg) { return mix_seed(cfg.masking.seed, 0xa11a);  }
inline std::uint64_t eval_mask_seed(const ExperimentConfig& cfg) { return mix_seed(cfg.masking.seed, 0xe7a1); }

struct TrainHooks {
  Params* final_params = nullptr;                          // receives the last parameters
  std::function<void(std::size_t, const StepLog&)> on_step;  // progress reporting
};

inline RunRecord train(const ExperimentConfig& cfg, const Dataset& data, const TrainHooks& hooks = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (data.train.empty() || data.holdout.empty()) throw ArgumentError("train: empty dataset split");
  const auto t_start = std::chrono::steady_clock::now();
  const auto& o = cfg.optimization;
  const AffinityOptions aff{cfg.loss.scaled_affinity};

  RunRecord rec;
  rec.config = to_json(cfg);
  rec.config_hash = config_hash(cfg);
  rec.init_seed = o.seed;
  rec.mask_seed = cfg.masking.seed;
  rec.data_seed = cfg.dataset.seed;
  rec.dataset = data.descriptor;
  rec.curve.method_name = method_name(cfg.loss);
  rec.run_dir = cfg.output.run_dir;
  const bool persist = !cfg.output.run_dir.empty();
  const fs::path dir = cfg.output.run_dir;
  std::ofstream step_csv;
  if (persist) {
    fs::create_directories(dir / "checkpoints");
    step_csv.open(dir / "steps.csv");
    if (!step_csv) throw IoError("cannot write into run directory '" + dir.string() + "'");
    step_csv << "step,lr,ss,spa,e,r,lambda_spa,lambda_e,lambda_r,total,guard,h0\n";
    step_csv.precision(12);
  }

  Params params = init_parameters<double>(cfg.model, o.seed);
  Adam adam(params, o);

  const std::size_t n_analysis = std::min(cfg.output.analysis_images, data.holdout.size());
  const std::vector<PatchGrid<double>> analysis_batch(data.holdout.begin(), data.holdout.begin() + static_cast<std::ptrdiff_t>(n_analysis));
  const std::string batch_desc = data.descriptor + ":holdout[0:" + std::to_string(n_analysis) + "]";
  auto snapshot_profile = [&](std::size_t step) {
    if (n_analysis == 0) return;
    HeterogeneityProfile p = profile(trace_batch(params, analysis_batch, cfg.masking.ratio, analysis_mask_seed(cfg)), aff);
    p.checkpoint_id = "step" + std::to_string(step);
    p.batch_descriptor = batch_desc;
    rec.profiles.push_back({step, p, monotonicity_score(p)});
  };
  auto checkpoint = [&](std::size_t step) {
    if (!persist) return;
    char name[64];
    std::snprintf(name, sizeof name, "step%06zu.mtoc", step);
    const fs::path path = dir / "checkpoints" / name;
    save_checkpoint(params, path.string());
    rec.checkpoints.push_back(path.string());
  };
  const double train_count = static_cast<double>(data.train.size());
  auto epoch_at = [&](std::size_t steps_done) {
    return static_cast<double>(steps_done) * static_cast<double>(o.batch_size) / train_count;
  };
  auto eval = [&](std::size_t steps_done) {
    rec.curve.samples.push_back({epoch_at(steps_done), evaluate_score(params, data.holdout, cfg.masking.ratio, eval_mask_seed(cfg))});
  };

  eval(0);
  snapshot_profile(0);
  checkpoint(0);

  std::vector<std::size_t> order(data.train.size());
  std::size_t cursor = order.size();
  std::size_t epoch = 0;
  auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 rng(mix_seed(o.seed, epoch++, 0xda7a));
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    return order[cursor++];
  };

  const std::size_t workers = o.deterministic ? 1 : std::max<std::size_t>(1, o.workers);
  std::size_t step = 0;
  try {
    for (; step < o.steps; ++step) {
      std::vector<const PatchGrid<double>*> batch;
      std::vector<MaskSpec> masks;
      for (std::size_t b = 0; b < o.batch_size; ++b) {
        const PatchGrid<double>& g = data.train[next_index()];
        batch.push_back(&g);
        masks.push_back(sample_mask(g.n_patches(), cfg.masking.ratio, mix_seed(cfg.masking.seed, step, b)));
      }
      BatchObjective obj = batch_objective(params, batch, masks, cfg.loss, workers);
      StepLog log{step, learning_rate_at(o, step), obj.parts, obj.weights, obj.total, obj.guard, obj.mean_profile.front()};
      if (obj.guard) ++rec.guard_events;
      rec.steps.push_back(log);
      if (persist)
        step_csv << step << ',' << log.lr << ',' << log.parts.ss << ',' << log.parts.spa << ',' << log.parts.e << ','
                 << log.parts.r << ',' << log.weights.lambda_spa << ',' << log.weights.lambda_e << ','
                 << log.weights.lambda_r << ',' << log.total << ',' << (log.guard ? 1 : 0) << ',' << log.h0 << '\n';
      if (hooks.on_step) hooks.on_step(step, log);
      if (!all_finite(obj.grad.head_w)) throw NumericError("non-finite gradient at step " + std::to_string(step));
      adam.step(params, obj.grad, log.lr);

      const std::size_t done = step + 1;
      if (done % o.eval_every == 0 || done == o.steps) eval(done);
      if (o.profile_every > 0 && done % o.profile_every == 0 && done != o.steps) snapshot_profile(done);
      if (cfg.output.checkpoint_every > 0 && done % cfg.output.checkpoint_every == 0 && done != o.steps) checkpoint(done);
    }
    rec.steps_completed = o.steps;
    snapshot_profile(o.steps);
    checkpoint(o.steps);
    if (!analysis_batch.empty()) {
      const MaskSpec mask = sample_mask(analysis_batch[0].n_patches(), cfg.masking.ratio, analysis_mask_seed(cfg));
      const auto trace = forward_trace(analysis_batch[0], mask, params, params.config.routing);
      for (const auto& s : trace.states()) rec.quadrants.push_back(quadrant_map(s, mask, aff));
    }
  } catch (const NumericError& e) {
    rec.steps_completed = step;
    rec.status = std::string("aborted: ") + e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (persist) write_run_record(rec, dir);
  if (hooks.final_params) *hooks.final_params = params;
  return rec;
}

inline RunRecord train(const ExperimentConfig& cfg) { return train(cfg, load_dataset(cfg)); }

// --- ablation ---------------------------------------------------------------

// Same seed drives initialisation, data order and masks.
inline ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.optimization.seed = seed;
  cfg.masking.seed = seed;
  return cfg;
}

struct AblationFlags {
  bool spa, e, r;
  std::string name() const {
    if (!spa && !e && !r) return "none";
    std::string s;
    for (auto [on, tag] : {std::pair{spa, "spa"}, std::pair{e, "e"}, std::pair{r, "r"}})
      if (on) s += s.empty() ? tag : std::string("+") + tag;
    return s;
  }
  bool stability_sensitive() const { return r && !spa && !e; }
};

inline std::vector<AblationFlags> ablation_rows() {
  return {{false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
          {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true}};
}

struct AblationEntry {
  AblationFlags flags{};
  std::uint64_t seed = 0;
  std::string status;
  double final_score = 0;
  std::optional<double> rauc_vs_none;  // empty when the all-off curve gives a zero denominator
  std::size_t guard_events = 0;
  bool non_finite = false;
  std::string config_hash;
  std::string run_dir;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  double window_start_fraction = 0.2;
  std::string score_definition = kScoreDefinition;
  std::vector<AblationEntry> entries;  // seed-major, rows in ablation_rows() order

  const AblationEntry& at(std::uint64_t seed, const std::string& row) const {
    for (const auto& e : entries)
      if (e.seed == seed && e.flags.name() == row) return e;
    throw ArgumentError("ablation report has no row '" + row + "' for seed " + std::to_string(seed));
  }
};

inline double rauc_window(const TrainingCurve& base, const TrainingCurve& other, double start_fraction) {
  const double end = std::min(base.last_epoch(), other.last_epoch());
  return rauc(base, other, start_fraction * end, end);
}

inline AblationReport run_ablation(const ExperimentConfig& cfg, std::vector<std::uint64_t> seeds = {},
                                   const std::function<void(const AblationEntry&)>& on_row = {}) {
  if (seeds.empty()) seeds.push_back(cfg.optimization.seed);
  AblationReport report;
  report.seeds = seeds;
  const Dataset data = load_dataset(cfg);
  for (std::uint64_t seed : seeds) {
    TrainingCurve none_curve;
    for (const AblationFlags& f : ablation_rows()) {
      ExperimentConfig c = with_seed(cfg, seed);
      c.loss.enable_spa = f.spa;
      c.loss.enable_e = f.e;
      c.loss.enable_r = f.r;
      if (!cfg.output.run_dir.empty())
        c.output.run_dir = (std::filesystem::path(cfg.output.run_dir) / ("seed" + std::to_string(seed)) / f.name()).string();
      const RunRecord r = train(c, data);
      AblationEntry e;
      e.flags = f;
      e.seed = seed;
      e.status = r.status;
      e.final_score = r.final_score();
      e.guard_events = r.guard_events;
      e.non_finite = !r.completed();
      e.config_hash = r.config_hash;
      e.run_dir = c.output.run_dir;
      if (f.name() == "none") none_curve = r.curve;
      if (r.completed() && none_curve.samples.size() >= 2) {
        try {
          e.rauc_vs_none = rauc_window(none_curve, r.curve, report.window_start_fraction);
        } catch (const DegenerateBaselineError&) {
        }
      }
      report.entries.push_back(e);
      if (on_row) on_row(e);
    }
  }
  return report;
}

inline json to_json(const AblationReport& r) {
  json rows = json::array();
  for (const auto& e : r.entries)
    rows.push_back({{"seed", e.seed},
                    {"row", e.flags.name()},
                    {"spa", e.flags.spa},
                    {"e", e.flags.e},
                    {"r", e.flags.r},
                    {"stability_sensitive", e.flags.stability_sensitive()},
                    {"status", e.status},
                    {"final_score", e.final_score},
                    {"rauc_vs_none", e.rauc_vs_none ? json(*e.rauc_vs_none) : json(nullptr)},
                    {"guard_events", e.guard_events},
                    {"non_finite", e.non_finite},
                    {"config_hash", e.config_hash},
                    {"run_dir", e.run_dir}});
  return json{{"seeds", r.seeds},
              {"rauc_window", {r.window_start_fraction, 1.0}},
              {"score_definition", r.score_definition},
              {"rows", rows}};
}

inline std::string format_ablation(const AblationReport& r) {
  std::string out = "score: " + r.score_definition + "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-9s %14s %12s %7s  %s\n", "seed", "row", "final_score", "rauc_vs_none", "guard", "notes");
  out += line;
  for (const auto& e : r.entries) {
    char rauc_s[32] = "n/a";
    if (e.rauc_vs_none) std::snprintf(rauc_s, sizeof rauc_s, "%.4f", *e.rauc_vs_none);
    std::string notes = e.flags.stability_sensitive() ? "stability-sensitive" : "";
    if (!e.status.empty() && e.status != "ok") notes += (notes.empty() ? "" : "; ") + e.status;
    std::snprintf(line, sizeof line, "%-6llu %-9s %14.6f %12s %7zu  %s\n", static_cast<unsigned long long>(e.seed),
                  e.flags.name().c_str(), e.final_score, rauc_s, e.guard_events, notes.c_str());
    out += line;
  }
  return out;
}

}  // namespace mto
