#include "star/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "star/gradients.hpp"
#include "star/metrics.hpp"
#include "star/moments.hpp"
#include "star/synthetic.hpp"

namespace star::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json point_json(const Point<double>& p) { return json::array({p.x(), p.y()}); }

json covariance_json(const Covariance2<double>& c) {
  return {{"xx", c.xx}, {"xy", c.xy}, {"yy", c.yy}};
}

json parts_json(const LossParts<double>& p) {
  return {{"star", p.star},
          {"regression", p.regression},
          {"restriction", p.restriction},
          {"dr", p.dr},
          {"total", p.total}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot write " + path.string());
  f << text;
  if (!f) throw ParseError("failed writing " + path.string());
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ParseError("cannot create output directory " + dir);
  return fs::path(dir);
}

json claim(const std::string& name, bool passed, json detail) {
  json j;
  j["claim"] = name;
  j["passed"] = passed;
  for (auto it = detail.begin(); it != detail.end(); ++it) j[it.key()] = it.value();
  return j;
}

void append_history(std::ostringstream& csv, const std::string& arm, int model,
                    const std::vector<synthetic::EpochStats>& history) {
  for (const auto& e : history) {
    csv << arm << ',' << model << ',' << e.epoch << ',' << num(e.loss) << ','
        << num(e.mean_lambda1) << ',' << num(e.mean_lambda2) << ',' << e.degenerate << '\n';
  }
}

const char* kHistoryHeader = "arm,model,epoch,loss,mean_lambda1,mean_lambda2,degenerate\n";

bool finish_experiment(const fs::path& dir, const RunConfig& cfg, json summary) {
  bool all = true;
  for (const auto& c : summary["claims"]) all = all && c["passed"].get<bool>();
  summary["all_claims_passed"] = all;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_text(dir / "config.json", dump_run_config(cfg));
  return all;
}

LossConfig star_arm(const RunConfig& cfg) {
  LossConfig l = cfg.loss;
  l.objective = Objective::Star;
  return l;
}

// ---------------------------------------------------------------- commands

int cmd_decode(const std::string& path, std::ostream& out) {
  const auto h = read_heatmap_csv(path);
  const auto m = compute_moments(h);
  json j;
  j["mean"] = point_json(m.mean);
  j["covariance_unbiased"] = covariance_json(m.unbiased);
  j["covariance_biased"] = covariance_json(m.biased);
  j["lambda1"] = m.eigen.lambda1;
  j["lambda2"] = m.eigen.lambda2;
  j["v1"] = point_json(m.eigen.v1);
  j["v2"] = point_json(m.eigen.v2);
  j["anisotropy_ratio"] = anisotropy_ratio(m.eigen);
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_loss(const std::string& path, double tx, double ty, const RunConfig& cfg,
             std::ostream& out) {
  const auto h = read_heatmap_csv(path);
  const Point<double> target(tx, ty);
  if (!target.allFinite()) throw NonFiniteInput("target contains NaN or Inf");
  const auto ev = evaluate_objective(h, target, cfg.loss);
  json j = parts_json(ev.parts);
  j["mean"] = point_json(ev.mean);
  if (cfg.loss.objective == Objective::Star) {
    j["lambda1"] = ev.eigen.lambda1;
    j["lambda2"] = ev.eigen.lambda2;
  }
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, int seeds, double tolerance, std::ostream& out) {
  const auto report = grad_check(cfg.loss, cfg.grid, seeds, tolerance,
                                 kDefaultFiniteDiffStep, cfg.seed);
  json j;
  j["distance"] = distance_name(cfg.loss.distance);
  j["restriction"] = restriction_name(cfg.loss.restriction);
  j["grid"] = {{"width", cfg.grid.width}, {"height", cfg.grid.height}};
  j["instances"] = report.instances;
  j["resampled"] = report.resampled;
  j["max_rel_error"] = report.max_rel_error;
  j["max_abs_error"] = report.max_abs_error;
  j["worst_instance"] = report.worst_instance;
  j["tolerance"] = report.tolerance;
  j["passed"] = report.passed;
  out << j.dump(2) << '\n';
  return report.passed ? kOk : kCheckFailed;
}

int cmd_metrics(const std::string& pred_path, const std::string& gt_path,
                const RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
  const auto preds = metrics::read_annotations(pred_path);
  const auto gts = metrics::read_annotations(gt_path);
  const auto rep = metrics::evaluate(preds, gts, cfg.metrics.normalizer,
                                     cfg.metrics.threshold, cfg.metrics.resolution);
  json j;
  j["images"] = rep.nme_per_image.size();
  j["mean_nme"] = rep.mean_nme;
  j["fr"] = rep.fr;
  j["auc"] = rep.auc;
  j["threshold"] = rep.threshold;
  j["nme_per_image"] = rep.nme_per_image;
  out << j.dump(2) << '\n';
  if (!out_dir.empty()) {
    const auto dir = prepare_dir(out_dir);
    std::ostringstream nme_csv;
    nme_csv << "image,nme\n";
    for (std::size_t i = 0; i < rep.nme_per_image.size(); ++i) {
      nme_csv << i << ',' << num(rep.nme_per_image[i]) << '\n';
    }
    std::ostringstream ced_csv;
    ced_csv << "threshold,fraction\n";
    for (const auto& [t, f] : rep.ced) ced_csv << num(t) << ',' << num(f) << '\n';
    write_text(dir / "nme.csv", nme_csv.str());
    write_text(dir / "ced.csv", ced_csv.str());
    write_text(dir / "report.json", j.dump(2) + "\n");
  }
  return kOk;
}

void write_samples(std::ostringstream& csv, const char* split, const synthetic::Dataset& d) {
  for (int k = 0; k < d.landmarks(); ++k) {
    for (int i = 0; i < d.images(); ++i) {
      const auto& s = d.samples[k][i];
      csv << split << ',' << k << ',' << i << ',' << int(d.ambiguous[k]) << ','
          << num(s.true_point.x()) << ',' << num(s.true_point.y()) << ','
          << num(s.annotation.x()) << ',' << num(s.annotation.y()) << ','
          << num(s.tangent.x()) << ',' << num(s.tangent.y());
      for (Eigen::Index f = 0; f < s.feature.size(); ++f) csv << ',' << num(s.feature(f));
      csv << '\n';
    }
  }
}

int cmd_simulate(const RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
  const auto dir = prepare_dir(out_dir);
  const auto split = synthetic::generate_split(cfg.dataset, cfg.seed);
  std::ostringstream csv;
  csv << "split,landmark,image,ambiguous,true_x,true_y,annotation_x,annotation_y,"
         "tangent_x,tangent_y";
  const int dims = split.train.samples.front().front().feature.size();
  for (int f = 0; f < dims; ++f) csv << ",f" << f;
  csv << '\n';
  write_samples(csv, "train", split.train);
  write_samples(csv, "test", split.test);
  write_text(dir / "samples.csv", csv.str());
  write_text(dir / "config.json", dump_run_config(cfg));
  out << "wrote " << (dir / "samples.csv").string() << '\n';
  return kOk;
}

}  // namespace

// ------------------------------------------------------------- experiments

bool run_stability(const RunConfig& cfg, const std::string& out_dir, int threads) {
  const auto dir = prepare_dir(out_dir);
  const auto split = synthetic::generate_split(cfg.dataset, cfg.seed);
  const LossConfig star = star_arm(cfg);
  LossConfig base = cfg.loss;
  base.objective = Objective::Regression;
  const auto opt = cfg.model_optimizer();

  const auto r_star =
      synthetic::stability_experiment(cfg.experiment.n_models, split, star, opt, threads);
  const auto r_base =
      synthetic::stability_experiment(cfg.experiment.n_models, split, base, opt, threads);

  std::ostringstream lm;
  lm << "arm,landmark,ambiguous,mean_tangential,median_tangential,mean_normal,"
        "median_normal,mean_total\n";
  std::ostringstream per_sample;
  per_sample << "arm,landmark,image,tangential,normal,total\n";
  std::ostringstream hist;
  hist << kHistoryHeader;
  json arms;
  for (const auto& [name, r] : {std::pair<const char*, const synthetic::StabilityResult*>{
                                    "star", &r_star},
                                {"baseline", &r_base}}) {
    for (const auto& l : r->landmarks) {
      lm << name << ',' << l.landmark << ',' << int(l.ambiguous) << ','
         << num(l.mean_tangential) << ',' << num(l.median_tangential) << ','
         << num(l.mean_normal) << ',' << num(l.median_normal) << ',' << num(l.mean_total)
         << '\n';
    }
    for (std::size_t k = 0; k < r->tangential.size(); ++k) {
      for (std::size_t i = 0; i < r->tangential[k].size(); ++i) {
        per_sample << name << ',' << k << ',' << i << ',' << num(r->tangential[k][i]) << ','
                   << num(r->normal[k][i]) << ',' << num(r->total[k][i]) << '\n';
      }
    }
    for (std::size_t m = 0; m < r->histories.size(); ++m) {
      append_history(hist, name, int(m), r->histories[m]);
    }
    arms[name] = {{"median_tangential_ambiguous", r->pooled_median_tangential(true)},
                  {"median_tangential_isotropic", r->pooled_median_tangential(false)},
                  {"median_normal_ambiguous", r->pooled_median_normal(true)},
                  {"median_normal_isotropic", r->pooled_median_normal(false)}};
  }
  write_text(dir / "stability_landmarks.csv", lm.str());
  write_text(dir / "stability_samples.csv", per_sample.str());
  write_text(dir / "history.csv", hist.str());

  const double s = r_star.pooled_median_tangential(true);
  const double b = r_base.pooled_median_tangential(true);
  const double ratio = b > 0 ? s / b : 0.0;
  json summary;
  summary["kind"] = "stability";
  summary["n_models"] = cfg.experiment.n_models;
  summary["star"] = arms["star"];
  summary["baseline"] = arms["baseline"];
  summary["claims"] = json::array(
      {claim("star_tangential_variance_below_baseline", s < b,
             {{"star", s}, {"baseline", b}, {"ratio", ratio}}),
       claim("star_tangential_variance_reduced_by_10_percent", s <= 0.9 * b,
             {{"star", s}, {"baseline", b}, {"ratio", ratio}})});
  return finish_experiment(dir, cfg, summary);
}

bool run_anisotropy(const RunConfig& cfg, const std::string& out_dir) {
  const auto dir = prepare_dir(out_dir);
  const auto split = synthetic::generate_split(cfg.dataset, cfg.seed);
  const auto model = synthetic::train(split.train, star_arm(cfg), cfg.model_optimizer());
  const auto rows = synthetic::anisotropy_experiment(model, split.test, cfg.loss.lambda_floor);

  std::ostringstream csv;
  csv << "landmark,ambiguous,mean_ratio,evaluated,excluded\n";
  for (const auto& r : rows) {
    csv << r.landmark << ',' << int(r.ambiguous) << ',' << num(r.mean_ratio) << ','
        << r.evaluated << ',' << r.excluded << '\n';
  }
  std::ostringstream hist;
  hist << kHistoryHeader;
  append_history(hist, "star", 0, model.history);
  write_text(dir / "anisotropy.csv", csv.str());
  write_text(dir / "history.csv", hist.str());

  const double amb = synthetic::mean_ratio(rows, true);
  const double iso = synthetic::mean_ratio(rows, false);
  const double factor = iso > 0 ? amb / iso : 0.0;
  int excluded = 0;
  for (const auto& r : rows) excluded += r.excluded;
  json summary;
  summary["kind"] = "anisotropy";
  summary["ambiguous_mean_ratio"] = amb;
  summary["isotropic_mean_ratio"] = iso;
  summary["factor"] = factor;
  summary["excluded"] = excluded;
  summary["claims"] = json::array(
      {claim("ambiguous_ratio_above_isotropic", amb > iso,
             {{"ambiguous", amb}, {"isotropic", iso}}),
       claim("ambiguous_ratio_factor_at_least_1.2", factor >= 1.2, {{"factor", factor}})});
  return finish_experiment(dir, cfg, summary);
}

bool run_restriction(const RunConfig& cfg, const std::string& out_dir) {
  const auto dir = prepare_dir(out_dir);
  const auto split = synthetic::generate_split(cfg.dataset, cfg.seed);
  const auto r = synthetic::restriction_experiment(split.train, cfg.loss,
                                                   cfg.experiment.restriction_w,
                                                   cfg.model_optimizer());
  std::ostringstream hist;
  hist << kHistoryHeader;
  append_history(hist, "none", 0, r.unrestricted);
  append_history(hist, "value", 0, r.restricted);
  write_text(dir / "history.csv", hist.str());

  const double none = r.final_lambda1_unrestricted;
  const double value = r.final_lambda1_restricted;
  json summary;
  summary["kind"] = "restriction";
  summary["restriction_w"] = cfg.experiment.restriction_w;
  summary["final_lambda1_none"] = none;
  summary["final_lambda1_value"] = value;
  summary["claims"] = json::array({claim("unrestricted_lambda1_exceeds_restricted",
                                         none > value,
                                         {{"none", none}, {"value", value}})});
  return finish_experiment(dir, cfg, summary);
}

// ------------------------------------------------------------------- entry

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Heatmap landmark loss toolkit: moments, STAR loss, gradients, "
               "synthetic experiments and metrics."};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
  };

  std::string heatmap_path;
  auto* decode = app.add_subcommand("decode", "print the moments of a heatmap CSV");
  decode->add_option("heatmap", heatmap_path)->required();

  double tx = 0;
  double ty = 0;
  auto* loss = app.add_subcommand("loss", "evaluate the configured loss on a heatmap CSV");
  loss->add_option("heatmap", heatmap_path)->required();
  loss->add_option("target_x", tx)->required();
  loss->add_option("target_y", ty)->required();
  add_common(loss);

  int seeds = 20;
  double tolerance = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  gradcheck->add_option("--seeds", seeds, "number of random instances")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tolerance", tolerance, "maximum relative error")
      ->check(CLI::NonNegativeNumber);
  add_common(gradcheck);

  std::string kind;
  auto* experiment = app.add_subcommand("experiment", "run a synthetic experiment");
  experiment->add_option("kind", kind)
      ->required()
      ->check(CLI::IsMember({"stability", "anisotropy", "restriction"}));
  experiment->add_option("--out", out_dir, "output directory")->required();
  add_common(experiment);

  std::string pred_path;
  std::string gt_path;
  auto* metrics_cmd = app.add_subcommand("metrics", "NME, FR, AUC and CED of predictions");
  metrics_cmd->add_option("predictions", pred_path)->required();
  metrics_cmd->add_option("ground_truth", gt_path)->required();
  metrics_cmd->add_option("--out", out_dir, "directory for nme.csv, ced.csv, report.json");
  add_common(metrics_cmd);

  auto* simulate = app.add_subcommand("simulate", "dump a synthetic dataset as CSV");
  simulate->add_option("--out", out_dir, "output directory")->required();
  add_common(simulate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }

  try {
    if (decode->parsed()) return cmd_decode(heatmap_path, out);

    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.seed = *seed;

    if (loss->parsed()) return cmd_loss(heatmap_path, tx, ty, cfg, out);
    if (gradcheck->parsed()) return cmd_gradcheck(cfg, seeds, tolerance, out);
    if (metrics_cmd->parsed()) return cmd_metrics(pred_path, gt_path, cfg, out_dir, out);
    if (simulate->parsed()) return cmd_simulate(cfg, out_dir, out);

    bool ok = false;
    if (kind == "stability") {
      ok = run_stability(cfg, out_dir, synthetic::threads_from_env(1));
    } else if (kind == "anisotropy") {
      ok = run_anisotropy(cfg, out_dir);
    } else {
      ok = run_restriction(cfg, out_dir);
    }
    out << (fs::path(out_dir) / "summary.json").string() << ": "
        << (ok ? "all claims hold" : "some claims failed") << '\n';
    return ok ? kOk : kCheckFailed;
  } catch (const DegenerateDistribution& e) {
    err << "degenerate distribution: " << e.what() << '\n';
    return kDegenerate;
  } catch (const NonFiniteLoss& e) {
    err << "numeric divergence at epoch " << e.epoch() << ": " << e.what() << '\n';
    return kDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
}

}  // namespace star::cli
