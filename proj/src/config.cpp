#include "star/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace star {

namespace {

using json = nlohmann::ordered_json;

/// Object reader that remembers which keys were consumed so leftovers can be
/// reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ParseError(where() + " must be a JSON object");
  }

  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ParseError(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ParseError(where(key) + " must be an integer");
      out = v->get<int>();
    }
  }
  void read(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                       v->get<std::int64_t>() < 0)) {
        throw ParseError(where(key) + " must be a nonnegative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ParseError(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }

  /// Nested object, or nullptr when absent.
  const json* child(const char* key) {
    const json* v = take(key);
    if (v && !v->is_object()) throw ParseError(where(key) + " must be a JSON object");
    return v;
  }
  const json* raw(const char* key) { return take(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ParseError("unknown key " + where(it.key().c_str()));
    }
  }

  std::string where(const char* key = nullptr) const {
    std::string s = path_.empty() ? "config" : path_;
    if (key) s += std::string(".") + key;
    return "'" + s + "'";
  }
  std::string sub(const char* key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

DistanceKind parse_distance(const json& j, const std::string& path) {
  Reader r(j, path);
  std::string kind = "smooth_l1";
  r.read("kind", kind);
  DistanceKind out;
  if (kind == "l1") {
    out = L1Distance{};
  } else if (kind == "l2") {
    out = L2Distance{};
  } else if (kind == "smooth_l1") {
    SmoothL1Distance d;
    r.read("s", d.s);
    out = d;
  } else if (kind == "wing") {
    WingDistance d;
    r.read("omega", d.omega);
    r.read("epsilon", d.epsilon);
    out = d;
  } else {
    throw ParseError("unknown distance kind '" + kind + "'");
  }
  r.finish();
  return out;
}

RestrictionMode parse_restriction(const json& j, const std::string& path) {
  Reader r(j, path);
  std::string kind = "value";
  r.read("kind", kind);
  RestrictionMode out;
  if (kind == "value") {
    ValueRestriction v;
    r.read("w", v.w);
    out = v;
  } else if (kind == "detach") {
    out = DetachRestriction{};
  } else if (kind == "none") {
    out = NoRestriction{};
  } else {
    throw ParseError("unknown restriction kind '" + kind + "'");
  }
  r.finish();
  return out;
}

LossConfig parse_loss(const json& j) {
  Reader r(j, "loss");
  LossConfig c;
  if (const json* d = r.child("distance")) c.distance = parse_distance(*d, "loss.distance");
  if (const json* m = r.child("restriction")) {
    c.restriction = parse_restriction(*m, "loss.restriction");
  }
  std::string objective = "star";
  r.read("objective", objective);
  if (objective == "star") {
    c.objective = Objective::Star;
  } else if (objective == "regression") {
    c.objective = Objective::Regression;
  } else {
    throw ParseError("unknown objective '" + objective + "'");
  }
  r.read("dr_weight", c.dr_weight);
  r.read("dr_sigma", c.dr_sigma);
  r.read("lambda_floor", c.lambda_floor);
  r.finish();
  return c;
}

Point<double> parse_point(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ParseError("'" + path + "' must be [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

synthetic::ContourSpec parse_contour(const json& j) {
  Reader r(j, "synthetic.contour");
  synthetic::ContourSpec c;
  std::string kind = "ellipse";
  r.read("kind", kind);
  if (kind == "ellipse") {
    c.kind = synthetic::ContourKind::Ellipse;
  } else if (kind == "parabola") {
    c.kind = synthetic::ContourKind::Parabola;
  } else {
    throw ParseError("unknown contour kind '" + kind + "'");
  }
  if (const json* p = r.raw("center")) c.center = parse_point(*p, "synthetic.contour.center");
  r.read("semi_x", c.semi_x);
  r.read("semi_y", c.semi_y);
  r.read("curvature", c.curvature);
  r.read("half_width", c.half_width);
  r.read("landmark_count", c.landmark_count);
  r.finish();
  return c;
}

synthetic::NoiseModel parse_noise(const json& j, int landmark_count) {
  Reader r(j, "synthetic.noise");
  synthetic::NoiseModel n;
  r.read("sigma_tangent", n.sigma_tangent);
  r.read("sigma_normal", n.sigma_normal);
  n.ambiguous = synthetic::alternating_flags(landmark_count);
  if (const json* a = r.raw("ambiguous")) {
    if (!a->is_array()) throw ParseError("'synthetic.noise.ambiguous' must be an array");
    n.ambiguous.clear();
    for (const auto& flag : *a) {
      if (!flag.is_boolean()) {
        throw ParseError("'synthetic.noise.ambiguous' entries must be booleans");
      }
      n.ambiguous.push_back(flag.get<bool>());
    }
  }
  r.finish();
  return n;
}

synthetic::OptimizerConfig parse_optimizer(const json& j) {
  Reader r(j, "synthetic.optimizer");
  synthetic::OptimizerConfig o;
  std::string kind = "adam";
  r.read("kind", kind);
  if (kind == "adam") {
    o.kind = synthetic::OptimizerKind::Adam;
  } else if (kind == "sgd") {
    o.kind = synthetic::OptimizerKind::Sgd;
  } else {
    throw ParseError("unknown optimizer kind '" + kind + "'");
  }
  r.read("learning_rate", o.learning_rate);
  r.read("beta1", o.beta1);
  r.read("beta2", o.beta2);
  r.read("eps", o.eps);
  r.read("epochs", o.epochs);
  r.read("batch_size", o.batch_size);
  r.read("init_scale", o.init_scale);
  r.finish();
  return o;
}

metrics::Normalizer parse_normalizer(const json& j) {
  Reader r(j, "metrics.normalizer");
  std::string kind = "inter_ocular";
  r.read("kind", kind);
  metrics::Normalizer out;
  if (kind == "inter_ocular" || kind == "inter_pupil") {
    int i = 0;
    int jj = 1;
    r.read("i", i);
    r.read("j", jj);
    if (kind == "inter_ocular") {
      out = metrics::InterOcular{i, jj};
    } else {
      out = metrics::InterPupil{i, jj};
    }
  } else if (kind == "constant") {
    metrics::ConstantNormalizer c;
    r.read("value", c.value);
    out = c;
  } else if (kind == "preset") {
    std::string name;
    r.read("name", name);
    try {
      out = metrics::normalizer_preset(name);
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what());
    }
  } else {
    throw ParseError("unknown normalizer kind '" + kind + "'");
  }
  r.finish();
  return out;
}

json distance_json(const DistanceKind& d) {
  json j;
  j["kind"] = distance_name(d);
  if (const auto* s = std::get_if<SmoothL1Distance>(&d)) j["s"] = s->s;
  if (const auto* w = std::get_if<WingDistance>(&d)) {
    j["omega"] = w->omega;
    j["epsilon"] = w->epsilon;
  }
  return j;
}

json restriction_json(const RestrictionMode& m) {
  json j;
  j["kind"] = restriction_name(m);
  if (const auto* v = std::get_if<ValueRestriction>(&m)) j["w"] = v->w;
  return j;
}

json normalizer_json(const metrics::Normalizer& n) {
  json j;
  if (const auto* io = std::get_if<metrics::InterOcular>(&n)) {
    j["kind"] = "inter_ocular";
    j["i"] = io->i;
    j["j"] = io->j;
  } else if (const auto* ip = std::get_if<metrics::InterPupil>(&n)) {
    j["kind"] = "inter_pupil";
    j["i"] = ip->i;
    j["j"] = ip->j;
  } else {
    j["kind"] = "constant";
    j["value"] = std::get<metrics::ConstantNormalizer>(n).value;
  }
  return j;
}

}  // namespace

synthetic::OptimizerConfig RunConfig::model_optimizer() const {
  synthetic::OptimizerConfig o = optimizer;
  o.seed = seed + kModelSeedOffset;
  return o;
}

void RunConfig::validate() const {
  loss.validate();
  dataset.validate();
  optimizer.validate();
  if (experiment.n_models < 1) throw InvalidArgument("experiment.n_models must be positive");
  if (!(experiment.restriction_w >= 0)) {
    throw InvalidArgument("experiment.restriction_w must be nonnegative");
  }
  if (!(metrics.threshold > 0)) throw InvalidArgument("metrics.threshold must be positive");
  if (metrics.resolution < 2) throw InvalidArgument("metrics.resolution must be at least 2");
  if (const auto* c = std::get_if<metrics::ConstantNormalizer>(&metrics.normalizer);
      c && !(c->value > 0)) {
    throw InvalidArgument("constant normalizer must be positive");
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  Reader r(root, "");
  RunConfig c;
  r.read("seed", c.seed);
  if (const json* g = r.child("grid")) {
    Reader gr(*g, "grid");
    int w = c.grid.width;
    int h = c.grid.height;
    gr.read("width", w);
    gr.read("height", h);
    gr.finish();
    c.grid = Grid(w, h);
  }
  if (const json* l = r.child("loss")) c.loss = parse_loss(*l);
  if (const json* s = r.child("synthetic")) {
    Reader sr(*s, "synthetic");
    auto& d = c.dataset;
    if (const json* k = sr.child("contour")) d.contour = parse_contour(*k);
    d.noise.ambiguous = synthetic::alternating_flags(d.contour.landmark_count);
    if (const json* n = sr.child("noise")) d.noise = parse_noise(*n, d.contour.landmark_count);
    sr.read("n_train", d.n_train);
    sr.read("n_test", d.n_test);
    sr.read("translation_jitter", d.translation_jitter);
    sr.read("feature_jitter", d.feature_jitter);
    sr.read("nuisance_dims", d.nuisance_dims);
    sr.read("n_models", c.experiment.n_models);
    sr.read("restriction_w", c.experiment.restriction_w);
    if (const json* o = sr.child("optimizer")) c.optimizer = parse_optimizer(*o);
    sr.finish();
  }
  if (const json* m = r.child("metrics")) {
    Reader mr(*m, "metrics");
    if (const json* n = mr.child("normalizer")) c.metrics.normalizer = parse_normalizer(*n);
    mr.read("threshold", c.metrics.threshold);
    mr.read("resolution", c.metrics.resolution);
    mr.finish();
  }
  r.finish();
  c.dataset.grid = c.grid;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["grid"] = {{"width", c.grid.width}, {"height", c.grid.height}};

  json loss;
  loss["distance"] = distance_json(c.loss.distance);
  loss["restriction"] = restriction_json(c.loss.restriction);
  loss["objective"] = c.loss.objective == Objective::Star ? "star" : "regression";
  loss["dr_weight"] = c.loss.dr_weight;
  loss["dr_sigma"] = c.loss.dr_sigma;
  loss["lambda_floor"] = c.loss.lambda_floor;
  j["loss"] = loss;

  const auto& d = c.dataset;
  json contour;
  contour["kind"] = d.contour.kind == synthetic::ContourKind::Ellipse ? "ellipse" : "parabola";
  contour["center"] = {d.contour.center.x(), d.contour.center.y()};
  contour["semi_x"] = d.contour.semi_x;
  contour["semi_y"] = d.contour.semi_y;
  contour["curvature"] = d.contour.curvature;
  contour["half_width"] = d.contour.half_width;
  contour["landmark_count"] = d.contour.landmark_count;

  json noise;
  noise["sigma_tangent"] = d.noise.sigma_tangent;
  noise["sigma_normal"] = d.noise.sigma_normal;
  noise["ambiguous"] = json::array();
  for (bool flag : d.noise.ambiguous) noise["ambiguous"].push_back(flag);

  const auto& o = c.optimizer;
  json opt;
  opt["kind"] = o.kind == synthetic::OptimizerKind::Adam ? "adam" : "sgd";
  opt["learning_rate"] = o.learning_rate;
  opt["beta1"] = o.beta1;
  opt["beta2"] = o.beta2;
  opt["eps"] = o.eps;
  opt["epochs"] = o.epochs;
  opt["batch_size"] = o.batch_size;
  opt["init_scale"] = o.init_scale;

  json syn;
  syn["contour"] = contour;
  syn["noise"] = noise;
  syn["n_train"] = d.n_train;
  syn["n_test"] = d.n_test;
  syn["translation_jitter"] = d.translation_jitter;
  syn["feature_jitter"] = d.feature_jitter;
  syn["nuisance_dims"] = d.nuisance_dims;
  syn["n_models"] = c.experiment.n_models;
  syn["restriction_w"] = c.experiment.restriction_w;
  syn["optimizer"] = opt;
  j["synthetic"] = syn;

  j["metrics"] = {{"normalizer", normalizer_json(c.metrics.normalizer)},
                  {"threshold", c.metrics.threshold},
                  {"resolution", c.metrics.resolution}};
  return j.dump(2) + "\n";
}

}  // namespace star
