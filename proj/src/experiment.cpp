#include "cae/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cae/data.hpp"
#include "cae/geometry.hpp"

namespace cae::experiment {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string repeat_list(const std::string& item, int count) {
  std::string out;
  for (int i = 0; i < count; ++i) out += (i ? "," : "") + item;
  return out;
}

class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  const std::string& str(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError(key + ": missing");
    return it->second;
  }

  std::string required(const std::string& key) const {
    const std::string v = str(key);
    if (v.empty()) throw ConfigError(key + ": unresolved (no value given)");
    return v;
  }

  double real(const std::string& key) const {
    const std::string v = required(key);
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
      throw ConfigError(key + ": '" + v + "' is not a finite number");
    }
    return out;
  }

  long long integer(const std::string& key) const {
    const std::string v = required(key);
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not an integer");
    return out;
  }

  Index non_negative(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw ConfigError(key + ": must be non-negative");
    return static_cast<Index>(v);
  }

  Index positive(const std::string& key) const {
    const auto v = integer(key);
    if (v < 1) throw ConfigError(key + ": must be positive");
    return static_cast<Index>(v);
  }

  std::uint64_t seed(const std::string& key) const { return static_cast<std::uint64_t>(non_negative(key)); }

  bool boolean(const std::string& key) const {
    const std::string v = required(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": '" + v + "' is not a boolean");
  }

  std::string choice(const std::string& key, const std::vector<std::string>& allowed) const {
    const std::string v = required(key);
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string opts;
      for (const auto& a : allowed) opts += (opts.empty() ? "" : "|") + a;
      throw ConfigError(key + ": '" + v + "' is not one of " + opts);
    }
    return v;
  }

  template <class T, class Parse>
  std::vector<T> list(const std::string& key, Parse parse) const {
    std::vector<T> out;
    for (const auto& item : split_list(required(key))) {
      try {
        out.push_back(parse(item));
      } catch (const std::exception&) {
        throw ConfigError(key + ": bad list entry '" + item + "'");
      }
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
  }

 private:
  const KeyValues& kv_;
};

}  // namespace

const KeyValues& default_values() {
  static const KeyValues defaults = {
      {"experiment.name", "run"},
      {"dataset.generator", "toy"},
      {"dataset.path", ""},
      {"dataset.points", "2500"},
      {"dataset.test_points", "10000"},
      {"dataset.noise", "0.1"},
      {"dataset.seed", "0"},
      {"dataset.embed_dim", "0"},
      {"dataset.normalize", "false"},
      {"dataset.train_fraction", "0.5"},
      {"architecture.depth", "5"},
      {"architecture.width", "10"},
      {"architecture.latent", "0"},
      {"architecture.activations", repeat_list("tanh", 5)},
      {"architecture.init_scale", "1"},
      {"architecture.seed", "0"},
      {"loss.alpha", "1"},
      {"loss.norm", "l2"},
      {"loss.space", "ambient"},
      {"loss.tangent_dim", "2"},
      {"loss.neighborhood", "knn"},
      {"loss.knn", "10"},
      {"loss.radius", "0.5"},
      {"loss.clusters", "50"},
      {"loss.supervised_latent", "0"},
      {"loss.supervised_label", ""},
      {"loss.supervised_weight", "1"},
      {"loss.pairs", "all"},
      {"loss.reconstruction", "true"},
      {"training.epochs_max", "1000"},
      {"training.tolerance", "1e-4"},
      {"training.plateau_patience", "1500"},
      {"training.plateau_rel_improvement", "1e-6"},
      {"training.learning_rate", "1e-3"},
      {"training.batch_size", "32"},
      {"training.seed", "0"},
      {"training.stop_mode", "total"},
      {"training.noise_sigma", "0"},
      {"diagnostics.collapse_threshold", "0.05"},
      {"diagnostics.level_set_resolution", "50"},
      {"diagnostics.level_set_levels", "7"},
      {"diagnostics.posthoc_epochs", "0"},
      {"diagnostics.posthoc_alpha", "1"},
      {"diagnostics.dense_points", "1000"},
      {"outputs.dir", ""},
      {"outputs.level_sets", "false"},
      {"outputs.circle_validation", "false"},
      {"outputs.frames", "false"},
      {"outputs.dataset", "true"},
      {"sweep.dims", "3,5,10"},
      {"sweep.levels", "0.01,0.08,0.32"},
      {"sweep.seeds", "0,1,2"},
      {"sweep.points", "2500"},
      {"sweep.data_seed", "0"},
      {"sweep.epochs_max", "800"},
      {"sweep.plateau_patience", "1500"},
      {"sweep.learning_rate", "3e-3"},
      {"sweep.batch_size", "32"},
      {"sweep.alpha", "1"},
      {"sweep.collapse_threshold", "0.05"},
      {"sweep.jobs", "1"},
  };
  return defaults;
}

std::vector<std::string> preset_names() {
  return {"toy", "circle", "s_curve", "s_curve_invariance", "ks", "ci", "robustness"};
}

KeyValues preset(const std::string& name) {
  KeyValues kv = default_values();
  auto set = [&](const std::string& k, const std::string& v) { kv.at(k) = v; };
  set("experiment.name", name);
  if (name == "toy") {
    set("outputs.level_sets", "true");
  } else if (name == "circle") {
    set("dataset.generator", "circle");
    set("dataset.points", "100");
    set("dataset.test_points", "1000");
    set("dataset.noise", "0");
    set("architecture.depth", "7");
    set("architecture.activations", repeat_list("tanh", 5) + ",none,none");
    set("loss.norm", "l1");
    set("training.epochs_max", "10000");
    set("training.batch_size", "10");
    set("training.tolerance", "1e-4");
    set("outputs.circle_validation", "true");
  } else if (name == "s_curve" || name == "s_curve_invariance") {
    set("dataset.generator", "s_curve");
    set("dataset.points", "3000");
    set("dataset.test_points", "10000");
    set("dataset.noise", "0");
    set("architecture.depth", "7");
    set("architecture.activations", "tanh,hardtanh,tanh,hardtanh,tanh,none,none");
    set("architecture.init_scale", "0.6");
    set("loss.alpha", "10");
    set("training.epochs_max", "1000");
    set("training.tolerance", "1e-2");
    set("outputs.level_sets", "true");
    if (name == "s_curve_invariance") {
      set("architecture.init_scale", "1");
      set("architecture.latent", "2");
      set("loss.alpha", "1");
      set("training.learning_rate", "3e-3");
      set("training.epochs_max", "3000");
      set("training.tolerance", "1e-3");
      set("loss.space", "projected");
      set("loss.norm", "l1");
      set("loss.tangent_dim", "2");
      set("loss.neighborhood", "kmeans");
      set("loss.clusters", "100");
      set("loss.supervised_latent", "2");
      set("loss.supervised_label", "y");
      set("outputs.frames", "true");
    }
  } else if (name == "ks" || name == "ci") {
    set("dataset.generator", "file");
    set("dataset.normalize", "true");
    set("dataset.noise", "0");
    set("dataset.train_fraction", name == "ks" ? "0.5" : "0.8");
    set("architecture.width", "20");
    set("architecture.init_scale", "0.6");
    set("loss.alpha", "10");
    set("training.epochs_max", "1000");
  } else if (name == "robustness") {
    set("dataset.noise", "0");
    set("sweep.alpha", "10");
    set("sweep.dims", "3,5,10,20,40,100");
    set("sweep.levels", "0.01,0.02,0.04,0.08,0.16,0.32");
  } else {
    throw ConfigError("preset: unknown preset '" + name + "'");
  }
  return kv;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", line_no);
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues load_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

void apply_overrides(KeyValues& kv, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    const std::string key = trim(a.substr(0, eq));
    if (!default_values().count(key)) throw ConfigError(key + ": unknown configuration key");
    kv[key] = trim(a.substr(eq + 1));
  }
}

std::string echo(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

ExperimentConfig resolve(const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    if (!default_values().count(k)) throw ConfigError(k + ": unknown configuration key");
  }
  KeyValues full = default_values();
  for (const auto& [k, v] : kv) full[k] = v;
  const Reader r(full);

  ExperimentConfig cfg;
  cfg.name = r.required("experiment.name");

  auto& d = cfg.dataset;
  d.generator = r.choice("dataset.generator", {"toy", "circle", "s_curve", "swiss_roll", "warped_cube", "file"});
  d.path = r.str("dataset.path");
  if (d.generator == "file" && d.path.empty()) throw ConfigError("dataset.path: unresolved (required for file datasets)");
  d.points = r.positive("dataset.points");
  d.test_points = r.non_negative("dataset.test_points");
  d.noise = r.real("dataset.noise");
  if (d.noise < 0) throw ConfigError("dataset.noise: must be non-negative");
  d.seed = r.seed("dataset.seed");
  d.embed_dim = r.non_negative("dataset.embed_dim");
  d.normalize = r.boolean("dataset.normalize");
  d.train_fraction = r.real("dataset.train_fraction");
  if (!(d.train_fraction > 0 && d.train_fraction < 1)) throw ConfigError("dataset.train_fraction: must lie in (0, 1)");

  auto& a = cfg.architecture;
  a.depth = r.positive("architecture.depth");
  a.width = r.positive("architecture.width");
  a.latent = r.non_negative("architecture.latent");
  for (const auto& name : split_list(r.required("architecture.activations"))) {
    try {
      a.activations.push_back(nn::parse_activation(name));
    } catch (const ArgumentError&) {
      throw ConfigError("architecture.activations: unknown activation '" + name + "' (expected tanh|hardtanh|none)");
    }
  }
  if (static_cast<Index>(a.activations.size()) != a.depth) {
    throw ConfigError("architecture.activations: " + std::to_string(a.activations.size()) +
                      " entries for depth " + std::to_string(a.depth));
  }
  a.init_scale = r.real("architecture.init_scale");
  if (!(a.init_scale > 0)) throw ConfigError("architecture.init_scale: must be positive");
  a.seed = r.seed("architecture.seed");

  auto& l = cfg.loss;
  l.spec.alpha = r.real("loss.alpha");
  if (l.spec.alpha < 0) throw ConfigError("loss.alpha: must be non-negative");
  l.spec.norm = r.choice("loss.norm", {"l1", "l2"}) == "l1" ? geometry::OrthoNorm::L1 : geometry::OrthoNorm::L2;
  const auto space = r.choice("loss.space", {"ambient", "projected", "decoder"});
  l.spec.space = space == "ambient"     ? training::GradientSpace::Ambient
                 : space == "projected" ? training::GradientSpace::TangentProjected
                                        : training::GradientSpace::DecoderJacobian;
  l.tangent_dim = r.positive("loss.tangent_dim");
  l.neighborhood = r.choice("loss.neighborhood", {"knn", "radius", "kmeans"});
  l.knn = r.positive("loss.knn");
  l.radius = r.real("loss.radius");
  if (!(l.radius > 0)) throw ConfigError("loss.radius: must be positive");
  l.clusters = r.positive("loss.clusters");
  const Index sup = r.non_negative("loss.supervised_latent");
  l.supervised_label = r.str("loss.supervised_label");
  if (sup > 0) {
    if (l.supervised_label.empty()) throw ConfigError("loss.supervised_label: unresolved (required with a supervised latent)");
    training::SupervisedTerm term;
    term.latent_index = sup - 1;
    term.weight = r.real("loss.supervised_weight");
    if (term.weight < 0) throw ConfigError("loss.supervised_weight: must be non-negative");
    l.spec.supervised = term;  // label column resolved against the dataset
  }
  const std::string pairs = r.required("loss.pairs");
  if (pairs != "all") {
    std::vector<std::pair<Index, Index>> list;
    for (const auto& item : split_list(pairs, ';')) {
      const auto parts = split_list(item, '-');
      if (parts.size() != 2) throw ConfigError("loss.pairs: '" + item + "' is not j-k");
      try {
        list.emplace_back(std::stol(parts[0]) - 1, std::stol(parts[1]) - 1);
      } catch (const std::exception&) {
        throw ConfigError("loss.pairs: '" + item + "' is not j-k");
      }
    }
    l.spec.pairs = list;
  }
  l.spec.reconstruction = r.boolean("loss.reconstruction");

  auto& t = cfg.training;
  t.epochs_max = static_cast<long>(r.positive("training.epochs_max"));
  t.tolerance = r.real("training.tolerance");
  t.plateau_patience = static_cast<long>(r.positive("training.plateau_patience"));
  t.plateau_rel_improvement = r.real("training.plateau_rel_improvement");
  t.learning_rate = r.real("training.learning_rate");
  t.batch_size = r.non_negative("training.batch_size");
  t.seed = r.seed("training.seed");
  t.stop_mode = r.choice("training.stop_mode", {"total", "robustness"}) == "total" ? training::StopMode::TotalLoss
                                                                                   : training::StopMode::Robustness;
  t.noise_sigma = r.real("training.noise_sigma");
  t.validate();

  auto& g = cfg.diagnostics;
  g.collapse_threshold = r.real("diagnostics.collapse_threshold");
  if (!(g.collapse_threshold > 0 && g.collapse_threshold < 1)) throw ConfigError("diagnostics.collapse_threshold: must lie in (0, 1)");
  g.level_set_resolution = r.positive("diagnostics.level_set_resolution");
  g.level_set_levels = r.positive("diagnostics.level_set_levels");
  g.posthoc_epochs = static_cast<long>(r.non_negative("diagnostics.posthoc_epochs"));
  g.posthoc_alpha = r.real("diagnostics.posthoc_alpha");
  g.dense_points = r.positive("diagnostics.dense_points");

  auto& o = cfg.outputs;
  const std::string dir = r.str("outputs.dir");
  o.dir = dir.empty() ? output_root() / cfg.name : fs::path(dir);
  o.level_sets = r.boolean("outputs.level_sets");
  o.circle_validation = r.boolean("outputs.circle_validation");
  o.frames = r.boolean("outputs.frames");
  o.dataset = r.boolean("outputs.dataset");

  auto& s = cfg.sweep;
  s.options.dims = r.list<Index>("sweep.dims", [](const std::string& v) {
    const long n = std::stol(v);
    if (n < 1) throw std::invalid_argument("dim");
    return static_cast<Index>(n);
  });
  s.options.levels = r.list<double>("sweep.levels", [](const std::string& v) {
    const double x = std::stod(v);
    if (!(x >= 0)) throw std::invalid_argument("level");
    return x;
  });
  s.options.seeds = r.list<std::uint64_t>("sweep.seeds", [](const std::string& v) { return std::stoull(v); });
  s.points = r.positive("sweep.points");
  s.data_seed = r.seed("sweep.data_seed");
  s.options.epochs_max = static_cast<long>(r.positive("sweep.epochs_max"));
  s.options.plateau_patience = static_cast<long>(r.positive("sweep.plateau_patience"));
  s.options.learning_rate = r.real("sweep.learning_rate");
  s.options.batch_size = r.non_negative("sweep.batch_size");
  s.options.alpha = r.real("sweep.alpha");
  s.options.collapse_threshold = r.real("sweep.collapse_threshold");
  s.options.jobs = static_cast<int>(r.positive("sweep.jobs"));
  s.options.init_scale = a.init_scale;
  return cfg;
}

namespace {

data::Dataset generate(const DatasetBlock& d, Index count, std::uint64_t seed,
                       const std::optional<data::NormalizationRecord>& reuse) {
  if (d.generator == "toy") {
    data::ToyOptions o;
    o.count = count;
    o.seed = seed;
    o.noise_sigma = d.noise;
    o.normalization = reuse;
    return data::gen_toy(o);
  }
  data::Dataset out;
  if (d.generator == "circle") out = data::gen_circle(count, seed);
  else if (d.generator == "s_curve") out = data::gen_s_curve(count, seed);
  else if (d.generator == "swiss_roll") out = data::gen_swiss_roll(count, seed);
  else if (d.generator == "warped_cube") out = data::gen_warped_cube(count, seed);
  else throw ConfigError("dataset.generator: '" + d.generator + "' cannot be sampled");
  if (d.noise > 0) out = data::add_gaussian_noise(out, d.noise, seed + 0x51ed);
  return out;
}

// Embedding, then unit-cube scaling, both fitted on the training part and reused for the test part.
void post_process(const DatasetBlock& d, Datasets& sets) {
  if (d.embed_dim > 0) {
    sets.train = data::embed_unitary(sets.train, d.embed_dim, d.seed + 0xe3b);
    if (sets.test.size() > 0) sets.test = data::embed_unitary(sets.test, d.embed_dim, d.seed + 0xe3b);
  }
  if (d.normalize) {
    auto [train, record] = data::normalize_unit_cube(sets.train);
    sets.train = std::move(train);
    if (sets.test.size() > 0) {
      sets.test.points = data::apply_normalization(sets.test.points, record);
      sets.test.metadata.normalization = record;
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

void save_latents_csv(const fs::path& path, const data::Dataset& d, const Matrix& latents) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  out << "index";
  for (Index c = 0; c < latents.cols(); ++c) out << ",nu_" << (c + 1);
  for (Index c = 0; c < d.ambient_dimension(); ++c) out << ",x_" << (c + 1);
  for (const auto& name : d.label_names) out << ",label_" << name;
  out << '\n';
  for (Index i = 0; i < latents.rows(); ++i) {
    out << i;
    for (Index c = 0; c < latents.cols(); ++c) out << ',' << data::format_double(latents(i, c));
    for (Index c = 0; c < d.ambient_dimension(); ++c) out << ',' << data::format_double(d.points(i, c));
    for (Index c = 0; c < d.labels.cols(); ++c) out << ',' << data::format_double(d.labels(i, c));
    out << '\n';
  }
}

void save_circle_csv(const fs::path& path, const CircleValidation& v, const data::Dataset& train,
                     const training::CaeModel& model) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  const Index l = model.latent_width();
  out << "kind,x_1,x_2";
  for (Index c = 0; c < l; ++c) out << ",nu_" << (c + 1);
  out << ",xhat_1,xhat_2\n";
  auto emit = [&](const char* kind, const Matrix& x, const Matrix& nu, const Matrix& xhat) {
    for (Index i = 0; i < nu.rows(); ++i) {
      out << kind;
      for (Index c = 0; c < 2; ++c) out << ',' << (x.rows() ? data::format_double(x(i, c)) : "");
      for (Index c = 0; c < l; ++c) out << ',' << data::format_double(nu(i, c));
      for (Index c = 0; c < 2; ++c) out << ',' << data::format_double(xhat(i, c));
      out << '\n';
    }
  };
  const Matrix train_nu = training::encode(model, train.points);
  emit("train", train.points, train_nu, training::decode(model, train_nu));
  emit("dense", v.dense_points, v.dense_latents, v.dense_decoded);
  emit("manual", Matrix(), v.manual_latents, v.manual_decoded);
}

nlohmann::json parts_json(const training::LossParts& p) {
  return {{"reconstruction", p.reconstruction},
          {"orthogonality", p.orthogonality},
          {"supervised", p.supervised},
          {"total", p.total}};
}

}  // namespace

Datasets build_datasets(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  Datasets sets;
  if (d.generator == "file") {
    data::Dataset all = data::load_csv(d.path);
    std::tie(sets.train, sets.test) = data::split(all, d.train_fraction, d.seed);
  } else {
    sets.train = generate(d, d.points, d.seed, std::nullopt);
    if (d.test_points > 0) {
      sets.test = generate(d, d.test_points, d.seed + 1000003, sets.train.metadata.normalization);
    }
  }
  post_process(d, sets);
  data::validate(sets.train);
  return sets;
}

LevelSetCurves level_set_export(const training::CaeModel& model, const diagnostics::DimensionReport& report,
                                const Matrix& train_latents, Index resolution, Index levels) {
  if (report.inferred_dimension != 2) {
    throw ArgumentError("level sets need an inferred dimension of 2 (got " + std::to_string(report.inferred_dimension) + ")");
  }
  if (resolution < 1 || levels < 1) throw ArgumentError("level-set resolution and level count must be positive");
  const Index l = model.latent_width();
  if (train_latents.cols() != l || report.latent_mean.size() != l) throw ShapeError("latent widths disagree");

  LevelSetCurves curves;
  for (int which = 0; which < 2; ++which) {
    const Index varied = report.active[static_cast<std::size_t>(which)];
    const Index held = report.active[static_cast<std::size_t>(1 - which)];
    std::vector<double> held_values(train_latents.col(held).data(), train_latents.col(held).data() + train_latents.rows());
    std::sort(held_values.begin(), held_values.end());
    const double lo = train_latents.col(varied).minCoeff();
    const double hi = train_latents.col(varied).maxCoeff();
    for (Index q = 0; q < levels; ++q) {
      const double frac = static_cast<double>(q + 1) / static_cast<double>(levels + 1);
      const auto pos = static_cast<std::size_t>(std::llround(frac * static_cast<double>(held_values.size() - 1)));
      const double level_value = held_values[pos];
      Matrix lat(resolution, l);
      for (Index s = 0; s < resolution; ++s) {
        lat.row(s) = report.latent_mean.transpose();
        lat(s, held) = level_value;
        lat(s, varied) = resolution == 1 ? 0.5 * (lo + hi)
                                         : lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(resolution - 1);
      }
      const Matrix decoded = training::decode(model, lat);
      for (Index s = 0; s < resolution; ++s) {
        curves.rows.push_back({varied, q, level_value, s, lat.row(s).transpose(), decoded.row(s).transpose()});
      }
    }
  }
  return curves;
}

void save_level_sets_csv(const LevelSetCurves& curves, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  if (curves.rows.empty()) return;
  const Index l = curves.rows.front().latent.size();
  const Index n = curves.rows.front().decoded.size();
  out << "varied_component,level,level_value,step";
  for (Index c = 0; c < l; ++c) out << ",nu_" << (c + 1);
  for (Index c = 0; c < n; ++c) out << ",xhat_" << (c + 1);
  out << '\n';
  for (const auto& row : curves.rows) {
    out << (row.varied + 1) << ',' << row.level << ',' << data::format_double(row.level_value) << ',' << row.step;
    for (Index c = 0; c < l; ++c) out << ',' << data::format_double(row.latent(c));
    for (Index c = 0; c < n; ++c) out << ',' << data::format_double(row.decoded(c));
    out << '\n';
  }
}

CircleValidation circle_validation(const training::CaeModel& model, const diagnostics::DimensionReport& report,
                                   Index dense_points) {
  if (model.ambient_dimension() != 2) throw ArgumentError("circle validation needs a planar model");
  CircleValidation v;
  v.dense_points = data::gen_circle_dense(dense_points).points;
  v.dense_latents = training::encode(model, v.dense_points);
  v.dense_decoded = training::decode(model, v.dense_latents);
  const Vector err = (v.dense_points - v.dense_decoded).rowwise().norm();
  v.max_error = err.maxCoeff();
  v.mean_squared = err.squaredNorm() / static_cast<double>(err.size());

  // Latent line through the training range of the leading active component, others at their means.
  const Index lead = report.active.empty() ? 0 : report.active.front();
  v.manual_latents.resize(dense_points, model.latent_width());
  for (Index i = 0; i < dense_points; ++i) {
    v.manual_latents.row(i) = report.latent_mean.transpose();
    const double f = dense_points == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(dense_points - 1);
    v.manual_latents(i, lead) = report.latent_min(lead) + f * (report.latent_max(lead) - report.latent_min(lead));
  }
  v.manual_decoded = training::decode(model, v.manual_latents);
  return v;
}

RunSummary run(const ExperimentConfig& cfg, const KeyValues& echo_values) {
  const fs::path dir = cfg.outputs.dir;
  fs::create_directories(dir);
  write_text(dir / "config.txt", echo(echo_values));
  try {
    Datasets sets = build_datasets(cfg);
    const data::Dataset& train = sets.train;
    if (cfg.outputs.dataset) {
      data::save_csv(train, dir / "dataset.csv");
      write_json(dir / "dataset.meta.json", data::metadata_json(train.metadata));
    }

    const Index n = train.ambient_dimension();
    const Index latent = cfg.architecture.latent == 0 ? n : cfg.architecture.latent;
    auto model = training::make_model(n, latent, cfg.architecture.width, cfg.architecture.activations,
                                      cfg.architecture.seed, cfg.architecture.init_scale);

    training::LossSpec spec = cfg.loss.spec;
    if (spec.supervised) spec.supervised->label_column = train.label_column(cfg.loss.supervised_label);

    training::TrainResult result;
    if (spec.space == training::GradientSpace::TangentProjected) {
      geometry::NeighborhoodSpec nb;
      if (cfg.loss.neighborhood == "knn") nb = geometry::KNearest{cfg.loss.knn};
      else if (cfg.loss.neighborhood == "radius") nb = geometry::RadiusScale{cfg.loss.radius};
      else nb = geometry::KMeansClusters{cfg.loss.clusters, cfg.dataset.seed, 100};
      auto frames = std::make_shared<const geometry::TangentFrameSet>(
          geometry::tangent_frames(train.points, nb, cfg.loss.tangent_dim));
      if (cfg.outputs.frames) write_json(dir / "frames.json", geometry::to_json(*frames));
      result = training::train_cae_projected(train, std::move(model), frames, spec, cfg.training);
    } else if (spec.space == training::GradientSpace::Ambient && latent == n) {
      result = training::train_cae(train, std::move(model), spec, cfg.training);
    } else {
      result = training::train(train, std::move(model), spec, cfg.training);
    }
    training::save_trace_csv(result.trace, dir / "trace.csv");

    nlohmann::json metrics;
    if (cfg.diagnostics.posthoc_epochs > 0) {
      training::TrainConfig post = cfg.training;
      post.epochs_max = cfg.diagnostics.posthoc_epochs;
      auto ortho = training::orthogonalize_posthoc(train, std::move(result.model), post, cfg.diagnostics.posthoc_alpha);
      training::save_trace_csv(ortho.trace, dir / "posthoc_trace.csv");
      metrics["posthoc_final"] = parts_json(ortho.trace.final_parts);
      result.model = std::move(ortho.model);
      // Diagnostics below describe the post-processed model.
      result.trace.latent_mean = ortho.trace.latent_mean;
      result.trace.latent_min = ortho.trace.latent_min;
      result.trace.latent_max = ortho.trace.latent_max;
    }
    training::save_model(result.model, dir / "model.json");

    auto report = diagnostics::classify_components(result.trace, cfg.diagnostics.collapse_threshold);
    write_json(dir / "dimension_report.json", diagnostics::to_json(report));

    const Matrix latents = training::encode(result.model, train.points);
    save_latents_csv(dir / "latents.csv", train, latents);

    RunSummary summary;
    summary.dir = dir;
    summary.train_error = result.trace.final_parts.total;
    metrics["train"] = parts_json(result.trace.final_parts);
    metrics["inferred_dimension"] = report.inferred_dimension;
    metrics["stop_reason"] = std::string(training::stop_reason_name(result.trace.stop_reason));
    metrics["epochs"] = result.trace.rows.empty() ? 0 : result.trace.rows.back().epoch;
    if (sets.test.size() > 0) {
      summary.test_error = diagnostics::freeze_and_reconstruct(result.model, sets.test.points, report);
      summary.test_error_full = diagnostics::mean_squared_error(
          sets.test.points, training::decode(result.model, training::encode(result.model, sets.test.points)));
      metrics["test_points"] = sets.test.size();
      metrics["test_error_frozen"] = summary.test_error;
      metrics["test_error_full"] = summary.test_error_full;
    }
    if (cfg.outputs.level_sets) {
      if (report.inferred_dimension == 2) {
        const auto curves = level_set_export(result.model, report, latents, cfg.diagnostics.level_set_resolution,
                                             cfg.diagnostics.level_set_levels);
        save_level_sets_csv(curves, dir / "level_sets.csv");
      } else {
        metrics["level_sets"] = "skipped: inferred dimension is not 2";
      }
    }
    if (cfg.outputs.circle_validation) {
      const auto v = circle_validation(result.model, report, cfg.diagnostics.dense_points);
      save_circle_csv(dir / "circle_validation.csv", v, train, result.model);
      metrics["dense_max_error"] = v.max_error;
      metrics["dense_mean_squared_error"] = v.mean_squared;
    }
    write_json(dir / "test_metrics.json", metrics);

    summary.trace = std::move(result.trace);
    summary.report = std::move(report);
    summary.model = std::move(result.model);
    return summary;
  } catch (const training::TrainingAborted& e) {
    training::save_trace_csv(e.trace(), dir / "trace.csv");
    write_json(dir / "error.json", {{"error", e.what()}, {"kind", "numerical"}, {"exit_code", 2}});
    throw;
  } catch (const Error& e) {
    const bool numerical = e.kind() == ErrorKind::Numerical;
    write_json(dir / "error.json",
               {{"error", e.what()}, {"kind", numerical ? "numerical" : "validation"}, {"exit_code", numerical ? 2 : 1}});
    throw;
  }
}

std::vector<diagnostics::RobustnessCell> sweep(const ExperimentConfig& cfg, const KeyValues& echo_values) {
  const fs::path dir = cfg.outputs.dir;
  fs::create_directories(dir);
  write_text(dir / "config.txt", echo(echo_values));
  data::ToyOptions o;
  o.count = cfg.sweep.points;
  o.seed = cfg.sweep.data_seed;
  o.noise_sigma = 0.0;
  const data::Dataset base = data::gen_toy(o);
  auto cells = diagnostics::robustness_sweep(base, cfg.sweep.options);
  diagnostics::save_sweep_csv(cells, dir / "sweep.csv");
  return cells;
}

}  // namespace cae::experiment
