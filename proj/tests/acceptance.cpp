// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <tuple>

#include "cae/data.hpp"
#include "cae/diagnostics.hpp"
#include "cae/errors.hpp"
#include "cae/experiment.hpp"
#include "cae/geometry.hpp"
#include "cae/gradcheck.hpp"

using namespace cae;
namespace ex = cae::experiment;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path run_root() {
  const char* env = std::getenv(ex::kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::current_path() / "acceptance_runs";
}

ex::RunSummary run_preset(const std::string& name, std::uint64_t seed, const ex::KeyValues& extra = {}) {
  ex::KeyValues kv = ex::preset(name);
  const auto s = std::to_string(seed);
  for (const char* k : {"dataset.seed", "architecture.seed", "training.seed"}) kv[k] = s;
  for (const auto& [k, v] : extra) kv[k] = v;
  kv["outputs.dir"] = (run_root() / (name + "_seed" + s)).string();
  return ex::run(ex::resolve(kv), kv);
}

std::vector<double> ranks(const Vector& v) {
  std::vector<Index> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::sort(idx.begin(), idx.end(), [&](Index a, Index b) { return v(a) < v(b); });
  std::vector<double> r(idx.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v(idx[j + 1]) == v(idx[i])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[static_cast<std::size_t>(idx[k])] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(const Vector& a, const Vector& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const Eigen::Map<const Vector> x(ra.data(), static_cast<Index>(ra.size()));
  const Eigen::Map<const Vector> y(rb.data(), static_cast<Index>(rb.size()));
  const Vector xc = x.array() - x.mean();
  const Vector yc = y.array() - y.mean();
  return xc.dot(yc) / (xc.norm() * yc.norm());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_abs_cos(const training::CaeModel& m, const Matrix& points, Index a, Index b) {
  const Matrix lat = training::encode(m, points);
  double s = 0.0;
  for (Index i = 0; i < lat.rows(); ++i) {
    const auto jb = nn::forward_jacobian(m.decoder, lat.row(i).transpose());
    const Vector u = jb.jacobian.col(a), v = jb.jacobian.col(b);
    s += std::abs(u.dot(v)) / (u.norm() * v.norm());
  }
  return s / static_cast<double>(lat.rows());
}

// Shared between criteria.
std::optional<ex::RunSummary> toy_success;
std::optional<std::uint64_t> s_curve_success_seed;

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  const auto cases = gradcheck::run_suite(gradcheck::SuiteOptions{});
  const double t = seconds_since(t0);
  Index failing = 0;
  double worst = 0.0;
  for (const auto& c : cases) {
    failing += c.result.failures > 0;
    worst = std::max(worst, c.result.max_rel_error);
  }
  Outcome o;
  o.pass = failing == 0 && cases.size() == 100 && t < 60.0;
  o.detail = std::to_string(cases.size()) + " model/alpha cases, " + std::to_string(failing) +
             " failing, worst rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f", t) + " s";
  return o;
}

Outcome toy_example() {
  int good = 0;
  std::string detail;
  double slowest = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto t0 = Clock::now();
    auto s = run_preset("toy", seed);
    const double t = seconds_since(t0);
    slowest = std::max(slowest, t);
    const bool ok = s.train_error < 1e-3 && s.report.inferred_dimension == 2 && s.test_error <= 10.0 * s.train_error &&
                    t < 900.0;
    detail += " seed" + std::to_string(seed) + "(E=" + fmt("%.2e", s.train_error) + " d=" +
              std::to_string(s.report.inferred_dimension) + " test=" + fmt("%.2e", s.test_error) + ")";
    if (ok) {
      ++good;
      if (!toy_success) toy_success = std::move(s);
    }
  }
  Outcome o;
  o.pass = good >= 2;
  o.detail = std::to_string(good) + "/3 seeds ok;" + detail + "; slowest " + fmt("%.0f", slowest) + " s";
  return o;
}

Outcome toy_level_sets() {
  Outcome o;
  if (!toy_success) {
    o.detail = "no successful toy run";
    return o;
  }
  const auto& run = *toy_success;
  const auto train = data::load_csv(run.dir / "dataset.csv");
  const auto meta = data::metadata_from_json(read_json(run.dir / "dataset.meta.json"));
  const auto& rec = *meta.normalization;
  const Matrix latents = training::encode(run.model, train.points);
  const auto curves = ex::level_set_export(run.model, run.report, latents, 50, 7);

  const Index grid = 300;
  Matrix dense(grid * grid, 3);
  for (Index i = 0; i < grid; ++i)
    for (Index j = 0; j < grid; ++j) {
      const double x = 1.0 + static_cast<double>(i) / static_cast<double>(grid - 1);
      const double y = 1.0 + static_cast<double>(j) / static_cast<double>(grid - 1);
      dense.row(i * grid + j) = data::toy_surface(x, y).transpose();
    }
  // Footprint of the chart: 99th percentile of nearest-neighbour spacing among training latents.
  std::vector<double> spacing;
  for (Index i = 0; i < latents.rows(); ++i) {
    auto d2 = (latents.rowwise() - latents.row(i)).rowwise().squaredNorm().eval();
    d2(i) = INFINITY;
    spacing.push_back(std::sqrt(d2.minCoeff()));
  }
  std::sort(spacing.begin(), spacing.end());
  const double reach = spacing[spacing.size() * 99 / 100];

  const double sigma = 0.1;
  double worst = 0.0;
  std::vector<double> dists;
  std::size_t outside = 0;
  for (const auto& row : curves.rows) {
    if (std::sqrt((latents.rowwise() - row.latent.transpose()).rowwise().squaredNorm().minCoeff()) > reach) {
      ++outside;
      continue;
    }
    Matrix p(1, 3);
    p.row(0) = row.decoded.transpose();
    const Vector phi = data::invert_normalization(p, rec).row(0).transpose();
    const double d = std::sqrt((dense.rowwise() - phi.transpose()).rowwise().squaredNorm().minCoeff());
    dists.push_back(d);
    worst = std::max(worst, d);
  }
  std::sort(dists.begin(), dists.end());
  const double med = dists.empty() ? INFINITY : median(dists);
  const double q95 = dists.empty() ? INFINITY : dists[(dists.size() - 1) * 95 / 100];
  o.pass = med <= sigma && q95 <= 3.0 * sigma && outside * 2 < curves.rows.size();
  o.detail = std::to_string(dists.size()) + " of " + std::to_string(curves.rows.size()) +
             " decoded points inside the training latent footprint; distance to surface median " + fmt("%.3f", med) +
             " (limit sigma = " + fmt("%.2f", sigma) + "), 95th percentile " + fmt("%.3f", q95) +
             " (limit 3 sigma), max " + fmt("%.3f", worst);
  return o;
}

Outcome circle_example() {
  int good = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto t0 = Clock::now();
    const auto s = run_preset("circle", seed);
    const double t = seconds_since(t0);
    const auto v = ex::circle_validation(s.model, s.report, 1000);
    const bool ok = s.train_error < 1e-3 && s.report.inferred_dimension == 1 && v.max_error >= 0.1 && t < 300.0;
    good += ok;
    detail += " seed" + std::to_string(seed) + "(E=" + fmt("%.2e", s.train_error) + " d=" +
              std::to_string(s.report.inferred_dimension) + " dense max=" + fmt("%.2f", v.max_error) + " " +
              fmt("%.0f", t) + "s)";
  }
  return {good >= 2, std::to_string(good) + "/3 seeds ok;" + detail};
}

Outcome s_curve_example() {
  const auto t0 = Clock::now();
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = run_preset("s_curve", seed);
    const bool ok = s.report.inferred_dimension == 2 && s.train_error < 5e-2;
    if (ok && !s_curve_success_seed) s_curve_success_seed = seed;
    detail += " seed" + std::to_string(seed) + "(E=" + fmt("%.2e", s.train_error) + " d=" +
              std::to_string(s.report.inferred_dimension) + ")";
  }
  const double t = seconds_since(t0);
  return {s_curve_success_seed.has_value() && t < 1800.0,
          (s_curve_success_seed ? "seed " + std::to_string(*s_curve_success_seed) + " succeeds;" : std::string("no seed succeeds;")) +
              detail + "; " + fmt("%.0f", t) + " s total"};
}

Outcome invariance_variant() {
  if (!s_curve_success_seed) return {false, "no successful S-curve seed to start from"};
  // Data of the successful S-curve seed; five initializations, keep the lowest training loss (label-free choice).
  const auto data_seed = std::to_string(*s_curve_success_seed);
  std::optional<ex::RunSummary> best;
  std::string losses;
  for (std::uint64_t init = 0; init < 5; ++init) {
    ex::KeyValues kv = ex::preset("s_curve_invariance");
    kv["dataset.seed"] = data_seed;
    kv["architecture.seed"] = kv["training.seed"] = std::to_string(init);
    kv["outputs.dir"] = (run_root() / ("s_curve_invariance_init" + std::to_string(init))).string();
    auto s = ex::run(ex::resolve(kv), kv);
    losses += " " + fmt("%.2e", s.train_error);
    if (!best || s.train_error < best->train_error) best = std::move(s);
  }
  const auto d = data::load_csv(best->dir / "dataset.csv");
  const Matrix lat = training::encode(best->model, d.points);
  const double r_t = std::abs(spearman(lat.col(0), d.labels.col(d.label_column("t"))));
  const double r_y = std::abs(spearman(lat.col(1), d.labels.col(d.label_column("y"))));
  return {r_t > 0.95 && r_y > 0.99, "data seed " + data_seed + ", init losses" + losses + "; best: |rho|(nu_1, t) = " +
                                        fmt("%.4f", r_t) + ", |rho|(nu_2, y) = " + fmt("%.4f", r_y)};
}

Outcome posthoc() {
  if (!toy_success) {
    auto s = run_preset("toy", 0);
    if (s.report.inferred_dimension == 2) toy_success = std::move(s);
  }
  if (!toy_success) return {false, "no toy run with two active components"};
  const auto& run = *toy_success;
  const auto d = data::load_csv(run.dir / "dataset.csv");
  const Index a = run.report.active[0], b = run.report.active[1];
  const double cos0 = mean_abs_cos(run.model, d.points, a, b);
  const double r0 = diagnostics::mean_squared_error(d.points, training::decode(run.model, training::encode(run.model, d.points)));
  training::TrainConfig cfg;
  cfg.epochs_max = 200;
  cfg.batch_size = 32;
  cfg.tolerance = 1e-12;
  const auto res = training::orthogonalize_posthoc(d, run.model, cfg, 1.0);
  const double cos1 = mean_abs_cos(res.model, d.points, a, b);
  const double r1 = diagnostics::mean_squared_error(d.points, training::decode(res.model, training::encode(res.model, d.points)));
  return {cos1 < cos0 && cos1 < 0.05 && r1 < 2.0 * r0,
          "mean |cos| " + fmt("%.4f", cos0) + " -> " + fmt("%.4f", cos1) + ", reconstruction " + fmt("%.2e", r0) +
              " -> " + fmt("%.2e", r1) + " (x" + fmt("%.2f", r1 / r0) + ")"};
}

Outcome robustness() {
  const auto t0 = Clock::now();
  // (a) formulas against hand-evaluated values.
  bool formulas = diagnostics::hidden_width(3) == 20 && diagnostics::hidden_width(5) == 30 &&
                  diagnostics::hidden_width(10) == 40;
  const double s3 = 0.01 * std::sqrt(3.0);
  formulas = formulas && training::robustness_threshold(s3, 3) == 5e-4;
  formulas = formulas && std::abs(training::robustness_threshold(0.32 * std::sqrt(3.0), 3) - 0.03072) < 1e-15;
  formulas = formulas && std::abs(training::robustness_threshold(0.32 * std::sqrt(3.0), 10) - 0.0560867898885) < 1e-12;
  formulas = formulas && std::abs(training::robustness_threshold(0.08 * std::sqrt(3.0), 5) - 0.0024787093) < 1e-10;

  ex::KeyValues kv = ex::preset("robustness");
  kv["sweep.dims"] = "3,5,10";
  kv["sweep.levels"] = "0.01,0.08,0.32";
  kv["outputs.dir"] = (run_root() / "robustness").string();
  const auto cfg = ex::resolve(kv);
  const auto cells = ex::sweep(cfg, kv);
  for (const auto& c : cells) formulas = formulas && c.width == diagnostics::hidden_width(c.ambient);

  bool low_ok = true, drift_ok = true;
  std::string detail;
  for (Index n : {3, 5, 10}) {
    std::vector<double> low, high;
    for (const auto& c : cells) {
      if (c.ambient != n || c.failed) continue;
      const double ratio = c.top2_error / c.full_error;
      if (c.level == 0.01) low.push_back(ratio);
      if (c.level == 0.32) high.push_back(ratio);
    }
    const double ml = low.empty() ? INFINITY : median(low);
    const double mh = high.empty() ? -INFINITY : median(high);
    low_ok = low_ok && ml <= 1.5;
    drift_ok = drift_ok && mh >= ml;
    detail += " n=" + std::to_string(n) + ": " + fmt("%.2f", ml) + " / " + fmt("%.2f", mh) + ";";
  }
  const double t = seconds_since(t0);
  return {formulas && low_ok && drift_ok && t < 7200.0,
          std::string("(a) ") + (formulas ? "ok" : "MISMATCH") + ", (b) " + (low_ok ? "ok" : "fail") + ", (c) " +
              (drift_ok ? "ok" : "fail") + "; median top2/full at l=0.01 / 0.32:" + detail + " " +
              std::to_string(cells.size()) + " cells, " + fmt("%.0f", t) + " s"};
}

Outcome ks_substitute() {
  const auto dir = run_root() / "ks_data";
  fs::create_directories(dir);
  ex::KeyValues gen = ex::default_values();
  gen["dataset.generator"] = "warped_cube";
  gen["dataset.points"] = "4000";
  gen["dataset.test_points"] = "0";
  gen["dataset.noise"] = "0";
  gen["dataset.embed_dim"] = "8";
  gen["dataset.seed"] = "11";
  const auto d = ex::build_datasets(ex::resolve(gen)).train;
  const auto path = dir / "ks_like.csv";
  data::save_csv(d, path);
  int good = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto s = run_preset("ks", seed, {{"dataset.path", path.string()}});
    good += s.report.inferred_dimension == 3;
    detail += " seed" + std::to_string(seed) + "(d=" + std::to_string(s.report.inferred_dimension) + " E=" +
              fmt("%.2e", s.train_error) + ")";
  }
  return {good >= 2, std::to_string(good) + "/3 seeds infer 3;" + detail};
}

Outcome geometry_invariants() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g;
  auto random = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
  };
  bool pca = true, gs = true, proj = true, nn_ok = true;
  for (int t = 0; t < 200; ++t) {
    const Index n = 2 + t % 7;
    const Matrix pts = random(n + 3 + t % 5, n);
    const auto res = geometry::local_pca(pts);
    const double tr = geometry::sample_covariance(pts).trace();
    pca = pca && std::abs(res.eigenvalues.sum() - tr) <= 1e-10 * tr;
    for (Index i = 1; i < n; ++i) pca = pca && res.eigenvalues(i) <= res.eigenvalues(i - 1);

    std::vector<Vector> vs;
    for (Index c = 0; c < std::min<Index>(n, 4); ++c) vs.push_back(pts.row(c).transpose());
    const auto q = geometry::gram_schmidt(vs);
    for (std::size_t i = 0; i < q.size(); ++i)
      for (std::size_t j = 0; j < i; ++j) gs = gs && std::abs(q[i].dot(q[j])) <= 1e-10 * q[i].norm() * q[j].norm();

    const Matrix basis = res.eigenvectors.leftCols(std::max<Index>(1, n / 2));
    const Vector v = random(n, 1).col(0);
    const Vector pv = geometry::project_to_tangent(v, basis);
    proj = proj && (geometry::project_to_tangent(pv, basis) - pv).norm() <= 1e-12 * std::max(1.0, v.norm());
    proj = proj && pv.norm() <= v.norm() * (1 + 1e-12);
  }
  const Matrix cloud = random(400, 5);
  for (Index q = 0; q < cloud.rows(); q += 7) {
    std::vector<std::pair<double, Index>> all;
    for (Index i = 0; i < cloud.rows(); ++i)
      if (i != q) all.emplace_back((cloud.row(i) - cloud.row(q)).squaredNorm(), i);
    std::sort(all.begin(), all.end());
    std::vector<Index> want;
    for (int k = 0; k < 12; ++k) want.push_back(all[static_cast<std::size_t>(k)].second);
    nn_ok = nn_ok && geometry::knn(cloud, q, 12) == want;
  }
  const double t = seconds_since(t0);
  return {pca && gs && proj && nn_ok && t < 60.0,
          std::string("PCA trace ") + (pca ? "ok" : "fail") + ", Gram-Schmidt " + (gs ? "ok" : "fail") +
              ", projection " + (proj ? "ok" : "fail") + ", kNN " + (nn_ok ? "ok" : "fail") + ", " + fmt("%.2f", t) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional argument: criterion digits to run, e.g. "19".
  std::string only = argc > 1 ? argv[1] : "";
  auto wanted = [&](char c) { return only.empty() || only.find(c) != std::string::npos; };

  const std::vector<std::tuple<char, const char*, std::function<Outcome()>>> criteria = {
      {'1', "gradient oracle suite", gradient_oracle},
      {'2', "toy surface inferred dimension 2", toy_example},
      {'3', "circle inferred dimension 1 with dense failure", circle_example},
      {'4', "S-curve chart on at least one seed", s_curve_example},
      {'5', "invariance variant recovers arc and height", invariance_variant},
      {'6', "post-hoc orthogonalization", posthoc},
      {'7', "robustness sweep", robustness},
      {'8', "unitarily embedded 3-manifold from CSV", ks_substitute},
      {'9', "geometry invariants", geometry_invariants},
  };
  int failed = 0;
  for (const auto& [id, name, fn] : criteria) {
    if (!wanted(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %c (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
    if (id == '2' && toy_success) {
      Outcome ls;
      try {
        ls = toy_level_sets();
      } catch (const std::exception& e) {
        ls = {false, std::string("exception: ") + e.what()};
      }
      std::printf("%s criterion 2 (level-set curves near the true surface): %s\n", ls.pass ? "PASS" : "FAIL",
                  ls.detail.c_str());
      std::fflush(stdout);
      failed += !ls.pass;
    }
  }
  return failed == 0 ? 0 : 1;
}
