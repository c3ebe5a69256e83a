#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hqinf/analytic_limits.hpp"
#include "hqinf/queue_sim.hpp"
#include "hqinf/random.hpp"

namespace hqinf {

// ---------------------------------------------------------------------------
// Brownian sheet and Kiefer process on a level lattice

/// W on the lattice s_levels x x_levels (both including 0; x also 1).
struct SheetSample {
  std::vector<double> s_levels;
  std::vector<double> x_levels;
  std::vector<double> cell_increments;  // (s cell, x cell), row-major
  std::vector<double> cumulative;       // W(s_i, x_j), row-major

  double w(std::size_t i, std::size_t j) const { return cumulative[i * x_levels.size() + j]; }
};

namespace detail {

inline std::vector<double> with_ends(std::vector<double> v, double lo, std::optional<double> hi) {
  v.push_back(lo);
  if (hi) v.push_back(*hi);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

inline std::size_t level_index(const std::vector<double>& levels, double v, const char* what) {
  auto it = std::lower_bound(levels.begin(), levels.end(), v - 1e-12);
  if (it == levels.end() || std::abs(*it - v) > 1e-12) throw std::invalid_argument(std::string(what) + " is not a lattice level");
  return static_cast<std::size_t>(it - levels.begin());
}

}  // namespace detail

inline SheetSample sample_sheet(std::vector<double> s_levels, std::vector<double> x_levels, RandomStream& rng) {
  for (double x : x_levels)
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("sample_sheet: x levels must lie in [0, 1]");
  for (double s : s_levels)
    if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("sample_sheet: s levels must be finite and nonnegative");
  SheetSample sheet;
  sheet.s_levels = detail::with_ends(std::move(s_levels), 0.0, std::nullopt);
  sheet.x_levels = detail::with_ends(std::move(x_levels), 0.0, 1.0);
  const std::size_t ns = sheet.s_levels.size(), nx = sheet.x_levels.size();
  sheet.cell_increments.assign((ns - 1) * (nx - 1), 0.0);
  sheet.cumulative.assign(ns * nx, 0.0);
  for (std::size_t i = 1; i < ns; ++i)
    for (std::size_t j = 1; j < nx; ++j) {
      const double area = (sheet.s_levels[i] - sheet.s_levels[i - 1]) * (sheet.x_levels[j] - sheet.x_levels[j - 1]);
      const double inc = std::sqrt(area) * rng.normal();
      sheet.cell_increments[(i - 1) * (nx - 1) + (j - 1)] = inc;
      sheet.cumulative[i * nx + j] =
          inc + sheet.cumulative[(i - 1) * nx + j] + sheet.cumulative[i * nx + j - 1] - sheet.cumulative[(i - 1) * nx + j - 1];
    }
  return sheet;
}

/// U(t,x) = W(t,x) - x W(t,1) at lattice levels.
inline double kiefer_eval(const SheetSample& sheet, double t_level, double x_level) {
  const std::size_t i = detail::level_index(sheet.s_levels, t_level, "kiefer_eval: t level");
  const std::size_t j = detail::level_index(sheet.x_levels, x_level, "kiefer_eval: x level");
  return sheet.w(i, j) - sheet.x_levels[j] * sheet.w(i, sheet.x_levels.size() - 1);
}

// ---------------------------------------------------------------------------
// Limit-path plan: deterministic mesh and coefficients shared by all paths

struct LimitPathOptions {
  std::size_t k = 200;    // uniform refinement of [0, t_max]
  bool workload = false;  // Wr, Wt, I, C (standard case, finite mean, y-grid reaching x_max)
  bool zero_noise = false;
};

/// Sorted time mesh with tolerant lookup.
class TimeMesh {
 public:
  void add(double s) {
    if (s < 0.0) s = 0.0;
    points_.push_back(s);
  }
  void finalize() {
    std::sort(points_.begin(), points_.end());
    std::vector<double> merged;
    for (double p : points_)
      if (merged.empty() || p - merged.back() > tol(p)) merged.push_back(p);
    points_ = std::move(merged);
  }
  std::size_t index(double s) const {
    if (s < 0.0) s = 0.0;
    auto it = std::lower_bound(points_.begin(), points_.end(), s - tol(s));
    if (it == points_.end() || std::abs(*it - s) > tol(s)) throw std::logic_error("time mesh: point is not a mesh point");
    return static_cast<std::size_t>(it - points_.begin());
  }
  bool contains(double s) const {
    auto it = std::lower_bound(points_.begin(), points_.end(), s - tol(s));
    return it != points_.end() && std::abs(*it - s) <= tol(s);
  }
  const std::vector<double>& points() const { return points_; }
  std::size_t slices() const { return points_.size() - 1; }
  double max_spacing() const {
    double h = 0.0;
    for (std::size_t j = 1; j < points_.size(); ++j) h = std::max(h, points_[j] - points_[j - 1]);
    return h;
  }

 private:
  static double tol(double s) { return 1e-11 * std::max(1.0, std::abs(s)); }
  std::vector<double> points_;
};

class LimitPathPlan {
 public:
  LimitPathPlan(LimitInputs inputs, Grid grid, LimitPathOptions options = {})
      : in_(std::move(inputs)), grid_(std::move(grid)), opt_(options) {
    grid_.validate();
    if (opt_.k < 1) throw std::invalid_argument("limit paths: refinement k must be >= 1");
    if (opt_.workload) check_workload();
    build_mesh();
    build_coefficients();
    build_splitting_factor();
    build_bridge_levels();
  }

  const LimitInputs& inputs() const { return in_; }
  const Grid& grid() const { return grid_; }
  const LimitPathOptions& options() const { return opt_; }
  const TimeMesh& mesh() const { return mesh_; }
  double grid_spacing() const { return mesh_.max_spacing(); }
  std::size_t atom_count() const { return in_.decomposition.atoms.size(); }
  const Eigen::MatrixXd& splitting_covariance() const { return cov_; }
  const std::vector<double>& levels_for(std::size_t slice) const { return levels_[slice]; }

  /// Exact variance of the discretized Qhat^r(t_i, y_j) this plan produces;
  /// compared across k and 2k as the refinement diagnostic.
  double discretized_var_qr(std::size_t i, std::size_t j) const {
    const Row& row = rows_r_.at(i * grid_.y.size() + j);
    const auto& d = in_.decomposition;
    const auto& s = mesh_.points();
    const double t = grid_.t[i], y = grid_.y[j];
    const std::size_t m = d.atoms.size();
    Eigen::VectorXd w(static_cast<Eigen::Index>(m + 1));
    double v = 0.0;
    for (std::size_t jj = row.first; jj < row.last; ++jj) {
      const std::size_t k = jj - row.first;
      const double da = dabar_[jj];
      v += in_.ca2 * row.full[k] * row.full[k] * da;
      w(0) = row.cont[k];
      for (std::size_t a = 0; a < m; ++a)
        w(static_cast<Eigen::Index>(a + 1)) =
            std::isfinite(y) && s[jj] >= atom_start_r(t, y, d.atoms[a].point) - 1e-12 ? 1.0 : 0.0;
      v += da * w.dot(cov_ * w);
      if (row.level[k] >= 0) {
        const double u = levels_[jj][static_cast<std::size_t>(row.level[k])];
        v += d.p_c * da * u * (1.0 - u);
      }
    }
    return v;
  }

 private:
  friend struct LimitPathSampler;

  // per grid point (t, y), a contiguous range of slices and their coefficients
  struct Row {
    std::size_t first = 0, last = 0;  // slices [first, last)
    std::vector<double> full;         // int_slice F^c(.) dabar / dabar_slice
    std::vector<double> cont;         // same with F_c^c
    std::vector<int> level;           // index into the slice's bridge levels, -1 if pinned
  };

  void check_workload() const {
    if (!in_.standard()) throw std::invalid_argument("limit paths: workload requires the standard case");
    const Moments m = in_.service.moments();
    if (!m.mean_finite()) throw std::domain_error("limit paths: workload requested with infinite-mean service");
    const double x_max = in_.service.tail_bound(1e-6);
    if (grid_.y.back() < x_max) {
      std::ostringstream os;
      os << "limit paths: workload needs the y-grid to reach x_max = " << x_max << " (F^c(x_max) < 1e-6)";
      throw std::invalid_argument(os.str());
    }
  }

  void build_mesh() {
    const double t_max = grid_.t.back();
    for (std::size_t i = 0; i <= opt_.k; ++i) mesh_.add(t_max * static_cast<double>(i) / static_cast<double>(opt_.k));
    for (double t : grid_.t) {
      mesh_.add(t);
      for (double y : grid_.y) {
        if (y < t) mesh_.add(t - y);
        for (const Atom& a : in_.decomposition.atoms) {
          mesh_.add(atom_start_r(t, y, a.point));
          mesh_.add(atom_start_e(t, y, a.point));
        }
      }
    }
    mesh_.finalize();
    const auto& s = mesh_.points();
    dabar_.resize(mesh_.slices());
    for (std::size_t j = 0; j < dabar_.size(); ++j) dabar_[j] = in_.abar(s[j + 1]) - in_.abar(s[j]);
  }

  static double atom_start_r(double t, double y, double x) { return std::max(0.0, t - std::max(0.0, x - y)); }
  static double atom_start_e(double t, double y, double x) { return std::max(0.0, t - std::min(x, std::min(y, t))); }

  /// int_{s_j}^{s_{j+1}} G(shift - s) dabar(s) / dabar_j, G = F^c or F_c^c.
  double slice_coefficient(bool continuous, double shift, std::size_t j) const {
    if (dabar_[j] <= 0.0 || !std::isfinite(shift)) return 0.0;
    const auto& s = mesh_.points();
    const auto& d = in_.decomposition;
    if (continuous && d.p_c == 0.0) return 0.0;
    if (in_.standard()) {
      auto lam = [&](double v) {
        if (!continuous) return in_.service.integrated_ccdf(v);
        return d.continuous->integrated_ccdf(v);
      };
      return (lam(shift - s[j]) - lam(shift - s[j + 1])) / (s[j + 1] - s[j]);
    }
    std::vector<double> breaks;
    for (double kk : in_.service.kinks()) breaks.push_back(shift - kk);
    const double v = integrate([&](double u) {
      const double c = continuous ? d.continuous_ccdf(shift - u) : in_.service.ccdf(shift - u);
      return c * in_.lambda(u);
    }, s[j], s[j + 1], breaks);
    return v / dabar_[j];
  }

  Row make_row(double t, double lower, double shift) const {
    Row r;
    r.first = mesh_.index(lower);
    r.last = mesh_.index(t);
    for (std::size_t j = r.first; j < r.last; ++j) {
      r.full.push_back(slice_coefficient(false, shift, j));
      r.cont.push_back(slice_coefficient(true, shift, j));
    }
    return r;
  }

  void build_coefficients() {
    for (double t : grid_.t)
      for (double y : grid_.y) {
        rows_r_.push_back(make_row(t, 0.0, t + y));
        rows_e_.push_back(make_row(t, y < t ? t - y : 0.0, t));
      }
  }

  void build_splitting_factor() {
    const auto& d = in_.decomposition;
    const std::size_t m = d.atoms.size();
    cov_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m + 1), static_cast<Eigen::Index>(m + 1));
    cov_(0, 0) = d.p_c * (1.0 - d.p_c);
    for (std::size_t i = 0; i < m; ++i) {
      const double pi = d.p_d * d.atoms[i].mass;
      const auto ii = static_cast<Eigen::Index>(i + 1);
      cov_(ii, ii) = pi * (1.0 - pi);
      cov_(0, ii) = cov_(ii, 0) = -d.p_c * pi;
      for (std::size_t j = i + 1; j < m; ++j) {
        const auto jj = static_cast<Eigen::Index>(j + 1);
        cov_(ii, jj) = cov_(jj, ii) = -pi * d.p_d * d.atoms[j].mass;
      }
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov_);
    const Eigen::VectorXd diag = ldlt.vectorD();
    const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
    if (ldlt.info() != Eigen::Success || diag.minCoeff() < -1e-12 * scale) {
      std::ostringstream os;
      os << "limit paths: splitting covariance matrix is not positive semidefinite (min pivot " << diag.minCoeff() << ")";
      throw std::domain_error(os.str());
    }
    const Eigen::VectorXd root = diag.cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd lower = ldlt.matrixL();
    Eigen::MatrixXd factor = lower * root.asDiagonal();
    factor_ = ldlt.transpositionsP().transpose() * factor;
    const double err = (factor_ * factor_.transpose() - cov_).cwiseAbs().maxCoeff();
    if (err > 1e-10 * scale) {
      std::ostringstream os;
      os << "limit paths: splitting covariance factorization residual " << err;
      throw std::domain_error(os.str());
    }
  }

  void build_bridge_levels() {
    const auto& d = in_.decomposition;
    const auto& s = mesh_.points();
    levels_.assign(mesh_.slices(), {});
    if (d.p_c == 0.0) {
      for (auto* rows : {&rows_r_, &rows_e_})
        for (Row& row : *rows) row.level.assign(row.last - row.first, -1);
      return;
    }
    auto level_of = [&](double shift, std::size_t j) { return d.continuous_cdf(shift - s[j + 1]); };
    auto collect = [&](const Row& row, double shift) {
      for (std::size_t j = row.first; j < row.last; ++j) {
        const double u = level_of(shift, j);
        if (u > 0.0 && u < 1.0) levels_[j].push_back(u);
      }
    };
    std::size_t g = 0;
    for (double t : grid_.t)
      for (double y : grid_.y) {
        collect(rows_r_[g], t + y);
        collect(rows_e_[g], t);
        ++g;
      }
    for (auto& lv : levels_) {
      std::sort(lv.begin(), lv.end());
      lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
    }
    auto assign = [&](Row& row, double shift) {
      for (std::size_t j = row.first; j < row.last; ++j) {
        const double u = level_of(shift, j);
        if (u > 0.0 && u < 1.0) {
          const auto it = std::lower_bound(levels_[j].begin(), levels_[j].end(), u);
          row.level.push_back(static_cast<int>(it - levels_[j].begin()));
        } else {
          row.level.push_back(-1);
        }
      }
    };
    g = 0;
    for (double t : grid_.t)
      for (double y : grid_.y) {
        assign(rows_r_[g], t + y);
        assign(rows_e_[g], t);
        ++g;
      }
  }

  LimitInputs in_;
  Grid grid_;
  LimitPathOptions opt_;
  TimeMesh mesh_;
  std::vector<double> dabar_;
  std::vector<Row> rows_r_, rows_e_;
  std::vector<std::vector<double>> levels_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd factor_;
};

// ---------------------------------------------------------------------------
// Path samples

/// Raw noise of one path, kept for the Markov decomposition check.
struct PathNoise {
  std::vector<double> arrival;                 // Ahat increments per slice
  std::vector<std::vector<double>> splitting;  // (S^c, S^d_1..m) increments per slice
  std::vector<std::vector<double>> bridge;     // scaled Kiefer slice values at the plan's levels
  std::vector<double> ahat_cum;                // Ahat at mesh points
  std::vector<std::vector<double>> split_cum;  // splitting BM at mesh points
};

struct LimitPathBundle {
  Grid grid;
  TwoParamField x1, x2, x3, qr;     // r-versions
  TwoParamField x1e, x2e, x3e, qe;  // e-versions (y >= t reads as y = t)
  TwoParamField qt, d;              // constant in y
  std::vector<double> ahat;         // Ahat(t) on grid t
  std::optional<TwoParamField> wr, wt, input, completed;
  std::optional<std::vector<double>> qir;  // Qhat^{i,r}(y) on grid y
  std::optional<TwoParamField> qtr;        // Qhat^{T,r}(t,y)
  PathNoise noise;
};

/// Independent noise sources of one path.
struct PathStreams {
  RandomStream arrival, sheet, splitting, work, bridge, initial;

  static PathStreams derive(std::uint64_t master_seed, std::string_view experiment, std::uint64_t n,
                            std::uint64_t path) {
    return {RandomStream(substream_id(master_seed, experiment, n, path, Component::arrival_noise)),
            RandomStream(substream_id(master_seed, experiment, n, path, Component::sheet)),
            RandomStream(substream_id(master_seed, experiment, n, path, Component::splitting)),
            RandomStream(substream_id(master_seed, experiment, n, path, Component::work_noise)),
            RandomStream(substream_id(master_seed, experiment, n, path, Component::bridge)),
            RandomStream(substream_id(master_seed, experiment, n, path, Component::initial_count))};
  }
  static PathStreams split_from(RandomStream& rng) {
    return {rng.split(), rng.split(), rng.split(), rng.split(), rng.split(), rng.split()};
  }
};

namespace detail {

/// Brownian bridge on [0,1] at sorted interior levels, sequentially.
inline std::vector<double> bridge_at(const std::vector<double>& levels, RandomStream& rng, double scale) {
  std::vector<double> out(levels.size());
  double u_prev = 0.0, b_prev = 0.0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double u = levels[i];
    const double rest = 1.0 - u_prev;
    const double mean = b_prev * (1.0 - u) / rest;
    const double var = (u - u_prev) * (1.0 - u) / rest;
    b_prev = mean + std::sqrt(std::max(0.0, var)) * rng.normal() * scale;
    out[i] = b_prev;
    u_prev = u;
  }
  return out;
}

}  // namespace detail

struct LimitPathSampler {
  const LimitPathPlan& plan;

  /// Draw the raw noise for one path.
  PathNoise sample_noise(PathStreams& streams) const {
    const double on = plan.opt_.zero_noise ? 0.0 : 1.0;
    const auto& in = plan.in_;
    const std::size_t slices = plan.mesh_.slices();
    const std::size_t m = plan.atom_count();
    PathNoise z;
    z.arrival.resize(slices);
    z.splitting.assign(slices, std::vector<double>(m + 1, 0.0));
    z.bridge.resize(slices);
    z.ahat_cum.assign(slices + 1, 0.0);
    z.split_cum.assign(slices + 1, std::vector<double>(m + 1, 0.0));
    Eigen::VectorXd normals(static_cast<Eigen::Index>(m + 1));
    const double pc = in.decomposition.p_c;
    for (std::size_t j = 0; j < slices; ++j) {
      const double da = plan.dabar_[j];
      z.arrival[j] = on * std::sqrt(in.ca2 * da) * streams.arrival.normal();
      z.ahat_cum[j + 1] = z.ahat_cum[j] + z.arrival[j];

      for (Eigen::Index r = 0; r < normals.size(); ++r) normals(r) = streams.splitting.normal();
      const Eigen::VectorXd inc = plan.factor_ * normals * (on * std::sqrt(da));
      for (std::size_t r = 0; r <= m; ++r) {
        z.splitting[j][r] = inc(static_cast<Eigen::Index>(r));
        z.split_cum[j + 1][r] = z.split_cum[j][r] + z.splitting[j][r];
      }
      z.bridge[j] = detail::bridge_at(plan.levels_[j], streams.sheet, on * std::sqrt(pc * da));
    }
    return z;
  }

  double x1(const LimitPathPlan::Row& row, const PathNoise& z) const {
    double v = 0.0;
    for (std::size_t j = row.first; j < row.last; ++j) v += row.full[j - row.first] * z.arrival[j];
    return v;
  }

  double x2(const LimitPathPlan::Row& row, const PathNoise& z) const {
    double v = 0.0;
    for (std::size_t j = row.first; j < row.last; ++j) {
      const int l = row.level[j - row.first];
      if (l >= 0) v -= z.bridge[j][static_cast<std::size_t>(l)];
    }
    return v;
  }

  double x3_continuous(const LimitPathPlan::Row& row, const PathNoise& z) const {
    double v = 0.0;
    for (std::size_t j = row.first; j < row.last; ++j) v += row.cont[j - row.first] * z.splitting[j][0];
    return v;
  }

  double split_at(const PathNoise& z, std::size_t component, double s) const {
    return z.split_cum[plan.mesh_.index(s)][component];
  }

  LimitPathBundle assemble(PathStreams& streams) const {
    const auto& grid = plan.grid_;
    const auto& in = plan.in_;
    const auto& atoms = in.decomposition.atoms;
    LimitPathBundle b;
    b.grid = grid;
    b.noise = sample_noise(streams);
    const PathNoise& z = b.noise;
    b.x1 = TwoParamField("X1", grid);
    b.x2 = TwoParamField("X2", grid);
    b.x3 = TwoParamField("X3", grid);
    b.qr = TwoParamField("Qr_hat", grid);
    b.x1e = TwoParamField("X1e", grid);
    b.x2e = TwoParamField("X2e", grid);
    b.x3e = TwoParamField("X3e", grid);
    b.qe = TwoParamField("Qe_hat", grid);
    b.qt = TwoParamField("Qt_hat", grid);
    b.d = TwoParamField("D_hat", grid);

    std::size_t g = 0;
    for (std::size_t i = 0; i < grid.t.size(); ++i) {
      const double t = grid.t[i];
      const std::size_t ti = plan.mesh_.index(t);
      b.ahat.push_back(z.ahat_cum[ti]);
      for (std::size_t j = 0; j < grid.y.size(); ++j, ++g) {
        const double y = grid.y[j];
        const auto& rr = plan.rows_r_[g];
        const auto& re = plan.rows_e_[g];
        double x3 = x3_continuous(rr, z);
        double x3e = x3_continuous(re, z);
        for (std::size_t a = 0; a < atoms.size(); ++a) {
          if (std::isfinite(y)) x3 += z.split_cum[ti][a + 1] - split_at(z, a + 1, LimitPathPlan::atom_start_r(t, y, atoms[a].point));
          x3e += z.split_cum[ti][a + 1] - split_at(z, a + 1, LimitPathPlan::atom_start_e(t, y, atoms[a].point));
        }
        b.x1.at(i, j) = x1(rr, z);
        b.x2.at(i, j) = x2(rr, z);
        b.x3.at(i, j) = x3;
        b.qr.at(i, j) = b.x1.at(i, j) + b.x2.at(i, j) + b.x3.at(i, j);
        b.x1e.at(i, j) = x1(re, z);
        b.x2e.at(i, j) = x2(re, z);
        b.x3e.at(i, j) = x3e;
        b.qe.at(i, j) = b.x1e.at(i, j) + b.x2e.at(i, j) + b.x3e.at(i, j);
      }
    }
    for (std::size_t i = 0; i < grid.t.size(); ++i) {
      // Qhat^t(t) = Qhat^r(t, 0) needs y = 0 on the grid; otherwise use the e-form at y = t
      const auto j0 = grid.y_index(0.0);
      const double qt = j0 ? b.qr.at(i, *j0) : b.qe.at(i, grid.y.size() - 1);
      for (std::size_t j = 0; j < grid.y.size(); ++j) {
        b.qt.at(i, j) = qt;
        b.d.at(i, j) = b.ahat[i] - qt;
      }
    }
    if (plan.opt_.workload) add_workload(b, streams);
    if (in.init) add_initial(b, streams);
    return b;
  }

  void add_workload(LimitPathBundle& b, PathStreams& streams) const {
    const auto& grid = plan.grid_;
    const auto& in = plan.in_;
    const double on = plan.opt_.zero_noise ? 0.0 : 1.0;
    const Moments m = in.service.moments();
    b.wr = TwoParamField("Wr_hat", grid);
    b.wt = TwoParamField("Wt_hat", grid);
    b.input = TwoParamField("I_hat", grid);
    b.completed = TwoParamField("C_hat", grid);
    const double lam = in.lambda(0.0);
    const double cs2 = m.second_moment_finite() ? m.scv : std::numeric_limits<double>::quiet_NaN();
    double bs = 0.0, t_prev = 0.0;
    for (std::size_t i = 0; i < grid.t.size(); ++i) {
      // Wr(t,y) = int_y^{y_max} Qhat^r(t,x) dx, trapezoid on the y-grid
      const std::size_t ny = grid.y.size();
      std::vector<double> tail(ny, 0.0);
      for (std::size_t j = ny - 1; j-- > 0;) {
        const double hi = std::isfinite(grid.y[j + 1]) ? grid.y[j + 1] : grid.y[j];
        tail[j] = tail[j + 1] + 0.5 * (hi - grid.y[j]) * (b.qr.at(i, j) + b.qr.at(i, j + 1));
      }
      bs += on * std::sqrt(grid.t[i] - t_prev) * streams.work.normal();
      t_prev = grid.t[i];
      const double wt = tail[0] + (grid.y[0] > 0.0 ? 0.5 * grid.y[0] * (b.qr.at(i, 0) + b.qt.at(i, 0)) : 0.0);
      const double ihat = std::sqrt(lam * cs2) * bs + m.mean * b.ahat[i];
      for (std::size_t j = 0; j < ny; ++j) {
        b.wr->at(i, j) = tail[j];
        b.wt->at(i, j) = wt;
        b.input->at(i, j) = ihat;
        b.completed->at(i, j) = ihat - wt;
      }
    }
  }

  void add_initial(LimitPathBundle& b, PathStreams& streams) const {
    const auto& grid = plan.grid_;
    const auto& init = *plan.in_.init;
    const double on = plan.opt_.zero_noise ? 0.0 : 1.0;
    const double qit = on * std::sqrt(init.variance) * streams.initial.normal();
    std::vector<double> levels;
    auto level = [&](double v) { return std::isfinite(v) ? init.residual.cdf(v) : 1.0; };
    for (double y : grid.y) levels.push_back(level(y));
    for (double t : grid.t)
      for (double y : grid.y) levels.push_back(level(t + y));
    std::vector<double> interior;
    for (double u : levels)
      if (u > 0.0 && u < 1.0) interior.push_back(u);
    std::sort(interior.begin(), interior.end());
    interior.erase(std::unique(interior.begin(), interior.end()), interior.end());
    const std::vector<double> bridge = detail::bridge_at(interior, streams.bridge, on * std::sqrt(init.density));
    auto b0 = [&](double u) {
      if (!(u > 0.0 && u < 1.0)) return 0.0;
      return bridge[static_cast<std::size_t>(std::lower_bound(interior.begin(), interior.end(), u) - interior.begin())];
    };
    auto qir = [&](double v) {
      const double u = level(v);
      return (1.0 - u) * qit + b0(u);
    };
    b.qir.emplace();
    for (double y : grid.y) b.qir->push_back(qir(y));
    b.qtr = TwoParamField("QTr_hat", grid);
    for (std::size_t i = 0; i < grid.t.size(); ++i)
      for (std::size_t j = 0; j < grid.y.size(); ++j) b.qtr->at(i, j) = qir(grid.t[i] + grid.y[j]) + b.qr.at(i, j);
  }
};

inline LimitPathBundle assemble_limit_bundle(const LimitPathPlan& plan, PathStreams& streams) {
  return LimitPathSampler{plan}.assemble(streams);
}

inline LimitPathBundle assemble_limit_bundle(const LimitPathPlan& plan, RandomStream& rng) {
  PathStreams streams = PathStreams::split_from(rng);
  return assemble_limit_bundle(plan, streams);
}

/// Xhat_1 alone (r and e versions): arrival noise only.
inline std::pair<TwoParamField, TwoParamField> sample_x1(const LimitPathPlan& plan, RandomStream& rng) {
  PathStreams streams = PathStreams::split_from(rng);
  LimitPathBundle b = assemble_limit_bundle(plan, streams);
  return {b.x1, b.x1e};
}

/// Xhat_2 alone: Kiefer slices on the k-refined mesh.
inline std::pair<TwoParamField, TwoParamField> sample_x2(const LimitPathPlan& plan, RandomStream& rng) {
  if (plan.inputs().decomposition.p_c == 0.0)
    throw std::invalid_argument("sample_x2: service law has no continuous part; Xhat_2 is not defined for atoms");
  PathStreams streams = PathStreams::split_from(rng);
  LimitPathBundle b = assemble_limit_bundle(plan, streams);
  return {b.x2, b.x2e};
}

/// Xhat_3 alone: splitting Brownian motions.
inline std::pair<TwoParamField, TwoParamField> sample_x3(const LimitPathPlan& plan, RandomStream& rng) {
  PathStreams streams = PathStreams::split_from(rng);
  LimitPathBundle b = assemble_limit_bundle(plan, streams);
  return {b.x3, b.x3e};
}

struct MarkovCheck {
  double residual;
  double z1, z2, zd;   // Z^{c,r}_1, Z^{c,r}_2, Z^{d,r}
  double earlier;      // Qhat^r(t1, y + t2 - t1)
  double later;        // Qhat^r(t2, y)
  double z() const { return z1 + z2 + zd; }
};

/// Qhat^r(t2,y) = Qhat^r(t1, y+t2-t1) + Z^r with Z built from the noise on (t1, t2]:
///   Z^{c,r}_1 = int_{t1}^{t2} F_c^c(t2+y-s) d(p_c Ahat + S^c(abar))(s)
///   Z^{c,r}_2 = -sum over Kiefer slices in (t1, t2] at level F_c(t2+y-s)
///   Z^{d,r}   = sum_i [Ahat^d_i(t2) - Ahat^d_i(max(t1, t2 - (x_i - y)^+))]
inline MarkovCheck markov_decomposition_check(const LimitPathPlan& plan, const LimitPathBundle& bundle, double t1,
                                              double t2, double y) {
  const Grid& grid = plan.grid();
  if (!(t1 <= t2)) throw std::invalid_argument("markov check: need t1 <= t2");
  const auto i1 = grid.t_index(t1), i2 = grid.t_index(t2);
  const auto jy = grid.y_index(y), js = grid.y_index(y + (t2 - t1));
  if (!i1 || !i2) throw std::invalid_argument("markov check: t1 and t2 must be grid points");
  if (!jy || !js) throw std::invalid_argument("markov check: y and y + t2 - t1 must be grid points (no interpolation)");
  const double later = bundle.qr.at(*i2, *jy);
  const double earlier = bundle.qr.at(*i1, *js);
  if (t1 == t2) return {std::abs(later - earlier), 0.0, 0.0, 0.0, earlier, later};

  const auto& in = plan.inputs();
  const auto& d = in.decomposition;
  const auto& s = plan.mesh().points();
  const PathNoise& z = bundle.noise;
  const std::size_t a = plan.mesh().index(t1), b = plan.mesh().index(t2);
  const double shift = t2 + y;

  double z1 = 0.0, z2 = 0.0, zd = 0.0;
  if (d.p_c > 0.0) {
    for (std::size_t j = a; j < b; ++j) {
      double coef;
      const double da = in.abar(s[j + 1]) - in.abar(s[j]);
      if (da <= 0.0) continue;
      if (in.standard()) {
        coef = (d.continuous->integrated_ccdf(shift - s[j]) - d.continuous->integrated_ccdf(shift - s[j + 1])) /
               (s[j + 1] - s[j]);
      } else {
        coef = integrate([&](double u) { return d.continuous_ccdf(shift - u) * in.lambda(u); }, s[j], s[j + 1]) / da;
      }
      z1 += coef * (d.p_c * z.arrival[j] + z.splitting[j][0]);
      const double u = d.continuous_cdf(shift - s[j + 1]);
      if (u > 0.0 && u < 1.0) {
        const auto& lv = plan.levels_for(j);
        const auto it = std::lower_bound(lv.begin(), lv.end(), u);
        if (it == lv.end() || *it != u) throw std::logic_error("markov check: Kiefer level missing from plan");
        z2 -= z.bridge[j][static_cast<std::size_t>(it - lv.begin())];
      }
    }
  }
  for (std::size_t i = 0; i < d.atoms.size(); ++i) {
    const double w = d.p_d * d.atoms[i].mass;
    const double from = std::max(t1, t2 - std::max(0.0, d.atoms[i].point - y));
    const std::size_t f = plan.mesh().index(from);
    zd += w * (z.ahat_cum[b] - z.ahat_cum[f]) + (z.split_cum[b][i + 1] - z.split_cum[f][i + 1]);
  }
  return {std::abs(later - earlier - (z1 + z2 + zd)), z1, z2, zd, earlier, later};
}

}  // namespace hqinf
