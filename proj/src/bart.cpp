#include "stratify/bart.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numeric>
#include <string>

#include "stratify/rng.hpp"

namespace stratify {

void TreeEnsembleConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("stage 1: " + what); };
  if (trees == 0) fail("number of trees must be positive");
  if (!(base > 0.0 && base < 1.0)) fail("split prior base must lie in (0, 1)");
  if (!(power >= 0.0)) fail("split prior power must be non-negative");
  if (!(k > 0.0)) fail("leaf shrinkage k must be positive");
  if (!(sigma_dof > 0.0)) fail("sigma prior degrees of freedom must be positive");
  if (!(sigma_quantile > 0.0 && sigma_quantile < 1.0)) fail("sigma prior quantile must lie in (0, 1)");
  if (iterations == 0) fail("iterations must be positive");
  if (burnin >= iterations) fail("burn-in must be smaller than the number of iterations");
  if (max_cutpoints == 0 || max_cutpoints > 60000) fail("cutpoint count must lie in 1..60000");
  if (min_leaf_size == 0) fail("minimum leaf size must be positive");
  if (!(p_grow > 0.0 && p_prune > 0.0 && p_change >= 0.0)) fail("move probabilities must be positive");
}

RowMatrix design_matrix(const Dataset& ds, std::optional<int> forced_arm) {
  const std::size_t n = ds.size();
  std::size_t cols = ds.p1();
  for (int kj : ds.categories) cols += kj == 2 ? 1 : static_cast<std::size_t>(kj);
  const std::size_t cov_cols = cols;
  cols += ds.arms > 0 ? ds.arms - 1 : 0;
  RowMatrix x = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    Eigen::Index c = 0;
    for (std::size_t j = 0; j < ds.p1(); ++j) x(r, c++) = ds.continuous(r, static_cast<Eigen::Index>(j));
    for (std::size_t j = 0; j < ds.p2(); ++j) {
      const int code = ds.discrete(r, static_cast<Eigen::Index>(j));
      const int kj = ds.categories[j];
      if (kj == 2) {
        x(r, c++) = code == 2 ? 1.0 : 0.0;
      } else {
        x(r, c + code - 1) = 1.0;
        c += kj;
      }
    }
    const int arm = forced_arm ? *forced_arm : ds.treatment[i];
    if (arm >= 2) x(r, static_cast<Eigen::Index>(cov_cols) + arm - 2) = 1.0;
  }
  return x;
}

double DecisionTree::predict(std::span<const double> row) const {
  std::size_t node = 0;
  while (!nodes[node].is_leaf()) {
    const TreeNode& nd = nodes[node];
    node = static_cast<std::size_t>(row[static_cast<std::size_t>(nd.var)] <= nd.cut ? nd.left : nd.right);
  }
  return nodes[node].value;
}

std::size_t DecisionTree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

double TreeEnsembleState::predict(std::span<const double> row) const {
  double total = 0.0;
  for (const auto& t : trees) total += t.predict(row);
  return offset + scale * total;
}

namespace {

struct Node {
  int parent = -1;
  int left = -1;
  int right = -1;
  int var = -1;
  int cut = -1;  // cut index; rows with bin <= cut go left
  int depth = 0;
  double mu = 0.0;
  double acc = 0.0;  // sum of mu over retained draws since the last flush
  bool alive = true;

  bool leaf() const { return left < 0; }
};

struct Tree {
  std::vector<Node> nodes;
  std::vector<int> free_slots;
  std::vector<int> leaf_obs;
  std::vector<int> leaf_aug;
  bool dirty = false;

  int allocate(int parent, int depth) {
    Node nd;
    nd.parent = parent;
    nd.depth = depth;
    if (!free_slots.empty()) {
      const int id = free_slots.back();
      free_slots.pop_back();
      nodes[static_cast<std::size_t>(id)] = nd;
      return id;
    }
    nodes.push_back(nd);
    return static_cast<int>(nodes.size()) - 1;
  }
};

struct Probs {
  double grow = 0.0;
  double prune = 0.0;
  double change = 0.0;
};

}  // namespace

struct SumOfTreesSampler::Impl {
  TreeEnsembleConfig cfg;
  WarningSink warn;
  Rng rng;
  std::size_t n = 0;
  std::size_t arms = 0;
  std::size_t q = 0;
  std::vector<std::size_t> order;  // canonical position -> original row
  std::vector<std::string> arm_labels;

  std::vector<double> y;  // centred and range-scaled
  double offset = 0.0;
  double scale = 1.0;
  bool degenerate = false;

  std::vector<std::vector<double>> cuts;  // per design column
  std::vector<int> ncut;
  std::vector<std::uint16_t> obs_bins;  // [v * n + i]
  std::vector<std::uint16_t> aug_bins;  // [v * n * arms + i * arms + a]

  double sigma_mu = 0.0;
  double sigma2 = 1.0;  // internal scale
  double nu = 3.0;
  double lambda = 1.0;

  std::vector<Tree> trees;
  std::vector<double> fit;
  std::vector<double> resid;
  std::vector<double> out;  // flushed accumulator, n * arms
  std::size_t draws = 0;
  std::size_t iter = 0;

  // Scratch.
  std::vector<int> cnt;
  std::vector<double> sum;
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<int> avail;
  std::vector<int> leaves;
  std::vector<int> growable;
  std::vector<int> nogs;

  Impl(const Dataset& ds, const TreeEnsembleConfig& c, WarningSink w);

  std::size_t aug_rows() const { return n * arms; }
  int bin_obs(int v, std::size_t i) const { return obs_bins[static_cast<std::size_t>(v) * n + i]; }
  int bin_aug(int v, std::size_t r) const { return aug_bins[static_cast<std::size_t>(v) * aug_rows() + r]; }

  // Cut-index range available at `node` for every variable.
  void ranges(const Tree& t, int node) {
    for (std::size_t v = 0; v < q; ++v) {
      lo[v] = 0;
      hi[v] = ncut[v] - 1;
    }
    int child = node;
    int parent = t.nodes[static_cast<std::size_t>(node)].parent;
    while (parent >= 0) {
      const Node& p = t.nodes[static_cast<std::size_t>(parent)];
      const auto v = static_cast<std::size_t>(p.var);
      if (child == p.left) {
        hi[v] = std::min(hi[v], p.cut - 1);
      } else {
        lo[v] = std::max(lo[v], p.cut + 1);
      }
      child = parent;
      parent = p.parent;
    }
  }

  bool any_available() const {
    for (std::size_t v = 0; v < q; ++v)
      if (lo[v] <= hi[v]) return true;
    return false;
  }

  // Whether a child of a node with the current lo/hi, split on (v, c), can grow.
  bool child_growable(int v, int c, bool left) const {
    for (std::size_t w = 0; w < q; ++w) {
      int l = lo[w];
      int h = hi[w];
      if (static_cast<int>(w) == v) {
        if (left) h = c - 1;
        else l = c + 1;
      }
      if (l <= h) return true;
    }
    return false;
  }

  bool node_growable(const Tree& t, int node) {
    ranges(t, node);
    return any_available();
  }

  double split_prob(int depth, bool can_grow) const {
    return can_grow ? cfg.base * std::pow(1.0 + depth, -cfg.power) : 0.0;
  }

  double log_leaf(int count, double s) const {
    const double nt = count * sigma_mu * sigma_mu;
    return -0.5 * std::log(1.0 + nt / sigma2) + s * s * sigma_mu * sigma_mu / (2.0 * sigma2 * (sigma2 + nt));
  }

  Probs probs(bool can_grow, bool has_nog) const {
    Probs p;
    if (!has_nog) {
      p.grow = can_grow ? 1.0 : 0.0;
      return p;
    }
    const double g = can_grow ? cfg.p_grow : 0.0;
    const double total = g + cfg.p_prune + cfg.p_change;
    p.grow = g / total;
    p.prune = cfg.p_prune / total;
    p.change = cfg.p_change / total;
    return p;
  }

  bool is_nog(const Tree& t, int node) const {
    const Node& nd = t.nodes[static_cast<std::size_t>(node)];
    return !nd.leaf() && t.nodes[static_cast<std::size_t>(nd.left)].leaf() &&
           t.nodes[static_cast<std::size_t>(nd.right)].leaf();
  }

  void flush(Tree& t) {
    if (!t.dirty) return;
    for (std::size_t r = 0; r < aug_rows(); ++r) out[r] += t.nodes[static_cast<std::size_t>(t.leaf_aug[r])].acc;
    for (auto& nd : t.nodes) nd.acc = 0.0;
    t.dirty = false;
  }

  void classify(Tree& t) {
    leaves.clear();
    growable.clear();
    nogs.clear();
    for (std::size_t id = 0; id < t.nodes.size(); ++id) {
      const Node& nd = t.nodes[id];
      if (!nd.alive) continue;
      const int node = static_cast<int>(id);
      if (nd.leaf()) {
        leaves.push_back(node);
        if (node_growable(t, node)) growable.push_back(node);
      } else if (is_nog(t, node)) {
        nogs.push_back(node);
      }
    }
  }

  void pick_rule(int& v, int& c) {
    avail.clear();
    for (std::size_t w = 0; w < q; ++w)
      if (lo[w] <= hi[w]) avail.push_back(static_cast<int>(w));
    v = avail[rng.index(avail.size())];
    const auto vv = static_cast<std::size_t>(v);
    c = lo[vv] + static_cast<int>(rng.index(static_cast<std::size_t>(hi[vv] - lo[vv] + 1)));
  }

  void grow(Tree& t, const Probs& pr) {
    const int eta = growable[rng.index(growable.size())];
    ranges(t, eta);
    int v = 0;
    int c = 0;
    pick_rule(v, c);
    int nl = 0;
    int nr = 0;
    double sl = 0.0;
    double sr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (t.leaf_obs[i] != eta) continue;
      if (bin_obs(v, i) <= c) {
        ++nl;
        sl += resid[i];
      } else {
        ++nr;
        sr += resid[i];
      }
    }
    const auto min_leaf = static_cast<int>(cfg.min_leaf_size);
    if (nl < min_leaf || nr < min_leaf) return;

    const Node& en = t.nodes[static_cast<std::size_t>(eta)];
    const bool gl = child_growable(v, c, true);
    const bool gr = child_growable(v, c, false);
    const double pg_eta = split_prob(en.depth, true);
    const double pg_l = split_prob(en.depth + 1, gl);
    const double pg_r = split_prob(en.depth + 1, gr);

    bool parent_was_nog = false;
    if (en.parent >= 0) parent_was_nog = is_nog(t, en.parent);
    const std::size_t nog_after = nogs.size() - (parent_was_nog ? 1 : 0) + 1;
    const std::size_t grow_after = growable.size() - 1 + (gl ? 1 : 0) + (gr ? 1 : 0);
    const Probs after = probs(grow_after > 0, true);

    double log_ratio = std::log(after.prune / static_cast<double>(nog_after)) -
                       std::log(pr.grow / static_cast<double>(growable.size()));
    log_ratio += std::log(pg_eta) + std::log1p(-pg_l) + std::log1p(-pg_r) - std::log1p(-pg_eta);
    log_ratio += log_leaf(nl, sl) + log_leaf(nr, sr) - log_leaf(nl + nr, sl + sr);
    if (std::log(rng.uniform()) >= log_ratio) return;

    flush(t);
    const int depth = en.depth + 1;
    const int l = t.allocate(eta, depth);
    const int r = t.allocate(eta, depth);
    Node& e = t.nodes[static_cast<std::size_t>(eta)];
    e.left = l;
    e.right = r;
    e.var = v;
    e.cut = c;
    for (std::size_t i = 0; i < n; ++i)
      if (t.leaf_obs[i] == eta) t.leaf_obs[i] = bin_obs(v, i) <= c ? l : r;
    for (std::size_t row = 0; row < aug_rows(); ++row)
      if (t.leaf_aug[row] == eta) t.leaf_aug[row] = bin_aug(v, row) <= c ? l : r;
    cnt.resize(t.nodes.size());
    sum.resize(t.nodes.size());
    cnt[static_cast<std::size_t>(l)] = nl;
    sum[static_cast<std::size_t>(l)] = sl;
    cnt[static_cast<std::size_t>(r)] = nr;
    sum[static_cast<std::size_t>(r)] = sr;
  }

  void prune(Tree& t, const Probs& pr) {
    const int eta = nogs[rng.index(nogs.size())];
    const Node& en = t.nodes[static_cast<std::size_t>(eta)];
    const int l = en.left;
    const int r = en.right;
    const bool gl = node_growable(t, l);
    const bool gr = node_growable(t, r);
    const double pg_eta = split_prob(en.depth, true);
    const double pg_l = split_prob(en.depth + 1, gl);
    const double pg_r = split_prob(en.depth + 1, gr);
    const std::size_t grow_after = growable.size() - (gl ? 1 : 0) - (gr ? 1 : 0) + 1;
    const bool nog_after = en.parent >= 0;
    const Probs after = probs(true, nog_after);
    (void)grow_after;

    const auto li = static_cast<std::size_t>(l);
    const auto ri = static_cast<std::size_t>(r);
    double log_ratio = std::log(after.grow / static_cast<double>(grow_after)) -
                       std::log(pr.prune / static_cast<double>(nogs.size()));
    log_ratio += std::log1p(-pg_eta) - std::log(pg_eta) - std::log1p(-pg_l) - std::log1p(-pg_r);
    log_ratio += log_leaf(cnt[li] + cnt[ri], sum[li] + sum[ri]) - log_leaf(cnt[li], sum[li]) - log_leaf(cnt[ri], sum[ri]);
    if (std::log(rng.uniform()) >= log_ratio) return;

    flush(t);
    for (std::size_t i = 0; i < n; ++i)
      if (t.leaf_obs[i] == l || t.leaf_obs[i] == r) t.leaf_obs[i] = eta;
    for (std::size_t row = 0; row < aug_rows(); ++row)
      if (t.leaf_aug[row] == l || t.leaf_aug[row] == r) t.leaf_aug[row] = eta;
    const auto ei = static_cast<std::size_t>(eta);
    cnt[ei] = cnt[li] + cnt[ri];
    sum[ei] = sum[li] + sum[ri];
    Node& e = t.nodes[ei];
    e.left = e.right = e.var = e.cut = -1;
    t.nodes[li].alive = false;
    t.nodes[ri].alive = false;
    t.free_slots.push_back(l);
    t.free_slots.push_back(r);
  }

  void change(Tree& t, const Probs& pr) {
    const int eta = nogs[rng.index(nogs.size())];
    const Node& en = t.nodes[static_cast<std::size_t>(eta)];
    const int l = en.left;
    const int r = en.right;
    ranges(t, eta);
    const bool gl = child_growable(en.var, en.cut, true);
    const bool gr = child_growable(en.var, en.cut, false);
    int v = 0;
    int c = 0;
    pick_rule(v, c);
    const bool gl2 = child_growable(v, c, true);
    const bool gr2 = child_growable(v, c, false);

    int nl = 0;
    int nr = 0;
    double sl = 0.0;
    double sr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (t.leaf_obs[i] != l && t.leaf_obs[i] != r) continue;
      if (bin_obs(v, i) <= c) {
        ++nl;
        sl += resid[i];
      } else {
        ++nr;
        sr += resid[i];
      }
    }
    const auto min_leaf = static_cast<int>(cfg.min_leaf_size);
    if (nl < min_leaf || nr < min_leaf) return;

    const std::size_t grow_after = growable.size() - (gl ? 1 : 0) - (gr ? 1 : 0) + (gl2 ? 1 : 0) + (gr2 ? 1 : 0);
    const Probs after = probs(grow_after > 0, true);
    const int d = en.depth + 1;
    const auto li = static_cast<std::size_t>(l);
    const auto ri = static_cast<std::size_t>(r);
    double log_ratio = std::log(after.change) - std::log(pr.change);
    log_ratio += std::log1p(-split_prob(d, gl2)) + std::log1p(-split_prob(d, gr2)) - std::log1p(-split_prob(d, gl)) -
                 std::log1p(-split_prob(d, gr));
    log_ratio += log_leaf(nl, sl) + log_leaf(nr, sr) - log_leaf(cnt[li], sum[li]) - log_leaf(cnt[ri], sum[ri]);
    if (std::log(rng.uniform()) >= log_ratio) return;

    flush(t);
    Node& e = t.nodes[static_cast<std::size_t>(eta)];
    e.var = v;
    e.cut = c;
    for (std::size_t i = 0; i < n; ++i)
      if (t.leaf_obs[i] == l || t.leaf_obs[i] == r) t.leaf_obs[i] = bin_obs(v, i) <= c ? l : r;
    for (std::size_t row = 0; row < aug_rows(); ++row)
      if (t.leaf_aug[row] == l || t.leaf_aug[row] == r) t.leaf_aug[row] = bin_aug(v, row) <= c ? l : r;
    cnt[li] = nl;
    sum[li] = sl;
    cnt[ri] = nr;
    sum[ri] = sr;
  }

  void update_tree(Tree& t) {
    for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - fit[i] + t.nodes[static_cast<std::size_t>(t.leaf_obs[i])].mu;
    cnt.assign(t.nodes.size(), 0);
    sum.assign(t.nodes.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto leaf = static_cast<std::size_t>(t.leaf_obs[i]);
      ++cnt[leaf];
      sum[leaf] += resid[i];
    }

    classify(t);
    const Probs pr = probs(!growable.empty(), !nogs.empty());
    const double u = rng.uniform();
    if (u < pr.grow) {
      grow(t, pr);
    } else if (u < pr.grow + pr.prune) {
      prune(t, pr);
    } else if (u < pr.grow + pr.prune + pr.change) {
      change(t, pr);
    }

    const double prior_prec = 1.0 / (sigma_mu * sigma_mu);
    for (std::size_t id = 0; id < t.nodes.size(); ++id) {
      Node& nd = t.nodes[id];
      if (!nd.alive || !nd.leaf()) continue;
      const double prec = cnt[id] / sigma2 + prior_prec;
      const double mean = sum[id] / sigma2 / prec;
      nd.mu = mean + rng.normal() / std::sqrt(prec);
    }
    for (std::size_t i = 0; i < n; ++i) fit[i] = y[i] - resid[i] + t.nodes[static_cast<std::size_t>(t.leaf_obs[i])].mu;
  }

  void step() {
    ++iter;
    if (degenerate) return;
    for (auto& t : trees) update_tree(t);
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = y[i] - fit[i];
      sse += e * e;
    }
    sigma2 = 1.0 / rng.gamma(0.5 * (nu + static_cast<double>(n)), 0.5 * (nu * lambda + sse));
  }
};

namespace {

std::vector<double> cutpoints(std::vector<double> values, std::size_t max_cuts) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> cuts;
  if (values.size() < 2) return cuts;
  if (values.size() - 1 <= max_cuts) {
    for (std::size_t i = 0; i + 1 < values.size(); ++i) cuts.push_back(0.5 * (values[i] + values[i + 1]));
  } else {
    const double lo = values.front();
    const double width = values.back() - lo;
    for (std::size_t k = 1; k <= max_cuts; ++k)
      cuts.push_back(lo + width * static_cast<double>(k) / static_cast<double>(max_cuts + 1));
  }
  return cuts;
}

std::uint16_t bin_of(const std::vector<double>& cuts, double x) {
  return static_cast<std::uint16_t>(std::lower_bound(cuts.begin(), cuts.end(), x) - cuts.begin());
}

}  // namespace

SumOfTreesSampler::Impl::Impl(const Dataset& ds, const TreeEnsembleConfig& c, WarningSink w)
    : cfg(c), warn(std::move(w)), rng(c.seed) {
  cfg.validate();
  ds.validate();
  n = ds.size();
  arms = ds.arms;
  if (n < 10) throw DataError("stage 1 needs at least 10 subjects, got " + std::to_string(n));
  for (std::size_t a = 1; a <= arms; ++a) arm_labels.push_back("arm_" + std::to_string(a));

  // Canonical row order: lexicographic on (treatment, outcome, covariates).
  order.resize(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (ds.treatment[a] != ds.treatment[b]) return ds.treatment[a] < ds.treatment[b];
    if (ds.outcome[a] != ds.outcome[b]) return ds.outcome[a] < ds.outcome[b];
    for (Eigen::Index j = 0; j < ds.continuous.cols(); ++j) {
      const double xa = ds.continuous(static_cast<Eigen::Index>(a), j);
      const double xb = ds.continuous(static_cast<Eigen::Index>(b), j);
      if (xa != xb) return xa < xb;
    }
    for (Eigen::Index j = 0; j < ds.discrete.cols(); ++j) {
      const int xa = ds.discrete(static_cast<Eigen::Index>(a), j);
      const int xb = ds.discrete(static_cast<Eigen::Index>(b), j);
      if (xa != xb) return xa < xb;
    }
    return false;
  });

  y.resize(n);
  double ymin = ds.outcome[order[0]];
  double ymax = ymin;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = ds.outcome[order[i]];
    ymin = std::min(ymin, y[i]);
    ymax = std::max(ymax, y[i]);
    total += y[i];
  }
  offset = total / static_cast<double>(n);
  if (!(ymax > ymin)) {
    degenerate = true;
    scale = 1.0;
    warn("stage 1: outcome has zero variance; using the constant model");
  } else {
    scale = ymax - ymin;
  }
  for (auto& v : y) v = (v - offset) / scale;

  const RowMatrix observed = design_matrix(ds);
  q = static_cast<std::size_t>(observed.cols());
  cuts.resize(q);
  ncut.resize(q);
  for (std::size_t v = 0; v < q; ++v) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = observed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(v));
    cuts[v] = cutpoints(std::move(col), cfg.max_cutpoints);
    ncut[v] = static_cast<int>(cuts[v].size());
  }
  obs_bins.resize(q * n);
  aug_bins.resize(q * n * arms);
  for (std::size_t v = 0; v < q; ++v)
    for (std::size_t i = 0; i < n; ++i)
      obs_bins[v * n + i] = bin_of(cuts[v], observed(static_cast<Eigen::Index>(order[i]), static_cast<Eigen::Index>(v)));
  for (std::size_t a = 0; a < arms; ++a) {
    const RowMatrix forced = design_matrix(ds, static_cast<int>(a + 1));
    for (std::size_t v = 0; v < q; ++v)
      for (std::size_t i = 0; i < n; ++i)
        aug_bins[v * n * arms + i * arms + a] =
            bin_of(cuts[v], forced(static_cast<Eigen::Index>(order[i]), static_cast<Eigen::Index>(v)));
  }

  sigma_mu = 0.5 / (cfg.k * std::sqrt(static_cast<double>(cfg.trees)));
  nu = cfg.sigma_dof;

  // Rough residual scale from least squares on the observed design.
  double sigma_hat = 0.0;
  if (!degenerate) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q + 1));
    Eigen::VectorXd yy(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      x(r, 0) = 1.0;
      for (std::size_t v = 0; v < q; ++v)
        x(r, static_cast<Eigen::Index>(v + 1)) = observed(static_cast<Eigen::Index>(order[i]), static_cast<Eigen::Index>(v));
      yy(r) = y[i];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    const auto rank = static_cast<std::size_t>(qr.rank());
    if (n > rank) {
      const Eigen::VectorXd res = yy - x * qr.solve(yy);
      sigma_hat = std::sqrt(res.squaredNorm() / static_cast<double>(n - rank));
    }
    if (!(sigma_hat > 1e-12)) {
      const double mean = yy.mean();
      sigma_hat = std::sqrt((yy.array() - mean).square().sum() / static_cast<double>(n - 1));
    }
  }
  if (degenerate) {
    sigma2 = 1e-12;
    lambda = 1e-12;
  } else {
    const boost::math::chi_squared dist(nu);
    const double qchi = boost::math::quantile(dist, 1.0 - cfg.sigma_quantile);
    lambda = sigma_hat * sigma_hat * qchi / nu;
    sigma2 = sigma_hat * sigma_hat;
  }

  trees.resize(cfg.trees);
  for (auto& t : trees) {
    t.allocate(-1, 0);
    t.leaf_obs.assign(n, 0);
    t.leaf_aug.assign(n * arms, 0);
  }
  fit.assign(n, 0.0);
  resid.assign(n, 0.0);
  out.assign(n * arms, 0.0);
  lo.resize(q);
  hi.resize(q);
}

SumOfTreesSampler::SumOfTreesSampler(const Dataset& ds, const TreeEnsembleConfig& cfg, WarningSink warn)
    : impl_(std::make_unique<Impl>(ds, cfg, std::move(warn))) {}
SumOfTreesSampler::~SumOfTreesSampler() = default;
SumOfTreesSampler::SumOfTreesSampler(SumOfTreesSampler&&) noexcept = default;
SumOfTreesSampler& SumOfTreesSampler::operator=(SumOfTreesSampler&&) noexcept = default;

void SumOfTreesSampler::step() { impl_->step(); }
std::size_t SumOfTreesSampler::iteration() const { return impl_->iter; }
bool SumOfTreesSampler::degenerate() const { return impl_->degenerate; }
std::size_t SumOfTreesSampler::accumulated_draws() const { return impl_->draws; }

TreeEnsembleState SumOfTreesSampler::snapshot() const {
  const Impl& s = *impl_;
  TreeEnsembleState state;
  state.offset = s.offset;
  state.scale = s.scale;
  state.sigma2 = s.sigma2 * s.scale * s.scale;
  state.trees.reserve(s.trees.size());
  for (const auto& t : s.trees) {
    DecisionTree out;
    // Breadth-first renumbering into a compact node array.
    std::vector<int> queue{0};
    std::vector<int> new_id(t.nodes.size(), -1);
    new_id[0] = 0;
    out.nodes.emplace_back();
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const Node& nd = t.nodes[static_cast<std::size_t>(queue[head])];
      TreeNode& dst = out.nodes[static_cast<std::size_t>(new_id[static_cast<std::size_t>(queue[head])])];
      if (nd.leaf()) {
        dst.value = nd.mu;
        continue;
      }
      dst.var = nd.var;
      dst.cut = s.cuts[static_cast<std::size_t>(nd.var)][static_cast<std::size_t>(nd.cut)];
      for (int child : {nd.left, nd.right}) {
        new_id[static_cast<std::size_t>(child)] = static_cast<int>(out.nodes.size());
        out.nodes.emplace_back();
        queue.push_back(child);
      }
      TreeNode& again = out.nodes[static_cast<std::size_t>(new_id[static_cast<std::size_t>(queue[head])])];
      again.left = new_id[static_cast<std::size_t>(nd.left)];
      again.right = new_id[static_cast<std::size_t>(nd.right)];
    }
    state.trees.push_back(std::move(out));
  }
  return state;
}

void SumOfTreesSampler::accumulate_potential_outcomes() {
  Impl& s = *impl_;
  ++s.draws;
  for (auto& t : s.trees) {
    for (auto& nd : t.nodes)
      if (nd.alive && nd.leaf()) nd.acc += nd.mu;
    t.dirty = true;
  }
}

PotentialOutcomeMatrix SumOfTreesSampler::potential_outcomes() const {
  const Impl& s = *impl_;
  if (s.draws == 0) throw ConfigError("stage 1: no retained draws to average");
  PotentialOutcomeMatrix result;
  result.arm_labels = s.arm_labels;
  result.values.resize(static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(s.arms));
  std::vector<double> total = s.out;
  for (const auto& t : s.trees) {
    if (!t.dirty) continue;
    for (std::size_t r = 0; r < total.size(); ++r) total[r] += t.nodes[static_cast<std::size_t>(t.leaf_aug[r])].acc;
  }
  const double inv = 1.0 / static_cast<double>(s.draws);
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t a = 0; a < s.arms; ++a)
      result.values(static_cast<Eigen::Index>(s.order[i]), static_cast<Eigen::Index>(a)) =
          s.offset + s.scale * total[i * s.arms + a] * inv;
  return result;
}

std::vector<TreeEnsembleState> fit_sum_of_trees(const Dataset& ds, const TreeEnsembleConfig& cfg, WarningSink warn) {
  SumOfTreesSampler sampler(ds, cfg, std::move(warn));
  std::vector<TreeEnsembleState> draws;
  draws.reserve(cfg.iterations - cfg.burnin);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    sampler.step();
    if (it >= cfg.burnin) draws.push_back(sampler.snapshot());
  }
  return draws;
}

namespace {

Eigen::VectorXd average_prediction(std::span<const TreeEnsembleState> draws, const RowMatrix& x) {
  if (draws.empty()) throw ConfigError("stage 1: no posterior draws to average");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.rows());
  for (const auto& d : draws)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      mean(i) += d.predict(std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())));
  return mean / static_cast<double>(draws.size());
}

}  // namespace

Eigen::VectorXd predict_in_sample(std::span<const TreeEnsembleState> draws, const Dataset& ds) {
  return average_prediction(draws, design_matrix(ds));
}

Eigen::VectorXd predict_arm(std::span<const TreeEnsembleState> draws, const Dataset& ds, int arm) {
  if (arm < 1 || static_cast<std::size_t>(arm) > ds.arms) throw ConfigError("arm " + std::to_string(arm) + " outside 1.." + std::to_string(ds.arms));
  return average_prediction(draws, design_matrix(ds, arm));
}

PotentialOutcomeMatrix impute_potential_outcomes(std::span<const TreeEnsembleState> draws, const Dataset& ds) {
  PotentialOutcomeMatrix result;
  result.values.resize(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(ds.arms));
  for (std::size_t a = 1; a <= ds.arms; ++a) {
    result.arm_labels.push_back("arm_" + std::to_string(a));
    result.values.col(static_cast<Eigen::Index>(a - 1)) = predict_arm(draws, ds, static_cast<int>(a));
  }
  return result;
}

PotentialOutcomeMatrix fit_and_impute(const Dataset& ds, const TreeEnsembleConfig& cfg, WarningSink warn) {
  SumOfTreesSampler sampler(ds, cfg, std::move(warn));
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    sampler.step();
    if (it >= cfg.burnin) sampler.accumulate_potential_outcomes();
  }
  return sampler.potential_outcomes();
}

}  // namespace stratify
