#include "vnelab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "vnelab/errors.hpp"
#include "vnelab/log.hpp"

namespace vnelab {

using ad::Matrix;
using ad::Tensor;

namespace {

void node_features(int n, const std::vector<double>& compute, const std::vector<LinkEnds>& links,
                   const std::vector<double>& bandwidth, double cscale, double bscale,
                   Matrix& out) {
  std::vector<int> deg(n, 0);
  std::vector<double> mx(n, 0.0), mn(n, 0.0), sum(n, 0.0);
  for (std::size_t l = 0; l < links.size(); ++l) {
    for (int end : {links[l].u, links[l].v}) {
      const double b = bandwidth[l];
      if (deg[end] == 0) {
        mx[end] = mn[end] = b;
      } else {
        mx[end] = std::max(mx[end], b);
        mn[end] = std::min(mn[end], b);
      }
      sum[end] += b;
      ++deg[end];
    }
  }
  const int max_deg = std::max(1, n ? *std::max_element(deg.begin(), deg.end()) : 1);
  out.resize(n, kNodeFeatures);
  for (int i = 0; i < n; ++i) {
    out(i, 0) = compute[i] / cscale;
    out(i, 1) = static_cast<double>(deg[i]) / max_deg;
    out(i, 2) = mx[i] / bscale;
    out(i, 3) = mn[i] / bscale;
    out(i, 4) = deg[i] ? sum[i] / deg[i] / bscale : 0.0;
  }
}

std::vector<std::pair<int, int>> non_adjacent_pairs(int n, const std::vector<LinkEnds>& links) {
  std::set<std::pair<int, int>> adj;
  for (const auto& l : links) adj.emplace(std::min(l.u, l.v), std::max(l.u, l.v));
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (!adj.count({i, j})) out.emplace_back(i, j);
  return out;
}

std::vector<std::pair<int, int>> sample_pairs(std::vector<std::pair<int, int>> pool,
                                              std::size_t want, Rng& rng) {
  const std::size_t take = std::min(want, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    const int j = rng.uniform_int(static_cast<int>(i), static_cast<int>(pool.size()) - 1);
    std::swap(pool[i], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(take);
  return pool;
}

}  // namespace

void HeteroGraph::refresh_features() {
  node_features(num_v, v_compute, v_links, v_bandwidth, compute_scale, bandwidth_scale, xv);
  node_features(num_p, p_compute, p_links, p_bandwidth, compute_scale, bandwidth_scale, xp);
  xvl.resize(static_cast<Eigen::Index>(v_links.size()), 1);
  for (std::size_t l = 0; l < v_links.size(); ++l)
    xvl(static_cast<Eigen::Index>(l), 0) = v_bandwidth[l] / bandwidth_scale;
  xpl.resize(static_cast<Eigen::Index>(p_links.size()), 1);
  for (std::size_t l = 0; l < p_links.size(); ++l)
    xpl(static_cast<Eigen::Index>(l), 0) = p_bandwidth[l] / bandwidth_scale;
}

HeteroGraph build_hetero_graph(const EnvState& state) {
  const VNEInstance& inst = *state.inst;
  HeteroGraph g;
  g.num_v = inst.vn.num_nodes();
  g.num_p = inst.pn.num_nodes();
  g.current = state.current_node();
  for (int i = 0; i < g.num_v; ++i) g.v_compute.push_back(inst.vn.node_demand(i));
  g.v_links = inst.vn.topology().links();
  for (int l = 0; l < inst.vn.num_links(); ++l) g.v_bandwidth.push_back(inst.vn.link_demand(l));
  g.p_compute = state.node_available;
  g.p_links = inst.pn.topology().links();
  g.p_bandwidth = state.link_available;
  for (int v = 0; v < g.num_v; ++v)
    if (state.partial.node_map[v] >= 0) g.mapped.emplace_back(v, state.partial.node_map[v]);
  if (g.current >= 0) {
    const auto mask = action_mask(state);
    for (int p = 0; p < g.num_p; ++p)
      if (mask[p]) g.decision.emplace_back(g.current, p);
  }
  const auto& cc = inst.pn.node_capacity();
  const auto& bc = inst.pn.link_capacity();
  const double cmax = cc.empty() ? 0.0 : *std::max_element(cc.begin(), cc.end());
  const double bmax = bc.empty() ? 0.0 : *std::max_element(bc.begin(), bc.end());
  g.compute_scale = cmax > 0.0 ? cmax : 1.0;
  g.bandwidth_scale = bmax > 0.0 ? bmax : 1.0;
  g.refresh_features();
  return g;
}

VNEInstance instance_from_graph(const HeteroGraph& g) {
  VNEInstance inst;
  for (int i = 0; i < g.num_v; ++i) inst.vn.add_node(g.v_compute[i]);
  for (std::size_t l = 0; l < g.v_links.size(); ++l)
    inst.vn.add_link(g.v_links[l].u, g.v_links[l].v, g.v_bandwidth[l]);
  for (int i = 0; i < g.num_p; ++i) inst.pn.add_node(g.p_compute[i]);
  for (std::size_t l = 0; l < g.p_links.size(); ++l)
    inst.pn.add_link(g.p_links[l].u, g.p_links[l].v, g.p_bandwidth[l]);
  return inst;
}

HeteroGraph augment_physical(const HeteroGraph& g, double eps, Rng& rng) {
  HeteroGraph out = g;
  const auto want = static_cast<std::size_t>(std::floor(eps * g.num_p));
  if (want == 0) return out;
  double min_demand = 0.0;
  if (!g.v_bandwidth.empty())
    min_demand = *std::min_element(g.v_bandwidth.begin(), g.v_bandwidth.end());
  const double bw = std::max(min_demand - 1.0, 0.0);
  const auto picked = sample_pairs(non_adjacent_pairs(g.num_p, g.p_links), want, rng);
  if (picked.size() < want)
    log::warn("physical augmentation saturated: added " + std::to_string(picked.size()) +
              " of " + std::to_string(want) + " links");
  for (const auto& [a, b] : picked) {
    out.p_links.push_back({a, b});
    out.p_bandwidth.push_back(bw);
  }
  out.refresh_features();
  return out;
}

HeteroGraph augment_virtual(const HeteroGraph& g, double eps, Rng& rng) {
  HeteroGraph out = g;
  const auto want = static_cast<std::size_t>(std::floor(eps * g.num_v));
  if (want == 0) return out;
  const auto picked = sample_pairs(non_adjacent_pairs(g.num_v, g.v_links), want, rng);
  if (picked.size() < want)
    log::warn("virtual augmentation saturated: added " + std::to_string(picked.size()) + " of " +
              std::to_string(want) + " links");
  for (const auto& [a, b] : picked) {
    out.v_links.push_back({a, b});
    out.v_bandwidth.push_back(0.0);
  }
  out.refresh_features();
  return out;
}

// ---- Configuration -------------------------------------------------------

std::string PolicyConfig::to_json() const {
  nlohmann::json j;
  j["format"] = 1;
  j["hidden"] = hidden;
  j["layers"] = layers;
  j["attention_slope"] = attention_slope;
  j["activation"] = activation == Activation::Relu ? "relu" : "tanh";
  j["seed"] = seed;
  j["node_features"] = kNodeFeatures;
  return j.dump(2);
}

PolicyConfig PolicyConfig::from_json(const std::string& text) {
  PolicyConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("node_features").get<int>() != kNodeFeatures)
      throw CheckpointError("sidecar node feature count differs from this build");
    c.hidden = j.at("hidden").get<int>();
    c.layers = j.at("layers").get<int>();
    c.attention_slope = j.at("attention_slope").get<double>();
    const auto act = j.at("activation").get<std::string>();
    if (act != "relu" && act != "tanh") throw CheckpointError("unknown activation " + act);
    c.activation = act == "relu" ? Activation::Relu : Activation::Tanh;
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad policy sidecar: ") + e.what());
  }
  return c;
}

// ---- Policy --------------------------------------------------------------

Tensor ParamBinder::operator()(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  Tensor t = tape_.param(params_, name);
  cache_.emplace(name, t);
  return t;
}

namespace {

const char* kRelations[] = {"vv", "pp", "map", "dec"};

}  // namespace

ConalPolicy::ConalPolicy(PolicyConfig config) : config_(config) { init_params(); }

ConalPolicy::ConalPolicy(PolicyConfig config, ad::ParameterSet params) : config_(config) {
  init_params();
  for (const auto& e : params_.entries()) {
    if (!params.contains(e.name)) throw CheckpointError("checkpoint lacks parameter " + e.name);
    const auto& o = params.entry(e.name).value;
    if (o.rows() != e.value.rows() || o.cols() != e.value.cols())
      throw CheckpointError("parameter " + e.name + " has a different shape");
  }
  if (params.size() != params_.size())
    throw CheckpointError("checkpoint holds parameters this architecture lacks");
  params_.copy_values_from(params);
}

void ConalPolicy::init_params() {
  if (config_.hidden < 1 || config_.layers < 1)
    throw InvariantViolation("policy needs hidden >= 1 and layers >= 1");
  Rng rng(config_.seed);
  const int d = config_.hidden;
  auto mlp_params = [&](const std::string& name, int in, int out) {
    params_.add(name + ".w1", in, d, rng);
    params_.add_zeros(name + ".b1", 1, d);
    params_.add(name + ".w2", d, out, rng);
    params_.add_zeros(name + ".b2", 1, out);
  };
  mlp_params("in_v", kNodeFeatures, d);
  mlp_params("in_p", kNodeFeatures, d);
  for (int k = 0; k < config_.layers; ++k) {
    for (const char* rel : kRelations) {
      const std::string base = "gat" + std::to_string(k) + "." + rel;
      params_.add(base + ".w", d, d, rng);
      params_.add(base + ".we", 1, d, rng);
      params_.add_zeros(base + ".be", 1, d);
      params_.add(base + ".a", d, 1, rng);
      params_.add_zeros(base + ".b", 1, d);
    }
  }
  mlp_params("actor", d, 1);
  mlp_params("critic", d, 1);
  mlp_params("reach", d, 1);
  mlp_params("lambda", d, 1);
}

Tensor ConalPolicy::act(const Tensor& x) const {
  return config_.activation == Activation::Relu ? ad::relu(x) : ad::tanh(x);
}

Tensor ConalPolicy::mlp(ParamBinder& p, const std::string& name, const Tensor& x) const {
  Tensor h = act(ad::add(ad::matmul(x, p(name + ".w1")), p(name + ".b1")));
  return ad::add(ad::matmul(h, p(name + ".w2")), p(name + ".b2"));
}

Tensor ConalPolicy::gat(ParamBinder& p, const std::string& name, const Tensor& h,
                        const std::vector<int>& src, const std::vector<int>& dst,
                        const Matrix& link_features) const {
  ad::Tape& tape = p.tape();
  const int n = h.rows();
  Tensor z = ad::matmul(h, p(name + ".w"));
  if (src.empty()) {
    return ad::add(tape.constant(Matrix::Zero(n, config_.hidden)), p(name + ".b"));
  }
  Tensor zl = ad::add(ad::matmul(tape.constant(link_features), p(name + ".we")), p(name + ".be"));
  Tensor zsrc = ad::gather_rows(z, src);
  Tensor pre = ad::add(ad::add(ad::gather_rows(z, dst), zsrc), zl);
  Tensor logits = ad::matmul(ad::leaky_relu(pre, config_.attention_slope), p(name + ".a"));
  Tensor alpha = ad::segment_softmax(logits, dst, n);
  Tensor msg = ad::mul(zsrc, alpha);
  return ad::add(ad::segment_sum(msg, dst, n), p(name + ".b"));
}

namespace {

struct EdgeSet {
  std::vector<int> src, dst;
  std::vector<double> feature;

  Matrix features() const {
    Matrix m(static_cast<Eigen::Index>(feature.size()), 1);
    for (std::size_t i = 0; i < feature.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = feature[i];
    return m;
  }
};

// Both directions of every link plus a zero-feature self-loop per node.
EdgeSet intra_edges(int n, const std::vector<LinkEnds>& links, const Matrix& xl) {
  EdgeSet e;
  for (std::size_t l = 0; l < links.size(); ++l) {
    const double f = xl(static_cast<Eigen::Index>(l), 0);
    e.src.push_back(links[l].u);
    e.dst.push_back(links[l].v);
    e.feature.push_back(f);
    e.src.push_back(links[l].v);
    e.dst.push_back(links[l].u);
    e.feature.push_back(f);
  }
  for (int i = 0; i < n; ++i) {
    e.src.push_back(i);
    e.dst.push_back(i);
    e.feature.push_back(0.0);
  }
  return e;
}

// Virtual node v is row v and physical node p is row num_v + p.
EdgeSet cross_edges(int num_v, const std::vector<std::pair<int, int>>& pairs) {
  EdgeSet e;
  for (const auto& [v, p] : pairs) {
    e.src.push_back(v);
    e.dst.push_back(num_v + p);
    e.feature.push_back(1.0);
    e.src.push_back(num_v + p);
    e.dst.push_back(v);
    e.feature.push_back(1.0);
  }
  return e;
}

std::vector<int> range(int start, int count) {
  std::vector<int> r(count);
  for (int i = 0; i < count; ++i) r[i] = start + i;
  return r;
}

}  // namespace

Encoding ConalPolicy::encode(ParamBinder& p, const HeteroGraph& g) const {
  if (g.xv.cols() != kNodeFeatures || g.xp.cols() != kNodeFeatures ||
      g.xv.rows() != g.num_v || g.xp.rows() != g.num_p)
    throw ShapeMismatch("encode: node features [" + std::to_string(g.xv.rows()) + "x" +
                        std::to_string(g.xv.cols()) + "] / [" + std::to_string(g.xp.rows()) +
                        "x" + std::to_string(g.xp.cols()) + "] vs " +
                        std::to_string(kNodeFeatures) + " features");
  ad::Tape& tape = p.tape();
  const Tensor hv0 = mlp(p, "in_v", tape.constant(g.xv));
  const Tensor hp0 = mlp(p, "in_p", tape.constant(g.xp));

  const EdgeSet vv = intra_edges(g.num_v, g.v_links, g.xvl);
  const EdgeSet pp = intra_edges(g.num_p, g.p_links, g.xpl);
  const EdgeSet mp = cross_edges(g.num_v, g.mapped);
  const EdgeSet dc = cross_edges(g.num_v, g.decision);
  const Matrix fvv = vv.features(), fpp = pp.features(), fmp = mp.features(),
               fdc = dc.features();
  const auto vrows = range(0, g.num_v);
  const auto prows = range(g.num_v, g.num_p);

  Tensor hv = hv0, hp = hp0;
  for (int k = 0; k < config_.layers; ++k) {
    const std::string base = "gat" + std::to_string(k) + ".";
    Tensor bar_v = gat(p, base + "vv", hv, vv.src, vv.dst, fvv);
    Tensor bar_p = gat(p, base + "pp", hp, pp.src, pp.dst, fpp);
    Tensor joint = ad::concat_rows({hv, hp});
    Tensor m = gat(p, base + "map", joint, mp.src, mp.dst, fmp);
    Tensor d = gat(p, base + "dec", joint, dc.src, dc.dst, fdc);
    Tensor zv = ad::add(ad::add(bar_v, ad::gather_rows(m, vrows)), ad::gather_rows(d, vrows));
    Tensor zp = ad::add(ad::add(bar_p, ad::gather_rows(m, prows)), ad::gather_rows(d, prows));
    if (k + 1 < config_.layers) {
      zv = act(zv);
      zp = act(zp);
    }
    hv = zv;
    hp = zp;
  }
  return {ad::add(hv, hv0), ad::add(hp, hp0)};
}

Tensor ConalPolicy::actor_log_probs(ParamBinder& p, const Encoding& enc,
                                    const std::vector<char>& mask) const {
  return ad::masked_log_softmax(mlp(p, "actor", enc.zp), mask);
}

Tensor ConalPolicy::pooled_head(ParamBinder& p, const std::string& name,
                                const Encoding& enc) const {
  return mlp(p, name, ad::sum_rows(enc.zp));
}

Tensor ConalPolicy::critic_value(ParamBinder& p, const Encoding& enc) const {
  return pooled_head(p, "critic", enc);
}

Tensor ConalPolicy::reach_value(ParamBinder& p, const Encoding& enc) const {
  return pooled_head(p, "reach", enc);
}

Tensor ConalPolicy::lambda_value(ParamBinder& p, const Encoding& enc) const {
  Tensor pooled = p.tape().constant(ad::sum_rows(enc.zp).value());
  return ad::softplus(mlp(p, "lambda", pooled));
}

std::vector<double> ConalPolicy::action_probs(const EnvState& state) {
  ad::Tape tape;
  ParamBinder binder(tape, params_);
  const HeteroGraph g = build_hetero_graph(state);
  const Encoding enc = encode(binder, g);
  const Tensor lp = actor_log_probs(binder, enc, action_mask(state));
  std::vector<double> probs(g.num_p);
  for (int i = 0; i < g.num_p; ++i) probs[i] = std::exp(lp.value()(i, 0));
  return probs;
}

void ConalPolicy::save(const std::string& prefix) const {
  params_.save(prefix + ".ckpt");
  std::ofstream out(prefix + ".json");
  if (!out) throw CheckpointError("cannot write " + prefix + ".json");
  out << config_.to_json() << '\n';
}

ConalPolicy ConalPolicy::load(const std::string& prefix) {
  std::ifstream in(prefix + ".json");
  if (!in) throw CheckpointError("cannot open " + prefix + ".json");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ConalPolicy(PolicyConfig::from_json(text), ad::ParameterSet::load(prefix + ".ckpt"));
}

// ---- Contrastive loss ----------------------------------------------------

Tensor barlow_twins_loss(const Tensor& za, const Tensor& zb, double w) {
  const Matrix& a = za.value();
  const Matrix& b = zb.value();
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("barlow_twins_loss: [" + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + "]");
  if (a.rows() < 2) throw ShapeMismatch("barlow_twins_loss needs at least 2 rows");
  ad::Tape& tape = *za.tape();

  auto centered_ss = [](const Matrix& m) {
    const Matrix c = m.rowwise() - m.colwise().mean();
    return Matrix(c.colwise().squaredNorm());
  };
  const Matrix ssa = centered_ss(a), ssb = centered_ss(b);
  std::vector<int> keep;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const double floor_a = 1e-20 * std::max(1.0, a.col(j).squaredNorm());
    const double floor_b = 1e-20 * std::max(1.0, b.col(j).squaredNorm());
    if (ssa(0, j) > floor_a && ssb(0, j) > floor_b) keep.push_back(static_cast<int>(j));
  }
  if (keep.size() < static_cast<std::size_t>(a.cols()))
    log::warn("contrastive loss dropped " + std::to_string(a.cols() - keep.size()) +
              " zero-variance columns");
  if (keep.empty()) return tape.constant(0.0);

  auto standardize = [&](const Tensor& z) {
    Tensor zs = keep.size() == static_cast<std::size_t>(z.cols())
                    ? z
                    : ad::transpose(ad::gather_rows(ad::transpose(z), keep));
    Tensor c = ad::sub(zs, ad::mean_rows(zs));
    return ad::div(c, ad::sqrt(ad::sum_rows(ad::square(c))));
  };
  const Tensor ha = standardize(za);
  const Tensor hb = standardize(zb);
  const Tensor corr = ad::matmul(ad::transpose(ha), hb);
  const auto k = static_cast<Eigen::Index>(keep.size());
  const Tensor eye = tape.constant(Matrix::Identity(k, k));
  const Tensor off_mask = tape.constant(Matrix::Ones(k, k) - Matrix::Identity(k, k));
  const Tensor invariance = ad::sum(ad::square(ad::sub(ad::mul(corr, eye), eye)));
  const Tensor redundancy = ad::sum(ad::square(ad::mul(corr, off_mask)));
  return ad::add(invariance, ad::scale(redundancy, w));
}

}  // namespace vnelab
