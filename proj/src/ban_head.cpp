#include "ban/ban_head.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ban/error.hpp"
#include "ban/losses.hpp"
#include "ban/ops.hpp"
#include "ban/rng.hpp"

namespace ban {

namespace {

std::string key(ContextKind kind) { return std::string(context_key(kind)); }

std::string trunk_name(const BanConfig& cfg, ContextKind kind, const char* part) {
  if (cfg.shared_features) return std::string("head.trunk.") + part;
  return "head." + key(kind) + ".trunk." + part;
}

std::string feat_name(const BanConfig& cfg, ContextKind kind, const char* part) {
  if (cfg.shared_features) return std::string("head.feat.") + part;
  return "head." + key(kind) + ".feat." + part;
}

Var lookup(const BoundParams& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

Tensor gaussian_tensor(Shape shape, std::uint64_t seed, const std::string& name, double stddev) {
  Rng rng(mix_seed(seed, fnv1a(name)));
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.gaussian(0.0, stddev));
  return t;
}

std::size_t group_count(const BanConfig& cfg) { return static_cast<std::size_t>(cfg.num_classes) + 1; }

std::vector<Box> context_boxes(std::span<const Box> proposals, ContextKind kind) {
  std::vector<Box> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) out.push_back(generate_context(p, kind));
  return out;
}

std::vector<Scalar> row(const Tensor& t, std::size_t r) {
  const std::size_t n = t.dim(1);
  return {t.data() + r * n, t.data() + (r + 1) * n};
}

Tensor as_batch(const Tensor& features) {
  if (features.rank() == 3) return features.reshaped({1, features.dim(0), features.dim(1), features.dim(2)});
  if (features.rank() == 4 && features.dim(0) == 1) return features;
  throw DimensionError("head: features must be [C,H,W] or [1,C,H,W], got " + shape_str(features.shape()));
}

}  // namespace

BoundParams bind_params(Tape& tape, const ParamSet& params, bool trainable) {
  BoundParams out;
  for (const auto& [name, t] : params) out.emplace(name, trainable ? tape.parameter(t) : tape.constant(t));
  return out;
}

std::vector<ContextKind> BanConfig::subnetworks() const {
  std::vector<ContextKind> out{ContextKind::Base};
  for (auto kind : kAllContexts)
    if (kind != ContextKind::Base && std::find(contexts.begin(), contexts.end(), kind) != contexts.end())
      out.push_back(kind);
  return out;
}

int BanConfig::regression_slot(int label) const {
  const int slots = regression_dims / 4;
  if (slots == 1) return 0;
  if (slots == 2 && num_classes + 1 != 2) return label > 0 ? 1 : 0;
  return label;
}

void BanConfig::validate() const {
  if (k < 1 || k > 7) throw ConfigError("k must lie in [1,7], got " + std::to_string(k));
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  const int slots = regression_dims / 4;
  if (regression_dims <= 0 || regression_dims % 4 != 0 || !(slots == 1 || slots == 2 || slots == num_classes + 1))
    throw ConfigError("regression_dims must be 4, 8 or 4*(num_classes+1), got " + std::to_string(regression_dims));
  if (trunk_channels < 1) throw ConfigError("trunk_channels must be positive");
  if (roi_feature_channels < 1) throw ConfigError("roi_feature_channels must be positive");
  for (auto c : contexts)
    if (c == ContextKind::Base) throw ConfigError("Base is implicit and cannot be listed as a context");
}

std::vector<ContextKind> parse_contexts(std::string_view text) {
  std::vector<ContextKind> out;
  auto add = [&](ContextKind k) {
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find_first_of(",+", pos);
    if (comma == std::string_view::npos) comma = text.size();
    std::string_view tok = text.substr(pos, comma - pos);
    while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
    while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
    pos = comma + 1;
    if (tok.empty() || tok == "none" || tok == "None") continue;
    if (tok == "S") {
      for (auto k : {ContextKind::SideTop, ContextKind::SideBottom, ContextKind::SideLeft, ContextKind::SideRight})
        add(k);
    } else if (tok == "V") {
      for (auto k : {ContextKind::VertexTL, ContextKind::VertexTR, ContextKind::VertexBR, ContextKind::VertexBL})
        add(k);
    } else if (tok == "B") {
      add(ContextKind::InBoundary);
      add(ContextKind::OutBoundary);
    } else {
      const ContextKind k = context_from_key(tok);
      if (k == ContextKind::Base) continue;
      add(k);
    }
  }
  return out;
}

std::string format_contexts(std::span<const ContextKind> contexts) {
  auto has_all = [&](std::initializer_list<ContextKind> ks) {
    return std::all_of(ks.begin(), ks.end(),
                       [&](ContextKind k) { return std::find(contexts.begin(), contexts.end(), k) != contexts.end(); });
  };
  std::vector<std::string> parts;
  std::vector<ContextKind> covered;
  const std::initializer_list<ContextKind> s = {ContextKind::SideTop, ContextKind::SideBottom, ContextKind::SideLeft,
                                                ContextKind::SideRight};
  const std::initializer_list<ContextKind> v = {ContextKind::VertexTL, ContextKind::VertexTR, ContextKind::VertexBR,
                                                ContextKind::VertexBL};
  const std::initializer_list<ContextKind> b = {ContextKind::InBoundary, ContextKind::OutBoundary};
  if (has_all(s)) parts.push_back("S"), covered.insert(covered.end(), s);
  if (has_all(v)) parts.push_back("V"), covered.insert(covered.end(), v);
  if (has_all(b)) parts.push_back("B"), covered.insert(covered.end(), b);
  for (auto k : kAllContexts)
    if (std::find(contexts.begin(), contexts.end(), k) != contexts.end() &&
        std::find(covered.begin(), covered.end(), k) == covered.end())
      parts.emplace_back(context_key(k));
  if (parts.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

std::size_t head_parameter_count(const BanConfig& cfg, int feature_channels) {
  const std::size_t s = cfg.num_subnetworks();
  const std::size_t kk = static_cast<std::size_t>(cfg.k) * cfg.k;
  const std::size_t cin = feature_channels;
  const std::size_t groups = group_count(cfg), d = cfg.regression_dims;
  if (cfg.head_mode == PoolMode::PSRoI) {
    const std::size_t t = cfg.trunk_channels;
    const std::size_t trunk = (cin + 1) * t * (cfg.shared_features ? 1 : s);
    return trunk + s * (t + 1) * (groups + d) * kk;
  }
  const std::size_t f = cfg.roi_feature_channels;
  const std::size_t feat = (cin + 1) * f * (cfg.shared_features ? 1 : s);
  return feat + (s * f * kk + 1) * (groups + d);
}

ParamSet build_head(const BanConfig& cfg, int feature_channels, std::uint64_t seed) {
  cfg.validate();
  if (feature_channels < 1) throw ConfigError("feature_channels must be positive");
  ParamSet params;
  const double sigma = 0.01;
  auto conv = [&](const std::string& base, std::size_t out, std::size_t in) {
    params.insert_or_assign(base + ".weight", gaussian_tensor({out, in, 1, 1}, seed, base + ".weight", sigma));
    params.insert_or_assign(base + ".bias", Tensor({out}));
  };
  const auto subnets = cfg.subnetworks();
  const std::size_t kk = static_cast<std::size_t>(cfg.k) * cfg.k;
  const std::size_t cin = feature_channels;
  if (cfg.head_mode == PoolMode::PSRoI) {
    const std::size_t t = cfg.trunk_channels;
    for (auto kind : subnets) {
      const std::string tw = trunk_name(cfg, kind, "weight");
      conv(tw.substr(0, tw.size() - 7), t, cin);
      conv("head." + key(kind) + ".cls", group_count(cfg) * kk, t);
      conv("head." + key(kind) + ".reg", static_cast<std::size_t>(cfg.regression_dims) * kk, t);
    }
  } else {
    const std::size_t f = cfg.roi_feature_channels;
    for (auto kind : subnets) {
      const std::string fw = feat_name(cfg, kind, "weight");
      conv(fw.substr(0, fw.size() - 7), f, cin);
    }
    const std::size_t d = subnets.size() * f * kk;
    params.insert_or_assign("head.fc_cls.weight", gaussian_tensor({d, group_count(cfg)}, seed, "head.fc_cls.weight", sigma));
    params.insert_or_assign("head.fc_cls.bias", Tensor({group_count(cfg)}));
    params.insert_or_assign("head.fc_reg.weight",
                            gaussian_tensor({d, static_cast<std::size_t>(cfg.regression_dims)}, seed,
                                            "head.fc_reg.weight", sigma));
    params.insert_or_assign("head.fc_reg.bias", Tensor({static_cast<std::size_t>(cfg.regression_dims)}));
  }
  return params;
}

HeadGraph head_forward(Tape& tape, const BoundParams& params, Var features, std::span<const Box> proposals,
                       const BanConfig& cfg, double spatial_scale) {
  cfg.validate();
  if (proposals.empty()) throw DimensionError("head_forward: no proposals");
  HeadGraph g;
  g.subnets = cfg.subnetworks();
  PoolSpec spec{cfg.k, spatial_scale, cfg.head_mode};

  if (cfg.head_mode == PoolMode::PSRoI) {
    std::map<std::string, Var> trunks;
    auto trunk_for = [&](ContextKind kind) {
      const std::string name = trunk_name(cfg, kind, "weight");
      auto it = trunks.find(name);
      if (it != trunks.end()) return it->second;
      Var conv = ops::conv2d(tape, features, lookup(params, name), lookup(params, trunk_name(cfg, kind, "bias")));
      Var out = ops::relu(tape, conv);
      trunks.emplace(name, out);
      return out;
    };
    for (auto kind : g.subnets) {
      const Var trunk = trunk_for(kind);
      const std::string base = "head." + key(kind);
      const Var cls_map =
          ops::conv2d(tape, trunk, lookup(params, base + ".cls.weight"), lookup(params, base + ".cls.bias"));
      const Var reg_map =
          ops::conv2d(tape, trunk, lookup(params, base + ".reg.weight"), lookup(params, base + ".reg.bias"));
      const auto boxes = context_boxes(proposals, kind);
      g.score_maps.push_back(cls_map);
      g.context_scores.push_back(ops::vote(tape, ops::psroi_pool(tape, cls_map, boxes, spec)));
      g.context_deltas.push_back(ops::vote(tape, ops::psroi_pool(tape, reg_map, boxes, spec)));
    }
    g.class_scores = ops::add(tape, g.context_scores);
    g.box_deltas = ops::add(tape, g.context_deltas);
    return g;
  }

  std::map<std::string, Var> feats;
  std::vector<Var> pooled;
  for (auto kind : g.subnets) {
    const std::string name = feat_name(cfg, kind, "weight");
    auto it = feats.find(name);
    if (it == feats.end()) {
      Var conv = ops::conv2d(tape, features, lookup(params, name), lookup(params, feat_name(cfg, kind, "bias")));
      it = feats.emplace(name, ops::relu(tape, conv)).first;
    }
    pooled.push_back(ops::roi_pool(tape, it->second, context_boxes(proposals, kind), spec));
  }
  const Var cat = ops::concat_channels(tape, pooled);
  const Tensor& cv = tape.value(cat);
  const Var flat = ops::reshape(tape, cat, {cv.dim(0), cv.size() / cv.dim(0)});
  g.class_scores =
      ops::fully_connected(tape, flat, lookup(params, "head.fc_cls.weight"), lookup(params, "head.fc_cls.bias"));
  g.box_deltas =
      ops::fully_connected(tape, flat, lookup(params, "head.fc_reg.weight"), lookup(params, "head.fc_reg.bias"));
  return g;
}

std::vector<HeadOutput> forward(const ParamSet& params, const Tensor& features, std::span<const Box> proposals,
                                const BanConfig& cfg, double spatial_scale) {
  if (proposals.empty()) return {};
  Tape tape;
  const BoundParams bound = bind_params(tape, params, false);
  const Var f = tape.constant(as_batch(features));
  const HeadGraph g = head_forward(tape, bound, f, proposals, cfg, spatial_scale);
  std::vector<HeadOutput> out(proposals.size());
  for (std::size_t r = 0; r < proposals.size(); ++r) {
    out[r].class_scores = row(tape.value(g.class_scores), r);
    out[r].box_deltas = row(tape.value(g.box_deltas), r);
    for (auto v : g.context_scores) out[r].per_context_scores.push_back(row(tape.value(v), r));
  }
  return out;
}

SharingGradients backward_sharing_check(const ParamSet& params, const Tensor& features, const Box& proposal,
                                        const BanConfig& cfg, double spatial_scale, int label) {
  if (cfg.head_mode != PoolMode::PSRoI) throw ConfigError("backward_sharing_check requires the PSRoI head");
  Tape tape;
  const BoundParams bound = bind_params(tape, params, true);
  const Var f = tape.constant(as_batch(features));
  const Box one[] = {proposal};
  const HeadGraph g = head_forward(tape, bound, f, one, cfg, spatial_scale);
  const Var terms[] = {ops::cross_entropy(tape, g.class_scores, label), ops::sum(tape, g.box_deltas)};
  tape.backward(ops::add(tape, terms));

  SharingGradients out;
  out.aggregate_scores = tape.grad(g.class_scores);
  out.aggregate_deltas = tape.grad(g.box_deltas);
  for (std::size_t s = 0; s < g.subnets.size(); ++s) {
    out.context_scores.push_back(tape.grad(g.context_scores[s]));
    out.context_deltas.push_back(tape.grad(g.context_deltas[s]));
    out.score_map_weight_grads.push_back(tape.grad(lookup(bound, "head." + key(g.subnets[s]) + ".cls.weight")));
  }
  return out;
}

ContributionAnalysis contribution_analysis(const ParamSet& params, std::span<const ContributionSample> samples,
                                           const BanConfig& cfg, double spatial_scale,
                                           std::span<const std::string> class_names) {
  if (cfg.head_mode != PoolMode::PSRoI) throw ConfigError("contribution analysis requires the PSRoI head");
  const auto subnets = cfg.subnetworks();
  const std::size_t ns = subnets.size();
  const std::size_t groups = group_count(cfg);

  std::vector<ContextKind> columns;
  std::vector<std::size_t> column_of;  // report column -> subnet index
  for (auto kind : kReportOrder) {
    auto it = std::find(subnets.begin(), subnets.end(), kind);
    if (it != subnets.end()) {
      columns.push_back(kind);
      column_of.push_back(static_cast<std::size_t>(it - subnets.begin()));
    }
  }

  std::vector<std::vector<double>> cls_acc(groups, std::vector<double>(ns, 0.0));
  std::vector<std::size_t> cls_count(groups, 0);
  std::vector<std::vector<double>> loc_acc(4, std::vector<double>(ns, 0.0));
  std::vector<std::size_t> loc_count(4, 0);

  auto accumulate_share = [&](std::vector<double>& acc, std::size_t& count, const std::vector<double>& mags) {
    double total = 0;
    for (double m : mags) total += m;
    if (!(total > 0)) return;
    for (std::size_t s = 0; s < ns; ++s) acc[s] += mags[s] / total;
    ++count;
  };

  for (const auto& sample : samples) {
    if (sample.rois.size() != sample.labels.size())
      throw DimensionError("contribution_analysis: rois and labels differ in length");
    if (sample.rois.empty()) continue;
    Tape tape;
    const BoundParams bound = bind_params(tape, params, false);
    const HeadGraph g = head_forward(tape, bound, tape.constant(as_batch(sample.features)), sample.rois, cfg,
                                     spatial_scale);
    for (std::size_t r = 0; r < sample.rois.size(); ++r) {
      const int label = sample.labels[r];
      if (label < 0 || static_cast<std::size_t>(label) >= groups)
        throw DimensionError("contribution_analysis: label out of range");
      std::vector<double> mags(ns);
      for (std::size_t s = 0; s < ns; ++s) {
        const Tensor& sc = tape.value(g.context_scores[s]);
        mags[s] = std::abs(sc[r * groups + label]);
      }
      accumulate_share(cls_acc[label], cls_count[label], mags);
      if (label == 0) continue;
      const std::size_t slot = static_cast<std::size_t>(cfg.regression_slot(label));
      for (std::size_t coord = 0; coord < 4; ++coord) {
        for (std::size_t s = 0; s < ns; ++s) {
          const Tensor& d = tape.value(g.context_deltas[s]);
          mags[s] = std::abs(d[r * d.dim(1) + 4 * slot + coord]);
        }
        accumulate_share(loc_acc[coord], loc_count[coord], mags);
      }
    }
  }

  auto finish = [&](std::vector<std::vector<double>>& acc, std::vector<std::size_t>& count,
                    const std::vector<std::string>& names) {
    ContributionTable t;
    t.columns = columns;
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (count[i] == 0) {
        t.omitted.push_back(names[i]);
        continue;
      }
      std::vector<double> values;
      for (auto s : column_of) values.push_back(acc[i][s] / static_cast<double>(count[i]));
      t.row_names.push_back(names[i]);
      t.rows.push_back(std::move(values));
    }
    return t;
  };

  std::vector<std::string> cls_names{"bkgd"};
  for (std::size_t c = 1; c < groups; ++c)
    cls_names.push_back(c - 1 < class_names.size() ? class_names[c - 1] : "class" + std::to_string(c));
  ContributionAnalysis out;
  out.classification = finish(cls_acc, cls_count, cls_names);
  out.localization = finish(loc_acc, loc_count, {"cx", "cy", "width", "height"});
  return out;
}

std::string contribution_csv(const ContributionTable& table) {
  std::ostringstream os;
  os << "row";
  for (auto c : table.columns) os << ',' << context_report_name(c);
  os << '\n';
  os.precision(17);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    os << table.row_names[i];
    for (double v : table.rows[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

Tensor local_activation_map(const ParamSet& params, const Tensor& features, const Box& proposal,
                            ContextKind context, int class_id, const BanConfig& cfg, double spatial_scale) {
  if (cfg.head_mode != PoolMode::PSRoI) throw ConfigError("local activation maps require the PSRoI head");
  const auto subnets = cfg.subnetworks();
  if (std::find(subnets.begin(), subnets.end(), context) == subnets.end())
    throw ConfigError("context '" + key(context) + "' is not configured");
  if (class_id < 0 || class_id > cfg.num_classes) throw ConfigError("class_id out of range");
  Tape tape;
  BoundParams bound;
  // Bind only what this context's score map needs.
  const std::string tw = trunk_name(cfg, context, "weight"), tb = trunk_name(cfg, context, "bias");
  const std::string cw = "head." + key(context) + ".cls.weight", cb = "head." + key(context) + ".cls.bias";
  for (const auto& name : {tw, tb, cw, cb}) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
    bound.emplace(name, tape.constant(it->second));
  }
  const Var f = tape.constant(as_batch(features));
  const Var trunk = ops::relu(tape, ops::conv2d(tape, f, bound.at(tw), bound.at(tb)));
  const Var cls_map = ops::conv2d(tape, trunk, bound.at(cw), bound.at(cb));
  const PoolSpec spec{cfg.k, spatial_scale, PoolMode::PSRoI};
  const Tensor pooled = psroi_pool(tape.value(cls_map), generate_context(proposal, context), spec);
  const std::size_t k = cfg.k;
  Tensor map({k, k});
  std::copy_n(pooled.data() + static_cast<std::size_t>(class_id) * k * k, k * k, map.data());
  return map;
}

}  // namespace ban
