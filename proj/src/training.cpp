#include "icmf/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "icmf/click_oracle.hpp"
#include "icmf/image.hpp"
#include "icmf/model.hpp"
#include "icmf/parameters.hpp"
#include "icmf/seg_head.hpp"

namespace icmf {

// ---------------------------------------------------------------------------
// Loss

Tensor nfl_loss(const Tensor& prob, const BitMask& gt, double gamma, bool detach_normalizer) {
  if (prob.numel() != gt.size() || prob.rank() < 2 || prob.dim(prob.rank() - 1) != gt.width ||
      prob.dim(prob.rank() - 2) != gt.height)
    throw ShapeError("nfl_loss: prediction " + shape_str(prob.shape()) + " vs mask " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width));
  if (gamma < 0.0) throw ContractError("nfl_loss: gamma must be >= 0");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  const auto p = prob.data();
  const std::size_t n = p.size();
  std::vector<double> pt(n), w(n), nll(n);
  double wsum = 0.0, num = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = std::clamp(p[i], lo, hi);
    pt[i] = gt.bits[i] ? pc : 1.0 - pc;
    w[i] = std::pow(1.0 - pt[i], gamma);
    nll[i] = -std::log(pt[i]);
    wsum += w[i];
    num += w[i] * nll[i];
  }
  const double loss = num / wsum;
  return record_op({}, {loss}, {prob},
                   [prob, gt, pt, w, nll, gamma, wsum, loss, detach_normalizer](
                       const Tensor&, std::span<const double> g) {
                     auto gp = grad_sink(prob);
                     if (gp.empty()) return;
                     const auto pv = prob.data();
                     const double f = backward_fault("nfl_loss");
                     for (std::size_t i = 0; i < pt.size(); ++i) {
                       if (pv[i] < lo || pv[i] > hi) continue;  // clamped
                       const double dw = gamma == 0.0 ? 0.0
                                                      : -gamma * std::pow(1.0 - pt[i], gamma - 1.0);
                       double d = (dw * nll[i] - w[i] / pt[i]) / wsum;
                       if (!detach_normalizer) d -= loss * dw / wsum;
                       gp[i] += f * g[0] * (gt.bits[i] ? d : -d);
                     }
                   });
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(ParameterSet& params, AdamState& state, const AdamConfig& cfg) {
  const auto& entries = params.entries();
  if (state.m.empty()) {
    for (const auto& [name, t] : entries) {
      state.m.emplace_back(t.numel(), 0.0);
      state.v.emplace_back(t.numel(), 0.0);
    }
  }
  if (state.m.size() != entries.size()) throw ContractError("adam state does not match parameters");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor t = entries[k].second;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != t.numel()) throw ContractError("adam moment size mismatch for " + entries[k].first);
    const auto g = t.grad();
    auto x = t.mutable_data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      x[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Ellipse: return "ellipse";
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

namespace {

struct ShapeSpec {
  ShapeKind kind;
  double cy, cx, a, b, angle;
  double tri[3][2];
};

ShapeSpec random_shape(ShapeKind kind, double side, double min_r, double max_r, Rng& rng) {
  ShapeSpec s{};
  s.kind = kind;
  s.a = rng.uniform(min_r, max_r);
  s.b = rng.uniform(0.6, 1.0) * s.a;
  const double margin = 0.5 * s.b;
  s.cy = rng.uniform(margin, side - margin);
  s.cx = rng.uniform(margin, side - margin);
  s.angle = rng.uniform(0.0, std::numbers::pi);
  for (int v = 0; v < 3; ++v) {
    const double t = s.angle + v * 2.0 * std::numbers::pi / 3.0 + rng.uniform(-0.35, 0.35);
    const double r = s.a * rng.uniform(0.8, 1.0);
    s.tri[v][0] = s.cy + r * std::sin(t);
    s.tri[v][1] = s.cx + r * std::cos(t);
  }
  return s;
}

bool inside(const ShapeSpec& s, double y, double x) {
  const double dy = y - s.cy, dx = x - s.cx;
  const double ca = std::cos(s.angle), sa = std::sin(s.angle);
  const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
  switch (s.kind) {
    case ShapeKind::Ellipse: return (u * u) / (s.a * s.a) + (v * v) / (s.b * s.b) <= 1.0;
    case ShapeKind::Rectangle: return std::abs(u) <= s.a * 0.8 && std::abs(v) <= s.b * 0.8;
    case ShapeKind::Triangle: {
      auto edge = [&](int i, int j) {
        return (s.tri[j][1] - s.tri[i][1]) * (y - s.tri[i][0]) -
               (s.tri[j][0] - s.tri[i][0]) * (x - s.tri[i][1]);
      };
      const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

BitMask rasterize(const ShapeSpec& s, std::size_t side) {
  BitMask m(side, side);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) m.set(r, c, inside(s, r + 0.5, c + 0.5));
  return m;
}

std::array<double, 3> random_color(Rng& rng) {
  return {rng.uniform(), rng.uniform(), rng.uniform()};
}

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

SynthSample make_sample(std::size_t side, Rng& rng) {
  const double sd = static_cast<double>(side);
  const std::size_t hw = side * side;
  std::vector<double> img(3 * hw);

  // Background: base colour, linear gradient and a low-frequency ripple.
  const auto base = random_color(rng);
  const double gdir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double gamp = rng.uniform(0.05, 0.2);
  const double freq = rng.uniform(1.0, 3.0) * 2.0 * std::numbers::pi / sd;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      const double t = ((c - sd / 2) * std::cos(gdir) + (r - sd / 2) * std::sin(gdir)) / sd;
      const double ripple = 0.05 * std::sin(freq * (r + 0.7 * c) + phase);
      for (std::size_t ch = 0; ch < 3; ++ch) img[ch * hw + r * side + c] = base[ch] + gamp * t + ripple;
    }

  auto paint = [&](const BitMask& m, const std::array<double, 3>& color) {
    for (std::size_t i = 0; i < hw; ++i)
      if (m.bits[i])
        for (std::size_t ch = 0; ch < 3; ++ch) img[ch * hw + i] = color[ch];
  };

  const auto ndistract = rng.below(3);
  for (std::uint64_t d = 0; d < ndistract; ++d) {
    const auto kind = static_cast<ShapeKind>(rng.below(3));
    paint(rasterize(random_shape(kind, sd, sd / 12, sd / 6, rng), side), random_color(rng));
  }

  SynthSample s;
  s.shape_kind = static_cast<ShapeKind>(rng.below(3));
  for (;;) {
    s.gt = rasterize(random_shape(s.shape_kind, sd, sd / 6, sd / 3.2, rng), side);
    if (s.gt.area() >= 16) break;
  }
  auto color = random_color(rng);
  while (color_distance(color, base) < 0.4) color = random_color(rng);
  paint(s.gt, color);

  for (auto& x : img) x = std::clamp(x + 0.03 * rng.normal(), 0.0, 1.0);
  s.image = Tensor({3, side, side}, std::move(img));
  return s;
}

}  // namespace

std::vector<SynthSample> synth_dataset(std::size_t n, std::size_t side, std::uint64_t seed) {
  if (n == 0) throw ContractError("synth_dataset: n must be > 0");
  if (side < 16) throw ContractError("synth_dataset: side must be >= 16");
  Rng rng(seed);
  std::vector<SynthSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(side, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

// Maps output pixel (r, c) of a flip-then-rotate transform to its source pixel.
// Forward: flip x' = (r, n-1-c); each clockwise quarter turn (r, c) -> (c, n-1-r).
std::pair<std::size_t, std::size_t> flip_rot_source(std::size_t r, std::size_t c, std::size_t n,
                                                     bool flip, int rot) {
  for (int k = 0; k < rot; ++k) {  // undo one clockwise turn: (r, c) <- (n-1-c, r)
    const std::size_t pr = n - 1 - c, pc = r;
    r = pr;
    c = pc;
  }
  if (flip) c = n - 1 - c;
  return {r, c};
}

SynthSample flip_rotate(const SynthSample& s, bool flip, int rot) {
  const std::size_t n = s.gt.height;
  if (s.gt.width != n) throw ShapeError("augment expects square samples");
  if (!flip && rot == 0) return s;
  const std::size_t ch = s.image.dim(0);
  const auto src = s.image.data();
  std::vector<double> img(src.size());
  SynthSample out{Tensor(), BitMask(n, n), s.shape_kind};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const auto [sr, sc] = flip_rot_source(r, c, n, flip, rot);
      out.gt.bits[r * n + c] = s.gt.bits[sr * n + sc];
      for (std::size_t k = 0; k < ch; ++k) img[(k * n + r) * n + c] = src[(k * n + sr) * n + sc];
    }
  out.image = Tensor({ch, n, n}, std::move(img));
  return out;
}

}  // namespace

AugmentParams draw_augment(std::size_t side, Rng& rng) {
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.rotation = static_cast<int>(rng.below(4));
  p.scale = rng.uniform(0.75, 1.25);
  const auto scaled = static_cast<std::size_t>(std::lround(side * p.scale));
  const std::size_t slack = scaled > side ? scaled - side : side - scaled;
  p.offset_row = rng.below(slack + 1);
  p.offset_col = rng.below(slack + 1);
  return p;
}

SynthSample apply_augment(const SynthSample& s, const AugmentParams& p) {
  SynthSample out = flip_rotate(s, p.flip, ((p.rotation % 4) + 4) % 4);
  const std::size_t n = out.gt.height;
  const auto scaled = static_cast<std::size_t>(std::lround(n * p.scale));
  if (scaled == n) return out;
  const Tensor img = resize_bilinear(out.image, scaled, scaled);
  const BitMask gt = resize_nearest(out.gt, scaled, scaled);
  const std::size_t ch = img.dim(0);
  std::vector<double> dst(ch * n * n, 0.0);
  BitMask mask(n, n);
  const auto v = img.data();
  if (scaled > n) {  // crop
    const std::size_t r0 = std::min(p.offset_row, scaled - n), c0 = std::min(p.offset_col, scaled - n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        mask.bits[r * n + c] = gt.bits[(r + r0) * scaled + c + c0];
        for (std::size_t k = 0; k < ch; ++k)
          dst[(k * n + r) * n + c] = v[(k * scaled + r + r0) * scaled + c + c0];
      }
  } else {  // pad with zeros
    const std::size_t r0 = std::min(p.offset_row, n - scaled), c0 = std::min(p.offset_col, n - scaled);
    for (std::size_t r = 0; r < scaled; ++r)
      for (std::size_t c = 0; c < scaled; ++c) {
        mask.bits[(r + r0) * n + c + c0] = gt.bits[r * scaled + c];
        for (std::size_t k = 0; k < ch; ++k)
          dst[(k * n + r + r0) * n + c + c0] = v[(k * scaled + r) * scaled + c];
      }
  }
  out.image = Tensor({ch, n, n}, std::move(dst));
  out.gt = std::move(mask);
  return out;
}

SynthSample invert_flip_rotation(const SynthSample& s, const AugmentParams& p) {
  // (flip then rot)^-1 = rot^-1 then flip; flip after rotation r equals rotation -r after flip.
  const int rot = ((p.rotation % 4) + 4) % 4;
  if (!p.flip) return flip_rotate(s, false, (4 - rot) % 4);
  return flip_rotate(s, true, rot);
}

SynthSample augment(const SynthSample& s, Rng& rng) {
  for (int attempt = 0; attempt < 5; ++attempt) {
    SynthSample out = apply_augment(s, draw_augment(s.gt.height, rng));
    if (!out.gt.empty_mask()) return out;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::tiny() {
  TrainConfig c;
  c.adam.lr = 3e-3;
  c.batch_size = 4;
  c.steps = 1500;
  c.lr_drop_step = 1200;
  c.augment = false;  // overfitting a handful of images; augmentation only slows that down
  return c;
}

void TrainConfig::validate() const {
  if (!(adam.lr > 0.0)) throw ContractError("lr must be > 0");
  if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0))
    throw ContractError("Adam betas must be in (0, 1)");
  if (!(adam.eps > 0.0)) throw ContractError("Adam eps must be > 0");
  if (batch_size == 0) throw ContractError("batch_size must be > 0");
  if (steps == 0) throw ContractError("steps must be > 0");
  if (!(lr_drop_factor > 0.0)) throw ContractError("lr_drop_factor must be > 0");
  if (max_init_clicks == 0) throw ContractError("max_init_clicks must be > 0");
  if (gamma < 0.0) throw ContractError("gamma must be >= 0");
  if (border_prob < 0.0 || border_prob > 1.0) throw ContractError("border_prob must be in [0, 1]");
}

double TrainConfig::lr_at(std::size_t step) const {
  return step >= lr_drop_step ? adam.lr / lr_drop_factor : adam.lr;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.adam.lr},
                     {"beta1", c.adam.beta1},
                     {"beta2", c.adam.beta2},
                     {"adam_eps", c.adam.eps},
                     {"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"lr_drop_step", c.lr_drop_step},
                     {"lr_drop_factor", c.lr_drop_factor},
                     {"max_init_clicks", c.max_init_clicks},
                     {"max_iter_clicks", c.max_iter_clicks},
                     {"gamma", c.gamma},
                     {"border_prob", c.border_prob},
                     {"augment", c.augment},
                     {"seed", c.seed}};
}

void merge_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ContractError("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "lr") value.get_to(c.adam.lr);
    else if (key == "beta1") value.get_to(c.adam.beta1);
    else if (key == "beta2") value.get_to(c.adam.beta2);
    else if (key == "adam_eps") value.get_to(c.adam.eps);
    else if (key == "batch_size") value.get_to(c.batch_size);
    else if (key == "steps") value.get_to(c.steps);
    else if (key == "lr_drop_step") value.get_to(c.lr_drop_step);
    else if (key == "lr_drop_factor") value.get_to(c.lr_drop_factor);
    else if (key == "max_init_clicks") value.get_to(c.max_init_clicks);
    else if (key == "max_iter_clicks") value.get_to(c.max_iter_clicks);
    else if (key == "gamma") value.get_to(c.gamma);
    else if (key == "border_prob") value.get_to(c.border_prob);
    else if (key == "augment") value.get_to(c.augment);
    else if (key == "seed") value.get_to(c.seed);
    else throw ContractError("unknown train config key '" + key + "'");
  }
}

void to_json(nlohmann::json& j, const StepStats& s) {
  j = nlohmann::json{{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}, {"clicks_used", s.clicks_used}};
  if (s.skipped) j["skipped"] = s.skipped;
}

// ---------------------------------------------------------------------------
// Iterative training

InteractionState simulate_training_clicks(const SynthSample& sample, const ICMFormer& model,
                                          const TrainConfig& cfg, Rng& rng) {
  const std::size_t h = sample.gt.height, w = sample.gt.width;
  const ClickPolicy policy = ClickPolicy::train(cfg.border_prob);
  InteractionState state;
  state.add_click(first_click(sample.gt), h, w);
  const auto n_init = 1 + rng.below(cfg.max_init_clicks);
  const BitMask empty(h, w);
  for (std::uint64_t i = 1; i < n_init; ++i) {
    auto c = next_click(empty, sample.gt, policy, &rng);
    if (!c) break;
    state.add_click(*c, h, w);
  }
  const auto rounds = rng.below(cfg.max_iter_clicks + 1);
  if (rounds == 0) return state;
  const ModelSegmenter seg(model);
  for (std::uint64_t k = 0; k < rounds; ++k) {
    const BitMask pred = binarize(seg.predict(sample.image, state, nullptr));
    state.prev_mask = pred;
    auto c = next_click(pred, sample.gt, policy, &rng);
    if (!c) break;
    state.add_click(*c, h, w);
  }
  return state;
}

StepStats train_step(std::span<const SynthSample> batch, ICMFormer& model, const TrainConfig& cfg,
                     AdamState& adam, Rng& rng, double lr) {
  StepStats stats;
  stats.lr = lr;
  ParameterSet& params = model.parameters();
  params.zero_grad();
  Tape tape;
  std::vector<Tensor> losses;
  for (const auto& raw : batch) {
    if (raw.gt.empty_mask()) {
      ++stats.skipped;
      continue;
    }
    const SynthSample s = cfg.augment ? augment(raw, rng) : raw;
    const InteractionState state = simulate_training_clicks(s, model, cfg, rng);
    stats.clicks_used += state.clicks.size();
    const Tensor interaction = encode_interaction(state, s.gt.height, s.gt.width,
                                                  model.config().click_radius);
    ForwardContext ctx;
    ctx.training = true;
    ctx.rng = &rng;
    losses.push_back(nfl_loss(model.forward(s.image, interaction, ctx), s.gt, cfg.gamma));
  }
  if (losses.empty()) return stats;
  Tensor total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  const Tensor loss = scale(total, 1.0 / static_cast<double>(losses.size()));
  tape.backward(loss);
  AdamConfig ac = cfg.adam;
  ac.lr = lr;
  adam_step(params, adam, ac);
  stats.loss = loss.item();
  return stats;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(ICMFormer& model, TrainConfig cfg, std::vector<SynthSample> data)
    : model_(model), cfg_(cfg), data_(std::move(data)), rng_(cfg.seed) {
  cfg_.validate();
  if (data_.empty()) throw DataError("training set is empty");
}

StepStats Trainer::step() {
  std::vector<SynthSample> batch;
  batch.reserve(cfg_.batch_size);
  for (std::size_t i = 0; i < cfg_.batch_size; ++i) batch.push_back(data_[rng_.below(data_.size())]);
  StepStats s = train_step(batch, model_, cfg_, adam_, rng_, cfg_.lr_at(step_));
  s.step = step_++;
  return s;
}

void Trainer::run(std::ostream* log) {
  while (step_ < cfg_.steps) {
    const StepStats s = step();
    if (log) {
      nlohmann::json j = s;
      *log << j.dump() << '\n';
      log->flush();
    }
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  model_.save_to(ckpt);
  nlohmann::json tc;
  to_json(tc, cfg_);
  ckpt.meta["train"] = {{"config", tc},
                        {"step", step_},
                        {"adam_t", adam_.t},
                        {"rng", rng_.serialize()}};
  const auto& entries = model_.parameters().entries();
  for (std::size_t k = 0; k < adam_.m.size(); ++k) {
    ckpt.add("adam_m/" + entries[k].first, entries[k].second.shape(), adam_.m[k]);
    ckpt.add("adam_v/" + entries[k].first, entries[k].second.shape(), adam_.v[k]);
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  model_.load_from(ckpt);
  if (!ckpt.meta.contains("train")) throw DataError("checkpoint has no training state");
  const auto& t = ckpt.meta.at("train");
  step_ = t.at("step").get<std::size_t>();
  adam_ = AdamState{};
  adam_.t = t.at("adam_t").get<std::int64_t>();
  rng_.deserialize(t.at("rng").get<std::string>());
  if (adam_.t > 0) {
    for (const auto& [name, tensor] : model_.parameters().entries()) {
      adam_.m.push_back(ckpt.at("adam_m/" + name).data);
      adam_.v.push_back(ckpt.at("adam_v/" + name).data);
    }
  }
}

}  // namespace icmf
