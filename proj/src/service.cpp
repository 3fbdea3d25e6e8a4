#include "icmf/service.hpp"

#include <httplib.h>

#include <random>

#include "icmf/image.hpp"
#include "icmf/model.hpp"
#include "icmf/seg_head.hpp"

namespace icmf {

using json = nlohmann::json;

int Geometry::to_model(int orig) const {
  const auto s0 = static_cast<long long>(padded_side());
  return static_cast<int>((2LL * orig + 1) * static_cast<long long>(model_side) / (2 * s0));
}

int Geometry::to_orig(int model) const {
  const auto s0 = static_cast<long long>(padded_side());
  return static_cast<int>((2LL * model + 1) * s0 / (2 * static_cast<long long>(model_side)));
}

BitMask Geometry::mask_to_orig(const BitMask& model_mask) const {
  if (model_mask.height != model_side || model_mask.width != model_side)
    throw ShapeError("mask_to_orig: mask is not model_side square");
  const std::size_t s0 = padded_side();
  const BitMask square = resize_nearest(model_mask, s0, s0);
  BitMask out(height, width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) out.bits[r * width + c] = square.bits[r * s0 + c];
  return out;
}

json encode_rle(const BitMask& m) {
  json runs = json::array();
  const std::size_t n = m.size();
  for (std::size_t i = 0; i < n;) {
    if (!m.bits[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && m.bits[j]) ++j;
    runs.push_back(i);
    runs.push_back(j - i);
    i = j;
  }
  return {{"h", m.height}, {"w", m.width}, {"runs", std::move(runs)}};
}

BitMask decode_rle(const json& j) {
  try {
    BitMask m(j.at("h").get<std::size_t>(), j.at("w").get<std::size_t>());
    const auto& runs = j.at("runs");
    if (!runs.is_array() || runs.size() % 2) throw DataError("rle: runs must be start/length pairs");
    for (std::size_t k = 0; k < runs.size(); k += 2) {
      const auto start = runs[k].get<std::size_t>(), len = runs[k + 1].get<std::size_t>();
      if (start + len > m.size()) throw DataError("rle: run past the end of the mask");
      std::fill_n(m.bits.begin() + static_cast<std::ptrdiff_t>(start), len, 1);
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("rle: ") + e.what());
  }
}

namespace {

json mask_summary(const BitMask& m) {
  std::size_t top = m.height, left = m.width, bottom = 0, right = 0, area = 0;
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c)
      if (m.at(r, c)) {
        ++area;
        top = std::min(top, r);
        bottom = std::max(bottom, r);
        left = std::min(left, c);
        right = std::max(right, c);
      }
  json bbox = area ? json{top, left, bottom, right} : json(nullptr);
  return {{"area", area}, {"bbox", std::move(bbox)}};
}

std::string new_id() {
  thread_local std::mt19937_64 gen{std::random_device{}()};
  static const char* hex = "0123456789abcdef";
  std::string id;
  for (int k = 0; k < 2; ++k) {
    std::uint64_t x = gen();
    for (int i = 0; i < 16; ++i, x >>= 4) id.push_back(hex[x & 15]);
  }
  return id;
}

}  // namespace

SessionStore::SessionStore(const Segmenter& seg, ServiceOptions opts, Clock clock)
    : seg_(seg), opts_(opts), clock_(std::move(clock)) {
  if (opts_.model_side == 0 || opts_.max_sessions == 0)
    throw ContractError("SessionStore: model_side and max_sessions must be positive");
}

std::chrono::steady_clock::time_point SessionStore::now() const {
  return clock_ ? clock_() : std::chrono::steady_clock::now();
}

std::size_t SessionStore::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::size_t SessionStore::purge_expired() {
  std::lock_guard lock(mu_);
  const auto t = now();
  return std::erase_if(sessions_, [&](const auto& kv) { return t - kv.second->last_used > opts_.idle_ttl; });
}

CreatedSession SessionStore::create(const std::string& image_png, const std::string* gt_png) {
  auto s = std::make_shared<Session>();
  try {
    const auto [w, h] = png_size(image_png);
    if (std::max(w, h) > opts_.max_input_side)
      throw ServiceError(413, "image_too_large",
                         "image is " + std::to_string(w) + "x" + std::to_string(h) + ", max side is " +
                             std::to_string(opts_.max_input_side));
    const Image8 img = decode_png(image_png, 3);
    s->geom = {img.height, img.width, opts_.model_side};
    s->image = resize_bilinear(pad_to_square(image_to_tensor(img)), opts_.model_side, opts_.model_side);
    if (gt_png) {
      const Image8 g = decode_png(*gt_png, 1);
      if (g.width != img.width || g.height != img.height)
        throw ServiceError(400, "bad_gt", "ground-truth mask size differs from the image");
      s->gt_orig = gray_to_mask(g);
      s->gt = resize_nearest(pad_to_square(*s->gt_orig), opts_.model_side, opts_.model_side);
    }
  } catch (const DataError& e) {
    throw ServiceError(400, "bad_image", e.what());
  }

  std::lock_guard lock(mu_);
  const auto t = now();
  std::erase_if(sessions_, [&](const auto& kv) { return t - kv.second->last_used > opts_.idle_ttl; });
  while (sessions_.size() >= opts_.max_sessions) {
    auto lru = std::min_element(sessions_.begin(), sessions_.end(), [](const auto& a, const auto& b) {
      return a.second->last_used < b.second->last_used;
    });
    sessions_.erase(lru);
  }
  s->last_used = t;
  std::string id = new_id();
  while (sessions_.count(id)) id = new_id();
  sessions_.emplace(id, s);
  return {id, s->geom.width, s->geom.height};
}

std::shared_ptr<SessionStore::Session> SessionStore::find(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  const auto t = now();
  if (it != sessions_.end() && t - it->second->last_used > opts_.idle_ttl) {
    sessions_.erase(it);
    it = sessions_.end();
  }
  if (it == sessions_.end()) throw ServiceError(404, "not_found", "no session '" + id + "'");
  it->second->last_used = t;
  return it->second;
}

json SessionStore::add_click(const std::string& id, const Click& click) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  const Geometry& g = s->geom;
  if (click.row < 0 || click.col < 0 || static_cast<std::size_t>(click.row) >= g.height ||
      static_cast<std::size_t>(click.col) >= g.width)
    throw ServiceError(422, "out_of_bounds",
                       "click (" + std::to_string(click.row) + ", " + std::to_string(click.col) +
                           ") is outside the " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                           " image");
  if (s->state.clicks.empty() && !click.positive)
    throw ServiceError(422, "first_click_negative", "first click must be positive");

  Click m{g.to_model(click.row), g.to_model(click.col), click.positive, 0};
  s->state.add_click(m, g.model_side, g.model_side);
  Tensor prob;
  try {
    prob = seg_.predict(s->image, s->state, s->gt ? &*s->gt : nullptr);
  } catch (const std::exception& e) {
    s->state.clicks.pop_back();
    throw ServiceError(500, "inference_failed", e.what());
  }
  BitMask pred = binarize(prob);
  s->state.prev_mask = pred;
  s->history.push_back({std::move(pred), std::move(prob)});
  return summary_locked(*s);
}

BitMask SessionStore::mask_locked(const Session& s) const {
  if (s.history.empty()) throw ServiceError(409, "no_mask", "no inference has run in this session yet");
  return s.geom.mask_to_orig(s.history.back().mask);
}

json SessionStore::summary_locked(const Session& s) const {
  json j{{"clicks", s.state.clicks.size()}, {"has_mask", !s.history.empty()}};
  if (s.history.empty()) return j;
  const BitMask m = mask_locked(s);
  j["mask_summary"] = mask_summary(m);
  if (s.gt_orig) j["iou"] = iou(m, *s.gt_orig);
  return j;
}

BitMask SessionStore::mask(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return mask_locked(*s);
}

std::string SessionStore::mask_png(const std::string& id) { return encode_png(mask_to_gray(mask(id))); }

json SessionStore::mask_rle(const std::string& id) { return encode_rle(mask(id)); }

json SessionStore::undo(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (s->state.clicks.empty()) throw ServiceError(409, "nothing_to_undo", "session has no clicks");
  s->state.clicks.pop_back();
  s->history.pop_back();
  if (s->history.empty())
    s->state.prev_mask.reset();
  else
    s->state.prev_mask = s->history.back().mask;
  return summary_locked(*s);
}

json SessionStore::reset(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  s->state.reset();
  s->history.clear();
  return summary_locked(*s);
}

json SessionStore::summary(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return summary_locked(*s);
}

void SessionStore::remove(const std::string& id) {
  std::lock_guard lock(mu_);
  if (!sessions_.erase(id)) throw ServiceError(404, "not_found", "no session '" + id + "'");
}

// HTTP ----------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"code", code}, {"message", message}});
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status, e.code, e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const ContractError& e) {
      send_error(res, 422, "contract", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

Click parse_click(const std::string& body) {
  const json j = json::parse(body);
  if (!j.is_object() || !j.contains("row") || !j.contains("col"))
    throw ServiceError(400, "bad_request", "click needs integer 'row' and 'col'");
  Click c;
  c.row = j.at("row").get<int>();
  c.col = j.at("col").get<int>();
  c.positive = j.value("positive", true);
  return c;
}

}  // namespace

void install_routes(httplib::Server& server, SessionStore& store) {
  const std::string sid = "/sessions/([0-9a-f]+)";

  server.Get("/healthz", guarded([&store](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, {{"status", "ok"}, {"sessions", store.size()}});
             }));

  server.Post("/sessions", guarded([&store](const httplib::Request& req, httplib::Response& res) {
                CreatedSession c;
                if (req.is_multipart_form_data()) {
                  if (!req.has_file("image"))
                    throw ServiceError(400, "bad_request", "multipart upload needs an 'image' part");
                  const std::string image = req.get_file_value("image").content;
                  if (req.has_file("gt")) {
                    const std::string gt = req.get_file_value("gt").content;
                    c = store.create(image, &gt);
                  } else {
                    c = store.create(image);
                  }
                } else {
                  c = store.create(req.body);
                }
                send_json(res, 201, {{"session_id", c.id}, {"width", c.width}, {"height", c.height}});
              }));

  server.Post(sid + "/clicks", guarded([&store](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, store.add_click(req.matches[1], parse_click(req.body)));
              }));

  server.Get(sid + "/mask", guarded([&store](const httplib::Request& req, httplib::Response& res) {
               const std::string format = req.has_param("format") ? req.get_param_value("format") : "png";
               if (format == "png") {
                 res.status = 200;
                 res.set_content(store.mask_png(req.matches[1]), "image/png");
               } else if (format == "rle") {
                 send_json(res, 200, store.mask_rle(req.matches[1]));
               } else {
                 throw ServiceError(400, "bad_request", "format must be 'png' or 'rle'");
               }
             }));

  server.Get(sid, guarded([&store](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, store.summary(req.matches[1]));
             }));

  server.Post(sid + "/undo", guarded([&store](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, store.undo(req.matches[1]));
              }));

  server.Post(sid + "/reset", guarded([&store](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, store.reset(req.matches[1]));
              }));

  server.Delete(sid, guarded([&store](const httplib::Request& req, httplib::Response& res) {
                  store.remove(req.matches[1]);
                  res.status = 204;
                }));

  // Errors raised by the HTTP layer itself (unknown route, oversized body).
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404   ? "not_found"
                             : res.status == 413 ? "payload_too_large"
                                                 : "http_" + std::to_string(res.status);
    send_error(res, res.status, code, httplib::status_message(res.status));
  });
}

}  // namespace icmf
