#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "icmf/clicks.hpp"
#include "icmf/mask.hpp"
#include "icmf/tensor.hpp"

namespace httplib {
class Server;
}

namespace icmf {

class Segmenter;

/// An error with an HTTP status and a short machine-readable code.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

/// Maps between original image pixels and the square model grid. The
/// original image is padded bottom/right to a square of side max(h, w) and
/// then scaled to `model_side`; both directions sample pixel centres.
struct Geometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t model_side = 0;

  std::size_t padded_side() const { return std::max(height, width); }
  int to_model(int orig) const;
  int to_orig(int model) const;
  /// Model-space mask -> mask at the original (unpadded) resolution.
  BitMask mask_to_orig(const BitMask& model_mask) const;
};

/// {"h", "w", "runs": [start, len, ...]} over row-major foreground pixels.
nlohmann::json encode_rle(const BitMask& m);
BitMask decode_rle(const nlohmann::json& j);

struct ServiceOptions {
  std::size_t model_side = 64;
  std::size_t max_sessions = 64;
  std::chrono::seconds idle_ttl{30 * 60};
  std::size_t max_input_side = 2048;
};

struct CreatedSession {
  std::string id;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// All mutable interaction state. The segmenter (and any model behind it) is
/// shared read-only; each session serializes its own operations.
class SessionStore {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  SessionStore(const Segmenter& seg, ServiceOptions opts, Clock clock = {});

  /// Decodes the image (and an optional ground-truth mask of the same size,
  /// which enables IoU reporting and oracle segmenters).
  CreatedSession create(const std::string& image_png, const std::string* gt_png = nullptr);
  /// Click in original coordinates. Returns {clicks, mask_summary, iou?}.
  nlohmann::json add_click(const std::string& id, const Click& click);
  std::string mask_png(const std::string& id);
  nlohmann::json mask_rle(const std::string& id);
  BitMask mask(const std::string& id);
  nlohmann::json undo(const std::string& id);
  nlohmann::json reset(const std::string& id);
  nlohmann::json summary(const std::string& id);
  void remove(const std::string& id);

  std::size_t size() const;
  /// Drops sessions idle for longer than the TTL; returns how many.
  std::size_t purge_expired();

 private:
  struct Snapshot {
    BitMask mask;  // binarized prediction, model space
    Tensor prob;
  };
  struct Session {
    std::mutex mu;
    Geometry geom;
    Tensor image;                  // [3, S, S]
    std::optional<BitMask> gt;     // model space
    std::optional<BitMask> gt_orig;
    InteractionState state;
    std::vector<Snapshot> history;  // one per click
    std::chrono::steady_clock::time_point last_used;
  };

  std::shared_ptr<Session> find(const std::string& id);
  nlohmann::json summary_locked(const Session& s) const;
  BitMask mask_locked(const Session& s) const;
  std::chrono::steady_clock::time_point now() const;

  const Segmenter& seg_;
  ServiceOptions opts_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

/// Registers the HTTP routes on `server`. JSON errors are {code, message}.
void install_routes(httplib::Server& server, SessionStore& store);

}  // namespace icmf
