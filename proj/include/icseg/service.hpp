#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "icseg/model.hpp"
#include "icseg/rle.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace icseg {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  /// Event logs and images are kept here; empty keeps sessions in memory only.
  std::string session_dir;
  int max_image_side = 2048;
  std::size_t max_upload_bytes = 32u << 20;
  /// Optional directory served at / (the browser annotator build).
  std::string static_dir;
};

/// HTTP status plus a stable machine-readable code.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

enum class SessionMode { single, multi };

/// One entry of a session's append-only event log.
struct SessionEvent {
  enum class Type { click, undo, finalize };
  Type type = Type::click;
  Click click;  ///< click events only
};

nlohmann::json to_json(const SessionEvent& e);
SessionEvent event_from_json(const nlohmann::json& j);

/// Session state as a fold over its events.
struct SessionState {
  SessionMode mode = SessionMode::single;
  /// Click history of the current mode (single-object clicks, then recall clicks).
  ClickSet clicks;
  /// masks[k] is the mask after the first k clicks of the current mode.
  std::vector<BinaryMask> masks;
  std::optional<ExemplarTarget> exemplar;

  const BinaryMask& mask() const { return masks.back(); }
};

/// Applies events one by one; throws ServiceError on protocol violations.
class SessionMachine {
 public:
  SessionMachine(const SingleObjectModel& single, const MultiObjectModel& multi, const Image& image);

  void apply(const SessionEvent& e);
  const SessionState& state() const { return state_; }

 private:
  void click(const Click& c);
  BinaryMask run() const;

  const SingleObjectModel* single_;
  const MultiObjectModel* multi_;
  const Image* image_;
  SessionState state_;
};

/// Wire form of a mask: {"size": [h, w], "counts": base64 little-endian uint32 runs}.
nlohmann::json mask_to_wire(const BinaryMask& m);
BinaryMask mask_from_wire(const nlohmann::json& j);

class SegmentationService {
 public:
  SegmentationService(std::shared_ptr<const SingleObjectModel> single, std::shared_ptr<const MultiObjectModel> multi,
                      ServiceConfig config = {});

  /// image_bytes: PNG or JPEG. gt: optional ground truth for IoU read-outs.
  nlohmann::json create_session(const std::string& image_bytes, const std::optional<BinaryMask>& gt = {});
  nlohmann::json submit_click(const std::string& id, int row, int col, Polarity polarity);
  nlohmann::json undo(const std::string& id);
  nlohmann::json finalize_exemplar(const std::string& id);
  nlohmann::json mask(const std::string& id) const;
  nlohmann::json export_coco(const std::string& id, const std::string& category = "object") const;
  nlohmann::json list() const;

  /// The session's event log and a from-scratch replay of it.
  std::vector<SessionEvent> events(const std::string& id) const;
  SessionState replay(const std::string& id) const;

  /// Reloads every session found under session_dir; returns how many.
  std::size_t load_sessions();

  const ServiceConfig& config() const { return config_; }

 private:
  struct Session {
    std::string id;
    Image image;
    std::optional<BinaryMask> gt;
    std::vector<SessionEvent> events;
    std::unique_ptr<SessionMachine> machine;
    std::string created;
    std::string updated;
    mutable std::mutex mutex;
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  nlohmann::json view(const Session& s) const;
  void append(Session& s, const SessionEvent& e);
  void persist_event(const Session& s, const SessionEvent& e) const;
  std::string new_id();

  std::shared_ptr<const SingleObjectModel> single_;
  std::shared_ptr<const MultiObjectModel> multi_;
  ServiceConfig config_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex id_mutex_;
  std::uint64_t id_state_;
};

/// Registers the HTTP routes on `server`.
void install_routes(httplib::Server& server, SegmentationService& service);

/// Blocking server loop.
void serve(SegmentationService& service);

}  // namespace icseg
