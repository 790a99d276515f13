#include "icseg/service.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "httplib.h"
#include "icseg/dataset.hpp"
#include "icseg/geometry.hpp"
#include "icseg/image_io.hpp"
#include "icseg/morphology.hpp"
#include "icseg/seed.hpp"

namespace icseg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string now_iso() {
  const auto t = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << "." << std::setw(3) << std::setfill('0') << ms << "Z";
  return os.str();
}

json click_json(const Click& c) { return {{"row", c.row}, {"col", c.col}, {"polarity", to_string(c.polarity)}}; }

json clicks_json(const ClickSet& clicks) {
  json a = json::array();
  for (const auto& c : clicks) a.push_back(click_json(c));
  return a;
}

}  // namespace

json to_json(const SessionEvent& e) {
  switch (e.type) {
    case SessionEvent::Type::click:
      return {{"type", "click"}, {"row", e.click.row}, {"col", e.click.col}, {"polarity", to_string(e.click.polarity)}};
    case SessionEvent::Type::undo:
      return {{"type", "undo"}};
    case SessionEvent::Type::finalize:
      return {{"type", "finalize"}};
  }
  return {};
}

SessionEvent event_from_json(const json& j) {
  SessionEvent e;
  const std::string type = j.at("type").get<std::string>();
  if (type == "click") {
    e.type = SessionEvent::Type::click;
    e.click.row = j.at("row").get<int>();
    e.click.col = j.at("col").get<int>();
    e.click.polarity = polarity_from_string(j.at("polarity").get<std::string>());
  } else if (type == "undo") {
    e.type = SessionEvent::Type::undo;
  } else if (type == "finalize") {
    e.type = SessionEvent::Type::finalize;
  } else {
    throw std::invalid_argument("unknown event type '" + type + "'");
  }
  return e;
}

// ---------------------------------------------------------------------------

SessionMachine::SessionMachine(const SingleObjectModel& single, const MultiObjectModel& multi, const Image& image)
    : single_(&single), multi_(&multi), image_(&image) {
  state_.masks.push_back(empty_mask(shape_of(image)));
}

BinaryMask SessionMachine::run() const {
  const BinaryMask& prev = state_.masks.back();
  if (state_.mode == SessionMode::single) return binarize(single_->predict(*image_, state_.clicks, prev));
  return binarize(multi_->predict(*image_, state_.clicks, prev, *state_.exemplar));
}

void SessionMachine::click(const Click& c) {
  if (c.row < 0 || c.row >= image_->height() || c.col < 0 || c.col >= image_->width())
    throw ServiceError(400, "out_of_bounds",
                       "click (" + std::to_string(c.row) + ", " + std::to_string(c.col) + ") is outside the " +
                           std::to_string(image_->height()) + "x" + std::to_string(image_->width()) + " image");
  if (state_.mode == SessionMode::single && state_.clicks.empty() && !c.positive())
    throw ServiceError(409, "first_click_negative", "the first click on an object must be positive");
  push_click(state_.clicks, c.row, c.col, c.polarity);
  BinaryMask m = run();
  state_.masks.push_back(std::move(m));
}

void SessionMachine::apply(const SessionEvent& e) {
  switch (e.type) {
    case SessionEvent::Type::click:
      click(e.click);
      return;
    case SessionEvent::Type::undo:
      if (state_.clicks.empty()) throw ServiceError(409, "nothing_to_undo", "the click history is empty");
      state_.clicks.pop_back();
      state_.masks.pop_back();
      return;
    case SessionEvent::Type::finalize: {
      if (state_.mode == SessionMode::multi)
        throw ServiceError(409, "already_finalized", "the exemplar is already finalized");
      if (state_.clicks.empty()) throw ServiceError(409, "no_mask", "no clicks yet, nothing to finalize");
      if (!state_.mask().any()) throw ServiceError(409, "empty_mask", "the current mask is empty");
      ExemplarTarget ex(state_.mask(), state_.clicks);
      ex.freeze();
      state_.exemplar = std::move(ex);
      state_.mode = SessionMode::multi;
      state_.clicks.clear();
      state_.masks.assign(1, empty_mask(shape_of(*image_)));
      // round 0: propagation from the exemplar alone
      BinaryMask m = run();
      state_.masks.assign(1, std::move(m));
      return;
    }
  }
}

json mask_to_wire(const BinaryMask& m) {
  const Rle r = rle_encode(m);
  return {{"size", {r.height, r.width}}, {"counts", rle_counts_base64(r)}};
}

BinaryMask mask_from_wire(const json& j) {
  const auto size = j.at("size");
  if (!size.is_array() || size.size() != 2) throw std::invalid_argument("mask size must be [height, width]");
  return rle_decode(rle_from_base64(j.at("counts").get<std::string>(), size[0].get<int>(), size[1].get<int>()));
}

// ---------------------------------------------------------------------------

SegmentationService::SegmentationService(std::shared_ptr<const SingleObjectModel> single,
                                         std::shared_ptr<const MultiObjectModel> multi, ServiceConfig config)
    : single_(std::move(single)), multi_(std::move(multi)), config_(std::move(config)) {
  if (!single_ || !multi_) throw std::invalid_argument("service needs both models");
  std::random_device rd;
  id_state_ = derive_seed({rd(), rd(), static_cast<std::uint64_t>(
                                           std::chrono::steady_clock::now().time_since_epoch().count())});
  if (!config_.session_dir.empty()) fs::create_directories(config_.session_dir);
}

std::string SegmentationService::new_id() {
  std::lock_guard<std::mutex> lock(id_mutex_);
  id_state_ = splitmix64(id_state_);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << id_state_;
  return os.str();
}

std::shared_ptr<SegmentationService::Session> SegmentationService::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown_session", "no session '" + id + "'");
  return it->second;
}

json SegmentationService::view(const Session& s) const {
  const SessionState& st = s.machine->state();
  const bool multi = st.mode == SessionMode::multi;
  json j = {{"session_id", s.id},
            {"mode", multi ? "multi" : "single"},
            {"model", multi ? "icmformer++" : "icmformer"},
            {"height", s.image.height()},
            {"width", s.image.width()},
            {"clicks", clicks_json(st.clicks)},
            {"history_length", s.events.size()},
            {"mask", mask_to_wire(st.mask())},
            {"area", st.mask().count()},
            {"created", s.created},
            {"updated", s.updated}};
  if (st.exemplar)
    j["exemplar"] = {{"mask", mask_to_wire(st.exemplar->mask())}, {"clicks", clicks_json(st.exemplar->clicks())}};
  if (s.gt) j["iou"] = iou(st.mask(), *s.gt);
  return j;
}

void SegmentationService::persist_event(const Session& s, const SessionEvent& e) const {
  if (config_.session_dir.empty()) return;
  std::ofstream out(fs::path(config_.session_dir) / s.id / "events.jsonl", std::ios::app);
  json line = to_json(e);
  line["time"] = s.updated;
  out << line.dump() << "\n" << std::flush;
  if (!out) throw ServiceError(500, "storage", "cannot append to the event log of " + s.id);
}

void SegmentationService::append(Session& s, const SessionEvent& e) {
  s.machine->apply(e);  // throws before anything is recorded
  s.events.push_back(e);
  s.updated = now_iso();
  persist_event(s, e);
}

json SegmentationService::create_session(const std::string& image_bytes, const std::optional<BinaryMask>& gt) {
  if (image_bytes.size() > config_.max_upload_bytes)
    throw ServiceError(413, "upload_too_large", "upload exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
  auto s = std::make_shared<Session>();
  try {
    s->image = decode_image(image_bytes);
  } catch (const std::exception& e) {
    throw ServiceError(400, "invalid_image", std::string("cannot decode image: ") + e.what());
  }
  if (s->image.height() > config_.max_image_side || s->image.width() > config_.max_image_side)
    throw ServiceError(413, "image_too_large",
                       "image side exceeds " + std::to_string(config_.max_image_side) + " pixels");
  if (gt) {
    if (gt->rows() != s->image.height() || gt->cols() != s->image.width())
      throw ServiceError(400, "invalid_gt", "ground truth size differs from the image");
    s->gt = *gt;
  }
  s->machine = std::make_unique<SessionMachine>(*single_, *multi_, s->image);
  s->created = s->updated = now_iso();
  {
    std::unique_lock lock(sessions_mutex_);
    do s->id = new_id();
    while (sessions_.count(s->id));
    sessions_[s->id] = s;
  }
  if (!config_.session_dir.empty()) {
    const fs::path dir = fs::path(config_.session_dir) / s->id;
    fs::create_directories(dir);
    write_file((dir / "upload").string(), image_bytes);
    json meta = {{"session_id", s->id}, {"created", s->created}, {"height", s->image.height()}, {"width", s->image.width()}};
    if (s->gt) meta["gt"] = mask_to_wire(*s->gt);
    write_file((dir / "session.json").string(), meta.dump(2));
    std::ofstream(dir / "events.jsonl").flush();
  }
  std::lock_guard<std::mutex> lock(s->mutex);
  return view(*s);
}

json SegmentationService::submit_click(const std::string& id, int row, int col, Polarity polarity) {
  auto s = find(id);
  std::lock_guard<std::mutex> lock(s->mutex);
  SessionEvent e;
  e.type = SessionEvent::Type::click;
  e.click = Click{row, col, polarity, 0};
  append(*s, e);
  return view(*s);
}

json SegmentationService::undo(const std::string& id) {
  auto s = find(id);
  std::lock_guard<std::mutex> lock(s->mutex);
  append(*s, SessionEvent{SessionEvent::Type::undo, {}});
  return view(*s);
}

json SegmentationService::finalize_exemplar(const std::string& id) {
  auto s = find(id);
  std::lock_guard<std::mutex> lock(s->mutex);
  append(*s, SessionEvent{SessionEvent::Type::finalize, {}});
  return view(*s);
}

json SegmentationService::mask(const std::string& id) const {
  auto s = find(id);
  std::lock_guard<std::mutex> lock(s->mutex);
  return view(*s);
}

json SegmentationService::export_coco(const std::string& id, const std::string& category) const {
  auto s = find(id);
  std::lock_guard<std::mutex> lock(s->mutex);
  const SessionState& st = s->machine->state();
  std::vector<BinaryMask> instances;
  if (st.mode == SessionMode::single) {
    if (!st.clicks.empty() && st.mask().any()) instances.push_back(st.mask());
  } else {
    const BinaryMask& ex = st.exemplar->mask();
    instances.push_back(ex);
    // every predicted component apart from the exemplar's becomes an instance
    const Components cc = connected_components(st.mask());
    for (int k = 1; k <= cc.count(); ++k) {
      const BinaryMask part = cc.component(k);
      if (!(part && ex).any()) instances.push_back(part);
    }
  }
  if (instances.empty()) throw ServiceError(409, "empty_session", "the session has no mask to export");
  CocoDataset d;
  d.images.push_back({1, s->id + ".png", s->image.height(), s->image.width()});
  d.categories.push_back({1, category});
  for (std::size_t i = 0; i < instances.size(); ++i) {
    CocoAnnotation a;
    a.id = static_cast<std::int64_t>(i + 1);
    a.image_id = 1;
    a.category_id = 1;
    a.rle = rle_encode(instances[i]);
    d.annotations.push_back(std::move(a));
  }
  return coco_to_json(d);
}

json SegmentationService::list() const {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::shared_lock lock(sessions_mutex_);
    for (const auto& [id, s] : sessions_) all.push_back(s);
  }
  json out = json::array();
  for (const auto& s : all) {
    std::lock_guard<std::mutex> lock(s->mutex);
    const auto& st = s->machine->state();
    out.push_back({{"session_id", s->id},
                   {"mode", st.mode == SessionMode::multi ? "multi" : "single"},
                   {"clicks", st.clicks.size()},
                   {"created", s->created},
                   {"updated", s->updated}});
  }
  return out;
}

std::vector<SessionEvent> SegmentationService::events(const std::string& id) const {
  auto s = find(id);
  std::lock_guard<std::mutex> lock(s->mutex);
  return s->events;
}

SessionState SegmentationService::replay(const std::string& id) const {
  auto s = find(id);
  std::vector<SessionEvent> log;
  Image image;
  {
    std::lock_guard<std::mutex> lock(s->mutex);
    log = s->events;
    image = s->image;
  }
  if (!config_.session_dir.empty()) {
    // prefer the persisted log and upload: that is what a restart would see
    const fs::path dir = fs::path(config_.session_dir) / id;
    image = decode_image(read_file((dir / "upload").string()));
    log.clear();
    std::ifstream in(dir / "events.jsonl");
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) log.push_back(event_from_json(json::parse(line)));
  }
  SessionMachine m(*single_, *multi_, image);
  for (const auto& e : log) m.apply(e);
  return m.state();
}

std::size_t SegmentationService::load_sessions() {
  if (config_.session_dir.empty()) return 0;
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(config_.session_dir)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "session.json")) continue;
    auto s = std::make_shared<Session>();
    const json meta = json::parse(read_file((entry.path() / "session.json").string()));
    s->id = meta.at("session_id").get<std::string>();
    s->created = s->updated = meta.at("created").get<std::string>();
    s->image = decode_image(read_file((entry.path() / "upload").string()));
    if (meta.contains("gt")) s->gt = mask_from_wire(meta["gt"]);
    s->machine = std::make_unique<SessionMachine>(*single_, *multi_, s->image);
    std::ifstream in(entry.path() / "events.jsonl");
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      const SessionEvent e = event_from_json(j);
      s->machine->apply(e);
      s->events.push_back(e);
      if (j.contains("time")) s->updated = j["time"].get<std::string>();
    }
    std::unique_lock lock(sessions_mutex_);
    sessions_[s->id] = s;
    ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ServiceError& e) {
      send_json(res, e.status(), {{"code", e.code()}, {"message", e.what()}});
    } catch (const json::exception& e) {
      send_json(res, 400, {{"code", "invalid_request"}, {"message", e.what()}});
    } catch (const std::invalid_argument& e) {
      send_json(res, 400, {{"code", "invalid_request"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"code", "internal"}, {"message", e.what()}});
    }
  };
}

}  // namespace

void install_routes(httplib::Server& server, SegmentationService& service) {
  server.set_payload_max_length(service.config().max_upload_bytes + (1u << 20));
  // errors raised inside httplib (unknown route, oversized or url-encoded bodies) come without a body
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404   ? "not_found"
                             : res.status == 413 ? "payload_too_large"
                                                 : "http_" + std::to_string(res.status);
    send_json(res, res.status, {{"code", code}, {"message", httplib::status_message(res.status)}});
  });
  server.Post("/api/sessions", guarded([&](const httplib::Request& req, httplib::Response& res) {
                std::string bytes;
                std::optional<BinaryMask> gt;
                if (req.is_multipart_form_data()) {
                  if (!req.has_file("image")) throw ServiceError(400, "invalid_request", "multipart field 'image' missing");
                  bytes = req.get_file_value("image").content;
                } else if (req.get_header_value("Content-Type").find("application/json") != std::string::npos) {
                  const json body = json::parse(req.body);
                  bytes = base64_decode(body.at("image").get<std::string>());
                  if (body.contains("gt")) gt = mask_from_wire(body["gt"]);
                } else {
                  bytes = req.body;
                }
                send_json(res, 201, service.create_session(bytes, gt));
              }));
  server.Get("/api/sessions", guarded([&](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, service.list());
             }));
  server.Post(R"(/api/sessions/([0-9a-f]+)/clicks)", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const json body = json::parse(req.body);
                const Polarity p = polarity_from_string(body.at("polarity").get<std::string>());
                send_json(res, 200,
                          service.submit_click(req.matches[1], body.at("row").get<int>(), body.at("col").get<int>(), p));
              }));
  server.Delete(R"(/api/sessions/([0-9a-f]+)/clicks/last)",
                guarded([&](const httplib::Request& req, httplib::Response& res) {
                  send_json(res, 200, service.undo(req.matches[1]));
                }));
  server.Post(R"(/api/sessions/([0-9a-f]+)/exemplar/finalize)",
              guarded([&](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, service.finalize_exemplar(req.matches[1]));
              }));
  server.Get(R"(/api/sessions/([0-9a-f]+)/mask)", guarded([&](const httplib::Request& req, httplib::Response& res) {
               send_json(res, 200, service.mask(req.matches[1]));
             }));
  server.Get(R"(/api/sessions/([0-9a-f]+)/export)", guarded([&](const httplib::Request& req, httplib::Response& res) {
               const std::string category = req.has_param("category") ? req.get_param_value("category") : "object";
               send_json(res, 200, service.export_coco(req.matches[1], category));
             }));
  server.Get(R"(/api/sessions/([0-9a-f]+)/events)", guarded([&](const httplib::Request& req, httplib::Response& res) {
               json out = json::array();
               for (const auto& e : service.events(req.matches[1])) out.push_back(to_json(e));
               send_json(res, 200, out);
             }));
  if (!service.config().static_dir.empty() && !server.set_mount_point("/", service.config().static_dir))
    throw std::runtime_error("static directory " + service.config().static_dir + " does not exist");
}

void serve(SegmentationService& service) {
  httplib::Server server;
  install_routes(server, service);
  if (!server.listen(service.config().host, service.config().port))
    throw std::runtime_error("cannot listen on " + service.config().host + ":" + std::to_string(service.config().port));
}

}  // namespace icseg
