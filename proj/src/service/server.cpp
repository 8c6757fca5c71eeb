#include "mf/service/server.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "mf/common/error.hpp"
#include "mf/dit/generate.hpp"
#include "mf/dit/train.hpp"
#include "mf/geometry/io.hpp"
#include "mf/synth/dataset.hpp"
#include "mf/synth/manifest.hpp"

namespace mf::service {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Conflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int status_for(const std::exception& e) {
  if (dynamic_cast<const NotFound*>(&e)) return 404;
  if (dynamic_cast<const Conflict*>(&e)) return 409;
  if (dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const IoError*>(&e) || dynamic_cast<const json::exception*>(&e))
    return 400;
  return 500;
}

json vec_json(const geom::Vec3& v) { return json::array({v.x, v.y, v.z}); }

geom::Vec3 vec_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(what + " must be an array of 3 numbers");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json pose_json(const geom::CameraPose& p) { return {{"rotation", p.rotation.m}, {"translation", vec_json(p.translation)}}; }

geom::CameraPose pose_from(const json& j, const std::string& what) {
  geom::CameraPose p;
  const auto& r = j.at("rotation");
  if (!r.is_array() || r.size() != 9) throw ValidationError(what + "/rotation must hold 9 numbers");
  for (std::size_t i = 0; i < 9; ++i) p.rotation.m[i] = r.at(i).get<double>();
  p.translation = vec_from(j.at("translation"), what + "/translation");
  if (!p.is_valid()) throw ValidationError(what + "/rotation is not a proper rotation");
  return p;
}

json box_json(const cond::Box3D& b) {
  return {{"center", vec_json(b.center)}, {"half_extents", vec_json(b.half_extents)}};
}

json intrinsics_json(const geom::CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

geom::CameraIntrinsics intrinsics_from(const json& j) {
  geom::CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
  return k;
}

std::string png_base64(const geom::Image& image) {
  const auto bytes = geom::encode_png(image);
  return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

json job_json(const Job& job) {
  const auto s = job.snapshot();
  json j{{"id", s.id}, {"state", to_string(s.state)}, {"progress", s.progress}};
  if (s.state == JobState::kFailed) j["reason"] = s.reason;
  if (s.state == JobState::kDone) {
    j["frames"] = s.frames;
    j["frame_urls"] = json::array();
    for (int k = 0; k < s.frames; ++k) j["frame_urls"].push_back(fmt::format("/jobs/{}/frames/{}.png", s.id, k));
  }
  return j;
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto j = json::parse(req.body);
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  return j;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    reply(res, 200, f());
  } catch (const std::exception& e) {
    reply(res, status_for(e), {{"error", e.what()}});
  }
}

}  // namespace

fs::path data_dir_from_env() {
  const char* v = std::getenv(kDataDirEnv);
  return v && *v ? fs::path(v) : fs::current_path();
}

Service::Service(ServiceOptions options) : options_(std::move(options)), jobs_(options_.workers) {
  fs::create_directories(options_.data_dir);
  options_.data_dir = fs::canonical(options_.data_dir);
}

Service::~Service() = default;

std::shared_ptr<Service::Entry> Service::session(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound(fmt::format("unknown session '{}'", id));
  return it->second;
}

std::shared_ptr<Service::Replay> Service::replay_slot(const std::string& key) {
  std::lock_guard lock(replay_mutex_);
  auto& slot = replays_[key];
  if (!slot) slot = std::make_shared<Replay>();
  return slot;
}

std::string Service::next_id(const char* prefix) {
  static const std::string run = [] {
    std::random_device rd;
    return fmt::format("{:08x}", std::uniform_int_distribution<std::uint32_t>()(rd));
  }();
  return fmt::format("{}{}-{}", prefix, run, ++counter_);
}

fs::path Service::resolve(const std::string& relative) const {
  const fs::path p(relative);
  if (relative.empty() || p.is_absolute()) throw ValidationError(fmt::format("path '{}' must be relative", relative));
  const auto norm = p.lexically_normal();
  if (norm.empty() || *norm.begin() == "..")
    throw ValidationError(fmt::format("path '{}' leaves the data directory", relative));
  return options_.data_dir / norm;
}

struct Routes {
  Service& s;

  // Runs f, or replays the stored response when the request carries an
  // idempotency key seen before.
  template <class F>
  void idempotent(const httplib::Request& req, httplib::Response& res, F&& f) {
    json body;
    try {
      body = parse_body(req);
    } catch (const std::exception& e) {
      return reply(res, 400, {{"error", e.what()}});
    }
    std::string key = req.get_header_value("Idempotency-Key");
    if (body.contains("idempotency_key")) {
      if (!body["idempotency_key"].is_string()) return reply(res, 400, {{"error", "idempotency_key must be a string"}});
      key = body["idempotency_key"].get<std::string>();
      body.erase("idempotency_key");
    }
    if (key.empty()) return guarded(res, [&] { return f(body); });
    const auto slot = s.replay_slot(req.method + " " + req.path + "\n" + key);
    std::lock_guard lock(slot->mutex);
    const auto canonical = body.dump();
    if (slot->body) {
      if (*slot->body != canonical)
        return reply(res, 409, {{"error", "idempotency key reused with a different request"}});
      res.status = slot->status;
      res.set_content(slot->response, "application/json");
      return;
    }
    guarded(res, [&] { return f(body); });
    slot->body = canonical;
    slot->status = res.status;
    slot->response = res.body;
  }

  json create_session(const json& body) {
    geom::Image image;
    geom::DepthMap depth;
    geom::CameraIntrinsics k;
    if (body.contains("fixture")) {
      const auto& f = body["fixture"];
      synth::SceneConfig c;
      c.seed = f.value("seed", std::uint64_t{0});
      c.width = f.value("width", c.width);
      c.height = f.value("height", c.height);
      c.focal_px = f.value("focal", c.focal_px);
      c.object_count = f.value("objects", c.object_count);
      c.num_frames = 2;
      c.camera_motion = synth::CameraMotion::kStatic;
      c.object_motion = synth::ObjectMotion::kStatic;
      const auto scene = synth::generate_scene(c);
      image = scene.frames.front();
      depth = scene.depth0;
      k = scene.annotation.intrinsics;
    } else {
      image = geom::read_png(s.resolve(body.at("image").get<std::string>()));
      depth = geom::read_pfm(s.resolve(body.at("depth").get<std::string>()));
      k = intrinsics_from(body.at("intrinsics"));
    }
    const auto id = s.next_id("s");
    auto entry = std::make_shared<Service::Entry>();
    entry->session = service::create_session(id, s.options_.data_dir / "sessions" / id, image, depth, k);
    const auto points = entry->session.cloud.size();
    {
      std::unique_lock lock(s.sessions_mutex_);
      s.sessions_.emplace(id, entry);
    }
    return json{{"id", id}, {"intrinsics", intrinsics_json(k)}, {"points", points}};
  }

  json select(const std::string& id, const json& body) {
    const auto entry = s.session(id);
    std::lock_guard lock(entry->mutex);
    auto& session = entry->session;
    geom::Mask mask;
    if (body.contains("rect") == body.contains("mask")) throw ValidationError("give exactly one of 'rect' or 'mask'");
    if (body.contains("rect")) {
      const auto r = body["rect"].get<std::vector<int>>();
      if (r.size() != 4) throw ValidationError("rect must be [x0, y0, x1, y1]");
      mask = rect_mask(session.intrinsics.width, session.intrinsics.height, r[0], r[1], r[2], r[3]);
    } else {
      const auto& m = body["mask"];
      mask = synth::mask_from_runs(m.at("runs").get<std::vector<int>>(), m.at("width").get<int>(),
                                   m.at("height").get<int>());
    }
    const auto& o = add_object(session, mask, body.value("label", std::string("object")));
    return json{{"object_id", o.id}, {"label", o.label}, {"box", box_json(o.box)}};
  }

  json preview(const std::string& id, const json& body) {
    PreviewRequest req;
    if (body.contains("frames")) req.frames = body["frames"].get<int>();
    if (body.contains("panel")) {
      const auto& p = body["panel"];
      CameraPanel panel;
      panel.distance = p.value("distance", 0.0);
      panel.elevation = p.value("elevation", 0.0);
      panel.azimuth = p.value("azimuth", 0.0);
      if (p.contains("offset")) panel.offset = vec_from(p["offset"], "/panel/offset");
      req.panel = panel;
    }
    if (body.contains("camera")) {
      std::vector<geom::CameraPose> poses;
      for (std::size_t j = 0; j < body["camera"].size(); ++j)
        poses.push_back(pose_from(body["camera"][j], fmt::format("/camera/{}", j)));
      req.camera = std::move(poses);
    }
    for (const auto& o : body.value("objects", json::array())) {
      std::vector<cond::Keyframe> keys;
      for (const auto& k : o.at("keyframes")) {
        if (!k.is_array() || k.size() != 2) throw ValidationError("keyframes are [frame, [x, y, z]]");
        keys.push_back({k[0].get<int>(), vec_from(k[1], "/objects/keyframes")});
      }
      req.keyframes[o.at("id").get<int>()] = std::move(keys);
    }
    const auto entry = s.session(id);
    std::lock_guard lock(entry->mutex);
    const auto out = service::preview(entry->session, req);
    json frames = json::array();
    for (std::size_t i = 0; i < out.indices.size(); ++i)
      frames.push_back({{"index", out.indices[i]}, {"png", png_base64(out.frames[i])}});
    json camera = json::array();
    for (const auto& p : out.camera) camera.push_back(pose_json(p));
    json boxes = json::array();
    for (const auto& b : out.boxes) {
      json seq = json::array();
      for (std::size_t j = 0; j < b.size(); ++j)
        seq.push_back(b.visible[j] ? json::array({b.boxes[j].x0, b.boxes[j].y0, b.boxes[j].x1, b.boxes[j].y1})
                                   : json(nullptr));
      boxes.push_back({{"object_id", b.object_id}, {"boxes", std::move(seq)}});
    }
    return json{{"frames", std::move(frames)}, {"camera", std::move(camera)}, {"boxes", std::move(boxes)}};
  }

  json export_spec(const std::string& id, const json& body) {
    const auto entry = s.session(id);
    std::lock_guard lock(entry->mutex);
    auto& session = entry->session;
    auto draft = session;
    if (body.contains("caption")) draft.caption = body["caption"].get<std::string>();
    if (body.contains("seed")) draft.seed = body["seed"].get<std::uint64_t>();
    const auto spec = session_spec(draft);
    cond::validate_spec(spec);
    cond::write_spec(spec, session.dir / kSpecFile);
    session.caption = draft.caption;
    session.seed = draft.seed;
    return json::parse(cond::spec_to_json(spec));
  }

  json generate(const json& body) {
    cond::ControlSpec spec;
    {
      const auto entry = s.session(body.at("session").get<std::string>());
      std::lock_guard lock(entry->mutex);
      spec = session_spec(entry->session);
    }
    if (body.contains("caption")) spec.caption = body["caption"].get<std::string>();
    if (body.contains("seed")) spec.seed = body["seed"].get<std::uint64_t>();
    spec.reference_image = spec.resolve(spec.reference_image);
    spec.depth_map = spec.resolve(spec.depth_map);
    spec.base_dir.clear();
    cond::validate_spec(spec);
    dit::GenerateOptions options;
    options.steps = body.value("steps", dit::kDefaultSamplerSteps);
    if (options.steps < 1 || options.steps > kMaxSamplerSteps)
      throw ValidationError(fmt::format("steps must be in [1, {}]", kMaxSamplerSteps));

    const auto checkpoint = s.resolve(body.value("checkpoint", std::string(kDefaultCheckpoint)));
    const auto id = s.next_id("j");
    const auto dir = s.options_.data_dir / "jobs" / id;
    fs::create_directories(dir);
    cond::write_spec(spec, dir / kSpecFile);
    if (!fs::exists(checkpoint / "model.json") || !fs::exists(checkpoint / "model.ckpt"))
      return job_json(*s.jobs_.reject(id, fmt::format("checkpoint not found: {}", checkpoint.string())));
    auto job = s.jobs_.submit(id, [spec, options, checkpoint, dir](Job& job) mutable {
      const auto model = dit::load_model(checkpoint);
      options.cancel = &job.cancel_flag();
      options.progress = [&job](int done, int total) { job.report_progress(double(done) / total); };
      const auto frames = dit::generate(model, spec, options);
      if (job.cancel_requested()) throw CancelledError("generation cancelled");
      const auto tmp = dir / "frames.tmp";
      fs::remove_all(tmp);
      synth::write_frames(frames, tmp);
      fs::rename(tmp, dir / "frames");
      return int(frames.size());
    });
    return job_json(*job);
  }

  std::shared_ptr<Job> job(const std::string& id) {
    auto j = s.jobs_.find(id);
    if (!j) throw NotFound(fmt::format("unknown job '{}'", id));
    return j;
  }

  void mount(httplib::Server& server) {
    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      idempotent(req, res, [&](const json& b) { return create_session(b); });
    });
    server.Post(R"(/sessions/([^/]+)/select)", [this](const httplib::Request& req, httplib::Response& res) {
      idempotent(req, res, [&](const json& b) { return select(req.matches[1], b); });
    });
    server.Post(R"(/sessions/([^/]+)/preview)", [this](const httplib::Request& req, httplib::Response& res) {
      idempotent(req, res, [&](const json& b) { return preview(req.matches[1], b); });
    });
    server.Post(R"(/sessions/([^/]+)/spec)", [this](const httplib::Request& req, httplib::Response& res) {
      idempotent(req, res, [&](const json& b) { return export_spec(req.matches[1], b); });
    });
    server.Post("/jobs/generate", [this](const httplib::Request& req, httplib::Response& res) {
      idempotent(req, res, [&](const json& b) { return generate(b); });
    });
    server.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return job_json(*job(req.matches[1])); });
    });
    server.Delete(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto j = job(req.matches[1]);
        j->cancel();
        if (j->state() == JobState::kDone) throw Conflict(fmt::format("job '{}' already finished", j->id()));
        return job_json(*j);
      });
    });
    server.Get(R"(/jobs/([^/]+)/frames/(\d+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto j = job(req.matches[1]);
        const auto snap = j->snapshot();
        if (snap.state != JobState::kDone) throw Conflict(fmt::format("job '{}' is {}", snap.id, to_string(snap.state)));
        const int k = std::stoi(req.matches[2]);
        if (k >= snap.frames) throw NotFound(fmt::format("job '{}' has {} frames", snap.id, snap.frames));
        std::ifstream f(s.options_.data_dir / "jobs" / snap.id / "frames" / fmt::format("{:03d}.png", k),
                        std::ios::binary);
        if (!f) throw IoError("frame file is missing");
        std::ostringstream bytes;
        bytes << f.rdbuf();
        res.status = 200;
        res.set_content(bytes.str(), "image/png");
      } catch (const std::exception& e) {
        reply(res, status_for(e), {{"error", e.what()}});
      }
    });
  }
};

void Service::mount(httplib::Server& server) {
  auto routes = std::make_shared<Routes>(Routes{*this});
  routes->mount(server);
  // Handlers capture the raw pointer; keep the routes alive with the service.
  routes_ = routes;
}

void serve(const ServiceOptions& options, const std::string& host, int port) {
  Service service(options);
  httplib::Server server;
  service.mount(server);
  if (!server.listen(host, port)) throw IoError(fmt::format("cannot listen on {}:{}", host, port));
}

}  // namespace mf::service
