#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "json.hpp"
#include <openssl/evp.h>

#include "nmfnav/dataset.hpp"
#include "nmfnav/error.hpp"
#include "nmfnav/nets.hpp"
#include "nmfnav/policy.hpp"
#include "nmfnav/sensors.hpp"
#include "nmfnav/weights_io.hpp"
#include "nmfnav/world.hpp"

namespace nmfnav {

// ---------------------------------------------------------------- base64

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw Error("base64: invalid input");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// ---------------------------------------------------------------- wire messages

enum class DriveMode { manual, autopilot };

inline const char* to_string(DriveMode m) { return m == DriveMode::manual ? "manual" : "auto"; }

struct CmdMsg {
  double steer = 0;     // [-1, 1]
  double throttle = 0;  // [0, 1]
  bool operator==(const CmdMsg&) const = default;
};
struct ModeMsg {
  DriveMode value = DriveMode::manual;
  bool operator==(const ModeMsg&) const = default;
};
struct RecordMsg {
  bool value = false;
  bool operator==(const RecordMsg&) const = default;
};
struct ResetMsg {
  EnvType env = EnvType::normal_city;
  std::uint64_t seed = 0;
  bool operator==(const ResetMsg&) const = default;
};
struct LoadWeightsMsg {
  std::string path;
  bool operator==(const LoadWeightsMsg&) const = default;
};
struct HelloMsg {
  nlohmann::json world;
  nlohmann::json config;
  bool operator==(const HelloMsg&) const = default;
};
struct StateMsg {
  std::uint64_t tick = 0;
  Pose pose;
  std::vector<float> scan;  // -1 marks a miss
  std::size_t image_w = 0, image_h = 0;
  std::vector<std::uint8_t> image;  // interleaved rgb
  std::optional<double> pred;
  DriveMode mode = DriveMode::manual;
  bool recording = false;
  std::uint64_t records = 0;
  bool collided = false;

  bool operator==(const StateMsg& o) const {
    return tick == o.tick && pose.x == o.pose.x && pose.y == o.pose.y && pose.theta == o.pose.theta &&
           scan == o.scan && image_w == o.image_w && image_h == o.image_h && image == o.image && pred == o.pred &&
           mode == o.mode && recording == o.recording && records == o.records && collided == o.collided;
  }
};
struct ErrorMsg {
  std::string msg;
  bool operator==(const ErrorMsg&) const = default;
};

using WireMessage = std::variant<CmdMsg, ModeMsg, RecordMsg, ResetMsg, LoadWeightsMsg, HelloMsg, StateMsg, ErrorMsg>;

class DecodeError : public Error {
 public:
  using Error::Error;
};

namespace wire_detail {

template <class... F>
struct overloaded : F... {
  using F::operator()...;
};
template <class... F>
overloaded(F...) -> overloaded<F...>;

template <typename T>
T field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw DecodeError(std::string("missing field \"") + key + "\"");
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!j.at(key).is_number_unsigned()) throw DecodeError(std::string("field \"") + key + "\" must be a non-negative integer");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DecodeError(std::string("field \"") + key + "\" has the wrong type");
  }
}

inline double finite(double v, const char* key) {
  if (!std::isfinite(v)) throw DecodeError(std::string("field \"") + key + "\" is not finite");
  return v;
}

}  // namespace wire_detail

inline nlohmann::json to_json(const WireMessage& m) {
  using wire_detail::overloaded;
  return std::visit(
      overloaded{
          [](const CmdMsg& c) { return nlohmann::json{{"type", "cmd"}, {"steer", c.steer}, {"throttle", c.throttle}}; },
          [](const ModeMsg& c) { return nlohmann::json{{"type", "mode"}, {"value", to_string(c.value)}}; },
          [](const RecordMsg& c) { return nlohmann::json{{"type", "record"}, {"value", c.value}}; },
          [](const ResetMsg& c) { return nlohmann::json{{"type", "reset"}, {"env", to_string(c.env)}, {"seed", c.seed}}; },
          [](const LoadWeightsMsg& c) { return nlohmann::json{{"type", "load_weights"}, {"path", c.path}}; },
          [](const HelloMsg& c) { return nlohmann::json{{"type", "hello"}, {"world", c.world}, {"config", c.config}}; },
          [](const StateMsg& s) {
            nlohmann::json scan = nlohmann::json::array();
            for (float r : s.scan) scan.push_back(r);
            return nlohmann::json{{"type", "state"},
                                  {"tick", s.tick},
                                  {"pose", {s.pose.x, s.pose.y, s.pose.theta}},
                                  {"scan", scan},
                                  {"image", {{"w", s.image_w}, {"h", s.image_h}, {"b64", base64_encode(s.image)}}},
                                  {"pred", s.pred ? nlohmann::json(*s.pred) : nlohmann::json(nullptr)},
                                  {"mode", to_string(s.mode)},
                                  {"recording", s.recording},
                                  {"records", s.records},
                                  {"collided", s.collided}};
          },
          [](const ErrorMsg& e) { return nlohmann::json{{"type", "error"}, {"msg", e.msg}}; },
      },
      m);
}

/// One JSON document, no trailing newline.
inline std::string encode_message(const WireMessage& m) { return to_json(m).dump(); }

/// Parses one frame. Unknown fields are ignored; anything else malformed
/// raises DecodeError.
inline WireMessage decode_message(std::string_view frame) {
  using wire_detail::field;
  using wire_detail::finite;
  if (frame.find_first_not_of(" \t\r\n") == std::string_view::npos) throw DecodeError("empty frame");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(frame);
  } catch (const nlohmann::json::parse_error& e) {
    throw DecodeError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DecodeError("frame is not a JSON object");
  const auto type = field<std::string>(j, "type");
  if (type == "cmd") {
    const double steer = finite(field<double>(j, "steer"), "steer");
    const double throttle = finite(field<double>(j, "throttle"), "throttle");
    return CmdMsg{steer, throttle};
  }
  if (type == "mode") {
    const auto v = field<std::string>(j, "value");
    if (v == "manual") return ModeMsg{DriveMode::manual};
    if (v == "auto") return ModeMsg{DriveMode::autopilot};
    throw DecodeError("mode must be \"manual\" or \"auto\"");
  }
  if (type == "record") return RecordMsg{field<bool>(j, "value")};
  if (type == "reset") {
    EnvType env;
    try {
      env = parse_env(field<std::string>(j, "env"));
    } catch (const RangeError& e) {
      throw DecodeError(e.what());
    }
    return ResetMsg{env, field<std::uint64_t>(j, "seed")};
  }
  if (type == "load_weights") return LoadWeightsMsg{field<std::string>(j, "path")};
  if (type == "hello") return HelloMsg{field<nlohmann::json>(j, "world"), field<nlohmann::json>(j, "config")};
  if (type == "error") return ErrorMsg{field<std::string>(j, "msg")};
  if (type == "state") {
    StateMsg s;
    s.tick = field<std::uint64_t>(j, "tick");
    const auto pose = field<std::vector<double>>(j, "pose");
    if (pose.size() != 3) throw DecodeError("pose must have 3 components");
    s.pose = {pose[0], pose[1], pose[2]};
    s.scan = field<std::vector<float>>(j, "scan");
    const auto img = field<nlohmann::json>(j, "image");
    s.image_w = field<std::size_t>(img, "w");
    s.image_h = field<std::size_t>(img, "h");
    try {
      s.image = base64_decode(field<std::string>(img, "b64"));
    } catch (const DecodeError&) {
      throw;
    } catch (const Error& e) {
      throw DecodeError(std::string("image: ") + e.what());
    }
    if (s.image.size() != s.image_w * s.image_h * 3) throw DecodeError("image payload does not match its dims");
    if (!j.contains("pred")) throw DecodeError("missing field \"pred\"");
    if (!j["pred"].is_null()) s.pred = field<double>(j, "pred");
    const auto mode = field<std::string>(j, "mode");
    if (mode != "manual" && mode != "auto") throw DecodeError("mode must be \"manual\" or \"auto\"");
    s.mode = mode == "manual" ? DriveMode::manual : DriveMode::autopilot;
    s.recording = field<bool>(j, "recording");
    s.records = field<std::uint64_t>(j, "records");
    s.collided = field<bool>(j, "collided");
    return s;
  }
  throw DecodeError("unknown message type \"" + type + "\"");
}

// ---------------------------------------------------------------- session

struct SessionConfig {
  EnvType env = EnvType::normal_city;
  std::uint64_t seed = 1;
  double area_scale = 0.1;
  double dt = kControlDt;
  SensorConfig sensors;
  NetConfig net;
  std::filesystem::path record_path = "session.navd";
  double inference_budget = 0.1;  // seconds; a slower prediction holds the previous command
  std::optional<std::filesystem::path> weights;  // preloaded at construction
};

/// Simulator state owned by one tick thread. Commands apply at the next tick.
class Session {
 public:
  explicit Session(SessionConfig cfg) : cfg_(std::move(cfg)) {
    reset(cfg_.env, cfg_.seed);
    if (cfg_.weights)
      if (auto err = handle(LoadWeightsMsg{cfg_.weights->string()})) throw Error("session: " + err->msg);
  }

  /// Applies one client message. Returns an error reply when it is rejected;
  /// a rejected message leaves the session unchanged.
  std::optional<ErrorMsg> handle(const WireMessage& m) {
    using wire_detail::overloaded;
    try {
      return std::visit(
          overloaded{
              [&](const CmdMsg& c) -> std::optional<ErrorMsg> {
                pending_ = c;
                return std::nullopt;
              },
              [&](const ModeMsg& c) -> std::optional<ErrorMsg> {
                if (c.value == DriveMode::autopilot && !model_) return ErrorMsg{"no weights loaded"};
                mode_ = c.value;
                return std::nullopt;
              },
              [&](const RecordMsg& c) -> std::optional<ErrorMsg> {
                if (c.value && !writer_) writer_ = std::make_unique<DatasetWriter>(cfg_.record_path, DatasetHeader::from(cfg_.sensors), true);
                if (!c.value) writer_.reset();
                return std::nullopt;
              },
              [&](const ResetMsg& c) -> std::optional<ErrorMsg> {
                reset(c.env, c.seed);
                return std::nullopt;
              },
              [&](const LoadWeightsMsg& c) -> std::optional<ErrorMsg> {
                auto w = std::make_shared<const ModelWeights>(load_weights(c.path));
                NetConfig net = infer_config(*w, cfg_.net);
                model_ = network_model(w, net);
                weights_path_ = c.path;
                return std::nullopt;
              },
              [&](const auto&) -> std::optional<ErrorMsg> { return ErrorMsg{"message type not accepted from clients"}; },
          },
          m);
    } catch (const Error& e) {
      return ErrorMsg{e.what()};
    }
  }

  /// Decodes then applies; a malformed frame becomes an error reply.
  std::optional<ErrorMsg> handle_text(std::string_view frame) {
    try {
      return handle(decode_message(frame));
    } catch (const DecodeError& e) {
      return ErrorMsg{e.what()};
    }
  }

  /// Observe, decide, record, then move. The state message describes the
  /// observation that this tick's command was based on.
  StateMsg tick() {
    const std::uint64_t t = tick_++;
    SensorTriple obs = capture(world_, robot_.pose, t, cfg_.sensors);
    StateMsg s;
    s.tick = t;
    s.pose = robot_.pose;
    s.mode = mode_;
    s.scan.reserve(obs.scan.beams());
    for (float r : obs.scan.ranges) s.scan.push_back(LaserScan::is_miss(r) ? -1.0f : r);
    s.image_w = obs.rgb.width;
    s.image_h = obs.rgb.height;
    s.image = obs.rgb.rgb;

    DriveCommand cmd{0, 0};
    if (mode_ == DriveMode::manual) {
      const double steer = std::clamp(pending_.steer, -1.0, 1.0);
      cmd = clamp_command({std::clamp(pending_.throttle, 0.0, 1.0) * kMaxLinear, steer * kMaxAngular});
      if (writer_) {
        obs.steering = static_cast<float>(steer);
        writer_->append(obs);
      }
      robot_.collided = false;  // a human may back out of contact
    } else if (!robot_.collided) {
      const auto t0 = std::chrono::steady_clock::now();
      const double pred = model_(obs);
      const std::chrono::duration<double> took = std::chrono::steady_clock::now() - t0;
      s.pred = pred;
      cmd = took.count() <= cfg_.inference_budget ? steering_command(pred) : last_cmd_;
    }
    last_cmd_ = cmd;
    if (!robot_.collided) robot_ = step_robot(robot_, cmd, cfg_.dt, world_);
    s.recording = writer_ != nullptr;
    s.records = writer_ ? writer_->count() : 0;
    s.collided = robot_.collided;
    return s;
  }

  HelloMsg hello() const {
    return HelloMsg{world_to_json(world_),
                    {{"dt", cfg_.dt},
                     {"max_linear", kMaxLinear},
                     {"max_angular", kMaxAngular},
                     {"beams", cfg_.sensors.laser.beams},
                     {"increment", cfg_.sensors.laser.increment},
                     {"max_range", cfg_.sensors.laser.max_range},
                     {"image", {{"w", cfg_.sensors.camera.width}, {"h", cfg_.sensors.camera.height}}},
                     {"weights", weights_path_ ? nlohmann::json(weights_path_->string()) : nlohmann::json(nullptr)}}};
  }

  DriveMode mode() const { return mode_; }
  bool recording() const { return writer_ != nullptr; }
  std::uint64_t records() const { return writer_ ? writer_->count() : 0; }
  std::uint64_t ticks() const { return tick_; }
  bool weights_loaded() const { return static_cast<bool>(model_); }
  const WorldModel& world() const { return world_; }
  const RobotState& robot() const { return robot_; }
  const SessionConfig& config() const { return cfg_; }

 private:
  void reset(EnvType env, std::uint64_t seed) {
    world_ = generate_world(env, seed, cfg_.area_scale);
    robot_ = RobotState{};
    robot_.pose = world_.spawn;
    pending_ = {};
    last_cmd_ = {0, 0};
    cfg_.env = env;
    cfg_.seed = seed;
  }

  SessionConfig cfg_;
  WorldModel world_;
  RobotState robot_;
  CmdMsg pending_;
  DriveCommand last_cmd_{0, 0};
  DriveMode mode_ = DriveMode::manual;
  SteeringModel model_;
  std::optional<std::filesystem::path> weights_path_;
  std::unique_ptr<DatasetWriter> writer_;
  std::uint64_t tick_ = 0;
};

}  // namespace nmfnav
