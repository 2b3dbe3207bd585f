#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <string>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "nmfnav/gateway.hpp"
#include "nmfnav/server.hpp"

using namespace nmfnav;
namespace fs = std::filesystem;
namespace asio = boost::asio;
namespace beast = boost::beast;
using tcp = asio::ip::tcp;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("nmfnav_gateway_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

StateMsg random_state(Rng& rng, std::size_t beams = 181, std::size_t w = 8, std::size_t h = 6) {
  StateMsg s;
  s.tick = rng.next_u64() >> 12;
  s.pose = {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-3, 3)};
  for (std::size_t i = 0; i < beams; ++i) s.scan.push_back(rng.uniform() < 0.2 ? -1.0f : static_cast<float>(rng.uniform(0, 16)));
  s.image_w = w;
  s.image_h = h;
  for (std::size_t i = 0; i < w * h * 3; ++i) s.image.push_back(static_cast<std::uint8_t>(rng.next_u64()));
  if (rng.uniform() < 0.5) s.pred = rng.uniform(-1, 1);
  s.mode = rng.uniform() < 0.5 ? DriveMode::manual : DriveMode::autopilot;
  s.recording = rng.uniform() < 0.5;
  s.records = rng.next_u64() >> 40;
  s.collided = rng.uniform() < 0.5;
  return s;
}

SessionConfig small_session(const std::string& record_name = "session.navd") {
  SessionConfig c;
  c.env = EnvType::normal_city;
  c.seed = 3;
  c.record_path = temp_path(record_name);
  fs::remove(c.record_path);
  c.net.points = 64;
  return c;
}

}  // namespace

TEST(Base64, KnownVectors) {
  auto bytes = [](std::string_view s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  EXPECT_EQ(base64_encode(bytes("")), "");
  EXPECT_EQ(base64_encode(bytes("f")), "Zg==");
  EXPECT_EQ(base64_encode(bytes("fo")), "Zm8=");
  EXPECT_EQ(base64_encode(bytes("foo")), "Zm9v");
  EXPECT_EQ(base64_encode(bytes("foobar")), "Zm9vYmFy");
  EXPECT_EQ(base64_decode("Zm8="), bytes("fo"));
  EXPECT_THROW(base64_decode("Zm8"), Error);
  EXPECT_THROW(base64_decode("Z!8="), Error);
  Rng rng(4);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> v(n);
    for (auto& b : v) b = static_cast<std::uint8_t>(rng.next_u64());
    EXPECT_EQ(base64_decode(base64_encode(v)), v);
  }
}

TEST(WireMessage, RoundTripsEveryType) {
  Rng rng(11);
  for (int rep = 0; rep < 25; ++rep) {
    const auto world = generate_world(kAllEnvs[static_cast<std::size_t>(rep) % kAllEnvs.size()], rng.next_u64() % 1000);
    const std::vector<WireMessage> msgs{
        CmdMsg{rng.uniform(-1, 1), rng.uniform(0, 1)},
        ModeMsg{rep % 2 ? DriveMode::manual : DriveMode::autopilot},
        RecordMsg{rep % 2 == 0},
        ResetMsg{kAllEnvs[static_cast<std::size_t>(rep) % kAllEnvs.size()], rng.next_u64()},
        LoadWeightsMsg{"/tmp/w" + std::to_string(rng.next_u64()) + ".navw"},
        HelloMsg{world_to_json(world), {{"dt", 0.1}, {"beams", 181}}},
        random_state(rng),
        ErrorMsg{"oops " + std::to_string(rep)},
    };
    for (const auto& m : msgs) {
      const auto back = decode_message(encode_message(m));
      EXPECT_EQ(back.index(), m.index());
      EXPECT_TRUE(back == m) << encode_message(m).substr(0, 120);
    }
  }
}

TEST(WireMessage, MalformedFramesRaiseDecodeError) {
  EXPECT_THROW(decode_message(""), DecodeError);
  EXPECT_THROW(decode_message("  \n"), DecodeError);
  EXPECT_THROW(decode_message("{not json"), DecodeError);
  EXPECT_THROW(decode_message("[1,2]"), DecodeError);
  EXPECT_THROW(decode_message(R"({"steer":0})"), DecodeError);
  EXPECT_THROW(decode_message(R"({"type":"warp"})"), DecodeError);
  EXPECT_THROW(decode_message(R"({"type":"cmd","steer":0})"), DecodeError);
  EXPECT_THROW(decode_message(R"({"type":"cmd","steer":"left","throttle":1})"), DecodeError);
  EXPECT_THROW(decode_message(R"({"type":"mode","value":"turbo"})"), DecodeError);
  EXPECT_THROW(decode_message(R"({"type":"reset","env":"moon","seed":1})"), DecodeError);
  EXPECT_THROW(decode_message(R"({"type":"reset","env":"cave","seed":-1})"), DecodeError);
  try {
    decode_message("");
  } catch (const DecodeError& e) {
    EXPECT_STREQ(e.what(), "empty frame");
  }
}

TEST(WireMessage, UnknownFieldsAreIgnored) {
  const auto m = decode_message(R"({"type":"cmd","steer":0.25,"throttle":1,"source":"keyboard","v":2})");
  EXPECT_TRUE(m == WireMessage(CmdMsg{0.25, 1.0}));
}

TEST(WireMessage, StatePayloadSizeMatchesSchema) {
  Rng rng(5);
  StateMsg s = random_state(rng, 181, 64, 48);
  s.scan.assign(181, -1.0f);  // each entry serializes as "-1.0"
  StateMsg bare = s;
  bare.scan.clear();
  bare.image.clear();
  bare.image_w = bare.image_h = 0;
  const std::size_t w_digits = 2, h_digits = 2;  // "64", "48" replace "0", "0"
  const std::size_t image_bytes = 64 * 48 * 3;
  const std::size_t b64 = 4 * ((image_bytes + 2) / 3);
  const std::size_t scan_text = 181 * 4 + 180;
  const std::size_t expected = encode_message(bare).size() + scan_text + b64 + (w_digits - 1) + (h_digits - 1);
  const auto text = encode_message(s);
  EXPECT_EQ(text.size(), expected);
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j["scan"].size(), 181u);
  EXPECT_EQ(j["image"]["b64"].get<std::string>().size(), b64);
}

TEST(Session, AutoWithoutWeightsIsRejected) {
  Session s(small_session());
  const auto err = s.handle(ModeMsg{DriveMode::autopilot});
  ASSERT_TRUE(err.has_value());
  EXPECT_EQ(err->msg, "no weights loaded");
  EXPECT_EQ(s.mode(), DriveMode::manual);
  const auto err2 = s.handle_text(R"({"type":"mode","value":"auto"})");
  ASSERT_TRUE(err2.has_value());
  EXPECT_EQ(err2->msg, "no weights loaded");
}

TEST(Session, RecordingFiftyManualTicksAddsFiftyRecords) {
  const auto cfg = small_session("fifty.navd");
  Session s(cfg);
  s.tick();  // ticks before recording are not saved
  ASSERT_FALSE(s.handle(RecordMsg{true}));
  ASSERT_FALSE(s.handle(CmdMsg{0.3, 0.6}));
  std::vector<StateMsg> states;
  for (int k = 0; k < 50; ++k) states.push_back(s.tick());
  EXPECT_EQ(s.records(), 50u);
  ASSERT_FALSE(s.handle(RecordMsg{false}));
  EXPECT_FALSE(s.recording());
  const auto d = read_dataset(cfg.record_path);
  ASSERT_EQ(d.records.size(), 50u);
  for (std::size_t k = 0; k < 50; ++k) {
    // Each state with recording on names the record written for its tick.
    EXPECT_TRUE(states[k].recording);
    EXPECT_EQ(states[k].records, k + 1);
    EXPECT_EQ(d.records[k].tick, states[k].tick);
    EXPECT_FLOAT_EQ(d.records[k].steering, 0.3f);
    EXPECT_EQ(d.records[k].env, EnvType::normal_city);
  }
  // Appending resumes the same file.
  ASSERT_FALSE(s.handle(RecordMsg{true}));
  for (int k = 0; k < 5; ++k) s.tick();
  s.handle(RecordMsg{false});
  EXPECT_EQ(read_dataset(cfg.record_path).records.size(), 55u);
}

TEST(Session, CommandTakesEffectAtNextTick) {
  Session s(small_session());
  const auto a = s.tick();
  s.handle(CmdMsg{0.0, 1.0});
  s.handle(CmdMsg{0.0, 0.5});  // latest command wins
  const auto b = s.tick();     // observes the pose before this tick's motion
  EXPECT_EQ(a.pose.x, b.pose.x);
  const auto c = s.tick();
  EXPECT_NEAR(std::hypot(c.pose.x - b.pose.x, c.pose.y - b.pose.y), 0.5 * kMaxLinear * 0.1, 1e-9);
  EXPECT_LT(a.tick, b.tick);
  EXPECT_LT(b.tick, c.tick);
}

TEST(Session, RejectedMessagesLeaveStateUnchanged) {
  Session s(small_session());
  s.tick();
  const auto pose = s.robot().pose;
  for (const char* bad : {"{oops", "", R"({"type":"warp"})", R"({"type":"state","tick":1})"}) EXPECT_TRUE(s.handle_text(bad).has_value());
  EXPECT_TRUE(s.handle(StateMsg{}).has_value());
  EXPECT_TRUE(s.handle(LoadWeightsMsg{"/nonexistent/w.navw"}).has_value());
  EXPECT_FALSE(s.weights_loaded());
  EXPECT_EQ(s.robot().pose.x, pose.x);
  EXPECT_EQ(s.mode(), DriveMode::manual);
  EXPECT_EQ(s.ticks(), 1u);
}

TEST(Session, ResetRegeneratesWorldAndKeepsTicking) {
  Session s(small_session());
  s.tick();
  s.tick();
  ASSERT_FALSE(s.handle(ResetMsg{EnvType::cave, 7}));
  const auto expected = generate_world(EnvType::cave, 7, s.config().area_scale);
  EXPECT_EQ(world_to_json(s.world()), world_to_json(expected));
  EXPECT_EQ(s.hello().world, world_to_json(expected));
  const auto st = s.tick();
  EXPECT_EQ(st.tick, 2u);
  EXPECT_EQ(st.pose.x, expected.spawn.x);
  EXPECT_EQ(st.pose.y, expected.spawn.y);
}

TEST(Session, LoadedWeightsDriveAutopilot) {
  auto cfg = small_session();
  NetConfig net = NetConfig::tiny();
  net.rgb_h = 48;
  net.rgb_w = 64;
  net.dmap_h = 32;
  net.dmap_w = 64;
  cfg.net = net;
  const auto w = init_weights(Arch::nmfnet, net, 3);
  const auto path = temp_path("auto.navw");
  save_weights(w, path);
  Session s(cfg);
  ASSERT_FALSE(s.handle(LoadWeightsMsg{path.string()}));
  ASSERT_FALSE(s.handle(ModeMsg{DriveMode::autopilot}));
  EXPECT_EQ(s.hello().config["weights"], path.string());
  const auto st = s.tick();
  ASSERT_TRUE(st.pred.has_value());
  EXPECT_EQ(st.mode, DriveMode::autopilot);
  // The prediction is the network output for this tick's observation.
  const auto obs = capture(generate_world(cfg.env, cfg.seed, cfg.area_scale), st.pose, st.tick, cfg.sensors);
  const auto model = network_model(std::make_shared<const ModelWeights>(w), net);
  EXPECT_EQ(*st.pred, model(obs));
  // Recording in auto mode writes nothing.
  s.handle(RecordMsg{true});
  s.tick();
  EXPECT_EQ(s.records(), 0u);
}

// ---------------------------------------------------------------- server

namespace {

constexpr auto kWait = std::chrono::seconds(10);

ServerConfig test_server(const std::string& record_name = "server.navd") {
  ServerConfig c;
  c.ws_port = 0;
  c.tcp_port = 0;
  c.tick_hz = 40;
  c.session = small_session(record_name);
  return c;
}

/// Runs the pending async op on `ioc` with a deadline.
void await(asio::io_context& ioc, const bool& done) {
  ioc.restart();
  ioc.run_for(kWait);
  if (!done) throw std::runtime_error("timed out waiting for the server");
}

class RawConn {
 public:
  explicit RawConn(std::uint16_t port) : sock_(ioc_) { sock_.connect({asio::ip::make_address("127.0.0.1"), port}); }

  void send(const std::string& line) { asio::write(sock_, asio::buffer(line + "\n")); }

  std::string line() {
    bool done = false;
    beast::error_code err;
    std::size_t n = 0;
    asio::async_read_until(sock_, buf_, '\n', [&](beast::error_code ec, std::size_t k) {
      err = ec;
      n = k;
      done = true;
    });
    await(ioc_, done);
    if (err) throw std::runtime_error(err.message());
    std::string out(n - 1, '\0');
    buf_.sgetn(out.data(), static_cast<std::streamsize>(n - 1));
    buf_.consume(1);
    return out;
  }

  WireMessage next() { return decode_message(line()); }

  StateMsg next_state() {
    for (;;) {
      auto m = next();
      if (auto* s = std::get_if<StateMsg>(&m)) return *s;
    }
  }

 private:
  asio::io_context ioc_;
  tcp::socket sock_;
  asio::streambuf buf_;
};

class WsConn {
 public:
  explicit WsConn(std::uint16_t port) : ws_(ioc_) {
    beast::get_lowest_layer(ws_).connect({asio::ip::make_address("127.0.0.1"), port});
    ws_.handshake("127.0.0.1", "/");
  }

  void send(const std::string& text) {
    ws_.text(true);
    ws_.write(asio::buffer(text));
  }

  std::string frame() {
    bool done = false;
    beast::error_code err;
    beast::flat_buffer buf;
    ws_.async_read(buf, [&](beast::error_code ec, std::size_t) {
      err = ec;
      done = true;
    });
    await(ioc_, done);
    if (err) throw std::runtime_error(err.message());
    EXPECT_TRUE(ws_.got_text());
    return beast::buffers_to_string(buf.data());
  }

  WireMessage next() { return decode_message(frame()); }

 private:
  asio::io_context ioc_;
  beast::websocket::stream<beast::tcp_stream> ws_;
};

}  // namespace

TEST(Server, RawClientGetsHelloThenIncreasingTicks) {
  Server srv(test_server());
  srv.start();
  RawConn c(srv.tcp_port());
  const auto hello = c.next();
  ASSERT_TRUE(std::holds_alternative<HelloMsg>(hello));
  EXPECT_EQ(std::get<HelloMsg>(hello).world, world_to_json(generate_world(EnvType::normal_city, 3, 0.1)));
  std::uint64_t last = 0;
  for (int k = 0; k < 10; ++k) {
    const auto s = c.next_state();
    if (k > 0) {
      EXPECT_EQ(s.tick, last + 1);
    }
    last = s.tick;
    EXPECT_EQ(s.scan.size(), 181u);
  }
  EXPECT_EQ(srv.client_count(), 1u);
}

TEST(Server, TicksWithoutClients) {
  Server srv(test_server());
  srv.start();
  const auto t0 = srv.ticks();
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  EXPECT_GT(srv.ticks(), t0 + 3);
  EXPECT_EQ(srv.client_count(), 0u);
}

TEST(Server, TwoClientsSeeIdenticalStreams) {
  Server srv(test_server());
  srv.start();
  RawConn a(srv.tcp_port());
  WsConn b(srv.ws_port());
  ASSERT_TRUE(std::holds_alternative<HelloMsg>(a.next()));
  ASSERT_TRUE(std::holds_alternative<HelloMsg>(b.next()));
  std::map<std::uint64_t, std::string> seen_a;
  for (int k = 0; k < 40; ++k) {
    const auto text = a.line();
    seen_a[std::get<StateMsg>(decode_message(text)).tick] = text;
  }
  int matched = 0;
  for (int k = 0; k < 15; ++k) {
    const auto text = b.frame();
    const auto tick = std::get<StateMsg>(decode_message(text)).tick;
    if (seen_a.count(tick)) {
      EXPECT_EQ(seen_a[tick], text);
      ++matched;
    }
  }
  EXPECT_GE(matched, 10);
}

TEST(Server, MalformedInputGetsErrorAndTicksContinue) {
  Server srv(test_server());
  srv.start();
  RawConn c(srv.tcp_port());
  c.next();
  c.send("{this is not json");
  bool got_error = false;
  std::uint64_t last = c.next_state().tick;
  for (int k = 0; k < 20; ++k) {
    const auto m = c.next();
    if (const auto* e = std::get_if<ErrorMsg>(&m)) {
      got_error = true;
      EXPECT_EQ(e->msg.rfind("malformed JSON", 0), 0u) << e->msg;
    } else {
      const auto& s = std::get<StateMsg>(m);
      EXPECT_EQ(s.tick, last + 1);
      last = s.tick;
    }
  }
  EXPECT_TRUE(got_error);
  c.send(R"({"type":"mode","value":"auto"})");
  for (;;) {
    const auto m = c.next();
    if (const auto* e = std::get_if<ErrorMsg>(&m)) {
      EXPECT_EQ(e->msg, "no weights loaded");
      break;
    }
  }
}

TEST(Server, WebSocketHandshakeKnownKey) {
  Server srv(test_server());
  srv.start();
  asio::io_context ioc;
  tcp::socket s(ioc);
  s.connect({asio::ip::make_address("127.0.0.1"), srv.ws_port()});
  const std::string req =
      "GET /chat HTTP/1.1\r\nHost: server.example.com\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
      "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n";
  asio::write(s, asio::buffer(req));
  asio::streambuf buf;
  bool done = false;
  asio::async_read_until(s, buf, "\r\n\r\n", [&](beast::error_code, std::size_t) { done = true; });
  await(ioc, done);
  const std::string resp(asio::buffers_begin(buf.data()), asio::buffers_end(buf.data()));
  EXPECT_EQ(resp.rfind("HTTP/1.1 101", 0), 0u) << resp;
  EXPECT_NE(resp.find("Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos) << resp;
}

TEST(Server, HeadlessClientRecordsLabeledData) {
  auto cfg = test_server("headless.navd");
  cfg.tick_hz = 100;
  Server srv(cfg);
  srv.start();
  RawConn c(srv.tcp_port());
  c.next();
  c.send(R"({"type":"record","value":true})");
  c.send(R"({"type":"cmd","steer":-0.4,"throttle":0.5})");
  std::map<std::uint64_t, std::uint64_t> tick_of_record;  // record index -> state tick
  for (;;) {
    const auto s = c.next_state();
    if (s.recording && s.records > 0) tick_of_record[s.records - 1] = s.tick;
    if (s.records >= 100) break;
  }
  c.send(R"({"type":"record","value":false})");
  for (;;)
    if (!c.next_state().recording) break;
  const auto d = read_dataset(cfg.session.record_path);
  ASSERT_GE(d.records.size(), 100u);
  for (const auto& [k, tick] : tick_of_record) {
    EXPECT_EQ(d.records[k].tick, tick);
    EXPECT_FLOAT_EQ(d.records[k].steering, -0.4f);
  }
}

TEST(Server, ResetBroadcastsFreshHello) {
  Server srv(test_server());
  srv.start();
  WsConn c(srv.ws_port());
  c.next();
  c.send(R"({"type":"reset","env":"cave","seed":5})");
  for (int k = 0; k < 50; ++k) {
    const auto m = c.next();
    if (const auto* h = std::get_if<HelloMsg>(&m)) {
      EXPECT_EQ(h->world, world_to_json(generate_world(EnvType::cave, 5, 0.1)));
      return;
    }
  }
  FAIL() << "no hello after reset";
}

TEST(Server, BindFailureIsReported) {
  Server a(test_server());
  a.start();
  auto cfg = test_server();
  cfg.ws_port = a.ws_port();
  Server b(cfg);
  EXPECT_THROW(b.start(), Error);
}
