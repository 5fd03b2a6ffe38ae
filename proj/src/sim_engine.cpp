#include <algorithm>
#include <deque>
#include <limits>
#include <queue>
#include <set>

#include "lorasim/airtime.hpp"
#include "lorasim/sim_engine.hpp"

namespace lorasim::sim {

namespace {

constexpr std::uint8_t kPortDatagram = 1;
constexpr std::uint8_t kPortFragment = 2;
constexpr std::uint8_t kPortRaw = 10;
constexpr Microseconds kAckGrace{100'000};
constexpr Microseconds kPartialSweepPeriod{60'000'000};

struct Event {
  enum class Kind {
    NodeWake,      // a: node, b: wake index
    TxStart,       // a: node
    TxEnd,         // b: tx id
    DlAttempt,     // b: pending id, c: 1=rx1 2=rx2 3=ping slot
    ClassCService, // a: gateway
    AckTimeout,    // a: node, b: frame id
    JoinTimeout,   // a: node, b: attempt id
    Beacon,        // b: beacon index
    PartialSweep,
  };
  Microseconds t{0};
  std::uint64_t seq = 0;
  Kind kind = Kind::NodeWake;
  std::size_t a = 0;
  std::uint64_t b = 0;
  int c = 0;
};

struct EventAfter {
  bool operator()(const Event& x, const Event& y) const {
    if (x.t != y.t) return x.t > y.t;
    return x.seq > y.seq;
  }
};

struct OutFrame {
  std::uint8_t fport = kPortRaw;
  std::vector<std::uint8_t> payload;
  bool confirmed = false;
  int retries_left = 0;
};

enum class GwOutcome { NotStarted, BelowThreshold, Saturated, OnDemod };

struct ActiveTx {
  std::uint64_t id = 0;
  link::Transmission tx;
  int dr = 0;
  bool uplink = true;
  bool collided = false;
  bool is_join = false;
  bool confirmed = false;
  std::size_t node_idx = 0;  // transmitter (uplink) / target (downlink)
  std::size_t gw_idx = 0;    // transmitting gateway (downlink only)
  std::uint64_t pending_id = 0;
  bool ended = false;
  struct PerGateway {
    GwOutcome outcome = GwOutcome::NotStarted;
    double rssi = 0;
    double snr = 0;
  };
  std::vector<PerGateway> per_gw;
};

struct PendingDl {
  std::uint64_t id = 0;
  std::size_t node_idx = 0;
  std::size_t gw_idx = 0;
  std::uint64_t frame_id = 0;  // uplink tx id being acknowledged
  bool is_join_accept = false;
  mac::RxWindows windows;
  long long uplink_channel_hz = 0;
  int uplink_dr = 0;
  bool resolved = false;
  std::vector<std::uint8_t> dl_frame;  // join accept only; acks built at send
};

struct EngineNode {
  const NodeSpec* spec = nullptr;
  std::size_t index = 0;
  std::uint64_t dev_eui = 0;
  double tx_gain_db = 0;
  std::vector<double> shadow_db;
  mac::Key app_key{};
  mac::Session session;
  bool joined = false;
  bool join_pending = false;
  std::uint16_t next_dev_nonce = 1;
  std::uint16_t last_dev_nonce = 0;
  std::vector<reg::Channel> channels;
  reg::DutyLedger ledger;
  std::deque<OutFrame> outbox;
  bool tx_planned = false;
  bool tx_in_flight = false;
  OutFrame planned_frame;
  bool planned_is_join = false;
  reg::Channel planned_channel;
  Microseconds planned_start{0};
  Microseconds planned_toa{0};
  Microseconds last_tx_start{-1};
  Microseconds last_tx_end{-1};
  struct Awaiting {
    bool active = false;
    std::uint64_t frame_id = 0;
    std::uint64_t pending_id = 0;
    OutFrame frame_copy;
  } awaiting;
  mac::RxWindows join_windows;
  mac::ClassBState class_b;
  std::uint32_t datagram_seq = 0;
  util::Rng rng_jitter{0}, rng_chan{0}, rng_margin{0}, rng_payload{0}, rng_beacon{0};
  Microseconds start_at{0}, stop_at{0};
  double phase_s = 0;
  // stats
  std::uint64_t sent = 0, confirmed_sent = 0, ack_missed = 0;
  std::uint64_t joins_attempted = 0, joins_completed = 0;
  std::vector<double> rssi_vals, snr_vals;
};

struct EngineGateway {
  const GatewaySpec* spec = nullptr;
  std::size_t index = 0;
  std::set<long long> listen;
  int demods_in_use = 0;
  server::GatewayTxState tx;
  std::deque<std::uint64_t> class_c_queue;
  Microseconds service_at{std::numeric_limits<std::int64_t>::max()};
  GatewayStats stats;

  explicit EngineGateway(reg::DutyAccounting mode) : tx(mode) {}
};

class Engine {
 public:
  explicit Engine(const Scenario& s)
      : scenario_(s),
        log_sink_(),
        server_({}, &log_sink_) {
    const auto errors = validate(s);
    if (!errors.empty()) {
      std::string msg = "scenario invalid:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw ScenarioError(msg);
    }
    channels_ = s.uplink_channels.empty() ? reg::eu868_uplink_channels() : s.uplink_channels;
    rx2_ = reg::eu868_rx2();
    end_ = from_s(s.duration_s);
    setup_gateways();
    setup_nodes();
    push({Microseconds(0), 0, Event::Kind::PartialSweep, 0, 0, 0});
    if (has_class_b_) push({Microseconds(0), 0, Event::Kind::Beacon, 0, 0, 0});
  }

  RunResult execute() {
    while (!queue_.empty()) {
      Event ev = queue_.top();
      queue_.pop();
      if (ev.t > end_) break;
      now_ = ev.t;
      dispatch(ev);
    }
    finish();
    RunResult result;
    result.packet_log = log_sink_.text();
    result.trace = std::move(trace_);
    result.stats = collect_stats();
    return result;
  }

 private:
  // --- setup -----------------------------------------------------------------

  void setup_gateways() {
    for (std::size_t i = 0; i < scenario_.gateways.size(); ++i) {
      const auto& spec = scenario_.gateways[i];
      EngineGateway gw(scenario_.accounting);
      gw.spec = &spec;
      gw.index = i;
      if (spec.listen_channels_hz.empty()) {
        for (const auto& c : channels_) gw.listen.insert(c.center_freq_hz);
      } else {
        gw.listen.insert(spec.listen_channels_hz.begin(), spec.listen_channels_hz.end());
      }
      gw.stats.id = spec.id;
      gateways_.push_back(std::move(gw));
    }
  }

  static mac::Key key_from_eui(std::uint64_t dev_eui) {
    // Provisioned root key; a device property, stable across runs/seeds.
    mac::Key k{};
    util::Rng r(util::derive_seed(0x6170706b6579ull, "app-key", dev_eui));
    for (int i = 0; i < 16; i += 8) {
      std::uint64_t w = r.next_u64();
      for (int j = 0; j < 8; ++j) k[i + j] = static_cast<std::uint8_t>(w >> (8 * j));
    }
    return k;
  }

  void setup_nodes() {
    nodes_.reserve(scenario_.nodes.size());
    for (std::size_t i = 0; i < scenario_.nodes.size(); ++i) {
      const auto& spec = scenario_.nodes[i];
      EngineNode n;
      n.spec = &spec;
      n.index = i;
      n.dev_eui = spec.dev_eui != 0 ? spec.dev_eui : 0xa000000000000000ull + i + 1;
      n.tx_gain_db = link::effective_antenna_gain_db(spec.antenna_gain_dbi);
      n.app_key = key_from_eui(n.dev_eui);
      n.ledger = reg::DutyLedger(scenario_.accounting);
      n.rng_jitter = util::Rng(util::derive_seed(scenario_.seed, "jitter", i));
      n.rng_chan = util::Rng(util::derive_seed(scenario_.seed, "chan", i));
      n.rng_margin = util::Rng(util::derive_seed(scenario_.seed, "margin", i));
      n.rng_payload = util::Rng(util::derive_seed(scenario_.seed, "payload", i));
      n.rng_beacon = util::Rng(util::derive_seed(scenario_.seed, "beacon", i));
      for (std::size_t g = 0; g < gateways_.size(); ++g) {
        util::Rng shadow_rng(util::derive_seed(scenario_.seed, "shadow", i, g));
        n.shadow_db.push_back(scenario_.environment.shadowing_sigma_db > 0
                                  ? shadow_rng.normal(scenario_.environment.shadowing_sigma_db)
                                  : 0.0);
      }
      n.start_at = from_s(spec.start_s);
      n.stop_at = spec.stop_s < 0 ? end_ : from_s(spec.stop_s);
      n.phase_s = spec.period_s > 0
                      ? n.rng_jitter.uniform(0.0, spec.period_s)
                      : 0.0;
      if (spec.phase_s >= 0) n.phase_s = spec.phase_s;
      n.class_b.slots_per_beacon = spec.ping_slots_per_beacon;
      if (spec.dev_class == mac::DeviceClass::B) has_class_b_ = true;

      if (spec.activation == mac::Activation::Abp) {
        const std::uint32_t addr = 0x27000000u + static_cast<std::uint32_t>(i) + 1;
        n.session = mac::derive_session(n.dev_eui, n.app_key, 0, 0, addr);
        n.session.activation = mac::Activation::Abp;
        n.joined = true;
        n.channels = channels_;
        server_.provision_abp(n.session);
      } else {
        n.channels = mandatory_channels();
        server_.provision_otaa(n.dev_eui, n.app_key);
      }
      nodes_.push_back(std::move(n));
    }
    for (auto& n : nodes_) {
      schedule_wake(n, 0);
    }
  }

  std::vector<reg::Channel> mandatory_channels() const {
    std::vector<reg::Channel> out;
    for (const auto& c : channels_) {
      if (c.mandatory) out.push_back(c);
    }
    if (out.empty()) out = channels_;  // custom plans without mandatory rows
    return out;
  }

  // --- event plumbing ---------------------------------------------------------

  void push(Event ev) {
    ev.seq = next_seq_++;
    queue_.push(ev);
  }

  void dispatch(const Event& ev) {
    switch (ev.kind) {
      case Event::Kind::NodeWake: on_wake(nodes_[ev.a], ev.b); break;
      case Event::Kind::TxStart: on_tx_start(nodes_[ev.a]); break;
      case Event::Kind::TxEnd: on_tx_end(ev.b); break;
      case Event::Kind::DlAttempt: on_dl_attempt(ev.b, ev.c); break;
      case Event::Kind::ClassCService: on_class_c_service(gateways_[ev.a], ev.t); break;
      case Event::Kind::AckTimeout: on_ack_timeout(nodes_[ev.a], ev.b); break;
      case Event::Kind::JoinTimeout: on_join_timeout(nodes_[ev.a], ev.b); break;
      case Event::Kind::Beacon: on_beacon(ev.b); break;
      case Event::Kind::PartialSweep:
        server_.expire_partials(ev.t);
        push({ev.t + kPartialSweepPeriod, 0, Event::Kind::PartialSweep, 0, 0, 0});
        break;
    }
  }

  // --- node side ---------------------------------------------------------------

  Microseconds nominal_send(const EngineNode& n, std::uint64_t k, double jitter) {
    const double t = to_s(n.start_at) + n.phase_s +
                     static_cast<double>(k) * n.spec->period_s +
                     jitter * n.spec->jitter_frac * n.spec->period_s;
    return from_s(t);
  }

  void schedule_wake(EngineNode& n, std::uint64_t k) {
    const double jitter = n.rng_jitter.uniform(-1.0, 1.0);
    const Microseconds t = nominal_send(n, k, jitter);
    if (t >= n.stop_at || t > end_) return;
    push({t, 0, Event::Kind::NodeWake, n.index, k, 0});
  }

  void on_wake(EngineNode& n, std::uint64_t k) {
    schedule_wake(n, k + 1);
    if (now_ >= n.stop_at) return;
    enqueue_app_payload(n);
    try_start_tx(n);
  }

  void enqueue_app_payload(EngineNode& n) {
    if (n.spec->payload == PayloadKind::Raw) {
      OutFrame f;
      f.fport = kPortRaw;
      f.confirmed = n.spec->confirmed;
      f.retries_left = n.spec->retry_limit;
      f.payload.resize(static_cast<std::size_t>(n.spec->raw_payload_size));
      for (auto& b : f.payload) b = static_cast<std::uint8_t>(n.rng_payload.next_u64());
      n.outbox.push_back(std::move(f));
      return;
    }
    meter::MeterDatagram d;
    d.meter_id = n.dev_eui;
    d.datagram_seq = n.datagram_seq++;
    d.timestamp_s = static_cast<std::uint32_t>(now_.count() / 1'000'000);
    d.meter_type = static_cast<meter::MeterType>(n.dev_eui % 3);
    d.status_flags = 0;
    for (auto& r : d.readings) {
      r = static_cast<std::int32_t>(n.rng_payload.next_u64() & 0x7fffffff);
    }
    const auto bytes = meter::encode(d);
    if (n.spec->dr >= 3) {
      OutFrame f;
      f.fport = kPortDatagram;
      f.confirmed = n.spec->confirmed;
      f.retries_left = n.spec->retry_limit;
      f.payload.assign(bytes.begin(), bytes.end());
      n.outbox.push_back(std::move(f));
    } else {
      for (const auto& frag : meter::make_fragments(d.datagram_seq, bytes)) {
        OutFrame f;
        f.fport = kPortFragment;
        f.confirmed = n.spec->confirmed;
        f.retries_left = n.spec->retry_limit;
        const auto wire = meter::serialize(frag);
        f.payload.assign(wire.begin(), wire.end());
        n.outbox.push_back(std::move(f));
      }
    }
  }

  const reg::Channel& pick_channel(EngineNode& n) {
    if (n.spec->forced_channel_hz) {
      for (const auto& c : n.channels) {
        if (c.center_freq_hz == *n.spec->forced_channel_hz) return c;
      }
    }
    return n.channels[n.rng_chan.uniform_index(static_cast<std::uint32_t>(n.channels.size()))];
  }

  /// Plans the next transmission (data frame or join request) if the
  /// node is idle. The duty ledger decides the actual start instant.
  void try_start_tx(EngineNode& n) {
    if (n.tx_planned || n.tx_in_flight) return;
    if (n.awaiting.active && n.spec->dev_class == mac::DeviceClass::A) return;
    if (n.join_pending) return;

    if (!n.joined) {
      if (n.outbox.empty()) return;  // nothing to say, join lazily
      plan_join(n);
      return;
    }
    if (n.outbox.empty()) return;

    n.planned_frame = n.outbox.front();
    n.outbox.pop_front();
    n.planned_is_join = false;
    const auto params = airtime::dr_to_params(n.spec->dr);
    const int phy_len = static_cast<int>(n.planned_frame.payload.size()) + mac::kFrameOverhead;
    const Microseconds toa = airtime::time_on_air(params, phy_len);
    n.planned_channel = pick_channel(n);
    n.planned_toa = toa;
    n.planned_start = n.ledger.reserve(n.planned_channel, now_, toa);
    n.tx_planned = true;
    push({n.planned_start, 0, Event::Kind::TxStart, n.index, 0, 0});
  }

  void plan_join(EngineNode& n) {
    n.planned_is_join = true;
    const int join_dr = n.spec->join_dr;
    const auto params = airtime::dr_to_params(join_dr);
    const Microseconds toa = airtime::time_on_air(params, mac::kJoinRequestSize);
    // joins only use the mandatory channels
    const auto& set = n.channels;
    n.planned_channel = set[n.rng_chan.uniform_index(static_cast<std::uint32_t>(set.size()))];
    n.planned_toa = toa;
    n.planned_start = n.ledger.reserve(n.planned_channel, now_, toa);
    n.tx_planned = true;
    n.join_pending = true;
    push({n.planned_start, 0, Event::Kind::TxStart, n.index, 0, 0});
  }

  void on_tx_start(EngineNode& n) {
    n.tx_planned = false;
    n.tx_in_flight = true;
    n.last_tx_start = now_;
    n.last_tx_end = now_ + n.planned_toa;

    ActiveTx atx;
    atx.id = next_tx_id_++;
    atx.node_idx = n.index;
    atx.uplink = true;
    atx.is_join = n.planned_is_join;
    atx.dr = n.planned_is_join ? n.spec->join_dr : n.spec->dr;
    atx.tx.source = "node/" + n.spec->name;
    atx.tx.channel_hz = n.planned_channel.center_freq_hz;
    atx.tx.sf = airtime::dr_to_sf(atx.dr);
    atx.tx.start = now_;
    atx.tx.toa = n.planned_toa;
    atx.tx.tx_power_dbm = n.spec->tx_power_dbm;

    if (n.planned_is_join) {
      mac::JoinRequest jr;
      jr.app_eui = 0x70b3d57ed0000000ull;
      jr.dev_eui = n.dev_eui;
      jr.dev_nonce = n.next_dev_nonce++;
      atx.tx.frame = mac::serialize(jr, n.app_key);
      ++n.joins_attempted;
      n.last_dev_nonce = jr.dev_nonce;
    } else {
      // a fresh data frame supersedes any ACK still outstanding
      if (n.awaiting.active) resolve_await_missed(n);
      mac::Frame f = mac::build_uplink(n.session, n.planned_frame.fport,
                                       n.planned_frame.payload, n.planned_frame.confirmed,
                                       airtime::max_app_payload(n.spec->dr));
      atx.tx.frame = mac::serialize(f);
      atx.confirmed = n.planned_frame.confirmed;
      ++n.sent;
      if (atx.confirmed) ++n.confirmed_sent;
    }
    ++uplink_transmissions_;
    max_toa_seen_ = std::max(max_toa_seen_, n.planned_toa);
    trace_.push_back({atx.tx.source, n.ledger.key_for(n.planned_channel),
                      n.planned_channel.center_freq_hz, atx.tx.sf, now_, n.planned_toa,
                      n.planned_channel.duty_permille});

    // per-gateway link sampling and demodulator allocation
    atx.per_gw.resize(gateways_.size());
    for (std::size_t g = 0; g < gateways_.size(); ++g) {
      auto& pg = atx.per_gw[g];
      auto& gw = gateways_[g];
      const double loss = link::path_loss_db(scenario_.environment, n.spec->position,
                                             gw.spec->position, n.spec->obstacles,
                                             n.shadow_db[g]);
      pg.rssi = link::rssi_dbm(n.spec->tx_power_dbm, n.tx_gain_db, 0.0, loss);
      pg.snr = link::true_snr_db(pg.rssi, 125000, scenario_.environment.noise_figure_db);
      const bool decodable =
          link::receive_decision(pg.rssi, pg.snr, atx.tx.sf, n.rng_margin);
      if (!gw.listen.count(atx.tx.channel_hz) || !decodable) {
        pg.outcome = GwOutcome::BelowThreshold;
      } else if (gw.demods_in_use >= gw.spec->demodulators) {
        pg.outcome = GwOutcome::Saturated;
      } else {
        pg.outcome = GwOutcome::OnDemod;
        ++gw.demods_in_use;
      }
    }

    mark_collisions(atx);
    const std::uint64_t id = atx.id;
    active_.push_back(std::move(atx));
    index_[id] = active_.size() - 1;
    push({now_ + n.planned_toa, 0, Event::Kind::TxEnd, 0, id, 0});
  }

  void mark_collisions(ActiveTx& fresh) {
    for (auto it = active_.rbegin(); it != active_.rend(); ++it) {
      ActiveTx& other = *it;
      if (other.tx.start + max_toa_seen_ < fresh.tx.start) break;
      if (other.ended) continue;
      if (link::collide(fresh.tx, other.tx)) {
        fresh.collided = true;
        other.collided = true;
      }
    }
  }

  ActiveTx& tx_by_id(std::uint64_t id) { return active_[index_.at(id)]; }

  void on_tx_end(std::uint64_t tx_id) {
    ActiveTx& atx = tx_by_id(tx_id);
    atx.ended = true;
    if (atx.uplink) {
      on_uplink_end(atx);
    } else {
      on_downlink_end(atx);
    }
  }

  void on_uplink_end(ActiveTx& atx) {
    EngineNode& n = nodes_[atx.node_idx];
    n.tx_in_flight = false;

    std::vector<server::GatewayRecord> copies;
    bool any_accepted = false;
    std::string accepted_gateway;
    for (std::size_t g = 0; g < gateways_.size(); ++g) {
      auto& pg = atx.per_gw[g];
      auto& gw = gateways_[g];
      switch (pg.outcome) {
        case GwOutcome::BelowThreshold: ++gw.stats.below_threshold; continue;
        case GwOutcome::Saturated: ++gw.stats.saturation_drops; continue;
        case GwOutcome::OnDemod: --gw.demods_in_use; break;
        case GwOutcome::NotStarted: continue;
      }
      if (atx.collided) {
        ++gw.stats.collided;
        continue;
      }
      ++gw.stats.received_copies;
      ++gw.stats.channel_counts[atx.tx.channel_hz];
      server::GatewayRecord rec;
      rec.gateway_id = gw.spec->id;
      rec.receive_time = now_;
      rec.frequency_hz = atx.tx.channel_hz;
      rec.dr = atx.dr;
      rec.sf = atx.tx.sf;
      rec.rssi_dbm = pg.rssi;
      rec.snr_db = link::reported_snr_db(pg.snr);
      rec.crc_ok = true;
      rec.frame = atx.tx.frame;
      const auto result = server_.ingest(rec);
      if (result.status == server::RowStatus::Accepted) {
        any_accepted = true;
        accepted_gateway = gw.spec->id;
        n.rssi_vals.push_back(link::reported_rssi_dbm(pg.rssi));
        n.snr_vals.push_back(std::round(link::reported_snr_db(pg.snr) * 4.0) / 4.0);
      }
      copies.push_back(std::move(rec));
    }
    if (any_accepted) {
      EngineNode& target = nodes_[atx.node_idx];
      if (!atx.is_join) ++node_received_[target.index];
    }

    if (atx.is_join) {
      finish_join_uplink(atx, any_accepted, copies);
      return;
    }

    if (atx.confirmed) {
      n.awaiting.active = true;
      n.awaiting.frame_id = atx.id;
      n.awaiting.pending_id = 0;
      n.awaiting.frame_copy = n.planned_frame;
      if (any_accepted) {
        schedule_ack_path(atx, copies, accepted_gateway);
      }
      if (n.spec->dev_class == mac::DeviceClass::A ||
          (n.spec->dev_class == mac::DeviceClass::B && !n.class_b.beacon_lock)) {
        const auto windows = mac::rx_windows_after(now_, atx.tx.channel_hz, atx.dr);
        const Microseconds rx2_ack_toa =
            airtime::time_on_air(airtime::dr_to_params(0), mac::kFrameOverhead);
        push({windows.rx2_open + rx2_ack_toa + kAckGrace, 0, Event::Kind::AckTimeout,
              n.index, atx.id, 0});
      }
    }
    try_start_tx(n);
  }

  void schedule_ack_path(const ActiveTx& atx, std::span<const server::GatewayRecord> copies,
                         const std::string& fallback_gateway) {
    EngineNode& n = nodes_[atx.node_idx];
    const auto best = server::choose_downlink_gateway(copies);
    const std::string gw_id = best ? *best : fallback_gateway;
    std::size_t gw_idx = 0;
    for (std::size_t g = 0; g < gateways_.size(); ++g) {
      if (gateways_[g].spec->id == gw_id) gw_idx = g;
    }

    PendingDl p;
    p.id = next_pending_id_++;
    p.node_idx = n.index;
    p.gw_idx = gw_idx;
    p.frame_id = atx.id;
    p.windows = mac::rx_windows_after(now_, atx.tx.channel_hz, atx.dr);
    p.uplink_channel_hz = atx.tx.channel_hz;
    p.uplink_dr = atx.dr;
    n.awaiting.pending_id = p.id;

    const auto dev_class = n.spec->dev_class;
    if (dev_class == mac::DeviceClass::C) {
      pendings_[p.id] = p;
      auto& gw = gateways_[gw_idx];
      gw.class_c_queue.push_back(p.id);
      schedule_class_c(gw, now_);
    } else if (dev_class == mac::DeviceClass::B && n.class_b.beacon_lock) {
      pendings_[p.id] = p;
      const Microseconds slot = mac::next_ping_slot(n.class_b, now_ + Microseconds(1));
      push({slot, 0, Event::Kind::DlAttempt, 0, p.id, 3});
    } else {
      pendings_[p.id] = p;
      push({p.windows.rx1_open, 0, Event::Kind::DlAttempt, 0, p.id, 1});
    }
  }

  void finish_join_uplink(const ActiveTx& atx, bool any_accepted,
                          std::span<const server::GatewayRecord> copies) {
    EngineNode& n = nodes_[atx.node_idx];
    n.join_windows = mac::rx_windows_after(now_, atx.tx.channel_hz, atx.dr);
    const Microseconds accept_toa =
        airtime::time_on_air(airtime::dr_to_params(0), mac::kJoinAcceptSize);
    push({n.join_windows.rx2_open + accept_toa + kAckGrace, 0, Event::Kind::JoinTimeout,
          n.index, n.joins_attempted, 0});
    if (!any_accepted) return;

    for (auto& accept : server_.take_pending_join_accepts()) {
      // the accept belongs to this node unless several joins share an
      // instant; route by eui
      EngineNode* target = &n;
      for (auto& cand : nodes_) {
        if (cand.dev_eui == accept.dev_eui) target = &cand;
      }
      const auto best = server::choose_downlink_gateway(copies);
      std::size_t gw_idx = 0;
      if (best) {
        for (std::size_t g = 0; g < gateways_.size(); ++g) {
          if (gateways_[g].spec->id == *best) gw_idx = g;
        }
      }
      PendingDl p;
      p.id = next_pending_id_++;
      p.node_idx = target->index;
      p.gw_idx = gw_idx;
      p.frame_id = atx.id;
      p.is_join_accept = true;
      p.windows = target->join_windows;
      p.uplink_channel_hz = atx.tx.channel_hz;
      p.uplink_dr = atx.dr;
      p.dl_frame = std::move(accept.frame);
      pendings_[p.id] = p;
      push({p.windows.rx1_open, 0, Event::Kind::DlAttempt, 0, p.id, 1});
    }
  }

  // --- downlink side -----------------------------------------------------------

  reg::Channel channel_by_hz(long long hz) const {
    for (const auto& c : channels_) {
      if (c.center_freq_hz == hz) return c;
    }
    if (hz == rx2_.center_freq_hz) return rx2_;
    throw ScenarioError("unknown channel " + std::to_string(hz));
  }

  void on_dl_attempt(std::uint64_t pending_id, int which) {
    auto it = pendings_.find(pending_id);
    if (it == pendings_.end()) return;
    PendingDl& p = it->second;
    if (p.resolved) return;
    EngineNode& n = nodes_[p.node_idx];
    auto& gw = gateways_[p.gw_idx];

    const bool rx1 = which == 1;
    const reg::Channel ch = rx1 ? channel_by_hz(p.uplink_channel_hz) : rx2_;
    const int dl_dr = rx1 ? p.uplink_dr : 0;
    const int frame_len = p.is_join_accept ? mac::kJoinAcceptSize : mac::kFrameOverhead;
    const Microseconds toa =
        airtime::time_on_air(airtime::dr_to_params(dl_dr), frame_len);

    if (gw.tx.can_send_at(ch, now_, toa)) {
      transmit_downlink(p, gw, ch, dl_dr, toa);
      return;
    }
    if (which == 1) {
      push({p.windows.rx2_open, 0, Event::Kind::DlAttempt, 0, p.id, 2});
      return;
    }
    if (which == 3) {
      // next ping slot, as long as the ACK can still matter
      const Microseconds slot = mac::next_ping_slot(n.class_b, now_ + Microseconds(1));
      if (slot <= end_) {
        push({slot, 0, Event::Kind::DlAttempt, 0, p.id, 3});
        return;
      }
    }
    p.resolved = true;
    ++acks_dropped_;
  }

  void schedule_class_c(EngineGateway& gw, Microseconds t) {
    // one outstanding service probe per gateway
    if (gw.class_c_queue.empty()) return;
    const Microseconds rx2_toa =
        airtime::time_on_air(airtime::dr_to_params(0), mac::kFrameOverhead);
    Microseconds earliest;
    try {
      earliest = gw.tx.earliest_send(rx2_, t, rx2_toa);
    } catch (const reg::DutyExceeded&) {
      return;
    }
    if (earliest < gw.service_at) {
      gw.service_at = earliest;
      push({earliest, 0, Event::Kind::ClassCService, gw.index, 0, 0});
    }
  }

  void on_class_c_service(EngineGateway& gw, Microseconds ev_time) {
    if (ev_time != gw.service_at) return;  // superseded probe
    gw.service_at = Microseconds(std::numeric_limits<std::int64_t>::max());
    while (!gw.class_c_queue.empty()) {
      const auto id = gw.class_c_queue.front();
      auto it = pendings_.find(id);
      if (it == pendings_.end() || it->second.resolved) {
        gw.class_c_queue.pop_front();
        continue;
      }
      PendingDl& p = it->second;
      const Microseconds toa =
          airtime::time_on_air(airtime::dr_to_params(0), mac::kFrameOverhead);
      if (gw.tx.can_send_at(rx2_, now_, toa)) {
        gw.class_c_queue.pop_front();
        transmit_downlink(p, gw, rx2_, 0, toa);
      }
      break;
    }
    schedule_class_c(gw, now_ + Microseconds(1));
  }

  void transmit_downlink(PendingDl& p, EngineGateway& gw, const reg::Channel& ch,
                         int dl_dr, Microseconds toa) {
    p.resolved = true;
    gw.tx.commit(ch, now_, toa);
    ++gw.stats.downlinks_sent;

    EngineNode& n = nodes_[p.node_idx];
    ActiveTx atx;
    atx.id = next_tx_id_++;
    atx.uplink = false;
    atx.is_join = p.is_join_accept;
    atx.node_idx = p.node_idx;
    atx.gw_idx = gw.index;
    atx.pending_id = p.id;
    atx.dr = dl_dr;
    atx.tx.source = "gw/" + gw.spec->id;
    atx.tx.channel_hz = ch.center_freq_hz;
    atx.tx.sf = airtime::dr_to_sf(dl_dr);
    atx.tx.start = now_;
    atx.tx.toa = toa;
    atx.tx.tx_power_dbm = ch.max_erp_dbm;
    if (p.is_join_accept) {
      atx.tx.frame = p.dl_frame;
    } else {
      mac::Session* session = server_.mutable_session_by_addr(n.session.dev_addr);
      if (session) {
        atx.tx.frame = mac::serialize(mac::build_ack_downlink(*session));
      }
    }
    max_toa_seen_ = std::max(max_toa_seen_, toa);
    trace_.push_back({atx.tx.source, gw.tx.ledger.key_for(ch), ch.center_freq_hz,
                      atx.tx.sf, now_, toa, ch.duty_permille});
    mark_collisions(atx);
    const std::uint64_t id = atx.id;
    active_.push_back(std::move(atx));
    index_[id] = active_.size() - 1;
    push({now_ + toa, 0, Event::Kind::TxEnd, 0, id, 0});
  }

  void on_downlink_end(ActiveTx& atx) {
    EngineNode& n = nodes_[atx.node_idx];
    const auto& gw = gateways_[atx.gw_idx];
    auto pit = pendings_.find(atx.pending_id);
    const bool superseded =
        pit == pendings_.end() ||
        (!atx.is_join && (!n.awaiting.active || n.awaiting.pending_id != atx.pending_id));

    if (atx.collided) return;

    // link from gateway to node (frozen shadow is symmetric)
    const double loss =
        link::path_loss_db(scenario_.environment, gw.spec->position, n.spec->position,
                           n.spec->obstacles, n.shadow_db[atx.gw_idx]);
    const double rssi = link::rssi_dbm(atx.tx.tx_power_dbm, 0.0, n.tx_gain_db, loss);
    const double snr = link::true_snr_db(rssi, 125000, scenario_.environment.noise_figure_db);
    if (!link::receive_decision(rssi, snr, atx.tx.sf, n.rng_margin)) return;

    // half duplex: the target must not have transmitted during the frame
    const bool overlapped_own_tx =
        n.last_tx_start < atx.tx.end() && atx.tx.start < n.last_tx_end;
    if (overlapped_own_tx) return;

    mac::DownlinkEvent ev{atx.tx.start, atx.tx.channel_hz, atx.dr};
    bool catches = false;
    if (atx.is_join) {
      catches = mac::class_a_receives(n.join_windows, ev);
    } else {
      switch (n.spec->dev_class) {
        case mac::DeviceClass::A: catches = mac::class_a_receives(pit->second.windows, ev); break;
        case mac::DeviceClass::B:
          catches = mac::class_b_receives(n.class_b, pit->second.windows, ev);
          break;
        case mac::DeviceClass::C: catches = mac::class_c_receives(ev, false); break;
      }
    }
    if (!catches || superseded) return;

    if (atx.is_join) {
      if (n.joined || !n.join_pending) return;
      const auto accept = mac::parse_join_accept(atx.tx.frame);
      if (!mac::verify_join_accept(accept, n.app_key)) return;
      n.session = mac::derive_session(n.dev_eui, n.app_key, accept.join_nonce,
                                      n.last_dev_nonce, accept.dev_addr);
      n.joined = true;
      n.join_pending = false;
      n.channels = channels_;  // the accept's channel list unlocks the full set
      ++n.joins_completed;
      try_start_tx(n);
      return;
    }
    // ACK delivered
    n.awaiting.active = false;
    n.awaiting.pending_id = 0;
    try_start_tx(n);
  }

  void resolve_await_missed(EngineNode& n) {
    ++n.ack_missed;
    if (n.awaiting.pending_id != 0) {
      auto it = pendings_.find(n.awaiting.pending_id);
      if (it != pendings_.end()) it->second.resolved = true;
    }
    n.awaiting.active = false;
    n.awaiting.pending_id = 0;
  }

  void on_ack_timeout(EngineNode& n, std::uint64_t frame_id) {
    if (!n.awaiting.active || n.awaiting.frame_id != frame_id) return;
    OutFrame retry = n.awaiting.frame_copy;
    resolve_await_missed(n);
    if (retry.retries_left > 0) {
      retry.retries_left -= 1;
      n.outbox.push_front(std::move(retry));
    }
    try_start_tx(n);
  }

  void on_join_timeout(EngineNode& n, std::uint64_t attempt) {
    if (n.joined || !n.join_pending) return;
    if (n.joins_attempted != attempt) return;  // a newer attempt is in flight
    n.join_pending = false;
    try_start_tx(n);
  }

  void on_beacon(std::uint64_t beacon_idx) {
    const Microseconds t = Microseconds(mac::kBeaconPeriod.count() * beacon_idx);
    for (auto& n : nodes_) {
      if (n.spec->dev_class != mac::DeviceClass::B) continue;
      bool locked = false;
      for (std::size_t g = 0; g < gateways_.size(); ++g) {
        const auto& gw = gateways_[g];
        const double loss =
            link::path_loss_db(scenario_.environment, gw.spec->position, n.spec->position,
                               n.spec->obstacles, n.shadow_db[g]);
        const double rssi = link::rssi_dbm(rx2_.max_erp_dbm, 0.0, n.tx_gain_db, loss);
        const double snr =
            link::true_snr_db(rssi, 125000, scenario_.environment.noise_figure_db);
        if (link::receive_decision(rssi, snr, 12, n.rng_beacon)) locked = true;
      }
      n.class_b.beacon_lock = locked;
      n.class_b.last_beacon = t;
    }
    push({t + mac::kBeaconPeriod, 0, Event::Kind::Beacon, 0, beacon_idx + 1, 0});
  }

  // --- wrap-up -------------------------------------------------------------------

  void finish() {
    for (auto& n : nodes_) {
      if (n.awaiting.active) resolve_await_missed(n);
    }
  }

  RunStats collect_stats() {
    RunStats st;
    for (auto& n : nodes_) {
      NodeStats s;
      s.name = n.spec->name;
      s.dev_eui = n.dev_eui;
      s.sent = n.sent;
      s.received = node_received_.count(n.index) ? node_received_[n.index] : 0;
      s.confirmed_sent = n.confirmed_sent;
      s.ack_missed = n.ack_missed;
      s.joins_attempted = n.joins_attempted;
      s.joins_completed = n.joins_completed;
      s.rssi = summarize(n.rssi_vals);
      s.snr = summarize(n.snr_vals);
      st.nodes[s.name] = std::move(s);
    }
    for (auto& gw : gateways_) {
      st.gateways[gw.stats.id] = gw.stats;
    }
    st.server = server_.counters();
    st.uplink_transmissions = uplink_transmissions_;
    st.acks_dropped_by_server = acks_dropped_;
    return st;
  }

  const Scenario& scenario_;
  server::StringLogSink log_sink_;
  server::NetworkServer server_;
  std::vector<reg::Channel> channels_;
  reg::Channel rx2_;
  Microseconds end_{0};
  Microseconds now_{0};
  bool has_class_b_ = false;

  std::vector<EngineNode> nodes_;
  std::vector<EngineGateway> gateways_;
  std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t next_tx_id_ = 1;
  std::uint64_t next_pending_id_ = 1;
  std::vector<ActiveTx> active_;
  std::map<std::uint64_t, std::size_t> index_;
  std::map<std::uint64_t, PendingDl> pendings_;
  std::map<std::size_t, std::uint64_t> node_received_;
  std::vector<TxTrace> trace_;
  Microseconds max_toa_seen_{0};
  std::uint64_t uplink_transmissions_ = 0;
  std::uint64_t acks_dropped_ = 0;
};

}  // namespace

RunResult run(const Scenario& s) {
  Engine engine(s);
  return engine.execute();
}

}  // namespace lorasim::sim
