#include "metasel/osm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "metasel/error.hpp"

namespace metasel {
namespace {

constexpr double kEarthRadiusM = 6371008.8;
constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

// Local equirectangular projection around an origin, in meters.
struct LocalFrame {
  double lat0;
  double lon0;
  double cos_lat;

  explicit LocalFrame(const GpsFix& origin)
      : lat0(origin.lat), lon0(origin.lon), cos_lat(std::cos(origin.lat * kDegToRad)) {}

  std::pair<double, double> project(double lat, double lon) const {
    double dlon = lon - lon0;
    if (dlon > 180.0) dlon -= 360.0;
    if (dlon < -180.0) dlon += 360.0;
    return {dlon * cos_lat * kDegToRad * kEarthRadiusM, (lat - lat0) * kDegToRad * kEarthRadiusM};
  }
};

double segment_distance(std::pair<double, double> a, std::pair<double, double> b) {
  // Distance from the origin to segment ab.
  const double dx = b.first - a.first;
  const double dy = b.second - a.second;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? -(a.first * dx + a.second * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(a.first + t * dx, a.second + t * dy);
}

double polyline_distance(const LocalFrame& frame, std::span<const std::pair<double, double>> polyline) {
  if (polyline.empty()) return std::numeric_limits<double>::infinity();
  auto prev = frame.project(polyline[0].first, polyline[0].second);
  double best = std::hypot(prev.first, prev.second);
  for (std::size_t k = 1; k < polyline.size(); ++k) {
    const auto next = frame.project(polyline[k].first, polyline[k].second);
    best = std::min(best, segment_distance(prev, next));
    prev = next;
  }
  return best;
}

void validate_fix(const GpsFix& fix) {
  if (!std::isfinite(fix.lat) || fix.lat < -90.0 || fix.lat > 90.0 || !std::isfinite(fix.lon) ||
      fix.lon < -180.0 || fix.lon > 180.0) {
    fail(ErrorKind::InvalidTrace, fmt::format("fix ({}, {}) is outside coordinate range", fix.lat, fix.lon));
  }
  if (!std::isfinite(fix.t) || fix.t < 0.0) {
    fail(ErrorKind::InvalidTrace, fmt::format("fix timestamp {} is invalid", fix.t));
  }
}

double round5(double degrees) { return std::round(degrees * 1e5) / 1e5; }

bool truthy(const std::map<std::string, std::string>& tags, const std::string& key) {
  const auto it = tags.find(key);
  return it != tags.end() && it->second != "no" && it->second != "false" && it->second != "0";
}

std::optional<int> parse_lanes(const std::string& text) {
  int value = 0;
  bool any = false;
  for (const char c : text) {
    if (c < '0' || c > '9') break;
    value = value * 10 + (c - '0');
    any = true;
    if (value > 1000) break;
  }
  if (!any || value < 1) return std::nullopt;
  return value;
}

}  // namespace

std::string to_string(WayClass way_class) {
  switch (way_class) {
    case WayClass::Motorway: return "motorway";
    case WayClass::Primary: return "primary";
    case WayClass::Secondary: return "secondary";
    case WayClass::Link: return "link";
    case WayClass::Other: return "other";
    case WayClass::None: return "none";
  }
  return "none";
}

WayClass parse_way_class(const std::string& text) {
  for (const auto c : {WayClass::Motorway, WayClass::Primary, WayClass::Secondary, WayClass::Link,
                       WayClass::Other, WayClass::None}) {
    if (to_string(c) == text) return c;
  }
  fail(ErrorKind::Parse, fmt::format("unknown way class '{}'", text));
}

nlohmann::json to_json(const WayAttributes& a) {
  nlohmann::json doc{{"way_class", to_string(a.way_class)}, {"bridge", a.bridge}, {"tunnel", a.tunnel},
                     {"oneway", a.oneway}, {"toll", a.toll}, {"roundabout", a.roundabout},
                     {"shoulder", a.shoulder}};
  doc["lanes"] = a.lanes ? nlohmann::json(*a.lanes) : nlohmann::json(nullptr);
  return doc;
}

WayAttributes way_attributes_from_json(const nlohmann::json& doc) {
  try {
    WayAttributes a;
    a.way_class = parse_way_class(doc.at("way_class").get<std::string>());
    if (doc.contains("lanes") && !doc.at("lanes").is_null()) {
      const int lanes = doc.at("lanes").get<int>();
      if (lanes < 1) fail(ErrorKind::Parse, "lanes must be >= 1");
      a.lanes = lanes;
    }
    a.bridge = doc.value("bridge", false);
    a.tunnel = doc.value("tunnel", false);
    a.oneway = doc.value("oneway", false);
    a.toll = doc.value("toll", false);
    a.roundabout = doc.value("roundabout", false);
    a.shoulder = doc.value("shoulder", false);
    if (a.way_class == WayClass::None && (a.lanes || a.bridge || a.tunnel || a.oneway || a.toll || a.roundabout ||
                                          a.shoulder)) {
      fail(ErrorKind::Parse, "way_class none cannot carry attributes");
    }
    return a;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("way attributes: {}", e.what()));
  }
}

WayAttributes way_attributes_from_tags(const std::map<std::string, std::string>& tags) {
  WayAttributes a;
  const auto highway = tags.find("highway");
  if (highway == tags.end()) return a;
  const std::string& kind = highway->second;
  if (kind.size() > 5 && kind.ends_with("_link")) {
    a.way_class = WayClass::Link;
  } else if (kind == "motorway" || kind == "trunk") {
    a.way_class = WayClass::Motorway;
  } else if (kind == "primary") {
    a.way_class = WayClass::Primary;
  } else if (kind == "secondary") {
    a.way_class = WayClass::Secondary;
  } else {
    a.way_class = WayClass::Other;
  }
  if (const auto lanes = tags.find("lanes"); lanes != tags.end()) a.lanes = parse_lanes(lanes->second);
  a.bridge = truthy(tags, "bridge");
  a.tunnel = truthy(tags, "tunnel");
  if (const auto oneway = tags.find("oneway"); oneway != tags.end()) {
    a.oneway = oneway->second == "yes" || oneway->second == "true" || oneway->second == "1" || oneway->second == "-1";
  }
  a.toll = truthy(tags, "toll");
  if (const auto junction = tags.find("junction"); junction != tags.end()) {
    a.roundabout = junction->second == "roundabout" || junction->second == "circular";
  }
  a.shoulder = truthy(tags, "shoulder");
  return a;
}

FixtureProvider FixtureProvider::from_json(const nlohmann::json& doc) {
  try {
    std::vector<Way> ways;
    for (const auto& entry : doc) {
      Way way;
      for (const auto& point : entry.at("polyline")) {
        way.polyline.emplace_back(point.at(0).get<double>(), point.at(1).get<double>());
      }
      if (way.polyline.empty()) fail(ErrorKind::Parse, "fixture way has an empty polyline");
      way.attributes = way_attributes_from_json(entry.at("attributes"));
      ways.push_back(std::move(way));
    }
    return FixtureProvider(std::move(ways));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("fixture document: {}", e.what()));
  }
}

FixtureProvider FixtureProvider::from_file(const std::string& path) { return from_json(read_json_file(path)); }

WayAttributes FixtureProvider::lookup(const GpsFix& fix, double radius_m) {
  ++calls_;
  const LocalFrame frame(fix);
  const Way* nearest = nullptr;
  double best = radius_m;
  for (const auto& way : ways_) {
    const double d = polyline_distance(frame, way.polyline);
    if (d <= best && (nearest == nullptr || d < best)) {
      best = d;
      nearest = &way;
    }
  }
  return nearest ? nearest->attributes : WayAttributes::none();
}

CachingProvider::Key CachingProvider::key_of(const GpsFix& fix, double radius_m) {
  return {std::llround(fix.lat * 1e5), std::llround(fix.lon * 1e5), std::llround(radius_m * 1e3)};
}

WayAttributes CachingProvider::lookup(const GpsFix& fix, double radius_m) {
  const auto key = key_of(fix, radius_m);
  {
    std::shared_lock lock(mutex_);
    if (const auto it = entries_.find(key); it != entries_.end()) {
      ++hits_;
      return it->second;
    }
  }
  ++misses_;
  auto attributes = inner_->lookup(fix, radius_m);
  std::unique_lock lock(mutex_);
  return entries_.emplace(key, std::move(attributes)).first->second;
}

nlohmann::json CachingProvider::to_json() const {
  std::shared_lock lock(mutex_);
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [key, attributes] : entries_) {
    const auto& [lat, lon, radius] = key;
    doc[fmt::format("{},{},{}", lat, lon, radius)] = metasel::to_json(attributes);
  }
  return doc;
}

void CachingProvider::load_json(const nlohmann::json& doc) {
  std::unique_lock lock(mutex_);
  for (const auto& [text, value] : doc.items()) {
    long long lat = 0;
    long long lon = 0;
    long long radius = 0;
    if (std::sscanf(text.c_str(), "%lld,%lld,%lld", &lat, &lon, &radius) != 3) {
      fail(ErrorKind::Parse, fmt::format("cache key '{}' is malformed", text));
    }
    entries_[{lat, lon, radius}] = way_attributes_from_json(value);
  }
}

void CachingProvider::load_file(const std::string& path) { load_json(read_json_file(path)); }

void CachingProvider::save_file(const std::string& path) const { write_text_file(path, to_json().dump(1) + "\n"); }

void OverpassConfig::apply_environment() {
  if (const char* url = std::getenv("METASEL_OVERPASS_URL"); url && *url) endpoint = url;
  try {
    if (const char* rate = std::getenv("METASEL_RATE_LIMIT"); rate && *rate) requests_per_second = std::stod(rate);
    if (const char* retries_env = std::getenv("METASEL_RETRIES"); retries_env && *retries_env) {
      retries = static_cast<std::size_t>(std::stoul(retries_env));
    }
    if (const char* backoff = std::getenv("METASEL_BACKOFF_S"); backoff && *backoff) {
      backoff_initial_s = std::stod(backoff);
    }
  } catch (const std::exception&) {
    fail(ErrorKind::InvalidConfig, "malformed METASEL_* provider override");
  }
}

std::string overpass_query(const GpsFix& fix, double radius_m) {
  return fmt::format("[out:json][timeout:25];way(around:{:.1f},{:.5f},{:.5f})[highway];out tags geom;", radius_m,
                     fix.lat, fix.lon);
}

WayAttributes parse_overpass_response(const std::string& body, const GpsFix& fix, double radius_m) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("map service response is not JSON: {}", e.what()));
  }
  if (!doc.is_object() || !doc.contains("elements") || !doc.at("elements").is_array()) {
    fail(ErrorKind::Parse, "map service response has no elements array");
  }
  const LocalFrame frame(fix);
  std::optional<WayAttributes> nearest;
  double best = std::numeric_limits<double>::infinity();
  try {
    for (const auto& element : doc.at("elements")) {
      if (element.value("type", std::string{}) != "way") continue;
      std::map<std::string, std::string> tags;
      if (element.contains("tags")) {
        for (const auto& [k, v] : element.at("tags").items()) tags[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
      std::vector<std::pair<double, double>> polyline;
      if (element.contains("geometry")) {
        for (const auto& point : element.at("geometry")) {
          polyline.emplace_back(point.at("lat").get<double>(), point.at("lon").get<double>());
        }
      }
      // Ways without geometry were still returned by the around-filter.
      const double d = polyline.empty() ? radius_m : polyline_distance(frame, polyline);
      if (d < best) {
        best = d;
        nearest = way_attributes_from_tags(tags);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("map service element: {}", e.what()));
  }
  return nearest.value_or(WayAttributes::none());
}

OverpassProvider::OverpassProvider(OverpassConfig config) : config_(std::move(config)) {
  const auto scheme = config_.endpoint.find("://");
  if (scheme == std::string::npos) fail(ErrorKind::InvalidConfig, fmt::format("endpoint '{}' has no scheme", config_.endpoint));
  const auto path = config_.endpoint.find('/', scheme + 3);
  scheme_host_port_ = config_.endpoint.substr(0, path);
  path_ = path == std::string::npos ? "/" : config_.endpoint.substr(path);
  if (!(config_.requests_per_second > 0.0)) fail(ErrorKind::InvalidConfig, "request rate must be positive");
}

void OverpassProvider::wait_for_slot() {
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / config_.requests_per_second));
  std::unique_lock lock(gate_);
  const auto now = std::chrono::steady_clock::now();
  if (next_slot_ > now) std::this_thread::sleep_until(next_slot_);
  next_slot_ = std::max(now, next_slot_) + interval;
}

WayAttributes OverpassProvider::lookup(const GpsFix& fix, double radius_m) {
  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config_.timeout_s));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);

  std::string last_error;
  double backoff = config_.backoff_initial_s;
  for (std::size_t attempt = 0; attempt <= config_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
    wait_for_slot();
    ++requests_;
    const auto response = client.Post(path_, httplib::Params{{"data", overpass_query(fix, radius_m)}});
    if (!response) {
      last_error = httplib::to_string(response.error());
      continue;
    }
    if (response->status == 200) return parse_overpass_response(response->body, fix, radius_m);
    last_error = fmt::format("HTTP {}", response->status);
    // Only throttling and server-side failures are worth retrying.
    if (response->status != 429 && response->status < 500) break;
  }
  fail(ErrorKind::ProviderUnavailable,
       fmt::format("{} unreachable after {} attempt(s): {}", config_.endpoint, config_.retries + 1, last_error));
}

WayAttributes fetch_way_attributes(const GpsFix& fix, double radius_m, AttributeProvider& provider) {
  validate_fix(fix);
  if (!(radius_m > 0.0)) fail(ErrorKind::InvalidConfig, "search radius must be positive");
  return provider.lookup(GpsFix{round5(fix.lat), round5(fix.lon), fix.t}, radius_m);
}

SampleMetadata accumulate_tags(const std::string& sample_id, std::span<const GpsFix> trace,
                               AttributeProvider& provider, const MetadataSchema& schema,
                               const ExtractOptions& options) {
  if (trace.size() < 2) {
    fail(ErrorKind::InsufficientTrace, fmt::format("trace '{}' has {} fix(es)", sample_id, trace.size()));
  }
  if (!(options.gap_cap_s > 0.0)) fail(ErrorKind::InvalidConfig, "gap cap must be positive");
  for (std::size_t k = 0; k < trace.size(); ++k) {
    validate_fix(trace[k]);
    if (k > 0 && !(trace[k].t > trace[k - 1].t)) {
      fail(ErrorKind::InvalidTrace, fmt::format("trace '{}' timestamps not increasing at fix {}", sample_id, k));
    }
  }

  std::vector<double> seconds(schema.cell_count(), 0.0);
  double total = 0.0;
  auto credit = [&](const char* domain, const std::string& category, double dt) {
    if (const auto j = schema.find({domain, category})) seconds[*j] += dt;
  };
  for (std::size_t k = 0; k + 1 < trace.size(); ++k) {
    const double dt = std::min(trace[k + 1].t - trace[k].t, options.gap_cap_s);
    total += dt;
    const auto a = fetch_way_attributes(trace[k], options.radius_m, provider);
    if (a.way_class == WayClass::None) continue;
    switch (a.way_class) {
      case WayClass::Motorway: credit("Way type", "Highway", dt); break;
      case WayClass::Primary: credit("Way type", "Primary way", dt); break;
      case WayClass::Secondary: credit("Way type", "Secondary way", dt); break;
      case WayClass::Link: credit("Way type", "Link way", dt); break;
      default: break;
    }
    if (a.lanes) {
      const int lanes = std::clamp(*a.lanes, 1, 6);
      credit("Number of lanes", lanes == 1 ? "1-lane" : fmt::format("{}-lanes", lanes), dt);
    }
    if (a.bridge) credit("Bridge", "Bridge", dt);
    if (a.oneway) credit("One way", "One way", dt);
    if (a.toll) credit("Toll", "Toll", dt);
    if (a.tunnel) credit("Tunnel", "Tunnel", dt);
    if (a.roundabout) credit("Roundabout", "Roundabout", dt);
    if (a.shoulder) credit("Shoulder", "Shoulder", dt);
  }

  SampleMetadata sample{sample_id, total, {}};
  for (std::size_t j = 0; j < seconds.size(); ++j) {
    if (seconds[j] > 0.0) sample.tag_durations[schema.cell(j)] = seconds[j];
  }
  validate_sample(sample, schema);
  return sample;
}

std::vector<Trace> read_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, fmt::format("cannot open '{}'", path));
  std::vector<Trace> traces;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto record = nlohmann::json::parse(line);
      Trace trace;
      trace.sample_id = record.at("sample_id").get<std::string>();
      for (const auto& fix : record.at("fixes")) {
        trace.fixes.push_back({fix.at("lat").get<double>(), fix.at("lon").get<double>(), fix.at("t").get<double>()});
      }
      if (!seen.insert(trace.sample_id).second) {
        fail(ErrorKind::InvalidTrace, fmt::format("{}:{}: duplicate sample id '{}'", path, line_no, trace.sample_id));
      }
      traces.push_back(std::move(trace));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, fmt::format("{}:{}: {}", path, line_no, e.what()));
    }
  }
  return traces;
}

nlohmann::json ExtractionReport::to_json() const {
  nlohmann::json failed = nlohmann::json::array();
  for (const auto& f : failures) failed.push_back({{"sample_id", f.sample_id}, {"reason", f.reason}});
  return {{"successes", successes}, {"failures", failed}, {"total_seconds", total_seconds}};
}

ExtractionResult extract_corpus(std::span<const Trace> traces, AttributeProvider& provider,
                                const MetadataSchema& schema, const ExtractOptions& options, bool allow_empty) {
  std::set<std::string> ids;
  for (const auto& trace : traces) {
    if (!ids.insert(trace.sample_id).second) {
      fail(ErrorKind::InvalidTrace, fmt::format("duplicate sample id '{}'", trace.sample_id));
    }
  }

  std::vector<std::optional<SampleMetadata>> outputs(traces.size());
  std::vector<std::string> reasons(traces.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < traces.size(); k = next++) {
      try {
        outputs[k] = accumulate_tags(traces[k].sample_id, traces[k].fixes, provider, schema, options);
      } catch (const std::exception& e) {
        reasons[k] = e.what();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.concurrency, 1, std::max<std::size_t>(1, traces.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExtractionResult result;
  for (std::size_t k = 0; k < traces.size(); ++k) {
    if (outputs[k]) {
      result.report.total_seconds += outputs[k]->total_duration_s;
      ++result.report.successes;
      result.samples.push_back(std::move(*outputs[k]));
    } else {
      result.report.failures.push_back({traces[k].sample_id, reasons[k]});
    }
  }
  if (result.report.successes == 0 && !allow_empty) {
    fail(ErrorKind::ZeroSuccess, fmt::format("no trace out of {} could be extracted", traces.size()));
  }
  return result;
}

}  // namespace metasel
