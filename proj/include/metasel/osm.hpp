#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasel/metadata.hpp"

namespace metasel {

struct GpsFix {
  double lat = 0.0;
  double lon = 0.0;
  double t = 0.0;
};

enum class WayClass { Motorway, Primary, Secondary, Link, Other, None };

std::string to_string(WayClass way_class);
WayClass parse_way_class(const std::string& text);

struct WayAttributes {
  WayClass way_class = WayClass::None;
  std::optional<int> lanes;
  bool bridge = false;
  bool tunnel = false;
  bool oneway = false;
  bool toll = false;
  bool roundabout = false;
  bool shoulder = false;

  static WayAttributes none() { return {}; }
  bool operator==(const WayAttributes&) const = default;
};

nlohmann::json to_json(const WayAttributes& attributes);
WayAttributes way_attributes_from_json(const nlohmann::json& doc);

/// Maps raw map tags (highway=*, lanes=*, oneway=*, ...) onto attributes.
WayAttributes way_attributes_from_tags(const std::map<std::string, std::string>& tags);

class AttributeProvider {
 public:
  virtual ~AttributeProvider() = default;
  /// Attributes of the nearest way within radius_m, or WayClass::None.
  virtual WayAttributes lookup(const GpsFix& fix, double radius_m) = 0;
};

/// Offline provider over hand-authored polylines, matched by point-to-segment
/// distance.
class FixtureProvider : public AttributeProvider {
 public:
  struct Way {
    std::vector<std::pair<double, double>> polyline;  // (lat, lon)
    WayAttributes attributes;
  };

  explicit FixtureProvider(std::vector<Way> ways) : ways_(std::move(ways)) {}
  FixtureProvider(FixtureProvider&& other) noexcept
      : ways_(std::move(other.ways_)), calls_(other.calls_.load()) {}
  static FixtureProvider from_json(const nlohmann::json& doc);
  static FixtureProvider from_file(const std::string& path);

  WayAttributes lookup(const GpsFix& fix, double radius_m) override;
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::vector<Way> ways_;
  std::atomic<std::size_t> calls_{0};
};

/// Memoises another provider, keyed by the 5-decimal rounded fix and radius.
/// Readers share a lock; inserts are serialised.
class CachingProvider : public AttributeProvider {
 public:
  explicit CachingProvider(std::shared_ptr<AttributeProvider> inner) : inner_(std::move(inner)) {}

  WayAttributes lookup(const GpsFix& fix, double radius_m) override;

  std::size_t hits() const noexcept { return hits_.load(); }
  std::size_t misses() const noexcept { return misses_.load(); }

  /// Persistent form: {"lat,lon,radius": attributes}, keys sorted.
  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& doc);
  void load_file(const std::string& path);
  void save_file(const std::string& path) const;

 private:
  using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
  static Key key_of(const GpsFix& fix, double radius_m);

  std::shared_ptr<AttributeProvider> inner_;
  mutable std::shared_mutex mutex_;
  std::map<Key, WayAttributes> entries_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

struct OverpassConfig {
  std::string endpoint = "https://overpass-api.de/api/interpreter";
  double requests_per_second = 1.0;
  std::size_t retries = 3;
  double backoff_initial_s = 1.0;
  double timeout_s = 30.0;

  /// Overrides from METASEL_OVERPASS_URL, METASEL_RATE_LIMIT,
  /// METASEL_RETRIES and METASEL_BACKOFF_S when set.
  void apply_environment();
};

/// Builds the around-query for one fix.
std::string overpass_query(const GpsFix& fix, double radius_m);

/// Picks the way whose geometry passes closest to the fix. Malformed
/// documents raise a parse error.
WayAttributes parse_overpass_response(const std::string& body, const GpsFix& fix, double radius_m);

/// Online provider against an Overpass-compatible endpoint. Requests pass
/// through a process-wide rate gate and are retried with exponential backoff.
class OverpassProvider : public AttributeProvider {
 public:
  explicit OverpassProvider(OverpassConfig config);

  WayAttributes lookup(const GpsFix& fix, double radius_m) override;
  std::size_t requests() const noexcept { return requests_.load(); }

 private:
  void wait_for_slot();

  OverpassConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::mutex gate_;
  std::chrono::steady_clock::time_point next_slot_{};
  std::atomic<std::size_t> requests_{0};
};

/// Validates the fix and radius, rounds the fix to 5 decimals, then asks the
/// provider.
WayAttributes fetch_way_attributes(const GpsFix& fix, double radius_m, AttributeProvider& provider);

struct ExtractOptions {
  double radius_m = 15.0;
  double gap_cap_s = 5.0;
  std::size_t concurrency = 1;
};

SampleMetadata accumulate_tags(const std::string& sample_id, std::span<const GpsFix> trace,
                               AttributeProvider& provider, const MetadataSchema& schema,
                               const ExtractOptions& options = {});

struct Trace {
  std::string sample_id;
  std::vector<GpsFix> fixes;
};

/// Newline-delimited {sample_id, fixes: [{lat, lon, t}]}.
std::vector<Trace> read_traces(const std::string& path);

struct ExtractionFailure {
  std::string sample_id;
  std::string reason;
};

struct ExtractionReport {
  std::size_t successes = 0;
  std::vector<ExtractionFailure> failures;
  double total_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct ExtractionResult {
  std::vector<SampleMetadata> samples;
  ExtractionReport report;
};

/// Extracts every trace in isolation; failures are reported, not thrown.
/// Throws a zero-success error when nothing could be extracted unless
/// allow_empty is set.
ExtractionResult extract_corpus(std::span<const Trace> traces, AttributeProvider& provider,
                                const MetadataSchema& schema, const ExtractOptions& options,
                                bool allow_empty = false);

}  // namespace metasel
