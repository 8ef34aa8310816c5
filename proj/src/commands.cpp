#include "metasel/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "metasel/error.hpp"
#include "metasel/metrics.hpp"
#include "metasel/osm.hpp"
#include "metasel/synth.hpp"

namespace fs = std::filesystem;

namespace metasel {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const nlohmann::json& section(const RunConfig& config, const char* name) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!config.doc.contains(name)) return empty;
  const auto& s = config.doc.at(name);
  if (!s.is_object()) fail(ErrorKind::InvalidConfig, fmt::format("config section '{}' must be an object", name));
  return s;
}

std::string require_string(const RunConfig& config, const char* key) {
  if (!config.doc.contains(key) || !config.doc.at(key).is_string()) {
    fail(ErrorKind::InvalidConfig, fmt::format("config needs a '{}' path", key));
  }
  return config.doc.at(key).get<std::string>();
}

fs::path existing(const RunConfig& config, const std::string& path) {
  auto resolved = config.resolve(path);
  if (!fs::exists(resolved)) fail(ErrorKind::InvalidConfig, fmt::format("'{}' does not exist", resolved.string()));
  return resolved;
}

MetadataSchema load_schema(const RunConfig& config) {
  if (!config.doc.contains("schema")) return MetadataSchema::road_attributes();
  return MetadataSchema::from_json(read_json_file(existing(config, config.doc.at("schema").get<std::string>())));
}

DistributionTable load_expected(const RunConfig& config, const MetadataSchema& schema, const std::string& path,
                                std::ostream& log) {
  auto validated = validate_expected(distribution_from_json(read_json_file(existing(config, path)), schema), schema);
  for (const auto& w : validated.warnings) log << "warning: " << w << '\n';
  return validated.table;
}

double keep_ratio_of(const RunConfig& config) {
  const double rho = config.doc.value("rho", 0.2);
  if (!(rho > 0.0 && rho <= 1.0)) fail(ErrorKind::InvalidConfig, "rho must be in (0, 1]");
  return rho;
}

PipelineOptions pipeline_options(const RunConfig& config, double rho) {
  PipelineOptions options;
  options.seed = config.seed;
  const auto& net = section(config, "net");
  if (net.contains("hidden")) options.hidden = net.at("hidden").get<std::vector<std::size_t>>();

  const auto& t = section(config, "train");
  options.train.epochs = t.value("epochs", options.train.epochs);
  options.train.batch_size = t.value("batch_size", options.train.batch_size);
  options.train.temperature = t.value("temperature", options.train.temperature);
  options.train.lr = t.value("lr", options.train.lr);
  options.train.metric = MetricChoice::parse(t.value("metric", std::string("category")), t.value("blend_alpha", 0.5));
  options.train.keep_ratio = rho;
  options.train.validate();

  const auto& s = section(config, "selector");
  options.selector.keep_ratio = rho;
  options.selector.epsilon0 = s.value("epsilon0", options.selector.epsilon0);
  options.selector.eta = s.value("eta", options.selector.eta);
  options.selector.max_passes = s.value("max_passes", options.selector.max_passes);
  options.selector.filter = s.value("filter", true);
  const auto relaxation = s.value("relaxation", std::string("toward_one"));
  if (relaxation == "toward_one") {
    options.selector.relaxation = Relaxation::TowardOne;
  } else if (relaxation == "paper_decay") {
    options.selector.relaxation = Relaxation::PaperDecay;
  } else {
    fail(ErrorKind::InvalidConfig, fmt::format("unknown relaxation '{}'", relaxation));
  }
  options.selector.validate();
  return options;
}

NetConfig net_config_of(const PipelineOptions& options, std::size_t inputs) {
  NetConfig config{{inputs}, splitmix(options.seed)};
  for (const auto h : options.hidden) config.layer_sizes.push_back(h);
  config.layer_sizes.push_back(1);
  return config;
}

void ensure_out_dir(const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) fail(ErrorKind::Io, fmt::format("cannot create '{}': {}", config.out_dir.string(), ec.message()));
}

std::string out_path(const RunConfig& config, const char* name) { return (config.out_dir / name).string(); }

std::string dump(const nlohmann::json& doc) { return doc.dump(2) + "\n"; }

std::string fmt_ratio(double v) { return std::isnan(v) ? std::string("nan") : fmt::format("{:.6f}", v); }

struct LoadedCorpus {
  std::vector<SampleMetadata> samples;
  DenseCorpus dense;
};

LoadedCorpus load_corpus(const RunConfig& config, const MetadataSchema& schema) {
  auto samples = read_samples(existing(config, require_string(config, "corpus")).string(), schema);
  if (samples.empty()) fail(ErrorKind::EmptyCorpus, "corpus file has no samples");
  DenseCorpus dense(samples, schema);
  return {std::move(samples), std::move(dense)};
}

nlohmann::json checkpoint_json(const RunConfig& config, const NetConfig& net, const NetParams& params,
                               const DenseCorpus& corpus, const DistributionTable& e, const MetadataSchema& schema,
                               const TrainConfig& train) {
  auto doc = params_to_json(net, params);
  doc["seed"] = config.seed;
  doc["config_hash"] = config.hash();
  doc["corpus_fingerprint"] = corpus_fingerprint(corpus);
  doc["expected_fingerprint"] = fingerprint(to_json(e, schema).dump());
  doc["train"] = {{"epochs", train.epochs}, {"batch_size", train.batch_size}, {"rho", train.keep_ratio},
                  {"metric", train.metric.name()}, {"temperature", train.temperature}, {"lr", train.lr}};
  return doc;
}

void write_selection_outputs(const RunConfig& config, const MetadataSchema& schema, const DenseCorpus& corpus,
                             const DistributionTable& e, const SelectionResult& selection) {
  write_text_file(out_path(config, "manifest.json"), dump(manifest_json(selection, schema)));
  write_text_file(out_path(config, "metrics.json"), dump(to_json(*selection.report)));
  write_text_file(out_path(config, "distribution.csv"),
                  distribution_csv(schema, corpus.aggregate_all(), e, selection.achieved));
  if (selection.selected_index.size() >= 2) {
    std::vector<RatioVector> vectors;
    for (const auto i : selection.selected_index) vectors.push_back(corpus.ratio_vector(i));
    const auto matrix = pairwise_similarity_matrix(vectors, 30, config.seed);
    write_text_file(out_path(config, "similarity.csv"), matrix.to_csv(selection.selected_ids));
  }
}

struct Manifest {
  std::string path;
  std::string method;
  std::vector<std::string> ids;
};

Manifest read_manifest(const RunConfig& config, const std::string& path) {
  const auto doc = read_json_file(existing(config, path).string());
  try {
    return {path, doc.value("method", std::string("unknown")), doc.at("selected_ids").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("manifest '{}': {}", path, e.what()));
  }
}

std::vector<std::size_t> resolve_ids(const DenseCorpus& corpus, const Manifest& manifest) {
  std::map<std::string, std::size_t> positions;
  for (std::size_t i = 0; i < corpus.size(); ++i) positions.emplace(corpus.id(i), i);
  std::vector<std::size_t> index;
  std::vector<std::string> unknown;
  std::set<std::string> seen;
  for (const auto& id : manifest.ids) {
    const auto it = positions.find(id);
    if (it == positions.end()) {
      unknown.push_back(id);
    } else if (!seen.insert(id).second) {
      fail(ErrorKind::InvalidConfig, fmt::format("manifest '{}' lists '{}' twice", manifest.path, id));
    } else {
      index.push_back(it->second);
    }
  }
  if (!unknown.empty()) {
    std::string listed;
    for (const auto& id : unknown) listed += (listed.empty() ? "" : ", ") + id;
    fail(ErrorKind::InvalidConfig, fmt::format("manifest '{}' references unknown ids: {}", manifest.path, listed));
  }
  if (index.empty()) fail(ErrorKind::InvalidConfig, fmt::format("manifest '{}' selects nothing", manifest.path));
  return index;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, count));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) fn(k);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

PipelineResult run_pipeline(const DenseCorpus& corpus, const MetadataSchema& schema, const DistributionTable& e,
                            const PipelineOptions& options) {
  PipelineResult result;
  auto train_config = options.train;
  train_config.shuffle_seed = splitmix(options.seed + 1);
  result.trained = train(corpus, schema, e, net_config_of(options, corpus.cells()), train_config);
  result.scores = score_corpus(result.trained.params, corpus);
  result.selection = select(corpus, result.scores, schema, &e, options.selector);
  return result;
}

std::string fingerprint(const std::string& text) { return fmt::format("{:016x}", fnv1a(text)); }

std::string corpus_fingerprint(const DenseCorpus& corpus) {
  std::string text;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    text += corpus.id(i);
    text += fmt::format(":{:.17g}", corpus.total(i));
    for (const double v : corpus.tags(i)) text += fmt::format(",{:.17g}", v);
    text += '\n';
  }
  return fingerprint(text);
}

fs::path RunConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

std::string RunConfig::hash() const {
  auto canonical = doc;
  canonical["seed"] = seed;
  canonical.erase("out");
  canonical.erase("threads");
  return fingerprint(canonical.dump());
}

RunConfig load_run_config(const GlobalFlags& flags) {
  RunConfig config;
  config.doc = nlohmann::json::object();
  config.base_dir = fs::current_path();
  if (flags.config_path) {
    config.doc = read_json_file(*flags.config_path);
    if (!config.doc.is_object()) fail(ErrorKind::InvalidConfig, "config document must be a JSON object");
    config.base_dir = fs::absolute(*flags.config_path).parent_path();
  }
  if (flags.seed) {
    config.seed = *flags.seed;
  } else if (config.doc.contains("seed") && config.doc.at("seed").is_number_unsigned()) {
    config.seed = config.doc.at("seed").get<std::uint64_t>();
  } else {
    fail(ErrorKind::InvalidConfig, "a seed is required (--seed or \"seed\" in the config)");
  }
  if (flags.out_dir) {
    config.out_dir = fs::absolute(*flags.out_dir);
  } else {
    config.out_dir = config.resolve(config.doc.value("out", std::string("out")));
  }
  config.threads = flags.threads.value_or(config.doc.value("threads", std::size_t{1}));
  if (config.threads == 0) config.threads = 1;
  return config;
}

std::string distribution_csv(const MetadataSchema& schema, const DistributionTable& original,
                             const DistributionTable& expected, const DistributionTable& achieved) {
  std::ostringstream out;
  out << "cell,Original,E,Achieved\n";
  for (std::size_t j = 0; j < schema.cell_count(); ++j) {
    out << '"' << schema.cell(j).str() << '"' << ',' << fmt_ratio(original.values[j]) << ','
        << (expected.included[j] ? fmt_ratio(expected.values[j]) : std::string("-")) << ','
        << fmt_ratio(achieved.values[j]) << '\n';
  }
  return out.str();
}

int cmd_synth(const RunConfig& config, std::ostream& log) {
  const auto schema = load_schema(config);
  const auto& s = section(config, "synth");
  const std::size_t n = s.value("n", std::size_t{1000});
  SynthProfile profile;
  const auto& spec = s.contains("profile") ? s.at("profile") : nlohmann::json("road-mix");
  if (spec.is_object()) {
    profile = SynthProfile::from_json(spec);
  } else if (const auto name = spec.get<std::string>(); name.ends_with(".json")) {
    profile = SynthProfile::from_json(read_json_file(existing(config, name).string()));
  } else {
    profile = SynthProfile::builtin(name, 0);
  }
  profile.seed = config.seed;
  const auto samples = generate_synthetic(n, schema, profile);
  ensure_out_dir(config);
  write_samples(out_path(config, "metadata.ndjson"), samples);
  write_text_file(out_path(config, "profile.json"), dump(profile.to_json()));
  log << fmt::format("synth: wrote {} samples from profile '{}'\n", samples.size(), profile.name);
  return kExitOk;
}

int cmd_extract(const RunConfig& config, std::ostream& log) {
  const auto schema = load_schema(config);
  const auto& x = section(config, "extract");
  if (!x.contains("traces")) fail(ErrorKind::InvalidConfig, "extract section needs 'traces'");
  const auto traces = read_traces(existing(config, x.at("traces").get<std::string>()).string());

  ExtractOptions options;
  options.radius_m = x.value("radius_m", options.radius_m);
  options.gap_cap_s = x.value("gap_cap_s", options.gap_cap_s);
  options.concurrency = config.threads;

  const auto& p = x.contains("provider") ? x.at("provider") : nlohmann::json::object();
  std::shared_ptr<AttributeProvider> inner;
  const auto kind = p.value("kind", std::string(p.contains("fixture") ? "fixture" : "overpass"));
  if (kind == "fixture") {
    if (!p.contains("fixture")) fail(ErrorKind::InvalidConfig, "fixture provider needs a 'fixture' path");
    inner = std::make_shared<FixtureProvider>(
        FixtureProvider::from_file(existing(config, p.at("fixture").get<std::string>()).string()));
  } else if (kind == "overpass") {
    OverpassConfig oc;
    oc.endpoint = p.value("endpoint", oc.endpoint);
    oc.requests_per_second = p.value("requests_per_second", oc.requests_per_second);
    oc.retries = p.value("retries", oc.retries);
    oc.backoff_initial_s = p.value("backoff_s", oc.backoff_initial_s);
    oc.timeout_s = p.value("timeout_s", oc.timeout_s);
    oc.apply_environment();
    inner = std::make_shared<OverpassProvider>(oc);
  } else {
    fail(ErrorKind::InvalidConfig, fmt::format("unknown provider kind '{}'", kind));
  }
  auto cache = std::make_shared<CachingProvider>(inner);
  std::optional<fs::path> cache_path;
  if (x.contains("cache")) {
    cache_path = config.resolve(x.at("cache").get<std::string>());
    if (fs::exists(*cache_path)) cache->load_file(cache_path->string());
  }

  const auto result = extract_corpus(traces, *cache, schema, options, /*allow_empty=*/true);
  ensure_out_dir(config);
  write_samples(out_path(config, "metadata.ndjson"), result.samples);
  write_text_file(out_path(config, "extraction_report.json"), dump(result.report.to_json()));
  if (cache_path) cache->save_file(cache_path->string());
  log << fmt::format("extract: {} succeeded, {} failed, {:.1f} s of metadata\n", result.report.successes,
                     result.report.failures.size(), result.report.total_seconds);
  return result.report.successes == 0 ? kExitExtractionEmpty : kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  const auto schema = load_schema(config);
  const auto corpus = load_corpus(config, schema);
  const auto e = load_expected(config, schema, require_string(config, "expected"), log);
  const auto options = pipeline_options(config, keep_ratio_of(config));
  auto train_config = options.train;
  train_config.shuffle_seed = splitmix(options.seed + 1);
  const auto net = net_config_of(options, schema.cell_count());
  const auto trained = train(corpus.dense, schema, e, net, train_config);
  for (const auto& w : trained.log.warnings) log << "warning: " << w << '\n';
  ensure_out_dir(config);
  write_text_file(out_path(config, "checkpoint.json"),
                  dump(checkpoint_json(config, net, trained.params, corpus.dense, e, schema, train_config)));
  write_text_file(out_path(config, "train_log.csv"), trained.log.to_csv());
  log << fmt::format("train: {} epochs, final loss {:.6f}\n", trained.log.epochs.size(),
                     trained.log.epochs.back().loss);
  return kExitOk;
}

int cmd_select(const RunConfig& config, std::ostream& log) {
  const auto schema = load_schema(config);
  const auto corpus = load_corpus(config, schema);
  const auto e = load_expected(config, schema, require_string(config, "expected"), log);
  const double rho = keep_ratio_of(config);
  const auto options = pipeline_options(config, rho);
  const auto method = section(config, "selector").value("method", std::string("trained"));

  SelectionResult selection;
  if (method == "random") {
    selection = random_select(corpus.dense, schema, &e, rho, config.seed);
  } else if (method == "dc-surrogate") {
    selection = dc_surrogate_select(corpus.dense, schema, &e, rho);
  } else if (method == "trained") {
    NetParams params;
    if (config.doc.contains("checkpoint") && fs::exists(config.resolve(config.doc.at("checkpoint").get<std::string>()))) {
      const auto doc = read_json_file(config.resolve(config.doc.at("checkpoint").get<std::string>()).string());
      if (doc.value("corpus_fingerprint", std::string()) != corpus_fingerprint(corpus.dense)) {
        fail(ErrorKind::InvalidConfig, "checkpoint was trained on a different corpus");
      }
      if (doc.value("expected_fingerprint", std::string()) != fingerprint(to_json(e, schema).dump())) {
        fail(ErrorKind::InvalidConfig, "checkpoint was trained against a different expected distribution");
      }
      params = params_from_json(doc);
      if (params.input_size() != schema.cell_count()) fail(ErrorKind::Shape, "checkpoint input width differs from schema");
      log << "select: reusing checkpoint\n";
    } else {
      auto train_config = options.train;
      train_config.shuffle_seed = splitmix(options.seed + 1);
      const auto net = net_config_of(options, schema.cell_count());
      const auto trained = train(corpus.dense, schema, e, net, train_config);
      for (const auto& w : trained.log.warnings) log << "warning: " << w << '\n';
      params = trained.params;
      ensure_out_dir(config);
      write_text_file(out_path(config, "checkpoint.json"),
                      dump(checkpoint_json(config, net, params, corpus.dense, e, schema, train_config)));
      write_text_file(out_path(config, "train_log.csv"), trained.log.to_csv());
    }
    selection = select(corpus.dense, score_corpus(params, corpus.dense), schema, &e, options.selector);
  } else {
    fail(ErrorKind::InvalidConfig, fmt::format("unknown selection method '{}'", method));
  }

  ensure_out_dir(config);
  write_selection_outputs(config, schema, corpus.dense, e, selection);
  log << fmt::format("select: {} of {} samples, S_c {:.4f}, S_d {}\n", selection.quota, selection.n,
                     selection.report->s_c, fmt_ratio(selection.report->s_d));
  return kExitOk;
}

int cmd_evaluate(const RunConfig& config, std::ostream& log) {
  const auto schema = load_schema(config);
  const auto corpus = load_corpus(config, schema);
  const auto e = load_expected(config, schema, require_string(config, "expected"), log);
  const auto& ev = section(config, "evaluate");
  if (!ev.contains("manifests") || ev.at("manifests").empty()) {
    fail(ErrorKind::InvalidConfig, "evaluate section needs at least one manifest");
  }
  const std::size_t pair_cap = ev.value("pair_cap", std::size_t{20000});

  std::ostringstream csv;
  csv << "manifest,method,selected,s_c,s_d,avg_pairwise_mae\n";
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& entry : ev.at("manifests")) {
    const auto manifest = read_manifest(config, entry.get<std::string>());
    const auto index = resolve_ids(corpus.dense, manifest);
    const auto report = metric_report(schema, corpus.dense.aggregate(index), e);
    std::vector<RatioVector> vectors;
    for (const auto i : index) vectors.push_back(corpus.dense.ratio_vector(i));
    const double mae = vectors.size() >= 2 ? avg_pairwise_mae(vectors, pair_cap, config.seed)
                                           : std::numeric_limits<double>::quiet_NaN();
    csv << fmt::format("{},{},{},{},{},{}\n", manifest.path, manifest.method, index.size(), fmt_ratio(report.s_c),
                       fmt_ratio(report.s_d), fmt_ratio(mae));
    auto row = to_json(report);
    row["manifest"] = manifest.path;
    row["method"] = manifest.method;
    row["selected"] = index.size();
    row["avg_pairwise_mae"] = std::isnan(mae) ? nlohmann::json(nullptr) : nlohmann::json(mae);
    rows.push_back(row);
  }
  ensure_out_dir(config);
  write_text_file(out_path(config, "evaluation.csv"), csv.str());
  write_text_file(out_path(config, "evaluation.json"), dump({{"config_hash", config.hash()}, {"rows", rows}}));
  log << fmt::format("evaluate: {} manifest(s)\n", rows.size());
  return kExitOk;
}

int cmd_sweep(const RunConfig& config, std::ostream& log) {
  const auto schema = load_schema(config);
  const auto corpus = load_corpus(config, schema);
  const auto& sw = section(config, "sweep");
  if (!sw.contains("rho_list") || sw.at("rho_list").empty()) fail(ErrorKind::InvalidConfig, "sweep needs rho_list");
  if (!sw.contains("expected_list") || sw.at("expected_list").empty()) {
    fail(ErrorKind::InvalidConfig, "sweep needs expected_list");
  }
  const auto rhos = sw.at("rho_list").get<std::vector<double>>();
  const auto paths = sw.at("expected_list").get<std::vector<std::string>>();
  std::vector<DistributionTable> expected;
  for (const auto& p : paths) expected.push_back(load_expected(config, schema, p, log));
  for (const double rho : rhos) pipeline_options(config, rho);  // validate every cell up front

  struct Cell {
    double rho = 0.0;
    std::size_t e = 0;
    bool ok = false;
    double s_c = 0.0;
    double s_d = 0.0;
    std::string error;
  };
  std::vector<Cell> cells;
  for (const double rho : rhos) {
    for (std::size_t k = 0; k < expected.size(); ++k) cells.push_back(Cell{rho, k, false, 0.0, 0.0, {}});
  }
  parallel_for(cells.size(), config.threads, [&](std::size_t c) {
    auto& cell = cells[c];
    try {
      auto options = pipeline_options(config, cell.rho);
      options.seed = splitmix(config.seed ^ splitmix(c));
      const auto result = run_pipeline(corpus.dense, schema, expected[cell.e], options);
      cell.s_c = result.selection.report->s_c;
      cell.s_d = result.selection.report->s_d;
      cell.ok = true;
    } catch (const std::exception& err) {
      cell.error = err.what();
    }
  });

  std::ostringstream detail;
  detail << "rho,expected,status,s_c,s_d\n";
  for (const auto& cell : cells) {
    detail << fmt::format("{},{},{},{},{}\n", cell.rho, paths[cell.e], cell.ok ? "ok" : "failed",
                          cell.ok ? fmt_ratio(cell.s_c) : "", cell.ok ? fmt_ratio(cell.s_d) : "");
    if (!cell.ok) log << fmt::format("sweep: rho {} / {} failed: {}\n", cell.rho, paths[cell.e], cell.error);
  }

  std::ostringstream summary;
  summary << "rho,cells,failed,s_c_mean,s_c_p30,s_c_p70,s_d_mean,s_d_p30,s_d_p70\n";
  for (const double rho : rhos) {
    std::vector<double> sc;
    std::vector<double> sd;
    std::size_t failed = 0;
    for (const auto& cell : cells) {
      if (cell.rho != rho) continue;
      if (!cell.ok) {
        ++failed;
        continue;
      }
      sc.push_back(cell.s_c);
      if (!std::isnan(cell.s_d)) sd.push_back(cell.s_d);
    }
    auto stats = [](const std::vector<double>& v) {
      if (v.empty()) return std::string(",,");
      double mean = 0.0;
      for (const double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      return fmt::format("{},{},{}", fmt_ratio(mean), fmt_ratio(empirical_quantile(v, 0.3)),
                         fmt_ratio(empirical_quantile(v, 0.7)));
    };
    summary << fmt::format("{},{},{},{},{}\n", rho, sc.size() + failed, failed, stats(sc), stats(sd));
  }
  ensure_out_dir(config);
  write_text_file(out_path(config, "sweep.csv"), summary.str());
  write_text_file(out_path(config, "sweep_cells.csv"), detail.str());
  log << fmt::format("sweep: {} cell(s)\n", cells.size());
  return kExitOk;
}

int cmd_report(const RunConfig& config, std::ostream& log) {
  const auto schema = load_schema(config);
  const auto corpus = load_corpus(config, schema);
  const auto e = load_expected(config, schema, require_string(config, "expected"), log);
  const auto manifest = read_manifest(config, require_string(config, "manifest"));
  const auto index = resolve_ids(corpus.dense, manifest);
  ensure_out_dir(config);
  write_text_file(out_path(config, "distribution.csv"),
                  distribution_csv(schema, corpus.dense.aggregate_all(), e, corpus.dense.aggregate(index)));
  if (index.size() >= 2) {
    std::vector<RatioVector> vectors;
    std::vector<std::string> labels;
    for (const auto i : index) {
      vectors.push_back(corpus.dense.ratio_vector(i));
      labels.push_back(corpus.dense.id(i));
    }
    const std::size_t cap = section(config, "report").value("similarity_samples", std::size_t{30});
    write_text_file(out_path(config, "similarity.csv"),
                    pairwise_similarity_matrix(vectors, cap, config.seed).to_csv(labels));
  }
  const auto report = metric_report(schema, corpus.dense.aggregate(index), e);
  write_text_file(out_path(config, "metrics.json"), dump(to_json(report)));
  log << fmt::format("report: {} selected, S_c {:.4f}\n", index.size(), report.s_c);
  return kExitOk;
}

int run_verb(const std::string& verb, const GlobalFlags& flags, std::ostream& log) {
  static const std::map<std::string, int (*)(const RunConfig&, std::ostream&)> verbs = {
      {"extract", cmd_extract}, {"synth", cmd_synth},   {"train", cmd_train},   {"select", cmd_select},
      {"evaluate", cmd_evaluate}, {"sweep", cmd_sweep}, {"report", cmd_report},
  };
  const auto it = verbs.find(verb);
  if (it == verbs.end()) {
    log << "error: unknown command '" << verb << "'\n";
    return kExitConfig;
  }
  try {
    return it->second(load_run_config(flags), log);
  } catch (const Error& err) {
    log << "error: " << err.what() << '\n';
    switch (err.kind()) {
      case ErrorKind::ZeroSuccess: return kExitExtractionEmpty;
      case ErrorKind::TrainingFailed:
      case ErrorKind::Numeric: return kExitTrainingFailed;
      default: return kExitConfig;
    }
  } catch (const nlohmann::json::exception& err) {
    log << "error: config: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& err) {
    log << "error: " << err.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace metasel
