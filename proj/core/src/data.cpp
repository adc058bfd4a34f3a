#include "feddrop/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "feddrop/errors.hpp"
#include "feddrop/random.hpp"

namespace feddrop {

namespace {

constexpr const char* kMagic = "feddrop-dataset 1";

// Counts summing to n, proportional to probs (largest remainder, ties to
// the lower class).
std::vector<std::size_t> allocate(const std::vector<double>& probs, std::size_t n) {
  std::vector<std::size_t> counts(probs.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    const double share = probs[c] * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(std::floor(share));
    assigned += counts[c];
    remainders.emplace_back(share - std::floor(share), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) {
    counts[remainders[i % remainders.size()].second] += 1;
  }
  return counts;
}

struct Geometry {
  std::vector<std::vector<std::vector<double>>> centers;  // class -> mode -> point
  std::vector<std::vector<double>> offsets;               // domain -> vector
};

Geometry make_geometry(const GeneratorConfig& cfg) {
  Geometry geo;
  Rng rng = make_stream(cfg.seed, StreamTag::kData, {0});
  geo.centers.resize(cfg.num_classes);
  for (auto& modes : geo.centers) {
    modes.resize(cfg.modes_per_class);
    for (auto& center : modes) {
      center.resize(cfg.input_dim);
      for (auto& v : center) v = standard_normal(rng);
    }
  }
  geo.offsets.resize(cfg.num_domains);
  for (auto& offset : geo.offsets) {
    offset.resize(cfg.input_dim);
    double norm = 0.0;
    for (auto& v : offset) {
      v = standard_normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : offset) v = norm > 0.0 ? cfg.domain_shift * v / norm : 0.0;
  }
  return geo;
}

Example draw_example(const GeneratorConfig& cfg, const Geometry& geo,
                     std::size_t label, std::size_t domain, Rng& rng) {
  Example ex;
  ex.label = label;
  ex.domain = domain;
  const auto& center = geo.centers[label][uniform_index(rng, cfg.modes_per_class)];
  ex.features.resize(cfg.input_dim);
  for (std::size_t i = 0; i < cfg.input_dim; ++i) {
    ex.features[i] = center[i] + geo.offsets[domain][i] + cfg.noise_std * standard_normal(rng);
  }
  return ex;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::size_t line_no) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw DataError("line " + std::to_string(line_no) + ": bad number '" +
                    std::string(text) + "'");
  }
  return value;
}

long long parse_int(std::string_view text, std::size_t line_no) {
  long long value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw DataError("line " + std::to_string(line_no) + ": bad integer '" +
                    std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void parse_generator_echo(const std::string& line, std::size_t line_no,
                          GeneratorConfig& cfg) {
  std::istringstream fields(line.substr(10));
  std::string key;
  std::string value;
  while (fields >> key >> value) {
    const auto count = [&] {
      return static_cast<std::size_t>(parse_int(value, line_no));
    };
    if (key == "num_clients") cfg.num_clients = count();
    else if (key == "examples_per_client") cfg.examples_per_client = count();
    else if (key == "eval_examples_per_domain") cfg.eval_examples_per_domain = count();
    else if (key == "modes_per_class") cfg.modes_per_class = count();
    else if (key == "class_skew") cfg.class_skew = parse_double(value, line_no);
    else if (key == "domain_shift") cfg.domain_shift = parse_double(value, line_no);
    else if (key == "noise_std") cfg.noise_std = parse_double(value, line_no);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else throw DataError("line " + std::to_string(line_no) + ": unknown generator key " + key);
  }
}

void write_record(std::ostream& out, const Example& ex, long long client) {
  out << ex.domain << ',' << client << ',' << ex.label;
  for (double v : ex.features) out << ',' << format_double(v);
  out << '\n';
}

}  // namespace

void GeneratorConfig::validate() const {
  if (num_domains == 0) throw ConfigError("num_domains must be >= 1");
  if (num_clients < num_domains)
    throw ConfigError("num_clients must be >= num_domains so every domain has a client");
  if (examples_per_client == 0) throw ConfigError("examples_per_client must be >= 1");
  if (eval_examples_per_domain == 0) throw ConfigError("eval_examples_per_domain must be >= 1");
  if (input_dim == 0) throw ConfigError("input_dim must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (modes_per_class == 0) throw ConfigError("modes_per_class must be >= 1");
  if (!(class_skew > 0.0)) throw ConfigError("class_skew must be > 0");
  if (!(domain_shift >= 0.0)) throw ConfigError("domain_shift must be >= 0");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
}

void FederatedDataset::validate() const {
  if (eval_sets.empty()) throw DataError("dataset has no domains");
  std::vector<bool> has_client(eval_sets.size(), false);
  const auto check = [&](const Example& ex) {
    if (ex.label >= num_classes) throw DataError("label out of range");
    if (ex.domain >= eval_sets.size()) throw DataError("domain out of range");
    if (ex.features.size() != input_dim) throw DataError("feature width mismatch");
    for (double v : ex.features)
      if (!std::isfinite(v)) throw DataError("non-finite feature");
  };
  for (const auto& client : clients) {
    if (client.examples.empty())
      throw DataError("client " + std::to_string(client.id) + " has no examples");
    if (client.domain >= eval_sets.size()) throw DataError("client domain out of range");
    has_client[client.domain] = true;
    for (const auto& ex : client.examples) {
      check(ex);
      if (ex.domain != client.domain) throw DataError("example domain differs from its client");
    }
  }
  for (std::size_t d = 0; d < eval_sets.size(); ++d) {
    if (!has_client[d]) throw DataError("domain " + std::to_string(d) + " has no clients");
    if (eval_sets[d].empty()) throw DataError("domain " + std::to_string(d) + " has no eval set");
    for (const auto& ex : eval_sets[d]) {
      check(ex);
      if (ex.domain != d) throw DataError("eval example in wrong domain section");
    }
  }
}

FederatedDataset generate(const GeneratorConfig& config) {
  config.validate();
  const Geometry geo = make_geometry(config);
  FederatedDataset ds;
  ds.config = config;
  ds.input_dim = config.input_dim;
  ds.num_classes = config.num_classes;

  ds.clients.resize(config.num_clients);
  for (std::size_t c = 0; c < config.num_clients; ++c) {
    auto& client = ds.clients[c];
    client.id = c;
    client.domain = c % config.num_domains;
    Rng rng = make_stream(config.seed, StreamTag::kData, {1, c});
    const auto mix = dirichlet(rng, config.class_skew, config.num_classes);
    const auto counts = allocate(mix, config.examples_per_client);
    std::vector<std::size_t> labels;
    for (std::size_t label = 0; label < counts.size(); ++label)
      labels.insert(labels.end(), counts[label], label);
    shuffle(rng, labels);
    client.examples.reserve(labels.size());
    for (auto label : labels)
      client.examples.push_back(draw_example(config, geo, label, client.domain, rng));
  }

  ds.eval_sets.resize(config.num_domains);
  for (std::size_t d = 0; d < config.num_domains; ++d) {
    Rng rng = make_stream(config.seed, StreamTag::kData, {2, d});
    auto& eval = ds.eval_sets[d];
    eval.reserve(config.eval_examples_per_domain);
    for (std::size_t i = 0; i < config.eval_examples_per_domain; ++i)
      eval.push_back(draw_example(config, geo, i % config.num_classes, d, rng));
  }
  return ds;
}

HoldoutSplit split_holdout(const FederatedDataset& dataset, std::size_t holdout_domain) {
  if (holdout_domain >= dataset.num_domains()) {
    throw ConfigError("holdout domain " + std::to_string(holdout_domain) +
                      " does not exist (dataset has " +
                      std::to_string(dataset.num_domains()) + " domains)");
  }
  HoldoutSplit split;
  for (const auto& client : dataset.clients) {
    (client.domain == holdout_domain ? split.adapt_clients : split.pretrain_clients)
        .push_back(client);
  }
  split.holdout_eval = dataset.eval_sets[holdout_domain];
  for (std::size_t d = 0; d < dataset.num_domains(); ++d) {
    if (d == holdout_domain) continue;
    const auto& eval = dataset.eval_sets[d];
    split.seen_eval.insert(split.seen_eval.end(), eval.begin(), eval.end());
  }
  return split;
}

std::vector<Example> all_eval(const FederatedDataset& dataset) {
  std::vector<Example> out;
  for (const auto& eval : dataset.eval_sets) out.insert(out.end(), eval.begin(), eval.end());
  return out;
}

Batch to_batch(std::span<const Example> examples) {
  Batch batch;
  if (examples.empty()) return batch;
  const std::size_t dim = examples.front().features.size();
  batch.features = Matrix(examples.size(), dim);
  batch.labels.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].features.size() != dim) throw DataError("ragged feature widths");
    std::copy(examples[i].features.begin(), examples[i].features.end(),
              batch.features.row(i).begin());
    batch.labels.push_back(examples[i].label);
  }
  return batch;
}

Batch gather(std::span<const Example> examples, std::span<const std::size_t> indices) {
  Batch batch;
  if (indices.empty()) return batch;
  const std::size_t dim = examples[indices.front()].features.size();
  batch.features = Matrix(indices.size(), dim);
  batch.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& ex = examples[indices[i]];
    if (ex.features.size() != dim) throw DataError("ragged feature widths");
    std::copy(ex.features.begin(), ex.features.end(), batch.features.row(i).begin());
    batch.labels.push_back(ex.label);
  }
  return batch;
}

std::vector<double> class_histogram(std::span<const Example> examples,
                                    std::size_t num_classes) {
  std::vector<double> hist(num_classes, 0.0);
  if (examples.empty()) return hist;
  for (const auto& ex : examples) hist.at(ex.label) += 1.0;
  for (auto& v : hist) v /= static_cast<double>(examples.size());
  return hist;
}

void write_dataset(std::ostream& out, const FederatedDataset& dataset) {
  out << kMagic << '\n'
      << "input_dim " << dataset.input_dim << '\n'
      << "num_classes " << dataset.num_classes << '\n'
      << "num_domains " << dataset.num_domains() << '\n';
  const auto& g = dataset.config;
  out << "generator num_clients " << g.num_clients << " examples_per_client "
      << g.examples_per_client << " eval_examples_per_domain " << g.eval_examples_per_domain
      << " modes_per_class " << g.modes_per_class << " class_skew " << format_double(g.class_skew)
      << " domain_shift " << format_double(g.domain_shift) << " noise_std "
      << format_double(g.noise_std) << " seed " << g.seed << '\n';
  out << "[clients]\n";
  for (const auto& client : dataset.clients)
    for (const auto& ex : client.examples)
      write_record(out, ex, static_cast<long long>(client.id));
  for (std::size_t d = 0; d < dataset.num_domains(); ++d) {
    out << "[eval " << d << "]\n";
    for (const auto& ex : dataset.eval_sets[d]) write_record(out, ex, -1);
  }
}

void write_dataset(const std::filesystem::path& path, const FederatedDataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_dataset(out, dataset);
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

FederatedDataset read_dataset(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  const auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || line != kMagic) throw DataError("not a feddrop dataset file");

  FederatedDataset ds;
  std::size_t num_domains = 0;
  const auto header = [&](const std::string& key) -> std::size_t {
    if (!next()) throw DataError("truncated header");
    std::istringstream fields(line);
    std::string name;
    long long value = -1;
    if (!(fields >> name >> value) || name != key || value < 0)
      throw DataError("line " + std::to_string(line_no) + ": expected '" + key + " <n>'");
    return static_cast<std::size_t>(value);
  };
  ds.input_dim = header("input_dim");
  ds.num_classes = header("num_classes");
  num_domains = header("num_domains");
  ds.eval_sets.resize(num_domains);

  std::map<long long, std::size_t> client_index;
  long long section = -2;  // -2 before any section, -1 clients, >=0 eval domain
  ds.config.num_clients = 0;
  while (next()) {
    if (line.empty()) continue;
    if (section == -2 && line.rfind("generator ", 0) == 0) {
      parse_generator_echo(line, line_no, ds.config);
      continue;
    }
    if (line == "[clients]") {
      section = -1;
      continue;
    }
    if (line.rfind("[eval ", 0) == 0 && line.back() == ']') {
      section = parse_int(std::string_view(line).substr(6, line.size() - 7), line_no);
      if (section < 0 || static_cast<std::size_t>(section) >= num_domains)
        throw DataError("line " + std::to_string(line_no) + ": eval section out of range");
      continue;
    }
    if (section == -2) throw DataError("record before any section");
    const auto fields = split_commas(line);
    if (fields.size() != 3 + ds.input_dim)
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(3 + ds.input_dim) + " fields");
    const long long domain = parse_int(fields[0], line_no);
    const long long client = parse_int(fields[1], line_no);
    const long long label = parse_int(fields[2], line_no);
    if (domain < 0 || label < 0) throw DataError("line " + std::to_string(line_no) + ": negative index");
    Example ex;
    ex.domain = static_cast<std::size_t>(domain);
    ex.label = static_cast<std::size_t>(label);
    ex.features.reserve(ds.input_dim);
    for (std::size_t i = 0; i < ds.input_dim; ++i)
      ex.features.push_back(parse_double(fields[3 + i], line_no));
    if (section == -1) {
      if (client < 0) throw DataError("line " + std::to_string(line_no) + ": client id must be >= 0");
      auto [it, inserted] = client_index.try_emplace(client, ds.clients.size());
      if (inserted) {
        ClientData cd;
        cd.id = static_cast<std::size_t>(client);
        cd.domain = ex.domain;
        ds.clients.push_back(std::move(cd));
      }
      ds.clients[it->second].examples.push_back(std::move(ex));
    } else {
      ds.eval_sets[static_cast<std::size_t>(section)].push_back(std::move(ex));
    }
  }
  ds.config.num_domains = num_domains;
  if (ds.config.num_clients == 0) ds.config.num_clients = ds.clients.size();
  ds.config.input_dim = ds.input_dim;
  ds.config.num_classes = ds.num_classes;
  ds.validate();
  return ds;
}

FederatedDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return read_dataset(in);
}

}  // namespace feddrop
