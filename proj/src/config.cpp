#include "vetcode/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "vetcode/error.hpp"
#include "vetcode/rng.hpp"

namespace vetcode {

std::filesystem::path RunConfig::corpus_path() const {
  return corpus.path.empty() ? out / "corpus.jsonl" : corpus.path;
}

std::filesystem::path RunConfig::plan_path() const {
  return split.plan.empty() ? out / "split.jsonl" : split.plan;
}

std::filesystem::path RunConfig::terminology_dir() const {
  return corpus.terminology.empty() ? out / "terminology" : corpus.terminology;
}

std::filesystem::path RunConfig::log_path() const {
  return service.log.empty() ? out / "events.jsonl" : service.log;
}

void RunConfig::validate() const {
  try {
    validate_fractions(split.fractions);
    train.validate();
    if (tokenizer.fields.empty()) throw Error(ErrorKind::config, "tokenizer.fields is empty");
    if (tokenizer.max_len < 2) throw Error(ErrorKind::config, "tokenizer.max_len must be >= 2");
    if (tokenizer.min_count == 0) throw Error(ErrorKind::config, "tokenizer.min_count must be >= 1");
    if (tokenizer.max_vocab <= kReservedCount) {
      throw Error(ErrorKind::config, "tokenizer.max_vocab must exceed the reserved ids");
    }
    if (replicates == 0) throw Error(ErrorKind::config, "train.replicates must be >= 1");
    if (service.port <= 0 || service.port > 65535) {
      throw Error(ErrorKind::config, "service.port out of range");
    }
    auto m = model;
    m.vocab_size = kReservedCount;
    m.classes = 1;
    m.max_len = tokenizer.max_len;
    m.validate();
    for (const double f : analysis.volume_fractions) {
      if (!(f > 0.0 && f <= 1.0)) {
        throw Error(ErrorKind::config, "analysis.volume_fractions must lie in (0, 1]");
      }
    }
    for (const auto& p : analysis.field_permutations) {
      if (p.empty()) throw Error(ErrorKind::config, "empty entry in analysis.field_permutations");
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config) throw;
    throw Error(ErrorKind::config, e.what());
  }
}

PipelineConfig RunConfig::pipeline() const {
  PipelineConfig p;
  p.input = tokenizer;
  p.model = model;
  p.train = train;
  return p;
}

namespace {

class Reader {
 public:
  Reader(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw Error(ErrorKind::config, (path_.empty() ? "document" : path_) + " must be a mapping");
    }
  }

  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0 || !node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.contains(key)) throw Error(ErrorKind::config, "unknown key '" + join(key) + "'");
    }
  }

  template <typename T>
  void get(const std::string& key, T& target) {
    seen_.insert(key);
    if (!node_ || node_.IsNull() || !node_[key]) return;
    try {
      target = node_[key].template as<T>();
    } catch (const YAML::Exception&) {
      throw Error(ErrorKind::config, "bad value for '" + join(key) + "'");
    }
  }

  void get(const std::string& key, std::filesystem::path& target) {
    std::string s = target.string();
    get(key, s);
    target = s;
  }

  void get_sections(const std::string& key, std::vector<Section>& target) {
    std::vector<std::string> names;
    for (const auto s : target) names.emplace_back(to_string(s));
    get(key, names);
    target = sections(key, names);
  }

  void get_permutations(const std::string& key, std::vector<std::vector<Section>>& target) {
    std::vector<std::vector<std::string>> names;
    for (const auto& p : target) {
      names.emplace_back();
      for (const auto s : p) names.back().emplace_back(to_string(s));
    }
    get(key, names);
    target.clear();
    for (const auto& p : names) target.push_back(sections(key, p));
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(node_ && !node_.IsNull() ? node_[key] : YAML::Node(), join(key));
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  std::vector<Section> sections(const std::string& key, const std::vector<std::string>& names) {
    try {
      return parse_sections(names);
    } catch (const Error& e) {
      throw Error(ErrorKind::config, join(key) + ": " + e.what());
    }
  }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::string> section_names(std::span<const Section> fields) {
  std::vector<std::string> out;
  for (const auto s : fields) out.emplace_back(to_string(s));
  return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorKind::config, std::string("invalid YAML: ") + e.what());
  }
  RunConfig c;
  {
    Reader r(root, "");
    r.get("seed", c.seed);
    r.get("out", c.out);
    {
      auto s = r.child("corpus");
      s.get("path", c.corpus.path);
      s.get("terminology", c.corpus.terminology);
      s.get("migrate", c.corpus.migrate);
    }
    {
      auto s = r.child("generator");
      s.get("records", c.generator.records);
      s.get("codes", c.generator.codes);
      s.get("zipf_exponent", c.generator.zipf_exponent);
      s.get("mean_codes_per_visit", c.generator.mean_codes_per_visit);
      s.get("noise_rate", c.generator.noise_rate);
      s.get("assessment_min_words", c.generator.assessment_min_words);
      s.get("assessment_max_words", c.generator.assessment_max_words);
      s.get("assessment_mention_rate", c.generator.assessment_mention_rate);
    }
    {
      auto s = r.child("split");
      std::vector<double> f{c.split.fractions.train, c.split.fractions.validation,
                            c.split.fractions.test};
      s.get("fractions", f);
      if (f.size() != 3) throw Error(ErrorKind::config, "split.fractions needs three values");
      c.split.fractions = {f[0], f[1], f[2]};
      s.get("plan", c.split.plan);
    }
    {
      auto s = r.child("tokenizer");
      s.get_sections("fields", c.tokenizer.fields);
      s.get("min_count", c.tokenizer.min_count);
      s.get("max_vocab", c.tokenizer.max_vocab);
      s.get("max_len", c.tokenizer.max_len);
    }
    {
      auto s = r.child("model");
      s.get("dim", c.model.dim);
      s.get("blocks", c.model.blocks);
      s.get("heads", c.model.heads);
      s.get("dropout", c.model.dropout);
      s.get("backbone_frozen", c.model.backbone_frozen);
    }
    {
      auto s = r.child("train");
      s.get("batch_size", c.train.batch_size);
      s.get("learning_rate", c.train.peak_learning_rate);
      s.get("warmup_steps", c.train.warmup_steps);
      s.get("max_epochs", c.train.max_epochs);
      s.get("patience", c.train.patience);
      s.get("beta1", c.train.beta1);
      s.get("beta2", c.train.beta2);
      s.get("epsilon", c.train.epsilon);
      s.get("weight_decay", c.train.weight_decay);
      s.get("threshold", c.train.threshold);
      s.get("replicates", c.replicates);
    }
    {
      auto s = r.child("analysis");
      s.get("volume_fractions", c.analysis.volume_fractions);
      s.get_permutations("field_permutations", c.analysis.field_permutations);
    }
    {
      auto s = r.child("service");
      s.get("host", c.service.host);
      s.get("port", c.service.port);
      s.get("top_k", c.service.top_k);
      s.get("log", c.service.log);
      s.get("queue", c.service.queue);
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_run_config(text.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::string dump_run_config(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "out" << YAML::Value << c.out.string();
  e << YAML::Key << "corpus" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "path" << YAML::Value << c.corpus_path().string();
  e << YAML::Key << "terminology" << YAML::Value << c.terminology_dir().string();
  e << YAML::Key << "migrate" << YAML::Value << c.corpus.migrate;
  e << YAML::EndMap;
  e << YAML::Key << "generator" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "records" << YAML::Value << c.generator.records;
  e << YAML::Key << "codes" << YAML::Value << c.generator.codes;
  e << YAML::Key << "zipf_exponent" << YAML::Value << c.generator.zipf_exponent;
  e << YAML::Key << "mean_codes_per_visit" << YAML::Value << c.generator.mean_codes_per_visit;
  e << YAML::Key << "noise_rate" << YAML::Value << c.generator.noise_rate;
  e << YAML::Key << "assessment_min_words" << YAML::Value << c.generator.assessment_min_words;
  e << YAML::Key << "assessment_max_words" << YAML::Value << c.generator.assessment_max_words;
  e << YAML::Key << "assessment_mention_rate" << YAML::Value
    << c.generator.assessment_mention_rate;
  e << YAML::EndMap;
  e << YAML::Key << "split" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "fractions" << YAML::Value << YAML::Flow
    << std::vector<double>{c.split.fractions.train, c.split.fractions.validation,
                           c.split.fractions.test};
  e << YAML::Key << "plan" << YAML::Value << c.plan_path().string();
  e << YAML::EndMap;
  e << YAML::Key << "tokenizer" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "fields" << YAML::Value << YAML::Flow << section_names(c.tokenizer.fields);
  e << YAML::Key << "min_count" << YAML::Value << c.tokenizer.min_count;
  e << YAML::Key << "max_vocab" << YAML::Value << c.tokenizer.max_vocab;
  e << YAML::Key << "max_len" << YAML::Value << c.tokenizer.max_len;
  e << YAML::EndMap;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "dim" << YAML::Value << c.model.dim;
  e << YAML::Key << "blocks" << YAML::Value << c.model.blocks;
  e << YAML::Key << "heads" << YAML::Value << c.model.heads;
  e << YAML::Key << "dropout" << YAML::Value << c.model.dropout;
  e << YAML::Key << "backbone_frozen" << YAML::Value << c.model.backbone_frozen;
  e << YAML::EndMap;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size;
  e << YAML::Key << "learning_rate" << YAML::Value << c.train.peak_learning_rate;
  e << YAML::Key << "warmup_steps" << YAML::Value << c.train.warmup_steps;
  e << YAML::Key << "max_epochs" << YAML::Value << c.train.max_epochs;
  e << YAML::Key << "patience" << YAML::Value << c.train.patience;
  e << YAML::Key << "beta1" << YAML::Value << c.train.beta1;
  e << YAML::Key << "beta2" << YAML::Value << c.train.beta2;
  e << YAML::Key << "epsilon" << YAML::Value << c.train.epsilon;
  e << YAML::Key << "weight_decay" << YAML::Value << c.train.weight_decay;
  e << YAML::Key << "threshold" << YAML::Value << c.train.threshold;
  e << YAML::Key << "replicates" << YAML::Value << c.replicates;
  e << YAML::EndMap;
  e << YAML::Key << "analysis" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "volume_fractions" << YAML::Value << YAML::Flow << c.analysis.volume_fractions;
  e << YAML::Key << "field_permutations" << YAML::Value << YAML::BeginSeq;
  for (const auto& p : c.analysis.field_permutations) e << YAML::Flow << section_names(p);
  e << YAML::EndSeq;
  e << YAML::EndMap;
  e << YAML::Key << "service" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "host" << YAML::Value << c.service.host;
  e << YAML::Key << "port" << YAML::Value << c.service.port;
  e << YAML::Key << "top_k" << YAML::Value << c.service.top_k;
  e << YAML::Key << "log" << YAML::Value << c.log_path().string();
  e << YAML::Key << "queue" << YAML::Value << c.service.queue.string();
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::string config_hash(const RunConfig& config) {
  return fmt::format("{:016x}", fnv1a64(dump_run_config(config)));
}

}  // namespace vetcode
