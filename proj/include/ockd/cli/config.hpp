#pragma once

// Run configuration: one INI file with [run], [corpus], [teacher], [student]
// and [eval] sections. Unknown sections and keys are rejected.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ockd/corpus/corpus.hpp"
#include "ockd/distill/train.hpp"
#include "ockd/models/encoder.hpp"

namespace ockd::cli {

struct EvalConfig {
  std::vector<std::string> splits = {"eval_seen", "eval_unseen"};
  bool trim = false;
  double trim_threshold_db = -30.0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/default";
  std::uint64_t corpus_seed = 0;  // derived from `seed` unless set
  corpus::CorpusConfig corpus;
  distill::TeacherConfig teacher;
  models::EncoderConfig student_encoder;  // set from the teacher by parse_config
  distill::DistillConfig student;
  std::string student_train_list;  // optional bonafide-only protocol, relative to `out`
  EvalConfig eval;

  /// Re-derives per-stage seeds from `seed` for stages without an override.
  void apply_seed(std::uint64_t s) {
    seed = s;
    if (!corpus_seed_set) corpus_seed = corpus::keyed_seed(s, "corpus");
    if (!teacher_seed_set) teacher.train.seed = corpus::keyed_seed(s, "teacher");
    if (!student_seed_set) student.train.seed = corpus::keyed_seed(s, "student");
  }

  bool corpus_seed_set = false;
  bool teacher_seed_set = false;
  bool student_seed_set = false;
};

namespace detail {

using boost::property_tree::ptree;

inline const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"run", {"seed", "out"}},
      {"corpus",
       {"seed", "train_bonafide", "train_spoof", "dev_bonafide", "dev_spoof",
        "eval_seen_bonafide", "eval_seen_spoof", "eval_unseen_bonafide", "eval_unseen_spoof",
        "min_duration_s", "max_duration_s"}},
      {"teacher",
       {"seed", "num_layers", "d_model", "n_heads", "ff_dim", "frontend_frame", "frontend_stride",
        "learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "epochs", "batch_size",
        "augment", "crop_s", "spoof_weight", "bonafide_weight"}},
      {"student",
       {"seed", "num_layers", "d_model", "n_heads", "ff_dim", "frontend_frame", "frontend_stride",
        "lambda", "objective", "learning_rate", "beta1", "beta2", "epsilon", "weight_decay",
        "epochs", "batch_size", "augment", "crop_s", "train_list"}},
      {"eval", {"splits", "trim", "trim_threshold_db"}},
  };
  return keys;
}

class Section {
 public:
  Section(const ptree* tree, std::string name, std::string source)
      : tree_(tree), name_(std::move(name)), source_(std::move(source)) {}

  template <typename T>
  void read(const std::string& key, T& target) const {
    if (!tree_) return;
    const auto v = tree_->get_optional<std::string>(key);
    if (!v) return;
    target = convert<T>(key, *v);
  }

  template <typename T>
  bool read_optional(const std::string& key, T& target) const {
    if (!tree_ || !tree_->get_optional<std::string>(key)) return false;
    read(key, target);
    return true;
  }

 private:
  template <typename T>
  T convert(const std::string& key, const std::string& raw) const {
    std::istringstream in(raw);
    T value{};
    if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1" || raw == "yes") return true;
      if (raw == "false" || raw == "0" || raw == "no") return false;
      fail(key, raw, "boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return raw;
    } else {
      in >> value;
      if (!in || !(in >> std::ws).eof()) fail(key, raw, "number");
    }
    return value;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& raw, const char* want) const {
    throw usage_error(source_ + ": [" + name_ + "] " + key + " = '" + raw + "' is not a valid " +
                      want);
  }

  const ptree* tree_;
  std::string name_;
  std::string source_;
};

inline void read_train_options(const Section& s, distill::TrainOptions& t) {
  s.read("learning_rate", t.adam.learning_rate);
  s.read("beta1", t.adam.beta1);
  s.read("beta2", t.adam.beta2);
  s.read("epsilon", t.adam.epsilon);
  s.read("weight_decay", t.adam.weight_decay);
  s.read("epochs", t.epochs);
  s.read("batch_size", t.batch_size);
  s.read("augment", t.augment);
  s.read("crop_s", t.crop_s);
}

inline void read_encoder(const Section& s, models::EncoderConfig& c) {
  s.read("num_layers", c.num_layers);
  s.read("d_model", c.d_model);
  s.read("n_heads", c.n_heads);
  s.read("ff_dim", c.ff_dim);
  s.read("frontend_frame", c.frontend_frame);
  s.read("frontend_stride", c.frontend_stride);
}

inline std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(raw);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in, const std::string& source) {
  detail::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw usage_error(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  const auto& known = detail::known_keys();
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    if (it == known.end()) throw usage_error(source + ": unknown section [" + section + "]");
    if (body.empty() && !body.data().empty()) {
      throw usage_error(source + ": key '" + section + "' outside of any section");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) {
        throw usage_error(source + ": unknown key '" + key + "' in [" + section + "]");
      }
    }
  }
  auto section = [&](const std::string& name) {
    const auto child = tree.get_child_optional(name);
    return detail::Section(child ? &*child : nullptr, name, source);
  };

  RunConfig cfg;
  const auto run = section("run");
  run.read("seed", cfg.seed);
  std::string out;
  if (run.read_optional("out", out)) cfg.out = out;

  const auto cs = section("corpus");
  cfg.corpus_seed_set = cs.read_optional("seed", cfg.corpus_seed);
  cs.read("train_bonafide", cfg.corpus.train.bonafide);
  cs.read("train_spoof", cfg.corpus.train.spoof);
  cs.read("dev_bonafide", cfg.corpus.dev.bonafide);
  cs.read("dev_spoof", cfg.corpus.dev.spoof);
  cs.read("eval_seen_bonafide", cfg.corpus.eval_seen.bonafide);
  cs.read("eval_seen_spoof", cfg.corpus.eval_seen.spoof);
  cs.read("eval_unseen_bonafide", cfg.corpus.eval_unseen.bonafide);
  cs.read("eval_unseen_spoof", cfg.corpus.eval_unseen.spoof);
  cs.read("min_duration_s", cfg.corpus.voice.min_duration_s);
  cs.read("max_duration_s", cfg.corpus.voice.max_duration_s);
  if (!(cfg.corpus.voice.min_duration_s > 0.0 &&
        cfg.corpus.voice.min_duration_s <= cfg.corpus.voice.max_duration_s)) {
    throw usage_error(source + ": [corpus] needs 0 < min_duration_s <= max_duration_s");
  }

  const auto ts = section("teacher");
  cfg.teacher_seed_set = ts.read_optional("seed", cfg.teacher.train.seed);
  detail::read_encoder(ts, cfg.teacher.encoder);
  detail::read_train_options(ts, cfg.teacher.train);
  ts.read("spoof_weight", cfg.teacher.spoof_weight);
  ts.read("bonafide_weight", cfg.teacher.bonafide_weight);
  cfg.teacher.encoder.num_classes = 2;

  const auto ss = section("student");
  cfg.student_encoder = models::student_config(cfg.teacher.encoder, 4);
  cfg.student_seed_set = ss.read_optional("seed", cfg.student.train.seed);
  detail::read_encoder(ss, cfg.student_encoder);
  cfg.student_encoder.num_classes.reset();
  cfg.student.train.adam.learning_rate = 1e-3;
  detail::read_train_options(ss, cfg.student.train);
  ss.read("lambda", cfg.student.lambda);
  std::string objective = "total";
  ss.read("objective", objective);
  if (objective == "total") {
    cfg.student.objective = distill::Objective::kTotal;
  } else if (objective == "cos") {
    cfg.student.objective = distill::Objective::kCosOnly;
  } else if (objective == "mse") {
    cfg.student.objective = distill::Objective::kMseOnly;
  } else {
    throw usage_error(source + ": [student] objective must be total, cos or mse");
  }
  ss.read("train_list", cfg.student_train_list);
  if (cfg.student.lambda < 0.0) throw usage_error(source + ": [student] lambda must be >= 0");

  const auto es = section("eval");
  std::string splits;
  if (es.read_optional("splits", splits)) cfg.eval.splits = detail::split_list(splits);
  es.read("trim", cfg.eval.trim);
  es.read("trim_threshold_db", cfg.eval.trim_threshold_db);
  for (const auto& s : cfg.eval.splits) {
    bool ok = false;
    for (auto name : corpus::kSplitNames) ok = ok || s == name;
    if (!ok) throw usage_error(source + ": [eval] unknown split '" + s + "'");
  }
  if (cfg.eval.splits.empty()) throw usage_error(source + ": [eval] splits is empty");

  try {
    cfg.teacher.encoder.validate();
    cfg.student_encoder.validate();
  } catch (const Error& e) {
    throw usage_error(source + ": " + e.what());
  }
  if (!cfg.teacher.encoder.shares_embedding_space(cfg.student_encoder)) {
    throw usage_error(source +
                      ": teacher and student must share d_model, frontend_frame and "
                      "frontend_stride");
  }
  cfg.student.layer_map =
      models::layer_map(cfg.teacher.encoder.num_layers, cfg.student_encoder.num_layers);
  cfg.apply_seed(cfg.seed);
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("cannot open config file " + path.string());
  return parse_config(in, path.string());
}

}  // namespace ockd::cli
