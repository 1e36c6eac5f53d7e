#pragma once

// Experiment driver behind the `ockd` binary. Every command reads the same
// run config and works inside one output directory:
//
//   <out>/corpus/{wav,protocols}/     gen-data
//   <out>/models/teacher.ckpt         train-teacher
//   <out>/models/student.ckpt         distill
//   <out>/logs/*.log                  training logs
//   <out>/lists/student_train.txt     bonafide-only list used by distill
//   <out>/scores/<split>[_trim].{teacher,ockd}.txt
//   <out>/report/eer.{txt,csv}        eval
//   <out>/ablation/                   ablate

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ockd/cli/checkpoint.hpp"
#include "ockd/cli/config.hpp"
#include "ockd/corpus/corpus.hpp"
#include "ockd/corpus/trim.hpp"
#include "ockd/distill/train.hpp"
#include "ockd/eval/eer.hpp"
#include "ockd/eval/scoring.hpp"
#include "ockd/io.hpp"

namespace ockd::cli {

namespace fs = std::filesystem;

struct GlobalOptions {
  fs::path config_path;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  bool force = false;
  bool trim = false;
};

struct RunPaths {
  fs::path root;

  fs::path corpus() const { return root / "corpus"; }
  fs::path teacher() const { return root / "models" / "teacher.ckpt"; }
  fs::path student() const { return root / "models" / "student.ckpt"; }
  fs::path teacher_log() const { return root / "logs" / "teacher.log"; }
  fs::path student_log() const { return root / "logs" / "student.log"; }
  fs::path student_list() const { return root / "lists" / "student_train.txt"; }
  fs::path scores(const std::string& split, const char* system) const {
    return root / "scores" / (split + "." + system + ".txt");
  }
  fs::path report() const { return root / "report"; }
  fs::path ablation() const { return root / "ablation"; }
};

struct Session {
  RunConfig config;
  RunPaths paths;
};

inline Session open_session(const GlobalOptions& opts) {
  if (opts.config_path.empty()) throw usage_error("missing --config <path>");
  if (!fs::exists(opts.config_path)) {
    throw usage_error("config file not found: " + opts.config_path.string());
  }
  Session s{load_config(opts.config_path), {}};
  if (opts.seed) s.config.apply_seed(*opts.seed);
  if (opts.out) s.config.out = *opts.out;
  if (opts.trim) s.config.eval.trim = true;
  s.paths.root = s.config.out;
  return s;
}

namespace detail {

inline std::vector<corpus::ProtocolEntry> read_split(const RunPaths& paths,
                                                     const std::string& split) {
  const fs::path p = corpus::protocol_path(paths.corpus(), split);
  if (!fs::exists(p)) {
    throw data_error("protocol " + p.string() + " not found; run gen-data first");
  }
  return corpus::read_protocol(p.string());
}

inline std::string file_digest(const fs::path& p) {
  const std::string bytes = io::read_file(p);
  return hex(sha256(bytes.data(), bytes.size()));
}

inline std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

inline distill::EpochCallback progress(std::ostream& log, const char* what) {
  return [&log, what](const distill::EpochLog& e) {
    log << what << " epoch " << e.epoch << " loss " << std::setprecision(6) << e.loss << " ("
        << std::fixed << std::setprecision(1) << e.wallclock_ms / 1000.0 << " s)"
        << std::defaultfloat << '\n'
        << std::flush;
  };
}

// Fixed-width text table; first column left-aligned, the rest right-aligned.
inline std::string format_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream os;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) os << "  ";
      os << (c == 0 ? std::left : std::right) << std::setw(static_cast<int>(width[c])) << r[c];
    }
    os << '\n';
  }
  return os.str();
}

inline std::string format_csv(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) out += (c ? "," : "") + r[c];
    out += '\n';
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const GlobalOptions& opts, std::ostream& log) {
  const Session s = open_session(opts);
  const fs::path dir = s.paths.corpus();
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!opts.force) {
      throw usage_error("corpus directory " + dir.string() +
                        " exists and is not empty (use --force to overwrite)");
    }
    fs::remove_all(dir);
  }
  const auto plan = corpus::build_corpus(s.config.corpus, s.config.corpus_seed, dir);
  std::size_t total = 0;
  std::set<std::string> attacks;
  for (const auto& split : plan) {
    std::size_t bona = 0;
    for (const auto& e : split.entries) {
      bona += e.label == corpus::Label::kBonafide;
      if (e.attack_id != "-") attacks.insert(e.attack_id);
    }
    log << split.name << ": " << bona << " bonafide, " << split.entries.size() - bona
        << " spoof\n";
    total += split.entries.size();
  }
  log << "wrote " << total << " utterances, " << attacks.size() << " attack ids, "
      << plan.size() << " protocols to " << dir.string() << '\n';
  return 0;
}

inline int cmd_train_teacher(const GlobalOptions& opts, std::ostream& log) {
  const Session s = open_session(opts);
  const auto entries = detail::read_split(s.paths, "train");
  const auto data = corpus::load_utterances(s.paths.corpus(), entries);
  log << "training teacher (" << s.config.teacher.encoder.num_layers << " layers) on "
      << data.size() << " utterances\n";
  auto result = distill::train_teacher(data, s.config.teacher, detail::progress(log, "teacher"));
  save_checkpoint(s.paths.teacher(), ModelKind::kTeacher, result.model);
  io::write_file_atomic(s.paths.teacher_log(), distill::format_log(result.log));
  log << "teacher digest " << hex(load_checkpoint(s.paths.teacher()).digest) << '\n';
  return 0;
}

/// Bonafide-only training list for the student. A user-supplied list is
/// taken as-is and any spoof line aborts; otherwise the train protocol is
/// filtered and the result written to lists/student_train.txt.
inline std::vector<corpus::ProtocolEntry> student_training_list(const Session& s) {
  if (!s.config.student_train_list.empty()) {
    fs::path p = s.config.student_train_list;
    if (p.is_relative()) p = s.paths.root / p;
    auto entries = corpus::read_protocol(p.string());
    for (const auto& e : entries) {
      if (e.label != corpus::Label::kBonafide) {
        throw data_error("student training list " + p.string() +
                         " must contain only bonafide utterances; found spoof " + e.utt_id);
      }
    }
    return entries;
  }
  std::vector<corpus::ProtocolEntry> entries;
  for (const auto& e : detail::read_split(s.paths, "train")) {
    if (e.label == corpus::Label::kBonafide) entries.push_back(e);
  }
  io::write_file_atomic(s.paths.student_list(), corpus::format_protocol(entries));
  return entries;
}

inline distill::TrainResult distill_with(const Session& s, const models::Encoder& teacher,
                                         const distill::DistillConfig& cfg,
                                         const std::vector<corpus::Utterance>& data,
                                         std::ostream& log, const char* tag) {
  return distill::distill_student(data, teacher, s.config.student_encoder, cfg,
                                  detail::progress(log, tag));
}

inline int cmd_distill(const GlobalOptions& opts, std::ostream& log) {
  const Session s = open_session(opts);
  const auto entries = student_training_list(s);
  if (!fs::exists(s.paths.teacher())) {
    throw data_error("teacher checkpoint " + s.paths.teacher().string() +
                     " not found; run train-teacher first");
  }
  const std::string before = detail::file_digest(s.paths.teacher());
  const models::Encoder teacher = load_model(s.paths.teacher(), ModelKind::kTeacher);
  const std::string params_before = serialize_checkpoint(ModelKind::kTeacher, teacher);
  const auto data = corpus::load_utterances(s.paths.corpus(), entries);
  log << "distilling student (" << s.config.student_encoder.num_layers << " layers, objective "
      << distill::objective_name(s.config.student.objective) << ") on " << data.size()
      << " bonafide utterances\n";
  auto result = distill_with(s, teacher, s.config.student, data, log, "student");
  if (serialize_checkpoint(ModelKind::kTeacher, teacher) != params_before ||
      detail::file_digest(s.paths.teacher()) != before) {
    throw Error(ErrorKind::kNumeric, "teacher parameters changed during distillation");
  }
  save_checkpoint(s.paths.student(), ModelKind::kStudent, result.model);
  io::write_file_atomic(s.paths.student_log(), distill::format_log(result.log));
  log << "student digest " << hex(load_checkpoint(s.paths.student()).digest) << '\n'
      << "teacher file digest unchanged: " << before << '\n';
  return 0;
}

inline corpus::TrimOptions trim_options(const RunConfig& cfg) {
  corpus::TrimOptions t;
  t.threshold_db = cfg.eval.trim_threshold_db;
  return t;
}

/// Score-file names produced for a split, with the trimmed variant last.
inline std::vector<std::string> scored_sets(const RunConfig& cfg) {
  std::vector<std::string> out = cfg.eval.splits;
  if (cfg.eval.trim) {
    for (const auto& s : cfg.eval.splits) out.push_back(s + "_trim");
  }
  return out;
}

inline int cmd_score(const GlobalOptions& opts, std::ostream& log) {
  const Session s = open_session(opts);
  const models::Encoder teacher = load_model(s.paths.teacher(), ModelKind::kTeacher);
  const models::Encoder student = load_model(s.paths.student(), ModelKind::kStudent);
  const auto trim = trim_options(s.config);
  for (const auto& split : s.config.eval.splits) {
    const auto entries = detail::read_split(s.paths, split);
    std::vector<eval::ScoreRecord> t_plain, o_plain, t_trim, o_trim;
    for (const auto& e : entries) {
      const corpus::Utterance u = corpus::load_utterance(s.paths.corpus(), e);
      const auto plain = eval::score_both(teacher, student, u);
      t_plain.push_back({e.utt_id, e.label, plain.teacher});
      o_plain.push_back({e.utt_id, e.label, plain.ockd});
      if (s.config.eval.trim) {
        const auto trimmed = eval::score_both(teacher, student, corpus::trim_nonspeech(u, trim));
        t_trim.push_back({e.utt_id, e.label, trimmed.teacher});
        o_trim.push_back({e.utt_id, e.label, trimmed.ockd});
      }
    }
    io::write_file_atomic(s.paths.scores(split, "teacher"), eval::format_scores(t_plain));
    io::write_file_atomic(s.paths.scores(split, "ockd"), eval::format_scores(o_plain));
    if (s.config.eval.trim) {
      io::write_file_atomic(s.paths.scores(split + "_trim", "teacher"), eval::format_scores(t_trim));
      io::write_file_atomic(s.paths.scores(split + "_trim", "ockd"), eval::format_scores(o_trim));
    }
    log << "scored " << entries.size() << " utterances of " << split
        << (s.config.eval.trim ? " (plain + trimmed)" : "") << '\n';
  }
  return 0;
}

struct EerRow {
  std::string set;
  std::size_t bonafide = 0, spoof = 0;
  double teacher = 0.0, ockd = 0.0;
};

/// Per-set and pooled EERs of the teacher logit score and the OCKD score.
inline std::vector<EerRow> eer_table(const Session& s) {
  std::vector<EerRow> rows;
  std::vector<std::vector<eval::ScoreRecord>> all_t, all_o;
  for (const auto& set : scored_sets(s.config)) {
    const auto t = eval::read_scores(s.paths.scores(set, "teacher").string());
    const auto o = eval::read_scores(s.paths.scores(set, "ockd").string());
    const auto et = eval::compute_eer(t);
    rows.push_back({set, et.num_bonafide, et.num_spoof, et.eer, eval::compute_eer(o).eer});
    all_t.push_back(t);
    all_o.push_back(o);
  }
  const auto pt = eval::pooled_eer(all_t);
  rows.push_back({"pooled", pt.num_bonafide, pt.num_spoof, pt.eer, eval::pooled_eer(all_o).eer});
  return rows;
}

inline int cmd_eval(const GlobalOptions& opts, std::ostream& log) {
  const Session s = open_session(opts);
  const auto rows = eer_table(s);
  std::vector<std::vector<std::string>> text = {
      {"set", "bonafide", "spoof", "teacher_eer_%", "ockd_eer_%"}};
  std::vector<std::vector<std::string>> csv = {
      {"set", "bonafide", "spoof", "teacher_eer", "ockd_eer"}};
  for (const auto& r : rows) {
    text.push_back({r.set, std::to_string(r.bonafide), std::to_string(r.spoof),
                    detail::percent(r.teacher), detail::percent(r.ockd)});
    char t[32], o[32];
    std::snprintf(t, sizeof t, "%.6f", r.teacher);
    std::snprintf(o, sizeof o, "%.6f", r.ockd);
    csv.push_back({r.set, std::to_string(r.bonafide), std::to_string(r.spoof), t, o});
  }
  const std::string table = detail::format_table(text);
  io::write_file_atomic(s.paths.report() / "eer.txt", table);
  io::write_file_atomic(s.paths.report() / "eer.csv", detail::format_csv(csv));
  log << table;
  return 0;
}

struct AblationRow {
  std::string name;
  double eval_seen = 0.0, eval_unseen = 0.0, pooled = 0.0;
  std::string digest;
};

struct AblationResult {
  std::vector<AblationRow> rows;  // student_mse, student_cos, student_total
  std::string teacher_digest;
  bool mse_beats_total = false;
};

inline AblationResult run_ablation(const Session& s, std::ostream& log) {
  const std::string teacher_digest = detail::file_digest(s.paths.teacher());
  const models::Encoder teacher = load_model(s.paths.teacher(), ModelKind::kTeacher);
  const auto data = corpus::load_utterances(s.paths.corpus(), student_training_list(s));

  // Teacher stacks are shared by all three students.
  const std::vector<std::string> splits = {"eval_seen", "eval_unseen"};
  std::vector<std::vector<corpus::Utterance>> eval_sets;
  std::vector<std::vector<models::HiddenStack>> teacher_stacks;
  {
    ad::NoGradGuard no_grad;
    for (const auto& split : splits) {
      eval_sets.push_back(corpus::load_utterances(s.paths.corpus(), detail::read_split(s.paths, split)));
      teacher_stacks.emplace_back();
      for (const auto& u : eval_sets.back()) teacher_stacks.back().push_back(teacher.forward(u.samples));
    }
  }

  struct Variant {
    const char* name;
    distill::Objective objective;
    double lambda;
  };
  const std::vector<Variant> variants = {
      {"student_mse", distill::Objective::kMseOnly, s.config.student.lambda},
      {"student_cos", distill::Objective::kCosOnly, 0.0},
      {"student_total", distill::Objective::kTotal, s.config.student.lambda}};

  AblationResult result;
  result.teacher_digest = teacher_digest;
  for (const auto& v : variants) {
    distill::DistillConfig cfg = s.config.student;
    cfg.objective = v.objective;
    cfg.lambda = v.lambda;
    log << "ablation: training " << v.name << '\n';
    auto trained = distill_with(s, teacher, cfg, data, log, v.name);
    const fs::path ckpt = s.paths.ablation() / (std::string(v.name) + ".ckpt");
    save_checkpoint(ckpt, ModelKind::kStudent, trained.model);
    if (detail::file_digest(s.paths.teacher()) != teacher_digest) {
      throw Error(ErrorKind::kNumeric, "teacher checkpoint changed during ablation");
    }

    const auto map = models::layer_map(teacher.config().num_layers,
                                       trained.model.config().num_layers);
    std::vector<std::vector<eval::ScoreRecord>> per_split;
    ad::NoGradGuard no_grad;
    for (std::size_t k = 0; k < splits.size(); ++k) {
      std::vector<eval::ScoreRecord> records;
      for (std::size_t i = 0; i < eval_sets[k].size(); ++i) {
        const auto& u = eval_sets[k][i];
        records.push_back({u.utt_id, u.label,
                           eval::similarity(teacher_stacks[k][i], trained.model.forward(u.samples),
                                            map, u.utt_id)});
      }
      io::write_file_atomic(s.paths.ablation() / (splits[k] + "." + v.name + ".txt"),
                            eval::format_scores(records));
      per_split.push_back(std::move(records));
    }
    result.rows.push_back({v.name, eval::compute_eer(per_split[0]).eer,
                           eval::compute_eer(per_split[1]).eer,
                           eval::pooled_eer(per_split).eer, detail::file_digest(ckpt)});
  }
  result.mse_beats_total = result.rows[0].pooled < result.rows[2].pooled;
  return result;
}

inline int cmd_ablate(const GlobalOptions& opts, std::ostream& log) {
  const Session s = open_session(opts);
  if (!fs::exists(s.paths.teacher())) {
    throw data_error("teacher checkpoint " + s.paths.teacher().string() +
                     " not found; run train-teacher first");
  }
  const auto result = run_ablation(s, log);
  std::vector<std::vector<std::string>> text = {{"model", "eval_seen_%", "eval_unseen_%", "pooled_%"}};
  std::vector<std::vector<std::string>> csv = {{"model", "eval_seen", "eval_unseen", "pooled"}};
  for (const auto& r : result.rows) {
    text.push_back({r.name, detail::percent(r.eval_seen), detail::percent(r.eval_unseen),
                    detail::percent(r.pooled)});
    char a[32], b[32], c[32];
    std::snprintf(a, sizeof a, "%.6f", r.eval_seen);
    std::snprintf(b, sizeof b, "%.6f", r.eval_unseen);
    std::snprintf(c, sizeof c, "%.6f", r.pooled);
    csv.push_back({r.name, a, b, c});
  }
  std::string table = detail::format_table(text);
  std::string notes = "teacher digest " + result.teacher_digest + "\n";
  notes += "expected ordering: student_mse worst, student_total best or on par with student_cos\n";
  if (result.mse_beats_total) {
    notes += "FLAG: student_mse pooled EER is below student_total (differs from the expected "
             "ordering)\n";
  }
  io::write_file_atomic(s.paths.ablation() / "ablation.txt", table + notes);
  io::write_file_atomic(s.paths.ablation() / "ablation.csv", detail::format_csv(csv));
  log << table << notes;
  return 0;
}

/// DET staircase on linear axes (FAR on x, FRR on y, both in percent).
inline std::string det_svg(const std::vector<eval::DetPoint>& points, const eval::EERResult& eer,
                           const std::string& title) {
  constexpr double kSize = 400.0, kPad = 50.0;
  auto px = [&](double far) { return kPad + far * kSize; };
  auto py = [&](double frr) { return kPad + (1.0 - frr) * kSize; };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 2 * kPad << "\" height=\""
     << kSize + 2 * kPad << "\">\n"
     << "  <rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << kSize << "\" height=\""
     << kSize << "\" fill=\"none\" stroke=\"black\"/>\n"
     << "  <line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
     << py(1) << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n"
     << "  <polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i) os << ' ' << px(points[i].far) << ',' << py(points[i - 1].frr);
    os << ' ' << px(points[i].far) << ',' << py(points[i].frr);
  }
  os << "\"/>\n"
     << "  <circle cx=\"" << px(eer.eer) << "\" cy=\"" << py(eer.eer)
     << "\" r=\"4\" fill=\"#d62728\"/>\n"
     << "  <text x=\"" << kPad << "\" y=\"" << kPad - 15 << "\" font-size=\"14\">";
  for (char c : title) {
    switch (c) {
      case '<': os << "&lt;"; break;
      case '>': os << "&gt;"; break;
      case '&': os << "&amp;"; break;
      case '"': os << "&quot;"; break;
      default: os << c;
    }
  }
  os << " (EER " << 100.0 * eer.eer << "%)</text>\n"
     << "  <text x=\"" << kPad + kSize / 2 - 60 << "\" y=\"" << kPad + kSize + 35
     << "\" font-size=\"12\">false acceptance rate</text>\n"
     << "  <text x=\"15\" y=\"" << kPad + kSize / 2 + 60 << "\" font-size=\"12\" transform=\"rotate(-90 15 "
     << kPad + kSize / 2 + 60 << ")\">false rejection rate</text>\n"
     << "</svg>\n";
  return os.str();
}

/// Writes `<stem>.det.csv` and `<stem>.det.svg` next to the score file, or
/// into `out_dir` when given.
inline int cmd_plot_det(const fs::path& score_file, const std::optional<fs::path>& out_dir,
                        std::ostream& log) {
  const auto records = eval::read_scores(score_file.string());
  const auto points = eval::det_points(records);
  const auto eer = eval::compute_eer(records);
  const fs::path dir = out_dir ? *out_dir : score_file.parent_path();
  const std::string stem = score_file.stem().string();
  io::write_file_atomic(dir / (stem + ".det.csv"), eval::format_det_csv(points));
  io::write_file_atomic(dir / (stem + ".det.svg"), det_svg(points, eer, stem));
  log << "wrote " << points.size() << " DET points (EER " << detail::percent(eer.eer) << "%) to "
      << (dir / (stem + ".det.{csv,svg}")).string() << '\n';
  return 0;
}

}  // namespace ockd::cli
