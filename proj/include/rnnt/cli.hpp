#pragma once

// Command-line front end. Exit codes: 0 success, 1 verification or training
// failure, 2 usage or configuration error. Diagnostics go to `err`.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rnnt/config.hpp"
#include "rnnt/trainer.hpp"
#include "rnnt/verification.hpp"

namespace rnnt::cli {

inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr double kOracleTolerance = 1e-10;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline ParsedConfig read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file '" + path + "'");
  return parse_config(is);
}

struct ReportRow {
  std::string run;
  FusionKind kind;
  bool regularized;
  double wer;
  double loss;
  std::uint64_t params;
};

/// Completed runs under `dir`: the directory itself if it holds metrics.csv,
/// otherwise every immediate subdirectory that does.
inline std::vector<ReportRow> collect_runs(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> run_dirs;
  if (fs::exists(dir / "metrics.csv")) {
    run_dirs.push_back(dir);
  } else if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory() && fs::exists(e.path() / "metrics.csv")) run_dirs.push_back(e.path());
  }
  std::sort(run_dirs.begin(), run_dirs.end());

  std::vector<ReportRow> rows;
  for (const auto& d : run_dirs) {
    std::ifstream metrics(d / "metrics.csv");
    std::string line, last;
    std::getline(metrics, line);  // header
    while (std::getline(metrics, line))
      if (!line.empty()) last = line;
    if (last.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(last);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 6) throw UsageError("malformed metrics row in " + (d / "metrics.csv").string());

    const TrainConfig cfg = read_config_file((d / "config.ini").string()).config;
    rows.push_back({d.filename().string(), cfg.model.fusion.kind, cfg.regularize,
                    detail::parse_number<double>("dev_wer", cols[3]), detail::parse_number<double>("dev_loss", cols[2]),
                    param_count(cfg.model.fusion)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.wer < b.wer; });
  return rows;
}

inline void write_report(std::ostream& os, const std::vector<ReportRow>& rows) {
  os << "| run | fusion | reg | dev WER (%) | dev loss | joint params |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const auto& r : rows)
    os << "| " << r.run << " | " << to_string(r.kind) << " | " << (r.regularized ? "on" : "off") << " | "
       << format_number(r.wer) << " | " << format_number(r.loss) << " | " << r.params << " |\n";
}

inline std::string join_labels(const LabelSequence& labels) {
  std::string s;
  for (std::size_t i = 0; i < labels.size(); ++i) s += (i ? " " : "") + std::to_string(labels[i]);
  return s;
}

inline Checkpoint read_checkpoint_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(path);
}

inline TrainState load_model(const TrainConfig& cfg, const std::string& checkpoint) {
  TrainState s = initial_state(cfg);
  restore(s, read_checkpoint_file(checkpoint));
  return s;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transducer joint-network fusion toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run", checkpoint_path, resume_path, fusion_name, dir;
  std::uint64_t seed = 0;
  std::size_t d_enc = 0, d_pred = 0, d_joint = 0, d_rank = 0;
  std::uint64_t index = 0, count = 1;
  bool dump = false, bias = false;

  auto* train_cmd = app.add_subcommand("train", "Train a model on the synthetic task");
  train_cmd->add_option("--config", config_path, "Experiment config file")->required();
  auto* seed_opt = train_cmd->add_option("--seed", seed, "Override train.seed");
  train_cmd->add_option("--out", out_dir, "Output directory for metrics.csv, checkpoint.bin, config.ini");
  train_cmd->add_option("--resume", resume_path, "Continue from a checkpoint");
  train_cmd->add_flag("--dump-config", dump, "Print the effective configuration and exit");

  auto* eval_cmd = app.add_subcommand("eval", "Dev-set loss and WER of a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint_path)->required();
  eval_cmd->add_option("--config", config_path)->required();

  auto* decode_cmd = app.add_subcommand("decode", "Greedy-decode the dev set, one hypothesis per line");
  decode_cmd->add_option("--checkpoint", checkpoint_path)->required();
  decode_cmd->add_option("--config", config_path)->required();

  std::size_t grad_trials = 5;
  std::uint64_t grad_seed = 1;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the toy model");
  grad_cmd->add_option("--fusion", fusion_name)->required();
  grad_cmd->add_option("--trials", grad_trials, "Random restarts");
  grad_cmd->add_option("--seed", grad_seed);

  std::size_t oracle_trials = 100;
  std::uint64_t oracle_seed = 1;
  auto* oracle_cmd = app.add_subcommand("oracle", "Loss recursion versus path enumeration");
  oracle_cmd->add_option("--trials", oracle_trials);
  oracle_cmd->add_option("--seed", oracle_seed);

  auto* count_cmd = app.add_subcommand("paramcount", "Joint-network parameter count");
  count_cmd->add_option("--fusion", fusion_name)->required();
  count_cmd->add_option("--denc", d_enc)->required();
  count_cmd->add_option("--dpred", d_pred)->required();
  count_cmd->add_option("--djoint", d_joint)->required();
  count_cmd->add_option("--drank", d_rank);
  count_cmd->add_flag("--bias", bias);

  auto* report_cmd = app.add_subcommand("report", "Markdown comparison of completed runs");
  report_cmd->add_option("--dir", dir)->required();

  auto* export_cmd = app.add_subcommand("export", "Dump synthetic utterances as CSV");
  export_cmd->add_option("--config", config_path)->required();
  export_cmd->add_option("--index", index, "First utterance index");
  export_cmd->add_option("--count", count, "Number of utterances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      ParsedConfig parsed = read_config_file(config_path);
      if (*seed_opt) parsed.config.seed = seed;
      if (dump) {
        dump_config(out, parsed.config);
        return 0;
      }
      for (const auto& n : parsed.notices) err << n << '\n';
      std::optional<Checkpoint> resume;
      if (!resume_path.empty()) resume = read_checkpoint_file(resume_path);
      std::filesystem::create_directories(out_dir);
      {
        std::ofstream cfg(std::filesystem::path(out_dir) / "config.ini");
        dump_config(cfg, parsed.config);
      }
      const TrainResult r = train(parsed.config, resume, std::filesystem::path(out_dir));
      if (!r.history.empty()) {
        const MetricsRow& last = r.history.back();
        out << "step " << last.step << " dev_loss " << format_number(last.dev_loss) << " dev_wer "
            << format_number(last.dev_wer) << '\n';
      }
      return 0;
    }
    if (*eval_cmd || *decode_cmd) {
      const TrainConfig cfg = read_config_file(config_path).config;
      const TrainState s = load_model(cfg, checkpoint_path);
      const EvalResult ev = evaluate(s.model, cfg);
      if (*eval_cmd) {
        out << "dev_loss " << format_number(ev.loss) << '\n' << "dev_wer " << format_number(ev.wer) << '\n';
      } else {
        for (const auto& h : ev.hypotheses) out << join_labels(h.labels) << '\n';
      }
      return 0;
    }
    if (*grad_cmd) {
      const FusionKind kind = parse_fusion_kind(fusion_name);
      double worst = 0.0;
      for (std::size_t t = 0; t < grad_trials; ++t) {
        const GradCheckReport rep = gradcheck_toy(kind, grad_seed + t);
        out << "trial " << t << " max_rel_error " << format_number(rep.max_rel_error) << " (" << rep.worst_parameter
            << "[" << rep.worst_index << "], " << rep.checked << " scalars)\n";
        worst = std::max(worst, rep.max_rel_error);
      }
      out << "max_rel_error " << format_number(worst) << '\n';
      return worst <= kGradcheckTolerance ? 0 : 1;
    }
    if (*oracle_cmd) {
      const OracleReport rep = oracle_agreement(oracle_trials, oracle_seed);
      out << "trials " << rep.trials << '\n' << "max_abs_deviation " << format_number(rep.max_abs_deviation) << '\n';
      return rep.max_abs_deviation <= kOracleTolerance ? 0 : 1;
    }
    if (*count_cmd) {
      FusionSpec spec{parse_fusion_kind(fusion_name), d_enc, d_pred, d_joint, d_rank, bias};
      spec.bilinear_cap = UINT64_MAX;  // counting only
      spec.validate();
      out << param_count(spec) << '\n';
      return 0;
    }
    if (*report_cmd) {
      const auto rows = collect_runs(dir);
      if (rows.empty()) throw UsageError("no completed runs found under '" + dir + "'");
      write_report(out, rows);
      return 0;
    }
    if (*export_cmd) {
      const TrainConfig cfg = read_config_file(config_path).config;
      for (std::uint64_t i = index; i < index + count; ++i) write_csv(out, generate(cfg.seeded_task(), i));
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace rnnt::cli
