#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stmt/config.hpp"
#include "stmt/eval.hpp"
#include "stmt/model.hpp"
#include "stmt/selftest.hpp"
#include "stmt/sequence.hpp"
#include "stmt/synth.hpp"
#include "stmt/tracker.hpp"
#include "stmt/training.hpp"

namespace fs = std::filesystem;

namespace {

int run_track(const std::string& config_path, const std::string& seq_path,
              const std::string& out_path, const std::string& checkpoint_path) {
  const stmt::Config cfg = stmt::load_config(config_path);
  const stmt::SequenceDir seq = stmt::load_sequence(seq_path);
  stmt::Rng rng(cfg.seed);
  stmt::ModelParams params = stmt::ModelParams::init(rng, cfg);
  if (!checkpoint_path.empty()) stmt::load_model(checkpoint_path, params);
  const std::vector<stmt::Box> boxes = stmt::run_tracker(seq, params, cfg);
  stmt::write_boxes(out_path, boxes);
  std::printf("tracked %zu frames of '%s' -> %s\n", boxes.size(), seq.name().c_str(),
              out_path.c_str());
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  const stmt::Config cfg = stmt::load_config(config_path);
  std::vector<stmt::SequenceDir> dataset;
  for (const std::string& name : stmt::list_sequences(data_dir)) {
    dataset.push_back(stmt::load_sequence((fs::path(data_dir) / name).string()));
  }
  if (dataset.empty()) {
    throw std::runtime_error("no sequences found under '" + data_dir + "'");
  }
  stmt::Rng rng(cfg.seed);
  stmt::ModelParams params = stmt::ModelParams::init(rng, cfg);
  const stmt::TrainLog log = stmt::train(params, dataset, cfg, out_dir);
  std::printf("trained %zu steps on %zu sequences; final loss %.6f; %zu checkpoints -> %s\n",
              log.losses.size(), dataset.size(), log.losses.back(), log.checkpoints.size(),
              out_dir.c_str());
  return 0;
}

int run_eval(const std::string& results_path, const std::string& gt_path,
             const std::string& out_path) {
  std::vector<stmt::SeqEval> rows;
  const bool gt_is_sequence = fs::exists(fs::path(gt_path) / "groundtruth.txt");
  if (fs::is_directory(results_path) && !gt_is_sequence) {
    for (const std::string& name : stmt::list_sequences(gt_path)) {
      const fs::path rfile = fs::path(results_path) / (name + ".txt");
      if (!fs::exists(rfile)) {
        throw std::runtime_error("missing results file for sequence '" + name + "': " +
                                 rfile.string());
      }
      const stmt::SequenceDir seq = stmt::load_sequence((fs::path(gt_path) / name).string());
      rows.push_back({name, stmt::evaluate_trace(stmt::read_boxes(rfile.string()),
                                                 seq.groundtruth())});
    }
    if (rows.empty()) {
      throw std::runtime_error("no sequences found under '" + gt_path + "'");
    }
  } else {
    std::vector<stmt::Box> gt;
    std::string name;
    if (gt_is_sequence) {
      const stmt::SequenceDir seq = stmt::load_sequence(gt_path);
      gt = seq.groundtruth();
      name = seq.name();
    } else {
      gt = stmt::read_boxes(gt_path);
      name = fs::path(results_path).stem().string();
    }
    rows.push_back({name, stmt::evaluate_trace(stmt::read_boxes(results_path), gt)});
  }
  const std::string report = stmt::format_report(rows);
  stmt::write_file_atomic(out_path, report);
  std::fputs(report.c_str(), stdout);
  return 0;
}

int run_synth(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir) {
  const stmt::SynthSpec spec = stmt::load_synth_spec(spec_path);
  stmt::write_synth_sequence(spec, seed, out_dir);
  std::printf("wrote %d frames -> %s\n", spec.length, out_dir.c_str());
  return 0;
}

int run_selftest() {
  const std::vector<stmt::CheckResult> results = stmt::run_selftest();
  std::size_t passed = 0;
  for (const stmt::CheckResult& r : results) {
    std::printf("[%s] %-28s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    passed += r.pass;
  }
  std::printf("%zu/%zu checks passed\n", passed, results.size());
  return passed == results.size() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB + thermal tracker with temporally-updated multimodal tokens"};
  app.require_subcommand(1);

  std::string config_path, seq_path, checkpoint_path, data_dir, results_path, gt_path,
      spec_path;
  std::string out_path = "report.csv";  // only `eval` treats --out as optional
  std::uint64_t seed = 0;

  CLI::App* track = app.add_subcommand("track", "run the tracker over one sequence");
  track->add_option("--config", config_path, "config file")->required();
  track->add_option("--seq", seq_path, "sequence directory")->required();
  track->add_option("--out", out_path, "output results file")->required();
  track->add_option("--checkpoint", checkpoint_path, "model checkpoint to load");

  CLI::App* train = app.add_subcommand("train", "train a model on a sequence dataset");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--data", data_dir, "dataset directory of sequences")->required();
  train->add_option("--out", out_path, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "score results files against annotations");
  eval->add_option("--results", results_path, "results file or directory")->required();
  eval->add_option("--gt", gt_path, "sequence/dataset directory or annotation file")
      ->required();
  eval->add_option("--out", out_path, "report path")->capture_default_str();

  CLI::App* synth = app.add_subcommand("synth", "render a synthetic paired sequence");
  synth->add_option("--spec", spec_path, "synthesis spec file")->required();
  synth->add_option("--seed", seed, "random seed")->required();
  synth->add_option("--out", out_path, "output sequence directory")->required();

  app.add_subcommand("selftest", "run the built-in verification suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(track)) {
      return run_track(config_path, seq_path, out_path, checkpoint_path);
    }
    if (app.got_subcommand(train)) return run_train(config_path, data_dir, out_path);
    if (app.got_subcommand(eval)) return run_eval(results_path, gt_path, out_path);
    if (app.got_subcommand(synth)) return run_synth(spec_path, seed, out_path);
    return run_selftest();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
