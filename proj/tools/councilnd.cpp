// councilnd command-line tool.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "councilnd/baselines.hpp"
#include "councilnd/council.hpp"
#include "councilnd/dataset.hpp"
#include "councilnd/dropout_head.hpp"
#include "councilnd/errors.hpp"
#include "councilnd/experiment.hpp"
#include "councilnd/metrics.hpp"
#include "councilnd/novelty.hpp"
#include "councilnd/splits.hpp"
#include "councilnd/synthetic.hpp"
#include "councilnd/zsl.hpp"

namespace {

using namespace councilnd;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig base_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_experiment_config(g.config);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

std::string require_out(const Globals& g, const char* what) {
  if (g.out.empty()) throw ConfigError(std::string("--out is required (") + what + ")");
  return g.out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto part : detail::split_view(s, ',')) {
    auto t = detail::trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

// Either the whole feature file, or one role of one split.
struct DataSelection {
  std::string features;
  std::string splits;
  int repetition = 0;

  void add_options(CLI::App* app, const char* default_role_note) {
    app->add_option("--features", features, "feature CSV")->required();
    app->add_option("--splits", splits, std::string("split file; uses ") + default_role_note);
    app->add_option("--repetition", repetition, "split repetition index")->capture_default_str();
  }

  FeatureDataset load(SplitRole role) const {
    FeatureDataset data = load_features(features);
    if (splits.empty()) return data;
    for (const auto& s : load_splits(splits)) {
      if (s.repetition == repetition) return data.subset_by_ids(s.ids(role));
    }
    throw DataError(splits + ": no repetition " + std::to_string(repetition));
  }
};

void print_json(const ojson& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Council-vote novelty detection over MC-dropout uncertainties"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "experiment config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed_value, "random seed (overrides the config)");
  app.add_option("--out", g.out, "output file or directory");
  app.fallthrough();

  // synth -------------------------------------------------------------------
  SyntheticSpec syn;
  auto* synth = app.add_subcommand("synth", "generate a Gaussian-cluster dataset with novel classes");
  synth->add_option("--seen", syn.seen_classes, "seen classes")->capture_default_str();
  synth->add_option("--novel", syn.novel_classes, "novel classes")->capture_default_str();
  synth->add_option("--per-class", syn.samples_per_class, "samples per class")->capture_default_str();
  synth->add_option("--dim", syn.dim, "feature dimension")->capture_default_str();
  synth->add_option("--separation", syn.separation, "minimum distance between seen means")->capture_default_str();
  synth->add_option("--noise", syn.noise, "per-coordinate noise std")->capture_default_str();
  synth->add_option("--displacement", syn.displacement, "novel offset from its seen anchor")->capture_default_str();
  synth->add_option("--embedding-dim", syn.embedding_dim, "label embedding size (0: none)")->capture_default_str();

  // split -------------------------------------------------------------------
  std::string split_features;
  int split_reps = kDefaultRepetitions;
  std::string split_unseen;
  auto* split = app.add_subcommand("split", "materialize seen/unseen splits");
  split->add_option("--features", split_features, "feature CSV")->required();
  split->add_option("--repetitions", split_reps, "number of splits")->capture_default_str();
  split->add_option("--unseen", split_unseen, "comma-separated classes held out in every split");

  // train -------------------------------------------------------------------
  DataSelection train_data;
  std::optional<int> epochs;
  auto* train_cmd = app.add_subcommand("train", "train the MC-dropout head");
  train_data.add_options(train_cmd, "the subtrain part");
  train_cmd->add_option("--epochs", epochs, "training epochs (overrides the config)");

  // elect -------------------------------------------------------------------
  DataSelection elect_data;
  std::string elect_ckpt;
  std::optional<double> credibility;
  auto* elect = app.add_subcommand("elect", "elect councils on holdout data");
  elect_data.add_options(elect, "the holdout part");
  elect->add_option("--checkpoint", elect_ckpt, "trained head")->required();
  elect->add_option("--credibility", credibility, "credibility threshold c (overrides the config)");

  // calibrate ---------------------------------------------------------------
  std::string cal_features, cal_ckpt, cal_councils, cal_novel, cal_variant;
  bool cal_per_leader = false;
  auto* calibrate = app.add_subcommand("calibrate", "EER threshold from labelled known/novel samples");
  calibrate->add_option("--features", cal_features, "calibration samples")->required();
  calibrate->add_option("--checkpoint", cal_ckpt, "trained head")->required();
  calibrate->add_option("--councils", cal_councils, "council file")->required();
  calibrate->add_option("--novel-classes", cal_novel, "comma-separated labels treated as novel")->required();
  calibrate->add_option("--variant", cal_variant, "informed | uninformed | dictator");
  calibrate->add_flag("--per-leader", cal_per_leader, "also fit one threshold per leader");

  // score -------------------------------------------------------------------
  std::string sc_features, sc_ckpt, sc_councils, sc_detector, sc_decisions;
  auto* score = app.add_subcommand("score", "novelty scores (and decisions) for a feature file");
  score->add_option("--features", sc_features, "samples to score")->required();
  score->add_option("--checkpoint", sc_ckpt, "trained head")->required();
  score->add_option("--councils", sc_councils, "council file")->required();
  score->add_option("--detector", sc_detector, "detector settings (variant, passes, tau)");
  score->add_option("--decisions", sc_decisions, "write id,leader,score,decision CSV here");

  // eval-novelty / eval-gzsl ------------------------------------------------
  auto* eval_novelty = app.add_subcommand("eval-novelty", "full novelty-detection protocol from --config");
  auto* eval_gzsl = app.add_subcommand("eval-gzsl", "novelty protocol plus generalized zero-shot routing");

  // baseline ----------------------------------------------------------------
  DataSelection base_data;
  std::string base_method;
  std::string base_score;
  auto* baseline = app.add_subcommand("baseline", "fit a GMM or one-class SVM novelty baseline");
  base_data.add_options(baseline, "the subtrain part");
  baseline->add_option("--method", base_method, "gmm | ocsvm")->required()->check(CLI::IsMember({"gmm", "ocsvm"}));
  baseline->add_option("--score", base_score, "feature CSV to score with the fitted model (prints CSV)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (synth->parsed()) {
      const std::string dir = require_out(g, "output directory");
      syn.seed = g.seed.value_or(0);
      const SyntheticData data = generate_synthetic(syn);
      std::filesystem::create_directories(dir);
      save_features(dir + "/features.csv", data.combined());
      if (syn.embedding_dim > 0) save_embeddings(dir + "/embeddings.txt", data.embeddings);
      std::ofstream novel(dir + "/novel_classes.txt");
      for (const auto& c : data.novel_labels) novel << c << "\n";
      std::cout << "wrote " << data.seen.size() + data.novel.size() << " samples to " << dir << "\n";
    } else if (split->parsed()) {
      const ExperimentConfig cfg = base_config(g);
      SplitOptions opts;
      opts.repetitions = split_reps;
      if (!split_unseen.empty()) opts.fixed_unseen = split_list(split_unseen);
      const auto splits = make_splits(load_features(split_features), cfg.seed, opts);
      save_splits(require_out(g, "split file"), splits);
    } else if (train_cmd->parsed()) {
      ExperimentConfig cfg = base_config(g);
      if (epochs) cfg.train.epochs = *epochs;
      const FeatureDataset data = train_data.load(SplitRole::Subtrain);
      const TrainResult r = fit_head(data, cfg.train);
      save_checkpoint(require_out(g, "checkpoint path"), r.head);
      std::cout << "final epoch loss " << format_double(r.epoch_loss.back()) << "\n";
    } else if (elect->parsed()) {
      const ExperimentConfig cfg = base_config(g);
      const DropoutHead head = load_checkpoint(elect_ckpt);
      const FeatureDataset hold = elect_data.load(SplitRole::Holdout);
      const CouncilTable t = elect_councils(head, hold, credibility.value_or(cfg.credibility_threshold), cfg.mc_passes,
                                            RandomStream(cfg.seed).child("elect"));
      save_councils(require_out(g, "council file"), t);
    } else if (calibrate->parsed()) {
      ExperimentConfig cfg = base_config(g);
      if (!cal_variant.empty()) cfg.variant = parse_variant(cal_variant);
      NoveltyDetector det(load_checkpoint(cal_ckpt), load_councils(cal_councils), cfg.variant, cfg.mc_passes);
      const FeatureDataset data = load_features(cal_features);
      const auto novel_list = split_list(cal_novel);
      const std::set<std::string> novel(novel_list.begin(), novel_list.end());
      std::vector<double> scores;
      std::vector<bool> flags;
      std::vector<std::size_t> leaders;
      const RandomStream rng = RandomStream(cfg.seed).child("calibrate");
      for (std::size_t i = 0; i < data.size(); ++i) {
        const NoveltyScore s = novelty_score(det, data.x(i), rng.child(data.ids[i]));
        scores.push_back(s.score);
        leaders.push_back(s.leader);
        flags.push_back(novel.count(data.labels[i]) > 0);
      }
      det.set_tau(calibrate_tau(scores, flags));
      if (cal_per_leader) {
        for (const auto& [leader, tau] : calibrate_leader_tau(scores, flags, leaders)) det.set_leader_tau(leader, tau);
      }
      save_detector_settings(require_out(g, "detector settings path"), settings_of(det));
      const EqualErrorRate e = eer(scores, flags);
      std::cout << "tau " << format_double(e.threshold) << " eer " << format_double(e.rate) << " roc_auc "
                << format_double(roc_auc(scores, flags)) << "\n";
    } else if (score->parsed()) {
      const ExperimentConfig cfg = base_config(g);
      DetectorSettings settings{cfg.variant, cfg.mc_passes, std::nullopt, {}};
      if (!sc_detector.empty()) settings = load_detector_settings(sc_detector);
      NoveltyDetector det(load_checkpoint(sc_ckpt), load_councils(sc_councils), settings.variant, settings.passes);
      apply_settings(det, settings);
      if (!sc_decisions.empty() && !det.calibrated()) {
        throw ConfigError("--decisions needs a calibrated --detector file");
      }
      const FeatureDataset data = load_features(sc_features);
      const RandomStream rng = RandomStream(cfg.seed).child("score");
      ScoreDump dump{det.model().class_labels(), {}};
      std::optional<std::ofstream> decisions;
      if (!sc_decisions.empty()) {
        decisions.emplace(detail::open_for_write(sc_decisions));
        *decisions << "id,leader,score,decision\n";
      }
      for (std::size_t i = 0; i < data.size(); ++i) {
        const NoveltyScore s = novelty_score(det, data.x(i), rng.child(data.ids[i]));
        const std::string& leader = det.model().class_labels()[s.leader];
        dump.rows.push_back({data.ids[i], data.labels[i], leader, s.score, s.prediction.mean, s.prediction.uncertainty});
        if (decisions) {
          const NoveltyVerdict v = verdict(s.score, s.leader, det.threshold_for(s.leader));
          *decisions << data.ids[i] << ',' << leader << ',' << format_double(s.score) << ','
                     << (v.novel ? "novel" : "known") << "\n";
        }
      }
      if (g.out.empty()) {
        write_score_dump(std::cout, dump);
      } else {
        save_score_dump(g.out, dump);
      }
    } else if (eval_novelty->parsed() || eval_gzsl->parsed()) {
      if (g.config.empty()) throw ConfigError("--config is required");
      ExperimentConfig cfg = base_config(g);
      if (eval_novelty->parsed()) {
        cfg.embeddings.clear();
        cfg.zsl.methods.clear();
      } else if (cfg.embeddings.empty()) {
        throw ConfigError("eval-gzsl needs config.embeddings");
      }
      const ExperimentResult r = run_experiment(cfg);
      print_json(r.report["summary"]);
      if (r.report["summary"]["partial"].get<bool>()) {
        std::cerr << "warning: some splits failed; see the report\n";
      }
    } else if (baseline->parsed()) {
      const ExperimentConfig cfg = base_config(g);
      const FeatureDataset data = base_data.load(SplitRole::Subtrain);
      const Matrix x = detail::baseline_features(data, cfg.baselines);
      RandomStream rng = RandomStream(cfg.seed).child(base_method);
      std::optional<GmmModel> gmm;
      std::optional<OcSvmModel> svm;
      if (base_method == "gmm") {
        gmm = fit_gmm(x, cfg.baselines.gmm_options, rng).model;
      } else {
        OcSvmOptions o = cfg.baselines.ocsvm_options;
        if (!o.gamma) o.gamma = 1.0 / static_cast<double>(data.dim());
        svm = fit_ocsvm(x, o, rng);
      }
      if (!g.out.empty()) {
        auto f = detail::open_for_write(g.out);
        if (gmm) write_gmm(f, *gmm);
        if (svm) write_ocsvm(f, *svm);
      }
      if (!base_score.empty()) {
        const FeatureDataset target = load_features(base_score);
        std::cout << "id,label,score\n";
        for (std::size_t i = 0; i < target.size(); ++i) {
          const Vector v = detail::baseline_input(target.x(i), cfg.baselines);
          const double s = gmm ? gmm_novelty_score(*gmm, v) : ocsvm_novelty_score(*svm, v);
          std::cout << target.ids[i] << ',' << target.labels[i] << ',' << format_double(s) << "\n";
        }
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}
