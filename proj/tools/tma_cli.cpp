#include "tma/adaptation.hpp"
#include "tma/bench.hpp"
#include "tma/checkpoint.hpp"
#include "tma/eval.hpp"
#include "tma/http_server.hpp"
#include "tma/label_log.hpp"
#include "tma/service.hpp"
#include "tma/session_store.hpp"
#include "tma/synthetic.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace tma;

namespace {

void print_rows(const EvalReport& r) {
  std::cout << std::fixed << std::setprecision(2);
  for (const auto& row : r.rows)
    std::cout << "TMA" << row.batches_consumed << "  labeled " << std::setw(6) << row.labeled_percent
              << "%  rank1 " << std::setprecision(3) << row.rank(1) << "  rank5 " << row.rank(5)
              << "  rank10 " << row.rank(10) << "  mAP " << row.map << std::setprecision(2) << '\n';
  std::cout << std::defaultfloat;
}

void write_report(const fs::path& dir, const EvalReport& r) {
  write_json_atomic(dir / "report.json", r);
  std::ofstream csv(dir / "cmc.csv");
  write_cmc_csv(csv, r);
}

nlohmann::json read_config(const std::string& path) {
  return path.empty() ? nlohmann::json::object() : read_json_file(path);
}

// Accepts a bare trainer config or an adaptation config with a "trainer" key.
TrainerConfig trainer_config(const nlohmann::json& j) {
  return j.contains("trainer") ? j.at("trainer").get<TrainerConfig>() : j.get<TrainerConfig>();
}

std::vector<FeatureRecord> concat(SplitView v) {
  std::vector<FeatureRecord> out = std::move(v.probes);
  out.insert(out.end(), v.gallery.begin(), v.gallery.end());
  return out;
}

HttpServer* g_server = nullptr;
void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human-in-the-loop metric adaptation for person re-identification"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic two-camera dataset");
  std::string synth_out, synth_format = "csv", synth_name = "synthetic";
  int train_ids = 160, test_ids = 100;
  SyntheticConfig sc;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--train-ids", train_ids, "training identities")->capture_default_str();
  synth->add_option("--test-ids", test_ids, "test identities")->capture_default_str();
  synth->add_option("--dim", sc.dim, "feature dimension")->capture_default_str();
  synth->add_option("--seed", sc.seed, "population seed")->capture_default_str();
  synth->add_option("--noise", sc.view_noise, "per-image noise std")->capture_default_str();
  synth->add_option("--distortion", sc.distortion, "camera-specific distortion")->capture_default_str();
  synth->add_option("--norm", sc.target_norm, "feature l2 norm")->capture_default_str();
  synth->add_option("--format", synth_format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));
  synth->add_option("--name", synth_name, "dataset name");

  // train
  auto* train_cmd = app.add_subcommand("train", "off-line training on every labeled training pair");
  std::string manifest, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  train_cmd->add_option("--manifest", manifest, "dataset manifest")->required();
  train_cmd->add_option("--config", config_path, "trainer config JSON");
  train_cmd->add_option("--seed", seed, "trainer seed");
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_flag("--deterministic", deterministic, "full-gradient ADMM instead of stochastic");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "off-line phase plus on-line batches with a simulated oracle");
  std::string oracle_kind = "ground-truth";
  double error_rate = 0.0;
  std::uint64_t oracle_seed = 99;
  adapt->add_option("--manifest", manifest, "dataset manifest")->required();
  adapt->add_option("--config", config_path, "adaptation config JSON");
  adapt->add_option("--seed", seed, "trainer and partition seed");
  adapt->add_option("--out", out_dir, "session directory (must not exist)")->required();
  adapt->add_option("--oracle", oracle_kind, "ground-truth or simulated")
      ->check(CLI::IsMember({"ground-truth", "simulated"}));
  adapt->add_option("--error-rate", error_rate, "simulated oracle flip probability C");
  adapt->add_option("--oracle-seed", oracle_seed, "simulated oracle seed");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints or a session on the test split");
  std::vector<std::string> ckpts;
  std::string session_dir;
  eval_cmd->add_option("--manifest", manifest, "dataset manifest");
  eval_cmd->add_option("--checkpoint", ckpts, "checkpoint files, one report row each");
  eval_cmd->add_option("--session", session_dir, "session directory");
  eval_cmd->add_option("--out", out_dir, "write report.json and cmc.csv here");

  // serve
  auto* serve = app.add_subcommand("serve", "annotation service over HTTP");
  std::string root = "sessions", images, ui;
  int port = 8080;
  serve->add_option("--root", root, "session directory root")->capture_default_str();
  serve->add_option("--port", port, "port, 0 for any")->capture_default_str();
  serve->add_option("--images", images, "directory served under /images");
  serve->add_option("--ui", ui, "static UI bundle served under /");
  serve->add_option("--manifest", manifest, "create (or resume) a session for this dataset at start");
  serve->add_option("--config", config_path, "adaptation config JSON for --manifest");
  serve->add_option("--session-id", session_dir, "session id for --manifest");

  // bench
  auto* bench = app.add_subcommand("bench", "serial reference kernels against OpenMP kernels");
  BenchConfig bc;
  std::string bench_json;
  bench->add_option("--identities", bc.identities, "persons per camera")->capture_default_str();
  bench->add_option("--dim", bc.dim, "feature dimension")->capture_default_str();
  bench->add_option("--reps", bc.reps, "repetitions (median reported)")->capture_default_str();
  bench->add_option("--json", bench_json, "also write the result as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      Dataset ds = make_synthetic_dataset(sc, train_ids, test_ids);
      ds.manifest.name = synth_name;
      if (synth_format == "binary") {
        ds.manifest.format = FeatureFormat::Binary;
        ds.manifest.feature_file = "features.bin";
      }
      std::cout << save_dataset(synth_out, ds).string() << '\n';
    } else if (*train_cmd) {
      const Dataset ds = load_dataset(manifest);
      TrainerConfig cfg = trainer_config(read_config(config_path));
      if (seed) cfg.seed = *seed;
      const std::vector<FeatureRecord> recs = concat(train_split(ds));
      std::vector<LabeledPair> pairs;
      for (std::size_t p = 0; p < recs.size(); ++p)
        for (std::size_t g = 0; g < recs.size(); ++g)
          if (recs[p].camera_id == ds.manifest.probe_camera &&
              recs[g].camera_id == ds.manifest.gallery_camera)
            pairs.push_back({p, g, recs[p].person_id == recs[g].person_id ? 1 : -1});
      const PairView view{recs, pairs};
      const TrainingResult r = deterministic ? train_deterministic(view, cfg) : train(view, cfg);
      fs::create_directories(out_dir);
      save_checkpoint(fs::path(out_dir) / "model.tma", r.state, cfg);
      nlohmann::json trace = nlohmann::json::array();
      for (const auto& e : r.trace.epochs)
        trace.push_back({{"objective", e.objective}, {"residual_k", e.residual_k},
                         {"residual_p", e.residual_p}, {"active", e.active}, {"seconds", e.seconds}});
      write_json_atomic(fs::path(out_dir) / "trace.json",
                        {{"initial_objective", r.trace.initial_objective},
                         {"seconds", r.trace.seconds}, {"epochs", trace}});
      const SplitView te = test_split(ds);
      EvalReport rep{ds.manifest.name, {}};
      if (!te.probes.empty() && !te.gallery.empty()) {
        rep.rows.push_back(evaluate(r.state, te.probes, te.gallery));
        rep.rows.back().batches_consumed = 1;
        rep.rows.back().labeled = pairs.size();
      }
      write_report(out_dir, rep);
      std::cout << pairs.size() << " pairs, " << r.trace.epochs.size() << " epochs, "
                << r.trace.seconds << " s, objective " << r.trace.initial_objective << " -> "
                << (r.trace.epochs.empty() ? r.trace.initial_objective : r.trace.epochs.back().objective)
                << '\n';
      print_rows(rep);
    } else if (*adapt) {
      AdaptationConfig cfg = read_config(config_path).get<AdaptationConfig>();
      if (seed) cfg.trainer.seed = cfg.partition_seed = *seed;
      std::unique_ptr<LabelOracle> oracle;
      if (oracle_kind == "simulated") oracle = std::make_unique<SimulatedOracle>(error_rate, oracle_seed);
      else oracle = std::make_unique<GroundTruthOracle>();

      const SessionFiles files{out_dir};
      StoredSession st = create_stored_session(files, fs::path(out_dir).filename().string(), manifest, cfg);
      auto& s = st.session;
      for (int b = 1; b < cfg.num_batches; ++b) {
        st.selections.emplace(b, select_batch(s, b));
        save_selection(files, st, b);
        const std::size_t before = s.label_log.size();
        for (const auto& ps : st.selections.at(b).probes)
          for (auto g : ps.gallery) {
            if (s.stored_label(s.records[ps.probe].person_id, s.records[g].person_id)) continue;
            const auto ans = oracle->label(s.records[ps.probe], s.records[g]);
            if (ans) s.record_label(ps.probe, g, ans->label, ans->source, b);
          }
        append_labels(files, st, before);
        update_batch(s, st.selections.at(b));
        save_latest_checkpoint(files, st);
      }
      const EvalReport rep = stored_report(st);
      write_report(out_dir, rep);
      std::cout << "n = " << s.n() << " pairs, " << s.label_log.size() << " labeled\n";
      print_rows(rep);
    } else if (*eval_cmd) {
      EvalReport rep;
      if (!session_dir.empty()) {
        rep = stored_report(load_stored_session(SessionFiles{session_dir}));
      } else {
        if (manifest.empty() || ckpts.empty())
          throw InvalidArgument("eval needs --session, or --manifest with --checkpoint");
        const Dataset ds = load_dataset(manifest);
        const SplitView te = test_split(ds);
        rep.dataset = ds.manifest.name;
        int k = 0;
        for (const auto& c : ckpts) {
          ReportRow row = evaluate(load_checkpoint(c).state, te.probes, te.gallery);
          row.batches_consumed = ++k;
          rep.rows.push_back(std::move(row));
        }
      }
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_report(out_dir, rep);
      }
      print_rows(rep);
    } else if (*serve) {
      AnnotationService svc(root);
      if (!manifest.empty()) {
        nlohmann::json req = {{"manifest", fs::absolute(manifest).string()},
                              {"config", read_config(config_path)}};
        if (!session_dir.empty()) req["session_id"] = session_dir;
        std::cout << "session " << svc.create_session(req) << '\n';
      }
      HttpOptions opts;
      opts.host = bind_address_from_env();
      opts.port = port;
      if (!images.empty()) opts.image_root = images;
      if (!ui.empty()) opts.ui_root = ui;
      HttpServer server(svc, opts);
      const int bound = server.bind();
      std::cout << "listening on " << opts.host << ':' << bound << std::endl;
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.serve();
      g_server = nullptr;
    } else if (*bench) {
      const BenchResult r = run_bench(bc);
      print_bench(std::cout, r);
      if (!bench_json.empty()) write_json_atomic(bench_json, r);
    }
  } catch (const BadRequest& e) {
    std::cerr << "error: " << e.what() << '\n';
    for (const auto& f : e.fields) std::cerr << "  " << f.field << ": " << f.message << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
