// guardgate: serve, loadtest, bench, plan, eval and codec subcommands.

#include <csignal>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "guardgate/bench.hpp"
#include "guardgate/eval.hpp"
#include "guardgate/lexicon.hpp"
#include "guardgate/loadtest.hpp"
#include "guardgate/planner.hpp"
#include "guardgate/service.hpp"
#include "guardgate/verdict.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

void write_output(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gg::IoError("cannot write " + path);
  out << text;
}

std::string read_input(const std::string& arg) {
  if (!arg.empty() && arg != "-") return arg;
  return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guardgate: appropriateness classification service and tooling"};
  app.require_subcommand(1);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string serve_config;
  std::optional<int> serve_port;
  serve->add_option("--config", serve_config, "Service config JSON (default: $GG_CONFIG)");
  serve->add_option("--port", serve_port, "Listen port (overrides config and $GG_PORT)");

  // loadtest
  auto* lt = app.add_subcommand("loadtest", "Open-loop load test over simulated replicas");
  gg::LoadTestConfig lt_cfg;
  std::string lt_sla = "sla1";
  std::string lt_lexicon = "config/lexicon.csv";
  std::string lt_out;
  lt->add_option("--qps", lt_cfg.target_qps, "Target arrival rate")->required();
  lt->add_option("--duration", lt_cfg.duration_s, "Seconds of simulated traffic")->required();
  lt->add_option("--sla", lt_sla, "sla1|sla2")->check(CLI::IsMember({"sla1", "sla2"}));
  lt->add_option("--profile", lt_cfg.profile, "Deployment profile");
  lt->add_option("--replicas", lt_cfg.replicas, "Modeled replicas");
  lt->add_option("--max-batch", lt_cfg.scheduler.max_batch, "Scheduler max batch");
  lt->add_option("--batch-window-ms", lt_cfg.scheduler.batch_window_ms, "Batch fill window");
  lt->add_option("--short-corruption", lt_cfg.short_corruption, "Short-mode output corruption rate");
  lt->add_option("--long-corruption", lt_cfg.long_corruption, "Long-mode output corruption rate");
  lt->add_option("--queue-capacity", lt_cfg.scheduler.queue_capacity, "Per-replica queue bound");
  lt->add_option("--seed", lt_cfg.seed, "RNG seed");
  lt->add_flag("!--constant-rate", lt_cfg.poisson, "Evenly spaced arrivals instead of Poisson");
  lt->add_option("--lexicon", lt_lexicon, "Lexicon CSV");
  lt->add_option("--out", lt_out, "Write the JSON report here (default stdout)");

  // bench
  auto* bench = app.add_subcommand("bench", "Static-batch benchmark sweep over the simulator");
  gg::BenchConfig bench_cfg;
  std::string bench_out;
  std::string bench_format = "json";
  std::string bench_profiles_dir;
  bench->add_option("--profile", bench_cfg.profile, "Deployment profile");
  bench->add_option("--profiles-dir", bench_profiles_dir, "Directory of extra profile JSON files");
  bench->add_option("--batch-sizes", bench_cfg.batch_sizes, "Comma-separated batch sizes")->delimiter(',');
  bench->add_option("--seq-lens", bench_cfg.seq_lens, "Comma-separated input lengths")->delimiter(',');
  bench->add_option("--decode-lens", bench_cfg.decode_lens, "Comma-separated decode lengths")->delimiter(',');
  bench->add_option("--runs", bench_cfg.runs, "Measured runs per cell");
  bench->add_option("--warmup", bench_cfg.warmup_runs, "Warmup runs per cell");
  bench->add_option("--seed", bench_cfg.seed, "RNG seed");
  bench->add_option("--jitter", bench_cfg.jitter_cv, "Override the profile's jitter CV");
  bench->add_option("--threads", bench_cfg.threads, "Worker threads");
  bench->add_option("--out", bench_out, "Output file (default stdout)");
  bench->add_option("--format", bench_format, "json|csv")->check(CLI::IsMember({"json", "csv"}));

  // plan
  auto* plan = app.add_subcommand("plan", "Pick a batch size and replica count from a bench report");
  std::string plan_bench;
  std::string plan_sla = "sla1";
  int plan_seq = 512;
  int plan_decode = 20;
  double plan_theta = gg::kDefaultRegimeThreshold;
  plan->add_option("--bench", plan_bench, "Bench report JSON")->required();
  plan->add_option("--sla", plan_sla, "sla1|sla2")->check(CLI::IsMember({"sla1", "sla2"}));
  plan->add_option("--seq", plan_seq, "Input length");
  plan->add_option("--decode", plan_decode, "Decode length");
  plan->add_option("--theta", plan_theta, "Throughput ratio per batch doubling separating the regimes");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a labelled dataset");
  std::string ev_dataset, ev_client = "lexicon", ev_attack = "none", ev_attack_config, ev_out;
  std::string ev_lexicon = "config/lexicon.csv";
  unsigned ev_threads = 1;
  ev->add_option("--dataset", ev_dataset, "CSV with id,text,label")->required();
  ev->add_option("--client", ev_client, "lexicon or service:URL");
  ev->add_option("--attack", ev_attack, "none|gender|race")->check(CLI::IsMember({"none", "gender", "race"}));
  ev->add_option("--attack-config", ev_attack_config, "JSON with pronoun_map / name_map");
  ev->add_option("--lexicon", ev_lexicon, "Lexicon CSV for the lexicon client");
  ev->add_option("--threads", ev_threads, "Concurrent samples");
  ev->add_option("--out", ev_out, "Write JSON results here (default stdout)");

  // codec
  auto* codec = app.add_subcommand("codec", "Convert between coded and uncoded verdicts");
  codec->require_subcommand(1);
  auto* enc = codec->add_subcommand("encode", "Uncoded JSON verdict -> coded string");
  auto* dec = codec->add_subcommand("decode", "Coded string -> uncoded JSON verdict");
  std::string codec_in;
  enc->add_option("input", codec_in, "Verdict JSON (default: stdin)");
  dec->add_option("input", codec_in, "Coded string (default: stdin)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      auto cfg = gg::ServiceConfig::from_environment(serve_config.empty() ? std::nullopt : std::optional(serve_config));
      if (serve_port) cfg.port = *serve_port;
      gg::GuardrailService service(cfg);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int port = service.bind();
      std::cerr << "listening on " << cfg.host << ":" << port << " (profile " << cfg.profile << ")" << std::endl;
      std::thread watcher([&service] {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        service.stop();
      });
      service.serve();
      g_stop = 1;
      watcher.join();
    } else if (*lt) {
      auto lexicon = std::make_shared<const gg::Lexicon>(gg::Lexicon::load(lt_lexicon));
      const auto report = gg::load_test(lt_cfg, gg::SlaSpec::by_name(lt_sla), lexicon);
      write_output(gg::loadtest_to_json(report).dump(2) + "\n", lt_out);
      std::cerr << (report.pass ? "PASS" : "FAIL");
      for (const auto& f : report.failures) std::cerr << "; " << f;
      std::cerr << "\n";
      return report.pass ? 0 : 1;
    } else if (*bench) {
      gg::ProfileRegistry registry;
      if (!bench_profiles_dir.empty()) registry.load_dir(bench_profiles_dir);
      const auto report = gg::run_bench(bench_cfg, registry);
      const auto fmt = bench_format == "csv" ? gg::ReportFormat::kCsv : gg::ReportFormat::kJson;
      if (bench_out.empty()) {
        std::cout << (fmt == gg::ReportFormat::kCsv ? gg::report_to_csv(report) : gg::report_to_json(report).dump(2) + "\n");
      } else {
        gg::write_report(report, bench_out, fmt);
      }
    } else if (*plan) {
      const auto report = gg::read_report(plan_bench);
      const auto d = gg::plan(report, gg::SlaSpec::by_name(plan_sla), plan_seq, plan_decode, plan_theta);
      std::cout << gg::plan_table(d) << gg::plan_to_json(d).dump(2) << "\n";
    } else if (*ev) {
      const auto dataset = gg::load_dataset(ev_dataset);
      gg::BiasAttackSpec attack;
      attack.kind = gg::attack_from_string(ev_attack);
      if (!ev_attack_config.empty()) {
        std::ifstream in(ev_attack_config);
        if (!in) throw gg::IoError("cannot open " + ev_attack_config);
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded()) throw gg::InvalidInput("attack config is not valid JSON");
        attack = gg::BiasAttackSpec::from_json(attack.kind, j);
      }
      std::unique_ptr<gg::ClassifierClient> client;
      if (ev_client == "lexicon") {
        client = std::make_unique<gg::LexiconClient>(std::make_shared<const gg::Lexicon>(gg::Lexicon::load(ev_lexicon)));
      } else if (ev_client.rfind("service:", 0) == 0) {
        client = std::make_unique<gg::ServiceHttpClient>(ev_client.substr(8));
      } else {
        throw gg::InvalidInput("--client must be lexicon or service:URL");
      }
      const auto result = gg::evaluate(dataset, *client, attack, {}, gg::EvalOptions{5, ev_threads});
      nlohmann::ordered_json samples = nlohmann::ordered_json::array();
      for (const auto& s : result.samples) {
        samples.push_back({{"id", s.id},
                           {"label", s.label},
                           {"predicted", s.predicted},
                           {"score", s.score},
                           {"attempts", s.attempts},
                           {"defaulted", s.defaulted}});
      }
      nlohmann::ordered_json out{{"attack", ev_attack}, {"metrics", gg::metrics_to_json(result.metrics)}, {"samples", samples}};
      write_output(out.dump(2) + "\n", ev_out);
    } else if (*enc) {
      std::cout << gg::encode_verdict(gg::parse_uncoded(read_input(codec_in))).text << "\n";
    } else if (*dec) {
      std::string coded = read_input(codec_in);
      while (!coded.empty() && (coded.back() == '\n' || coded.back() == '\r')) coded.pop_back();
      std::cout << gg::render_uncoded(gg::decode_verdict(coded)) << "\n";
    }
  } catch (const gg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
