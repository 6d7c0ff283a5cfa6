#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <wind/io.hpp>

using namespace wind;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

// independent of the emitter: split on CRLF, requiring it at every row end
std::vector<std::string> csv_lines(const std::string& text) {
  for (size_t i = 0; i < text.size(); ++i)
    if (text[i] == '\n') REQUIRE((i > 0 && text[i - 1] == '\r'));
  REQUIRE(text.size() >= 2);
  REQUIRE(text.substr(text.size() - 2) == "\r\n");
  std::vector<std::string> lines;
  size_t start = 0;
  for (;;) {
    size_t pos = text.find("\r\n", start);
    if (pos == std::string::npos) break;
    lines.push_back(text.substr(start, pos - start));
    start = pos + 2;
  }
  REQUIRE(start == text.size());  // nothing after the final row ending
  return lines;
}

std::vector<std::string> fields(const std::string& line) { return detail::split(line, ','); }

double parse_full(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  REQUIRE(end == s.c_str() + s.size());
  return v;
}

std::filesystem::path tmp_dir() {
  std::filesystem::path d = std::filesystem::current_path() / "io_test_tmp";
  std::filesystem::create_directories(d);
  return d;
}

Trace demo_trace() {
  Trace t({"d_l1_ibon", "d_l1_wind"}, {{"seed", "2"}, {"beta", "0.01"}});
  t.append(0, {0.5, 0.25});
  t.append(1, {1.0 / 3.0, 0.1});
  t.append(2, {1e-12, 6.25e-2});
  return t;
}

}  // namespace

TEST_CASE("floating-point fields use shortest round-trip decimals") {
  REQUIRE(fmt_double(0.0) == "0");
  REQUIRE(fmt_double(3.0) == "3");
  REQUIRE(fmt_double(16.0) == "16");
  REQUIRE(fmt_double(0.01) == "0.01");
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 6.62607015e-34, -2.5, 1e20,
                   0.6224593312018546, 4.940656458412465e-324}) {
    REQUIRE(parse_full(fmt_double(v)) == v);
  }
}

TEST_CASE("trace CSV emission") {
  Trace t = demo_trace();

  SECTION("header, CRLF endings, and exact value round-trip") {
    std::string csv = trace_csv(t, "iter");
    std::vector<std::string> lines = csv_lines(csv);
    REQUIRE(lines.size() == 4);
    REQUIRE(lines[0] == "iter,d_l1_ibon,d_l1_wind");
    for (size_t r = 1; r < lines.size(); ++r) {
      std::vector<std::string> f = fields(lines[r]);
      REQUIRE(f.size() == 3);
      REQUIRE(f[0] == std::to_string(t.rows()[r - 1].iter));
      REQUIRE(parse_full(f[1]) == t.rows()[r - 1].values[0]);
      REQUIRE(parse_full(f[2]) == t.rows()[r - 1].values[1]);
    }
  }

  SECTION("metadata keys become trailing constant columns") {
    std::string csv = trace_csv(t, "iter", {"beta", "seed"});
    std::vector<std::string> lines = csv_lines(csv);
    REQUIRE(lines[0] == "iter,d_l1_ibon,d_l1_wind,beta,seed");
    for (size_t r = 1; r < lines.size(); ++r) {
      std::vector<std::string> f = fields(lines[r]);
      REQUIRE(f[3] == "0.01");
      REQUIRE(f[4] == "2");
    }
    REQUIRE_THROWS_WITH(trace_csv(t, "iter", {"missing"}),
                        ContainsSubstring("no metadata key 'missing'"));
  }

  SECTION("fields containing separators are quoted with doubled quotes") {
    REQUIRE(detail::csv_escape("plain") == "plain");
    REQUIRE(detail::csv_escape("a,b") == "\"a,b\"");
    REQUIRE(detail::csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    Trace q({"m"}, {{"note", "x,y"}});
    q.append(0, {1.0});
    std::vector<std::string> lines = csv_lines(trace_csv(q, "iter", {"note"}));
    REQUIRE(lines[1] == "0,1,\"x,y\"");
  }

  SECTION("stacking repeats rows but not headers") {
    Trace a({"d_l1_final"}, {{"seed", "1"}, {"beta", "0.01"}});
    a.append(5, {0.25});
    Trace b({"d_l1_final"}, {{"seed", "2"}, {"beta", "0.05"}});
    b.append(5, {0.125});
    std::string csv = stacked_trace_csv({a, b}, "iter", {"beta", "seed"});
    std::vector<std::string> lines = csv_lines(csv);
    REQUIRE(lines.size() == 3);
    REQUIRE(lines[0] == "iter,d_l1_final,beta,seed");
    REQUIRE(lines[1] == "5,0.25,0.01,1");
    REQUIRE(lines[2] == "5,0.125,0.05,2");

    Trace c({"other"});
    c.append(0, {1.0});
    REQUIRE_THROWS_AS(stacked_trace_csv({a, c}, "iter"), std::invalid_argument);
    REQUIRE_THROWS_AS(stacked_trace_csv({}, "iter"), std::invalid_argument);
  }
}

TEST_CASE("summary CSV emission") {
  SummaryTable s;
  s.columns = {"beta", "d_l1_final", "seed"};
  s.append({0.01, 1.0 / 7.0, 1.0});
  s.append({0.05, 2e-8, 3.0});
  std::string csv = summary_csv(s);
  std::vector<std::string> lines = csv_lines(csv);
  REQUIRE(lines.size() == 3);
  REQUIRE(lines[0] == "beta,d_l1_final,seed");
  REQUIRE(fields(lines[1])[0] == "0.01");
  REQUIRE(parse_full(fields(lines[1])[1]) == 1.0 / 7.0);
  REQUIRE(fields(lines[1])[2] == "1");
  REQUIRE(fields(lines[2])[2] == "3");

  SECTION("the other run summaries share the same emitter") {
    SummaryTable bound;
    bound.columns = {"beta", "measured", "bound", "pass", "seed"};
    bound.append({0.002, 1e-12, 2.3e-19, 1.0, 1.0});
    REQUIRE(csv_lines(summary_csv(bound))[0] == "beta,measured,bound,pass,seed");
    SummaryTable sampled;
    sampled.columns = {"M", "median_kl_to_star", "median_d_l1_to_star"};
    REQUIRE(csv_lines(summary_csv(sampled))[0] == "M,median_kl_to_star,median_d_l1_to_star");
  }
}

TEST_CASE("experiment CSVs carry the documented schemas") {
  ExperimentSpec spec = ExperimentSpec::no_mixing();
  spec.num_prompts = 2;
  spec.num_responses = 8;
  spec.seeds = {1, 2};
  spec.T = 12;
  ExperimentResult r = run_no_mixing(spec, 1);

  SECTION("per-iteration trace: iter,d_l1_ibon,d_l1_wind with T+1 rows") {
    std::vector<std::string> lines = csv_lines(trace_csv(r.traces.front(), "iter"));
    REQUIRE(lines[0] == "iter,d_l1_ibon,d_l1_wind");
    REQUIRE(lines.size() == 14);
    REQUIRE(fields(lines[1])[0] == "0");
    REQUIRE(fields(lines[13])[0] == "12");
  }

  SECTION("sweep rows: one (beta, d_l1_final, seed) triple per run") {
    ExperimentSpec sw = ExperimentSpec::beta_sweep();
    sw.num_prompts = 2;
    sw.num_responses = 6;
    sw.seeds = {1, 2};
    sw.grid = {0.01, 0.05, 0.1};
    sw.T = 40;
    ExperimentResult res = run_beta_sweep(sw, 1);
    std::vector<std::string> lines = csv_lines(summary_csv(res.summary));
    REQUIRE(lines[0] == "beta,d_l1_final,seed");
    REQUIRE(lines.size() == 7);  // 3 betas x 2 seeds + header
    std::vector<std::string> stacked =
        csv_lines(stacked_trace_csv(res.traces, "iter", {"beta", "seed"}));
    REQUIRE(stacked[0] == "iter,d_l1_final,beta,seed");
    REQUIRE(stacked.size() == 7);
  }

  SECTION("sampled traces stack as round,kl_to_star,d_l1_to_star,seed") {
    ExperimentSpec sc = ExperimentSpec::sampled_convergence();
    sc.num_prompts = 2;
    sc.num_responses = 3;
    sc.seeds = {1, 2};
    sc.T = 2;
    sc.m_ladder = {16};
    sc.inner_steps = 20;
    ExperimentResult res = run_sampled_convergence(sc, 1);
    std::vector<std::string> lines =
        csv_lines(stacked_trace_csv(res.traces, "round", {"seed"}));
    REQUIRE(lines[0] == "round,kl_to_star,d_l1_to_star,seed");
    REQUIRE(lines.size() == 7);  // 2 traces x 3 rows + header
  }
}

TEST_CASE("plot data uses whitespace columns and plain newlines") {
  SECTION("series headers, blank separators, and the log-axis hint") {
    std::string text = plot_data_text({{"ibon", {0.0, 1.0}, {0.5, 0.25}},
                                       {"wind", {0.0, 1.0}, {0.5, 0.125}}},
                                      /*log_y_hint=*/true);
    REQUIRE(text.find('\r') == std::string::npos);
    std::vector<std::string> lines = detail::split(text, '\n');
    REQUIRE(lines[0] == "# yscale: log");
    REQUIRE(lines[1] == "# series: ibon");
    REQUIRE(lines[2] == "0 0.5");
    REQUIRE(lines[3] == "1 0.25");
    REQUIRE(lines[4] == "");
    REQUIRE(lines[5] == "# series: wind");
    std::string no_hint = plot_data_text({{"s", {0.0}, {1.0}}}, false);
    REQUIRE(no_hint.find("yscale") == std::string::npos);
    REQUIRE_THROWS_AS(plot_data_text({{"s", {0.0}, {1.0, 2.0}}}, false),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(plot_data_text({}, false), std::invalid_argument);
  }

  SECTION("convergence figure series mirror the first trace bit for bit") {
    ExperimentSpec spec = ExperimentSpec::no_mixing();
    spec.num_prompts = 2;
    spec.num_responses = 8;
    spec.seeds = {1};
    spec.T = 8;
    ExperimentResult r = run_no_mixing(spec, 1);
    std::vector<PlotSeries> series = no_mixing_plot(r);
    REQUIRE(series.size() == 2);
    REQUIRE(series[0].name == "ibon");
    REQUIRE(series[1].name == "wind");
    REQUIRE(series[0].y == r.traces.front().column("d_l1_ibon"));
    REQUIRE(series[1].y == r.traces.front().column("d_l1_wind"));
    REQUIRE(series[0].x.size() == 9);
  }

  SECTION("sweep figure averages finals over seeds in grid order") {
    SummaryTable s;
    s.columns = {"beta", "d_l1_final", "seed"};
    s.append({0.01, 0.3, 1.0});
    s.append({0.05, 0.5, 1.0});
    s.append({0.01, 0.1, 2.0});
    s.append({0.05, 0.7, 2.0});
    ExperimentResult r;
    r.summary = s;
    std::vector<PlotSeries> series = sweep_plot(r);
    REQUIRE(series.size() == 1);
    REQUIRE(series[0].name == "d_l1_mean");
    REQUIRE(series[0].x == std::vector<double>{0.01, 0.05});
    REQUIRE_THAT(series[0].y[0], WithinAbs(0.2, 1e-15));
    REQUIRE_THAT(series[0].y[1], WithinAbs(0.6, 1e-15));
  }
}

TEST_CASE("checksums") {
  SECTION("published 64-bit FNV-1a vectors") {
    REQUIRE(checksum_hex("") == "cbf29ce484222325");
    REQUIRE(checksum_hex("a") == "af63dc4c8601ec8c");
    REQUIRE(checksum_hex("foobar") == "85944171f73967e8");
  }

  SECTION("file checksums hash the raw bytes") {
    std::filesystem::path p = tmp_dir() / "sum.txt";
    detail::write_text_file(p.string(), "foobar");
    REQUIRE(file_checksum(p.string()) == "85944171f73967e8");
    REQUIRE_THROWS_AS(file_checksum((tmp_dir() / "absent.txt").string()), std::runtime_error);
  }
}

TEST_CASE("run manifests") {
  RunManifest m;
  m.run_id = "20240101T000000.000000000Z-cbf29ce484222325";
  m.subcommand = "sweep-beta";
  m.config = {{"T", "50"}, {"grid", "0.01,0.1"}, {"seeds", "1,2,3"}};
  m.artifacts = {{"sweep_beta_summary.csv", "af63dc4c8601ec8c"},
                 {"sweep_beta_plot.dat", "85944171f73967e8"}};

  SECTION("text form is flat key = value lines") {
    std::string text = manifest_text(m);
    REQUIRE_THAT(text, ContainsSubstring("run_id = 20240101T000000.000000000Z-cbf29ce484222325\n"));
    REQUIRE_THAT(text, ContainsSubstring("subcommand = sweep-beta\n"));
    REQUIRE_THAT(text, ContainsSubstring("grid = 0.01,0.1\n"));
    REQUIRE_THAT(text,
                 ContainsSubstring("artifact.sweep_beta_summary.csv = af63dc4c8601ec8c\n"));
  }

  SECTION("write and read round trip every field") {
    std::filesystem::path p = tmp_dir() / "manifest.txt";
    write_manifest(m, p.string());
    RunManifest back = read_manifest(p.string());
    REQUIRE(back.run_id == m.run_id);
    REQUIRE(back.subcommand == m.subcommand);
    REQUIRE(back.config == m.config);
    REQUIRE(back.artifacts == m.artifacts);
  }

  SECTION("malformed lines are reported with their line number") {
    std::filesystem::path p = tmp_dir() / "broken.txt";
    detail::write_text_file(p.string(), "run_id = x\nnot a pair\n");
    REQUIRE_THROWS_WITH(read_manifest(p.string()), ContainsSubstring(":2:"));
  }

  SECTION("identifiers are timestamped and carry the config fingerprint") {
    std::map<std::string, std::string> cfg = {{"T", "50"}, {"seed", "1"}};
    std::string a = make_run_id(cfg);
    std::string b = make_run_id(cfg);
    REQUIRE(a.size() == 43);
    REQUIRE(a[8] == 'T');
    REQUIRE(a[15] == '.');
    REQUIRE(a[25] == 'Z');
    REQUIRE(a[26] == '-');
    REQUIRE(a.substr(27) == b.substr(27));  // same config, same fingerprint
    std::string c = make_run_id({{"T", "51"}, {"seed", "1"}});
    REQUIRE(a.substr(27) != c.substr(27));
  }
}

TEST_CASE("grid tokens") {
  SECTION("LO:HI:COUNT is an inclusive linear grid") {
    std::vector<double> g = parse_grid_token("0.01:0.1:10", "t");
    REQUIRE(g.size() == 10);
    REQUIRE(g.front() == 0.01);
    REQUIRE_THAT(g.back(), WithinAbs(0.1, 1e-15));
    REQUIRE_THAT(g[1] - g[0], WithinAbs(0.01, 1e-12));
    REQUIRE(parse_grid_token("2:5:1", "t") == std::vector<double>{2.0});
  }

  SECTION("comma lists and single values pass through") {
    REQUIRE(parse_grid_token("0.5", "t") == std::vector<double>{0.5});
    REQUIRE(parse_grid_token("0.1, 0.2 ,0.3", "t") ==
            std::vector<double>{0.1, 0.2, 0.3});
  }

  SECTION("malformed tokens are rejected with the source location") {
    REQUIRE_THROWS_WITH(parse_grid_token("1:2", "spot"), ContainsSubstring("spot"));
    REQUIRE_THROWS_AS(parse_grid_token("1:0:5", "t"), std::invalid_argument);
    REQUIRE_THROWS_AS(parse_grid_token("0.01:0.1:0", "t"), std::invalid_argument);
    REQUIRE_THROWS_AS(parse_grid_token("a,b", "t"), std::invalid_argument);
    REQUIRE_THROWS_AS(parse_grid_token("-0.5", "t"), std::invalid_argument);
  }
}

TEST_CASE("run options") {
  SECTION("an empty or comment-only config changes nothing") {
    std::filesystem::path p = tmp_dir() / "empty.cfg";
    detail::write_text_file(p.string(), "# just a comment\n\n   \n");
    RunOptions opt;
    opt.spec = ExperimentSpec::no_mixing();
    std::map<std::string, std::string> before = opt.resolved();
    apply_config_file(opt, p.string());
    REQUIRE(opt.resolved() == before);
  }

  SECTION("options land on the spec with their range checks") {
    RunOptions opt;
    opt.spec = ExperimentSpec::sampled_convergence();
    apply_option(opt, "beta", "0.25", "f");
    REQUIRE(opt.spec.grid == std::vector<double>{0.25});
    apply_option(opt, "M", "64", "f");
    REQUIRE(opt.spec.m_ladder == std::vector<int>{64});
    apply_option(opt, "m_ladder", "16,32,64", "f");
    REQUIRE(opt.spec.m_ladder == std::vector<int>{16, 32, 64});
    apply_option(opt, "loss", "nce", "f");
    REQUIRE(opt.spec.loss == LossKind::kNce);
    apply_option(opt, "seeds", "4,5", "f");
    REQUIRE(opt.spec.seeds == std::vector<uint64_t>{4, 5});
    apply_option(opt, "init", "dirichlet", "f");
    REQUIRE(opt.spec.init == InitKind::kDirichletOnes);
    apply_option(opt, "seed", "99", "f");
    REQUIRE(opt.seed == 99);
    apply_option(opt, "out", "/tmp/x", "f");
    REQUIRE(opt.out_dir == "/tmp/x");
    REQUIRE(opt.resolved().count("out") == 0);

    REQUIRE_THROWS_WITH(apply_option(opt, "beta", "-1", "f"),
                        ContainsSubstring("beta"));
    REQUIRE_THROWS_WITH(apply_option(opt, "frobnicate", "1", "f"),
                        ContainsSubstring("unknown key 'frobnicate'"));
    REQUIRE_THROWS_AS(apply_option(opt, "eta", "0", "f"), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_option(opt, "n", "1", "f"), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_option(opt, "loss", "huber", "f"), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_option(opt, "judge_delta", "0.5", "f"), std::invalid_argument);
    REQUIRE_THROWS_AS(apply_option(opt, "mode", "exact", "f"), std::invalid_argument);
  }

  SECTION("config files report the offending line") {
    std::filesystem::path p = tmp_dir() / "bad.cfg";
    detail::write_text_file(p.string(), "eta = 2\nbeta = -1\n");
    RunOptions opt;
    opt.spec = ExperimentSpec::no_mixing();
    REQUIRE_THROWS_WITH(apply_config_file(opt, p.string()), ContainsSubstring(":2:"));
    REQUIRE_THROWS_WITH(apply_config_file(opt, p.string()), ContainsSubstring("beta"));
    detail::write_text_file(p.string(), "just words\n");
    REQUIRE_THROWS_WITH(apply_config_file(opt, p.string()),
                        ContainsSubstring("expected key = value"));
  }

  SECTION("later sources override earlier ones") {
    std::filesystem::path p = tmp_dir() / "layered.cfg";
    detail::write_text_file(p.string(), "eta = 2\nT = 7  # trailing comment\n");
    RunOptions opt;
    opt.spec = ExperimentSpec::no_mixing();
    apply_config_file(opt, p.string());
    REQUIRE(opt.spec.eta == 2.0);
    REQUIRE(opt.spec.T == 7);
    apply_option(opt, "eta", "4", "--eta");  // flags are applied after the file
    REQUIRE(opt.resolved().at("eta") == "4");
    REQUIRE(opt.resolved().at("T") == "7");
  }

  SECTION("the resolved configuration replays into an identical run setup") {
    RunOptions a;
    a.spec = ExperimentSpec::sampled_convergence();
    a.spec.judge_delta = 0.1;
    a.spec.inner_lr = 0.25;
    a.seed = 7;
    a.tol_residual = 1e-9;
    a.mode_token_value = "mc";
    std::map<std::string, std::string> want = a.resolved();

    RunOptions b;
    b.spec = ExperimentSpec::no_mixing();  // deliberately different starting point
    for (const auto& [k, v] : want) apply_option(b, k, v, "replay");
    REQUIRE(b.resolved() == want);
    b.finalize();
    REQUIRE(b.spec.bon_mode.kind == BonMode::Kind::kMonteCarlo);
    REQUIRE(b.spec.bon_mode.samples == b.spec.m_ladder.front());
  }

  SECTION("the operator token resolves or is rejected at finalize time") {
    RunOptions opt;
    opt.spec = ExperimentSpec::no_mixing();
    opt.mode_token_value = "order";
    opt.finalize();
    REQUIRE(opt.spec.bon_mode.kind == BonMode::Kind::kOrderStatistics);
    opt.mode_token_value = "bogus";
    REQUIRE_THROWS_WITH(opt.finalize(), ContainsSubstring("paper|order|mc"));
  }
}
