#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "mblab/cli/cli.hpp"
#include "mblab/cli/run_config.hpp"
#include "mblab/corpus/corpus_io.hpp"
#include "mblab/errors.hpp"
#include "mblab/util/bytes.hpp"

namespace fs = std::filesystem;

namespace mblab {

namespace {

using Clock = std::chrono::steady_clock;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool needs_out) {
  sub->add_option("--config", c.config_path, "Flat key = value config file");
  sub->add_option("--seed", c.seed, "Global seed (overrides run.seed)");
  auto* o = sub->add_option("--out", c.out, "Output directory");
  if (needs_out) o->required();
  sub->allow_extras();
  sub->footer("Any config key can be overridden as --section.key=value.");
}

// Config file, then dotted overrides, then --seed.
RunConfig resolve(const Common& common, const std::vector<std::string>& extras) {
  RunConfig c;
  if (!common.config_path.empty()) c.merge_file(common.config_path);
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos)
      throw ConfigError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      c.set(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("override '" + a + "' has no value");
      c.set(body, extras[++i]);
    }
  }
  if (common.seed) c.set("run.seed", std::to_string(*common.seed));
  return c;
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out + "': " + ec.message());
  return fs::path(out);
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void append_manifest(const fs::path& dir, const std::string& subcommand, const RunConfig& cfg,
                     const nlohmann::json& inputs, const std::vector<fs::path>& outputs, Clock::time_point t0) {
  std::string key = subcommand + "\n" + cfg.to_text() + inputs.dump();
  nlohmann::json rec{{"run_id", hex64(fnv1a64(key))},
                     {"subcommand", subcommand},
                     {"inputs", inputs},
                     {"outputs", nlohmann::json::array()},
                     {"wall_seconds", std::chrono::duration<double>(Clock::now() - t0).count()},
                     {"tool_version", kToolVersion}};
  for (const auto& p : outputs) rec["outputs"].push_back(p.string());
  std::ofstream f(dir / "manifest.jsonl", std::ios::app | std::ios::binary);
  if (!f) throw IoError("cannot append to " + (dir / "manifest.jsonl").string());
  f << rec.dump() << "\n";
}

fs::path write_sidecar(const fs::path& dir, const std::string& subcommand, const RunConfig& cfg) {
  const fs::path p = dir / (subcommand + ".resolved.cfg");
  write_file(p, cfg.to_text());
  return p;
}

InputMode parse_mode(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  return parse_input_mode(s);
}

// Token k (1..62) is rendered as the k-th character of [0-9a-zA-Z].
std::string render(const std::vector<int>& tokens) {
  static const std::string alphabet = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
  std::string s;
  for (int t : tokens) s += (t >= 1 && t <= 62) ? alphabet[static_cast<std::size_t>(t - 1)] : '?';
  return s;
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("MBLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

// ------------------------------------------------------------- subcommands

int cmd_gen_corpus(const Common& common, const std::vector<std::string>& extras, std::ostream& out) {
  const auto t0 = Clock::now();
  const RunConfig cfg = resolve(common, extras);
  const CorpusSpec spec = corpus_spec_from(cfg);
  const fs::path dir = prepare_out(common.out);
  const Corpus corpus = generate_corpus(spec);
  const fs::path file = dir / "corpus.bin";
  write_corpus(file, corpus);
  const fs::path side = write_sidecar(dir, "gen-corpus", cfg);
  const std::string id = corpus_id(corpus);
  append_manifest(dir, "gen-corpus", cfg, {{"seed", spec.seed}}, {file, side}, t0);
  out << "corpus " << id << ": " << corpus.utterances.size() << " utterances -> " << file.string() << "\n";
  return exit_ok;
}

struct TrainArgs {
  std::string recipe, corpus, init, teacher;
  bool attach_adapters = false;
};

int cmd_train(const Common& common, const TrainArgs& a, const std::vector<std::string>& extras, std::ostream& out) {
  const auto t0 = Clock::now();
  RunConfig cfg = resolve(common, extras);
  const RecipeKind kind = parse_recipe_kind(a.recipe);
  if (kind == RecipeKind::mda_kd && a.teacher.empty()) throw ConfigError("mda-kd recipe needs --teacher");
  const Corpus corpus = read_corpus(a.corpus);
  nlohmann::json inputs{{"corpus", corpus_id(corpus)}};

  std::optional<Model> teacher;
  if (!a.teacher.empty()) {
    teacher = load_checkpoint(a.teacher);
    inputs["teacher"] = checkpoint_id(*teacher);
  }
  Model model;
  std::optional<Model> init;
  if (!a.init.empty()) {
    init = load_checkpoint(a.init);
    inputs["init"] = checkpoint_id(*init);
    model = derive_model(*init, init->flow);
  } else if (kind == RecipeKind::mda_kd) {
    model = derive_model(*teacher, teacher->flow);
  } else {
    model = build_model(model_config_from(cfg, corpus.spec), cfg.get_u64("run.seed"));
  }
  if (kind == RecipeKind::adapter && !model.adapters) {
    if (!a.attach_adapters) throw ConfigError("adapter recipe needs an adapter-attached --init (or --attach-adapters)");
    insert_adapters(model, adapter_config_from(cfg));
  }
  const Model before = model;

  const TrainRecipe recipe = recipe_from(cfg, kind);
  store_recipe(cfg, recipe);
  const fs::path dir = prepare_out(common.out);
  const TrainLog log = train(model, corpus.utterances, recipe, teacher ? &*teacher : nullptr);

  nlohmann::json summary = train_log_json(log);
  if (kind == RecipeKind::adapter) {
    bool unchanged = true;
    for (const auto& [name, p] : model.params.items())
      if (!is_adapter_tensor(name)) unchanged = unchanged && bitwise_equal(p.value, before.params.get(name).value);
    summary["base_tensors_unchanged"] = unchanged;
    if (!unchanged) throw StateError("adapter training modified base tensors");
  }
  const fs::path ckpt = dir / "model.ckpt", csv = dir / "train_log.csv", js = dir / "train_log.json";
  save_checkpoint(ckpt, model);
  write_file(csv, train_log_csv(log));
  write_file(js, dump(summary));
  const fs::path side = write_sidecar(dir, "train", cfg);
  append_manifest(dir, "train", cfg, inputs, {ckpt, csv, js, side}, t0);
  out << "trained " << to_string(kind) << " " << checkpoint_id(model) << ": " << log.steps.size() << " steps, "
      << "validation CER " << (log.epochs.empty() ? log.initial_validation_cer : log.epochs.back().validation_cer)
      << " (initial " << log.initial_validation_cer << ")\n";
  return exit_ok;
}

struct EvalArgs {
  std::string model, corpus, suite = "degradation", mode = "complete";
};

int cmd_eval(const Common& common, const EvalArgs& a, int threads, const std::vector<std::string>& extras,
             std::ostream& out) {
  const auto t0 = Clock::now();
  const RunConfig cfg = resolve(common, extras);
  const DecodeConfig dc = decode_config_from(cfg);
  const InputMode mode = parse_mode(a.mode);
  if (a.suite != "degradation" && a.suite != "single") throw ConfigError("unknown suite '" + a.suite + "'");
  Model model = load_checkpoint(a.model);
  if (mode == InputMode::audio_only && !model.adapters)
    throw StateError("audio-only mode needs a checkpoint with adapters");
  const Corpus corpus = read_corpus(a.corpus);
  const std::uint64_t seed = cfg.get_u64("run.seed");
  nlohmann::json prov{{"model", checkpoint_id(model)},
                      {"corpus", corpus_id(corpus)},
                      {"seed", seed},
                      {"mode", to_string(mode)},
                      {"decode", to_string(dc.mode)},
                      {"tool_version", kToolVersion}};
  const fs::path dir = prepare_out(common.out);
  std::vector<fs::path> outputs;
  if (a.suite == "degradation") {
    const DegradationCurve c = degradation_curve(model, corpus.utterances, dc, mode, seed, threads);
    nlohmann::json j{{"provenance", prov}, {"curves", degradation_json(c)}};
    if (mode == InputMode::complete) j["bias_proxies"] = bias_proxy_json(bias_proxy_report(model, corpus.utterances, dc));
    outputs = {dir / "degradation.csv", dir / "degradation.json", dir / "degradation.svg"};
    write_file(outputs[0], degradation_csv(c));
    write_file(outputs[1], dump(j));
    write_file(outputs[2], degradation_svg(c));
    out << "rate";
    for (double r : c.rates) out << "\t" << r;
    out << "\naverage";
    for (double v : c.averaged) out << "\t" << v;
    out << "\n";
  } else {
    const auto hyps = decode(model, corpus.utterances, dc, mode);
    std::ostringstream csv;
    csv.precision(10);
    csv << "id,reference,hypothesis,cer,truncated\n";
    std::vector<std::vector<int>> refs, hs;
    std::size_t truncated = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const auto& u = corpus.utterances[i];
      csv << u.id << ',' << render(u.labels) << ',' << render(hyps[i].tokens) << ',' << cer(u.labels, hyps[i].tokens)
          << ',' << (hyps[i].truncated ? 1 : 0) << '\n';
      refs.push_back(u.labels);
      hs.push_back(hyps[i].tokens);
      truncated += hyps[i].truncated ? 1 : 0;
    }
    const double total = corpus_cer(refs, hs);
    outputs = {dir / "single.csv", dir / "single.json"};
    write_file(outputs[0], csv.str());
    write_file(outputs[1], dump({{"provenance", prov}, {"cer", total}, {"n", hyps.size()}, {"truncated", truncated}}));
    out << "CER " << total << " over " << hyps.size() << " utterances\n";
  }
  outputs.push_back(write_sidecar(dir, "eval", cfg));
  append_manifest(dir, "eval", cfg, {{"model", prov["model"]}, {"corpus", prov["corpus"]}}, outputs, t0);
  return exit_ok;
}

struct AnalyzeArgs {
  std::string model_a, model_b, corpus, tap = "fusion_out", mode_a = "complete", mode_b = "complete";
};

int cmd_analyze(const Common& common, const AnalyzeArgs& a, const std::vector<std::string>& extras,
                std::ostream& out) {
  const auto t0 = Clock::now();
  const RunConfig cfg = resolve(common, extras);
  Model ma = load_checkpoint(a.model_a);
  Model mb = load_checkpoint(a.model_b);
  const Corpus corpus = read_corpus(a.corpus);
  const auto n = std::min<std::size_t>(corpus.utterances.size(),
                                       static_cast<std::size_t>(cfg.get_u64("eval.similarity_utterances")));
  const std::vector<Utterance> utts(corpus.utterances.begin(), corpus.utterances.begin() + static_cast<std::ptrdiff_t>(n));
  const SimilarityMatrix m = similarity_matrix(ma, mb, utts, a.tap, parse_mode(a.mode_a), parse_mode(a.mode_b));
  nlohmann::json j = similarity_json(m);
  j["provenance"] = {{"model_a", checkpoint_id(ma)},
                     {"model_b", checkpoint_id(mb)},
                     {"corpus", corpus_id(corpus)},
                     {"seed", cfg.get_u64("run.seed")},
                     {"mode_a", to_string(parse_mode(a.mode_a))},
                     {"mode_b", to_string(parse_mode(a.mode_b))},
                     {"tool_version", kToolVersion}};
  const fs::path dir = prepare_out(common.out);
  std::vector<fs::path> outputs{dir / "similarity.json", dir / "similarity.svg"};
  write_file(outputs[0], dump(j));
  write_file(outputs[1], similarity_svg(m));
  outputs.push_back(write_sidecar(dir, "analyze", cfg));
  append_manifest(dir, "analyze", cfg, {{"model_a", j["provenance"]["model_a"]}, {"model_b", j["provenance"]["model_b"]}},
                  outputs, t0);
  out << "tap " << m.tap << ": diag_mean " << m.diag_mean << " over " << m.n << " utterances\n";
  return exit_ok;
}

int cmd_flops(const Common& common, const std::string& model_path, const std::string& path_flag,
              const std::vector<std::string>& extras, std::ostream& out) {
  const auto t0 = Clock::now();
  const RunConfig cfg = resolve(common, extras);
  Model model = load_checkpoint(model_path);
  const FlopInputs in = flop_inputs_from(cfg);
  const FlopsParams full = count_flops_params(model, ComputePath::full, in);
  const FlopsParams audio = count_flops_params(model, ComputePath::audio_only, in);
  std::vector<std::pair<std::string, FlopsParams>> rows;
  if (path_flag.empty() || path_flag == "full") rows.emplace_back("full", full);
  if (path_flag.empty() || path_flag == "audio-only" || path_flag == "audio_only") rows.emplace_back("audio_only", audio);
  if (rows.empty()) throw ConfigError("unknown path '" + path_flag + "'");
  const double ratio = static_cast<double>(audio.flops) / static_cast<double>(full.flops);
  out << "path\tflops\tparams\n";
  for (const auto& [name, fp] : rows) out << name << '\t' << fp.flops << '\t' << fp.params << '\n';
  out << "ratio(audio_only/full)\t" << ratio << '\n';
  if (!common.out.empty()) {
    const fs::path dir = prepare_out(common.out);
    nlohmann::json j{{"model", checkpoint_id(model)},
                     {"inputs", {{"audio_frames", in.audio_frames}, {"video_frames", in.video_frames}, {"target_len", in.target_len}}},
                     {"full", {{"flops", full.flops}, {"params", full.params}}},
                     {"audio_only", {{"flops", audio.flops}, {"params", audio.params}}},
                     {"ratio", ratio}};
    std::vector<fs::path> outputs{dir / "flops.json"};
    write_file(outputs[0], dump(j));
    outputs.push_back(write_sidecar(dir, "flops", cfg));
    append_manifest(dir, "flops", cfg, {{"model", j["model"]}}, outputs, t0);
  }
  return exit_ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Modality-bias lab: corpus generation, training, evaluation and analysis", "mblab"};
  app.require_subcommand(1);
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "Evaluation worker threads (default: MBLAB_THREADS or 1)");
  app.set_version_flag("--version", kToolVersion);

  Common c_gen, c_train, c_eval, c_an, c_fl;
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus file");
  add_common(gen, c_gen, true);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Run a training recipe");
  add_common(tr, c_train, true);
  tr->add_option("--recipe", ta.recipe, "teacher|plain-dropout|mda-kd|adapter|audio-only")->required();
  tr->add_option("--corpus", ta.corpus, "Corpus file")->required();
  tr->add_option("--init", ta.init, "Initial checkpoint");
  tr->add_option("--teacher", ta.teacher, "Frozen teacher checkpoint (mda-kd)");
  tr->add_flag("--attach-adapters", ta.attach_adapters, "Attach fresh adapters (adapter.*) before adapter training");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Decode and score a corpus");
  add_common(ev, c_eval, true);
  ev->add_option("--model", ea.model, "Checkpoint")->required();
  ev->add_option("--corpus", ea.corpus, "Test corpus file")->required();
  ev->add_option("--suite", ea.suite, "degradation|single");
  ev->add_option("--mode", ea.mode, "complete|audio-only");

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "Similarity matrix of a tap between two models");
  add_common(an, c_an, true);
  an->add_option("--model-a", aa.model_a, "Row model checkpoint")->required();
  an->add_option("--model-b", aa.model_b, "Column model checkpoint")->required();
  an->add_option("--corpus", aa.corpus, "Corpus file")->required();
  an->add_option("--tap", aa.tap, "Tap tag");
  an->add_option("--mode-a", aa.mode_a, "complete|audio-only");
  an->add_option("--mode-b", aa.mode_b, "complete|audio-only");

  std::string fl_model, fl_path;
  auto* fl = app.add_subcommand("flops", "FLOP and parameter counts per compute path");
  add_common(fl, c_fl, false);
  fl->add_option("--model", fl_model, "Checkpoint")->required();
  fl->add_option("--path", fl_path, "full|audio-only (both when omitted)");

  try {
    std::vector<std::string> argv(args.rbegin(), args.rend());
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }

  try {
    const int threads = resolve_threads(threads_flag);
    if (gen->parsed()) return cmd_gen_corpus(c_gen, gen->remaining(), out);
    if (tr->parsed()) return cmd_train(c_train, ta, tr->remaining(), out);
    if (ev->parsed()) return cmd_eval(c_eval, ea, threads, ev->remaining(), out);
    if (an->parsed()) return cmd_analyze(c_an, aa, an->remaining(), out);
    if (fl->parsed()) return cmd_flops(c_fl, fl_model, fl_path, fl->remaining(), out);
  } catch (const NumericError& e) {
    err << "numeric abort";
    if (e.step() >= 0) err << " at step " << e.step();
    err << ": " << e.what() << "\n";
    return exit_numeric;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return exit_io;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return exit_io;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }
  return exit_usage;
}

}  // namespace mblab
