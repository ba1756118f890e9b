// numscl command-line interface. Subcommands communicate only through files:
//
//   synth          generate a synthetic corpus directory
//   label-amounts  build BIO amount-tagging data from the corpus
//   train-ner      train the CRF amount tagger
//   tag            extract total amounts from a split with a trained tagger
//   pretrain-num   pretrain the number encoder
//   eval-num       numeracy of a number encoder on held-out pairs
//   train-ljp      train a judgment-prediction model
//   eval           evaluate a judgment-prediction model on a split
//   report         aggregate eval outputs into Markdown + JSON tables
//   config         print the effective config, or one value of it

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "numscl/experiment.hpp"

namespace fs = std::filesystem;
using namespace numscl;

namespace {

constexpr std::uint64_t kSeedHeldOutPairs = 5;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  bool full_scale = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override, e.g. ljp.epochs=5 (repeatable)");
  cmd->add_flag("--full-scale", c.full_scale, "use the large-scale hyperparameters");
}

void log(const std::string& s) { std::cerr << "[numscl] " << s << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw Error("write failed: " + path.string());
}

/// The effective config saved next to a corpus, falling back to --config when given.
AppConfig config_for(const Common& c, const fs::path& data_dir) {
  std::string path = c.config;
  if (path.empty() && !data_dir.empty() && fs::exists(data_dir / "config.json")) path = (data_dir / "config.json").string();
  return load_config(path, c.overrides, c.full_scale);
}

CorpusConfig corpus_config_of(const fs::path& data_dir) {
  const auto path = data_dir / "config.json";
  if (!fs::exists(path)) throw Error("not a corpus directory (missing " + path.string() + ")");
  return config_from_json(load_json(path.string())).corpus;
}

std::vector<CaseInstance> read_split(const fs::path& data_dir, const std::string& split) {
  if (split != "train" && split != "validation" && split != "test")
    throw Error("unknown split \"" + split + "\" (expected train, validation or test)");
  return read_jsonl((data_dir / (split + ".jsonl")).string());
}

std::vector<BioTaggedDoc> bio_split(const fs::path& data_dir, const std::string& split) {
  const auto path = data_dir / ("caener_" + split + ".jsonl");
  if (fs::exists(path)) return read_bio_jsonl(path.string());
  return build_caener(read_split(data_dir, split)).docs;
}

std::vector<std::int64_t> amounts_for(const std::vector<CaseInstance>& docs, AmountSource src, const CrfTagger* tagger) {
  if (src == AmountSource::Gold) return gold_amounts(docs);
  if (!tagger) throw Error("amount_source is \"ner\" but no tagger was given (--ner)");
  return predicted_amounts(docs, *tagger);
}

int cmd_synth(const Common& c, const fs::path& out) {
  const AppConfig app = load_config(c.config, c.overrides, c.full_scale);
  fs::create_directories(out);
  const Corpus corpus = generate(app.corpus);
  write_jsonl(corpus.train, (out / "train.jsonl").string());
  write_jsonl(corpus.validation, (out / "validation.jsonl").string());
  write_jsonl(corpus.test, (out / "test.jsonl").string());
  save_json(config_to_json(app), (out / "config.json").string());
  log("wrote " + std::to_string(corpus.train.size() + corpus.validation.size() + corpus.test.size()) +
      " documents to " + out.string());
  return 0;
}

int cmd_label(const fs::path& data, fs::path out) {
  if (out.empty()) out = data;
  fs::create_directories(out);
  nlohmann::json report;
  for (const std::string split : {"train", "validation"}) {
    const CaeNerDataset ds = build_caener(read_split(data, split));
    write_bio_jsonl(ds.docs, (out / ("caener_" + split + ".jsonl")).string());
    report[split] = ds.report.to_json();
  }
  save_json(report, (out / "caener_report.json").string());
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_train_ner(const Common& c, const fs::path& data, const std::string& out) {
  const AppConfig app = config_for(c, data);
  const CorpusConfig cc = corpus_config_of(data);
  const auto res = train_tagger(bio_split(data, "train"), bio_split(data, "validation"), cc.vocab_size, app.ner);
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    const auto& e = res.history[i];
    log("epoch " + std::to_string(i + 1) + " loss " + std::to_string(e.train_loss) + " validation token accuracy " +
        std::to_string(e.validation.token_accuracy));
  }
  save_json(res.tagger.to_json(), out);
  log("best epoch " + std::to_string(res.best_epoch) + ", saved " + out);
  return 0;
}

int cmd_tag(const std::string& model, const std::string& input, const std::string& out) {
  const CrfTagger tagger = CrfTagger::from_json(load_json(model));
  const auto docs = read_jsonl(input);
  const auto amounts = predicted_amounts(docs, tagger);
  const AmountRecovery rec = amount_recovery(docs, amounts);
  const nlohmann::json j = {{"amounts", amounts}, {"recovery", rec.to_json()}};
  if (out.empty())
    std::cout << j.dump() << '\n';
  else
    save_json(j, out);
  log("exact recovery " + std::to_string(rec.exact) + "/" + std::to_string(rec.solvable) + " solvable documents");
  return 0;
}

int cmd_pretrain_num(const Common& c, const std::string& out) {
  const AppConfig app = load_config(c.config, c.overrides, c.full_scale);
  const auto& nc = app.num_encoder;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = pretrain(sample_pairs(nc.pairs, nc.min_number, nc.max_number, nc.seed), nc);
  for (std::size_t i = 0; i < res.history.size(); ++i)
    log("epoch " + std::to_string(i + 1) + " mean loss " + std::to_string(res.history[i]));
  save_json(res.encoder.to_json(), out);
  log("pretrained in " + std::to_string(seconds_since(t0)) + " s, saved " + out);
  return 0;
}

int cmd_eval_num(const Common& c, const std::string& model, std::size_t pairs) {
  const AppConfig app = load_config(c.config, c.overrides, c.full_scale);
  const NumEncoder enc = NumEncoder::from_json(load_json(model));
  const auto& nc = enc.config();
  const auto held_out = sample_pairs(pairs, nc.min_number, nc.max_number, derive_seed(app.seed, kSeedHeldOutPairs));
  std::cout << evaluate_numeracy(enc, held_out).to_json().dump(2) << '\n';
  return 0;
}

int cmd_train_ljp(const Common& c, const fs::path& data, const std::string& ner_path, const std::string& num_path,
                  const std::string& out) {
  const AppConfig app = config_for(c, data);
  const CorpusConfig cc = corpus_config_of(data);
  const LjpConfig& cfg = app.ljp;
  std::optional<CrfTagger> tagger;
  if (!ner_path.empty()) tagger.emplace(CrfTagger::from_json(load_json(ner_path)));
  std::optional<NumEncoder> enc;
  if (cfg.use_evidence) {
    if (num_path.empty()) throw Error("ljp.use_evidence is set but no number encoder was given (--num)");
    enc.emplace(NumEncoder::from_json(load_json(num_path)));
  }
  if (tagger && tagger->vocab() != cc.vocab_size)
    throw Error("vocab mismatch: tagger has " + std::to_string(tagger->vocab()) + " tokens, data has " +
                std::to_string(cc.vocab_size));
  const auto train_docs = read_split(data, "train"), val_docs = read_split(data, "validation");
  const CrfTagger* tp = tagger ? &*tagger : nullptr;
  const NumEncoder* ep = enc ? &*enc : nullptr;
  EvidenceStats stats;
  const auto train = make_examples(train_docs, amounts_for(train_docs, cfg.amount_source, tp), ep, &stats);
  const auto val = make_examples(val_docs, amounts_for(val_docs, cfg.amount_source, tp), ep, &stats);
  if (stats.clamped) log(std::to_string(stats.clamped) + " amounts clamped to the encoder range");
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train_ljp(train, val, dims_for(cc, ep ? ep->dim() : 0), cfg);
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    const auto& e = res.history[i];
    log("epoch " + std::to_string(i + 1) + " loss " + std::to_string(e.loss) + " ce " + std::to_string(e.ce) +
        " validation charge F1 " + std::to_string(e.validation_charge_f1));
  }
  if (res.diverged) log("training diverged (" + res.divergence_message + "); keeping the best checkpoint so far");
  nlohmann::json bundle = checkpoint_header("ljp_bundle");
  bundle["model"] = res.model.to_json();
  bundle["config"] = config_to_json(app);
  bundle["best_epoch"] = res.best_epoch;
  if (tagger) bundle["ner"] = tagger->to_json();
  if (enc) bundle["num_encoder"] = enc->to_json();
  save_json(bundle, out);
  log("trained " + std::string(strategy_name(cfg.strategy)) + " in " + std::to_string(seconds_since(t0)) +
      " s, best epoch " + std::to_string(res.best_epoch) + ", saved " + out);
  return res.diverged ? 3 : 0;
}

int cmd_eval(const Common& c, const std::string& model_path, const fs::path& data, const std::string& split,
             const std::string& baseline, const std::string& out) {
  const nlohmann::json bundle = load_json(model_path);
  check_header(bundle, "ljp_bundle");
  const LjpModel model = LjpModel::from_json(bundle.at("model"));
  const CorpusConfig cc = corpus_config_of(data);
  if (model.dims().vocab != cc.vocab_size)
    throw Error("vocab mismatch: model has " + std::to_string(model.dims().vocab) + " tokens, data has " +
                std::to_string(cc.vocab_size));
  if (model.dims().charges != cc.num_charges || model.dims().laws != cc.num_laws || model.dims().terms != cc.num_terms)
    throw Error("label space mismatch between model and data");
  nlohmann::json root = bundle.at("config");
  for (const auto& o : c.overrides) apply_override(root, o);
  const AppConfig app = config_from_json(root);
  std::optional<CrfTagger> tagger;
  if (bundle.contains("ner")) tagger.emplace(CrfTagger::from_json(bundle.at("ner")));
  std::optional<NumEncoder> enc;
  if (bundle.contains("num_encoder")) enc.emplace(NumEncoder::from_json(bundle.at("num_encoder")));
  const CrfTagger* tp = tagger ? &*tagger : nullptr;
  const NumEncoder* ep = model.fuses_evidence() ? (enc ? &*enc : throw Error("bundle lacks its number encoder")) : nullptr;

  std::set<std::size_t> confusing = generator_confusing(cc);
  if (app.eval.confusing_source == "baseline") {
    if (baseline.empty()) throw Error("eval.confusing_source is \"baseline\" but no --baseline model was given");
    const nlohmann::json bb = load_json(baseline);
    check_header(bb, "ljp_bundle");
    const LjpModel base = LjpModel::from_json(bb.at("model"));
    if (base.fuses_evidence()) throw Error("--baseline must be a model trained without evidence");
    const auto val_docs = read_split(data, "validation");
    const auto val = make_examples(val_docs, {}, nullptr);
    confusing = confusing_classes(evaluate(base, val, {}, {}).charge_confusion, app.eval.confusing_threshold);
  }
  const auto docs = read_split(data, split);
  const auto examples = make_examples(docs, amounts_for(docs, model.config().amount_source, tp), ep);
  LjpRun run;
  run.strategy = strategy_name(model.config().strategy);
  run.evidence = model.fuses_evidence();
  run.seed = model.config().seed;
  run.best_epoch = bundle.value("best_epoch", std::size_t{0});
  run.test = evaluate(model, examples, confusing, number_sensitive_set(cc));
  nlohmann::json j = run.to_json();
  j.erase("history");
  j.erase("seconds");
  j.erase("diverged");
  j["split"] = split;
  j["test"] = run.test.to_json(true);
  j["confusing_set"] = confusing;
  if (out.empty())
    std::cout << j.dump(2) << '\n';
  else
    save_json(j, out);
  log(run_label(run.strategy, run.evidence) + ": charge F1 " + std::to_string(run.test.charge.macro_f1) + ", Conf. F1 " +
      std::to_string(run.test.conf_f1) + ", Num. F1 " + std::to_string(run.test.num_f1));
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<nlohmann::json> loaded;
  for (const auto& p : runs) {
    nlohmann::json j = load_json(p);
    if (j.is_array()) {
      for (auto& r : j) loaded.push_back(std::move(r));
    } else {
      loaded.push_back(std::move(j));
    }
  }
  const auto rows = summarize_runs(loaded);
  const std::string md = report_markdown(rows);
  std::cout << md;
  if (!out.empty()) {
    write_text(out + ".md", md);
    save_json(report_json(rows), out + ".json");
  }
  return 0;
}

/// Prints the whole effective config, or one "section.key" value; arrays print
/// space-separated so shell scripts can loop over them.
int cmd_config(const Common& c, const std::string& key) {
  const nlohmann::json j = config_to_json(load_config(c.config, c.overrides, c.full_scale));
  if (key.empty()) {
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  const auto dot = key.find('.');
  const nlohmann::json* v = &j;
  for (const std::string& part : {key.substr(0, dot), dot == std::string::npos ? std::string() : key.substr(dot + 1)}) {
    if (part.empty()) continue;
    if (!v->is_object() || !v->contains(part)) throw Error("config has no key \"" + key + "\"");
    v = &v->at(part);
  }
  if (v->is_array()) {
    std::string line;
    for (const auto& e : *v) line += (line.empty() ? "" : " ") + (e.is_string() ? e.get<std::string>() : e.dump());
    std::cout << line << '\n';
  } else {
    std::cout << (v->is_string() ? v->get<std::string>() : v->dump()) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical-evidence and contrastive judgment prediction on synthetic cases", "numscl"};
  app.require_subcommand(1);
  Common common;
  std::string data, out, model, input, ner, num, split = "test", baseline;
  std::size_t pairs = 2000;
  std::vector<std::string> runs;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus directory");
  add_common(synth, common);
  synth->add_option("--out", out, "output directory")->required();

  auto* label = app.add_subcommand("label-amounts", "build BIO amount-tagging data");
  label->add_option("--data", data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  label->add_option("--out", out, "output directory (default: the corpus directory)");

  auto* train_ner = app.add_subcommand("train-ner", "train the CRF amount tagger");
  add_common(train_ner, common);
  train_ner->add_option("--data", data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  train_ner->add_option("--out", out, "tagger checkpoint")->required();

  auto* tag = app.add_subcommand("tag", "extract total amounts with a trained tagger");
  tag->add_option("--model", model, "tagger checkpoint")->required()->check(CLI::ExistingFile);
  tag->add_option("--input", input, "JSONL split")->required()->check(CLI::ExistingFile);
  tag->add_option("--out", out, "output JSON (default: stdout)");

  auto* pretrain_num = app.add_subcommand("pretrain-num", "pretrain the number encoder");
  add_common(pretrain_num, common);
  pretrain_num->add_option("--out", out, "encoder checkpoint")->required();

  auto* eval_num = app.add_subcommand("eval-num", "numeracy on held-out number pairs");
  add_common(eval_num, common);
  eval_num->add_option("--model", model, "encoder checkpoint")->required()->check(CLI::ExistingFile);
  eval_num->add_option("--pairs", pairs, "held-out pair count")->check(CLI::PositiveNumber);

  auto* train_ljp_cmd = app.add_subcommand("train-ljp", "train a judgment-prediction model");
  add_common(train_ljp_cmd, common);
  train_ljp_cmd->add_option("--data", data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  train_ljp_cmd->add_option("--ner", ner, "tagger checkpoint (amount_source ner)")->check(CLI::ExistingFile);
  train_ljp_cmd->add_option("--num", num, "number encoder checkpoint (use_evidence)")->check(CLI::ExistingFile);
  train_ljp_cmd->add_option("--out", out, "model bundle")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a judgment-prediction model");
  eval->add_option("--set", common.overrides, "override, e.g. eval.confusing_source=baseline (repeatable)");
  eval->add_option("--model", model, "model bundle")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", split, "train, validation or test");
  eval->add_option("--baseline", baseline, "CE model bundle for the confusing set")->check(CLI::ExistingFile);
  eval->add_option("--out", out, "output JSON (default: stdout)");

  auto* report = app.add_subcommand("report", "aggregate eval outputs into a comparison table");
  report->add_option("runs", runs, "eval output files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out, "output prefix for .md and .json");

  std::string key;
  auto* config = app.add_subcommand("config", "print the effective config");
  add_common(config, common);
  config->add_option("--get", key, "print one value, e.g. eval.strategies");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(common, out);
    if (*label) return cmd_label(data, out);
    if (*train_ner) return cmd_train_ner(common, data, out);
    if (*tag) return cmd_tag(model, input, out);
    if (*pretrain_num) return cmd_pretrain_num(common, out);
    if (*eval_num) return cmd_eval_num(common, model, pairs);
    if (*train_ljp_cmd) return cmd_train_ljp(common, data, ner, num, out);
    if (*eval) return cmd_eval(common, model, data, split, baseline, out);
    if (*report) return cmd_report(runs, out);
    if (*config) return cmd_config(common, key);
  } catch (const std::exception& e) {
    std::cerr << "numscl: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
