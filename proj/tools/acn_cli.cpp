// acn: command line entry point. Run `acn --help` or `acn <subcommand> --help`.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "acn/checkpoint.hpp"
#include "acn/pipeline.hpp"
#include "acn/server.hpp"

using namespace acn;

namespace {

struct ModelFlags {
  std::size_t layers = 2, heads = 2, d_model = 64, d_ff = 256, max_positions = 512, adapter_size = 32;

  void add(CLI::App* app) {
    app->add_option("--layers", layers, "transformer blocks")->capture_default_str();
    app->add_option("--heads", heads, "attention heads")->capture_default_str();
    app->add_option("--d-model", d_model, "hidden width")->capture_default_str();
    app->add_option("--d-ff", d_ff, "feed-forward width")->capture_default_str();
    app->add_option("--max-positions", max_positions, "positional capacity")->capture_default_str();
    app->add_option("--adapter-size", adapter_size, "adapter bottleneck width")->capture_default_str();
  }

  ModelConfig config(std::size_t vocab_size) const {
    ModelConfig c;
    c.n_layer = layers;
    c.n_head = heads;
    c.d_model = d_model;
    c.d_ff = d_ff;
    c.max_positions = max_positions;
    c.adapter_size = adapter_size;
    c.vocab_size = vocab_size;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  TrainConfig tc;
  std::string log_path;

  void add(CLI::App* app, double default_lr) {
    tc.learning_rate = default_lr;
    app->add_option("--lr", tc.learning_rate, "learning rate")->capture_default_str();
    app->add_option("--batch", tc.batch_size, "sequences per step")->capture_default_str();
    app->add_option("--epochs", tc.epochs, "passes over the data")->capture_default_str();
    app->add_option("--clip", tc.grad_clip_norm, "global gradient norm cap (<= 0 disables)")->capture_default_str();
    app->add_option("--max-steps", tc.max_steps, "stop after this many steps (0: no cap)")->capture_default_str();
    app->add_option("--log", log_path, "append one JSON record per epoch to this file");
  }
};

StageLimits limits_from(std::size_t belief, std::size_t action, std::size_t response) {
  return {belief, action, response};
}

EpochCallback epoch_printer(const std::string& log_path) {
  auto log = std::make_shared<std::ofstream>();
  if (!log_path.empty()) {
    log->open(log_path, std::ios::app);
    if (!*log) throw ParseError(log_path, "cannot open log for writing");
  }
  return [log](const EpochRecord& r) {
    const std::string line = r.to_json();
    std::cout << line << std::endl;
    if (log->is_open()) *log << line << std::endl;
  };
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, "cannot open for writing");
  out << text;
}

LoadedCheckpoint load_checked(const std::string& ckpt_path, const Vocab& vocab) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  require_vocab(ckpt, vocab);
  return ckpt;
}

int fail(int code, const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = {{"code", kind}, {"message", message}};
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Adapter + copy-network dialogue model: data, training, evaluation, serving"};
  app.set_config("--config", "", "read options from a TOML/INI file");
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "seed for every random choice")->capture_default_str();

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic dialogue corpus and its database");
  std::size_t gen_n = 50, gen_docs = 0, gen_doc_dialogues = 0, gen_doc_invented = 0;
  std::string gen_pool = "train", gen_out, gen_db_out, gen_docs_out;
  gen->add_option("--dialogues", gen_n, "number of dialogues")->capture_default_str();
  gen->add_option("--pool", gen_pool, "entity pool: train or eval")->capture_default_str();
  gen->add_option("--out", gen_out, "corpus file")->required();
  gen->add_option("--db-out", gen_db_out, "database file")->required();
  gen->add_option("--pretrain-out", gen_docs_out, "also write backbone pretraining documents (train-pool prose and dialogues)");
  gen->add_option("--pretrain-docs", gen_docs, "number of prose pretraining documents")->capture_default_str();
  gen->add_option("--pretrain-dialogues", gen_doc_dialogues,
                  "number of train-pool dialogues among the pretraining documents")
      ->capture_default_str();
  gen->add_option("--pretrain-invented", gen_doc_invented,
                  "number of pretraining dialogues whose entity names, phones and postcodes are invented")
      ->capture_default_str();

  // train-vocab
  auto* tv = app.add_subcommand("train-vocab", "fit the subword vocabulary");
  std::vector<std::string> tv_corpora, tv_texts;
  std::size_t tv_size = 1024;
  std::string tv_out;
  tv->add_option("--corpus", tv_corpora, "dialogue corpus files")->check(CLI::ExistingFile);
  tv->add_option("--text", tv_texts, "document files")->check(CLI::ExistingFile);
  tv->add_option("--size", tv_size, "target vocabulary size")->capture_default_str();
  tv->add_option("--out", tv_out, "vocabulary file")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train the backbone on plain documents");
  std::string pre_vocab, pre_out;
  std::vector<std::string> pre_texts;
  ModelFlags pre_model;
  TrainFlags pre_train;
  pre->add_option("--vocab", pre_vocab, "vocabulary file")->required()->check(CLI::ExistingFile);
  pre->add_option("--text", pre_texts, "document files")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out, "checkpoint to write")->required();
  pre_model.add(pre);
  pre_train.add(pre, 1e-3);

  // finetune
  auto* ft = app.add_subcommand("finetune", "fine-tune adapters and copy head (or everything) on dialogues");
  std::string ft_vocab, ft_corpus, ft_db, ft_in, ft_out, ft_mode = "finetune_adapters";
  bool ft_no_copy = false;
  std::size_t ft_adapter_size = 0;
  TrainFlags ft_train;
  ft->add_option("--vocab", ft_vocab, "vocabulary file")->required()->check(CLI::ExistingFile);
  ft->add_option("--corpus", ft_corpus, "dialogue corpus")->required()->check(CLI::ExistingFile);
  ft->add_option("--db", ft_db, "database the corpus was built on")->required()->check(CLI::ExistingFile);
  ft->add_option("--in", ft_in, "input checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", ft_out, "output checkpoint")->required();
  ft->add_option("--mode", ft_mode, "finetune_adapters or finetune_full")->capture_default_str();
  ft->add_flag("--no-copy", ft_no_copy, "train and save with the copy head disabled");
  ft->add_option("--adapter-size", ft_adapter_size, "re-initialise adapters at this size (0: keep)");
  ft_train.add(ft, 3e-4);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "run the staged pipeline over a corpus and score it");
  std::string ev_vocab, ev_corpus, ev_db, ev_ckpt, ev_json, ev_text, ev_pred;
  bool ev_no_copy = false, ev_no_adapters = false;
  std::size_t lim_b = 64, lim_a = 48, lim_r = 96;
  ev->add_option("--vocab", ev_vocab, "vocabulary file")->required()->check(CLI::ExistingFile);
  ev->add_option("--corpus", ev_corpus, "dialogue corpus")->required()->check(CLI::ExistingFile);
  ev->add_option("--db", ev_db, "database")->required()->check(CLI::ExistingFile);
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--report-json", ev_json, "machine-readable summary file");
  ev->add_option("--report-text", ev_text, "text report file");
  ev->add_option("--predictions", ev_pred, "per-turn predictions (JSON lines)");
  ev->add_flag("--no-copy", ev_no_copy, "disable the copy head at inference");
  ev->add_flag("--no-adapters", ev_no_adapters, "disable the adapters at inference");
  ev->add_option("--max-belief", lim_b, "belief token limit")->capture_default_str();
  ev->add_option("--max-action", lim_a, "action token limit")->capture_default_str();
  ev->add_option("--max-response", lim_r, "response token limit")->capture_default_str();

  // chat
  auto* chat = app.add_subcommand("chat", "interactive terminal dialogue");
  std::string ch_vocab, ch_db, ch_ckpt;
  chat->add_option("--vocab", ch_vocab, "vocabulary file")->required()->check(CLI::ExistingFile);
  chat->add_option("--db", ch_db, "database")->required()->check(CLI::ExistingFile);
  chat->add_option("--ckpt", ch_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP JSON session API");
  std::string sv_vocab, sv_db, sv_ckpt, sv_host = "127.0.0.1";
  int sv_port = 8080;
  srv->add_option("--vocab", sv_vocab, "vocabulary file")->required()->check(CLI::ExistingFile);
  srv->add_option("--db", sv_db, "database")->required()->check(CLI::ExistingFile);
  srv->add_option("--ckpt", sv_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  srv->add_option("--host", sv_host, "bind address")->capture_default_str();
  srv->add_option("--port", sv_port, "port")->capture_default_str()->check(CLI::Range(1, 65535));

  // sweep-adapters
  auto* sw = app.add_subcommand("sweep-adapters", "fine-tune and evaluate once per adapter size");
  std::vector<std::size_t> sw_sizes;
  std::string sw_vocab, sw_backbone, sw_train, sw_eval, sw_eval_db, sw_out_dir;
  TrainFlags sw_train_flags;
  sw->add_option("sizes", sw_sizes, "adapter sizes, e.g. 128 256 512 1024")->required()->check(CLI::PositiveNumber);
  sw->add_option("--vocab", sw_vocab, "vocabulary file")->required()->check(CLI::ExistingFile);
  sw->add_option("--backbone", sw_backbone, "pretrained backbone checkpoint")->required()->check(CLI::ExistingFile);
  sw->add_option("--train-corpus", sw_train, "fine-tuning corpus")->required()->check(CLI::ExistingFile);
  sw->add_option("--eval-corpus", sw_eval, "evaluation corpus")->required()->check(CLI::ExistingFile);
  sw->add_option("--eval-db", sw_eval_db, "evaluation database")->required()->check(CLI::ExistingFile);
  sw->add_option("--out-dir", sw_out_dir, "one report_<size>.json per size")->required();
  sw_train_flags.add(sw, 3e-4);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail(2, "usage", e.what());
  }

  try {
    if (*gen) {
      const EntityPool pool = entity_pool_from_string(gen_pool);
      SyntheticData data = generate_synthetic(seed, gen_n, pool);
      save_corpus(data.corpus, gen_out);
      data.db.save(gen_db_out);
      if (!gen_docs_out.empty()) {
        if (gen_docs + gen_doc_dialogues + gen_doc_invented == 0) {
          throw ConfigError("--pretrain-out needs --pretrain-docs, --pretrain-dialogues or --pretrain-invented > 0");
        }
        save_documents(backbone_documents(seed, gen_docs, gen_doc_dialogues, gen_doc_invented), gen_docs_out);
      }
      std::cout << "wrote " << data.corpus.dialogues.size() << " dialogues to " << gen_out << "\n";
    } else if (*tv) {
      if (tv_corpora.empty() && tv_texts.empty()) throw ConfigError("train-vocab needs --corpus or --text");
      std::vector<std::string> texts;
      for (const auto& p : tv_texts) {
        auto docs = load_documents(p);
        texts.insert(texts.end(), docs.begin(), docs.end());
      }
      for (const auto& p : tv_corpora) {
        auto more = vocab_training_texts(load_corpus(p), {});
        texts.insert(texts.end(), more.begin(), more.end());
      }
      const Vocab vocab = train_vocab(texts, tv_size);
      vocab.save(tv_out);
      std::cout << "vocabulary of " << vocab.size() << " tokens written to " << tv_out << "\n";
    } else if (*pre) {
      const Vocab vocab = Vocab::load(pre_vocab);
      ModelConfig config = pre_model.config(vocab.size());
      config.adapter_enabled = false;
      config.copy_enabled = false;
      Model model(config, seed);
      std::vector<std::string> docs;
      for (const auto& p : pre_texts) {
        auto d = load_documents(p);
        docs.insert(docs.end(), d.begin(), d.end());
      }
      pre_train.tc.seed = seed;
      pre_train.tc.mode = TrainMode::PretrainFull;
      pretrain_backbone(model, text_examples(vocab, docs, config.max_positions), pre_train.tc,
                        epoch_printer(pre_train.log_path));
      save_checkpoint(model, vocab.hash(), pre_out);
    } else if (*ft) {
      const Vocab vocab = Vocab::load(ft_vocab);
      const Database db = Database::load(ft_db);
      const CorpusFile corpus = load_corpus(ft_corpus, &db);
      LoadedCheckpoint ckpt = load_checked(ft_in, vocab);
      Model model = ft_adapter_size ? with_adapter_size(ckpt.model, ft_adapter_size, seed) : std::move(ckpt.model);
      model.set_adapter_enabled(true);
      model.set_copy_enabled(!ft_no_copy);
      ft_train.tc.seed = seed;
      ft_train.tc.mode = train_mode_from_string(ft_mode);
      finetune(model, dialogue_examples(vocab, corpus), model.partition_for(ft_train.tc.mode), ft_train.tc,
               epoch_printer(ft_train.log_path));
      save_checkpoint(model, vocab.hash(), ft_out);
    } else if (*ev) {
      const Vocab vocab = Vocab::load(ev_vocab);
      const Database db = Database::load(ev_db);
      const CorpusFile corpus = load_corpus(ev_corpus, &db);
      LoadedCheckpoint ckpt = load_checked(ev_ckpt, vocab);
      if (ev_no_copy) ckpt.model.set_copy_enabled(false);
      if (ev_no_adapters) ckpt.model.set_adapter_enabled(false);
      std::vector<TurnPrediction> preds;
      const EvalReport report = evaluate_corpus(ckpt.model, vocab, db, corpus, full_lexicon(),
                                                limits_from(lim_b, lim_a, lim_r), ev_pred.empty() ? nullptr : &preds);
      std::cout << report.to_text();
      if (!ev_json.empty()) write_text(ev_json, report.to_json() + "\n");
      if (!ev_text.empty()) write_text(ev_text, report.to_text());
      if (!ev_pred.empty()) {
        std::string lines;
        for (const auto& p : preds) {
          auto j = turn_json("", p.result);
          j.erase("user");
          nlohmann::ordered_json row;
          row["dialogue"] = p.dialogue_id;
          row["turn"] = p.turn;
          row["prediction"] = j;
          lines += row.dump() + "\n";
        }
        write_text(ev_pred, lines);
      }
    } else if (*chat) {
      const Vocab vocab = Vocab::load(ch_vocab);
      const Database db = Database::load(ch_db);
      const LoadedCheckpoint ckpt = load_checked(ch_ckpt, vocab);
      std::vector<DialogueTurn> history;
      std::string line;
      std::cout << "type a message, or an empty line to quit\n> " << std::flush;
      while (std::getline(std::cin, line) && !line.empty()) {
        try {
          const TurnResult r = respond(ckpt.model, vocab, db, history, line);
          std::cout << "belief:   " << belief_text(r.belief) << "\n"
                    << "database: " << r.db_text << "\n"
                    << "action:   " << action_text(r.action) << "\n"
                    << "system:   " << r.response << "\n";
          DialogueTurn turn;
          turn.user_utterance = line;
          turn.belief = r.belief;
          turn.db_results = r.db.records;
          turn.db_total = r.db.total;
          turn.action = r.action;
          turn.system_response = r.response;
          history.push_back(std::move(turn));
        } catch (const GenerationError& e) {
          std::cout << "could not parse generated " << to_string(e.stage()) << " line: " << e.raw() << "\n";
        }
        std::cout << "> " << std::flush;
      }
    } else if (*srv) {
      const Vocab vocab = Vocab::load(sv_vocab);
      const Database db = Database::load(sv_db);
      const LoadedCheckpoint ckpt = load_checked(sv_ckpt, vocab);
      DialogueService service(ckpt.model, vocab, db);
      std::cout << "listening on http://" << sv_host << ":" << sv_port << std::endl;
      serve(service, sv_host, sv_port);
    } else if (*sw) {
      const Vocab vocab = Vocab::load(sw_vocab);
      const Database eval_db = Database::load(sw_eval_db);
      const CorpusFile train = load_corpus(sw_train);
      const CorpusFile eval = load_corpus(sw_eval, &eval_db);
      const LoadedCheckpoint backbone = load_checked(sw_backbone, vocab);
      sw_train_flags.tc.seed = seed;
      std::filesystem::create_directories(sw_out_dir);
      const auto results = sweep_adapters(backbone.model, vocab, train, eval, eval_db, sw_sizes, sw_train_flags.tc);
      for (const auto& r : results) {
        const std::string path = (std::filesystem::path(sw_out_dir) / ("report_" + std::to_string(r.adapter_size) + ".json")).string();
        write_text(path, r.report.to_json() + "\n");
        std::cout << "adapter size " << r.adapter_size << "\n" << r.report.to_text();
      }
    }
  } catch (const ConfigError& e) {
    return fail(2, "config", e.what());
  } catch (const ParseError& e) {
    return fail(3, "parse", e.what());
  } catch (const LengthError& e) {
    return fail(4, "length", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
  return 0;
}
