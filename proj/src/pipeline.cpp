#include "acn/pipeline.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

#include "acn/errors.hpp"
#include "acn/random.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace acn {

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::vector<std::string> vocab_training_texts(const CorpusFile& corpus, const std::vector<std::string>& documents) {
  std::vector<std::string> texts = documents;
  for (const auto& dlg : corpus.dialogues) {
    std::vector<DialogueTurn> history;
    for (const auto& turn : dlg.turns) {
      texts.push_back(serialize_turn(history, turn));
      history.push_back(turn);
    }
  }
  return texts;
}

namespace {

std::string invented_word(Rng& rng) {
  std::string w;
  for (std::size_t n = 3 + rng.below(5); n > 0; --n) w += static_cast<char>('a' + rng.below(26));
  return w;
}

std::string invented_digits(Rng& rng, std::size_t n) {
  std::string s;
  for (; n > 0; --n) s += static_cast<char>('0' + rng.below(10));
  return s;
}

}  // namespace

std::vector<std::string> invented_entity_dialogues(std::uint64_t seed, std::size_t n_dialogues) {
  if (n_dialogues == 0) return {};
  const SyntheticData data = generate_synthetic(seed, n_dialogues, EntityPool::Train);
  Rng rng(seed ^ 0x1e7e47edULL);
  std::vector<std::string> out;
  for (const auto& dlg : data.corpus.dialogues) {
    std::vector<std::string> turns;
    std::vector<DialogueTurn> history;
    for (const auto& turn : dlg.turns) {
      turns.push_back(serialize_turn(history, turn));
      history.push_back(turn);
    }
    // Substitutions for the values this dialogue mentions, longest first so
    // that "x y" never pre-empts "x y hotel".
    std::string all;
    for (const auto& t : turns) all += t;
    std::vector<std::pair<std::string, std::string>> subst;
    for (const auto& domain : data.db.domains()) {
      for (const auto& rec : data.db.records(domain)) {
        if (all.find(rec.name) == std::string::npos) continue;
        std::string name = invented_word(rng) + " " + invented_word(rng);
        const auto last_space = rec.name.rfind(' ');
        if (std::count(rec.name.begin(), rec.name.end(), ' ') > 1) name += rec.name.substr(last_space);
        subst.emplace_back(rec.name, name);
        subst.emplace_back(rec.attributes.at("phone"), invented_digits(rng, 5) + " " + invented_digits(rng, 6));
        std::string postcode = invented_word(rng).substr(0, 2) + invented_digits(rng, 1) + " " + invented_digits(rng, 1) +
                               invented_word(rng).substr(0, 2);
        subst.emplace_back(rec.attributes.at("postcode"), postcode);
      }
    }
    std::sort(subst.begin(), subst.end(),
              [](const auto& a, const auto& b) { return a.first.size() != b.first.size() ? a.first.size() > b.first.size() : a.first < b.first; });
    for (const auto& text : turns) {
      std::string renamed;
      for (std::size_t i = 0; i < text.size();) {
        bool hit = false;
        for (const auto& [from, to] : subst) {
          if (text.compare(i, from.size(), from) == 0) {
            renamed += to;
            i += from.size();
            hit = true;
            break;
          }
        }
        if (!hit) renamed += text[i++];
      }
      out.push_back(std::move(renamed));
    }
  }
  return out;
}

std::vector<std::string> backbone_documents(std::uint64_t seed, std::size_t n_prose, std::size_t n_dialogues,
                                             std::size_t n_invented) {
  std::vector<std::string> docs = n_prose ? generate_pretraining_text(seed, n_prose, EntityPool::Train)
                                          : std::vector<std::string>{};
  if (n_dialogues) {
    const SyntheticData data = generate_synthetic(seed + 1, n_dialogues, EntityPool::Train);
    for (const auto& dlg : data.corpus.dialogues) {
      std::vector<DialogueTurn> history;
      for (const auto& turn : dlg.turns) {
        docs.push_back(serialize_turn(history, turn));
        history.push_back(turn);
      }
    }
  }
  const auto invented = invented_entity_dialogues(seed + 2, n_invented);
  docs.insert(docs.end(), invented.begin(), invented.end());
  return docs;
}

void save_documents(const std::vector<std::string>& documents, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, "cannot open for writing");
  for (const auto& d : documents) out << nlohmann::json(d).dump() << "\n";
}

std::vector<std::string> load_documents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open document file");
  std::vector<std::string> docs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(n), std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_string()) throw ParseError(path + ":" + std::to_string(n), "expected a JSON string");
    docs.push_back(j.get<std::string>());
  }
  return docs;
}

std::vector<std::string> full_lexicon() {
  std::vector<std::string> lex = entity_lexicon(pool_database(EntityPool::Train));
  const auto eval = entity_lexicon(pool_database(EntityPool::Eval));
  lex.insert(lex.end(), eval.begin(), eval.end());
  std::sort(lex.begin(), lex.end());
  lex.erase(std::unique(lex.begin(), lex.end()), lex.end());
  return lex;
}

Model with_adapter_size(const Model& backbone, std::size_t adapter_size, std::uint64_t seed) {
  ModelConfig config = backbone.config();
  config.adapter_size = adapter_size;
  config.adapter_enabled = true;
  config.copy_enabled = true;
  Model model(config, seed);
  for (auto& p : model.params()) {
    if (p.group != ParamGroup::Backbone) continue;
    const Tensor& src = backbone.param(p.name).value;
    auto dst = p.value.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
  return model;
}

std::vector<SweepResult> sweep_adapters(const Model& backbone, const Vocab& vocab, const CorpusFile& train_corpus,
                                        const CorpusFile& eval_corpus, const Database& eval_db,
                                        const std::vector<std::size_t>& sizes, const TrainConfig& config,
                                        const StageLimits& limits) {
  if (sizes.empty()) throw ConfigError("sweep: no adapter sizes given");
  for (auto s : sizes) {
    if (s == 0) throw ConfigError("sweep: adapter sizes must be positive");
  }
  TrainConfig tc = config;
  tc.mode = TrainMode::FinetuneAdapters;
  const auto examples = dialogue_examples(vocab, train_corpus);
  const auto lexicon = full_lexicon();
  std::vector<SweepResult> out;
  for (auto size : sizes) {
    Model model = with_adapter_size(backbone, size, config.seed);
    SweepResult r;
    r.adapter_size = size;
    r.log = finetune(model, examples, model.partition_for(TrainMode::FinetuneAdapters), tc);
    r.report = evaluate_corpus(model, vocab, eval_db, eval_corpus, lexicon, limits);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace acn
