#include "acn/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "acn/errors.hpp"
#include "acn/random.hpp"

namespace acn {

using nlohmann::ordered_json;

const char* to_string(EntityPool pool) { return pool == EntityPool::Train ? "train" : "eval"; }

EntityPool entity_pool_from_string(const std::string& name) {
  if (name == "train") return EntityPool::Train;
  if (name == "eval") return EntityPool::Eval;
  throw ConfigError("unknown entity pool '" + name + "' (expected train or eval)");
}

const std::vector<std::string>& domain_names() {
  static const std::vector<std::string> names = {"hotel", "restaurant"};
  return names;
}

const std::vector<std::string>& informable_slots(const std::string& domain) {
  static const std::vector<std::string> restaurant = {"area", "food", "pricerange"};
  static const std::vector<std::string> hotel = {"area", "pricerange", "stars"};
  if (domain == "restaurant") return restaurant;
  if (domain == "hotel") return hotel;
  throw ConfigError("unknown domain '" + domain + "'");
}

const std::vector<std::string>& requestable_slots(const std::string& domain) {
  static const std::vector<std::string> both = {"phone", "postcode"};
  if (domain == "restaurant" || domain == "hotel") return both;
  throw ConfigError("unknown domain '" + domain + "'");
}

namespace {

const std::vector<std::string> kAreas = {"north", "south", "east", "west", "centre"};
const std::vector<std::string> kPrices = {"cheap", "moderate", "expensive"};
const std::vector<std::string> kFoods = {"italian", "chinese", "indian", "british", "french", "thai", "spanish"};
const std::vector<std::string> kStars = {"2", "3", "4", "5"};

const std::vector<std::string>& slot_values(const std::string& slot) {
  if (slot == "area") return kAreas;
  if (slot == "pricerange") return kPrices;
  if (slot == "food") return kFoods;
  if (slot == "stars") return kStars;
  throw ConfigError("slot '" + slot + "' has no closed value set");
}

// Train names are built from English words; eval names from syllables that
// never occur in train text, so the generator cannot have memorised them.
std::string train_name(const std::string& domain, Rng& rng) {
  static const std::vector<std::string> first = {"golden", "silver", "royal", "little", "green", "old",
                                                 "red",    "blue",   "happy", "lucky",  "grand", "quiet"};
  static const std::vector<std::string> second = {"dragon", "garden", "kitchen", "table", "lantern", "spoon",
                                                  "oak",    "lion",   "river",   "star",  "bridge",  "mill"};
  static const std::vector<std::string> hotel_kind = {"hotel", "lodge", "inn", "house"};
  std::string name = rng.pick(first) + " " + rng.pick(second);
  if (domain == "hotel") name += " " + rng.pick(hotel_kind);
  return name;
}

std::string eval_word(Rng& rng) {
  static const std::vector<std::string> onset = {"z", "q", "x", "j", "v", "kw"};
  static const std::vector<std::string> nucleus = {"u", "y", "oa", "ei", "uu"};
  static const std::vector<std::string> coda = {"", "x", "z", "rk", "ff"};
  std::string w;
  for (int s = 0; s < 2; ++s) w += rng.pick(onset) + rng.pick(nucleus) + rng.pick(coda);
  return w;
}

std::string eval_name(const std::string& domain, Rng& rng) {
  std::string name = eval_word(rng) + " " + eval_word(rng);
  if (domain == "hotel") name += " hotel";
  return name;
}

std::string digits(Rng& rng, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += static_cast<char>('0' + rng.below(10));
  return s;
}

std::string letters(Rng& rng, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += static_cast<char>('a' + rng.below(26));
  return s;
}

std::string join_words(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

std::string slot_value(const EntityRecord& rec, const std::string& slot) { return rec.attributes.at(slot); }

}  // namespace

Database pool_database(EntityPool pool) {
  Rng rng(pool == EntityPool::Train ? 0x7a11ed5eedULL : 0xe7a15eedULL);
  Database db;
  std::set<std::string> phones, postcodes;
  for (const auto& domain : {std::string("restaurant"), std::string("hotel")}) {
    std::set<std::string> names;
    while (names.size() < kEntitiesPerDomain) {
      std::string name = pool == EntityPool::Train ? train_name(domain, rng) : eval_name(domain, rng);
      if (!names.insert(name).second) continue;
      EntityRecord rec;
      rec.domain = domain;
      rec.name = name;
      rec.attributes["name"] = name;
      for (const auto& slot : informable_slots(domain)) rec.attributes[slot] = rng.pick(slot_values(slot));
      std::string phone;
      do {
        phone = (pool == EntityPool::Train ? "01223 " : "01954 ") + digits(rng, 6);
      } while (!phones.insert(phone).second);
      std::string postcode;
      do {
        postcode = (pool == EntityPool::Train ? "cb" : "pe") + digits(rng, 1) + " " + digits(rng, 1) + letters(rng, 2);
      } while (!postcodes.insert(postcode).second);
      rec.attributes["phone"] = phone;
      rec.attributes["postcode"] = postcode;
      db.add(std::move(rec));
    }
  }
  return db;
}

namespace {

std::string price_phrase(const std::string& p) { return p; }

// Opening request naming the domain and the given constraints.
std::string opening_utterance(const std::string& domain, const SlotValues& c, Rng& rng) {
  auto get = [&](const char* s) -> std::string {
    auto it = c.find(s);
    return it == c.end() ? std::string() : it->second;
  };
  const std::string area = get("area"), price = get("pricerange");
  const std::string in_area = area.empty() ? "" : "in the " + area;
  if (domain == "restaurant") {
    const std::string food = get("food");
    switch (rng.below(3)) {
      case 0:
        return join_words({"i am looking for a", price_phrase(price), food, "restaurant", in_area, "."});
      case 1:
        if (!food.empty()) {
          return join_words({"i want to eat", food, "food", in_area, price.empty() ? "" : ", something " + price, "."});
        }
        [[fallthrough]];
      default:
        return join_words({"can you help me find a", price, "place to eat", in_area,
                           food.empty() ? "" : "that serves " + food + " food", "?"});
    }
  }
  const std::string stars = get("stars");
  switch (rng.below(3)) {
    case 0:
      return join_words({"i need a", price, "hotel", in_area, stars.empty() ? "" : "with " + stars + " stars", "."});
    case 1:
      if (!stars.empty()) return join_words({"i am looking for a", stars, "star hotel", in_area, price.empty() ? "" : ", something " + price, "."});
      [[fallthrough]];
    default:
      return join_words({"can you find me a", price, "place to stay", in_area,
                         stars.empty() ? "" : "rated " + stars + " stars", "?"});
  }
}

std::string followup_piece(const std::string& slot, const std::string& value, Rng& rng) {
  const bool alt = rng.below(2) == 1;
  if (slot == "area") return alt ? "i would like the " + value + " part of town" : "it should be in the " + value;
  if (slot == "food") return alt ? "make it " + value + " food please" : "i would like " + value + " food";
  if (slot == "pricerange") return alt ? "i prefer the " + value + " price range" : "something " + value + " please";
  return alt ? "it should have " + value + " stars" : "make it a " + value + " star place";
}

struct Offer {
  std::string text;
  SystemAction action;
};

Offer offer_response(const std::string& domain, const EntityRecord& rec, std::size_t total, Rng& rng) {
  Offer o;
  const std::string& name = rec.name;
  auto inform = [&](const std::string& slot) {
    o.action.acts.push_back({domain, ActType::Inform, slot, slot_value(rec, slot)});
  };
  o.action.acts.push_back({domain, ActType::Offer, "name", name});
  const std::string area = slot_value(rec, "area");
  const std::string price = slot_value(rec, "pricerange");
  if (domain == "restaurant") {
    const std::string food = slot_value(rec, "food");
    switch (rng.below(3)) {
      case 0:
        o.text = name + " is a " + price + " restaurant in the " + area + " serving " + food + " food .";
        inform("area");
        inform("food");
        inform("pricerange");
        break;
      case 1:
        o.text = "how about " + name + " ? it is in the " + area + " and serves " + food + " food .";
        inform("area");
        inform("food");
        break;
      default:
        o.text = "there are " + std::to_string(total) + " options . i recommend " + name + " .";
        o.action.acts.insert(o.action.acts.begin(), {domain, ActType::Inform, "choice", std::to_string(total)});
        break;
    }
    return o;
  }
  const std::string stars = slot_value(rec, "stars");
  switch (rng.below(3)) {
    case 0:
      o.text = name + " is a " + price + " hotel in the " + area + " with " + stars + " stars .";
      inform("area");
      inform("pricerange");
      inform("stars");
      break;
    case 1:
      o.text = "how about " + name + " ? it is a " + stars + " star hotel in the " + area + " .";
      inform("area");
      inform("stars");
      break;
    default:
      o.text = "there are " + std::to_string(total) + " options . i recommend " + name + " .";
      o.action.acts.insert(o.action.acts.begin(), {domain, ActType::Inform, "choice", std::to_string(total)});
      break;
  }
  return o;
}

std::string request_utterance(const std::vector<std::string>& requested, Rng& rng) {
  const bool phone = std::find(requested.begin(), requested.end(), "phone") != requested.end();
  const bool post = std::find(requested.begin(), requested.end(), "postcode") != requested.end();
  const bool alt = rng.below(2) == 1;
  if (phone && post) return alt ? "can i get the phone number and the postcode ?" : "what are their phone number and postcode ?";
  if (phone) return alt ? "what is their phone number ?" : "could you give me the phone number ?";
  return alt ? "what is the postcode ?" : "can i have their postcode please ?";
}

Offer request_response(const std::string& domain, const EntityRecord& rec, const std::vector<std::string>& requested,
                       Rng& rng) {
  Offer o;
  const bool phone = std::find(requested.begin(), requested.end(), "phone") != requested.end();
  const bool post = std::find(requested.begin(), requested.end(), "postcode") != requested.end();
  const std::string& name = rec.name;
  if (phone) o.action.acts.push_back({domain, ActType::Inform, "phone", slot_value(rec, "phone")});
  if (post) o.action.acts.push_back({domain, ActType::Inform, "postcode", slot_value(rec, "postcode")});
  const bool alt = rng.below(2) == 1;
  if (phone && post) {
    o.text = alt ? "sure , the phone number of " + name + " is " + slot_value(rec, "phone") + " and the postcode is " +
                       slot_value(rec, "postcode") + " ."
                 : name + " can be reached on " + slot_value(rec, "phone") + " , postcode " +
                       slot_value(rec, "postcode") + " .";
  } else if (phone) {
    o.text = alt ? "the phone number of " + name + " is " + slot_value(rec, "phone") + " ."
                 : "you can call " + name + " on " + slot_value(rec, "phone") + " .";
  } else {
    o.text = alt ? "the postcode of " + name + " is " + slot_value(rec, "postcode") + " ."
                 : name + " is at postcode " + slot_value(rec, "postcode") + " .";
  }
  return o;
}

}  // namespace

SyntheticData generate_synthetic(std::uint64_t seed, std::size_t n_dialogues, EntityPool pool) {
  if (n_dialogues == 0) throw ConfigError("generate_synthetic: n_dialogues must be >= 1");
  SyntheticData out{CorpusFile{kCorpusFormatVersion, to_string(pool), {}}, pool_database(pool)};
  const Database& db = out.db;
  Rng rng(seed);
  for (std::size_t d = 0; d < n_dialogues; ++d) {
    Dialogue dlg;
    dlg.id = std::string(to_string(pool)) + "-" + std::to_string(seed) + "-" + std::to_string(d);
    const std::string domain = rng.pick(domain_names());
    const EntityRecord& target = rng.pick(db.records(domain));
    std::vector<std::string> slots = informable_slots(domain);
    rng.shuffle(slots);
    const std::size_t k = 1 + rng.below(slots.size());
    slots.resize(k);
    std::vector<std::string> requested;
    for (const auto& r : requestable_slots(domain)) {
      if (rng.below(2) == 1) requested.push_back(r);
    }
    const bool says_bye = rng.below(2) == 1;

    // Constraint turns: the opening carries 1..k slots, an optional follow-up the rest.
    const std::size_t first_count = 1 + rng.below(k);
    std::vector<std::vector<std::string>> constraint_turns = {
        std::vector<std::string>(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(first_count))};
    if (first_count < k) {
      constraint_turns.emplace_back(slots.begin() + static_cast<std::ptrdiff_t>(first_count), slots.end());
    }

    BeliefState belief;
    const EntityRecord* offered = nullptr;
    for (std::size_t ct = 0; ct < constraint_turns.size(); ++ct) {
      SlotValues said;
      for (const auto& s : constraint_turns[ct]) {
        said[s] = slot_value(target, s);
        belief.set(domain, s, said[s]);
      }
      DialogueTurn turn;
      if (ct == 0) {
        turn.user_utterance = opening_utterance(domain, said, rng);
      } else {
        std::vector<std::string> pieces;
        for (const auto& s : constraint_turns[ct]) pieces.push_back(followup_piece(s, said[s], rng));
        std::string u;
        for (std::size_t i = 0; i < pieces.size(); ++i) u += (i ? " , and " : "") + pieces[i];
        turn.user_utterance = u + " .";
      }
      turn.belief = belief;
      const QueryResult q = lookup(db, belief);
      turn.db_results = q.records;
      turn.db_total = q.total;
      const EntityRecord& rec = q.records.front();
      offered = &db.records(domain)[static_cast<std::size_t>(
          std::find_if(db.records(domain).begin(), db.records(domain).end(),
                       [&](const EntityRecord& r) { return r.name == rec.name; }) -
          db.records(domain).begin())];
      Offer o = offer_response(domain, rec, q.total, rng);
      turn.action = std::move(o.action);
      turn.system_response = std::move(o.text);
      dlg.turns.push_back(std::move(turn));
    }
    if (!requested.empty()) {
      DialogueTurn turn;
      turn.user_utterance = request_utterance(requested, rng);
      turn.belief = belief;
      const QueryResult q = lookup(db, belief);
      turn.db_results = q.records;
      turn.db_total = q.total;
      Offer o = request_response(domain, *offered, requested, rng);
      turn.action = std::move(o.action);
      turn.system_response = std::move(o.text);
      dlg.turns.push_back(std::move(turn));
    }
    if (says_bye) {
      DialogueTurn turn;
      turn.user_utterance = rng.below(2) ? "thank you , that is all i need ." : "thanks , goodbye .";
      turn.belief = belief;
      const QueryResult q = lookup(db, belief);
      turn.db_results = q.records;
      turn.db_total = q.total;
      turn.action.acts.push_back({"general", ActType::Bye, "", ""});
      turn.system_response = rng.below(2) ? "you are welcome . have a nice day ." : "thank you for using our service , goodbye .";
      dlg.turns.push_back(std::move(turn));
    }
    dlg.goal.domain = domain;
    for (const auto& s : slots) dlg.goal.constraints[s] = slot_value(target, s);
    dlg.goal.requested = requested;
    dlg.goal.entity = offered->name;
    out.corpus.dialogues.push_back(std::move(dlg));
  }
  return out;
}

std::vector<std::string> generate_pretraining_text(std::uint64_t seed, std::size_t n_documents, EntityPool pool) {
  const Database db = pool_database(pool);
  Rng rng(seed);
  std::vector<std::string> docs;
  for (std::size_t n = 0; n < n_documents; ++n) {
    const std::string domain = rng.pick(domain_names());
    const EntityRecord& rec = rng.pick(db.records(domain));
    const auto& a = rec.attributes;
    std::string doc;
    const std::string kind = domain == "restaurant" ? a.at("food") + " restaurant" : a.at("stars") + " star hotel";
    switch (rng.below(4)) {
      case 0:
        doc = rec.name + " is a " + a.at("pricerange") + " " + kind + " in the " + a.at("area") + " of town . ";
        doc += "you can call them on " + a.at("phone") + " . the postcode is " + a.at("postcode") + " .\n";
        break;
      case 1:
        doc = "if you want a " + a.at("pricerange") + " " + kind + " , try " + rec.name + " . it is in the " +
              a.at("area") + " and its phone number is " + a.at("phone") + " .\n";
        break;
      case 2:
        doc = "User: do you know " + rec.name + " ?\nSystem: yes , " + rec.name + " is a " + a.at("pricerange") + " " +
              kind + " in the " + a.at("area") + " .\nUser: what is the postcode ?\nSystem: the postcode is " +
              a.at("postcode") + " .\n";
        break;
      default:
        doc = "User: i am visiting the " + a.at("area") + " of town .\nSystem: you could visit " + rec.name +
              " , a " + a.at("pricerange") + " " + kind + " . call " + a.at("phone") + " to find out more .\n";
        break;
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

void validate_corpus(const CorpusFile& corpus, const Database& db) {
  if (corpus.format_version != kCorpusFormatVersion) {
    throw ParseError("corpus", "unsupported format_version " + std::to_string(corpus.format_version));
  }
  for (const auto& dlg : corpus.dialogues) {
    const std::string where = "dialogue " + dlg.id;
    if (dlg.turns.empty()) throw ParseError(where, "has no turns");
    if (!db.has_domain(dlg.goal.domain)) throw ParseError(where, "goal domain '" + dlg.goal.domain + "' not in database");
    BeliefState goal_belief;
    for (const auto& [s, v] : dlg.goal.constraints) goal_belief.set(dlg.goal.domain, s, v);
    const QueryResult goal_matches = db.query(dlg.goal.domain, goal_belief);
    bool entity_ok = false;
    for (const auto& rec : db.records(dlg.goal.domain)) {
      if (rec.name != dlg.goal.entity) continue;
      entity_ok = true;
      for (const auto& [s, v] : dlg.goal.constraints) {
        auto it = rec.attributes.find(s);
        if (it == rec.attributes.end() || normalize_value(it->second) != normalize_value(v)) entity_ok = false;
      }
    }
    if (!entity_ok || goal_matches.total == 0) {
      throw ParseError(where, "goal entity '" + dlg.goal.entity + "' does not satisfy the goal constraints");
    }
    for (std::size_t t = 0; t < dlg.turns.size(); ++t) {
      const auto& turn = dlg.turns[t];
      const std::string turn_where = where + " turn " + std::to_string(t);
      if (turn.user_utterance.empty()) throw ParseError(turn_where, "empty user utterance");
      if (turn.system_response.empty()) throw ParseError(turn_where, "empty system response");
      const QueryResult q = lookup(db, turn.belief);
      if (q.total != turn.db_total || q.records != turn.db_results) {
        throw ParseError(turn_where, "database results disagree with a query of the turn's belief state");
      }
    }
  }
}

namespace {

ordered_json record_json(const EntityRecord& rec) {
  ordered_json j;
  j["domain"] = rec.domain;
  j["name"] = rec.name;
  j["attributes"] = rec.attributes;
  return j;
}

ordered_json dialogue_json(const Dialogue& dlg) {
  ordered_json j;
  j["id"] = dlg.id;
  ordered_json goal;
  goal["domain"] = dlg.goal.domain;
  goal["constraints"] = dlg.goal.constraints;
  goal["requested"] = dlg.goal.requested;
  goal["entity"] = dlg.goal.entity;
  j["goal"] = goal;
  ordered_json turns = ordered_json::array();
  for (const auto& t : dlg.turns) {
    ordered_json tj;
    tj["user"] = t.user_utterance;
    tj["belief"] = t.belief.domains;
    ordered_json dbj;
    dbj["total"] = t.db_total;
    ordered_json recs = ordered_json::array();
    for (const auto& r : t.db_results) recs.push_back(record_json(r));
    dbj["records"] = recs;
    tj["db"] = dbj;
    ordered_json acts = ordered_json::array();
    for (const auto& a : t.action.acts) acts.push_back({a.domain, to_string(a.type), a.slot, a.value});
    tj["action"] = acts;
    tj["system"] = t.system_response;
    turns.push_back(tj);
  }
  j["turns"] = turns;
  return j;
}

template <typename J>
const J& field(const J& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where, std::string("missing field '") + key + "'");
  return j.at(key);
}

std::string str_field(const nlohmann::json& j, const char* key, const std::string& where) {
  const auto& v = field(j, key, where);
  if (!v.is_string()) throw ParseError(where, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

SlotValues slot_map(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where, "expected an object of slot values");
  SlotValues out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw ParseError(where, "slot '" + k + "' must be a string");
    out[k] = v.get<std::string>();
  }
  return out;
}

Dialogue dialogue_from_json(const nlohmann::json& j, const std::string& where) {
  Dialogue dlg;
  dlg.id = str_field(j, "id", where);
  const auto& goal = field(j, "goal", where);
  dlg.goal.domain = str_field(goal, "domain", where + " goal");
  dlg.goal.constraints = slot_map(field(goal, "constraints", where + " goal"), where + " goal.constraints");
  const auto& req = field(goal, "requested", where + " goal");
  if (!req.is_array()) throw ParseError(where + " goal", "field 'requested' must be an array");
  for (const auto& r : req) {
    if (!r.is_string()) throw ParseError(where + " goal", "requested slots must be strings");
    dlg.goal.requested.push_back(r.get<std::string>());
  }
  dlg.goal.entity = str_field(goal, "entity", where + " goal");
  const auto& turns = field(j, "turns", where);
  if (!turns.is_array()) throw ParseError(where, "field 'turns' must be an array");
  for (std::size_t t = 0; t < turns.size(); ++t) {
    const std::string tw = where + " turn " + std::to_string(t);
    const auto& tj = turns[t];
    DialogueTurn turn;
    turn.user_utterance = str_field(tj, "user", tw);
    const auto& belief = field(tj, "belief", tw);
    if (!belief.is_object()) throw ParseError(tw, "field 'belief' must be an object");
    for (const auto& [domain, slots] : belief.items()) {
      for (const auto& [s, v] : slot_map(slots, tw + " belief")) turn.belief.set(domain, s, v);
    }
    const auto& db = field(tj, "db", tw);
    const auto& total = field(db, "total", tw + " db");
    if (!total.is_number_unsigned()) throw ParseError(tw + " db", "field 'total' must be a non-negative integer");
    turn.db_total = total.get<std::size_t>();
    const auto& recs = field(db, "records", tw + " db");
    if (!recs.is_array()) throw ParseError(tw + " db", "field 'records' must be an array");
    for (const auto& r : recs) {
      EntityRecord rec;
      rec.domain = str_field(r, "domain", tw + " db record");
      rec.name = str_field(r, "name", tw + " db record");
      rec.attributes = slot_map(field(r, "attributes", tw + " db record"), tw + " db record");
      turn.db_results.push_back(std::move(rec));
    }
    const auto& acts = field(tj, "action", tw);
    if (!acts.is_array()) throw ParseError(tw, "field 'action' must be an array");
    for (const auto& a : acts) {
      if (!a.is_array() || a.size() != 4) throw ParseError(tw, "each act must be [domain, act, slot, value]");
      for (const auto& part : a) {
        if (!part.is_string()) throw ParseError(tw, "act fields must be strings");
      }
      const auto type = act_type_from_string(a[1].get<std::string>());
      if (!type) throw ParseError(tw, "unknown act type '" + a[1].get<std::string>() + "'");
      turn.action.acts.push_back({a[0].get<std::string>(), *type, a[2].get<std::string>(), a[3].get<std::string>()});
    }
    turn.system_response = str_field(tj, "system", tw);
    dlg.turns.push_back(std::move(turn));
  }
  return dlg;
}

}  // namespace

std::string serialize_corpus(const CorpusFile& corpus) {
  ordered_json header;
  header["kind"] = "acn-dialogues";
  header["format_version"] = corpus.format_version;
  header["pool"] = corpus.pool;
  header["dialogues"] = corpus.dialogues.size();
  std::string out = header.dump() + "\n";
  for (const auto& dlg : corpus.dialogues) out += dialogue_json(dlg).dump() + "\n";
  return out;
}

CorpusFile parse_corpus(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto parse_line = [&](const std::string& where) {
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, std::string("invalid JSON: ") + e.what());
    }
  };
  if (!std::getline(in, line)) throw ParseError(source + ":1", "empty corpus file");
  ++line_no;
  const std::string hw = source + ":1";
  const auto header = parse_line(hw);
  if (str_field(header, "kind", hw) != "acn-dialogues") throw ParseError(hw, "not an acn-dialogues corpus");
  const auto& version = field(header, "format_version", hw);
  if (!version.is_number_integer()) throw ParseError(hw, "format_version must be an integer");
  CorpusFile corpus;
  corpus.format_version = version.get<int>();
  if (corpus.format_version != kCorpusFormatVersion) {
    throw ParseError(hw, "unsupported format_version " + std::to_string(corpus.format_version));
  }
  corpus.pool = str_field(header, "pool", hw);
  const auto& count = field(header, "dialogues", hw);
  if (!count.is_number_unsigned()) throw ParseError(hw, "dialogues must be a non-negative integer");
  const std::size_t expected = count.get<std::size_t>();
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.empty()) throw ParseError(where, "empty line");
    corpus.dialogues.push_back(dialogue_from_json(parse_line(where), where));
  }
  if (corpus.dialogues.size() != expected) {
    throw ParseError(source, "header announces " + std::to_string(expected) + " dialogues but file holds " +
                                 std::to_string(corpus.dialogues.size()) + " (truncated?)");
  }
  return corpus;
}

void save_corpus(const CorpusFile& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, "cannot open for writing");
  out << serialize_corpus(corpus);
}

CorpusFile load_corpus(const std::string& path, const Database* db) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open corpus file");
  std::ostringstream ss;
  ss << in.rdbuf();
  CorpusFile corpus = parse_corpus(ss.str(), path);
  if (db) validate_corpus(corpus, *db);
  return corpus;
}

std::pair<CorpusFile, CorpusFile> split_corpus(const CorpusFile& corpus, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio >= 0.0 && train_ratio <= 1.0)) throw ConfigError("split: train ratio must lie in [0,1]");
  std::vector<std::size_t> order(corpus.dialogues.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto n_train = static_cast<std::size_t>(train_ratio * static_cast<double>(order.size()) + 0.5);
  CorpusFile train{corpus.format_version, corpus.pool, {}};
  CorpusFile dev{corpus.format_version, corpus.pool, {}};
  if (n_train < order.size()) {
    Rng rng(seed);
    rng.shuffle(order);
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : dev).dialogues.push_back(corpus.dialogues[order[i]]);
  }
  return {std::move(train), std::move(dev)};
}

std::vector<std::string> entity_lexicon(const Database& db) {
  std::set<std::string> lex;
  for (const auto& domain : db.domains()) {
    for (const auto& rec : db.records(domain)) {
      lex.insert(rec.name);
      for (const char* slot : {"phone", "postcode"}) {
        if (auto it = rec.attributes.find(slot); it != rec.attributes.end()) lex.insert(it->second);
      }
    }
  }
  return {lex.begin(), lex.end()};
}

std::size_t check_multiwoz_structure(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("multiwoz", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("multiwoz", "top level must be an object of dialogues");
  for (const auto& [id, dlg] : j.items()) {
    if (!dlg.is_object() || !dlg.contains("log") || !dlg["log"].is_array()) {
      throw ParseError("multiwoz " + id, "dialogue needs a 'log' array");
    }
    for (std::size_t t = 0; t < dlg["log"].size(); ++t) {
      const auto& entry = dlg["log"][t];
      if (!entry.is_object() || !entry.contains("text") || !entry["text"].is_string() || !entry.contains("metadata")) {
        throw ParseError("multiwoz " + id + " log " + std::to_string(t), "entry needs 'text' and 'metadata'");
      }
    }
  }
  return j.size();
}

}  // namespace acn
