#include "acn/kb.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "acn/errors.hpp"

namespace acn {

void Database::add(EntityRecord record) {
  if (record.domain.empty()) throw ParseError("database", "record without a domain");
  if (record.name.empty()) throw ParseError("database", "record without a name in domain " + record.domain);
  auto it = record.attributes.find("name");
  if (it == record.attributes.end()) {
    record.attributes["name"] = record.name;
  } else if (it->second != record.name) {
    throw ParseError("database", "record '" + record.name + "' has name attribute '" + it->second + "'");
  }
  auto& list = by_domain_[record.domain];
  if (list.empty()) domain_order_.push_back(record.domain);
  for (const auto& existing : list) {
    if (existing.name == record.name) {
      throw ParseError("database", "duplicate record (" + record.domain + ", " + record.name + ")");
    }
  }
  list.push_back(std::move(record));
}

std::vector<std::string> Database::domains() const { return domain_order_; }

const std::vector<EntityRecord>& Database::records(const std::string& domain) const {
  auto it = by_domain_.find(domain);
  if (it == by_domain_.end()) throw ConfigError("unknown database domain '" + domain + "'");
  return it->second;
}

std::size_t Database::size() const {
  std::size_t n = 0;
  for (const auto& [d, list] : by_domain_) n += list.size();
  return n;
}

QueryResult Database::query(const std::string& domain, const BeliefState& belief) const {
  const auto& list = records(domain);
  std::vector<std::pair<std::string, std::string>> constraints;
  if (auto it = belief.domains.find(domain); it != belief.domains.end()) {
    for (const auto& [slot, value] : it->second) {
      std::string v = normalize_value(value);
      if (v == "dontcare") continue;
      constraints.emplace_back(normalize_value(slot), std::move(v));
    }
  }
  QueryResult result;
  for (const auto& record : list) {
    bool match = true;
    for (const auto& [slot, value] : constraints) {
      bool found = false;
      for (const auto& [k, v] : record.attributes) {
        if (normalize_value(k) == slot) {
          found = normalize_value(v) == value;
          break;
        }
      }
      if (!found) {
        match = false;
        break;
      }
    }
    if (!match) continue;
    ++result.total;
    if (result.records.size() < kMaxDbResults) result.records.push_back(record);
  }
  return result;
}

Database Database::parse(const std::string& text, const std::string& source) {
  Database db;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("domain") || !j["domain"].is_string() || !j.contains("name") ||
        !j["name"].is_string() || !j.contains("attributes") || !j["attributes"].is_object()) {
      throw ParseError(where, "expected {\"domain\", \"name\", \"attributes\"}");
    }
    EntityRecord rec;
    rec.domain = j["domain"].get<std::string>();
    rec.name = j["name"].get<std::string>();
    for (const auto& [k, v] : j["attributes"].items()) {
      if (!v.is_string()) throw ParseError(where, "attribute '" + k + "' must be a string");
      rec.attributes[k] = v.get<std::string>();
    }
    try {
      db.add(std::move(rec));
    } catch (const ParseError& e) {
      throw ParseError(where, e.what());
    }
  }
  return db;
}

Database Database::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open database file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string Database::serialize() const {
  std::string out;
  for (const auto& domain : domain_order_) {
    for (const auto& rec : by_domain_.at(domain)) {
      nlohmann::ordered_json j;
      j["domain"] = rec.domain;
      j["name"] = rec.name;
      j["attributes"] = rec.attributes;
      out += j.dump() + "\n";
    }
  }
  return out;
}

void Database::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, "cannot open for writing");
  out << serialize();
}

std::string active_domain(const BeliefState& belief) {
  for (const auto& [domain, slots] : belief.domains) {
    if (!slots.empty()) return domain;
  }
  return {};
}

QueryResult lookup(const Database& db, const BeliefState& belief) {
  const std::string domain = active_domain(belief);
  if (domain.empty() || !db.has_domain(domain)) return {};
  return db.query(domain, belief);
}

std::string format_results(const std::vector<EntityRecord>& records, std::size_t total) {
  std::string out = std::to_string(total) + " matches.";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out += i == 0 ? " " : "; ";
    const auto& rec = records[i];
    out += "name = " + rec.name;
    for (const auto& [slot, value] : rec.attributes) {
      if (slot == "name") continue;
      out += ", " + slot + " = " + value;
    }
  }
  return out;
}

}  // namespace acn
