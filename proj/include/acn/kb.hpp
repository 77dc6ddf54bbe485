#pragma once

#include <map>
#include <string>
#include <vector>

#include "acn/dialogue.hpp"

namespace acn {

inline constexpr std::size_t kMaxDbResults = 3;

struct QueryResult {
  std::vector<EntityRecord> records;  // first kMaxDbResults matches in file order
  std::size_t total = 0;
};

class Database {
 public:
  // Throws ParseError on a duplicate (domain, name) or a record whose name
  // attribute disagrees with its name.
  void add(EntityRecord record);

  bool has_domain(const std::string& domain) const { return by_domain_.count(domain) != 0; }
  std::vector<std::string> domains() const;
  const std::vector<EntityRecord>& records(const std::string& domain) const;
  std::size_t size() const;

  // Records whose attributes equal every constraint of belief[domain]
  // (normalized comparison; "dontcare" matches anything). Unknown domain
  // throws ConfigError.
  QueryResult query(const std::string& domain, const BeliefState& belief) const;

  // Line-delimited JSON, one record per line:
  //   {"domain": "...", "name": "...", "attributes": {"name": "...", ...}}
  static Database load(const std::string& path);
  static Database parse(const std::string& text, const std::string& source = "<db>");
  std::string serialize() const;
  void save(const std::string& path) const;

  bool operator==(const Database&) const = default;

 private:
  std::map<std::string, std::vector<EntityRecord>> by_domain_;
  std::vector<std::string> domain_order_;
};

// Domain the pipeline queries for a belief state: its first domain in
// canonical order, or empty when the belief is empty.
std::string active_domain(const BeliefState& belief);

// Runs the query for active_domain(belief); empty result for an empty belief
// or a domain the database does not hold.
QueryResult lookup(const Database& db, const BeliefState& belief);

// "N matches. name = x, area = y; name = z, ..." or "0 matches."
// Attributes follow "name" in lexicographic slot order.
std::string format_results(const std::vector<EntityRecord>& records, std::size_t total);

}  // namespace acn
