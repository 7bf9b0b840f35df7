#include "pfsr/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "pfsr/errors.hpp"
#include "pfsr/util/binary_io.hpp"

namespace pfsr::data {
namespace {

constexpr std::int32_t kCacheMagic = 0x52534650;
constexpr std::int32_t kCacheVersion = 1;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace

std::size_t InteractionDataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

LoadResult parse_interactions(std::istream& in) {
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3) {
      result.warnings.push_back(
          {line_no, "expected 3 tab-separated fields, got " + std::to_string(fields.size())});
      continue;
    }
    if (fields[0].empty() || fields[1].empty()) {
      result.warnings.push_back({line_no, "empty user or item field"});
      continue;
    }
    RawEvent ev{fields[0], fields[1], std::nullopt, line_no};
    if (!fields[2].empty()) {
      std::int64_t ts = 0;
      const auto& f = fields[2];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), ts);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        result.warnings.push_back({line_no, "timestamp '" + f + "' is not an integer"});
        continue;
      }
      ev.timestamp = ts;
    }
    result.events.push_back(std::move(ev));
  }
  return result;
}

LoadResult load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open interactions file " + path.string());
  auto result = parse_interactions(in);
  if (result.events.empty()) {
    throw EmptyDatasetError("no valid interactions in " + path.string());
  }
  return result;
}

std::vector<RawEvent> k_core_filter(std::vector<RawEvent> events, std::size_t k) {
  if (k < 1) throw ContractError("k_core_filter: k must be >= 1");
  while (true) {
    std::unordered_map<std::string, std::size_t> user_count;
    std::unordered_map<std::string, std::size_t> item_count;
    for (const auto& e : events) {
      ++user_count[e.user];
      ++item_count[e.item];
    }
    const auto before = events.size();
    std::erase_if(events, [&](const RawEvent& e) {
      return user_count[e.user] < k || item_count[e.item] < k;
    });
    if (events.size() == before) break;
  }
  if (events.empty()) {
    throw EmptyDatasetError("no interactions survive " + std::to_string(k) + "-core filtering");
  }
  return events;
}

InteractionDataset build_dataset(const std::vector<RawEvent>& events, std::size_t k_core) {
  if (events.empty()) throw EmptyDatasetError("build_dataset: no events");
  InteractionDataset ds;
  ds.k_core = k_core;
  std::unordered_map<std::string, UserId> user_ids;
  std::unordered_map<std::string, ItemId> item_ids;
  std::vector<std::vector<const RawEvent*>> per_user;
  for (const auto& e : events) {
    auto [uit, new_user] = user_ids.try_emplace(e.user, static_cast<UserId>(ds.user_names.size() + 1));
    if (new_user) {
      ds.user_names.push_back(e.user);
      per_user.emplace_back();
    }
    auto [iit, new_item] = item_ids.try_emplace(e.item, static_cast<ItemId>(ds.item_names.size() + 1));
    if (new_item) ds.item_names.push_back(e.item);
    per_user[static_cast<std::size_t>(uit->second - 1)].push_back(&e);
  }
  ds.sequences.reserve(per_user.size());
  for (auto& evs : per_user) {
    const bool all_timed =
        std::all_of(evs.begin(), evs.end(), [](const RawEvent* e) { return e->timestamp.has_value(); });
    if (all_timed) {
      std::stable_sort(evs.begin(), evs.end(), [](const RawEvent* a, const RawEvent* b) {
        return *a->timestamp < *b->timestamp;
      });
    }
    ItemSequence seq;
    seq.reserve(evs.size());
    for (const RawEvent* e : evs) seq.push_back(item_ids.at(e->item));
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

SplitDataset leave_one_out_split(const InteractionDataset& dataset) {
  SplitDataset split;
  split.num_items = dataset.num_items();
  split.users.reserve(dataset.num_users());
  for (std::size_t u = 0; u < dataset.num_users(); ++u) {
    const auto& seq = dataset.sequences[u];
    if (seq.size() < 3) {
      throw ContractError("leave_one_out_split: user " + std::to_string(u + 1) + " has only " +
                          std::to_string(seq.size()) + " interactions");
    }
    UserSplit s;
    s.train.assign(seq.begin(), seq.end() - 2);
    s.valid = seq[seq.size() - 2];
    s.test = seq.back();
    split.users.push_back(std::move(s));
  }
  return split;
}

PartitionStrategy parse_partition_strategy(const std::string& name) {
  if (name == "uniform") return PartitionStrategy::kUniform;
  if (name == "natural") return PartitionStrategy::kNatural;
  throw ConfigError("unknown partition strategy '" + name + "' (expected uniform|natural)");
}

std::string to_string(PartitionStrategy strategy) {
  return strategy == PartitionStrategy::kUniform ? "uniform" : "natural";
}

std::vector<std::vector<UserId>> partition_clients(const InteractionDataset& dataset,
                                                   std::size_t num_clients,
                                                   PartitionStrategy strategy,
                                                   std::uint64_t seed) {
  const std::size_t n_users = dataset.num_users();
  if (num_clients < 1) throw ContractError("partition_clients: N must be >= 1");
  if (num_clients > n_users) {
    throw ContractError("partition_clients: N = " + std::to_string(num_clients) +
                        " exceeds |U| = " + std::to_string(n_users));
  }
  std::vector<std::vector<UserId>> groups(num_clients);
  if (strategy == PartitionStrategy::kUniform) {
    std::vector<UserId> users(n_users);
    std::iota(users.begin(), users.end(), UserId{1});
    std::mt19937_64 rng(seed);
    std::shuffle(users.begin(), users.end(), rng);
    for (std::size_t i = 0; i < users.size(); ++i) groups[i % num_clients].push_back(users[i]);
    for (auto& g : groups) std::sort(g.begin(), g.end());
  } else {
    if (dataset.user_group.size() != n_users) {
      throw ContractError("partition_clients: natural strategy needs per-user group labels");
    }
    for (std::size_t u = 0; u < n_users; ++u) {
      const auto g = static_cast<std::size_t>(dataset.user_group[u]) % num_clients;
      groups[g].push_back(static_cast<UserId>(u + 1));
    }
  }
  return groups;
}

void save_cache(const InteractionDataset& dataset, std::size_t max_seq_len,
                const std::filesystem::path& path) {
  util::ByteWriter w;
  const bool has_groups = dataset.user_group.size() == dataset.num_users();
  w.i32(kCacheMagic);
  w.i32(kCacheVersion);
  w.i32(static_cast<std::int32_t>(dataset.num_users()));
  w.i32(static_cast<std::int32_t>(dataset.num_items()));
  w.i32(static_cast<std::int32_t>(dataset.num_interactions()));
  w.i32(static_cast<std::int32_t>(dataset.k_core));
  w.i32(static_cast<std::int32_t>(max_seq_len));
  w.i32(has_groups ? 1 : 0);
  for (std::size_t u = 0; u < dataset.num_users(); ++u) {
    w.i32(static_cast<std::int32_t>(u + 1));
    if (has_groups) w.i32(dataset.user_group[u]);
    const auto& seq = dataset.sequences[u];
    w.i32(static_cast<std::int32_t>(seq.size()));
    for (ItemId v : seq) w.i32(static_cast<std::int32_t>(v));
  }
  util::write_file(path.string(), w.buffer());
}

CachedDataset load_cache(const std::filesystem::path& path) {
  const auto bytes = util::read_file(path.string());
  util::ByteReader r(bytes);
  if (r.i32() != kCacheMagic) throw IoError("dataset cache: bad magic in " + path.string());
  if (r.i32() != kCacheVersion) throw IoError("dataset cache: unsupported version");
  const auto n_users = r.i32();
  const auto n_items = r.i32();
  const auto n_inter = r.i32();
  CachedDataset out;
  out.dataset.k_core = static_cast<std::size_t>(r.i32());
  out.max_seq_len = static_cast<std::size_t>(r.i32());
  const bool has_groups = r.i32() != 0;
  if (n_users < 0 || n_items < 0 || n_inter < 0) throw IoError("dataset cache: negative count");
  for (std::int32_t v = 1; v <= n_items; ++v) out.dataset.item_names.push_back(std::to_string(v));
  std::size_t seen = 0;
  for (std::int32_t u = 1; u <= n_users; ++u) {
    if (r.i32() != u) throw IoError("dataset cache: user ids out of order");
    out.dataset.user_names.push_back(std::to_string(u));
    if (has_groups) out.dataset.user_group.push_back(r.i32());
    const auto len = r.i32();
    if (len < 0) throw IoError("dataset cache: negative sequence length");
    ItemSequence seq(static_cast<std::size_t>(len));
    for (auto& v : seq) {
      v = r.i32();
      if (v < 1 || v > n_items) throw IoError("dataset cache: item id out of range");
    }
    seen += seq.size();
    out.dataset.sequences.push_back(std::move(seq));
  }
  if (!r.at_end() || seen != static_cast<std::size_t>(n_inter)) {
    throw IoError("dataset cache: payload does not match header");
  }
  return out;
}

}  // namespace pfsr::data
