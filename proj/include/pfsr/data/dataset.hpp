#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pfsr/types.hpp"

namespace pfsr::data {

struct RawEvent {
  std::string user;
  std::string item;
  std::optional<std::int64_t> timestamp;
  std::size_t line = 0;  // 1-based source line
};

struct ParseWarning {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<RawEvent> events;
  std::vector<ParseWarning> warnings;
};

// Reads `user<TAB>item<TAB>timestamp` lines. An empty timestamp field means
// "use file order". Malformed lines are skipped and reported. Throws IoError
// if the file cannot be read and EmptyDatasetError if no line is valid.
LoadResult load_interactions(const std::filesystem::path& path);
LoadResult parse_interactions(std::istream& in);

// Repeatedly drops events whose user or item has fewer than k events until
// nothing changes. Relative event order is preserved. Throws
// EmptyDatasetError when nothing survives.
std::vector<RawEvent> k_core_filter(std::vector<RawEvent> events, std::size_t k);

// Users 1..|U| and items 1..|V| (0 is padding), each user's items in time
// order.
struct InteractionDataset {
  std::vector<ItemSequence> sequences;  // sequences[u - 1] is user u
  std::vector<std::string> user_names;  // user_names[u - 1]
  std::vector<std::string> item_names;  // item_names[v - 1]
  // Optional natural device of each user (synthetic corpora); empty otherwise.
  std::vector<std::int32_t> user_group;
  std::size_t k_core = 0;

  std::size_t num_users() const { return sequences.size(); }
  std::size_t num_items() const { return item_names.size(); }
  std::size_t num_interactions() const;
};

// Reindexes users and items by first appearance and orders every user's
// events by timestamp (stable, so ties keep file order). A user with any
// event lacking a timestamp keeps pure file order.
InteractionDataset build_dataset(const std::vector<RawEvent>& events, std::size_t k_core = 0);

struct UserSplit {
  ItemSequence train;
  ItemId valid = 0;
  ItemId test = 0;
};

struct SplitDataset {
  std::vector<UserSplit> users;  // users[u - 1]
  std::size_t num_items = 0;
};

// Last item -> test, second-to-last -> valid, rest -> train. Throws
// ContractError for a sequence shorter than 3.
SplitDataset leave_one_out_split(const InteractionDataset& dataset);

enum class PartitionStrategy {
  kUniform,  // shuffle, then deal round-robin
  kNatural,  // user_group modulo N
};

PartitionStrategy parse_partition_strategy(const std::string& name);
std::string to_string(PartitionStrategy strategy);

// Disjoint cover of the users by N devices. Throws ContractError if N is 0
// or exceeds |U|, or if kNatural is requested without group labels.
std::vector<std::vector<UserId>> partition_clients(const InteractionDataset& dataset,
                                                   std::size_t num_clients,
                                                   PartitionStrategy strategy,
                                                   std::uint64_t seed);

// Processed-dataset cache. All fields are little-endian int32:
//   magic 0x52534650 ("PFSR"), version, |U|, |V|, interactions, k,
//   max_seq_len, has_groups, then per user: user id, [group], length, items.
void save_cache(const InteractionDataset& dataset, std::size_t max_seq_len,
                const std::filesystem::path& path);
struct CachedDataset {
  InteractionDataset dataset;
  std::size_t max_seq_len = 0;
};
CachedDataset load_cache(const std::filesystem::path& path);

}  // namespace pfsr::data
