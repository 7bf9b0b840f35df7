#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "pfsr/data/dataset.hpp"
#include "pfsr/data/synthetic.hpp"
#include "pfsr/errors.hpp"

using namespace pfsr;
using data::RawEvent;

namespace {

data::LoadResult parse(const std::string& text) {
  std::istringstream in(text);
  return data::parse_interactions(in);
}

// Removes under-populated users and items one pass at a time until a pass
// changes nothing.
std::vector<std::pair<std::string, std::string>> naive_core(
    std::vector<std::pair<std::string, std::string>> ev, std::size_t k) {
  for (bool changed = true; changed;) {
    changed = false;
    std::map<std::string, std::size_t> u, i;
    for (const auto& [a, b] : ev) {
      ++u[a];
      ++i[b];
    }
    std::vector<std::pair<std::string, std::string>> keep;
    for (const auto& e : ev) {
      if (u[e.first] >= k && i[e.second] >= k) keep.push_back(e);
    }
    changed = keep.size() != ev.size();
    ev = std::move(keep);
  }
  return ev;
}

std::vector<RawEvent> events_of(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::vector<RawEvent> out;
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    out.push_back({pairs[n].first, pairs[n].second, static_cast<std::int64_t>(n), n + 1});
  }
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pfsr_unit_" + name);
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("parsing") {
    auto r = parse("u1\ti1\t5\nu1\ti2\t7\nu2\ti1\t\n");
    CHECK(r.events.size() == 3);
    CHECK(r.warnings.empty());
    CHECK_FALSE(r.events[2].timestamp.has_value());

    r = parse("u1\ti1\t5\nu1\ti2\nu2\ti1\tx\n");
    CHECK(r.events.size() == 1);
    REQUIRE(r.warnings.size() == 2);
    CHECK(r.warnings[0].line == 2);
    CHECK(r.warnings[1].line == 3);

    CHECK_THROWS_AS(data::load_interactions(temp_file("missing.tsv")), IoError);
    const auto empty = temp_file("empty.tsv");
    std::ofstream(empty) << "bad line\n";
    CHECK_THROWS_AS(data::load_interactions(empty), EmptyDatasetError);
    std::filesystem::remove(empty);
  }

  TEST_CASE("sequences follow timestamps") {
    std::mt19937_64 rng(51);
    std::vector<RawEvent> ev;
    for (int n = 0; n < 60; ++n) {
      ev.push_back({"u" + std::to_string(n % 4), "i" + std::to_string(n % 9),
                    static_cast<std::int64_t>(rng() % 20), static_cast<std::size_t>(n + 1)});
    }
    const auto ds = data::build_dataset(ev);
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
      std::vector<const RawEvent*> mine;
      for (const auto& e : ev) {
        if (e.user == ds.user_names[u]) mine.push_back(&e);
      }
      std::stable_sort(mine.begin(), mine.end(),
                       [](auto* a, auto* b) { return *a->timestamp < *b->timestamp; });
      REQUIRE(mine.size() == ds.sequences[u].size());
      for (std::size_t t = 0; t < mine.size(); ++t) {
        CHECK(ds.item_names[ds.sequences[u][t] - 1] == mine[t]->item);
      }
    }
  }

  TEST_CASE("k-core filtering") {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (int u = 0; u < 6; ++u) {
      for (int i = 0; i < 5; ++i) pairs.emplace_back("u" + std::to_string(u), "i" + std::to_string(i));
    }
    auto kept = data::k_core_filter(events_of(pairs), 5);
    CHECK(kept.size() == pairs.size());

    // A user with 4 events on popular items goes; the fixpoint is re-checked.
    auto plus = pairs;
    for (int i = 0; i < 4; ++i) plus.emplace_back("weak", "i" + std::to_string(i));
    kept = data::k_core_filter(events_of(plus), 5);
    CHECK(kept.size() == pairs.size());

    std::mt19937_64 rng(53);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::pair<std::string, std::string>> rnd;
      for (int n = 0; n < 300; ++n) {
        rnd.emplace_back("u" + std::to_string(rng() % 30), "i" + std::to_string(rng() % 25));
      }
      const auto oracle = naive_core(rnd, 3);
      if (oracle.empty()) {
        CHECK_THROWS_AS(data::k_core_filter(events_of(rnd), 3), EmptyDatasetError);
        continue;
      }
      const auto got = data::k_core_filter(events_of(rnd), 3);
      REQUIRE(got.size() == oracle.size());
      for (std::size_t n = 0; n < got.size(); ++n) {
        CHECK(got[n].user == oracle[n].first);
        CHECK(got[n].item == oracle[n].second);
      }
      CHECK(data::k_core_filter(got, 3).size() == got.size());
    }

    const std::vector<std::pair<std::string, std::string>> sparse = {{"a", "x"}, {"b", "y"}};
    CHECK_THROWS_AS(data::k_core_filter(events_of(sparse), 5), EmptyDatasetError);
  }

  TEST_CASE("reindexing is lossless") {
    const auto r = parse("alice\tbook\t3\nbob\tpen\t1\nalice\tpen\t2\n");
    const auto ds = data::build_dataset(r.events);
    std::multiset<std::pair<std::string, std::string>> back, orig;
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
      for (ItemId v : ds.sequences[u]) back.emplace(ds.user_names[u], ds.item_names[v - 1]);
    }
    for (const auto& e : r.events) orig.emplace(e.user, e.item);
    CHECK(back == orig);
    CHECK(ds.user_names[0] == "alice");
    CHECK(ds.sequences[0] == ItemSequence{2, 1});  // pen (t=2) before book (t=3)
  }

  TEST_CASE("leave-one-out split") {
    data::InteractionDataset ds;
    ds.sequences = {{1, 2, 3, 4, 5}, {3, 1, 2}};
    ds.item_names = {"a", "b", "c", "d", "e"};
    ds.user_names = {"x", "y"};
    const auto split = data::leave_one_out_split(ds);
    CHECK(split.users[0].train == ItemSequence{1, 2, 3});
    CHECK(split.users[0].valid == 4);
    CHECK(split.users[0].test == 5);
    CHECK(split.users[1].train == ItemSequence{3});
    ds.sequences.push_back({1, 2});
    ds.user_names.push_back("z");
    CHECK_THROWS_AS(data::leave_one_out_split(ds), ContractError);
  }

  TEST_CASE("synthetic corpus") {
    const data::SyntheticConfig cfg;
    const auto a = data::make_synthetic(cfg);
    const auto b = data::make_synthetic(cfg);
    CHECK(a.sequences == b.sequences);
    CHECK(a.user_group == b.user_group);
    CHECK(a.num_users() == 200);
    CHECK(a.num_items() <= 300);

    // Re-filtering is the identity.
    std::vector<RawEvent> ev;
    for (std::size_t u = 0; u < a.num_users(); ++u) {
      for (ItemId v : a.sequences[u]) ev.push_back({std::to_string(u), std::to_string(v), {}, 0});
    }
    CHECK(data::k_core_filter(ev, 5).size() == ev.size());

    // Every train prefix is non-empty.
    for (const auto& s : data::leave_one_out_split(a).users) CHECK_FALSE(s.train.empty());
  }

  TEST_CASE("synthetic devices have different transition statistics") {
    data::SyntheticConfig cfg;
    const auto ds = data::make_synthetic(cfg);
    using Counts = std::map<ItemId, std::map<ItemId, double>>;
    std::vector<Counts> per(cfg.num_clients);
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
      const auto& s = ds.sequences[u];
      for (std::size_t t = 1; t < s.size(); ++t) per[ds.user_group[u]][s[t - 1]][s[t]] += 1.0;
    }
    for (std::size_t x = 0; x < per.size(); ++x) {
      for (std::size_t y = x + 1; y < per.size(); ++y) {
        double tv_sum = 0.0;
        std::size_t sources = 0;
        for (const auto& [from, row_x] : per[x]) {
          const auto it = per[y].find(from);
          if (it == per[y].end()) continue;
          double nx = 0.0, ny = 0.0;
          for (const auto& kv : row_x) nx += kv.second;
          for (const auto& kv : it->second) ny += kv.second;
          std::set<ItemId> to;
          for (const auto& kv : row_x) to.insert(kv.first);
          for (const auto& kv : it->second) to.insert(kv.first);
          double tv = 0.0;
          for (ItemId v : to) {
            const double px = row_x.count(v) ? row_x.at(v) / nx : 0.0;
            const double py = it->second.count(v) ? it->second.at(v) / ny : 0.0;
            tv += std::abs(px - py);
          }
          tv_sum += 0.5 * tv;
          ++sources;
        }
        REQUIRE(sources > 0);
        CHECK(tv_sum / static_cast<double>(sources) > 0.1);
      }
    }
  }

  TEST_CASE("partitioning") {
    const auto ds = data::make_synthetic({});
    auto sizes = [](const std::vector<std::vector<UserId>>& p) {
      std::multiset<std::size_t> s;
      for (const auto& g : p) s.insert(g.size());
      return s;
    };
    data::InteractionDataset ten;
    ten.sequences.assign(10, {1, 2, 3});
    ten.user_names.assign(10, "u");
    ten.item_names = {"a", "b", "c"};
    CHECK(sizes(data::partition_clients(ten, 3, data::PartitionStrategy::kUniform, 1)) ==
          std::multiset<std::size_t>{3, 3, 4});
    CHECK(data::partition_clients(ten, 1, data::PartitionStrategy::kUniform, 1)[0].size() == 10);
    CHECK_THROWS_AS(data::partition_clients(ten, 11, data::PartitionStrategy::kUniform, 1),
                    ContractError);
    CHECK_THROWS_AS(data::partition_clients(ten, 2, data::PartitionStrategy::kNatural, 1),
                    ContractError);

    for (auto strategy : {data::PartitionStrategy::kUniform, data::PartitionStrategy::kNatural}) {
      for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto parts = data::partition_clients(ds, 8, strategy, seed);
        CHECK(parts == data::partition_clients(ds, 8, strategy, seed));
        std::set<UserId> seen;
        std::size_t total = 0;
        for (const auto& g : parts) {
          total += g.size();
          seen.insert(g.begin(), g.end());
        }
        CHECK(total == ds.num_users());
        CHECK(seen.size() == ds.num_users());
        CHECK(*seen.begin() == 1);
        CHECK(*seen.rbegin() == static_cast<UserId>(ds.num_users()));
      }
    }
    const auto natural = data::partition_clients(ds, 8, data::PartitionStrategy::kNatural, 1);
    for (std::size_t c = 0; c < natural.size(); ++c) {
      for (UserId u : natural[c]) CHECK(static_cast<std::size_t>(ds.user_group[u - 1]) == c);
    }
    CHECK(data::to_string(data::parse_partition_strategy("natural")) == "natural");
    CHECK_THROWS_AS(data::parse_partition_strategy("random"), ConfigError);
  }

  TEST_CASE("cache round trip") {
    const auto ds = data::make_synthetic({});
    const auto a = temp_file("cache_a.bin"), b = temp_file("cache_b.bin");
    data::save_cache(ds, 50, a);
    data::save_cache(ds, 50, b);
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(a) == slurp(b));
    const auto back = data::load_cache(a);
    CHECK(back.max_seq_len == 50);
    CHECK(back.dataset.sequences == ds.sequences);
    CHECK(back.dataset.user_group == ds.user_group);
    CHECK(back.dataset.num_items() == ds.num_items());

    std::string bytes = slurp(a);
    bytes[0] ^= 0x1;
    std::ofstream(b, std::ios::binary) << bytes;
    CHECK_THROWS_AS(data::load_cache(b), IoError);
    std::filesystem::remove(a);
    std::filesystem::remove(b);
  }
}
