#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "ntt/taskgen.hpp"

using namespace ntt;

namespace {

TaskConfig small_task(std::size_t n = 50) {
  TaskConfig cfg;
  cfg.n_examples = n;
  cfg.d_v = 6;
  cfg.d_c = 4;
  return cfg;
}

std::string to_jsonl(const Dataset& ds) {
  std::ostringstream out;
  write_jsonl(out, ds);
  return out.str();
}

}  // namespace

TEST(TaskGen, SameSeedGivesByteIdenticalJsonl) {
  const TaskConfig cfg = small_task();
  EXPECT_EQ(to_jsonl(generate(42, cfg).dataset), to_jsonl(generate(42, cfg).dataset));
  EXPECT_NE(to_jsonl(generate(42, cfg).dataset), to_jsonl(generate(43, cfg).dataset));
}

TEST(TaskGen, ZeroNoiseRegionsEqualPrototypes) {
  TaskConfig cfg = small_task(40);
  cfg.noise_scale = 0.0;
  const GeneratedTask task = generate(5, cfg);
  for (const Example& ex : task.dataset.examples) {
    std::set<int> salient;
    for (const Token& t : ex.tokens) {
      if (t.is_slot()) salient.insert(t.region);
    }
    for (std::size_t i = 0; i < ex.regions.count(); ++i) {
      const bool is_salient = salient.count(static_cast<int>(i)) > 0;
      const auto fv = task.bank.feature_prototype(ex.regions.labels[i], is_salient);
      const auto fc = task.bank.conv_prototype(ex.regions.labels[i], is_salient);
      const auto row_v = ex.regions.V.row(i);
      const auto row_c = ex.regions.Vbar.row(i);
      EXPECT_EQ(std::vector<double>(row_v.begin(), row_v.end()), fv);
      EXPECT_EQ(std::vector<double>(row_c.begin(), row_c.end()), fc);
    }
  }
}

TEST(TaskGen, TwoCategoriesAreBalanced) {
  TaskConfig cfg = small_task(2000);
  cfg.categories = 2;
  const GeneratedTask task = generate(9, cfg);
  std::map<int, std::size_t> counts;
  std::size_t total = 0;
  for (const Example& ex : task.dataset.examples) {
    for (const RegionLabel& l : ex.regions.labels) {
      ++counts[l.category];
      ++total;
    }
  }
  ASSERT_EQ(counts.size(), 2u);
  for (const auto& [cat, n] : counts) {
    EXPECT_NEAR(static_cast<double>(n) / static_cast<double>(total), 0.5, 0.1) << "category " << cat;
  }
}

TEST(TaskGen, TenThousandExamplesAreValid) {
  TaskConfig cfg = small_task(10000);
  const GeneratedTask task = generate(123, cfg);
  ASSERT_EQ(task.dataset.examples.size(), 10000u);
  for (const Example& ex : task.dataset.examples) {
    ASSERT_NO_THROW(validate_example(ex, &task.bank));
    EXPECT_GE(ex.regions.count(), cfg.min_regions);
    EXPECT_LE(ex.regions.count(), cfg.max_regions);
    std::set<int> slot_categories;
    std::size_t slots = 0;
    for (const Token& t : ex.tokens) {
      if (!t.is_slot()) continue;
      ++slots;
      slot_categories.insert(ex.regions.labels[static_cast<std::size_t>(t.region)].category);
      EXPECT_EQ(task.bank.subcategory(t.subcat).category, ex.regions.labels[static_cast<std::size_t>(t.region)].category);
    }
    EXPECT_GE(slots, 1u);
    EXPECT_EQ(slot_categories.size(), slots);
  }
}

TEST(TaskGen, CaptionsAgreeWithPlurality) {
  const GeneratedTask task = generate(8, small_task(300));
  const int a = task.vocab.id("a"), two = task.vocab.id("two");
  for (const Example& ex : task.dataset.examples) {
    for (std::size_t i = 0; i + 1 < ex.tokens.size(); ++i) {
      const Token& t = ex.tokens[i];
      const Token& next = ex.tokens[i + 1];
      if (t.is_text() && (t.id == a || t.id == two)) {
        ASSERT_TRUE(next.is_slot());
        EXPECT_EQ(next.plural, t.id == two ? 1 : 0);
      }
    }
  }
}

TEST(TaskGen, JsonlRoundTrip) {
  const Dataset ds = generate(3, small_task(30)).dataset;
  std::istringstream in(to_jsonl(ds));
  const Dataset back = read_jsonl(in);
  EXPECT_EQ(back, ds);
}

TEST(TaskGen, EmptyFileIsEmptyDataset) {
  std::istringstream in("");
  EXPECT_TRUE(read_jsonl(in).examples.empty());
  std::istringstream blank("\n  \n");
  EXPECT_TRUE(read_jsonl(blank).examples.empty());
}

TEST(TaskGen, TruncatedLineNamesLine) {
  const Dataset ds = generate(3, small_task(3)).dataset;
  std::string text = to_jsonl(ds);
  const std::size_t second = text.find('\n') + 1;
  text = text.substr(0, second + 40);
  std::istringstream in(text);
  try {
    read_jsonl(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(TaskGen, MissingFieldNamesField) {
  std::istringstream in(R"({"regions":[{"feat":[1.0],"conv_feat":[1.0],"category":0,"subcat":0}],"tokens":[]})");
  try {
    read_jsonl(in);
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'plural'"), std::string::npos) << msg;
  }
}

TEST(TaskGen, SplitsAreEightyTenTenAndDisjoint) {
  const Dataset ds = generate(1, small_task(200)).dataset;
  const auto train = ds.select(Split::Train), val = ds.select(Split::Val), test = ds.select(Split::Test);
  EXPECT_EQ(train.size(), 160u);
  EXPECT_EQ(val.size(), 20u);
  EXPECT_EQ(test.size(), 20u);
  std::set<const Example*> seen;
  for (const auto* group : {&train, &val, &test}) {
    for (const Example* e : *group) EXPECT_TRUE(seen.insert(e).second);
  }
  EXPECT_EQ(seen.size(), 200u);
}

TEST(TaskGen, ConfigErrors) {
  TaskConfig cfg = small_task();
  cfg.categories = 1;
  EXPECT_THROW(generate(1, cfg), Error);
  cfg = small_task();
  cfg.grammar.templates = {"nothing to ground here"};
  EXPECT_THROW(generate(1, cfg), Error);
  cfg = small_task();
  cfg.max_regions = 2;
  cfg.min_regions = 1;
  try {
    generate(1, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("3 slots"), std::string::npos) << e.what();
  }
  cfg = small_task();
  cfg.grammar.templates = {"{d} <slot> {c} {d} <slot> and {d} <slot>"};
  cfg.categories = 2;
  EXPECT_THROW(generate(1, cfg), Error);
}

TEST(TaskGen, ValidateExampleCatchesBrokenFraming) {
  Example ex = generate(2, small_task(1)).dataset.examples.front();
  Example no_eos = ex;
  no_eos.tokens.pop_back();
  EXPECT_THROW(validate_example(no_eos), Error);
  Example bad_region = ex;
  bad_region.tokens.insert(bad_region.tokens.begin() + 1, Token::slot(99, 0, 0));
  EXPECT_THROW(validate_example(bad_region), Error);
}

TEST(TaskGen, VocabularyAndBank) {
  const Vocabulary v = Grammar{}.vocabulary();
  EXPECT_EQ(v.word(Vocabulary::kBos), "<bos>");
  EXPECT_EQ(v.word(Vocabulary::kEos), "<eos>");
  EXPECT_THROW(v.id("zebra"), Error);
  const CategoryBank bank = CategoryBank::names(3, 2);
  EXPECT_EQ(bank.subcategory_count(), 6u);
  EXPECT_EQ(bank.subcategory(0).singular, "cat");
  EXPECT_EQ(bank.subcategory(0).plural, "cats");
  EXPECT_THROW(bank.subcategory(6), Error);
  for (int c = 0; c < 3; ++c) {
    for (int id : bank.members(c)) EXPECT_EQ(bank.subcategory(id).category, c);
  }
}

TEST(TaskGen, PrototypesAreSeparated) {
  Rng rng(1);
  const CategoryBank bank = CategoryBank::generate(8, 3, 16, 16, 0.1, rng);
  EXPECT_GT(bank.min_prototype_distance(), 0.4);
}
