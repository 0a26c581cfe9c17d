#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ragrec/error.h"
#include "ragrec/io.h"
#include "ragrec/textrep.h"
#include "test_util.h"

namespace ragrec {
namespace {

using testing::TempDir;

ItemBasicInfo item(const std::string& id, const std::string& title,
                   std::map<std::string, std::string> attrs = {}) {
  return {id, title, std::move(attrs)};
}

std::vector<ItemBasicInfo> three_items() {
  return {item("i1", "Titanic", {{"genre", "Drama"}, {"keywords", "ship, iceberg"}}),
          item("i2", "Heat", {{"genre", "Crime"}}), item("i3", "Toy Story", {{"genre", "Animation"}})};
}

TEST(AssembleTextEmbedding, Concatenates) {
  std::vector<float> a{1, 0}, b{0, 1};
  auto e = assemble_text_embedding(a, b);
  EXPECT_EQ(e.text, (std::vector<float>{1, 0, 0, 1}));
  EXPECT_EQ(e.title, a);
  EXPECT_EQ(e.desc, b);

  std::vector<float> z(2, 0.0f);
  EXPECT_EQ(assemble_text_embedding(z, z).text, std::vector<float>(4, 0.0f));

  std::vector<float> t3{1, 2, 3}, d3{4, 5, 6};
  EXPECT_EQ(assemble_text_embedding(t3, d3).text.size(), 6u);
}

TEST(AssembleTextEmbedding, RejectsMismatchAndNonFinite) {
  std::vector<float> a{1, 0}, b{0, 1, 2};
  EXPECT_THROW(assemble_text_embedding(a, b), ContractError);
  std::vector<float> nan{std::nanf(""), 0};
  EXPECT_THROW(assemble_text_embedding(nan, a), ContractError);
}

TEST(DescriptionTemplate, BuiltinMatchesShippedAsset) {
  auto asset = DescriptionTemplate::load(std::filesystem::path(RAGREC_ASSET_DIR) / "describe_item.txt");
  auto builtin = DescriptionTemplate::builtin();
  EXPECT_EQ(asset.system, builtin.system);
  EXPECT_EQ(asset.body, builtin.body);
  EXPECT_EQ(asset.hash(), builtin.hash());
}

TEST(DescriptionTemplate, RendersPlaceholders) {
  auto t = DescriptionTemplate::from_text("sys\n---\n{title} ({item_id}) [{attr:genre}]\n{attributes}\n");
  EXPECT_EQ(t.system, "sys");
  auto info = item("i9", "Alien", {{"year", "1979"}, {"genre", "Horror"}});
  EXPECT_EQ(t.render(info), "Alien (i9) [Horror]\ngenre: Horror\nyear: 1979");
  EXPECT_THROW(t.render(item("i1", "X")), ContractError);
  EXPECT_THROW(DescriptionTemplate::from_text("sys\n---\n\n"), ContractError);
  auto other = DescriptionTemplate::from_text("sys\n---\n{title}!\n");
  EXPECT_NE(other.hash(), t.hash());
}

TEST(FixedTemplate, BaselineTextualForm) {
  EXPECT_EQ(fixed_template_text(item("i1", "Titanic")), "Here is a movie: Titanic");
  EXPECT_EQ(fixed_template_text(item("b1", "Dune"), "book"), "Here is a book: Dune");
}

TEST(DescribeItem, MockMentionsTitleAndCaches) {
  MockLlmClient client(8);
  DescriptionCache cache;
  auto tmpl = DescriptionTemplate::builtin();
  auto titanic = three_items()[0];
  auto d = describe_item(titanic, tmpl, &client, cache);
  EXPECT_NE(d.find("Titanic"), std::string::npos);
  EXPECT_EQ(client.calls(), 1u);
  EXPECT_EQ(describe_item(titanic, tmpl, &client, cache), d);
  EXPECT_EQ(client.calls(), 1u);
}

TEST(DescribeItem, NullClientUsesFixedTemplate) {
  DescriptionCache cache;
  EXPECT_EQ(describe_item(item("i1", "Titanic"), DescriptionTemplate::builtin(), nullptr, cache),
            "Here is a movie: Titanic");
}

TEST(DescribeItem, EmptyGenerationIsContentError) {
  MockLlmClient client(8);
  client.set_answer_fn([](const GenRequest&) { return Completion{"  \n", std::nullopt}; });
  DescriptionCache cache;
  EXPECT_THROW(describe_item(item("i1", "Titanic"), DescriptionTemplate::builtin(), &client, cache),
               ContentError);
}

TEST(DescriptionCache, PersistsAndIgnoresOtherTemplates) {
  TempDir dir;
  {
    DescriptionCache cache(dir / "d.jsonl", 1);
    cache.insert("i1", "first");
    cache.insert("i2", "second");
  }
  DescriptionCache same(dir / "d.jsonl", 1);
  EXPECT_EQ(same.size(), 2u);
  EXPECT_EQ(*same.lookup("i2"), "second");
  DescriptionCache other(dir / "d.jsonl", 2);
  EXPECT_EQ(other.size(), 0u);
  EXPECT_FALSE(other.lookup("i1").has_value());
}

TEST(TextStores, ShapesAndOrder) {
  TempDir dir;
  MockLlmClient client(8);
  DescriptionCache cache;
  TextStoreOptions opts;
  opts.dir = dir.path();
  opts.workers = 2;
  auto items = three_items();
  auto stores = build_text_stores(items, client, DescriptionTemplate::builtin(), cache, opts);
  EXPECT_FALSE(stores.reused);
  EXPECT_EQ(stores.text.count(), 3u);
  EXPECT_EQ(stores.text.dim, 16u);
  EXPECT_EQ(stores.title.dim, 8u);
  EXPECT_EQ(read_row_ids(dir / "text.ids"), (std::vector<std::string>{"i1", "i2", "i3"}));
  for (std::size_t r = 0; r < 3; ++r) {
    auto t = stores.text.row(r);
    auto ti = stores.title.row(r);
    auto de = stores.desc.row(r);
    for (std::size_t c = 0; c < 8; ++c) {
      EXPECT_EQ(t[c], ti[c]);
      EXPECT_EQ(t[8 + c], de[c]);
    }
  }
  // Row 0 title channel is the embedding of the fixed-template title text.
  MockLlmClient fresh(8);
  auto expect = fresh.embed_text({"Here is a movie: Titanic", ""});
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(stores.title.row(0)[c], expect[c]);
  EXPECT_EQ(read_store(dir / "text.rrec"), stores.text);
}

TEST(TextStores, RerunOnCompleteStoreMakesNoCalls) {
  TempDir dir;
  MockLlmClient client(8);
  auto tmpl = DescriptionTemplate::builtin();
  TextStoreOptions opts;
  opts.dir = dir.path();
  auto items = three_items();
  {
    DescriptionCache cache(dir / "desc.jsonl", tmpl.hash());
    auto first = build_text_stores(items, client, tmpl, cache, opts);
    EXPECT_EQ(first.client_calls, 9u);
  }
  const auto before = client.calls();
  DescriptionCache cache(dir / "desc.jsonl", tmpl.hash());
  auto again = build_text_stores(items, client, tmpl, cache, opts);
  EXPECT_TRUE(again.reused);
  EXPECT_EQ(again.client_calls, 0u);
  EXPECT_EQ(client.calls(), before);

  // A different template invalidates the stores.
  auto other = DescriptionTemplate::from_text("Describe {title}.");
  DescriptionCache other_cache(dir / "desc.jsonl", other.hash());
  auto rebuilt = build_text_stores(items, client, other, other_cache, opts);
  EXPECT_FALSE(rebuilt.reused);
  EXPECT_NE(rebuilt.text.template_hash, again.text.template_hash);
}

TEST(TextStores, CachedDescriptionsSkipGeneration) {
  MockLlmClient client(8);
  auto tmpl = DescriptionTemplate::builtin();
  DescriptionCache cache;
  auto items = three_items();
  TextStoreOptions opts;
  build_text_stores(items, client, tmpl, cache, opts);
  const auto before = client.calls();
  auto second = build_text_stores(items, client, tmpl, cache, opts);
  EXPECT_EQ(second.client_calls, 6u);  // embeddings only
  EXPECT_EQ(client.calls() - before, 6u);
}

TEST(TextStores, ZeroItemsGiveValidEmptyStores) {
  TempDir dir;
  MockLlmClient client(8);
  DescriptionCache cache;
  TextStoreOptions opts;
  opts.dir = dir.path();
  auto stores = build_text_stores({}, client, DescriptionTemplate::builtin(), cache, opts);
  EXPECT_EQ(stores.text.count(), 0u);
  std::size_t count = 1;
  auto header = read_store_header(dir / "text.rrec", count);
  EXPECT_EQ(count, 0u);
  EXPECT_EQ(header.dim, 16u);
}

TEST(TextStores, DescriptionsDisabledUseFixedText) {
  MockLlmClient client(8);
  DescriptionCache cache;
  TextStoreOptions opts;
  opts.use_descriptions = false;
  auto items = three_items();
  auto stores = build_text_stores(items, client, DescriptionTemplate::builtin(), cache, opts);
  EXPECT_EQ(stores.client_calls, 6u);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(stores.title.row(1)[c], stores.desc.row(1)[c]);
}

TEST(TextStores, DuplicateIdsRejected) {
  MockLlmClient client(8);
  DescriptionCache cache;
  std::vector<ItemBasicInfo> items{item("a", "A"), item("a", "B")};
  EXPECT_THROW(build_text_stores(items, client, DescriptionTemplate::builtin(), cache, {}), ContractError);
}

TEST(TextStores, PersistentFailureIsReported) {
  MockLlmClient client(8);
  client.set_answer_fn([](const GenRequest&) -> Completion { throw ContentError("nope"); });
  DescriptionCache cache;
  auto items = three_items();
  EXPECT_THROW(build_text_stores(items, client, DescriptionTemplate::builtin(), cache, {}), Error);
}

}  // namespace
}  // namespace ragrec
