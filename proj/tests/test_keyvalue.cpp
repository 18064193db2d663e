#include <chanopt/keyvalue.hpp>

#include <gtest/gtest.h>

using namespace chanopt;

TEST(KeyValue, ParsesTrimmedPairsAndSkipsComments) {
  const auto kv = KeyValueFile::parse("# header\n\n  alpha =  1.5  \nname=desk # trailing\n\tlist = 1, 2 ,3\n");
  ASSERT_EQ(kv.entries().size(), 3u);
  EXPECT_DOUBLE_EQ(kv.get_double("alpha"), 1.5);
  EXPECT_EQ(kv.get_string("name"), "desk");
  EXPECT_EQ(kv.get_double_list("list"), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(kv.require("name").line, 4u);
}

TEST(KeyValue, HandlesCrLfAndMissingFinalNewline) {
  const auto kv = KeyValueFile::parse("a = 1\r\nb = 2");
  EXPECT_EQ(kv.get_u64("a"), 1u);
  EXPECT_EQ(kv.get_u64("b"), 2u);
}

TEST(KeyValue, FallbacksApplyOnlyWhenAbsent) {
  const auto kv = KeyValueFile::parse("x = 3\n");
  EXPECT_DOUBLE_EQ(kv.get_double("x", 9.0), 3.0);
  EXPECT_DOUBLE_EQ(kv.get_double("y", 9.0), 9.0);
  EXPECT_EQ(kv.get_u64("z", 7), 7u);
  EXPECT_EQ(kv.get_string("w", "dflt"), "dflt");
}

TEST(KeyValue, LineWithoutEqualsReportsLine) {
  try {
    KeyValueFile::parse("a = 1\n\njunk\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(KeyValue, EmptyKeyRejected) { EXPECT_THROW(KeyValueFile::parse(" = 4\n"), ConfigError); }

TEST(KeyValue, DuplicateSingleKeyRejectedButAllReturnsEvery) {
  const auto kv = KeyValueFile::parse("d = 1\nd = 2\n");
  try {
    kv.find("d");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_EQ(kv.all("d").size(), 2u);
}

TEST(KeyValue, BadNumbersRejected) {
  const auto kv = KeyValueFile::parse("a = 1.5x\nb = -3\nc = 1,,2\n");
  EXPECT_THROW(kv.get_double("a"), ConfigError);
  EXPECT_THROW(kv.get_u64("b"), ConfigError);
  EXPECT_THROW(kv.get_double_list("c"), ConfigError);
}

TEST(KeyValue, MissingRequiredKeyHasNoLine) {
  const auto kv = KeyValueFile::parse("");
  try {
    kv.get_double("absent");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 0u);
  }
}

TEST(KeyValue, UnknownKeysRejectedWithPrefixWildcard) {
  const auto kv = KeyValueFile::parse("gamma_tx = 1\nntx = 2\nbogus = 3\n");
  EXPECT_NO_THROW(KeyValueFile::parse("gamma_tx = 1\nntx = 2\n").check_known({"ntx", "gamma_*"}));
  try {
    kv.check_known({"ntx", "gamma_*"});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(KeyValue, LoadMissingFileFails) { EXPECT_THROW(KeyValueFile::load("/nonexistent/file.cfg"), ConfigError); }

TEST(KeyValue, SplitListTrimsFields) {
  EXPECT_EQ(split_list(" a , b,c "), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(split_list("single"), (std::vector<std::string>{"single"}));
}
