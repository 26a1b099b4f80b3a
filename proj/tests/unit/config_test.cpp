#include "nepgpt/config_file.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include "nepgpt/error.hpp"
#include "test_support.hpp"

namespace nepgpt::config {
namespace {

TEST(KeyValues, ParsesCommentsBlanksAndWhitespace) {
  auto kv = parse_key_values(
      "# model\n"
      "n_layer = 2\n"
      "\n"
      "  max_lr=0.003  \r\n"
      "tie_embeddings=true");
  EXPECT_EQ(kv, (KeyValues{{"max_lr", "0.003"},
                           {"n_layer", "2"},
                           {"tie_embeddings", "true"}}));
  EXPECT_TRUE(parse_key_values("").empty());
}

TEST(KeyValues, MalformedLines) {
  auto expect_invalid = [](const char* text) {
    try {
      parse_key_values(text);
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kConfigInvalid) << text;
    }
  };
  expect_invalid("n_layer 2\n");
  expect_invalid("=2\n");
  expect_invalid("a=1\na=2\n");
}

TEST(KeyValues, FormatIsSortedAndReparses) {
  KeyValues kv = {{"zeta", "1"}, {"alpha", "x y"}, {"mid", ""}};
  const std::string text = format_key_values(kv);
  EXPECT_EQ(text, "alpha=x y\nmid=\nzeta=1\n");
  EXPECT_EQ(parse_key_values(text), kv);
}

TEST(KeyValues, HashCoversEveryEntry) {
  KeyValues a = {{"n_layer", "2"}, {"seed", "1"}};
  KeyValues b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b["seed"] = "2";
  EXPECT_NE(config_hash(a), config_hash(b));
  b = a;
  b["extra"] = "";
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(hash_hex(0xabcull), "0000000000000abc");
}

TEST(KeyValues, ReadFromFile) {
  testing::TempDir dir;
  testing::write_text(dir / "run.cfg", "seed=5\n");
  EXPECT_EQ(read_key_values(dir / "run.cfg").at("seed"), "5");
  try {
    read_key_values(dir / "missing.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.error_class(), ErrorClass::kIo);
  }
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(6e-4), "0.0006");
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(3.0), "3");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> exponent(-12, 12);
  std::uniform_real_distribution<double> mantissa(-1, 1);
  for (int i = 0; i < 2000; ++i) {
    const double v = mantissa(rng) * std::pow(10.0, exponent(rng));
    EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
  }
}

TEST(Binder, TypedFieldsAndErrors) {
  bool flag = false;
  std::size_t count = 0;
  double rate = 0;
  float drop = 0;
  std::string name;
  Binder b;
  b.bind("flag", flag);
  b.bind("count", count);
  b.bind("rate", rate);
  b.bind("drop", drop);
  b.bind("name", name);
  b.apply({{"flag", "true"}, {"count", "42"}, {"rate", "1e-3"},
           {"drop", "0.25"}, {"name", "desk"}});
  EXPECT_TRUE(flag);
  EXPECT_EQ(count, 42u);
  EXPECT_EQ(rate, 1e-3);
  EXPECT_EQ(drop, 0.25f);
  EXPECT_EQ(name, "desk");
  EXPECT_EQ(b.resolved(), (KeyValues{{"count", "42"},
                                     {"drop", "0.25"},
                                     {"flag", "true"},
                                     {"name", "desk"},
                                     {"rate", "0.001"}}));
  EXPECT_TRUE(b.has("rate"));
  EXPECT_FALSE(b.has("lr"));

  try {
    b.apply("lr", "1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownConfigKey);
    EXPECT_EQ(e.error_class(), ErrorClass::kUsage);
  }
  for (auto [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"flag", "yes"}, {"count", "-1"}, {"count", "4x"}, {"count", ""},
           {"rate", "fast"}, {"rate", "inf"}}) {
    EXPECT_THROW(b.apply(key, value), Error) << key << "=" << value;
  }
}

}  // namespace
}  // namespace nepgpt::config
