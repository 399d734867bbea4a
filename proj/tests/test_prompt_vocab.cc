#include <fstream>
#include <sstream>

#include "doctest.h"
#include "realign/policy.h"
#include "realign/prompt.h"
#include "realign/vocab.h"

using namespace realign;
using namespace realign::policy;

namespace {

std::string slurp(const std::string& name) {
  std::ifstream in(std::string(REALIGN_FIXTURES) + "/prompts/" + name, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string argument() {
  std::string a = slurp("argument.txt");
  while (!a.empty() && a.back() == '\n') a.pop_back();
  return a;
}

}  // namespace

TEST_CASE("prompt renderings match fixtures byte for byte") {
  const std::string x = argument();
  CHECK(render_prompt(x, PromptMode::zero_shot) == slurp("zero_shot.txt"));
  CHECK(render_prompt(x, PromptMode::instruction) == slurp("instruction.txt"));
  const std::vector<Exemplar> shots{
      {"Only a fool would vote for this.", "I do not think voting for this is wise."},
      {"Stop whining about taxes!!", "Please consider the benefits of taxes."}};
  CHECK(render_prompt(x, PromptMode::few_shot, shots) == slurp("few_shot.txt"));
}

TEST_CASE("prompt mode names") {
  CHECK(parse_prompt_mode("instruction") == PromptMode::instruction);
  CHECK(parse_prompt_mode("zero-shot") == PromptMode::zero_shot);
  CHECK(parse_prompt_mode("few-shot") == PromptMode::few_shot);
  CHECK_THROWS(parse_prompt_mode("chat"));
}

TEST_CASE("vocabulary reserves the special ids") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK_THROWS(Vocabulary(std::vector<std::string>{"<eos>"}));
  CHECK_THROWS(Vocabulary(std::vector<std::string>{"a", "a"}));
}

TEST_CASE("vocabulary encodes, decodes and persists") {
  const std::vector<std::string> texts{"the cat sat", "the dog ran fast"};
  auto v = Vocabulary::from_texts(texts);
  CHECK(v.size() == 4 + 6);
  CHECK(v.id("the") == 4);
  CHECK(v.id("zebra") == Vocabulary::kUnk);
  const auto ids = v.encode("the dog sat");
  CHECK(v.decode(ids) == "the dog sat");
  TokenIds with_eos = ids;
  with_eos.insert(with_eos.begin(), Vocabulary::kBos);
  with_eos.push_back(Vocabulary::kEos);
  with_eos.push_back(v.id("cat"));
  CHECK(v.decode(with_eos) == "the dog sat");
  const auto path = std::filesystem::temp_directory_path() / "realign_vocab_test.txt";
  v.save(path);
  CHECK(Vocabulary::load(path) == v);
  std::filesystem::remove(path);
}

TEST_CASE("vocabulary size is capped") {
  std::vector<std::string> words;
  for (int i = 0; i < 509; ++i) words.push_back("t" + std::to_string(i));
  CHECK_THROWS(Vocabulary(words));
  words.pop_back();
  CHECK(Vocabulary(words).size() == 512);
}

TEST_CASE("encoded prompts start with BOS") {
  auto v = Vocabulary::from_texts(std::vector<std::string>{"good point"});
  const auto ids = encode_prompt(v, "good point", PromptMode::zero_shot);
  CHECK(ids.front() == Vocabulary::kBos);
  CHECK(ids.size() == 1 + v.encode(render_prompt("good point", PromptMode::zero_shot)).size());
}
