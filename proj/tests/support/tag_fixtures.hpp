// Hand-labelled comments for judgment-tag extraction.
#pragma once

#include <string>
#include <vector>

#include "moralmatch/extraction.hpp"

namespace fixtures {

struct TagCase {
  std::string body;
  std::vector<moralmatch::extraction::RawTag> expected;
  int rule;  // 0 when nothing should match
};

inline const std::vector<TagCase>& tag_cases() {
  using moralmatch::extraction::RawTag;
  constexpr auto YTA = RawTag::YTA, NTA = RawTag::NTA, ESH = RawTag::ESH, NAH = RawTag::NAH;
  static const std::vector<TagCase> cases{
      // alone on a line
      {"NTA\nyou did fine", {NTA}, 1},
      {"YTA", {YTA}, 1},
      {"nta", {NTA}, 1},
      {"**YTA**\n\nYou should apologise.", {YTA}, 1},
      {"NTA\n\nEdit: after reading the comments\n\nESH", {NTA, ESH}, 1},
      {"YTA\nNTA\nYTA", {YTA, NTA}, 1},
      {"Nah\nthat was rude of them", {NAH}, 1},
      {"I read this twice.\nESH\nNobody comes out well.", {ESH}, 1},
      {"  NAH  \nfamilies are hard", {NAH}, 1},
      {"NTA.\nYou owe them nothing", {NTA}, 1},
      {"NTA\nNAH\nESH\nYTA", {NTA, NAH, ESH, YTA}, 1},
      {"YTA\nbut honestly, NTA. ESH", {YTA}, 1},
      {"NtA\nok", {NTA}, 1},
      // alone in a sentence
      {"You were right. NTA. Your sister overreacted.", {NTA}, 2},
      {"Honestly? yta. You knew what would happen.", {YTA}, 2},
      {"That is a lot to deal with. Esh! Both of you lied.", {ESH}, 2},
      {"NAH. Just a misunderstanding between friends.", {NAH}, 2},
      {"It depends. nta. But talk to her.", {NTA}, 2},
      {"Sentence one is long and has many words in it. NTA\nand also YTA", {NTA}, 2},
      // first word of a line
      {"YTA for ignoring your brother all week", {YTA}, 3},
      {"Nta - she had no right to read your diary", {NTA}, 3},
      {"esh: everyone here behaved badly at the wedding", {ESH}, 3},
      {"Yta; you broke a promise to your kid", {YTA}, 3},
      {"NTA  your house, your rules about guests staying over", {NTA}, 3},
      {"nta  your house your rules", {NTA}, 3},
      {"I think you handled it badly.\nYTA and you know it deep down", {YTA}, 3},
      {"NAH - you both have a point about the dog", {NAH}, 3},
      {"Esh - the both of you should apologise", {ESH}, 3},
      // short sentence with an upper-case tag
      {"OP, you are clearly NTA!", {NTA}, 4},
      {"Well, definitely YTA here. You should have called.", {YTA}, 4},
      {"I would say ESH honestly. Nobody listened to anyone in this story at all.", {ESH}, 4},
      {"Everyone says NAH, I agree.", {NAH}, 4},
      {"My vote is YTA. That was needlessly cruel to her.", {YTA}, 4},
      {"Edit: NTA. Thanks for the awards", {NTA}, 4},
      // nothing
      {"YTA if you hid it", {}, 0},
      {"nah that's fine honestly", {}, 0},
      {"Nah. You did nothing wrong here.", {}, 0},
      {"nah, that's a bit much for a birthday party", {}, 0},
      {"Nah - I think you were fine there honestly", {}, 0},
      {"nta because she started it and you just reacted", {}, 0},
      {"So yeah, I'd go with NTA here mate", {}, 0},
      {"You are YTA if you keep doing that.", {}, 0},
      {"Would that make me YTA?", {}, 0},
      {"So you are nta really.", {}, 0},
      {"I don't think anyone is the asshole here.", {}, 0},
      {"NTA's mom is lovely", {}, 0},
      {"The NTA crowd will disagree but YTA for sure here pal", {}, 0},
      {"What if I'm NTA? I honestly don't know", {}, 0},
      {"   ", {}, 0},
  };
  return cases;
}

}  // namespace fixtures
