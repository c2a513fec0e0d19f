#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "ntrf/errors.hpp"
#include "ntrf/eval_rescore.hpp"
#include "ntrf/numeric.hpp"
#include "ntrf/trainer.hpp"

using namespace ntrf;

namespace {

struct Alignment {
  const char* ref;
  const char* hyp;
  std::size_t sub, del, ins;
};

// Zero potential, one length; every one-word sentence scores -log_z1.
TrfModel constant_model(double score) {
  TrfModel m;
  m.vocab = fixtures::word_vocab(4);
  m.theta = PotentialParams(fixtures::tiny_potential(), 4);
  m.theta.set_zero();
  m.zeta = init_zeta(4, 1);
  m.pi0 = LengthDist::uniform(1);
  m.pi_infer = m.pi0;
  m.log_z1 = -score;
  return m;
}

NBestSet parse(const std::string& text) {
  std::istringstream in(text);
  return read_nbest(in);
}

}  // namespace

TEST_CASE("hand-checked word alignments") {
  const std::vector<Alignment> cases{
      {"a b c", "a b c", 0, 0, 0},
      {"a b c", "a x c", 1, 0, 0},
      {"a b c", "a c", 0, 1, 0},
      {"a b c", "a b x c", 0, 0, 1},
      {"a b c", "", 0, 3, 0},
      {"a b", "b a", 2, 0, 0},
      {"a", "b c", 1, 0, 1},
      {"the cat sat", "the cat sat on the mat", 0, 0, 3},
      {"the cat sat on the mat", "the cat sat", 0, 3, 0},
      {"a b c d", "x b c y", 2, 0, 0},
      {"a b c d", "b c d", 0, 1, 0},
      {"a b c d", "a b c d e", 0, 0, 1},
      {"a a a", "a a", 0, 1, 0},
      {"a b a b", "b a b a", 0, 1, 1},
      {"one two three four five", "one too three for five", 2, 0, 0},
      {"x", "x", 0, 0, 0},
      {"x", "y", 1, 0, 0},
      {"a b c", "c b a", 2, 0, 0},
      {"a b c d e f", "a c d e f g", 0, 1, 1},
      {"i saw it", "eye saw it", 1, 0, 0},
      {"a b c", "a b", 0, 1, 0},
      {"a b", "c d e", 2, 0, 1},
      {"go to the store now", "go the store", 0, 2, 0},
      {"w1 w2", "w1 w2 w2 w2", 0, 0, 2},
  };
  REQUIRE(cases.size() >= 20);
  for (const auto& c : cases) {
    CAPTURE(c.ref);
    CAPTURE(c.hyp);
    const WerReport r = align_words(split_whitespace(c.ref), split_whitespace(c.hyp));
    CHECK(r.substitutions == c.sub);
    CHECK(r.deletions == c.del);
    CHECK(r.insertions == c.ins);
    CHECK(r.reference_words == split_whitespace(c.ref).size());
    CHECK(r.wer == static_cast<double>(c.sub + c.del + c.ins) / static_cast<double>(r.reference_words));
  }
}

TEST_CASE("corpus word error rate") {
  const std::map<std::string, std::string> refs{{"u1", "a b c"}, {"u2", "d e"}};
  CHECK(wer(refs, refs).wer == 0.0);
  const std::map<std::string, std::string> hyps{{"u1", "a x c"}, {"u2", "d"}};
  const WerReport r = wer(hyps, refs);
  CHECK(r.substitutions == 1);
  CHECK(r.deletions == 1);
  CHECK(r.wer == doctest::Approx(2.0 / 5.0));
  CHECK_THROWS_AS(wer({{"u1", "a"}}, refs), FormatError);
  CHECK_THROWS_AS(wer({{"u1", "a"}, {"u2", "b"}, {"u3", "c"}}, refs), FormatError);
}

TEST_CASE("n-best parsing") {
  const NBestSet s = parse("u1 0 am=-10.5 lm=-3 w1 w2\nu1 1 w2\n\nu2 0 am=-1 w3\n");
  REQUIRE(s.utterances.size() == 2);
  const auto& u1 = s.utterances.at("u1");
  REQUIRE(u1.size() == 2);
  CHECK(u1[0].text == "w1 w2");
  CHECK(*u1[0].acoustic == -10.5);
  CHECK(*u1[0].external_lm == -3.0);
  CHECK_FALSE(u1[1].acoustic.has_value());
  CHECK(s.hypothesis_count() == 3);
  CHECK_THROWS_AS(parse("u1\n"), FormatError);
  CHECK_THROWS_AS(parse("u1 x w1\n"), FormatError);
  CHECK_THROWS_AS(parse("u1 0 w1\nu1 0 w2\n"), FormatError);
  CHECK_THROWS_AS(parse("u1 0 am=abc w1\n"), FormatError);
  CHECK_THROWS_AS(parse(""), FormatError);
}

TEST_CASE("model averaging") {
  const NBestSet s = parse("u 0 w1\n");
  const TrfModel a = constant_model(-1.0), b = constant_model(-3.0);
  const ScoreTable one = rescore(s, {&a}, {"a"});
  CHECK(one.scores.at({"u", 0})[one.column("avg")] == one.scores.at({"u", 0})[one.column("a")]);
  const ScoreTable two = rescore(s, {&a, &b}, {"a", "b"});
  CHECK(two.scores.at({"u", 0})[two.column("a")] == doctest::Approx(-1.0));
  CHECK(two.scores.at({"u", 0})[two.column("b")] == doctest::Approx(-3.0));
  CHECK(two.primary({"u", 0}) == doctest::Approx(-2.0));
}

TEST_CASE("unscorable hypotheses are reported") {
  const TrfModel m = fixtures::random_model(3, 2, 3, 1.0);
  const NBestSet s = parse("u 0 w1\nu 1 w1 w2 w1\nu 2\n");
  const ScoreTable t = rescore(s, {&m}, {"m"});
  CHECK(t.unscorable.size() == 2);
  const auto best = select_best(s, t, 0.0);
  CHECK(best.at("u").index == 0);
}

TEST_CASE("selection follows the enumerated oracle") {
  const TrfModel gen = fixtures::random_model(3, 3, 21, 1.5);
  const auto space = fixtures::all_states(3, 3);
  const auto p = fixtures::exact_joint(gen, space, gen.pi_infer);
  Rng rng(3);
  std::ostringstream text;
  std::map<std::string, std::size_t> oracle;
  for (int u = 0; u < 10; ++u) {
    std::vector<std::size_t> pick(5);
    for (auto& i : pick) i = std::uniform_int_distribution<std::size_t>(0, space.size() - 1)(rng);
    std::size_t best = 0;
    for (std::size_t h = 0; h < pick.size(); ++h) {
      text << "u" << u << ' ' << h << ' ' << decode(space.states[pick[h]], gen.vocab) << '\n';
      if (p[pick[h]] > p[pick[best]]) best = h;
    }
    oracle["u" + std::to_string(u)] = best;
  }
  const NBestSet s = parse(text.str());
  const auto chosen = select_best(s, rescore(s, {&gen}, {"gen"}), 0.0);
  for (const auto& [utt, h] : chosen) CHECK(static_cast<std::size_t>(h.index) == oracle.at(utt));
}

TEST_CASE("interpolation") {
  ScoreTable a, b;
  a.models = {"x"};
  b.models = {"y"};
  a.scores[{"u", 0}] = {-2.0};
  b.scores[{"u", 0}] = {-4.0};
  a.scores[{"u", 1}] = {-0.1};
  b.scores[{"u", 1}] = {kNegInf};
  CHECK(interpolate(a, b, 0.5).primary({"u", 0}) == -3.0);
  CHECK(interpolate(a, b, 1.0).primary({"u", 0}) == -2.0);
  CHECK(interpolate(a, b, 1.0).primary({"u", 1}) == -0.1);
  CHECK(interpolate(a, b, 0.0).primary({"u", 0}) == -4.0);
  CHECK(interpolate(a, b, 0.0).primary({"u", 1}) == kNegInf);
  CHECK_THROWS_AS(interpolate(a, b, 1.5), DomainError);
  b.scores.erase({"u", 1});
  CHECK_THROWS_AS(interpolate(a, b, 0.5), FormatError);
}

TEST_CASE("best hypothesis selection") {
  ScoreTable t;
  t.models = {"m"};
  NBestSet one = parse("u 3 w1\n");
  t.scores[{"u", 3}] = {-7.0};
  CHECK(select_best(one, t, 0.0).at("u").index == 3);

  const NBestSet s = parse("u 0 am=-5 w1\nu 1 am=-1 w2\nu 2 am=-9 w3\n");
  t.scores = {{{"u", 0}, {-1.0}}, {{"u", 1}, {-2.0}}, {{"u", 2}, {-1.0}}};
  CHECK(select_best(s, t, 0.0).at("u").index == 0);
  CHECK(select_best(s, t, 1.0).at("u").index == 1);

  const NBestSet tie = parse("u 5 w1\nu 2 w2\nu 9 w3\n");
  t.scores = {{{"u", 5}, {-1.0}}, {{"u", 2}, {-1.0}}, {{"u", 9}, {-1.0}}};
  CHECK(select_best(tie, t, 0.0).at("u").index == 2);
}

TEST_CASE("score table round trip") {
  const TrfModel a = fixtures::random_model(3, 2, 1, 1.0);
  const TrfModel b = fixtures::random_model(3, 2, 2, 1.0);
  const NBestSet s = parse("u1 0 w1 w2\nu1 1 w2\nu2 0 w1 w1 w1\n");
  const ScoreTable t = rescore(s, {&a, &b}, {"a", "b"});
  std::ostringstream out;
  write_score_table(out, t);
  std::istringstream in(out.str());
  const ScoreTable back = read_score_table(in);
  CHECK(back.models == t.models);
  CHECK(back.scores == t.scores);
  CHECK(back.unscorable == t.unscorable);
  std::istringstream bad("wrong,header\n");
  CHECK_THROWS_AS(read_score_table(bad), FormatError);
}

TEST_CASE("transcripts round trip") {
  const std::map<std::string, std::string> t{{"a", "x y"}, {"b", ""}};
  std::ostringstream out;
  write_transcripts(out, t);
  std::istringstream in(out.str());
  CHECK(read_transcripts(in) == t);
  std::istringstream dup("a x\na y\n");
  CHECK_THROWS_AS(read_transcripts(dup), FormatError);
}
