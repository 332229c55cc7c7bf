#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "latte/language.hpp"
#include "latte/oracle.hpp"

using namespace latte;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("latte_language_" + name)).string();
}

Scene scene_of(const std::vector<std::string>& names) {
  Scene s;
  double x = -0.5;
  for (const auto& n : names) {
    SceneObject o;
    o.name = n;
    o.position = {x, 0.1, 0.2};
    s.objects.push_back(o);
    x += 0.2;
  }
  return s;
}

}  // namespace

TEST(Tokenize, LowercasesAndSplitsOnPunctuation) {
  EXPECT_EQ(tokenize("Go LEFT, now!"), (std::vector<std::string>{"go", "left", "now"}));
  EXPECT_EQ(tokenize("  "), std::vector<std::string>{});
  EXPECT_EQ(tokenize("go left"), tokenize("go left "));
}

TEST(Vocabulary, CoversGrammarAndLabels) {
  const auto& v = Vocabulary::builtin();
  EXPECT_EQ(v.word(Vocabulary::kOov), "<oov>");
  for (const auto& w : grammar::words()) EXPECT_NE(v.index(w), Vocabulary::kOov) << w;
  for (const auto label : kObjectLabels) {
    for (const auto& w : tokenize(label)) EXPECT_NE(v.index(w), Vocabulary::kOov) << w;
  }
  EXPECT_EQ(v.index("xylophonist"), Vocabulary::kOov);
  EXPECT_GT(v.size(), 300u);
  EXPECT_EQ(v.fingerprint(), Vocabulary::builtin().fingerprint());
}

TEST(Vocabulary, TrailingSpaceGivesSameIds) {
  const auto enc = TextEncoder::default_encoder();
  EXPECT_EQ(enc.token_ids("go left"), enc.token_ids("go left "));
  EXPECT_EQ(enc.token_ids("go left"), enc.token_ids("go left"));
  EXPECT_THROW(enc.token_ids(" ,"), PreconditionError);
}

TEST(Labels, NoNameContainedInAnother) {
  const auto grammar_words = grammar::words();
  const std::set<std::string> grammar_set(grammar_words.begin(), grammar_words.end());
  std::set<std::string> distinct;
  for (const auto a : kObjectLabels) {
    const auto ta = tokenize(a);
    const std::set<std::string> sa(ta.begin(), ta.end());
    distinct.insert(std::string(a));
    for (const auto& w : ta) EXPECT_EQ(grammar_set.count(w), 0u) << a;
    for (const auto b : kObjectLabels) {
      if (a == b) continue;
      const auto tb = tokenize(b);
      const std::set<std::string> sb(tb.begin(), tb.end());
      EXPECT_FALSE(std::includes(sb.begin(), sb.end(), sa.begin(), sa.end())) << a << " in " << b;
    }
  }
  EXPECT_EQ(distinct.size(), kObjectLabels.size());
}

TEST(Cosine, BasicCases) {
  const std::vector<double> u = {0.3, -1.2, 2.0};
  EXPECT_NEAR(cosine_similarity(u, u), 1.0, 1e-15);
  EXPECT_EQ(cosine_similarity({1, 0, 0}, {0, 1, 0}), 0.0);
  EXPECT_NEAR(cosine_similarity(u, {-0.3, 1.2, -2.0}), -1.0, 1e-15);
  EXPECT_THROW(cosine_similarity({0, 0, 0}, u), NumericError);
  EXPECT_THROW(cosine_similarity({1, 0}, u), DimensionError);
}

TEST(ObjectSimilarity, EmptySceneIsZeroPadded) {
  const auto s = object_similarity(TextEncoder::default_encoder(), "go closer to the sock", Scene{}, 6);
  EXPECT_EQ(s, std::vector<double>(6, 0.0));
}

TEST(ObjectSimilarity, EntriesInCosineRangeAndPadded) {
  const auto scene = scene_of({"sock", "coffee mug", "tabby"});
  const auto s = object_similarity(TextEncoder::default_encoder(), "go closer to the coffee mug", scene, 6);
  ASSERT_EQ(s.size(), 6u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_GE(s[i], -1.0);
    EXPECT_LE(s[i], 1.0);
  }
  for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(s[i], 0.0);
  EXPECT_GT(s[1], s[0]);
  EXPECT_GT(s[1], s[2]);
}

TEST(ObjectSimilarity, TooManyObjects) {
  const auto scene = scene_of({"sock", "kite", "ski"});
  EXPECT_THROW(object_similarity(TextEncoder::default_encoder(), "go left", scene, 2), PreconditionError);
}

TEST(ObjectSimilarity, ArgmaxFindsVerbatimTarget) {
  const auto enc = TextEncoder::default_encoder();
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto sample = generate_sample(seed);
    if (!sample.intent.target || sample.text.find(*sample.intent.target) == std::string::npos) continue;
    const auto s = object_similarity(enc, sample.text, sample.scene, kDefaultMaxObjects);
    std::size_t target = 0;
    for (std::size_t i = 0; i < sample.scene.size(); ++i) {
      if (sample.scene.objects[i].name == *sample.intent.target) target = i;
    }
    for (std::size_t i = 0; i < sample.scene.size(); ++i) {
      if (i != target) {
        EXPECT_GT(s[target], s[i]) << sample.text;
      }
    }
    ++checked;
  }
  EXPECT_GT(checked, 400u);
}

TEST(FeatureLayout, SizesAndTag) {
  FeatureLayout l{6, 64, true};
  EXPECT_EQ(l.size(), 71u);
  l.lf_enabled = false;
  EXPECT_EQ(l.size(), 70u);
  EXPECT_NE(FeatureLayout({6, 64, true}).tag(), FeatureLayout({6, 64, false}).tag());
}

TEST(PrepareFeatures, DeterministicAndLayoutChecked) {
  const auto enc = TextEncoder::default_encoder();
  const auto scene = scene_of({"sock", "kite"});
  const FeatureLayout lf_layout{6, 64, true};
  const auto a = prepare_features(enc, "walk faster when next to the kite", scene, 0.3, lf_layout);
  const auto b = prepare_features(enc, "walk faster when next to the kite", scene, 0.3, lf_layout);
  EXPECT_EQ(a.similarity, b.similarity);
  EXPECT_EQ(a.token_ids, b.token_ids);
  EXPECT_EQ(a.lf, b.lf);
  EXPECT_THROW(prepare_features(enc, "go left", scene, std::nullopt, lf_layout), SchemaError);
  EXPECT_THROW(prepare_features(enc, "go left", scene, 0.5, FeatureLayout{6, 64, false}), SchemaError);
  EXPECT_THROW(prepare_features(enc, "go left", scene, 1.5, lf_layout), SchemaError);
  EXPECT_THROW(prepare_features(enc, "", scene, 0.5, lf_layout), PreconditionError);
}

TEST(PrepareFeatures, SceneOrderPermutesSimilarity) {
  const auto enc = TextEncoder::default_encoder();
  const std::string text = "pass closer to the tiger cat";
  const auto forward = scene_of({"sock", "tiger cat", "persian cat"});
  const auto reversed = scene_of({"persian cat", "tiger cat", "sock"});
  const auto a = prepare_features(enc, text, forward, std::nullopt, {});
  const auto b = prepare_features(enc, text, reversed, std::nullopt, {});
  EXPECT_EQ(a.similarity[0], b.similarity[2]);
  EXPECT_EQ(a.similarity[1], b.similarity[1]);
  EXPECT_EQ(a.similarity[2], b.similarity[0]);
}

TEST(ImportEncoder, LookupAndErrors) {
  EmbeddingStore store;
  store.insert("go left", {1, 0, 0});
  store.insert("sock", {0, 1, 0});
  store.insert("kite", {0, 0, 1});
  EXPECT_THROW(store.insert("bad", {1, 2}), DimensionError);
  const auto enc = TextEncoder::from_store(store, "mem");
  EXPECT_FALSE(enc.trainable());
  EXPECT_EQ(enc.imported_dim(), 3u);
  EXPECT_EQ(enc.imported("go left"), (std::vector<double>{1, 0, 0}));
  try {
    enc.imported("go right");
    FAIL() << "expected a lookup error";
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("go right"), std::string::npos);
  }
  const auto f = prepare_features(enc, "go left", scene_of({"sock", "kite"}), std::nullopt, FeatureLayout{6, 3, false});
  EXPECT_EQ(f.semantic, (std::vector<double>{1, 0, 0}));
  EXPECT_TRUE(f.token_ids.empty());
  EXPECT_EQ(f.similarity[0], 0.0);
  EXPECT_THROW(prepare_features(enc, "go left", Scene{}, std::nullopt, FeatureLayout{6, 4, false}), DimensionError);
}

TEST(ImportEncoder, LoadsJsonLinesFile) {
  const auto path = temp_path("emb.jsonl");
  std::ofstream(path) << "{\"text\": \"go left\", \"embedding\": [0.5, 0.5]}\n\n"
                      << "{\"text\": \"sock\", \"embedding\": [1, 0]}\n";
  const auto enc = TextEncoder::from_spec("import:" + path);
  EXPECT_EQ(enc.spec(), "import:" + path);
  EXPECT_EQ(enc.imported("sock"), (std::vector<double>{1, 0}));
  std::ofstream(path) << "{\"text\": \"go left\", \"embedding\": [0.5, 0.5]}\n{\"text\": \"x\", \"embedding\": [1]}\n";
  EXPECT_THROW(TextEncoder::from_spec("import:" + path), SchemaError);
  std::ofstream(path) << "not json\n";
  EXPECT_THROW(TextEncoder::from_spec("import:" + path), SchemaError);
  std::remove(path.c_str());
  EXPECT_THROW(TextEncoder::from_spec("import:" + path), IoError);
  EXPECT_THROW(TextEncoder::from_spec("bert"), SchemaError);
  EXPECT_TRUE(TextEncoder::from_spec("default").trainable());
}

TEST(ParseIntent, TemplateExamples) {
  const auto right = parse_intent("go to the right");
  EXPECT_EQ(right.kind, IntentKind::cartesian);
  EXPECT_EQ(right.direction, Direction::right);
  EXPECT_EQ(right.intensity, 1.0);

  const auto sock = parse_intent("drive a little closer to the sock");
  EXPECT_EQ(sock.kind, IntentKind::distance);
  EXPECT_EQ(sock.polarity, Polarity::closer);
  EXPECT_EQ(sock.intensity, 0.7);
  EXPECT_EQ(sock.target, "sock");

  const auto tiger = parse_intent("pass a lot further away from the Panthera tigris");
  EXPECT_EQ(tiger.kind, IntentKind::distance);
  EXPECT_EQ(tiger.polarity, Polarity::further);
  EXPECT_EQ(tiger.intensity, 1.5);
  EXPECT_EQ(tiger.target, "Panthera tigris");
}

TEST(ParseIntent, SpeedForms) {
  const auto g = parse_intent("reduce the velocity");
  EXPECT_EQ(g.kind, IntentKind::speed_global);
  EXPECT_EQ(g.polarity, Polarity::slower);
  EXPECT_FALSE(g.target.has_value());
  const auto l = parse_intent("move very faster while passing nearby the kite");
  EXPECT_EQ(l.kind, IntentKind::speed_local);
  EXPECT_EQ(l.polarity, Polarity::faster);
  EXPECT_EQ(l.intensity, 1.5);
  EXPECT_EQ(l.target, "kite");
}

TEST(ParseIntent, ResolvesAgainstScene) {
  const auto scene = scene_of({"tiger cat", "sock"});
  const auto i = parse_intent("go closer to the tiger cat", &scene, 0.25);
  EXPECT_EQ(i.target, "tiger cat");
  EXPECT_EQ(i.locality_factor, 0.25);
  EXPECT_THROW(parse_intent("go closer to the kite", &scene), ResolutionError);
}

TEST(ParseIntent, UnparseableTextReportsSpan) {
  try {
    parse_intent("sing a song");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.span(), "sing a song");
    EXPECT_EQ(e.code(), "unparseable_text");
  }
  try {
    parse_intent("go closer to the");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.span(), "closer to the");
  }
  EXPECT_THROW(parse_intent(""), ParseError);
  EXPECT_THROW(parse_intent("go left and right"), ParseError);
  EXPECT_THROW(parse_intent("faster slower"), ParseError);
}

TEST(ParseIntent, RoundTripsRenderedText) {
  Rng rng(2024);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto traj = random_walk_spline(seed);
    const auto scene = sample_scene(traj, GeneratorConfig{}, rng);
    auto intent = sample_intent(scene, rng);
    intent.locality_factor = rng.uniform();
    const auto text = render_text(intent, rng);
    EXPECT_EQ(parse_intent(text, &scene, intent.locality_factor), intent) << text;
    EXPECT_TRUE(parse_intent(text).same_command(intent)) << text;
  }
}

TEST(ParseIntent, RoundTripsEveryIntentShape) {
  std::vector<ModificationIntent> intents;
  for (double intensity : kIntensities) {
    for (int d = 0; d < 6; ++d) {
      ModificationIntent i;
      i.kind = IntentKind::cartesian;
      i.direction = static_cast<Direction>(d);
      i.intensity = intensity;
      intents.push_back(i);
    }
    for (const auto kind : {IntentKind::distance, IntentKind::speed_global, IntentKind::speed_local}) {
      const auto pols = kind == IntentKind::distance ? std::vector<Polarity>{Polarity::closer, Polarity::further}
                                                     : std::vector<Polarity>{Polarity::faster, Polarity::slower};
      for (const auto p : pols) {
        for (const auto label : kObjectLabels) {
          ModificationIntent i;
          i.kind = kind;
          i.polarity = p;
          i.intensity = intensity;
          if (kind != IntentKind::speed_global) i.target = std::string(label);
          intents.push_back(i);
          if (kind == IntentKind::speed_global) break;
        }
      }
    }
  }
  for (const auto& intent : intents) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      Rng rng(seed);
      const auto text = render_text(intent, rng);
      EXPECT_EQ(parse_intent(text), intent) << text;
    }
  }
}
