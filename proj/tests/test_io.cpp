#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "geodepth/config.hpp"
#include "geodepth/image_io.hpp"
#include "test_support.hpp"

using namespace geodepth;

TEST(Png, RoundTripEachChannelCount) {
  const std::string dir = oracle::scratch_dir("png");
  std::mt19937_64 rng(1);
  for (int c : {1, 3, 4}) {
    Image8 img{7, 5, c, std::vector<std::uint8_t>(7 * 5 * c)};
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng() & 0xff);
    const std::string path = dir + "/img" + std::to_string(c) + ".png";
    write_png(path, img);
    const Image8 back = read_png(path, c);
    EXPECT_EQ(back.width, 7);
    EXPECT_EQ(back.height, 5);
    EXPECT_EQ(back.pixels, img.pixels) << c << " channels";
  }
}

TEST(Png, RgbReadAsRgbaGetsOpaqueAlpha) {
  const std::string dir = oracle::scratch_dir("png_alpha");
  Image8 img{3, 2, 3, std::vector<std::uint8_t>(18, 40)};
  write_png(dir + "/a.png", img);
  const Image8 back = read_png(dir + "/a.png", 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) {
      EXPECT_EQ(back.at(y, x, 0), 40);
      EXPECT_EQ(back.at(y, x, 3), 255);
    }
}

TEST(Png, MissingOrCorruptFileIsLoadError) {
  EXPECT_THROW(read_png("/nonexistent/x.png", 3), LoadError);
  const std::string dir = oracle::scratch_dir("png_bad");
  std::ofstream(dir + "/bad.png") << "not a png";
  EXPECT_THROW(read_png(dir + "/bad.png", 3), LoadError);
}

TEST(Png, TensorConversionIsExactAtEndpoints) {
  Image8 img{2, 1, 1, {0, 255}};
  const auto t = image_to_tensor(img);
  EXPECT_EQ(t.at(0, 0, 0), 0.0f);
  EXPECT_EQ(t.at(0, 0, 1), 1.0f);
  Image8 all{16, 16, 1, {}};
  for (int i = 0; i < 256; ++i) all.pixels.push_back(static_cast<std::uint8_t>(i));
  EXPECT_EQ(tensor_to_image(image_to_tensor(all)).pixels, all.pixels);
}

TEST(Pfm, RoundTripIsBitExact) {
  const std::string dir = oracle::scratch_dir("pfm");
  std::mt19937_64 rng(2);
  const auto map = oracle::random_tensor<float>(image_shape(1, 9, 13), rng, 0.01, 80);
  write_pfm(dir + "/d.pfm", map);
  EXPECT_EQ(read_pfm(dir + "/d.pfm"), map);
}

TEST(Pfm, RowsStoredBottomToTopLittleEndian) {
  const std::string dir = oracle::scratch_dir("pfm_layout");
  Tensor<float> map(image_shape(1, 2, 1));
  map.at(0, 0, 0) = 1.0f;  // top
  map.at(0, 1, 0) = 2.0f;  // bottom
  write_pfm(dir + "/m.pfm", map);
  std::ifstream in(dir + "/m.pfm", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const std::string header = "Pf\n1 2\n-1.0\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  float first = 0;
  std::memcpy(&first, bytes.data() + header.size(), 4);
  EXPECT_EQ(first, 2.0f);
}

TEST(Pfm, BadInputsAreLoadErrors) {
  const std::string dir = oracle::scratch_dir("pfm_bad");
  EXPECT_THROW(read_pfm(dir + "/missing.pfm"), LoadError);
  std::ofstream(dir + "/hdr.pfm") << "P6\n1 1\n255\n";
  EXPECT_THROW(read_pfm(dir + "/hdr.pfm"), LoadError);
  std::ofstream(dir + "/short.pfm", std::ios::binary) << "Pf\n4 4\n-1.0\nabc";
  EXPECT_THROW(read_pfm(dir + "/short.pfm"), LoadError);
  EXPECT_THROW(write_pfm(dir + "/c3.pfm", Tensor<float>(image_shape(3, 2, 2))), ShapeError);
}

TEST(ConfigFile, ParsesCommentsAndLaterWins) {
  const Config c = Config::parse("# header\nlr = 0.001  # trailing\n\nsteps=10\nsteps = 20\nname = a b\n");
  EXPECT_DOUBLE_EQ(c.get_double("lr", 0), 0.001);
  EXPECT_EQ(c.get_int("steps", 0), 20);
  EXPECT_EQ(c.get_string("name", ""), "a b");
  EXPECT_EQ(c.get_int("missing", 7), 7);
}

TEST(ConfigFile, TypedGettersValidate) {
  Config c = Config::parse("a = x\nb = 1.5\nflag = on\nlist = 16, 32,64\n");
  EXPECT_THROW(c.get_double("a", 0), ValidationError);
  EXPECT_THROW(c.get_int("b", 0), ValidationError);
  EXPECT_TRUE(c.get_bool("flag", false));
  EXPECT_THROW(c.get_bool("a", false), ValidationError);
  EXPECT_EQ(c.get_int_list("list", {}), (std::vector<int>{16, 32, 64}));
}

TEST(ConfigFile, MalformedLineReportsLine) {
  try {
    Config::parse("a = 1\nbogus\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(Config::parse(" = 3\n"), ParseError);
}

TEST(ConfigFile, OverridesAndUnknownKeys) {
  Config c = Config::parse("lr = 1\n");
  c.apply_override("lr=2");
  EXPECT_EQ(c.get_double("lr", 0), 2.0);
  EXPECT_THROW(c.apply_override("novalue"), ValidationError);
  EXPECT_NO_THROW(c.require_known({"lr"}));
  c.set("typo", "1");
  EXPECT_THROW(c.require_known({"lr"}), ValidationError);
  EXPECT_THROW(Config::load("/nonexistent/cfg"), LoadError);
}
