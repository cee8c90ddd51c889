// SPDX-License-Identifier: Apache-2.0
#include "depthmesh/io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <sstream>

namespace depthmesh {
namespace {

TEST(Sha256, KnownDigests) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Container, RoundTripsDoublesExactly) {
  Rng rng(4);
  TextContainer c;
  c.kind = "demo";
  c.set_meta("name", "two words");
  Matrix m = testing::random_matrix(3, 5, rng, 1e3);
  m(0, 0) = std::numeric_limits<double>::denorm_min();
  m(1, 1) = -0.0;
  m(2, 2) = 1.0 / 3.0;
  c.add("m", m);
  c.add("empty", Matrix(0, 4));
  std::stringstream ss;
  write_container(ss, c);
  const TextContainer back = read_container(ss, "demo");
  EXPECT_EQ(back.kind, "demo");
  EXPECT_EQ(back.meta_value("name"), "two words");
  EXPECT_EQ(back.matrix("m"), m);
  EXPECT_EQ(back.matrix("empty").rows(), 0);
  EXPECT_EQ(back.matrix("empty").cols(), 4);
  EXPECT_TRUE(back.has_matrix("m"));
  EXPECT_FALSE(back.has_matrix("missing"));
  EXPECT_THROW(back.matrix("missing"), std::runtime_error);
  EXPECT_THROW(back.meta_value("missing"), std::runtime_error);
}

TEST(Container, RejectsMalformedInput) {
  std::stringstream bad_header("hello world\n");
  EXPECT_THROW(read_container(bad_header), std::runtime_error);
  std::stringstream truncated("depthmesh-container demo 1\nmatrix m 2 2\n1 2\n");
  EXPECT_THROW(read_container(truncated), std::runtime_error);
  std::stringstream ok("depthmesh-container demo 1\nend\n");
  EXPECT_THROW(read_container(ok, "other"), std::runtime_error);
}

TEST(Container, SaveAndLoadFile) {
  const auto dir = std::filesystem::temp_directory_path() / "depthmesh_io_test";
  std::filesystem::create_directories(dir);
  TextContainer c;
  c.kind = "demo";
  c.add("x", Matrix::Identity(2, 2));
  const std::string path = (dir / "c.txt").string();
  save_container(path, c);
  EXPECT_EQ(load_container(path, "demo").matrix("x"), Matrix::Identity(2, 2));
  EXPECT_THROW(load_container((dir / "nope.txt").string()), std::runtime_error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace depthmesh
