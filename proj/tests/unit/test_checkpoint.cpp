#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "railkd/checkpoint.hpp"
#include "railkd/errors.hpp"
#include "test_util.hpp"

using namespace railkd;

TEST(Checkpoint, RoundTripIsBitExact) {
  test::TempDir dir("ckpt");
  Rng rng(1);
  Checkpoint c;
  c.meta = {{"kind", "unit"}, {"n", 3}};
  c.tensors.push_back({"a", test::random_tensor(rng, {2, 3})});
  c.tensors.push_back({"b.c", Tensor::from({1}, {std::nextafter(1.0, 2.0)})});
  c.tensors.push_back({"tiny", Tensor::from({2}, {std::numeric_limits<double>::denorm_min(), -0.0})});
  save_checkpoint(dir / "x.ckpt", c);
  const Checkpoint back = load_checkpoint(dir / "x.ckpt");
  EXPECT_EQ(back.meta, c.meta);
  ASSERT_EQ(back.tensors.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.tensors[i].name, c.tensors[i].name);
    EXPECT_EQ(back.tensors[i].tensor.shape(), c.tensors[i].tensor.shape());
    const auto x = back.tensors[i].tensor.data(), y = c.tensors[i].tensor.data();
    EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(double)), 0);
  }
  EXPECT_TRUE(back.contains("b.c"));
  EXPECT_THROW(back.get("missing"), DataError);
}

TEST(Checkpoint, TruncatedFileIsDataError) {
  test::TempDir dir("ckpt");
  Checkpoint c;
  c.tensors.push_back({"a", Tensor::zeros({4, 4})});
  save_checkpoint(dir / "x.ckpt", c);
  const auto size = std::filesystem::file_size(dir / "x.ckpt");
  std::filesystem::resize_file(dir / "x.ckpt", size - 9);
  EXPECT_THROW(load_checkpoint(dir / "x.ckpt"), DataError);
}

TEST(Checkpoint, BadMagicIsDataError) {
  test::TempDir dir("ckpt");
  std::ofstream(dir / "bad.ckpt") << "NOTACKPTxxxxxxxxxxxxxxxxxx";
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), DataError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), IoError);
}
