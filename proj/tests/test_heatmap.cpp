#include <doctest.h>

#include <cmath>

#include "kamp/heatmap.hpp"
#include "kamp/rng.hpp"

using namespace kamp;

TEST_CASE("encode_gaussian: pixel-aligned peak is exactly 1.0") {
  TensorD h = encode_gaussian<double>(10.0, 20.0, true, 64, 64, 2.0);
  CHECK(h.at(20, 10) == 1.0);
  double mx = 0;
  for (size_t i = 0; i < h.size(); ++i) mx = std::max(mx, h[i]);
  CHECK(mx == 1.0);
}

TEST_CASE("encode_gaussian: hand-evaluated falloff two pixels away") {
  TensorD h = encode_gaussian<double>(32.0, 32.0, true, 64, 64, 2.0);
  // (34,32) is a horizontal offset of 2: exp(-(2^2 + 0)/(2*4)) = exp(-0.5)
  CHECK(h.at(32, 34) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(h.at(32, 34) == doctest::Approx(0.60653065971).epsilon(1e-9));
}

TEST_CASE("encode_gaussian: invisible keypoints give an all-zero grid") {
  TensorD h = encode_gaussian<double>(10.0, 20.0, false, 64, 64, 2.0);
  for (size_t i = 0; i < h.size(); ++i) CHECK(h[i] == 0.0);
}

TEST_CASE("encode_gaussian: argument validation") {
  CHECK_THROWS_AS(encode_gaussian<double>(10, 20, true, 64, 64, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(encode_gaussian<double>(10, 20, true, 64, 64, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(encode_gaussian<double>(64.0, 20, true, 64, 64, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(encode_gaussian<double>(10, -0.5, true, 64, 64, 2.0), std::invalid_argument);
  // outside coordinates are fine when invisible
  CHECK_NOTHROW(encode_gaussian<double>(-5, 900, false, 64, 64, 2.0));
}

TEST_CASE("encode_gaussian: off-grid coordinates snap to the nearest pixel") {
  TensorD h = encode_gaussian<double>(10.4, 19.6, true, 64, 64, 2.0);
  CHECK(h.at(20, 10) == 1.0);
}

TEST_CASE("decode_argmax: single peak") {
  TensorD h({64, 64});
  h.at(20, 10) = 1.0;
  KeypointLocation loc = decode_argmax(h);
  CHECK(loc.x == 10.0);
  CHECK(loc.y == 20.0);
  CHECK(loc.visible);
}

TEST_CASE("decode_argmax: ties break to the lowest row-major index") {
  TensorD h({8, 8});
  h.at(0, 0) = 0.7;
  h.at(5, 5) = 0.7;
  KeypointLocation loc = decode_argmax(h);
  CHECK(loc.x == 0.0);
  CHECK(loc.y == 0.0);
}

TEST_CASE("decode_argmax: visibility threshold is strict") {
  TensorD h({4, 4});
  h.at(1, 2) = 0.1;
  CHECK_FALSE(decode_argmax(h).visible);
  h.at(1, 2) = 0.100001;
  CHECK(decode_argmax(h).visible);
  h.at(1, 2) = 0.3;
  CHECK(decode_argmax(h, 0.5).visible == false);
}

TEST_CASE("decode/encode round-trip over an exhaustive 16x16 subgrid") {
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      TensorD h = encode_gaussian<double>(4 * x, 4 * y, true, 64, 64, 2.0);
      KeypointLocation loc = decode_argmax(h);
      CHECK(loc.x == 4 * x);
      CHECK(loc.y == 4 * y);
      CHECK(loc.visible);
    }
}

TEST_CASE("spatial_softmax: uniform 4x3 over height -> every entry 0.25") {
  TensorD h = TensorD::full({4, 3}, 0.37);
  TensorD s = spatial_softmax(h, SoftmaxAxis::height);
  for (size_t i = 0; i < s.size(); ++i) CHECK(s[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("spatial_softmax: [0, ln 3] column -> [0.25, 0.75]") {
  TensorD h({2, 1});
  h.at(0, 0) = 0.0;
  h.at(1, 0) = std::log(3.0);
  TensorD s = spatial_softmax(h, SoftmaxAxis::height);
  CHECK(s.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.at(1, 0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("spatial_softmax: uniform 4x3 over full2d -> every entry 1/12") {
  TensorD h = TensorD::full({4, 3}, -2.5);
  TensorD s = spatial_softmax(h, SoftmaxAxis::full2d);
  for (size_t i = 0; i < s.size(); ++i)
    CHECK(s[i] == doctest::Approx(1.0 / 12.0).epsilon(1e-12));
}

TEST_CASE("channel_softmax: C=1 gives an all-ones map") {
  TensorD stack({1, 3, 5});
  Pcg32 rng(7);
  for (size_t i = 0; i < stack.size(); ++i) stack[i] = rng.uniform(-4, 4);
  TensorD s = channel_softmax(stack);
  for (size_t i = 0; i < s.size(); ++i) CHECK(s[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("channel_softmax: identical channels -> 0.5 everywhere (C=2)") {
  TensorD stack({2, 4, 4});
  Pcg32 rng(9);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      double v = rng.uniform(-2, 2);
      stack.at(0, r, c) = v;
      stack.at(1, r, c) = v;
    }
  TensorD s = channel_softmax(stack);
  for (size_t i = 0; i < s.size(); ++i) CHECK(s[i] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("channel_softmax: [0, ln 3] channel pair -> [0.25, 0.75]") {
  TensorD stack({2, 1, 1});
  stack.at(0, 0, 0) = 0.0;
  stack.at(1, 0, 0) = std::log(3.0);
  TensorD s = channel_softmax(stack);
  CHECK(s.at(0, 0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.at(1, 0, 0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax normalization invariants on random heatmaps") {
  Pcg32 rng(1234);
  for (int trial = 0; trial < 50; ++trial) {
    int h = 1 + static_cast<int>(rng.next_below(24));
    int w = 1 + static_cast<int>(rng.next_below(24));
    TensorD hm({h, w});
    for (size_t i = 0; i < hm.size(); ++i) hm[i] = rng.uniform(-6, 6);

    TensorD sh = spatial_softmax(hm, SoftmaxAxis::height);
    for (int c = 0; c < w; ++c) {
      double s = 0;
      for (int r = 0; r < h; ++r) s += sh.at(r, c);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    TensorD sw = spatial_softmax(hm, SoftmaxAxis::width);
    for (int r = 0; r < h; ++r) {
      double s = 0;
      for (int c = 0; c < w; ++c) s += sw.at(r, c);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    TensorD sf = spatial_softmax(hm, SoftmaxAxis::full2d);
    double s = 0;
    for (size_t i = 0; i < sf.size(); ++i) s += sf[i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    for (size_t i = 0; i < sf.size(); ++i) CHECK(sf[i] > 0.0);
  }
}

TEST_CASE("channel_softmax pixel sums equal 1 on random stacks") {
  Pcg32 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    int c = 1 + static_cast<int>(rng.next_below(6));
    TensorD stack({c, 5, 7});
    for (size_t i = 0; i < stack.size(); ++i) stack[i] = rng.uniform(-6, 6);
    TensorD s = channel_softmax(stack);
    for (int r = 0; r < 5; ++r)
      for (int q = 0; q < 7; ++q) {
        double sum = 0;
        for (int ch = 0; ch < c; ++ch) sum += s.at(ch, r, q);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
}

TEST_CASE("spatial_softmax is shift invariant") {
  Pcg32 rng(4321);
  TensorD hm({9, 6});
  for (size_t i = 0; i < hm.size(); ++i) hm[i] = rng.uniform(-3, 3);
  for (SoftmaxAxis axis : {SoftmaxAxis::height, SoftmaxAxis::width, SoftmaxAxis::full2d}) {
    TensorD base = spatial_softmax(hm, axis);
    TensorD shifted = hm;
    for (size_t i = 0; i < shifted.size(); ++i) shifted[i] += 17.5;
    TensorD s2 = spatial_softmax(shifted, axis);
    for (size_t i = 0; i < base.size(); ++i)
      CHECK(s2[i] == doctest::Approx(base[i]).epsilon(1e-6));
  }
}

TEST_CASE("float and double instantiations agree") {
  Tensor hf = encode_gaussian<float>(5.0, 3.0, true, 16, 16, 2.0);
  TensorD hd = encode_gaussian<double>(5.0, 3.0, true, 16, 16, 2.0);
  for (size_t i = 0; i < hf.size(); ++i)
    CHECK(static_cast<double>(hf[i]) == doctest::Approx(hd[i]).epsilon(1e-6));
}
