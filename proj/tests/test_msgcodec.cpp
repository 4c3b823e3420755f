#include <catch2/catch_amalgamated.hpp>

#include "lvmark/msgcodec.hpp"

using namespace lvmark;
using msgcodec::Bits;

namespace {

// Independent oracle: GF(2) long division of payload(x) * x^(n-k) by g(x),
// operating on plain coefficient vectors (degree-ascending).
Bits parity_by_long_division(const Bits& payload, const Bits& generator, int n) {
  const int k = static_cast<int>(payload.size());
  const int r = n - k;
  std::vector<std::uint8_t> dividend(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < k; ++i) dividend[static_cast<std::size_t>(r + i)] = payload[static_cast<std::size_t>(i)];
  const int gdeg = static_cast<int>(generator.size()) - 1;
  for (int d = n - 1; d >= gdeg; --d) {
    if (!dividend[static_cast<std::size_t>(d)]) continue;
    for (int j = 0; j <= gdeg; ++j)
      dividend[static_cast<std::size_t>(d - gdeg + j)] ^= generator[static_cast<std::size_t>(j)];
  }
  Bits parity(static_cast<std::size_t>(r));
  for (int j = 0; j < r; ++j) parity[static_cast<std::size_t>(j)] = dividend[static_cast<std::size_t>(j)];
  return parity;
}

Bits xor_bits(const Bits& a, const Bits& b) {
  Bits out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] ^ b[i];
  return out;
}

}  // namespace

TEST_CASE("sample_message: determinism, length, bias bound") {
  REQUIRE(msgcodec::sample_message(32, 5) == msgcodec::sample_message(32, 5));
  REQUIRE(msgcodec::sample_message(32, 5).size() == 32);
  const auto big = msgcodec::sample_message(10000, 77);
  double ones = 0;
  for (auto b : big) ones += b;
  const double frac = ones / 10000.0;
  REQUIRE(frac >= 0.47);
  REQUIRE(frac <= 0.53);
  REQUIRE_THROWS_AS(msgcodec::sample_message(0, 1), InvalidArgument);
}

TEST_CASE("BCH(15,7,t=2) has the textbook generator x^8+x^7+x^6+x^4+1") {
  msgcodec::BchCode code(4, 2);
  REQUIRE(code.params().n == 15);
  REQUIRE(code.params().k == 7);
  const Bits expected = {1, 0, 0, 0, 1, 0, 1, 1, 1};  // degree-ascending
  REQUIRE(code.generator() == expected);
}

TEST_CASE("encoding is linear and systematic") {
  msgcodec::BchCode code(4, 2);
  const Bits zero(7, 0);
  REQUIRE(code.encode(zero) == Bits(15, 0));

  const Bits a = msgcodec::bits_from_string("1011001");
  const Bits b = msgcodec::bits_from_string("0101110");
  REQUIRE(code.encode(xor_bits(a, b)) == xor_bits(code.encode(a), code.encode(b)));

  const Bits cw = code.encode(a);
  REQUIRE(Bits(cw.begin(), cw.begin() + 7) == a);  // payload verbatim

  REQUIRE_THROWS_AS(code.encode(Bits(6, 0)), InvalidArgument);
}

TEST_CASE("parity bits match the independent long-division oracle") {
  for (int m : {4, 5}) {
    msgcodec::BchCode code(m, 2);
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Bits payload = msgcodec::sample_message(code.params().k, 100 + s);
      const Bits cw = code.encode(payload);
      const Bits parity(cw.begin() + code.params().k, cw.end());
      REQUIRE(parity == parity_by_long_division(payload, code.generator(), code.params().n));
    }
  }
}

TEST_CASE("decode corrects every error pattern of weight <= 2 at n=15") {
  msgcodec::BchCode code(4, 2);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Bits payload = msgcodec::sample_message(7, 200 + s);
    const Bits cw = code.encode(payload);
    // weight 0
    auto r0 = code.decode(cw);
    REQUIRE(r0.ok);
    REQUIRE(r0.corrected == 0);
    REQUIRE(r0.payload == payload);
    // weight 1 and 2, exhaustive
    for (int i = 0; i < 15; ++i) {
      Bits e1 = cw;
      e1[static_cast<std::size_t>(i)] ^= 1;
      auto r1 = code.decode(e1);
      REQUIRE(r1.ok);
      REQUIRE(r1.corrected == 1);
      REQUIRE(r1.payload == payload);
      for (int j = i + 1; j < 15; ++j) {
        Bits e2 = e1;
        e2[static_cast<std::size_t>(j)] ^= 1;
        auto r2 = code.decode(e2);
        REQUIRE(r2.ok);
        REQUIRE(r2.corrected == 2);
        REQUIRE(r2.payload == payload);
      }
    }
  }
}

TEST_CASE("3-bit patterns outside every radius-2 ball report failure") {
  msgcodec::BchCode code(4, 2);
  const Bits payload = msgcodec::bits_from_string("1100101");
  const Bits cw = code.encode(payload);
  int failures = 0, total = 0;
  for (int i = 0; i < 15 && failures < 5; ++i)
    for (int j = i + 1; j < 15; ++j)
      for (int k = j + 1; k < 15; ++k) {
        Bits e = cw;
        e[static_cast<std::size_t>(i)] ^= 1;
        e[static_cast<std::size_t>(j)] ^= 1;
        e[static_cast<std::size_t>(k)] ^= 1;
        auto r = code.decode(e);
        ++total;
        if (!r.ok) ++failures;
        // never a silent wrong answer claiming <= 2 corrections of the
        // transmitted word: if it decodes, it found SOME codeword within 2
        if (r.ok) REQUIRE(r.corrected <= 2);
      }
  REQUIRE(failures > 0);  // the sweep finds patterns outside all balls
  (void)total;
}

TEST_CASE("decode(encode(m)) == m exhaustively for k=7") {
  msgcodec::BchCode code(4, 2);
  for (int v = 0; v < 128; ++v) {
    Bits payload(7);
    for (int i = 0; i < 7; ++i) payload[static_cast<std::size_t>(i)] = (v >> i) & 1;
    auto r = code.decode(code.encode(payload));
    REQUIRE(r.ok);
    REQUIRE(r.payload == payload);
  }
}

TEST_CASE("degree-9 code handles a 512-bit channel") {
  auto chan = msgcodec::ChannelCode::for_channel(512);
  REQUIRE(chan.code().params().m == 9);
  REQUIRE(chan.code().params().n == 511);
  REQUIRE(chan.code().params().t == 5);
  REQUIRE(chan.codeword_count() == 1);
  REQUIRE(chan.pad_bits() == 1);
  REQUIRE(chan.channel_bits() == 512);
  // designed distance: k consistent with generator degree, and 5 errors correct
  REQUIRE(chan.code().params().k == 511 - static_cast<int>(chan.code().generator().size() - 1));
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Bits payload = msgcodec::sample_message(chan.payload_bits(), 300 + s);
    Bits bits = chan.encode(payload);
    Rng rng(400 + s);
    for (int e = 0; e < 5; ++e) bits[static_cast<std::size_t>(rng.below(511))] ^= 1;
    auto r = chan.decode(bits);
    REQUIRE(r.ok);
    REQUIRE(r.payload == payload);
  }
}

TEST_CASE("32-bit channel: two codewords plus two zero pad bits") {
  auto chan = msgcodec::ChannelCode::for_channel(32);
  REQUIRE(chan.codeword_count() == 2);
  REQUIRE(chan.pad_bits() == 2);
  REQUIRE(chan.payload_bits() == 14);
  const Bits payload = msgcodec::sample_message(14, 9);
  const Bits bits = chan.encode(payload);
  REQUIRE(bits.size() == 32);
  REQUIRE(bits[30] == 0);
  REQUIRE(bits[31] == 0);
  auto r = chan.decode(bits);
  REQUIRE(r.ok);
  REQUIRE(r.payload == payload);
  REQUIRE(r.corrected == 0);

  // randomized round trip with correctable noise
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Bits p = msgcodec::sample_message(14, 1000 + s);
    Bits b = chan.encode(p);
    Rng rng(2000 + s);
    b[static_cast<std::size_t>(rng.below(15))] ^= 1;        // one error in codeword 0
    b[15 + static_cast<std::size_t>(rng.below(15))] ^= 1;   // one error in codeword 1
    auto rr = chan.decode(b);
    REQUIRE(rr.ok);
    REQUIRE(rr.payload == p);
    REQUIRE(rr.corrected == 2);
  }
}

TEST_CASE("bit string serialization round-trips") {
  const Bits b = msgcodec::bits_from_string("10110");
  REQUIRE(msgcodec::bits_to_string(b) == "10110");
  REQUIRE_THROWS_AS(msgcodec::bits_from_string("10x"), InvalidArgument);
}
