#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lvmark/common.hpp"

namespace lvmark::msgcodec {

using Bits = std::vector<std::uint8_t>;  // one bit per byte, values 0/1

inline std::string bits_to_string(const Bits& b) {
  std::string s(b.size(), '0');
  for (std::size_t i = 0; i < b.size(); ++i) s[i] = b[i] ? '1' : '0';
  return s;
}

inline Bits bits_from_string(const std::string& s) {
  Bits b(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    require(s[i] == '0' || s[i] == '1', "bit string may contain only '0' and '1'");
    b[i] = s[i] == '1';
  }
  return b;
}

inline Bits sample_message(int k, std::uint64_t seed) {
  require(k >= 1, "sample_message: k must be >= 1");
  Rng rng(derive_seed(seed, 0xb175));
  Bits b(static_cast<std::size_t>(k));
  for (auto& v : b) v = static_cast<std::uint8_t>(rng.next_u64() & 1);
  return b;
}

struct BchParams {
  int m = 4;  // field degree; n = 2^m - 1
  int n = 15;
  int k = 7;
  int t = 2;
};

// ---------------------------------------------------------------------------
// Binary BCH code over GF(2^m) with designed distance 2t+1.
// Systematic layout: codeword[0..k) is the payload verbatim, codeword[k..n)
// the parity bits. Decoding runs syndromes -> Berlekamp-Massey -> Chien
// search; a word outside every radius-t ball reports failure instead of a
// silently wrong payload.
// ---------------------------------------------------------------------------

class BchCode {
 public:
  BchCode(int m, int t) {
    require(m >= 3 && m <= 12, "BCH: field degree m must be in [3, 12]");
    require(t >= 1, "BCH: t must be >= 1");
    params_.m = m;
    params_.t = t;
    params_.n = (1 << m) - 1;
    build_field();
    build_generator();
    params_.k = params_.n - static_cast<int>(generator_.size() - 1);
    require(params_.k >= 1, "BCH: t too large for this field (k < 1)");
  }

  const BchParams& params() const { return params_; }
  const Bits& generator() const { return generator_; }

  Bits encode(const Bits& payload) const {
    require(static_cast<int>(payload.size()) == params_.k,
            "bch_encode: payload length " + std::to_string(payload.size()) + " != k=" +
                std::to_string(params_.k));
    const int n = params_.n, k = params_.k, r = n - k;
    // remainder of payload(x) * x^r modulo g(x), GF(2) long division
    Bits rem(static_cast<std::size_t>(r), 0);
    for (int i = k - 1; i >= 0; --i) {
      const std::uint8_t feedback = payload[static_cast<std::size_t>(i)] ^ rem[static_cast<std::size_t>(r - 1)];
      for (int j = r - 1; j > 0; --j)
        rem[static_cast<std::size_t>(j)] =
            rem[static_cast<std::size_t>(j - 1)] ^ (feedback & generator_[static_cast<std::size_t>(j)]);
      rem[0] = feedback & generator_[0];
    }
    Bits cw(static_cast<std::size_t>(n));
    for (int i = 0; i < k; ++i) cw[static_cast<std::size_t>(i)] = payload[static_cast<std::size_t>(i)];
    for (int j = 0; j < r; ++j) cw[static_cast<std::size_t>(k + j)] = rem[static_cast<std::size_t>(j)];
    return cw;
  }

  struct DecodeResult {
    bool ok = false;
    Bits payload;
    int corrected = 0;
  };

  DecodeResult decode(const Bits& received) const {
    require(static_cast<int>(received.size()) == params_.n,
            "bch_decode: received length != n=" + std::to_string(params_.n));
    const int n = params_.n, k = params_.k, t = params_.t, r = n - k;
    // received array -> polynomial coefficients: payload bit i is coeff x^(r+i),
    // parity bit j is coeff x^j
    Bits poly(static_cast<std::size_t>(n));
    for (int i = 0; i < k; ++i) poly[static_cast<std::size_t>(r + i)] = received[static_cast<std::size_t>(i)];
    for (int j = 0; j < r; ++j) poly[static_cast<std::size_t>(j)] = received[static_cast<std::size_t>(k + j)];

    // syndromes S_1..S_2t
    std::vector<int> synd(static_cast<std::size_t>(2 * t + 1), 0);
    bool all_zero = true;
    for (int j = 1; j <= 2 * t; ++j) {
      int s = 0;
      for (int d = 0; d < n; ++d)
        if (poly[static_cast<std::size_t>(d)]) s ^= alpha_to_[static_cast<std::size_t>((static_cast<std::int64_t>(j) * d) % n)];
      synd[static_cast<std::size_t>(j)] = s;
      if (s) all_zero = false;
    }
    DecodeResult res;
    if (all_zero) {
      res.ok = true;
      res.corrected = 0;
      res.payload.assign(received.begin(), received.begin() + k);
      return res;
    }

    // Berlekamp-Massey for the error locator Lambda(x)
    std::vector<int> lambda = {1}, prev = {1};
    int l = 0, shift = 1, prev_delta = 1;
    for (int i = 0; i < 2 * t; ++i) {
      int delta = synd[static_cast<std::size_t>(i + 1)];
      for (int j = 1; j <= l && j < static_cast<int>(lambda.size()); ++j)
        delta ^= gf_mul(lambda[static_cast<std::size_t>(j)], synd[static_cast<std::size_t>(i + 1 - j)]);
      if (delta == 0) {
        ++shift;
        continue;
      }
      std::vector<int> next = lambda;
      const int coef = gf_mul(delta, gf_inv(prev_delta));
      if (next.size() < prev.size() + static_cast<std::size_t>(shift))
        next.resize(prev.size() + static_cast<std::size_t>(shift), 0);
      for (std::size_t j = 0; j < prev.size(); ++j)
        next[j + static_cast<std::size_t>(shift)] ^= gf_mul(coef, prev[j]);
      if (2 * l <= i) {
        prev = lambda;
        prev_delta = delta;
        l = i + 1 - l;
        shift = 1;
      } else {
        ++shift;
      }
      lambda = std::move(next);
    }
    while (!lambda.empty() && lambda.back() == 0) lambda.pop_back();
    const int deg = static_cast<int>(lambda.size()) - 1;
    if (deg > t || deg <= 0) return res;  // outside every radius-t ball

    // Chien search: position p is in error iff Lambda(alpha^-p) == 0
    std::vector<int> error_pos;
    for (int p = 0; p < n; ++p) {
      int v = 0;
      for (int j = 0; j <= deg; ++j) {
        if (lambda[static_cast<std::size_t>(j)] == 0) continue;
        const int e = (static_cast<std::int64_t>(j) * (n - p)) % n;
        v ^= gf_mul(lambda[static_cast<std::size_t>(j)], alpha_to_[static_cast<std::size_t>(e)]);
      }
      if (v == 0) error_pos.push_back(p);
    }
    if (static_cast<int>(error_pos.size()) != deg) return res;  // locator has non-field roots

    for (int p : error_pos) poly[static_cast<std::size_t>(p)] ^= 1;
    // verify the corrected word is a codeword
    for (int j = 1; j <= 2 * t; ++j) {
      int s = 0;
      for (int d = 0; d < n; ++d)
        if (poly[static_cast<std::size_t>(d)]) s ^= alpha_to_[static_cast<std::size_t>((static_cast<std::int64_t>(j) * d) % n)];
      if (s != 0) return res;
    }
    res.ok = true;
    res.corrected = deg;
    res.payload.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) res.payload[static_cast<std::size_t>(i)] = poly[static_cast<std::size_t>(r + i)];
    return res;
  }

 private:
  BchParams params_;
  std::vector<int> alpha_to_;  // power -> polynomial form
  std::vector<int> index_of_;  // polynomial form -> power (-1 for 0)
  Bits generator_;             // g(x) over GF(2), generator_[d] = coeff of x^d

  static int primitive_poly(int m) {
    // x^m term included; standard primitive polynomials
    static const int kPoly[13] = {0, 0, 0, 0xB, 0x13, 0x25, 0x43, 0x89, 0x11D, 0x211, 0x409, 0x805, 0x1053};
    return kPoly[m];
  }

  void build_field() {
    const int n = params_.n;
    alpha_to_.assign(static_cast<std::size_t>(n), 0);
    index_of_.assign(static_cast<std::size_t>(n) + 1, -1);
    int x = 1;
    for (int i = 0; i < n; ++i) {
      alpha_to_[static_cast<std::size_t>(i)] = x;
      index_of_[static_cast<std::size_t>(x)] = i;
      x <<= 1;
      if (x & (1 << params_.m)) x ^= primitive_poly(params_.m);
    }
  }

  int gf_mul(int a, int b) const {
    if (a == 0 || b == 0) return 0;
    const int s = index_of_[static_cast<std::size_t>(a)] + index_of_[static_cast<std::size_t>(b)];
    return alpha_to_[static_cast<std::size_t>(s % params_.n)];
  }

  int gf_inv(int a) const {
    require(a != 0, "BCH: inverse of zero");
    const int e = (params_.n - index_of_[static_cast<std::size_t>(a)]) % params_.n;
    return alpha_to_[static_cast<std::size_t>(e)];
  }

  // g(x) = lcm of the minimal polynomials of alpha^1 .. alpha^2t
  void build_generator() {
    const int n = params_.n;
    std::vector<bool> covered(static_cast<std::size_t>(n), false);
    // g as a polynomial over GF(2^m); coefficients stay in {0,1} at the end
    std::vector<int> g = {1};
    for (int s = 1; s <= 2 * params_.t; ++s) {
      if (covered[static_cast<std::size_t>(s)]) continue;
      // cyclotomic coset of s
      std::vector<int> coset;
      int e = s;
      do {
        coset.push_back(e);
        covered[static_cast<std::size_t>(e)] = true;
        e = (2 * e) % n;
      } while (e != s);
      // minimal polynomial: product of (x - alpha^e) over the coset
      std::vector<int> mp = {1};
      for (int ex : coset) {
        std::vector<int> next(mp.size() + 1, 0);
        const int root = alpha_to_[static_cast<std::size_t>(ex)];
        for (std::size_t d = 0; d < mp.size(); ++d) {
          next[d + 1] ^= mp[d];              // x * mp
          next[d] ^= gf_mul(root, mp[d]);    // alpha^e * mp (char 2: minus == plus)
        }
        mp = std::move(next);
      }
      // g *= mp
      std::vector<int> ng(g.size() + mp.size() - 1, 0);
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < mp.size(); ++j) ng[i + j] ^= gf_mul(g[i], mp[j]);
      g = std::move(ng);
    }
    generator_.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      require(g[i] == 0 || g[i] == 1, "BCH: generator polynomial is not binary");
      generator_[i] = static_cast<std::uint8_t>(g[i]);
    }
  }
};

// ---------------------------------------------------------------------------
// Channel layout: a raw embedded width of n_channel bits is filled with as
// many codewords as fit, followed by fixed zero pad bits. The pad carries no
// payload and is excluded from payload accuracy.
// ---------------------------------------------------------------------------

struct ChannelDecodeResult {
  bool ok = false;          // every codeword decoded
  Bits payload;             // concatenated payloads (valid when ok)
  int corrected = 0;        // total corrected bit count
  int failed_codewords = 0;
};

class ChannelCode {
 public:
  ChannelCode(int n_channel, int m, int t) : code_(m, t), n_channel_(n_channel) {
    const int n = code_.params().n;
    require(n_channel >= n, "channel width " + std::to_string(n_channel) +
                                " is smaller than one codeword (n=" + std::to_string(n) + ")");
    codewords_ = n_channel / n;
    pad_ = n_channel - codewords_ * n;
  }

  // Default code choice: BCH(15,7,t=2) for short channels; a degree-9 code
  // for 512-bit-class channels (one 511-bit codeword plus pad).
  static ChannelCode for_channel(int n_channel, int m = 0, int t = 0) {
    if (m == 0) m = n_channel >= 511 ? 9 : 4;
    if (t == 0) t = n_channel >= 511 ? 5 : 2;
    return ChannelCode(n_channel, m, t);
  }

  const BchCode& code() const { return code_; }
  int channel_bits() const { return n_channel_; }
  int payload_bits() const { return codewords_ * code_.params().k; }
  int codeword_count() const { return codewords_; }
  int pad_bits() const { return pad_; }

  Bits encode(const Bits& payload) const {
    require(static_cast<int>(payload.size()) == payload_bits(),
            "channel encode: payload length " + std::to_string(payload.size()) + " != " +
                std::to_string(payload_bits()));
    const int n = code_.params().n, k = code_.params().k;
    Bits out;
    out.reserve(static_cast<std::size_t>(n_channel_));
    for (int c = 0; c < codewords_; ++c) {
      Bits part(payload.begin() + static_cast<std::ptrdiff_t>(c) * k,
                payload.begin() + static_cast<std::ptrdiff_t>(c + 1) * k);
      Bits cw = code_.encode(part);
      out.insert(out.end(), cw.begin(), cw.end());
    }
    out.resize(static_cast<std::size_t>(n_channel_), 0);  // zero pad
    return out;
  }

  ChannelDecodeResult decode(const Bits& bits) const {
    require(static_cast<int>(bits.size()) == n_channel_, "channel decode: length mismatch");
    const int n = code_.params().n;
    ChannelDecodeResult res;
    res.ok = true;
    for (int c = 0; c < codewords_; ++c) {
      Bits cw(bits.begin() + static_cast<std::ptrdiff_t>(c) * n,
              bits.begin() + static_cast<std::ptrdiff_t>(c + 1) * n);
      auto dr = code_.decode(cw);
      if (!dr.ok) {
        res.ok = false;
        ++res.failed_codewords;
        dr.payload.assign(static_cast<std::size_t>(code_.params().k), 0);
      }
      res.corrected += dr.corrected;
      res.payload.insert(res.payload.end(), dr.payload.begin(), dr.payload.end());
    }
    return res;
  }

 private:
  BchCode code_;
  int n_channel_;
  int codewords_ = 0;
  int pad_ = 0;
};

}  // namespace lvmark::msgcodec
