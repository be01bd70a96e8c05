#pragma once

#include <sodium.h>

#include <cstring>
#include <mutex>

#include "iotchan/bytes.hpp"

namespace iotchan {

using Digest32 = std::array<std::uint8_t, 32>;
using Digest20 = std::array<std::uint8_t, 20>;

namespace detail {

inline void ensure_sodium() {
    static std::once_flag flag;
    std::call_once(flag, [] {
        if (sodium_init() < 0) throw std::runtime_error("libsodium initialization failed");
    });
}

// RIPEMD-160 per the published specification. Kept in-tree because OpenSSL 3
// moved it behind the legacy provider and libsodium never shipped it.
class Ripemd160 {
public:
    static Digest20 digest(ByteView msg) {
        std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};

        Bytes padded(msg.begin(), msg.end());
        const std::uint64_t bit_len = static_cast<std::uint64_t>(msg.size()) * 8;
        padded.push_back(0x80);
        while (padded.size() % 64 != 56) padded.push_back(0x00);
        append_u64le(padded, bit_len);

        for (std::size_t off = 0; off < padded.size(); off += 64) {
            std::uint32_t x[16];
            for (int i = 0; i < 16; ++i) {
                x[i] = static_cast<std::uint32_t>(padded[off + 4 * i]) |
                       static_cast<std::uint32_t>(padded[off + 4 * i + 1]) << 8 |
                       static_cast<std::uint32_t>(padded[off + 4 * i + 2]) << 16 |
                       static_cast<std::uint32_t>(padded[off + 4 * i + 3]) << 24;
            }
            compress(h, x);
        }

        Digest20 out;
        for (int i = 0; i < 5; ++i) {
            out[4 * i] = static_cast<std::uint8_t>(h[i]);
            out[4 * i + 1] = static_cast<std::uint8_t>(h[i] >> 8);
            out[4 * i + 2] = static_cast<std::uint8_t>(h[i] >> 16);
            out[4 * i + 3] = static_cast<std::uint8_t>(h[i] >> 24);
        }
        return out;
    }

private:
    static std::uint32_t rol(std::uint32_t x, int n) { return (x << n) | (x >> (32 - n)); }

    static std::uint32_t f(int j, std::uint32_t x, std::uint32_t y, std::uint32_t z) {
        if (j < 16) return x ^ y ^ z;
        if (j < 32) return (x & y) | (~x & z);
        if (j < 48) return (x | ~y) ^ z;
        if (j < 64) return (x & z) | (y & ~z);
        return x ^ (y | ~z);
    }

    static void compress(std::uint32_t h[5], const std::uint32_t x[16]) {
        static constexpr std::uint8_t r1[80] = {
            0, 1, 2,  3,  4,  5,  6,  7,  8,  9, 10, 11, 12, 13, 14, 15,
            7, 4, 13, 1,  10, 6,  15, 3,  12, 0, 9,  5,  2,  14, 11, 8,
            3, 10, 14, 4, 9,  15, 8,  1,  2,  7, 0,  6,  13, 11, 5,  12,
            1, 9, 11, 10, 0,  8,  12, 4,  13, 3, 7,  15, 14, 5,  6,  2,
            4, 0, 5,  9,  7,  12, 2,  10, 14, 1, 3,  8,  11, 6,  15, 13};
        static constexpr std::uint8_t r2[80] = {
            5,  14, 7, 0, 9, 2,  11, 4,  13, 6,  15, 8,  1,  10, 3,  12,
            6,  11, 3, 7, 0, 13, 5,  10, 14, 15, 8,  12, 4,  9,  1,  2,
            15, 5,  1, 3, 7, 14, 6,  9,  11, 8,  12, 2,  10, 0,  4,  13,
            8,  6,  4, 1, 3, 11, 15, 0,  5,  12, 2,  13, 9,  7,  10, 14,
            12, 15, 10, 4, 1, 5,  8,  7,  6,  2,  13, 14, 0,  3,  9,  11};
        static constexpr std::uint8_t s1[80] = {
            11, 14, 15, 12, 5,  8,  7,  9,  11, 13, 14, 15, 6,  7,  9,  8,
            7,  6,  8,  13, 11, 9,  7,  15, 7,  12, 15, 9,  11, 7,  13, 12,
            11, 13, 6,  7,  14, 9,  13, 15, 14, 8,  13, 6,  5,  12, 7,  5,
            11, 12, 14, 15, 14, 15, 9,  8,  9,  14, 5,  6,  8,  6,  5,  12,
            9,  15, 5,  11, 6,  8,  13, 12, 5,  12, 13, 14, 11, 8,  5,  6};
        static constexpr std::uint8_t s2[80] = {
            8,  9,  9,  11, 13, 15, 15, 5,  7,  7,  8,  11, 14, 14, 12, 6,
            9,  13, 15, 7,  12, 8,  9,  11, 7,  7,  12, 7,  6,  15, 13, 11,
            9,  7,  15, 11, 8,  6,  6,  14, 12, 13, 5,  14, 13, 13, 7,  5,
            15, 5,  8,  11, 14, 14, 6,  14, 6,  9,  12, 9,  12, 5,  15, 8,
            8,  5,  12, 9,  12, 5,  14, 6,  8,  13, 6,  5,  15, 13, 11, 11};
        static constexpr std::uint32_t k1[5] = {0x00000000u, 0x5A827999u, 0x6ED9EBA1u,
                                                0x8F1BBCDCu, 0xA953FD4Eu};
        static constexpr std::uint32_t k2[5] = {0x50A28BE6u, 0x5C4DD124u, 0x6D703EF3u,
                                                0x7A6D76E9u, 0x00000000u};

        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
        std::uint32_t A = h[0], B = h[1], C = h[2], D = h[3], E = h[4];
        for (int j = 0; j < 80; ++j) {
            std::uint32_t t = rol(a + f(j, b, c, d) + x[r1[j]] + k1[j / 16], s1[j]) + e;
            a = e; e = d; d = rol(c, 10); c = b; b = t;
            t = rol(A + f(79 - j, B, C, D) + x[r2[j]] + k2[j / 16], s2[j]) + E;
            A = E; E = D; D = rol(C, 10); C = B; B = t;
        }
        std::uint32_t t = h[1] + c + D;
        h[1] = h[2] + d + E;
        h[2] = h[3] + e + A;
        h[3] = h[4] + a + B;
        h[4] = h[0] + b + C;
        h[0] = t;
    }
};

}  // namespace detail

inline Digest32 sha256(ByteView data) {
    detail::ensure_sodium();
    Digest32 out;
    crypto_hash_sha256(out.data(), data.data(), data.size());
    return out;
}

/// Double SHA-256, used for transaction ids and signing digests.
inline Digest32 sha256d(ByteView data) {
    Digest32 once = sha256(data);
    return sha256(ByteView{once.data(), once.size()});
}

inline Digest20 ripemd160(ByteView data) { return detail::Ripemd160::digest(data); }

/// RIPEMD-160(SHA-256(data)), the key- and script-hash used by all locking scripts.
inline Digest20 hash160(ByteView data) {
    Digest32 inner = sha256(data);
    return ripemd160(ByteView{inner.data(), inner.size()});
}

// ---------------------------------------------------------------------------
// Signatures. Ed25519 behind a narrow interface: deterministic, publicly
// verifiable, and swappable for another discrete-log scheme without touching
// the script or channel layers. Public keys carry a one-byte scheme prefix so
// they serialize at the conventional 33 bytes.
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kPubKeyPrefix = 0x02;

struct PublicKey {
    std::array<std::uint8_t, 33> bytes{};

    auto operator<=>(const PublicKey&) const = default;
    ByteView view() const { return ByteView{bytes.data(), bytes.size()}; }
    std::string hex() const { return to_hex(view()); }
};

struct SecretKey {
    std::array<std::uint8_t, 32> bytes{};

    auto operator<=>(const SecretKey&) const = default;
    ByteView view() const { return ByteView{bytes.data(), bytes.size()}; }
};

struct Signature {
    std::array<std::uint8_t, 64> bytes{};

    auto operator<=>(const Signature&) const = default;
    ByteView view() const { return ByteView{bytes.data(), bytes.size()}; }
};

/// Public key is a pure function of the secret key.
inline PublicKey public_key_of(const SecretKey& sk) {
    detail::ensure_sodium();
    unsigned char pk[crypto_sign_PUBLICKEYBYTES];
    unsigned char sk64[crypto_sign_SECRETKEYBYTES];
    crypto_sign_seed_keypair(pk, sk64, sk.bytes.data());
    PublicKey out;
    out.bytes[0] = kPubKeyPrefix;
    std::memcpy(out.bytes.data() + 1, pk, 32);
    return out;
}

struct Keypair {
    PublicKey pk;
    SecretKey sk;
};

inline Signature sign(const SecretKey& sk, ByteView message) {
    detail::ensure_sodium();
    unsigned char pk[crypto_sign_PUBLICKEYBYTES];
    unsigned char sk64[crypto_sign_SECRETKEYBYTES];
    crypto_sign_seed_keypair(pk, sk64, sk.bytes.data());
    Signature sig;
    crypto_sign_detached(sig.bytes.data(), nullptr, message.data(), message.size(), sk64);
    return sig;
}

inline bool verify(const PublicKey& pk, ByteView message, const Signature& sig) {
    detail::ensure_sodium();
    if (pk.bytes[0] != kPubKeyPrefix) return false;
    return crypto_sign_verify_detached(sig.bytes.data(), message.data(), message.size(),
                                       pk.bytes.data() + 1) == 0;
}

// ---------------------------------------------------------------------------
// Deterministic hierarchical derivation. A device holding only the master
// seed and a state index can rebuild every key it ever used.
// ---------------------------------------------------------------------------

enum class Party : std::uint8_t {
    DeviceA = 0,
    GatewayB = 1,
    ThirdPartyPub = 2,
    ThirdPartyWatch = 3,
};

enum class KeyRole : std::uint8_t {
    Funding = 0,
    Close = 1,
    StateA = 2,   // per-state CSV self-spend slot
    StateB = 3,   // per-state direct-payment slot
    StateC = 4,   // per-state revocation slot, handed over on update
    ThirdPartyA = 5,
    ThirdPartyRc = 6,  // device-side recovery output key
};

struct KeyPathError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct KeyPath {
    Party party = Party::DeviceA;
    KeyRole role = KeyRole::Funding;
    std::uint32_t state_index = 0;
    std::uint16_t member_index = 0;

    auto operator<=>(const KeyPath&) const = default;

    void validate() const {
        const bool per_state =
            role == KeyRole::StateA || role == KeyRole::StateB || role == KeyRole::StateC;
        if (per_state && state_index < 1)
            throw KeyPathError("state-slot key paths require state_index >= 1");
        if ((role == KeyRole::Funding || role == KeyRole::Close) && state_index != 0)
            throw KeyPathError("funding/close key paths require state_index == 0");
    }

    // Fixed 8-byte little-endian encoding: party, role, state_index, member_index.
    std::array<std::uint8_t, 8> encode() const {
        std::array<std::uint8_t, 8> out{};
        out[0] = static_cast<std::uint8_t>(party);
        out[1] = static_cast<std::uint8_t>(role);
        out[2] = static_cast<std::uint8_t>(state_index);
        out[3] = static_cast<std::uint8_t>(state_index >> 8);
        out[4] = static_cast<std::uint8_t>(state_index >> 16);
        out[5] = static_cast<std::uint8_t>(state_index >> 24);
        out[6] = static_cast<std::uint8_t>(member_index);
        out[7] = static_cast<std::uint8_t>(member_index >> 8);
        return out;
    }
};

/// Child secret = SHA-256(master_seed || encode(path)). Total and referentially
/// transparent; distinct paths collide only with hash probability.
inline Keypair derive_keypair(const Digest32& master_seed, const KeyPath& path) {
    path.validate();
    Bytes material(master_seed.begin(), master_seed.end());
    auto enc = path.encode();
    append(material, ByteView{enc.data(), enc.size()});
    SecretKey sk{sha256(material)};
    return Keypair{public_key_of(sk), sk};
}

}  // namespace iotchan
