#include <fstream>
#include <random>

#include "catch_amalgamated.hpp"

#include "iotchan/crypto.hpp"

using namespace iotchan;

namespace {

Bytes ascii(const std::string& s) { return Bytes(s.begin(), s.end()); }

Digest32 random_seed(std::mt19937_64& rng) {
    Digest32 seed;
    for (auto& b : seed) b = static_cast<std::uint8_t>(rng());
    return seed;
}

}  // namespace

TEST_CASE("ripemd160 matches the published test vectors") {
    auto hex_of = [](const Digest20& d) { return to_hex({d.data(), d.size()}); };
    CHECK(hex_of(ripemd160({})) == "9c1185a5c5e9fc54612808977ee8f548b2258d31");
    Bytes abc = ascii("abc");
    CHECK(hex_of(ripemd160({abc.data(), abc.size()})) ==
          "8eb208f7e05d987a9b044a8e98c6b087f15a0bfc");
    Bytes md = ascii("message digest");
    CHECK(hex_of(ripemd160({md.data(), md.size()})) ==
          "5d0689ef49d2fae572b881b123a85ffa21595f36");
    Bytes million(1000000, 'a');
    CHECK(hex_of(ripemd160({million.data(), million.size()})) ==
          "52783243c1697bdbe16d37f97f68f08325dc1528");
}

TEST_CASE("hash160 is RIPEMD-160 of SHA-256") {
    auto hex_of = [](const Digest20& d) { return to_hex({d.data(), d.size()}); };
    CHECK(hex_of(hash160({})) == "b472a266d0bd89c13706a4132ccfb16f7c3b9fcb");
    // Value frozen from an independent RIPEMD160(SHA256(.)) oracle.
    Bytes abc = ascii("abc");
    CHECK(hex_of(hash160({abc.data(), abc.size()})) ==
          "bb1be98c142444d7a56aa3981c3942a978e4dc33");
    CHECK(hash160({abc.data(), abc.size()}) == hash160({abc.data(), abc.size()}));
}

TEST_CASE("sha256 sanity vector") {
    Bytes abc = ascii("abc");
    CHECK(to_hex({sha256({abc.data(), abc.size()}).data(), 32}) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("key paths encode to the fixed 8-byte layout") {
    KeyPath path{Party::GatewayB, KeyRole::StateC, 0x01020304u, 0x0506};
    auto enc = path.encode();
    CHECK(enc == std::array<std::uint8_t, 8>{1, 4, 0x04, 0x03, 0x02, 0x01, 0x06, 0x05});
}

TEST_CASE("key path validation") {
    CHECK_THROWS_AS(derive_keypair({}, {Party::DeviceA, KeyRole::StateA, 0, 0}),
                    KeyPathError);
    CHECK_THROWS_AS(derive_keypair({}, {Party::DeviceA, KeyRole::Funding, 3, 0}),
                    KeyPathError);
    CHECK_NOTHROW(derive_keypair({}, {Party::DeviceA, KeyRole::StateA, 1, 0}));
    CHECK_NOTHROW(derive_keypair({}, {Party::DeviceA, KeyRole::ThirdPartyRc, 2, 0}));
}

TEST_CASE("derivation is deterministic and path-injective") {
    std::mt19937_64 rng(7);
    for (int round = 0; round < 20; ++round) {
        Digest32 seed = random_seed(rng);
        KeyPath p1{Party::DeviceA, KeyRole::StateA,
                   static_cast<std::uint32_t>(1 + rng() % 40),
                   static_cast<std::uint16_t>(rng() % 4)};
        KeyPath p2 = p1;
        p2.state_index += 1;

        Keypair first = derive_keypair(seed, p1);
        Keypair again = derive_keypair(seed, p1);
        Keypair other = derive_keypair(seed, p2);
        CHECK(first.pk == again.pk);
        CHECK(first.sk == again.sk);
        CHECK(first.sk != other.sk);
        CHECK(first.pk != other.pk);
        CHECK(public_key_of(first.sk) == first.pk);
    }
}

TEST_CASE("golden derivation for the zero seed") {
    Digest32 zero{};
    Keypair kp = derive_keypair(zero, {Party::DeviceA, KeyRole::Funding, 0, 0});
    std::ifstream golden(std::string(IOTCHAN_SOURCE_DIR) +
                         "/tests/golden/derive_zero_seed_a_funding.txt");
    REQUIRE(golden.good());
    std::string expected;
    golden >> expected;
    CHECK(kp.pk.hex() == expected);
}

TEST_CASE("signatures verify for the matching pair only") {
    std::mt19937_64 rng(11);
    for (int round = 0; round < 10; ++round) {
        Digest32 seed = random_seed(rng);
        Keypair kp = derive_keypair(seed, {Party::DeviceA, KeyRole::StateB, 1, 0});
        Keypair other = derive_keypair(seed, {Party::GatewayB, KeyRole::StateB, 1, 0});
        Bytes message(32 + rng() % 32);
        for (auto& b : message) b = static_cast<std::uint8_t>(rng());

        Signature sig = sign(kp.sk, {message.data(), message.size()});
        CHECK(verify(kp.pk, {message.data(), message.size()}, sig));
        CHECK_FALSE(verify(other.pk, {message.data(), message.size()}, sig));

        Bytes flipped = message;
        flipped[rng() % flipped.size()] ^= 0x01;
        CHECK_FALSE(verify(kp.pk, {flipped.data(), flipped.size()}, sig));

        Signature again = sign(kp.sk, {message.data(), message.size()});
        CHECK(sig == again);  // deterministic
    }
}

TEST_CASE("all keys for states 1..j rebuild from seed and index alone") {
    Digest32 seed = array_from_hex<32>(
        "00112233445566778899aabbccddeeff00112233445566778899aabbccddeeff");
    const std::uint32_t j = 5;
    // Nothing beyond (seed, j) is needed: reconstruct twice and compare.
    std::vector<Keypair> pass1, pass2;
    for (std::uint32_t state = 1; state <= j; ++state)
        for (KeyRole role : {KeyRole::StateA, KeyRole::StateB, KeyRole::StateC,
                             KeyRole::ThirdPartyRc}) {
            pass1.push_back(derive_keypair(seed, {Party::DeviceA, role, state, 0}));
            pass2.push_back(derive_keypair(seed, {Party::DeviceA, role, state, 0}));
        }
    REQUIRE(pass1.size() == pass2.size());
    for (std::size_t i = 0; i < pass1.size(); ++i) {
        CHECK(pass1[i].pk == pass2[i].pk);
        CHECK(pass1[i].sk == pass2[i].sk);
    }
}
