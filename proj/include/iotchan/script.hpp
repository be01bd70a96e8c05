#pragma once

#include <optional>
#include <sstream>

#include "iotchan/crypto.hpp"

namespace iotchan {

// ---------------------------------------------------------------------------
// Stack-machine script subset: the opcodes the channel transactions use and
// nothing more. Grammar and opcode-byte table are documented in the README.
// ---------------------------------------------------------------------------

enum class OpType : std::uint8_t {
    Push,
    Const,  // small integer 0..16
    Dup,
    Hash160,
    Equal,
    EqualVerify,
    CheckSig,
    CheckSigVerify,
    CheckMultisig,
    CheckMultisigVerify,
    CheckSequenceVerify,
    Drop,
    If,
    Else,
    EndIf,
};

inline constexpr std::size_t kMaxPushBytes = 75;
inline constexpr std::size_t kMaxScriptBytes = 10'000;
inline constexpr std::size_t kMaxStackDepth = 1'000;
inline constexpr int kMaxMultisigKeys = 15;

struct Opcode {
    OpType type = OpType::Drop;
    Bytes payload;   // Push only
    int value = 0;   // Const only

    bool operator==(const Opcode&) const = default;

    static Opcode push(Bytes data) { return Opcode{OpType::Push, std::move(data), 0}; }
    static Opcode constant(int v) { return Opcode{OpType::Const, {}, v}; }
    static Opcode simple(OpType t) { return Opcode{t, {}, 0}; }
};

using Script = std::vector<Opcode>;

enum class ParseErrorKind { UnknownToken, UnbalancedConditional, PushTooLarge };

struct ScriptParseError : std::runtime_error {
    ParseErrorKind kind;
    ScriptParseError(ParseErrorKind k, const std::string& what)
        : std::runtime_error(what), kind(k) {}
};

namespace detail {

inline const char* mnemonic(OpType t) {
    switch (t) {
        case OpType::Dup: return "DUP";
        case OpType::Hash160: return "HASH160";
        case OpType::Equal: return "EQUAL";
        case OpType::EqualVerify: return "EQUALVERIFY";
        case OpType::CheckSig: return "CHECKSIG";
        case OpType::CheckSigVerify: return "CHECKSIGVERIFY";
        case OpType::CheckMultisig: return "CHECKMULTISIG";
        case OpType::CheckMultisigVerify: return "CHECKMULTISIGVERIFY";
        case OpType::CheckSequenceVerify: return "CHECKSEQUENCEVERIFY";
        case OpType::Drop: return "DROP";
        case OpType::If: return "IF";
        case OpType::Else: return "ELSE";
        case OpType::EndIf: return "ENDIF";
        default: return "?";
    }
}

inline std::optional<OpType> mnemonic_to_op(const std::string& token) {
    static const std::pair<const char*, OpType> table[] = {
        {"DUP", OpType::Dup},
        {"HASH160", OpType::Hash160},
        {"EQUAL", OpType::Equal},
        {"EQUALVERIFY", OpType::EqualVerify},
        {"CHECKSIG", OpType::CheckSig},
        {"CHECKSIGVERIFY", OpType::CheckSigVerify},
        {"CHECKMULTISIG", OpType::CheckMultisig},
        {"CHECKMULTISIGVERIFY", OpType::CheckMultisigVerify},
        {"CHECKSEQUENCEVERIFY", OpType::CheckSequenceVerify},
        {"CSV", OpType::CheckSequenceVerify},
        {"DROP", OpType::Drop},
        {"IF", OpType::If},
        {"ELSE", OpType::Else},
        {"ENDIF", OpType::EndIf},
    };
    for (const auto& [name, op] : table)
        if (token == name) return op;
    return std::nullopt;
}

// CHECKSIG DROP / CHECKMULTISIG DROP chains in the commitment scripts verify a
// key and discard the result; literal DROP semantics would verify nothing, so
// the parser folds the pair into the fail-fast VERIFY form.
inline void fold_verify_drop(Script& script) {
    Script out;
    out.reserve(script.size());
    for (const Opcode& op : script) {
        if (op.type == OpType::Drop && !out.empty()) {
            if (out.back().type == OpType::CheckSig) {
                out.back().type = OpType::CheckSigVerify;
                continue;
            }
            if (out.back().type == OpType::CheckMultisig) {
                out.back().type = OpType::CheckMultisigVerify;
                continue;
            }
        }
        out.push_back(op);
    }
    script = std::move(out);
}

inline void check_conditionals(const Script& script) {
    int depth = 0;
    std::vector<bool> else_seen;
    for (const Opcode& op : script) {
        switch (op.type) {
            case OpType::If:
                ++depth;
                else_seen.push_back(false);
                break;
            case OpType::Else:
                if (depth == 0 || else_seen.back())
                    throw ScriptParseError(ParseErrorKind::UnbalancedConditional,
                                           "ELSE without matching IF");
                else_seen.back() = true;
                break;
            case OpType::EndIf:
                if (depth == 0)
                    throw ScriptParseError(ParseErrorKind::UnbalancedConditional,
                                           "ENDIF without matching IF");
                --depth;
                else_seen.pop_back();
                break;
            default:
                break;
        }
    }
    if (depth != 0)
        throw ScriptParseError(ParseErrorKind::UnbalancedConditional, "unterminated IF");
}

}  // namespace detail

/// Parse the whitespace-separated textual form: `<hex>` pushes, decimal 0..16
/// small-integer constants, larger decimals minimal-LE pushes, and the opcode
/// mnemonics used by the transaction templates.
inline Script parse_script(const std::string& text) {
    Script script;
    std::istringstream in(text);
    std::string token;
    while (in >> token) {
        if (token.size() >= 2 && token.front() == '<' && token.back() == '>') {
            Bytes payload;
            try {
                payload = from_hex(std::string_view(token).substr(1, token.size() - 2));
            } catch (const std::invalid_argument&) {
                throw ScriptParseError(ParseErrorKind::UnknownToken,
                                       "bad hex push: " + token);
            }
            if (payload.size() > kMaxPushBytes)
                throw ScriptParseError(ParseErrorKind::PushTooLarge,
                                       "push exceeds 75 bytes");
            script.push_back(Opcode::push(std::move(payload)));
            continue;
        }
        if (!token.empty() && std::all_of(token.begin(), token.end(),
                                          [](char c) { return c >= '0' && c <= '9'; })) {
            unsigned long v = std::stoul(token);
            if (v <= 16)
                script.push_back(Opcode::constant(static_cast<int>(v)));
            else
                script.push_back(Opcode::push(encode_number(v)));
            continue;
        }
        auto op = detail::mnemonic_to_op(token);
        if (!op)
            throw ScriptParseError(ParseErrorKind::UnknownToken, "unknown token: " + token);
        script.push_back(Opcode::simple(*op));
    }
    detail::fold_verify_drop(script);
    detail::check_conditionals(script);
    return script;
}

// Canonical byte form. One byte per mnemonic, pushes length-prefixed; the
// values follow the conventional Bitcoin assignments so the table reads
// familiarly: OP_0=0x00, pushes 0x01..0x4b, OP_1..OP_16=0x51..0x60, IF=0x63,
// ELSE=0x67, ENDIF=0x68, DROP=0x75, DUP=0x76, EQUAL=0x87, EQUALVERIFY=0x88,
// HASH160=0xa9, CHECKSIG=0xac/0xad, CHECKMULTISIG=0xae/0xaf, CSV=0xb2.
inline Bytes serialize_script(const Script& script) {
    Bytes out;
    for (const Opcode& op : script) {
        switch (op.type) {
            case OpType::Push:
                out.push_back(static_cast<std::uint8_t>(op.payload.size()));
                append(out, ByteView{op.payload.data(), op.payload.size()});
                break;
            case OpType::Const:
                out.push_back(op.value == 0 ? 0x00
                                            : static_cast<std::uint8_t>(0x50 + op.value));
                break;
            case OpType::If: out.push_back(0x63); break;
            case OpType::Else: out.push_back(0x67); break;
            case OpType::EndIf: out.push_back(0x68); break;
            case OpType::Drop: out.push_back(0x75); break;
            case OpType::Dup: out.push_back(0x76); break;
            case OpType::Equal: out.push_back(0x87); break;
            case OpType::EqualVerify: out.push_back(0x88); break;
            case OpType::Hash160: out.push_back(0xa9); break;
            case OpType::CheckSig: out.push_back(0xac); break;
            case OpType::CheckSigVerify: out.push_back(0xad); break;
            case OpType::CheckMultisig: out.push_back(0xae); break;
            case OpType::CheckMultisigVerify: out.push_back(0xaf); break;
            case OpType::CheckSequenceVerify: out.push_back(0xb2); break;
        }
    }
    return out;
}

inline Script parse_script_bytes(ByteView data) {
    Script script;
    std::size_t i = 0;
    while (i < data.size()) {
        std::uint8_t b = data[i++];
        if (b == 0x00) {
            script.push_back(Opcode::constant(0));
        } else if (b >= 0x01 && b <= 0x4b) {
            if (i + b > data.size())
                throw ScriptParseError(ParseErrorKind::UnknownToken, "truncated push");
            script.push_back(Opcode::push(Bytes(data.begin() + i, data.begin() + i + b)));
            i += b;
        } else if (b >= 0x51 && b <= 0x60) {
            script.push_back(Opcode::constant(b - 0x50));
        } else {
            OpType t;
            switch (b) {
                case 0x63: t = OpType::If; break;
                case 0x67: t = OpType::Else; break;
                case 0x68: t = OpType::EndIf; break;
                case 0x75: t = OpType::Drop; break;
                case 0x76: t = OpType::Dup; break;
                case 0x87: t = OpType::Equal; break;
                case 0x88: t = OpType::EqualVerify; break;
                case 0xa9: t = OpType::Hash160; break;
                case 0xac: t = OpType::CheckSig; break;
                case 0xad: t = OpType::CheckSigVerify; break;
                case 0xae: t = OpType::CheckMultisig; break;
                case 0xaf: t = OpType::CheckMultisigVerify; break;
                case 0xb2: t = OpType::CheckSequenceVerify; break;
                default:
                    throw ScriptParseError(ParseErrorKind::UnknownToken,
                                           "unknown opcode byte " + std::to_string(b));
            }
            script.push_back(Opcode::simple(t));
        }
    }
    detail::fold_verify_drop(script);
    detail::check_conditionals(script);
    return script;
}

inline std::string script_to_text(const Script& script) {
    std::string out;
    for (const Opcode& op : script) {
        if (!out.empty()) out.push_back(' ');
        switch (op.type) {
            case OpType::Push: out += "<" + to_hex({op.payload.data(), op.payload.size()}) + ">"; break;
            case OpType::Const: out += std::to_string(op.value); break;
            default: out += detail::mnemonic(op.type); break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Execution.
// ---------------------------------------------------------------------------

/// Everything a script may consult about the spend being validated.
struct ExecContext {
    Digest32 signing_digest{};         // message CHECKSIG verifies
    std::int64_t input_confirmation_height = 0;
    std::int64_t current_height = 0;
    std::uint32_t input_sequence = 0;  // relative-locktime claim on the input
};

enum class ExecErrorKind { None, StackUnderflow, VerifyFailed, ScriptError };

struct ExecResult {
    bool ok = false;
    ExecErrorKind error = ExecErrorKind::None;
    std::string detail;

    explicit operator bool() const { return ok; }

    static ExecResult success() { return ExecResult{true, ExecErrorKind::None, {}}; }
    static ExecResult fail(ExecErrorKind kind, std::string what) {
        return ExecResult{false, kind, std::move(what)};
    }
};

namespace detail {

using Stack = std::vector<Bytes>;

inline bool truthy(const Bytes& v) {
    for (std::uint8_t b : v)
        if (b != 0) return true;
    return false;
}

inline Bytes bool_bytes(bool b) { return b ? Bytes{1} : Bytes{}; }

class Interpreter {
public:
    Interpreter(const ExecContext& ctx, Stack& stack) : ctx_(ctx), stack_(stack) {}

    ExecResult run(const Script& script) {
        if (serialize_script(script).size() > kMaxScriptBytes)
            return ExecResult::fail(ExecErrorKind::ScriptError, "script exceeds size limit");
        std::vector<bool> exec_branch;  // per open IF: are we in the taken branch
        for (const Opcode& op : script) {
            const bool executing =
                std::all_of(exec_branch.begin(), exec_branch.end(), [](bool b) { return b; });
            if (op.type == OpType::If) {
                if (!executing) {
                    exec_branch.push_back(false);
                    continue;
                }
                if (stack_.empty())
                    return ExecResult::fail(ExecErrorKind::StackUnderflow, "IF on empty stack");
                exec_branch.push_back(truthy(pop()));
                continue;
            }
            if (op.type == OpType::Else) {
                if (exec_branch.empty())
                    return ExecResult::fail(ExecErrorKind::ScriptError, "ELSE without IF");
                exec_branch.back() = !exec_branch.back();
                continue;
            }
            if (op.type == OpType::EndIf) {
                if (exec_branch.empty())
                    return ExecResult::fail(ExecErrorKind::ScriptError, "ENDIF without IF");
                exec_branch.pop_back();
                continue;
            }
            if (!executing) continue;
            ExecResult r = step(op);
            if (!r.ok) return r;
            if (stack_.size() > kMaxStackDepth)
                return ExecResult::fail(ExecErrorKind::ScriptError, "stack depth limit");
        }
        if (!exec_branch.empty())
            return ExecResult::fail(ExecErrorKind::ScriptError, "unterminated IF");
        return ExecResult::success();
    }

private:
    Bytes pop() {
        Bytes v = std::move(stack_.back());
        stack_.pop_back();
        return v;
    }

    ExecResult need(std::size_t n, const char* who) {
        if (stack_.size() < n)
            return ExecResult::fail(ExecErrorKind::StackUnderflow, who);
        return ExecResult::success();
    }

    ExecResult step(const Opcode& op) {
        switch (op.type) {
            case OpType::Push:
                stack_.push_back(op.payload);
                return ExecResult::success();
            case OpType::Const:
                stack_.push_back(encode_number(static_cast<std::uint64_t>(op.value)));
                return ExecResult::success();
            case OpType::Dup: {
                if (auto r = need(1, "DUP"); !r.ok) return r;
                stack_.push_back(stack_.back());
                return ExecResult::success();
            }
            case OpType::Drop: {
                if (auto r = need(1, "DROP"); !r.ok) return r;
                pop();
                return ExecResult::success();
            }
            case OpType::Hash160: {
                if (auto r = need(1, "HASH160"); !r.ok) return r;
                Bytes v = pop();
                Digest20 h = hash160({v.data(), v.size()});
                stack_.push_back(Bytes(h.begin(), h.end()));
                return ExecResult::success();
            }
            case OpType::Equal:
            case OpType::EqualVerify: {
                if (auto r = need(2, "EQUAL"); !r.ok) return r;
                Bytes a = pop(), b = pop();
                bool eq = a == b;
                if (op.type == OpType::Equal) {
                    stack_.push_back(bool_bytes(eq));
                    return ExecResult::success();
                }
                return eq ? ExecResult::success()
                          : ExecResult::fail(ExecErrorKind::VerifyFailed, "EQUALVERIFY");
            }
            case OpType::CheckSig:
            case OpType::CheckSigVerify: {
                if (auto r = need(2, "CHECKSIG"); !r.ok) return r;
                Bytes pk_bytes = pop(), sig_bytes = pop();
                bool valid = check_one_sig(pk_bytes, sig_bytes);
                if (op.type == OpType::CheckSig) {
                    stack_.push_back(bool_bytes(valid));
                    return ExecResult::success();
                }
                return valid ? ExecResult::success()
                             : ExecResult::fail(ExecErrorKind::VerifyFailed, "CHECKSIGVERIFY");
            }
            case OpType::CheckMultisig:
            case OpType::CheckMultisigVerify:
                return multisig(op.type == OpType::CheckMultisigVerify);
            case OpType::CheckSequenceVerify: {
                if (auto r = need(1, "CHECKSEQUENCEVERIFY"); !r.ok) return r;
                std::uint64_t w = 0;
                if (!decode_number({stack_.back().data(), stack_.back().size()}, w))
                    return ExecResult::fail(ExecErrorKind::ScriptError, "bad CSV operand");
                if (ctx_.current_height < ctx_.input_confirmation_height)
                    return ExecResult::fail(ExecErrorKind::ScriptError,
                                            "context height precedes confirmation");
                const std::uint64_t age = static_cast<std::uint64_t>(
                    ctx_.current_height - ctx_.input_confirmation_height);
                // Spendable once both the declared sequence and the actual
                // output age reach W; W itself counts as mature.
                if (ctx_.input_sequence < w || age < w)
                    return ExecResult::fail(ExecErrorKind::VerifyFailed,
                                            "relative locktime not satisfied");
                return ExecResult::success();  // operand stays; templates DROP it
            }
            default:
                return ExecResult::fail(ExecErrorKind::ScriptError, "unexpected opcode");
        }
    }

    bool check_one_sig(const Bytes& pk_bytes, const Bytes& sig_bytes) {
        if (pk_bytes.size() != 33 || sig_bytes.size() != 64) return false;
        PublicKey pk;
        std::copy(pk_bytes.begin(), pk_bytes.end(), pk.bytes.begin());
        Signature sig;
        std::copy(sig_bytes.begin(), sig_bytes.end(), sig.bytes.begin());
        return verify(pk, {ctx_.signing_digest.data(), ctx_.signing_digest.size()}, sig);
    }

    // Clean m-of-n semantics: pops exactly n, the keys, m, and the signatures.
    // Signatures must match keys in order.
    ExecResult multisig(bool verify_mode) {
        if (auto r = need(1, "CHECKMULTISIG"); !r.ok) return r;
        std::uint64_t n = 0;
        if (!decode_number({stack_.back().data(), stack_.back().size()}, n) || n < 1 ||
            n > static_cast<std::uint64_t>(kMaxMultisigKeys))
            return ExecResult::fail(ExecErrorKind::ScriptError, "bad multisig key count");
        pop();
        if (auto r = need(static_cast<std::size_t>(n) + 1, "CHECKMULTISIG keys"); !r.ok)
            return r;
        std::vector<Bytes> keys(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < n; ++i) keys[n - 1 - i] = pop();
        std::uint64_t m = 0;
        if (!decode_number({stack_.back().data(), stack_.back().size()}, m) || m < 1 || m > n)
            return ExecResult::fail(ExecErrorKind::ScriptError, "bad multisig sig count");
        pop();
        if (auto r = need(static_cast<std::size_t>(m), "CHECKMULTISIG sigs"); !r.ok) return r;
        std::vector<Bytes> sigs(static_cast<std::size_t>(m));
        for (std::size_t i = 0; i < m; ++i) sigs[m - 1 - i] = pop();

        std::size_t ikey = 0;
        std::size_t isig = 0;
        while (isig < sigs.size() && ikey < keys.size()) {
            if (check_one_sig(keys[ikey], sigs[isig])) ++isig;
            ++ikey;
            if (sigs.size() - isig > keys.size() - ikey) break;
        }
        const bool valid = isig == sigs.size();
        if (verify_mode)
            return valid ? ExecResult::success()
                         : ExecResult::fail(ExecErrorKind::VerifyFailed, "CHECKMULTISIGVERIFY");
        stack_.push_back(bool_bytes(valid));
        return ExecResult::success();
    }

    const ExecContext& ctx_;
    Stack& stack_;
};

// Pay-to-script-hash locking pattern: HASH160 <20-byte hash> EQUAL.
inline bool is_p2sh(const Script& locking) {
    return locking.size() == 3 && locking[0].type == OpType::Hash160 &&
           locking[1].type == OpType::Push && locking[1].payload.size() == 20 &&
           locking[2].type == OpType::Equal;
}

}  // namespace detail

/// Run `unlocking` then `locking` on a shared stack; true iff execution
/// completes and leaves a truthy top. P2SH locks additionally execute the
/// revealed redeem script against the remaining stack.
inline ExecResult execute(const Script& unlocking, const Script& locking,
                          const ExecContext& ctx) {
    detail::Stack stack;
    {
        detail::Interpreter interp(ctx, stack);
        if (ExecResult r = interp.run(unlocking); !r.ok) return r;
    }

    if (detail::is_p2sh(locking)) {
        if (stack.empty())
            return ExecResult::fail(ExecErrorKind::StackUnderflow, "P2SH without redeem");
        Bytes redeem_bytes = stack.back();
        detail::Stack hash_stack = stack;
        {
            detail::Interpreter interp(ctx, hash_stack);
            if (ExecResult r = interp.run(locking); !r.ok) return r;
        }
        if (hash_stack.empty() || !detail::truthy(hash_stack.back()))
            return ExecResult::fail(ExecErrorKind::VerifyFailed, "redeem script hash mismatch");
        stack.pop_back();
        Script redeem;
        try {
            redeem = parse_script_bytes({redeem_bytes.data(), redeem_bytes.size()});
        } catch (const ScriptParseError& e) {
            return ExecResult::fail(ExecErrorKind::ScriptError,
                                    std::string("bad redeem script: ") + e.what());
        }
        detail::Interpreter interp(ctx, stack);
        if (ExecResult r = interp.run(redeem); !r.ok) return r;
    } else {
        detail::Interpreter interp(ctx, stack);
        if (ExecResult r = interp.run(locking); !r.ok) return r;
    }

    if (stack.empty())
        return ExecResult::fail(ExecErrorKind::VerifyFailed, "empty final stack");
    if (!detail::truthy(stack.back()))
        return ExecResult::fail(ExecErrorKind::VerifyFailed, "false final stack top");
    return ExecResult::success();
}

// ---------------------------------------------------------------------------
// Script templates shared by the transaction builders.
// ---------------------------------------------------------------------------

inline Script p2pkh_lock(const PublicKey& pk) {
    Digest20 h = hash160(pk.view());
    return {Opcode::simple(OpType::Dup), Opcode::simple(OpType::Hash160),
            Opcode::push(Bytes(h.begin(), h.end())), Opcode::simple(OpType::EqualVerify),
            Opcode::simple(OpType::CheckSig)};
}

inline Script p2pkh_unlock(const Signature& sig, const PublicKey& pk) {
    return {Opcode::push(Bytes(sig.bytes.begin(), sig.bytes.end())),
            Opcode::push(Bytes(pk.bytes.begin(), pk.bytes.end()))};
}

inline Script p2sh_lock(const Script& redeem) {
    Digest20 h = hash160(serialize_script(redeem));
    return {Opcode::simple(OpType::Hash160), Opcode::push(Bytes(h.begin(), h.end())),
            Opcode::simple(OpType::Equal)};
}

/// 2-of-2 redeem script for the funding output.
inline Script multisig_2of2_redeem(const PublicKey& pk_a, const PublicKey& pk_b) {
    return {Opcode::constant(2), Opcode::push(Bytes(pk_a.bytes.begin(), pk_a.bytes.end())),
            Opcode::push(Bytes(pk_b.bytes.begin(), pk_b.bytes.end())), Opcode::constant(2),
            Opcode::simple(OpType::CheckMultisig)};
}

/// 1-of-K pool output: any single member key can spend.
inline Script pool_multisig_lock(const std::vector<PublicKey>& members) {
    if (members.empty() || members.size() > static_cast<std::size_t>(kMaxMultisigKeys))
        throw std::invalid_argument("pool size out of range");
    Script s{Opcode::constant(1)};
    for (const PublicKey& pk : members)
        s.push_back(Opcode::push(Bytes(pk.bytes.begin(), pk.bytes.end())));
    s.push_back(Opcode::constant(static_cast<int>(members.size())));
    s.push_back(Opcode::simple(OpType::CheckMultisig));
    return s;
}

}  // namespace iotchan
