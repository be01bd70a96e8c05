#pragma once

#include <map>
#include <set>

#include "iotchan/script.hpp"

#include "json.hpp"

namespace iotchan {

using Satoshi = std::int64_t;

inline constexpr Satoshi kMaxMoney = 2'100'000'000'000'000;  // 21M coins in satoshi

// Heuristic depth after which a transaction is treated as final (~60 minutes
// at the nominal 10-minute block interval).
inline constexpr int kRecommendedConfirmationDepth = 6;

struct OutPoint {
    Digest32 txid{};
    std::uint32_t index = 0;

    auto operator<=>(const OutPoint&) const = default;
};

struct TxInput {
    OutPoint previous;
    Script unlocking;
    std::uint32_t sequence = 0;  // 0 = no relative lock claimed

    bool operator==(const TxInput&) const = default;
};

struct TxOutput {
    Satoshi value = 0;
    Script locking;

    bool operator==(const TxOutput&) const = default;
};

struct Transaction {
    std::vector<TxInput> inputs;
    std::vector<TxOutput> outputs;

    // Exogenous seed transactions carry no inputs.
    bool is_coinbase() const { return inputs.empty(); }
};

// Canonical layout (all integers little-endian, scripts length-prefixed):
//   u32 input count; per input: 32B txid, u32 index, u32 script len, script,
//   u32 sequence; u32 output count; per output: u64 value (two's complement),
//   u32 script len, script.
inline Bytes serialize_tx(const Transaction& tx) {
    Bytes out;
    append_u32le(out, static_cast<std::uint32_t>(tx.inputs.size()));
    for (const TxInput& in : tx.inputs) {
        append(out, {in.previous.txid.data(), in.previous.txid.size()});
        append_u32le(out, in.previous.index);
        Bytes script = serialize_script(in.unlocking);
        append_u32le(out, static_cast<std::uint32_t>(script.size()));
        append(out, {script.data(), script.size()});
        append_u32le(out, in.sequence);
    }
    append_u32le(out, static_cast<std::uint32_t>(tx.outputs.size()));
    for (const TxOutput& o : tx.outputs) {
        append_u64le(out, static_cast<std::uint64_t>(o.value));
        Bytes script = serialize_script(o.locking);
        append_u32le(out, static_cast<std::uint32_t>(script.size()));
        append(out, {script.data(), script.size()});
    }
    return out;
}

inline Digest32 txid(const Transaction& tx) {
    Bytes raw = serialize_tx(tx);
    return sha256d({raw.data(), raw.size()});
}

inline std::string txid_hex(const Transaction& tx) {
    Digest32 id = txid(tx);
    return to_hex({id.data(), id.size()});
}

struct IndexOutOfRange : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// Digest every signer of `tx` commits to: the canonical serialization with
/// all unlocking scripts blanked, so signatures never cover themselves. By
/// construction the digest is the same for every input of the transaction.
inline Digest32 signing_digest(const Transaction& tx, std::size_t input_index) {
    if (input_index >= tx.inputs.size())
        throw IndexOutOfRange("signing_digest: input index out of range");
    Transaction blanked = tx;
    for (TxInput& in : blanked.inputs) in.unlocking.clear();
    Bytes raw = serialize_tx(blanked);
    return sha256d({raw.data(), raw.size()});
}

// ---------------------------------------------------------------------------
// Chain.
// ---------------------------------------------------------------------------

enum class ValidationErrorKind {
    MissingUtxo,
    ScriptInvalid,
    DoubleSpend,
    ValueOverflow,
    NegativeFee,
};

struct ValidationError {
    ValidationErrorKind kind;
    std::size_t input_index = 0;
    std::string detail;
};

inline const char* to_string(ValidationErrorKind k) {
    switch (k) {
        case ValidationErrorKind::MissingUtxo: return "MissingUtxo";
        case ValidationErrorKind::ScriptInvalid: return "ScriptInvalid";
        case ValidationErrorKind::DoubleSpend: return "DoubleSpend";
        case ValidationErrorKind::ValueOverflow: return "ValueOverflow";
        case ValidationErrorKind::NegativeFee: return "NegativeFee";
    }
    return "?";
}

// std::nullopt means the transaction is acceptable.
using ValidationResult = std::optional<ValidationError>;

struct UtxoEntry {
    TxOutput output;
    std::int64_t confirmation_height = 0;

    bool operator==(const UtxoEntry&) const = default;
};

struct Block {
    std::int64_t height = 0;
    std::vector<Digest32> txids;
};

struct SpendRecord {
    Digest32 spending_txid{};
    std::int64_t height = 0;
};

/// Single canonical chain: no forks, no reorgs, unlimited block capacity.
/// Confirmation depth is exposed so callers can apply the usual 6-block
/// policy where it matters to them.
class Chain {
public:
    std::int64_t height() const { return height_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    const std::map<OutPoint, UtxoEntry>& utxo() const { return utxo_; }
    std::size_t mempool_size() const { return mempool_.size(); }
    Satoshi total_fees() const { return total_fees_; }
    Satoshi total_seeded() const { return total_seeded_; }

    const Transaction* find_confirmed(const Digest32& id) const {
        auto it = confirmed_.find(id);
        return it == confirmed_.end() ? nullptr : &it->second.tx;
    }

    std::optional<std::int64_t> confirmation_height(const Digest32& id) const {
        auto it = confirmed_.find(id);
        if (it == confirmed_.end()) return std::nullopt;
        return it->second.height;
    }

    /// Validity of `tx` were it included in the next block. Pure: never
    /// mutates the chain.
    ValidationResult validate(const Transaction& tx) const {
        UtxoView view{utxo_, {}, {}};
        // Earlier mempool entries may create outputs this transaction spends
        // and may already claim UTXOs.
        for (const Transaction& pending : mempool_) apply_to_view(view, pending, height_ + 1);
        return validate_against(tx, view, height_ + 1);
    }

    /// Queue `tx` if it is valid right now.
    ValidationResult submit(const Transaction& tx) {
        ValidationResult err = validate(tx);
        if (err) return err;
        mempool_.push_back(tx);
        return std::nullopt;
    }

    struct MineResult {
        Block block;
        std::vector<std::pair<Digest32, ValidationError>> dropped;
    };

    /// Confirm all currently-valid mempool transactions, FIFO, at the new
    /// height. Transactions that no longer validate are dropped with a
    /// diagnostic.
    MineResult mine_block() {
        const std::int64_t new_height = height_ + 1;
        MineResult result;
        result.block.height = new_height;
        UtxoView view{utxo_, {}, {}};
        std::vector<Transaction> accepted;
        for (const Transaction& tx : mempool_) {
            ValidationResult err = validate_against(tx, view, new_height);
            if (err) {
                result.dropped.emplace_back(txid(tx), *err);
                continue;
            }
            apply_to_view(view, tx, new_height);
            accepted.push_back(tx);
        }
        for (const Transaction& tx : accepted) confirm(tx, new_height, result.block);
        mempool_.clear();
        height_ = new_height;
        blocks_.push_back(result.block);
        return result;
    }

    /// Confirmed spend of `outpoint`, if any. Mempool spends do not count.
    std::optional<SpendRecord> scan_for_spend(const OutPoint& outpoint) const {
        auto it = spends_.find(outpoint);
        if (it == spends_.end()) return std::nullopt;
        return it->second;
    }

    /// Re-run every confirmed input under its recorded context. Diagnostic
    /// invariant: always true for an uncorrupted chain.
    bool recheck_confirmed_scripts() const {
        for (const auto& [id, entry] : confirmed_) {
            if (entry.tx.is_coinbase()) continue;
            for (std::size_t i = 0; i < entry.tx.inputs.size(); ++i) {
                const ExecContext& ctx = entry.contexts[i];
                const Script& locking = entry.spent_outputs[i].locking;
                if (!execute(entry.tx.inputs[i].unlocking, locking, ctx)) return false;
            }
        }
        return true;
    }

    nlohmann::ordered_json dump() const {
        nlohmann::ordered_json j;
        j["height"] = height_;
        j["total_seeded"] = total_seeded_;
        j["total_fees"] = total_fees_;
        nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
        for (const Block& b : blocks_) {
            nlohmann::ordered_json jb;
            jb["height"] = b.height;
            nlohmann::ordered_json ids = nlohmann::ordered_json::array();
            for (const Digest32& id : b.txids) ids.push_back(to_hex({id.data(), id.size()}));
            jb["txs"] = ids;
            blocks.push_back(jb);
        }
        j["blocks"] = blocks;
        nlohmann::ordered_json utxos = nlohmann::ordered_json::array();
        for (const auto& [op, entry] : utxo_) {
            nlohmann::ordered_json ju;
            ju["txid"] = to_hex({op.txid.data(), op.txid.size()});
            ju["index"] = op.index;
            ju["value"] = entry.output.value;
            ju["confirmation_height"] = entry.confirmation_height;
            ju["locking"] = to_hex(([&] {
                Bytes s = serialize_script(entry.output.locking);
                return s;
            })());
            utxos.push_back(ju);
        }
        j["utxo"] = utxos;
        nlohmann::ordered_json fees = nlohmann::ordered_json::array();
        for (const auto& [id, entry] : confirmed_) {
            if (entry.tx.is_coinbase()) continue;
            nlohmann::ordered_json jf;
            jf["txid"] = to_hex({id.data(), id.size()});
            jf["fee"] = entry.fee;
            fees.push_back(jf);
        }
        j["tx_fees"] = fees;
        return j;
    }

private:
    struct ConfirmedEntry {
        Transaction tx;
        std::int64_t height = 0;
        Satoshi fee = 0;
        std::vector<ExecContext> contexts;
        std::vector<TxOutput> spent_outputs;
    };

    struct UtxoView {
        const std::map<OutPoint, UtxoEntry>& base;
        std::map<OutPoint, UtxoEntry> created;
        std::set<OutPoint> spent;

        const UtxoEntry* find(const OutPoint& op) const {
            if (spent.contains(op)) return nullptr;
            if (auto it = created.find(op); it != created.end()) return &it->second;
            if (auto it = base.find(op); it != base.end()) return &it->second;
            return nullptr;
        }
    };

    static void apply_to_view(UtxoView& view, const Transaction& tx,
                              std::int64_t batch_height) {
        for (const TxInput& in : tx.inputs) view.spent.insert(in.previous);
        Digest32 id = txid(tx);
        // Outputs created within the batch confirm at the batch height, so a
        // same-block spend sees them at age zero.
        for (std::uint32_t i = 0; i < tx.outputs.size(); ++i)
            view.created[OutPoint{id, i}] = UtxoEntry{tx.outputs[i], batch_height};
    }

    ValidationResult validate_against(const Transaction& tx, const UtxoView& view,
                                      std::int64_t at_height) const {
        if (tx.outputs.empty())
            return ValidationError{ValidationErrorKind::ValueOverflow, 0, "no outputs"};
        Satoshi total_out = 0;
        for (const TxOutput& o : tx.outputs) {
            if (o.value < 0 || o.value > kMaxMoney)
                return ValidationError{ValidationErrorKind::ValueOverflow, 0,
                                       "output value out of range"};
            total_out += o.value;
            if (total_out > kMaxMoney)
                return ValidationError{ValidationErrorKind::ValueOverflow, 0,
                                       "output total out of range"};
        }
        if (tx.is_coinbase()) return std::nullopt;

        std::set<OutPoint> seen;
        Satoshi total_in = 0;
        for (std::size_t i = 0; i < tx.inputs.size(); ++i) {
            const TxInput& in = tx.inputs[i];
            if (!seen.insert(in.previous).second)
                return ValidationError{ValidationErrorKind::DoubleSpend, i,
                                       "outpoint spent twice within transaction"};
            if (view.spent.contains(in.previous))
                return ValidationError{ValidationErrorKind::DoubleSpend, i,
                                       "outpoint already spent in batch"};
            const UtxoEntry* entry = view.find(in.previous);
            if (!entry)
                return ValidationError{ValidationErrorKind::MissingUtxo, i,
                                       "no such unspent output"};
            total_in += entry->output.value;
            if (total_in > kMaxMoney)
                return ValidationError{ValidationErrorKind::ValueOverflow, i,
                                       "input total out of range"};
            ExecContext ctx = context_for(tx, i, *entry, at_height);
            if (ExecResult r = execute(in.unlocking, entry->output.locking, ctx); !r.ok)
                return ValidationError{ValidationErrorKind::ScriptInvalid, i, r.detail};
        }
        if (total_in < total_out)
            return ValidationError{ValidationErrorKind::NegativeFee, 0,
                                   "outputs exceed inputs"};
        return std::nullopt;
    }

    static ExecContext context_for(const Transaction& tx, std::size_t input_index,
                                   const UtxoEntry& spent, std::int64_t at_height) {
        ExecContext ctx;
        ctx.signing_digest = signing_digest(tx, input_index);
        ctx.input_confirmation_height = spent.confirmation_height;
        ctx.current_height = at_height;
        ctx.input_sequence = tx.inputs[input_index].sequence;
        return ctx;
    }

    void confirm(const Transaction& tx, std::int64_t new_height, Block& block) {
        Digest32 id = txid(tx);
        ConfirmedEntry entry;
        entry.tx = tx;
        entry.height = new_height;
        Satoshi total_in = 0, total_out = 0;
        for (std::size_t i = 0; i < tx.inputs.size(); ++i) {
            const TxInput& in = tx.inputs[i];
            auto it = utxo_.find(in.previous);
            // Batch-created parent: confirmed moments ago at this height.
            const UtxoEntry spent = it != utxo_.end()
                                        ? it->second
                                        : UtxoEntry{lookup_pending_output(in.previous),
                                                    new_height};
            if (it != utxo_.end()) utxo_.erase(it);
            spends_[in.previous] = SpendRecord{id, new_height};
            total_in += spent.output.value;
            entry.contexts.push_back(context_for(tx, i, spent, new_height));
            entry.spent_outputs.push_back(spent.output);
        }
        for (std::uint32_t i = 0; i < tx.outputs.size(); ++i) {
            utxo_[OutPoint{id, i}] = UtxoEntry{tx.outputs[i], new_height};
            total_out += tx.outputs[i].value;
        }
        if (tx.is_coinbase()) {
            total_seeded_ += total_out;
        } else {
            entry.fee = total_in - total_out;
            total_fees_ += entry.fee;
        }
        confirmed_[id] = std::move(entry);
        block.txids.push_back(id);
    }

    TxOutput lookup_pending_output(const OutPoint& op) const {
        auto it = confirmed_.find(op.txid);
        if (it != confirmed_.end() && op.index < it->second.tx.outputs.size())
            return it->second.tx.outputs[op.index];
        throw std::logic_error("confirm order violated in-batch dependency");
    }

    std::vector<Block> blocks_;
    std::map<OutPoint, UtxoEntry> utxo_;
    std::vector<Transaction> mempool_;
    std::map<OutPoint, SpendRecord> spends_;
    std::map<Digest32, ConfirmedEntry> confirmed_;
    std::int64_t height_ = 0;
    Satoshi total_seeded_ = 0;
    Satoshi total_fees_ = 0;
};

// ---------------------------------------------------------------------------
// Size and fee estimation for plain pay-to-public-key-hash transactions:
// 148 bytes per input, 34 per output, 10 fixed, give or take one byte per
// input for the variable-length key material.
// ---------------------------------------------------------------------------

struct EstimateDomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct SizeEstimate {
    std::int64_t min_bytes = 0;
    std::int64_t max_bytes = 0;
};

inline SizeEstimate estimate_size(std::int64_t num_inputs, std::int64_t num_outputs) {
    if (num_inputs < 1 || num_outputs < 1)
        throw EstimateDomainError("estimate_size requires at least one input and output");
    const std::int64_t base = 148 * num_inputs + 34 * num_outputs + 10;
    return SizeEstimate{base - num_inputs, base + num_inputs};
}

}  // namespace iotchan
