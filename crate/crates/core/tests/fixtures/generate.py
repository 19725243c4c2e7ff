"""Independent reference encoder for the golden vectors in vectors.txt."""
import hashlib
import struct


def sha(b):
    return hashlib.sha256(b).digest()


def u32(v):
    return struct.pack("<I", v)


def u64(v):
    return struct.pack("<Q", v)


def outpoint(tx_hash, index):
    return tx_hash + u32(index)


def tx(inputs, outputs, nonce):
    out = u32(len(inputs))
    for (h, i, witness) in inputs:
        out += outpoint(h, i) + witness
    out += u32(len(outputs))
    for (value, owner) in outputs:
        out += u64(value) + owner
    return out + u64(nonce)


def merkle(leaves):
    level = sorted(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            right = level[i + 1] if i + 1 < len(level) else level[i]
            nxt.append(sha(level[i] + right))
        level = nxt
    return level[0]


def shard(tx_hash, salt, l):
    return int.from_bytes(sha(tx_hash + salt)[:8], "big") % l


vectors = {}
zero = bytes(32)
empty = tx([], [], 0)
one_out = tx([], [(0, zero)], 0)
spend = tx([(sha(b"prev"), 1, bytes([7]) * 32)], [(5000, bytes([1]) * 32), (42, bytes([2]) * 32)], 0x0102030405060708)
vectors["empty_tx"] = empty
vectors["empty_tx_hash"] = sha(empty)
vectors["zero_output_tx"] = one_out
vectors["zero_output_tx_hash"] = sha(one_out)
vectors["spend_tx"] = spend
vectors["spend_tx_hash"] = sha(spend)
vectors["sha256_64_zero"] = sha(bytes(64))
hashes = [sha(empty), sha(one_out), sha(spend)]
vectors["merkle_three"] = merkle(hashes)
header = zero + merkle(hashes) + u64(1) + bytes(8) + u32(3)
vectors["header_three"] = header
vectors["header_three_hash"] = sha(header)
vectors["inventory_zero_frame"] = struct.pack(">I", 32) + bytes([2]) + zero
salt = bytes(range(32))
vectors["shards_of_spend_by_l"] = bytes(shard(sha(spend), salt, l) for l in range(1, 17))

with open("vectors.txt", "w") as f:
    for k, v in vectors.items():
        f.write(f"{k} {v.hex()}\n")
