"""Huffman prefix codes with a fully deterministic tree construction."""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

from ..prob import Pmf


class HuffmanError(ValueError):
    pass


@dataclass(frozen=True)
class _Node:
    left: "_Node | None" = None
    right: "_Node | None" = None
    symbol: int | None = None


@dataclass(frozen=True)
class HuffmanCodebook:
    codes: tuple[str, ...]
    root: _Node

    def __len__(self) -> int:
        return len(self.codes)

    def lengths(self) -> list[int]:
        return [len(c) for c in self.codes]


def huffman_build(pmf: Pmf | Sequence[float]) -> HuffmanCodebook:
    """Merge the two least probable nodes until one tree remains.

    Of each merged pair the less probable node becomes the right child (bit 1).
    Equal probabilities are ordered by creation time: leaves in symbol order,
    then internal nodes in the order they were formed.
    """
    probs = pmf.probs if isinstance(pmf, Pmf) else tuple(float(p) for p in pmf)
    if len(probs) < 2:
        raise HuffmanError("need at least two symbols")
    heap = [(p, i, _Node(symbol=i)) for i, p in enumerate(probs)]
    heapq.heapify(heap)
    created = len(probs)
    while len(heap) > 1:
        p_small, _, small = heapq.heappop(heap)
        p_big, _, big = heapq.heappop(heap)
        heapq.heappush(heap, (p_small + p_big, created, _Node(left=big, right=small)))
        created += 1
    root = heap[0][2]

    codes = [""] * len(probs)
    stack = [(root, "")]
    while stack:
        node, prefix = stack.pop()
        if node.symbol is not None:
            codes[node.symbol] = prefix
        else:
            stack.append((node.right, prefix + "1"))
            stack.append((node.left, prefix + "0"))
    return HuffmanCodebook(tuple(codes), root)


def huffman_encode(cb: HuffmanCodebook, syms: Sequence[int]) -> str:
    out = []
    for s in syms:
        if not 0 <= s < len(cb.codes):
            raise HuffmanError(f"unknown symbol {s}")
        out.append(cb.codes[s])
    return "".join(out)


def huffman_decode(cb: HuffmanCodebook, bits: str) -> list[int]:
    out = []
    node = cb.root
    for b in bits:
        if b == "0":
            node = node.left
        elif b == "1":
            node = node.right
        else:
            raise HuffmanError(f"not a bit: {b!r}")
        if node.symbol is not None:
            out.append(node.symbol)
            node = cb.root
    if node is not cb.root:
        raise HuffmanError("trailing bits do not form a complete codeword")
    return out
