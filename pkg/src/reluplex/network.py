"""Layered feed-forward ReLU networks and their plain-text file format.

File format (``#`` starts a comment, blank lines are ignored)::

    3                 # number of layers n (n >= 2), input layer included
    1,2,1             # layer sizes s_1..s_n
    1                 # layer 2: s_2 weight rows of s_1 entries each
    -1
    0,0               # layer 2 biases (s_2 entries)
    1,1               # layer 3 weights
    0                 # layer 3 biases
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class NetworkFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None, path: str | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            where = f"{path}:{where}: " if path else f"{where}: "
        super().__init__(where + message)
        self.line = line
        self.column = column
        self.path = path


@dataclass(frozen=True)
class Network:
    """``V_i = ReLU(W_i V_{i-1} + B_i)`` for hidden layers; identity on the output unless ``output_relu``."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    output_relu: bool = False
    layer_sizes: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        weights = tuple(np.array(w, dtype=float, ndmin=2) for w in self.weights)
        biases = tuple(np.array(b, dtype=float).reshape(-1) for b in self.biases)
        if not weights:
            raise ValueError("a network needs at least two layers")
        if len(weights) != len(biases):
            raise ValueError("one bias vector per weight matrix is required")
        sizes = [weights[0].shape[1]]
        for i, (w, b) in enumerate(zip(weights, biases), start=2):
            if w.shape[1] != sizes[-1]:
                raise ValueError(f"layer {i}: weight matrix has {w.shape[1]} columns, expected {sizes[-1]}")
            if b.shape[0] != w.shape[0]:
                raise ValueError(f"layer {i}: {b.shape[0]} biases for {w.shape[0]} nodes")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameter")
            sizes.append(w.shape[0])
        for arr in (*weights, *biases):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in sizes))

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def num_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_relus(self) -> int:
        hidden = sum(self.layer_sizes[1:-1])
        return hidden + (self.num_outputs if self.output_relu else 0)

    def relu_layer(self, i: int) -> bool:
        """Whether layer ``i`` (1-based over non-input layers) applies ReLU."""
        return i < len(self.weights) or self.output_relu


@dataclass
class ForwardPass:
    outputs: np.ndarray
    # per ReLU layer: (pre-activation, post-activation)
    hidden: list[tuple[np.ndarray, np.ndarray]]


def forward(net: Network, inputs: Sequence[float]) -> ForwardPass:
    x = np.asarray(inputs, dtype=float).reshape(-1)
    if x.shape[0] != net.num_inputs:
        raise ValueError(f"expected {net.num_inputs} inputs, got {x.shape[0]}")
    hidden = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases), start=1):
        pre = w @ x + b
        if net.relu_layer(i):
            x = np.maximum(pre, 0.0)
            hidden.append((pre, x))
        else:
            x = pre
    return ForwardPass(x, hidden)


def evaluate(net: Network, inputs: Sequence[float]) -> np.ndarray:
    return forward(net, inputs).outputs


def interval_bounds(net: Network, box: Sequence[tuple[float, float]]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Interval propagation: per non-input layer, bounds on the pre-activation values."""
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    out = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases), start=1):
        pos, neg = np.maximum(w, 0.0), np.minimum(w, 0.0)
        with np.errstate(invalid="ignore"):
            pre_lo = _matvec(pos, lo) + _matvec(neg, hi) + b
            pre_hi = _matvec(pos, hi) + _matvec(neg, lo) + b
        out.append((pre_lo, pre_hi))
        if net.relu_layer(i):
            lo, hi = np.maximum(pre_lo, 0.0), np.maximum(pre_hi, 0.0)
        else:
            lo, hi = pre_lo, pre_hi
    return out


def _matvec(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    # zero weights must not turn infinite bounds into nan
    terms = np.where(w == 0.0, 0.0, w * x)
    return terms.sum(axis=1)


def parse_network(text: str, path: str | None = None, output_relu: bool = False) -> Network:
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0]
        if content.strip():
            lines.append((number, content))
    cursor = 0
    last_line = len(text.splitlines())

    def take(what: str) -> tuple[int, list[float]]:
        nonlocal cursor
        if cursor >= len(lines):
            raise NetworkFormatError(f"unexpected end of file while reading {what}", last_line + 1, path=path)
        number, content = lines[cursor]
        cursor += 1
        values = []
        col = 1
        for token in content.split(","):
            stripped = token.strip()
            column = col + (len(token) - len(token.lstrip()))
            col += len(token) + 1
            try:
                value = float(stripped)
            except ValueError:
                raise NetworkFormatError(f"non-numeric token {stripped!r} in {what}", number, column, path) from None
            if not math.isfinite(value):
                raise NetworkFormatError(f"non-finite value {stripped!r} in {what}", number, column, path)
            values.append(value)
        return number, values

    number, header = take("layer count")
    if len(header) != 1 or header[0] != int(header[0]):
        raise NetworkFormatError("first line must be a single integer layer count", number, 1, path)
    n = int(header[0])
    if n < 2:
        raise NetworkFormatError(f"a network needs at least 2 layers, got {n}", number, 1, path)
    number, sizes = take("layer sizes")
    if len(sizes) != n:
        raise NetworkFormatError(f"expected {n} layer sizes, got {len(sizes)}", number, 1, path)
    if any(s != int(s) or s < 1 for s in sizes):
        raise NetworkFormatError("layer sizes must be positive integers", number, 1, path)
    sizes = [int(s) for s in sizes]

    weights, biases = [], []
    for layer in range(1, n):
        rows = []
        for r in range(sizes[layer]):
            number, row = take(f"layer {layer + 1} weight row {r + 1}")
            if len(row) != sizes[layer - 1]:
                raise NetworkFormatError(
                    f"layer {layer + 1} weight row {r + 1} has {len(row)} entries, expected {sizes[layer - 1]}",
                    number, path=path)
            rows.append(row)
        number, bias = take(f"layer {layer + 1} biases")
        if len(bias) != sizes[layer]:
            raise NetworkFormatError(f"layer {layer + 1} has {len(bias)} biases, expected {sizes[layer]}",
                                     number, path=path)
        weights.append(rows)
        biases.append(bias)
    if cursor != len(lines):
        raise NetworkFormatError("trailing data after the last layer", lines[cursor][0], 1, path)
    return Network(tuple(weights), tuple(biases), output_relu=output_relu)


def load_network(path: str | Path, output_relu: bool = False) -> Network:
    path = Path(path)
    return parse_network(path.read_text(), str(path), output_relu)


def _fmt(x: float) -> str:
    return repr(float(x))


def format_network(net: Network) -> str:
    out = [str(net.num_layers), ",".join(str(s) for s in net.layer_sizes)]
    for i, (w, b) in enumerate(zip(net.weights, net.biases), start=2):
        out.append(f"# layer {i}")
        out.extend(",".join(_fmt(x) for x in row) for row in w)
        out.append(",".join(_fmt(x) for x in b))
    return "\n".join(out) + "\n"


def dump_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(format_network(net))


def abs_network() -> Network:
    """``y = ReLU(x) + ReLU(-x) = |x|``, the identity on [0, 1]; a small fixture used throughout."""
    return Network(([[1.0], [-1.0]], [[1.0, 1.0]]), ([0.0, 0.0], [0.0]))
