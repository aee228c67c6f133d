"""Discrete encoder/decoder search space: sampling and (de)serialization.

A genome holds five encoder cells (applied top-down, full resolution first),
five decoder cells (applied bottom-up) and a set of cross-level connections
``(i, j)``.  Encoder *levels* are counted from the bottleneck, so level 0 is
the deepest encoder output (``H / 32``) and level 4 the shallowest
(``H / 2``).  Connection ``(i, j)`` with ``i <= j`` feeds encoder level ``i``
into decoder stage ``j``, which needs an upsampling factor of
``2 ** (j - i + 1)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

SCHEMA_VERSION = 1
N_LEVELS = 5
CONNECTION_PROB = 0.2

SPATIAL_SAMPLING = ("bilinear", "nearest", "bicubic", "transposed_conv")
TRANSFORMS = ("conv", "separable_conv", "identity")
KERNEL_SIZES = (1, 3, 5, 7)
DILATIONS = (1, 2, 3)
ACTIVATIONS = ("relu", "leaky_relu_0.2", "sigmoid", "none")

ADMISSIBLE_CONNECTIONS = tuple(combinations_with_replacement(range(N_LEVELS), 2))

_CELL_OPTIONS = {
    "spatial_sampling": SPATIAL_SAMPLING,
    "transform": TRANSFORMS,
    "kernel_size": KERNEL_SIZES,
    "dilation": DILATIONS,
    "activation": ACTIVATIONS,
}


class GenomeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CellSpec:
    spatial_sampling: str
    transform: str
    kernel_size: int
    dilation: int
    activation: str

    def __post_init__(self):
        for name, options in _CELL_OPTIONS.items():
            if getattr(self, name) not in options:
                raise GenomeFormatError(f"{name}: unknown value {getattr(self, name)!r}")
        if self.transform == "identity" and (self.kernel_size, self.dilation) != (1, 1):
            raise GenomeFormatError("identity transform requires kernel_size=1 and dilation=1")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in _CELL_OPTIONS}


@dataclass(frozen=True)
class Genome:
    encoder_cells: tuple[CellSpec, ...]
    decoder_cells: tuple[CellSpec, ...]
    cross_connections: tuple[tuple[int, int], ...] = ()
    seed: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.encoder_cells) != N_LEVELS or len(self.decoder_cells) != N_LEVELS:
            raise GenomeFormatError(f"a genome needs exactly {N_LEVELS} encoder and decoder cells")
        conns = tuple(sorted({(int(i), int(j)) for i, j in self.cross_connections}))
        for conn in conns:
            if conn not in ADMISSIBLE_CONNECTIONS:
                raise GenomeFormatError(f"cross_connections: inadmissible pair {conn}")
        object.__setattr__(self, "cross_connections", conns)

    def architecture(self) -> dict:
        return {
            "encoder_cells": [c.to_dict() for c in self.encoder_cells],
            "decoder_cells": [c.to_dict() for c in self.decoder_cells],
            "cross_connections": [list(c) for c in self.cross_connections],
        }

    @property
    def id(self) -> str:
        canonical = json.dumps(self.architecture(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha1(canonical.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"id": self.id, "seed": self.seed, **self.architecture()}


def _sample_cell(rng: np.random.Generator) -> CellSpec:
    attrs = {name: options[rng.integers(len(options))] for name, options in _CELL_OPTIONS.items()}
    attrs["kernel_size"] = int(attrs["kernel_size"])
    attrs["dilation"] = int(attrs["dilation"])
    if attrs["transform"] == "identity":
        attrs["kernel_size"], attrs["dilation"] = 1, 1
    return CellSpec(**attrs)


def sample_genome(seed: int) -> Genome:
    rng = np.random.default_rng(seed)
    encoder = tuple(_sample_cell(rng) for _ in range(N_LEVELS))
    decoder = tuple(_sample_cell(rng) for _ in range(N_LEVELS))
    keep = rng.random(len(ADMISSIBLE_CONNECTIONS)) < CONNECTION_PROB
    conns = tuple(c for c, k in zip(ADMISSIBLE_CONNECTIONS, keep) if k)
    return Genome(encoder, decoder, conns, seed=int(seed))


def sample_space(count: int, seed: int) -> list[Genome]:
    """``count`` genomes with pairwise distinct ids, in a seed-determined order."""
    if count < 1:
        raise ValueError("count must be at least 1")
    seeds = np.random.SeedSequence(seed)
    genomes, seen = [], set()
    while len(genomes) < count:
        child = seeds.spawn(1)[0]
        g = sample_genome(int(child.generate_state(1, dtype=np.uint64)[0]))
        if g.id not in seen:
            seen.add(g.id)
            genomes.append(g)
    return genomes


def _cell_from_dict(d: dict, where: str) -> CellSpec:
    if not isinstance(d, dict):
        raise GenomeFormatError(f"{where}: expected an object")
    missing = set(_CELL_OPTIONS) - set(d)
    if missing:
        raise GenomeFormatError(f"{where}: missing field(s) {sorted(missing)}")
    try:
        return CellSpec(**{k: d[k] for k in _CELL_OPTIONS})
    except GenomeFormatError as exc:
        raise GenomeFormatError(f"{where}.{exc}") from None


def genome_from_dict(d: dict) -> Genome:
    try:
        enc = [_cell_from_dict(c, f"encoder_cells[{k}]") for k, c in enumerate(d["encoder_cells"])]
        dec = [_cell_from_dict(c, f"decoder_cells[{k}]") for k, c in enumerate(d["decoder_cells"])]
        conns = [tuple(c) for c in d.get("cross_connections", [])]
        genome = Genome(tuple(enc), tuple(dec), tuple(conns), seed=int(d.get("seed", 0)))
    except KeyError as exc:
        raise GenomeFormatError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, GenomeFormatError):
            raise
        raise GenomeFormatError(f"malformed genome record: {exc}") from None
    if "id" in d and d["id"] != genome.id:
        raise GenomeFormatError(f"id: record says {d['id']} but content hashes to {genome.id}")
    return genome


def serialize_genome(genome: Genome) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **genome.to_dict()}, indent=2)


def _check_version(record: dict) -> None:
    version = record.get("schema_version")
    if version != SCHEMA_VERSION:
        raise GenomeFormatError(f"schema_version: unsupported value {version!r}")


def _parse(text: str) -> dict:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenomeFormatError(f"not valid JSON: {exc}") from None
    if not isinstance(record, dict):
        raise GenomeFormatError("top-level record must be an object")
    _check_version(record)
    return record


def deserialize_genome(text: str) -> Genome:
    return genome_from_dict(_parse(text))


def serialize_space(genomes) -> str:
    return json.dumps(
        {"schema_version": SCHEMA_VERSION, "genomes": [g.to_dict() for g in genomes]}, indent=2
    )


def deserialize_space(text: str) -> list[Genome]:
    record = _parse(text)
    if "genomes" not in record:
        return [genome_from_dict(record)]
    return [genome_from_dict(g) for g in record["genomes"]]
