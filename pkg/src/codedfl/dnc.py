"""Systematic diversity network code over a Galois field.

The encoding matrix has shape M x M^2: an identity block (each client's own
message) followed by one M x (M-1) parity block per client, built as a Cauchy
extension so that every M-column submatrix is nonsingular. Masking zeroes the
rows a relaying client never heard, slot erasures zero columns, and pruning
drops the all-zero rows/columns before the parameter-server-side solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from codedfl.galois import GaloisField, RankDeficientError

__all__ = [
    "EncodingMatrix",
    "MaskedBlock",
    "PsMatrix",
    "PrunedSystem",
    "MdsVerdict",
    "FieldTooSmallError",
    "MaskContractError",
    "UndecodableError",
    "build_encoding_matrix",
    "verify_mds",
    "mask_client_block",
    "assemble_ps_matrix",
    "assemble_from_connectivity",
    "prune",
    "decode_messages",
    "recoverable_clients",
]


class FieldTooSmallError(ValueError):
    """The field has too few elements for the requested client count."""


class MaskContractError(ValueError):
    """A client was asked to mask away its own message."""


class UndecodableError(RuntimeError):
    """The pruned system does not determine every surviving message."""

    def __init__(self, rank: int, needed: int):
        self.rank = rank
        self.needed = needed
        super().__init__(f"system rank {rank} < {needed} surviving clients")


@dataclass(frozen=True)
class EncodingMatrix:
    """The full M x M^2 code matrix plus per-client block views."""

    M: int
    field: GaloisField
    matrix: np.ndarray

    def block(self, client: int) -> np.ndarray:
        """Parity block of one client, shape M x (M-1)."""
        m, w = self.M, self.M - 1
        return self.matrix[:, m + client * w : m + (client + 1) * w]


@dataclass(frozen=True)
class MaskedBlock:
    client: int
    block: np.ndarray  # rows the client never heard are all-zero


@dataclass(frozen=True)
class PsMatrix:
    """Effective encoding matrix of everything the server received.

    ``provenance[j]`` records where column j came from: ``("direct", m)`` or
    ``("relay", m, slot)``, so decoding success can be attributed to paths.
    """

    M: int
    matrix: np.ndarray  # M x M^2 with erased entries zeroed
    provenance: tuple


@dataclass(frozen=True)
class PrunedSystem:
    W: np.ndarray  # surviving client rows, sorted
    V: np.ndarray  # surviving codeword columns, sorted
    matrix: np.ndarray  # |W| x |V|
    provenance: tuple  # per surviving column


@dataclass(frozen=True)
class MdsVerdict:
    ok: bool
    checked: int
    exhaustive: bool
    counterexample: tuple | None


def build_encoding_matrix(M: int, field: GaloisField) -> EncodingMatrix:
    """Deterministic systematic [I | Cauchy] code for ``M`` clients.

    Parity entry (i, j) is inv(x_i - y_j) with x the first M field elements
    and y the next M(M-1); the point sets are disjoint so every denominator
    is nonzero, and every square submatrix of a Cauchy matrix is nonsingular,
    which gives the any-M-columns property for the whole matrix.
    """
    if M < 1:
        raise ValueError(f"need at least one client, got M={M}")
    n_points = M * M  # M row points + M(M-1) column points
    if M > 1 and field.order < n_points:
        raise FieldTooSmallError(
            f"M={M} needs {n_points} distinct field elements, "
            f"field has {field.order}"
        )
    ident = np.eye(M, dtype=np.int64)
    if M == 1:
        return EncodingMatrix(M, field, ident)
    x = np.arange(M, dtype=np.int64)
    y = np.arange(M, n_points, dtype=np.int64)
    parity = field.inv(field.sub(x[:, None], y[None, :]))
    matrix = np.concatenate([ident, parity], axis=1)
    matrix.setflags(write=False)
    return EncodingMatrix(M, field, matrix)


def verify_mds(code: EncodingMatrix, budget: int, rng=None) -> MdsVerdict:
    """Check the any-M-columns property.

    Exhaustive over all C(M^2, M) column subsets when that count fits in
    ``budget``; otherwise checks ``budget`` uniformly sampled subsets.
    Returns the first offending subset, if any.
    """
    M = code.M
    total = math.comb(M * M, M)
    exhaustive = total <= budget
    if exhaustive:
        subsets = combinations(range(M * M), M)
        n = total
    else:
        if rng is None:
            rng = np.random.default_rng(0xD1CE)
        subsets = (
            tuple(sorted(rng.choice(M * M, size=M, replace=False)))
            for _ in range(budget)
        )
        n = budget
    checked = 0
    for cols in subsets:
        checked += 1
        sub = code.matrix[:, list(cols)]
        if code.field.rank(sub) < M:
            return MdsVerdict(False, checked, exhaustive, tuple(cols))
    return MdsVerdict(True, n, exhaustive, None)


def mask_client_block(block: np.ndarray, client: int, tau_in) -> MaskedBlock:
    """Zero the rows of ``block`` the relaying client never heard.

    ``tau_in[z]`` says whether this client decoded client z's message in the
    broadcast slot. A client always holds its own message, so
    ``tau_in[client]`` must be 1.
    """
    tau_in = np.asarray(tau_in)
    if tau_in[client] != 1:
        raise MaskContractError(
            f"client {client} always holds its own message; tau_in[{client}]=0"
        )
    masked = np.where(tau_in[:, None] != 0, block, 0)
    return MaskedBlock(client, masked)


def assemble_ps_matrix(masked, tau_direct, tau_relay) -> PsMatrix:
    """Compose the server-side matrix from masked blocks and uplink erasures.

    The identity block keeps column m iff the direct uplink of client m was
    up; relay column s of client m survives iff that client's slot-s uplink
    was up.
    """
    M = len(masked)
    if sorted(mb.client for mb in masked) != list(range(M)):
        raise ValueError("need exactly one masked block per client")
    tau_direct = np.asarray(tau_direct)
    tau_relay = np.asarray(tau_relay).reshape(M, M - 1)
    parts = [np.diag(tau_direct.astype(np.int64))]
    provenance = [("direct", m) for m in range(M)]
    for mb in sorted(masked, key=lambda b: b.client):
        up = tau_relay[mb.client][None, :] != 0
        parts.append(np.where(up, mb.block, 0))
        provenance.extend(("relay", mb.client, s) for s in range(M - 1))
    return PsMatrix(M, np.concatenate(parts, axis=1), tuple(provenance))


def assemble_from_connectivity(code: EncodingMatrix, conn) -> PsMatrix:
    """One-call path from a connectivity realization to the server matrix.

    ``conn`` needs fields ``d2d`` (M x M, entry [z, m] = client m heard z),
    ``direct`` (length M) and ``relay`` (M x (M-1)).
    """
    masked = [
        mask_client_block(code.block(m), m, conn.d2d[:, m]) for m in range(code.M)
    ]
    return assemble_ps_matrix(masked, conn.direct, conn.relay)


def prune(ps: PsMatrix) -> PrunedSystem:
    """Drop all-zero rows and columns; W and V are the surviving indices."""
    w = np.flatnonzero(ps.matrix.any(axis=1))
    v = np.flatnonzero(ps.matrix.any(axis=0))
    matrix = ps.matrix[np.ix_(w, v)]
    provenance = tuple(ps.provenance[j] for j in v)
    return PrunedSystem(w, v, matrix, provenance)


def decode_messages(
    system: PrunedSystem, received: np.ndarray, field: GaloisField
) -> dict:
    """Recover the message of every surviving client, exactly.

    ``received`` holds the surviving codewords as columns (one symbol row per
    message symbol), ordered like ``system.V``. Solvable iff the pruned
    matrix has rank |W|; otherwise the round must be retransmitted.
    """
    n_w = len(system.W)
    if n_w == 0:
        return {}
    received = np.atleast_2d(received)
    if received.shape[1] != len(system.V):
        raise ValueError(
            f"got {received.shape[1]} codeword columns, expected {len(system.V)}"
        )
    try:
        # messages-as-columns times matrix: U Abar = C, so solve the transpose
        u_t = field.solve(system.matrix.T, received.T)
    except RankDeficientError as err:
        raise UndecodableError(err.rank, err.needed) from None
    return {int(system.W[i]): u_t[i] for i in range(n_w)}


def recoverable_clients(system: PrunedSystem, field: GaloisField) -> np.ndarray:
    """Clients whose message is determined even if the full solve fails.

    Client W[i] is recoverable iff the unit row e_i lies in the row space of
    the transposed system, which in reduced row-echelon form shows up as a
    row equal to e_i.
    """
    if len(system.W) == 0:
        return np.array([], dtype=np.int64)
    reduced, _ = field.row_reduce(system.matrix.T)
    single = np.count_nonzero(reduced, axis=1) == 1
    unit_cols = {
        int(np.flatnonzero(row)[0]) for row in reduced[single] if row.max() == 1
    }
    return system.W[sorted(unit_cols)]
