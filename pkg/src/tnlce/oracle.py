"""Brute-force reference values for desk-scale fixtures.

Everything here is deliberately independent of the production contraction
machinery: networks are contracted with a self-contained einsum loop, and
a second code path reconstructs full statevectors, so the engine is never
validated against its own kernels.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .models import Model

MAX_INTERMEDIATE = 2**26  # entries; guard against intractable contractions


class OracleError(RuntimeError):
    """Raised when a reference computation would exceed the size guard."""


LabeledArray = tuple[np.ndarray, tuple]


def exact_contract(tensors: Iterable[LabeledArray]) -> complex:
    """Contract labeled arrays to a scalar by repeated pairwise einsum.

    Pairs are chosen greedily by smallest result size.  Labels may be any
    hashable values; each must appear exactly twice.
    """
    pool: list[tuple[np.ndarray, tuple]] = [
        (np.asarray(a, dtype=np.complex128), tuple(ls)) for a, ls in tensors
    ]
    if not pool:
        return 1.0 + 0.0j
    counts: dict = {}
    for _, ls in pool:
        for l in ls:
            counts[l] = counts.get(l, 0) + 1
    bad = [l for l, c in counts.items() if c != 2]
    if bad:
        raise OracleError(f"labels {bad} do not appear exactly twice")

    def pair_result_size(la, lb):
        shared = set(la[1]) & set(lb[1])
        size = 1
        for arr, ls in (la, lb):
            for ax, l in enumerate(ls):
                if l not in shared:
                    size *= arr.shape[ax]
        return size

    while len(pool) > 1:
        best = None
        for i in range(len(pool)):
            for j in range(i + 1, len(pool)):
                if set(pool[i][1]) & set(pool[j][1]):
                    size = pair_result_size(pool[i], pool[j])
                    if best is None or size < best[0]:
                        best = (size, i, j)
        if best is None:
            # disconnected: multiply scalar components
            size, i, j = pair_result_size(pool[0], pool[1]), 0, 1
            best = (size, i, j)
        size, i, j = best
        if size > MAX_INTERMEDIATE:
            raise OracleError(
                f"intermediate of {size} entries exceeds oracle guard"
            )
        (a, la), (b, lb) = pool[i], pool[j]
        shared = [l for l in la if l in lb]
        ax_a = [la.index(l) for l in shared]
        ax_b = [lb.index(l) for l in shared]
        c = np.tensordot(a, b, axes=(ax_a, ax_b))
        lc = tuple(l for l in la if l not in shared) + tuple(
            l for l in lb if l not in shared
        )
        rest = [pool[k] for k in range(len(pool)) if k not in (i, j)]
        pool = rest + [(c, lc)]
    arr, ls = pool[0]
    if ls:
        raise OracleError(f"network left open labels {ls}")
    return complex(arr)


def _sandwich_tensors(state, op: np.ndarray | None, op_sites: Sequence[int]):
    """Labeled arrays of <psi|O|psi> for a Vidal or symmetric state."""
    sym = state.to_symmetric() if hasattr(state, "to_symmetric") else state
    g = sym.graph
    op_sites = tuple(op_sites)
    out: list[LabeledArray] = []
    for i in g.sites():
        t = sym.tensors[i]
        ket_labels = tuple(
            ("p", i) if l.startswith("p") else ("v", int(l[1:]))
            for l in t.labels
        )
        bra_labels = tuple(
            (("q", i) if i in op_sites else ("p", i))
            if kind == "p"
            else ("w", which)
            for kind, which in ket_labels
        )
        out.append((t.data, ket_labels))
        out.append((np.conj(t.data), bra_labels))
    if op is not None:
        op = np.asarray(op, dtype=np.complex128)
        k = len(op_sites)
        shape = (2,) * (2 * k)
        labels = tuple(("q", s) for s in op_sites) + tuple(
            ("p", s) for s in op_sites
        )
        out.append((op.reshape(shape), labels))
    return out


def exact_norm(state) -> float:
    """<psi|psi> by full network contraction."""
    val = exact_contract(_sandwich_tensors(state, None, ()))
    return float(val.real)


def exact_expectation(state, op: np.ndarray, sites: Sequence[int]) -> complex:
    """<psi|O|psi> / <psi|psi> by full network contraction."""
    num = exact_contract(_sandwich_tensors(state, op, sites))
    den = exact_contract(_sandwich_tensors(state, None, ()))
    if den == 0:
        raise OracleError("state has zero norm")
    return num / den


def statevector(state) -> np.ndarray:
    """Reconstruct the full 2^N amplitude tensor of a tensor-network state.

    Independent second path: contracts site tensors in site order keeping
    all physical indices open.
    """
    sym = state.to_symmetric() if hasattr(state, "to_symmetric") else state
    g = sym.graph
    n = g.n_sites
    if 2**n > MAX_INTERMEDIATE:
        raise OracleError(f"statevector of {n} sites exceeds oracle guard")
    acc: np.ndarray | None = None
    acc_labels: list = []
    for i in range(n):
        t = sym.tensors[i]
        labels = [
            ("p", i) if l.startswith("p") else ("v", int(l[1:]))
            for l in t.labels
        ]
        if acc is None:
            acc, acc_labels = t.data, labels
            continue
        shared = [l for l in labels if l in acc_labels]
        ax_a = [acc_labels.index(l) for l in shared]
        ax_b = [labels.index(l) for l in shared]
        size = (acc.size // int(np.prod([acc.shape[a] for a in ax_a] or [1]))) * (
            t.data.size // int(np.prod([t.data.shape[a] for a in ax_b] or [1]))
        )
        if size > MAX_INTERMEDIATE:
            raise OracleError("statevector intermediate exceeds oracle guard")
        acc = np.tensordot(acc, t.data, axes=(ax_a, ax_b))
        acc_labels = [l for l in acc_labels if l not in shared] + [
            l for l in labels if l not in shared
        ]
    order = [acc_labels.index(("p", i)) for i in range(n)]
    return np.transpose(acc, order)


def statevector_expectation(
    state, op: np.ndarray, sites: Sequence[int]
) -> complex:
    """<O> from the reconstructed statevector."""
    psi = statevector(state)
    n = psi.ndim
    op = np.asarray(op, dtype=np.complex128)
    k = len(sites)
    opt = op.reshape((2,) * (2 * k))
    # apply O to the ket on the given axes
    applied = np.tensordot(opt, psi, axes=(list(range(k, 2 * k)), list(sites)))
    applied = np.moveaxis(applied, list(range(k)), list(sites))
    num = complex(np.vdot(psi.reshape(-1), applied.reshape(-1)))
    den = float(np.vdot(psi.reshape(-1), psi.reshape(-1)).real)
    if den == 0:
        raise OracleError("state has zero norm")
    return num / den


def model_energy(state, model: Model, method: str = "auto") -> float:
    """Energy of a tensor-network state under ``model`` (exact contraction)."""
    n = model.graph.n_sites
    if method == "auto":
        method = "statevector" if 2**n <= 2**20 else "network"
    total = 0.0
    if method == "statevector":
        psi = statevector(state)
        den = float(np.vdot(psi.reshape(-1), psi.reshape(-1)).real)
        for t in model.terms:
            k = len(t.sites)
            opt = t.matrix.reshape((2,) * (2 * k))
            applied = np.tensordot(
                opt, psi, axes=(list(range(k, 2 * k)), list(t.sites))
            )
            applied = np.moveaxis(applied, list(range(k)), list(t.sites))
            total += float(np.vdot(psi.reshape(-1), applied.reshape(-1)).real) / den
    elif method == "network":
        for t in model.terms:
            total += float(exact_expectation(state, t.matrix, t.sites).real)
    else:
        raise ValueError(f"unknown method {method!r}")
    return total


def _embed_one_site(op: np.ndarray, site: int, n: int) -> scipy.sparse.csr_matrix:
    mats = [scipy.sparse.identity(2, format="csr", dtype=np.complex128)] * n
    mats = list(mats)
    mats[site] = scipy.sparse.csr_matrix(op)
    out = mats[0]
    for m in mats[1:]:
        out = scipy.sparse.kron(out, m, format="csr")
    return out


def _embed_two_site(
    op: np.ndarray, sites: Sequence[int], n: int
) -> scipy.sparse.csr_matrix:
    i, j = sites
    # decompose the two-site operator into a sum of single-site products
    m = np.asarray(op).reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    u, s, vh = np.linalg.svd(m)
    out = None
    for k in range(len(s)):
        if s[k] < 1e-14:
            continue
        a = (u[:, k] * s[k]).reshape(2, 2)
        b = vh[k, :].reshape(2, 2)
        piece = _embed_one_site(a, i, n) @ _embed_one_site(b, j, n)
        out = piece if out is None else out + piece
    return out


def exact_ground_state(model: Model) -> tuple[float, np.ndarray]:
    """Lowest eigenpair of the assembled Hamiltonian (<= 16 sites)."""
    n = model.graph.n_sites
    if n > 16:
        raise OracleError(f"{n} sites exceeds the exact diagonalization guard")
    h = None
    for t in model.terms:
        full = (
            _embed_one_site(t.matrix, t.sites[0], n)
            if len(t.sites) == 1
            else _embed_two_site(t.matrix, t.sites, n)
        )
        h = full if h is None else h + full
    if h is None:
        raise OracleError("model has no terms")
    dim = 2**n
    if dim <= 512:
        w, v = np.linalg.eigh(h.toarray())
        return float(w[0]), v[:, 0]
    w, v = scipy.sparse.linalg.eigsh(h, k=1, which="SA")
    return float(w[0]), v[:, 0]
