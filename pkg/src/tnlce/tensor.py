"""Dense labeled-index tensor algebra.

Tensors carry string index labels instead of positional conventions, so
contraction code never has to track axis permutations by hand.  Scalars
produced by contracting many tensors are kept in log-magnitude form to
avoid under/overflow when hundreds of cluster values are multiplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg


class TensorError(ValueError):
    """Raised for malformed tensors, labels, or contraction requests."""


class DenseTensor:
    """A dense complex tensor with one unique string label per axis."""

    __slots__ = ("labels", "data")

    def __init__(self, labels: Sequence[str], data, check: bool = True):
        data = np.asarray(data, dtype=np.complex128)
        labels = tuple(labels)
        if check:
            if len(labels) != data.ndim:
                raise TensorError(
                    f"{len(labels)} labels for array of rank {data.ndim}"
                )
            if len(set(labels)) != len(labels):
                raise TensorError(f"duplicate labels in {labels}")
            if not np.all(np.isfinite(data)):
                raise TensorError("tensor data contains NaN or Inf")
        self.labels = labels
        self.data = data

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dims(self) -> dict[str, int]:
        return dict(zip(self.labels, self.data.shape))

    def dim(self, label: str) -> int:
        return self.data.shape[self.labels.index(label)]

    def relabeled(self, mapping: Mapping[str, str]) -> "DenseTensor":
        new = tuple(mapping.get(l, l) for l in self.labels)
        return DenseTensor(new, self.data, check=True)

    def conj(self) -> "DenseTensor":
        return DenseTensor(self.labels, np.conj(self.data), check=False)

    def transpose_to(self, labels: Sequence[str]) -> "DenseTensor":
        labels = tuple(labels)
        if set(labels) != set(self.labels):
            raise TensorError(f"cannot transpose {self.labels} to {labels}")
        perm = [self.labels.index(l) for l in labels]
        return DenseTensor(labels, np.transpose(self.data, perm), check=False)

    def fused(self, groups: Mapping[str, Sequence[str]]) -> "DenseTensor":
        """Merge each group of adjacent-ordered labels into one fat label.

        Ungrouped labels keep their position relative to the group order.
        """
        grouped = {l for ls in groups.values() for l in ls}
        order: list[str] = []
        new_labels: list[str] = []
        new_shape: list[int] = []
        done: set[str] = set()
        for l in self.labels:
            if l in grouped:
                for name, ls in groups.items():
                    if l in ls and name not in done:
                        done.add(name)
                        order.extend(ls)
                        new_labels.append(name)
                        new_shape.append(
                            int(np.prod([self.dim(x) for x in ls]))
                        )
                        break
            else:
                order.append(l)
                new_labels.append(l)
                new_shape.append(self.dim(l))
        t = self.transpose_to(order)
        return DenseTensor(new_labels, t.data.reshape(new_shape), check=False)

    def scalar(self) -> complex:
        if self.ndim != 0:
            raise TensorError(f"tensor of rank {self.ndim} is not a scalar")
        return complex(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"DenseTensor(labels={self.labels}, shape={self.data.shape})"


@dataclass(frozen=True)
class LogScalar:
    """A complex scalar stored as (log magnitude, unit phase)."""

    log_mag: float
    phase: complex = 1.0 + 0.0j

    @staticmethod
    def from_value(v: complex) -> "LogScalar":
        v = complex(v)
        m = abs(v)
        if m == 0.0:
            return LogScalar(-math.inf, 1.0 + 0.0j)
        return LogScalar(math.log(m), v / m)

    @staticmethod
    def one() -> "LogScalar":
        return LogScalar(0.0, 1.0 + 0.0j)

    @property
    def value(self) -> complex:
        if self.log_mag == -math.inf:
            return 0.0 + 0.0j
        return self.phase * math.exp(self.log_mag)

    @property
    def real(self) -> float:
        return self.value.real

    def is_zero(self) -> bool:
        return self.log_mag == -math.inf

    def __mul__(self, other: "LogScalar") -> "LogScalar":
        return LogScalar(self.log_mag + other.log_mag, _unit(self.phase * other.phase))

    def __truediv__(self, other: "LogScalar") -> "LogScalar":
        if other.is_zero():
            raise ZeroDivisionError("division by zero LogScalar")
        return LogScalar(self.log_mag - other.log_mag, _unit(self.phase / other.phase))

    def __pow__(self, e: float) -> "LogScalar":
        if self.is_zero():
            if e > 0:
                return LogScalar(-math.inf)
            raise ZeroDivisionError("zero LogScalar to non-positive power")
        return LogScalar(e * self.log_mag, _unit(self.phase**e))

    def log(self) -> complex:
        """Principal complex logarithm."""
        return self.log_mag + complex(np.log(self.phase))


def _unit(z: complex) -> complex:
    m = abs(z)
    return z / m if m != 0 else 1.0 + 0.0j


def log_difference(a: LogScalar, b: LogScalar) -> float:
    """|log a - log b| with the phase ratio on the principal branch."""
    return abs((a.log_mag - b.log_mag) + complex(np.log(_unit(a.phase / b.phase))))


@dataclass
class ScaledTensor:
    """A tensor together with a factored-out log-magnitude scale."""

    tensor: DenseTensor
    log_scale: float

    def to_array(self) -> np.ndarray:
        return self.tensor.data * math.exp(self.log_scale)

    def scalar(self) -> LogScalar:
        v = self.tensor.scalar()
        base = LogScalar.from_value(v)
        if base.is_zero():
            return base
        return LogScalar(base.log_mag + self.log_scale, base.phase)


def contract_pair(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    """Contract two tensors over all shared labels (outer product if none)."""
    shared = [l for l in a.labels if l in b.labels]
    for l in shared:
        if a.dim(l) != b.dim(l):
            raise TensorError(
                f"dimension mismatch on label {l!r}: {a.dim(l)} vs {b.dim(l)}"
            )
    ax_a = [a.labels.index(l) for l in shared]
    ax_b = [b.labels.index(l) for l in shared]
    data = np.tensordot(a.data, b.data, axes=(ax_a, ax_b))
    labels = tuple(l for l in a.labels if l not in shared) + tuple(
        l for l in b.labels if l not in shared
    )
    return DenseTensor(labels, data, check=False)


ContractionPath = tuple  # sequence of (key_a, key_b) pairwise steps


def find_path(net, allow_outer: bool = False) -> tuple:
    """Greedy pairwise contraction path minimizing intermediate tensor size.

    ``net`` is anything with a ``tensors`` mapping of key -> DenseTensor.
    Raises on disconnected networks unless ``allow_outer`` is set, in which
    case remaining components are joined by outer products at the end.
    """
    tensors = dict(net.tensors)
    if len(tensors) <= 1:
        return ()
    order = {k: i for i, k in enumerate(tensors)}
    labels = {k: set(t.labels) for k, t in tensors.items()}
    dims = {k: dict(t.dims) for k, t in tensors.items()}
    path: list[tuple] = []
    while len(labels) > 1:
        best = None
        keys = sorted(labels, key=order.__getitem__)
        for ia, ka in enumerate(keys):
            for kb in keys[ia + 1 :]:
                shared = labels[ka] & labels[kb]
                if not shared:
                    continue
                out = (labels[ka] | labels[kb]) - shared
                cost = 1
                for l in out:
                    cost *= dims[ka].get(l) or dims[kb][l]
                cand = (cost, order[ka], order[kb])
                if best is None or cand < best[0]:
                    best = (cand, ka, kb)
        if best is None:
            if not allow_outer:
                raise TensorError(
                    "network is disconnected; outer products not permitted"
                )
            ka, kb = sorted(
                labels,
                key=lambda k: (int(np.prod(list(dims[k].values()) or [1])), order[k]),
            )[:2]
        else:
            _, ka, kb = best
        shared = labels[ka] & labels[kb]
        labels[ka] = (labels[ka] | labels[kb]) - shared
        dims[ka].update(dims[kb])
        del labels[kb], dims[kb]
        path.append((ka, kb))
    return tuple(path)


def contract_network(net, path=None, allow_outer: bool = False) -> ScaledTensor:
    """Contract a whole network along ``path`` (greedy path if omitted).

    Every intermediate is renormalized to unit max-abs with the factored
    magnitude accumulated in ``log_scale``.
    """
    if path is None:
        path = find_path(net, allow_outer=allow_outer)
    tensors: dict = {}
    log_scale = 0.0
    for k, t in net.tensors.items():
        m = float(np.max(np.abs(t.data))) if t.size else 0.0
        if m > 0.0:
            tensors[k] = DenseTensor(t.labels, t.data / m, check=False)
            log_scale += math.log(m)
        else:
            tensors[k] = t
            log_scale = -math.inf
    for step in path:
        if len(step) != 2:
            raise TensorError(f"malformed path step {step!r}")
        ka, kb = step
        if ka not in tensors or kb not in tensors or ka == kb:
            raise TensorError(f"invalid path step ({ka!r}, {kb!r})")
        c = contract_pair(tensors.pop(ka), tensors.pop(kb))
        m = float(np.max(np.abs(c.data))) if c.size else 0.0
        if m > 0.0:
            c = DenseTensor(c.labels, c.data / m, check=False)
            log_scale += math.log(m)
        else:
            log_scale = -math.inf
        tensors[ka] = c
    if len(tensors) != 1:
        raise TensorError(
            f"path left {len(tensors)} tensors; expected a single result"
        )
    (result,) = tensors.values()
    return ScaledTensor(result, log_scale)


def network_log_scalar(net, path=None, allow_outer: bool = False) -> LogScalar:
    """Fully contract a closed network to a LogScalar."""
    out = contract_network(net, path=path, allow_outer=allow_outer)
    if out.tensor.ndim != 0:
        raise TensorError(
            f"network has open labels {out.tensor.labels}; not a scalar"
        )
    return out.scalar()


def truncated_svd(
    t: DenseTensor,
    left_labels: Sequence[str],
    right_labels: Sequence[str],
    dmax: int | None = None,
    cutoff: float = 0.0,
    new_label: str = "_s",
) -> tuple[DenseTensor, np.ndarray, DenseTensor]:
    """SVD split of ``t`` across a label bipartition, with truncation.

    Returns (U, s, Vh) where U carries ``left_labels + (new_label,)`` and
    Vh carries ``(new_label,) + right_labels``.  Singular values are
    descending; values below ``cutoff * s[0]`` are dropped, at most
    ``dmax`` are kept, and at least one is always kept.  Singular-vector
    phases are fixed deterministically (largest-magnitude U component of
    each column made real positive).
    """
    left_labels = tuple(left_labels)
    right_labels = tuple(right_labels)
    if set(left_labels) | set(right_labels) != set(t.labels) or set(
        left_labels
    ) & set(right_labels):
        raise TensorError("left/right labels must partition the tensor labels")
    tt = t.transpose_to(left_labels + right_labels)
    ldims = [t.dim(l) for l in left_labels]
    rdims = [t.dim(l) for l in right_labels]
    mat = tt.data.reshape(int(np.prod(ldims or [1])), int(np.prod(rdims or [1])))
    try:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        try:
            u, s, vh = scipy.linalg.svd(
                mat, full_matrices=False, lapack_driver="gesvd"
            )
        except Exception as exc:  # decomposition genuinely failed
            raise TensorError(f"SVD decomposition failure: {exc}") from exc
    k = len(s)
    if s[0] > 0.0:
        # drop values below the relative cutoff; exact zeros always go
        k = int(np.sum(s >= cutoff * s[0] if cutoff > 0.0 else s > 0.0))
    if dmax is not None:
        k = min(k, dmax)
    k = max(k, 1)
    u, s, vh = u[:, :k], s[:k].copy(), vh[:k, :]
    # deterministic phases: rotate each column so its largest entry is real+
    for col in range(k):
        idx = int(np.argmax(np.abs(u[:, col])))
        z = u[idx, col]
        if abs(z) > 0:
            ph = z / abs(z)
            u[:, col] = u[:, col] / ph
            vh[col, :] = vh[col, :] * ph
    U = DenseTensor(left_labels + (new_label,), u.reshape(*ldims, k), check=False)
    Vh = DenseTensor((new_label,) + right_labels, vh.reshape(k, *rdims), check=False)
    return U, s, Vh
