"""Hierarchical softmax over a class taxonomy.

Every parent node p owns a weight matrix of shape (J_p, h_dim_in + 1) whose
last column is the bias. The probability of a leaf is the product of the
per-parent softmax conditionals along its root path, and the cross-entropy
loss of an example is the sum of the negative log conditionals of the correct
child at every parent on that path.

Internally all parent matrices are rows of one stacked array, grouped by
parent (tree id order) and then by child order, so batched forward/backward
passes are a couple of matrix products plus segment reductions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidStep, NotALeaf, ShapeMismatch
from .taxonomy import TaxonomyTree, build_from_edges

# conditionals are floored here before the log
PROB_FLOOR = 1e-300
LOG_FLOOR = float(np.log(PROB_FLOOR))


class TreeLayout:
    """Row bookkeeping for a tree's stacked parent matrices."""

    def __init__(self, tree: TaxonomyTree):
        self.tree = tree
        starts, row_parent, row_child = [], [], []
        self.offsets: dict[int, tuple[int, int]] = {}
        for p in tree.parents:
            start = len(row_parent)
            starts.append(start)
            for c in tree.children[p]:
                row_parent.append(p)
                row_child.append(c)
            self.offsets[p] = (start, len(row_parent))
        self.starts = np.array(starts, dtype=np.intp)
        self.row_parent = np.array(row_parent, dtype=np.intp)
        self.row_child = np.array(row_child, dtype=np.intp)
        self.num_rows = len(row_parent)
        # segment id (position in tree.parents) of each row
        self.row_segment = np.repeat(np.arange(len(starts)), np.diff(np.append(self.starts, self.num_rows)))

        row_of_child = {int(c): r for r, c in enumerate(self.row_child)}
        C = tree.num_classes
        self.path_rows: list[np.ndarray] = []
        # on_path[k, r] = 1 if row r is the correct child of a parent on leaf k's path
        self.on_path = np.zeros((C, self.num_rows))
        # parent_mask[k, r] = 1 if the parent of row r lies on leaf k's path
        self.parent_mask = np.zeros((C, self.num_rows))
        for k, leaf in enumerate(tree.leaves):
            rows = [row_of_child[c] for _, c in tree.path_from_root(leaf)]
            self.path_rows.append(np.array(rows, dtype=np.intp))
            self.on_path[k, rows] = 1.0
            for p, _ in tree.path_from_root(leaf):
                a, b = self.offsets[p]
                self.parent_mask[k, a:b] = 1.0


def layout_for(tree: TaxonomyTree) -> TreeLayout:
    lay = tree.__dict__.get("_layout")
    if lay is None:
        lay = TreeLayout(tree)
        object.__setattr__(tree, "_layout", lay)  # trees are immutable, so caching is safe
    return lay


@dataclass(eq=False)
class HierSoftmaxParams:
    tree: TaxonomyTree
    h_dim_in: int
    weights: np.ndarray  # (N - 1, h_dim_in + 1), rows grouped by parent
    layout: TreeLayout = field(init=False, repr=False)

    def __post_init__(self):
        self.layout = layout_for(self.tree)
        expected = (self.layout.num_rows, self.h_dim_in + 1)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != expected:
            raise ShapeMismatch(f"weights have shape {self.weights.shape}, expected {expected}")

    @classmethod
    def zeros(cls, tree: TaxonomyTree, h_dim_in: int) -> "HierSoftmaxParams":
        return cls(tree, h_dim_in, np.zeros((tree.num_nodes - 1, h_dim_in + 1)))

    @classmethod
    def initialize(cls, tree: TaxonomyTree, h_dim_in: int, rng: np.random.Generator) -> "HierSoftmaxParams":
        """Uniform(-a, a) weights with a = sqrt(6 / (h_dim_in + J_p)); zero biases."""
        params = cls.zeros(tree, h_dim_in)
        for p in tree.parents:
            a = np.sqrt(6.0 / (h_dim_in + tree.fan_out(p)))
            params.matrix(p)[:, :h_dim_in] = rng.uniform(-a, a, size=(tree.fan_out(p), h_dim_in))
        return params

    @classmethod
    def from_matrices(cls, tree: TaxonomyTree, matrices: dict[int, np.ndarray]) -> "HierSoftmaxParams":
        first = np.asarray(matrices[tree.parents[0]])
        params = cls.zeros(tree, first.shape[1] - 1)
        for p in tree.parents:
            m = np.asarray(matrices[p], dtype=np.float64)
            if m.shape != params.matrix(p).shape:
                raise ShapeMismatch(f"matrix for {tree.name(p)!r} has shape {m.shape}")
            params.matrix(p)[...] = m
        return params

    def matrix(self, p: int) -> np.ndarray:
        """View of W_p: row j is the weight vector (bias last) of the j-th child."""
        self.tree.require_parent(p)
        a, b = self.layout.offsets[p]
        return self.weights[a:b]

    def matrices(self) -> dict[int, np.ndarray]:
        return {p: self.matrix(p) for p in self.tree.parents}

    def copy(self) -> "HierSoftmaxParams":
        return HierSoftmaxParams(self.tree, self.h_dim_in, self.weights.copy())


# ---------------------------------------------------------------------------
# per-example operations


def _check_h(params: HierSoftmaxParams, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or h.shape[0] != params.h_dim_in:
        raise DimensionMismatch(f"hidden state has shape {h.shape}, expected ({params.h_dim_in},)")
    return h


def _check_tree(params: HierSoftmaxParams, tree: TaxonomyTree | None) -> TaxonomyTree:
    if tree is None or tree is params.tree:
        return params.tree
    if tree != params.tree:
        raise DimensionMismatch("parameters are bound to a different taxonomy")
    return params.tree


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def conditional_probs(params: HierSoftmaxParams, p: int, h) -> np.ndarray:
    """P(child | p) for every child of parent p, in child order."""
    h = _check_h(params, h)
    W = params.matrix(p)
    return softmax(W[:, :-1] @ h + W[:, -1])


def leaf_log_probs(params: HierSoftmaxParams, tree: TaxonomyTree | None, h) -> np.ndarray:
    """log P(leaf) for all leaves in leaf order."""
    _check_tree(params, tree)
    h = _check_h(params, h)
    return batch_leaf_log_probs(params, h[None, :])[0]


def loss(params: HierSoftmaxParams, tree: TaxonomyTree | None, h, target: int | str) -> float:
    """Cross-entropy of the target leaf: -sum over path parents of log P(m_q | q)."""
    tree = _check_tree(params, tree)
    h = _check_h(params, h)
    return float(_path_loss(params.weights, params.layout, h, target))


def _path_loss(W: np.ndarray, lay: TreeLayout, h: np.ndarray, target):
    """Loss evaluated in the dtype of W and h (float64, or long double for FD oracles)."""
    tree = lay.tree
    total = W.dtype.type(0)
    for q, m in tree.path_from_root(target):
        a, b = lay.offsets[q]
        z = W[a:b, :-1] @ h + W[a:b, -1]
        z = z - z.max()
        logp = z - np.log(np.exp(z).sum())
        total -= max(logp[tree.child_slot(q, m)], LOG_FLOOR)
    return total


def grad_weights(params: HierSoftmaxParams, tree: TaxonomyTree | None, h, target: int | str) -> dict[int, np.ndarray]:
    """d loss / d W_p for the parents on the target's path; other parents are omitted (zero)."""
    tree = _check_tree(params, tree)
    h = _check_h(params, h)
    h1 = np.append(h, 1.0)
    grads = {}
    for p, m in tree.path_from_root(target):
        delta = conditional_probs(params, p, h)
        delta[tree.child_slot(p, m)] -= 1.0
        grads[p] = np.outer(delta, h1)
    return grads


def grad_hidden(params: HierSoftmaxParams, tree: TaxonomyTree | None, h, target: int | str) -> np.ndarray:
    """d loss / d h, summing over every child of every parent on the target's path."""
    tree = _check_tree(params, tree)
    h = _check_h(params, h)
    out = np.zeros(params.h_dim_in)
    for q, m in tree.path_from_root(target):
        delta = conditional_probs(params, q, h)
        delta[tree.child_slot(q, m)] -= 1.0
        out += delta @ params.matrix(q)[:, :-1]
    return out


@dataclass
class PathGradients:
    d_weights: dict[int, np.ndarray]
    d_hidden: np.ndarray


def path_gradients(params: HierSoftmaxParams, tree: TaxonomyTree | None, h, target: int | str) -> PathGradients:
    return PathGradients(grad_weights(params, tree, h, target), grad_hidden(params, tree, h, target))


def predict(params: HierSoftmaxParams, tree: TaxonomyTree | None, h) -> int:
    """Leaf id with the highest global path probability; ties go to the lowest leaf index."""
    tree = _check_tree(params, tree)
    return tree.leaves[int(np.argmax(leaf_log_probs(params, tree, h)))]


def num_parameters(params: HierSoftmaxParams) -> int:
    return int(sum(J * (params.h_dim_in + 1) for J in (params.tree.fan_out(p) for p in params.tree.parents)))


# ---------------------------------------------------------------------------
# batched operations, used by training


def batch_log_conditionals(params: HierSoftmaxParams, H: np.ndarray) -> np.ndarray:
    """(B, R) log P(child | parent) for every stacked row."""
    lay = params.layout
    Z = H @ params.weights[:, :-1].T + params.weights[:, -1]
    Z = Z - np.maximum.reduceat(Z, lay.starts, axis=1)[:, lay.row_segment]
    lse = np.log(np.add.reduceat(np.exp(Z), lay.starts, axis=1))
    return np.maximum(Z - lse[:, lay.row_segment], LOG_FLOOR)


def batch_leaf_log_probs(params: HierSoftmaxParams, H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != params.h_dim_in:
        raise DimensionMismatch(f"hidden batch has shape {H.shape}, expected (B, {params.h_dim_in})")
    L = batch_log_conditionals(params, H)
    return L @ params.layout.on_path.T


def batch_predict(params: HierSoftmaxParams, H: np.ndarray) -> np.ndarray:
    """Class positions (indices into tree.leaves) of the argmax leaves."""
    return np.argmax(batch_leaf_log_probs(params, H), axis=1)


def batch_loss_and_grads(params: HierSoftmaxParams, H: np.ndarray, targets: np.ndarray):
    """Per-example losses, summed weight gradient and per-example hidden gradients.

    `targets` holds class positions (indices into tree.leaves).
    """
    lay = params.layout
    H = np.asarray(H, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.intp)
    L = batch_log_conditionals(params, H)
    onp = lay.on_path[targets]
    losses = -(L * onp).sum(axis=1)
    D = np.exp(L) * lay.parent_mask[targets] - onp
    H1 = np.hstack([H, np.ones((H.shape[0], 1))])
    dW = D.T @ H1
    dH = D @ params.weights[:, :-1]
    return losses, dW, dH


# ---------------------------------------------------------------------------
# finite-difference validation


def relative_error(analytic: float, numeric: float, abs_below: float = 1e-8) -> float:
    """|a - n| / max(|a|, |n|), falling back to |a - n| when both are below `abs_below`."""
    scale = max(abs(analytic), abs(numeric))
    diff = abs(analytic - numeric)
    return diff if scale < abs_below else diff / scale


@dataclass
class GradCheckEntry:
    name: str
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if not e.rel_error <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures


def central_difference(f, x: np.ndarray, index, step: float) -> float:
    old = x[index]
    x[index] = old + step
    fp = f()
    x[index] = old - step
    fm = f()
    x[index] = old
    return float((fp - fm) / (2 * x.dtype.type(step)))


# float64 central differences lose ~eps*|f|/step to cancellation, which swamps
# small gradient entries; the oracle's loss is therefore evaluated in long double.
ORACLE_DTYPES = {"extended": np.longdouble, "double": np.float64}


def gradient_check(params: HierSoftmaxParams, tree: TaxonomyTree | None, h, target: int | str,
                   step: float = 1e-5, tolerance: float = 1e-6, precision: str = "extended",
                   flip_sign: bool = False) -> GradCheckReport:
    """Compare the analytic weight and hidden gradients against central differences of `loss`.

    The analytic gradients are always float64. `precision` selects the dtype the
    finite-difference loss evaluations run in. `flip_sign` negates the analytic
    side and exists only to prove the check can fail.
    """
    if not step > 0:
        raise InvalidStep(f"finite-difference step must be positive, got {step}")
    tree = _check_tree(params, tree)
    h64 = _check_h(params, h)
    target = tree.resolve_leaf(target)
    gw = grad_weights(params, tree, h64, target)
    gh = grad_hidden(params, tree, h64, target)
    if flip_sign:
        gw = {p: -g for p, g in gw.items()}
        gh = -gh

    dtype = ORACLE_DTYPES[precision]
    W = params.weights.astype(dtype)
    hx = h64.astype(dtype)
    lay = params.layout

    def f():
        return _path_loss(W, lay, hx, target)

    entries = []
    for p in tree.parents:
        a, b = lay.offsets[p]
        analytic = gw.get(p, np.zeros((b - a, params.h_dim_in + 1)))
        for idx in np.ndindex(*analytic.shape):
            num = central_difference(f, W, (a + idx[0], idx[1]), step)
            name = f"W[{tree.name(p)}][{idx[0]},{idx[1]}]"
            entries.append(GradCheckEntry(name, float(analytic[idx]), num, relative_error(analytic[idx], num)))
    for k in range(params.h_dim_in):
        num = central_difference(f, hx, k, step)
        entries.append(GradCheckEntry(f"h[{k}]", float(gh[k]), num, relative_error(gh[k], num)))
    return GradCheckReport(entries, tolerance)


# ---------------------------------------------------------------------------
# checkpoints


def params_to_arrays(params: HierSoftmaxParams, prefix: str = "") -> dict[str, np.ndarray]:
    tree = params.tree
    arrays = {
        f"{prefix}edges": np.array(tree.edges(), dtype=str).reshape(-1, 2),
        f"{prefix}h_dim_in": np.array(params.h_dim_in),
        f"{prefix}parents": np.array([tree.name(p) for p in tree.parents], dtype=str),
    }
    for k, p in enumerate(tree.parents):
        arrays[f"{prefix}W{k:05d}"] = params.matrix(p).copy()
    return arrays


def params_from_arrays(arrays, prefix: str = "") -> HierSoftmaxParams:
    tree = build_from_edges((str(a), str(b)) for a, b in arrays[f"{prefix}edges"])
    names = [str(n) for n in arrays[f"{prefix}parents"]]
    if names != [tree.name(p) for p in tree.parents]:
        raise ShapeMismatch("checkpoint parent order does not match its taxonomy")
    mats = {p: arrays[f"{prefix}W{k:05d}"] for k, p in enumerate(tree.parents)}
    params = HierSoftmaxParams.from_matrices(tree, mats)
    if params.h_dim_in != int(arrays[f"{prefix}h_dim_in"]):
        raise ShapeMismatch("checkpoint h_dim_in disagrees with its matrices")
    return params


def save_params(params: HierSoftmaxParams, path: str | Path) -> None:
    """Write an .npz holding the taxonomy edges, h_dim_in and one matrix per parent."""
    with open(path, "wb") as fh:
        np.savez(fh, **params_to_arrays(params), meta=np.array(json.dumps({"format": "hiersoftmax-params", "version": 1})))


def load_params(path: str | Path) -> HierSoftmaxParams:
    with np.load(path, allow_pickle=False) as z:
        return params_from_arrays(z)


__all__ = [
    "HierSoftmaxParams", "PathGradients", "GradCheckReport", "GradCheckEntry",
    "conditional_probs", "leaf_log_probs", "loss", "grad_weights", "grad_hidden", "path_gradients",
    "predict", "num_parameters", "gradient_check", "relative_error",
    "batch_leaf_log_probs", "batch_loss_and_grads", "batch_predict",
    "save_params", "load_params",
]
