"""Cross-domain mapping network.

A two-layer perceptron ``K -> 2K -> K`` with tanh hidden units translates
source-domain user vectors into the target metric space.  The raw output
is projected onto the unit ball, so mapped vectors satisfy the same norm
constraint as trained target vectors for any input.

Two training signals:

* supervised: for users known in both domains, pull the mapped source
  vector onto the user's target vector (squared distance).
* unsupervised: for any source user, require items they interacted with,
  once mapped, to sit closer to the mapped-user target anchor than random
  non-interacted items, via a margin hinge.

The total objective is ``L_sup + lam * L_unsup``.  ``lam = 0`` (or mode
``supervised-only``) makes both signals collapse onto the identical
supervised code path, so the two configurations produce bit-identical
networks for equal seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyBatch,
    NonFiniteLoss,
    NoOverlapUsers,
)
from .optim import Adam

MODE_SUPERVISED = "supervised-only"
MODE_SEMI = "semi-supervised"


class MappingNetwork:
    """Weights of the translator; treated as immutable outside training."""

    __slots__ = ("w1", "b1", "w2", "b2")

    def __init__(self, w1, b1, w2, b2):
        w1 = np.asarray(w1, dtype=float)
        b1 = np.asarray(b1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        b2 = np.asarray(b2, dtype=float)
        k = w1.shape[1]
        if (w1.shape != (2 * k, k) or b1.shape != (2 * k,)
                or w2.shape != (k, 2 * k) or b2.shape != (k,)):
            raise DimensionMismatch("weights are not K -> 2K -> K shaped")
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @property
    def dim(self):
        return self.w1.shape[1]

    def forward(self, x):
        return mlp_forward(self, x)

    def forward_batch(self, X):
        X = np.asarray(X, dtype=float)
        h = np.tanh(X @ self.w1.T + self.b1)
        y = h @ self.w2.T + self.b2
        norms = np.linalg.norm(y, axis=1)
        big = norms > 1.0
        if np.any(big):
            y[big] /= norms[big][:, None]
        return y


def init_mapping(dim, rng):
    """Glorot-uniform weights, zero biases."""
    lim1 = np.sqrt(6.0 / (dim + 2 * dim))
    w1 = rng.uniform(-lim1, lim1, size=(2 * dim, dim))
    b1 = np.zeros(2 * dim)
    lim2 = np.sqrt(6.0 / (2 * dim + dim))
    w2 = rng.uniform(-lim2, lim2, size=(dim, 2 * dim))
    b2 = np.zeros(dim)
    return MappingNetwork(w1, b1, w2, b2)


def mlp_forward(net, x):
    """Map one source vector; the result always has norm <= 1."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.dim,):
        raise DimensionMismatch(f"expected ({net.dim},), got {x.shape}")
    h = np.tanh(net.w1 @ x + net.b1)
    y = net.w2 @ h + net.b2
    norm = float(np.linalg.norm(y))
    if norm > 1.0:
        y = y / norm
    return y


def supervised_loss(net, source_vecs, target_vecs):
    """Sum of squared distances between mapped sources and their targets."""
    S = np.asarray(source_vecs, dtype=float)
    T = np.asarray(target_vecs, dtype=float)
    if S.shape != T.shape:
        raise DimensionMismatch(f"{S.shape} vs {T.shape}")
    if S.shape[0] == 0:
        raise EmptyBatch("supervised loss over zero pairs")
    Y = net.forward_batch(S)
    d = Y - T
    return float(np.sum(d * d))


def unsupervised_triplet_loss(net, pos_item_vecs, neg_item_vecs,
                              target_anchor_vecs, margin):
    """Sum of hinges pushing mapped positives closer than mapped negatives.

    All three arrays are aligned per row: the anchor is the target-space
    vector the user is tied to, positives are source items the user
    touched, negatives are source items the user did not.
    """
    P = np.asarray(pos_item_vecs, dtype=float)
    N = np.asarray(neg_item_vecs, dtype=float)
    A = np.asarray(target_anchor_vecs, dtype=float)
    if P.shape != N.shape or P.shape != A.shape:
        raise DimensionMismatch("triplet arrays must share one shape")
    if P.shape[0] == 0:
        raise EmptyBatch("unsupervised loss over zero triplets")
    Yp = net.forward_batch(P)
    Yn = net.forward_batch(N)
    dp = np.einsum("ij,ij->i", Yp - A, Yp - A)
    dn = np.einsum("ij,ij->i", Yn - A, Yn - A)
    return float(np.sum(np.maximum(margin + dp - dn, 0.0)))


def total_mapping_loss(sup, unsup, lam):
    if lam < 0:
        raise ConfigError(f"lam must be non-negative, got {lam}")
    return sup + lam * unsup


@dataclass(frozen=True)
class MapTrainConfig:
    lam: float = 0.5
    margin: float = 1.0
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 64
    mode: str = MODE_SEMI
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (MODE_SUPERVISED, MODE_SEMI):
            raise ConfigError(f"unknown mapping mode {self.mode!r}")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")
        if self.margin <= 0 or self.learning_rate <= 0:
            raise ConfigError("margin and learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


class _Backprop:
    """One shared forward/backward pass over a stacked input batch."""

    def __init__(self, net, X):
        self.net = net
        self.X = X
        self.H = np.tanh(X @ net.w1.T + net.b1)
        self.Yr = self.H @ net.w2.T + net.b2
        self.norms = np.linalg.norm(self.Yr, axis=1)
        big = self.norms > 1.0
        self.Y = self.Yr.copy()
        if np.any(big):
            self.Y[big] /= self.norms[big][:, None]
        self.big = big

    def grads(self, dY):
        """dLoss/d(w1, b1, w2, b2) given dLoss/dY."""
        G = dY.copy()
        if np.any(self.big):
            # through y = yr / |yr|: (I - y y^T) / |yr|
            b = self.big
            yhat = self.Y[b]
            inner = np.einsum("ij,ij->i", yhat, dY[b])
            G[b] = (dY[b] - yhat * inner[:, None]) / self.norms[b][:, None]
        dw2 = G.T @ self.H
        db2 = G.sum(axis=0)
        dH = G @ self.net.w2
        dA = dH * (1.0 - self.H * self.H)
        dw1 = dA.T @ self.X
        db1 = dA.sum(axis=0)
        return dw1, db1, dw2, db2


def mapping_loss_and_grads(net, sup_src, sup_tgt, margin=1.0, lam=0.0,
                           pos_vecs=None, neg_vecs=None, anchor_vecs=None):
    """Batch loss and parameter gradients in one shared pass.

    The supervised term sums squared distances between mapped ``sup_src``
    rows and ``sup_tgt`` rows.  When ``lam > 0`` and triplet arrays are
    given, each (pos, neg, anchor) row adds a margin hinge on the mapped
    item distances, weighted by ``lam``.  Returns ``(loss, grads, info)``
    with ``grads = (dw1, db1, dw2, db2)`` and ``info`` carrying the raw
    output norms and hinge arguments (useful to keep finite-difference
    checks away from the kinks).
    """
    S = np.asarray(sup_src, dtype=float)
    T = np.asarray(sup_tgt, dtype=float)
    if S.shape != T.shape:
        raise DimensionMismatch(f"{S.shape} vs {T.shape}")
    m = S.shape[0]
    semi = lam > 0.0 and pos_vecs is not None
    if semi:
        P = np.asarray(pos_vecs, dtype=float)
        N = np.asarray(neg_vecs, dtype=float)
        A = np.asarray(anchor_vecs, dtype=float)
        if P.shape != N.shape or P.shape != A.shape:
            raise DimensionMismatch("triplet arrays must share one shape")
        X = np.concatenate([S, P, N])
    else:
        X = S
    bp = _Backprop(net, X)
    Y = bp.Y
    dY = np.zeros_like(Y)

    diff = Y[:m] - T
    loss = float(np.sum(diff * diff))
    dY[:m] = 2.0 * diff

    hinge_args = np.empty(0)
    if semi:
        t = P.shape[0]
        Yp, Yn = Y[m:m + t], Y[m + t:]
        dp = np.einsum("ij,ij->i", Yp - A, Yp - A)
        dn = np.einsum("ij,ij->i", Yn - A, Yn - A)
        hinge_args = margin + dp - dn
        act = (hinge_args > 0.0)[:, None].astype(float)
        loss += lam * float(np.sum(np.maximum(hinge_args, 0.0)))
        dY[m:m + t] = lam * act * 2.0 * (Yp - A)
        dY[m + t:] = -lam * act * 2.0 * (Yn - A)

    info = {"raw_norms": bp.norms.copy(), "hinge_args": hinge_args}
    return loss, bp.grads(dY), info


def _sample_excluding(rng, n, blocked_sorted):
    """Uniform draw from range(n) minus a sorted blocked array."""
    while True:
        x = int(rng.integers(0, n))
        k = np.searchsorted(blocked_sorted, x)
        if k >= blocked_sorted.shape[0] or blocked_sorted[k] != x:
            return x


def train_mapping(source_space, target_space, scenario, cfg,
                  loss_history=None):
    """Fit the translator on the linked (train-overlap) users.

    Only the train-overlap users' target vectors are ever read, so held
    out test users cannot leak into the mapping.  In semi-supervised mode
    each batch user also contributes one (positive item, negative item)
    triplet, resampled every epoch, anchored at the user's target vector.
    """
    if source_space.dim != target_space.dim:
        raise DimensionMismatch(
            f"source dim {source_space.dim} != target dim "
            f"{target_space.dim}")
    linked = [u for u in scenario.train_overlap_users
              if source_space.has_user(u) and target_space.has_user(u)]
    if not linked:
        raise NoOverlapUsers("no usable train-overlap users")

    semi = cfg.mode == MODE_SEMI and cfg.lam > 0.0
    dim = source_space.dim
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_perm = np.random.default_rng(seeds[1])
    rng_neg = np.random.default_rng(seeds[2])

    net = init_mapping(dim, rng_init)
    opts = [Adam(p.shape, cfg.learning_rate)
            for p in (net.w1, net.b1, net.w2, net.b2)]

    n = len(linked)
    S = np.stack([source_space.user_vec(u) for u in linked])
    T = np.stack([target_space.user_vec(u) for u in linked])

    if semi:
        src = scenario.source
        u_rows = [src.user_index(u) for u in linked]
        pos_lists = [src.item_neighbors(r) for r in u_rows]
        eligible = np.flatnonzero(src.item_degrees() > 0)
        # positions of each user's items inside the eligible pool; the
        # neighbor arrays are ascending so the result stays sorted
        blocked_pos = [np.searchsorted(eligible, plist)
                       for plist in pos_lists]
        Vsrc = np.stack([source_space.item_vec(i) for i in src.item_ids])
        for r, plist in zip(u_rows, pos_lists):
            if plist.shape[0] == 0:
                raise EmptyBatch(
                    f"linked user {src.user_ids[r]} has no source items")
            if eligible.shape[0] - plist.shape[0] < 1:
                raise EmptyBatch("no negative source items to sample")

    for epoch in range(1, cfg.epochs + 1):
        order = rng_perm.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            Sb, Tb = S[b], T[b]
            m = b.shape[0]
            if semi:
                pj = np.empty(m, dtype=np.int64)
                nk = np.empty(m, dtype=np.int64)
                for row, ub in enumerate(b):
                    plist = pos_lists[ub]
                    pj[row] = plist[int(rng_neg.integers(0,
                                                         plist.shape[0]))]
                    nk[row] = eligible[_sample_excluding(
                        rng_neg, eligible.shape[0], blocked_pos[ub])]
                loss, grads, _ = mapping_loss_and_grads(
                    net, Sb, Tb, margin=cfg.margin, lam=cfg.lam,
                    pos_vecs=Vsrc[pj], neg_vecs=Vsrc[nk], anchor_vecs=Tb)
            else:
                loss, grads, _ = mapping_loss_and_grads(net, Sb, Tb)
            epoch_loss += loss
            for opt, param, grad in zip(opts,
                                        (net.w1, net.b1, net.w2, net.b2),
                                        grads):
                opt.step(param, grad)

        if not np.isfinite(epoch_loss):
            raise NonFiniteLoss(epoch, epoch_loss)
        if loss_history is not None:
            loss_history.append(epoch_loss / n)

    return net


# -- mapping file format -------------------------------------------------

def _fmt(x):
    return format(float(x), ".9g")


def save_mapping(net, path):
    """Text format: ``K <dim>`` then W1 rows, b1, W2 rows, b2, one row per
    line at nine significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"K {net.dim}\n")
        for mat in (net.w1,):
            for row in mat:
                fh.write(" ".join(_fmt(x) for x in row) + "\n")
        fh.write(" ".join(_fmt(x) for x in net.b1) + "\n")
        for row in net.w2:
            fh.write(" ".join(_fmt(x) for x in row) + "\n")
        fh.write(" ".join(_fmt(x) for x in net.b2) + "\n")


def load_mapping(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "K":
            raise ValueError(f"{path}: bad mapping header")
        k = int(header[1])
        rows = [np.array([float(x) for x in line.split()])
                for line in fh if line.strip()]
    expect = 2 * k + 1 + k + 1
    if len(rows) != expect:
        raise ValueError(f"{path}: expected {expect} rows, got {len(rows)}")
    w1 = np.stack(rows[:2 * k])
    b1 = rows[2 * k]
    w2 = np.stack(rows[2 * k + 1:3 * k + 1])
    b2 = rows[3 * k + 1]
    return MappingNetwork(w1, b1, w2, b2)
