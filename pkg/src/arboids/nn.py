"""Dense networks with hand-written reverse-mode gradients.

Only the compositions this package trains are supported: fully connected layers,
a mean embedding over a variable-size item set, a tanh-squashed Gaussian head
and the blend-weight adapter. Every ``forward`` returns a cache that the matching
``backward`` consumes; caches are tied to the parameter version they were built
from, so a cache taken before an optimizer step is rejected.
"""
from __future__ import annotations

import math

import numpy as np

LEAKY_SLOPE = 0.01
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
TANH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class StaleCacheError(RuntimeError):
    pass


def activate(z, kind):
    if kind == "leaky_relu":
        # valid because the slope is below one; np.where is much slower here
        return np.maximum(z, LEAKY_SLOPE * z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(z, y, kind):
    if kind == "leaky_relu":
        g = (z > 0).astype(z.dtype)
        g *= 1.0 - LEAKY_SLOPE
        g += LEAKY_SLOPE
        return g
    if kind == "tanh":
        return 1.0 - y * y
    return None


class Module:
    """Base: parameter bookkeeping and version counters for cache validation."""

    children: tuple = ()

    def __init__(self):
        self.version = 0

    def parameters(self) -> list[np.ndarray]:
        out = []
        for _, child in self.children:
            out.extend(child.parameters())
        return out

    def named_parameters(self, prefix="") -> list[tuple[str, np.ndarray]]:
        out = []
        for name, child in self.children:
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.parameters()]

    def bump(self):
        self.version += 1
        for _, child in self.children:
            child.bump()

    def _token(self):
        return (id(self), self.version)

    def _check(self, token):
        if token != self._token():
            raise StaleCacheError(f"{type(self).__name__}: cache predates a parameter update")


class Dense(Module):
    def __init__(self, in_dim: int, out_dim: int, activation: str = "linear",
                 rng: np.random.Generator | None = None, scale: float = 1.0, dtype=np.float32):
        super().__init__()
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError("layer dims must be positive")
        activate(np.zeros(1), activation)
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / math.sqrt(in_dim)
        self.in_dim, self.out_dim, self.activation = in_dim, out_dim, activation
        self.W = (rng.uniform(-bound, bound, (out_dim, in_dim)) * scale).astype(dtype)
        self.b = (rng.uniform(-bound, bound, out_dim) * scale).astype(dtype)

    def parameters(self):
        return [self.W, self.b]

    def named_parameters(self, prefix=""):
        return [(prefix + "W", self.W), (prefix + "b", self.b)]

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        z = x @ self.W.T + self.b
        y = activate(z, self.activation)
        return y, (self._token(), x, z, y)

    def backward(self, cache, dy, need_params=True, need_dx=True):
        token, x, z, y = cache
        self._check(token)
        g = activate_grad(z, y, self.activation)
        dz = dy if g is None else dy * g
        grads = None
        if need_params:
            x2 = x.reshape(-1, self.in_dim)
            dz2 = dz.reshape(-1, self.out_dim)
            grads = [dz2.T @ x2, dz2.sum(axis=0)]
        return grads, (dz @ self.W if need_dx else None)


class MLP(Module):
    def __init__(self, dims: list[int], activations: list[str], rng=None, last_scale: float = 1.0,
                 dtype=np.float32):
        super().__init__()
        if len(activations) != len(dims) - 1:
            raise ValueError("one activation per layer")
        layers = []
        for k, (i, o, act) in enumerate(zip(dims[:-1], dims[1:], activations)):
            scale = last_scale if k == len(activations) - 1 else 1.0
            layers.append(Dense(i, o, act, rng, scale, dtype))
        self.layers = layers
        self.children = tuple((str(k), l) for k, l in enumerate(layers))

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, (self._token(), caches)

    def backward(self, cache, dy, need_params=True):
        token, caches = cache
        self._check(token)
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            g, dy = layer.backward(c, dy, need_params)
            if need_params:
                grads = g + grads
        return (grads if need_params else None), dy


class MeanEmbed(Module):
    """Permutation-invariant embedding: shared layer applied per item, then averaged."""

    def __init__(self, item_dim: int, out_dim: int, rng=None, activation="leaky_relu", dtype=np.float32):
        super().__init__()
        self.layer = Dense(item_dim, out_dim, activation, rng, dtype=dtype)
        self.children = (("layer", self.layer),)
        self.out_dim = out_dim

    def forward(self, items):
        """``items`` is (B, K, item_dim); K may be zero."""
        B, K = items.shape[0], items.shape[1]
        if K == 0:
            return np.zeros((B, self.out_dim), dtype=self.layer.W.dtype), (self._token(), None, 0)
        y, c = self.layer.forward(items)
        # sorting fixes the summation order, so any item permutation gives bit-identical output
        return np.sort(y, axis=1).mean(axis=1), (self._token(), c, K)

    def backward(self, cache, dy):
        token, c, K = cache
        self._check(token)
        if K == 0:
            return self.layer.zero_grads(), None
        dyk = np.repeat(dy[:, None, :] / K, K, axis=1)
        return self.layer.backward(c, dyk)


def mean_embed(items, shared_layer: Dense) -> np.ndarray:
    """Mean of ``shared_layer`` outputs over a list of item vectors (zero vector if empty)."""
    items = list(items)
    if not items:
        return np.zeros(shared_layer.out_dim, dtype=shared_layer.W.dtype)
    y, _ = shared_layer.forward(np.asarray(items, dtype=shared_layer.W.dtype))
    return np.sort(y, axis=0).mean(axis=0)


# ---------------------------------------------------------------- encoders

class DefenderEncoder(Module):
    """State embedding for a defender: teammates (mean embedding), attacker/target, Boids block."""

    ITEM_DIM, AT_DIM, BOIDS_DIM = 3, 6, 8

    def __init__(self, width: int = 64, use_boids: bool = True, rng=None, dtype=np.float32):
        super().__init__()
        self.use_boids = use_boids
        self.team = MeanEmbed(self.ITEM_DIM, width, rng, dtype=dtype)
        self.at = Dense(self.AT_DIM, width, "leaky_relu", rng, dtype=dtype)
        ch = [("team", self.team), ("at", self.at)]
        if use_boids:
            self.boids = Dense(self.BOIDS_DIM, width, "leaky_relu", rng, dtype=dtype)
            ch.append(("boids", self.boids))
        self.children = tuple(ch)
        self.out_dim = width * len(ch)
        self.width = width

    def forward(self, obs):
        parts, caches = [], []
        for name, mod in self.children:
            y, c = mod.forward(obs["items"] if name == "team" else obs[name])
            parts.append(y)
            caches.append(c)
        return np.concatenate(parts, axis=-1), (self._token(), caches)

    def backward(self, cache, dfeat):
        token, caches = cache
        self._check(token)
        grads = []
        for k, ((_, mod), c) in enumerate(zip(self.children, caches)):
            g, _ = mod.backward(c, dfeat[:, k * self.width:(k + 1) * self.width])
            grads += g
        return grads


class FlatEncoder(Module):
    def __init__(self, in_dim: int, width: int = 64, rng=None, dtype=np.float32):
        super().__init__()
        self.layer = Dense(in_dim, width, "leaky_relu", rng, dtype=dtype)
        self.children = (("layer", self.layer),)
        self.out_dim = width

    def forward(self, obs):
        y, c = self.layer.forward(obs["flat"])
        return y, (self._token(), c)

    def backward(self, cache, dfeat):
        token, c = cache
        self._check(token)
        g, _ = self.layer.backward(c, dfeat)
        return g


# ---------------------------------------------------------------- policy head

def squash_forward(mean, log_std, xi=None):
    """Tanh-squashed reparameterised Gaussian.

    ``xi`` is the standard-normal draw; ``None`` gives the deterministic action
    tanh(mean) with no log-probability.
    """
    ls = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    if xi is None:
        a = np.tanh(mean)
        return a, None, None
    std = np.exp(ls)
    u = mean + std * xi
    a = np.tanh(u)
    one_m = 1.0 - a * a
    logp = (-0.5 * xi * xi - ls - _HALF_LOG_2PI - np.log(one_m + TANH_EPS)).sum(axis=-1)
    return a, logp, (log_std, ls, std, xi, a, one_m)


def squash_backward(cache, da, dlogp):
    """Gradients w.r.t. (mean, log_std) given upstream grads on the action and log-prob."""
    log_std, ls, std, xi, a, one_m = cache
    dlogp = dlogp[..., None]
    du = da * one_m + dlogp * (2.0 * a * one_m / (one_m + TANH_EPS))
    dmean = du
    dls = du * std * xi - dlogp
    dls = np.where((log_std >= LOG_STD_MIN) & (log_std <= LOG_STD_MAX), dls, 0.0)
    return dmean, dls


def sample_squashed(mean, log_std, rng: np.random.Generator):
    """Draw an action in (-1, 1)^d with its log-density (change of variables included)."""
    xi = rng.standard_normal(np.shape(mean))
    a, logp, _ = squash_forward(np.asarray(mean, dtype=np.float64), np.asarray(log_std, dtype=np.float64), xi)
    return a, logp


def theta_from_pre(z):
    return 0.5 * (np.tanh(z) + 1.0)


class Adapter(Module):
    """Blend-weight head: (a_drl, a_boids, hidden) -> theta in [0, 1]."""

    def __init__(self, hidden_in: int, width: int = 64, action_dim: int = 2, rng=None, dtype=np.float32):
        super().__init__()
        self.net = MLP([2 * action_dim + hidden_in, width, 1], ["leaky_relu", "tanh"], rng,
                       last_scale=0.01, dtype=dtype)
        self.children = (("net", self.net),)
        self.action_dim = action_dim

    def forward(self, a_drl, a_boids, hidden):
        x = np.concatenate([a_drl, a_boids, hidden], axis=-1).astype(self.net.layers[0].W.dtype, copy=False)
        t, c = self.net.forward(x)
        return 0.5 * (t[:, 0] + 1.0), (self._token(), c)

    def backward(self, cache, dtheta):
        token, c = cache
        self._check(token)
        grads, dx = self.net.backward(c, 0.5 * dtheta[:, None])
        k = self.action_dim
        return grads, dx[:, :k], dx[:, 2 * k:]


def adapter_forward(a_drl, a_boids, decision_hidden, adapter: Adapter) -> np.ndarray:
    a_drl, a_boids, h = (np.atleast_2d(np.asarray(v)) for v in (a_drl, a_boids, decision_hidden))
    theta, _ = adapter.forward(a_drl, a_boids, h)
    return theta


# ---------------------------------------------------------------- actor / critic

class Actor(Module):
    """Embedding + three-layer decision module (+ optional adapter).

    ``adapter_from`` picks which decision hidden layer feeds the adapter:
    "penultimate" (second hidden layer) or "first".
    """

    def __init__(self, encoder: Module, hidden: int = 256, adapter: bool = True, adapter_width: int = 64,
                 adapter_from: str = "penultimate", rng=None, dtype=np.float32, action_dim: int = 2):
        super().__init__()
        self.encoder = encoder
        self.trunk1 = Dense(encoder.out_dim, hidden, "leaky_relu", rng, dtype=dtype)
        self.trunk2 = Dense(hidden, hidden, "leaky_relu", rng, dtype=dtype)
        self.head = Dense(hidden, 2 * action_dim, "linear", rng, scale=0.01, dtype=dtype)
        ch = [("encoder", encoder), ("trunk1", self.trunk1), ("trunk2", self.trunk2), ("head", self.head)]
        self.adapter = Adapter(hidden, adapter_width, action_dim, rng, dtype) if adapter else None
        if adapter:
            ch.append(("adapter", self.adapter))
        if adapter_from not in ("penultimate", "first"):
            raise ValueError("adapter_from must be 'penultimate' or 'first'")
        self.adapter_from = adapter_from
        self.children = tuple(ch)
        self.action_dim = action_dim
        self.dtype = dtype

    def forward(self, obs):
        """Returns (mean, log_std, hidden_for_adapter, cache)."""
        feat, ce = self.encoder.forward(obs)
        h1, c1 = self.trunk1.forward(feat)
        h2, c2 = self.trunk2.forward(h1)
        out, ch = self.head.forward(h2)
        k = self.action_dim
        hid = h2 if self.adapter_from == "penultimate" else h1
        return out[:, :k], out[:, k:], hid, (self._token(), ce, c1, c2, ch)

    def backward(self, cache, dmean, dlog_std, dhidden=None, dadapter=None):
        token, ce, c1, c2, ch = cache
        self._check(token)
        gh, dh2 = self.head.backward(ch, np.concatenate([dmean, dlog_std], axis=-1))
        if dhidden is not None and self.adapter_from == "penultimate":
            dh2 = dh2 + dhidden
        g2, dh1 = self.trunk2.backward(c2, dh2)
        if dhidden is not None and self.adapter_from == "first":
            dh1 = dh1 + dhidden
        g1, dfeat = self.trunk1.backward(c1, dh1)
        genc = self.encoder.backward(ce, dfeat)
        grads = genc + g1 + g2 + gh
        if self.adapter is not None:
            grads += dadapter if dadapter is not None else self.adapter.zero_grads()
        return grads


class Critic(Module):
    """Q(s, a_drl, theta): embedding + action embedding + three dense layers."""

    def __init__(self, encoder: Module, hidden: int = 256, act_width: int = 64, action_dim: int = 2,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.encoder = encoder
        self.act = Dense(action_dim + 1, act_width, "leaky_relu", rng, dtype=dtype)
        self.trunk = MLP([encoder.out_dim + act_width, hidden, hidden, 1],
                         ["leaky_relu", "leaky_relu", "linear"], rng, dtype=dtype)
        self.children = (("encoder", encoder), ("act", self.act), ("trunk", self.trunk))
        self.dtype = dtype

    def forward(self, obs, a_drl, theta):
        feat, ce = self.encoder.forward(obs)
        av = np.concatenate([a_drl, np.asarray(theta).reshape(-1, 1)], axis=-1).astype(self.dtype, copy=False)
        ae, ca = self.act.forward(av)
        q, ct = self.trunk.forward(np.concatenate([feat, ae], axis=-1))
        return q[:, 0], (self._token(), ce, ca, ct, feat.shape[-1])

    def backward(self, cache, dq, need_params=True):
        """Returns (param grads, d a_drl, d theta); param grads are None when not requested."""
        token, ce, ca, ct, fdim = cache
        self._check(token)
        gt, dx = self.trunk.backward(ct, dq[:, None], need_params)
        ga, dav = self.act.backward(ca, dx[:, fdim:], need_params)
        if not need_params:
            return None, dav[:, :-1], dav[:, -1]
        genc = self.encoder.backward(ce, dx[:, :fdim])
        return genc + ga + gt, dav[:, :-1], dav[:, -1]


# ---------------------------------------------------------------- optimisation helpers

class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]):
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        lr = self.lr * math.sqrt(c2) / c1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= (lr * m / (np.sqrt(v) + self.eps)).astype(p.dtype, copy=False)


def soft_update(targets: list[np.ndarray], onlines: list[np.ndarray], tau: float):
    """Polyak averaging in place: target <- (1 - tau) * target + tau * online."""
    if len(targets) != len(onlines):
        raise ValueError("parameter lists differ in length")
    for t, o in zip(targets, onlines):
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {o.shape}")
    for t, o in zip(targets, onlines):
        t *= (1.0 - tau)
        t += tau * o
    return targets


def copy_params(dst: Module, src: Module):
    for d, s in zip(dst.parameters(), src.parameters()):
        d[...] = s
    dst.bump()


def param_digest(module: Module) -> str:
    import hashlib
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()
