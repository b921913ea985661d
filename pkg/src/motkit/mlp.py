"""Two-layer perceptron motion head, trained with hand-derived backprop.

The head maps a feature vector to 5 outputs: one visibility logit (squashed
by a logistic) and a 4-component motion vector. Training minimizes a focal
visibility loss plus a smooth-L1 regression loss that is gated off for
samples without a regression target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import MotionDelta
from .losses import EPS, focal_loss, smooth_l1

PARAM_NAMES = ("w1", "b1", "w2", "b2")


def _sigmoid(z: float) -> float:
    # Stable in both tails.
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@dataclass
class MlpHead:
    """input_dim -> hidden_dim (relu) -> 5 outputs (visibility logit + motion)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def initialize(cls, input_dim: int, hidden_dim: int = 64, rng: np.random.Generator | None = None) -> "MlpHead":
        rng = rng or np.random.default_rng(0)
        return cls(
            w1=rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, hidden_dim)),
            b1=np.zeros(hidden_dim),
            w2=rng.normal(0.0, np.sqrt(2.0 / hidden_dim), size=(hidden_dim, 5)),
            b2=np.zeros(5),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int = 64) -> "MlpHead":
        return cls(
            w1=np.zeros((input_dim, hidden_dim)),
            b1=np.zeros(hidden_dim),
            w2=np.zeros((hidden_dim, 5)),
            b2=np.zeros(5),
        )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def forward(self, features) -> tuple[float, MotionDelta]:
        """Visibility probability and raw motion outputs for one feature vector."""
        out = self._raw_forward(self.params(), np.asarray(features, dtype=np.float64))[-1]
        return _sigmoid(out[0]), MotionDelta(out[1], out[2], out[3], out[4])

    @staticmethod
    def _raw_forward(params, x: np.ndarray):
        if x.shape != (params["w1"].shape[0],):
            raise ValueError(f"feature length {x.shape} does not match input_dim {params['w1'].shape[0]}")
        z1 = x @ params["w1"] + params["b1"]
        h = np.maximum(z1, 0.0)
        out = h @ params["w2"] + params["b2"]
        return z1, h, out

    def to_json(self) -> str:
        doc = {
            "format": "motkit-mlp-head",
            "layers": [
                {"name": k, "shape": list(v.shape), "data": v.ravel(order="C").tolist()}
                for k, v in self.params().items()
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, doc) -> "MlpHead":
        """Rebuild a head from ``to_json`` output (text or parsed document)."""
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        if doc.get("format") != "motkit-mlp-head":
            raise ValueError("not a motion-head checkpoint")
        arrays = {}
        for layer in doc.get("layers", ()):
            arrays[layer["name"]] = np.array(layer["data"], dtype=np.float64).reshape(layer["shape"])
        missing = [k for k in PARAM_NAMES if k not in arrays]
        if missing:
            raise ValueError(f"head checkpoint missing layers: {', '.join(missing)}")
        return cls(**{k: arrays[k] for k in PARAM_NAMES})

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "MlpHead":
        with open(path) as fh:
            return cls.from_json(fh.read())


def sample_loss_and_grads(
    params: dict[str, np.ndarray],
    features: np.ndarray,
    v_star: float,
    m_star,
    gamma: float = 2.0,
    alpha_f: float = 0.25,
    beta_s: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and parameter gradients for a single training sample.

    ``m_star`` may be None when ``v_star`` is 0: the regression term (and its
    gradient) is gated off entirely for such samples.
    """
    x = np.asarray(features, dtype=np.float64)
    z1, h, out = MlpHead._raw_forward(params, x)

    p_raw = _sigmoid(out[0])
    p = min(max(p_raw, EPS), 1.0 - EPS)
    loss, dloss_dp = focal_loss(p, v_star, gamma=gamma, alpha_f=alpha_f)
    dout = np.zeros(5)
    dout[0] = dloss_dp * p_raw * (1.0 - p_raw)

    if v_star >= 0.5:
        if m_star is None:
            raise ValueError("positive sample requires a regression target")
        reg_loss, reg_grad = smooth_l1(out[1:5], m_star, beta_s=beta_s)
        loss += reg_loss
        dout[1:5] = reg_grad

    dh = params["w2"] @ dout
    dz1 = dh * (z1 > 0)
    grads = {
        "w1": np.outer(x, dz1),
        "b1": dz1,
        "w2": np.outer(h, dout),
        "b2": dout,
    }
    return loss, grads


def flatten_params(head: MlpHead) -> np.ndarray:
    return np.concatenate([head.params()[k].ravel() for k in PARAM_NAMES])


def unflatten_like(head: MlpHead, theta: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for k in PARAM_NAMES:
        ref = head.params()[k]
        out[k] = theta[offset : offset + ref.size].reshape(ref.shape).copy()
        offset += ref.size
    return out


def motion_loss_on_params(head: MlpHead, params, features, v_star, m_star) -> tuple[float, np.ndarray]:
    """Flat-vector view of :func:`sample_loss_and_grads`, for gradient checking."""
    loss, grads = sample_loss_and_grads(params, features, v_star, m_star)
    return loss, np.concatenate([grads[k].ravel() for k in PARAM_NAMES])


@dataclass
class SgdMomentum:
    """SGD with classical momentum and L2 weight decay folded into the gradient.

    With momentum 0 and weight decay 0 a step is exactly ``param -= lr * grad``.
    """

    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, head: MlpHead, grads: dict[str, np.ndarray]) -> None:
        params = head.params()
        for k in PARAM_NAMES:
            if k not in self.velocity:
                self.velocity[k] = np.zeros_like(params[k])
            if self.velocity[k].shape != params[k].shape:
                raise ValueError(f"velocity shape mismatch for {k}")
            g = grads[k] + self.weight_decay * params[k]
            self.velocity[k] = self.momentum * self.velocity[k] + g
            params[k] -= self.lr * self.velocity[k]


def motion_train_step(
    head: MlpHead,
    opt: SgdMomentum,
    batch,
    gamma: float = 2.0,
    alpha_f: float = 0.25,
    beta_s: float = 1.0,
) -> float:
    """One optimizer step on a batch of (features, v_star, m_star) samples.

    Gradients are averaged over the batch; the returned loss is the mean
    loss before the update.
    """
    if not batch:
        raise ValueError("empty training batch")
    total = 0.0
    acc = {k: np.zeros_like(v) for k, v in head.params().items()}
    for features, v_star, m_star in batch:
        loss, grads = sample_loss_and_grads(
            head.params(), features, v_star, m_star, gamma=gamma, alpha_f=alpha_f, beta_s=beta_s
        )
        total += loss
        for k in PARAM_NAMES:
            acc[k] += grads[k]
    n = len(batch)
    opt.step(head, {k: v / n for k, v in acc.items()})
    return total / n
