"""Small tanh MLPs with exact gradients, Hessian- and GGN-vector products.

Everything works on a single flat parameter vector.  Layer ``l`` owns a weight
block of shape ``(in, out)`` stored row-major followed by a bias block of
shape ``(out,)``.  The loss is the negative log posterior summed over data
points::

    L(theta) = sum_n nll(y_n, f_theta(x_n)) + lam / 2 * ||theta||^2

Curvature products are computed with the R-operator (forward-over-reverse)
applied to the hand-written backward pass, vectorised over a batch of
directions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import NumericError, ShapeError, TrainingDivergenceError

LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class ParamBlock:
    layer: int
    name: str  # "weight" or "bias"
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def mlp_layout(layer_widths: Sequence[int]) -> tuple[ParamBlock, ...]:
    blocks = []
    offset = 0
    for layer, (n_in, n_out) in enumerate(zip(layer_widths[:-1], layer_widths[1:])):
        blocks.append(ParamBlock(layer, "weight", offset, (n_in, n_out)))
        offset += n_in * n_out
        blocks.append(ParamBlock(layer, "bias", offset, (n_out,)))
        offset += n_out
    return tuple(blocks)


def num_params(layer_widths: Sequence[int]) -> int:
    return sum(i * o + o for i, o in zip(layer_widths[:-1], layer_widths[1:]))


@dataclass(frozen=True)
class FlatParams:
    values: np.ndarray
    layout: tuple[ParamBlock, ...]

    def __post_init__(self):
        offset = 0
        for block in self.layout:
            if block.offset != offset:
                raise ShapeError(f"layout block {block.layer}/{block.name} is not contiguous")
            offset += block.size
        if self.values.shape != (offset,):
            raise ShapeError(f"expected {offset} parameter values, got shape {self.values.shape}")

    def __len__(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "FlatParams":
        return FlatParams(np.asarray(values, dtype=float), self.layout)


@dataclass(frozen=True)
class GaussianRegression:
    noise_sigma: float = 0.1

    def __post_init__(self):
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")

    name = "gaussian"


@dataclass(frozen=True)
class BernoulliLogit:
    name = "bernoulli"


Head = GaussianRegression | BernoulliLogit


@dataclass(frozen=True)
class MlpModel:
    layer_widths: tuple[int, ...]
    head: Head
    params: FlatParams
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.layer_widths) < 2 or any(w < 1 for w in self.layer_widths):
            raise ShapeError(f"invalid layer widths {self.layer_widths}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.params) != num_params(self.layer_widths):
            raise ShapeError("parameter vector does not match the architecture")
        if isinstance(self.head, BernoulliLogit) and self.layer_widths[-1] != 1:
            raise ShapeError("Bernoulli head needs a single output logit")

    @property
    def theta(self) -> np.ndarray:
        return self.params.values

    @property
    def num_params(self) -> int:
        return len(self.params)

    @property
    def task(self) -> str:
        return "regression" if isinstance(self.head, GaussianRegression) else "classification"

    def with_theta(self, theta: np.ndarray) -> "MlpModel":
        return replace(self, params=self.params.with_values(theta))


@dataclass(frozen=True)
class Dataset:
    """Inputs ``(N, D)``; targets ``(N, C)`` floats or ``(N,)`` integer labels."""

    inputs: np.ndarray
    targets: np.ndarray
    task: str
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ShapeError("inputs must be a non-empty (N, D) matrix")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ShapeError("inputs and targets have different row counts")
        if self.task == "regression" and self.targets.ndim != 2:
            raise ShapeError("regression targets must be (N, C)")
        if self.task == "classification" and self.targets.ndim != 1:
            raise ShapeError("classification labels must be (N,)")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.task, dict(self.meta))


@dataclass(frozen=True)
class PriorSpec:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("prior precision must be positive")


def init_params(layer_widths: Sequence[int], seed: int) -> FlatParams:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.Generator(np.random.PCG64(seed))
    layout = mlp_layout(layer_widths)
    values = np.empty(num_params(layer_widths))
    for block in layout:
        bound = 1.0 / math.sqrt(layer_widths[block.layer])
        values[block.offset : block.offset + block.size] = rng.uniform(-bound, bound, block.size)
    return FlatParams(values, layout)


def make_mlp(layer_widths: Sequence[int], head: Head, seed: int = 0) -> MlpModel:
    widths = tuple(int(w) for w in layer_widths)
    return MlpModel(widths, head, init_params(widths, seed))


# --------------------------------------------------------------------------
# kernels on raw arrays


def unpack(layer_widths: Sequence[int], theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``[(W_0, b_0), ...]`` into ``theta``; no copies."""
    out = []
    offset = 0
    for n_in, n_out in zip(layer_widths[:-1], layer_widths[1:]):
        W = theta[offset : offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        out.append((W, theta[offset : offset + n_out]))
        offset += n_out
    return out


def _unpack_batch(layer_widths, V: np.ndarray):
    # V is (B, K)
    out = []
    offset = 0
    B = V.shape[0]
    for n_in, n_out in zip(layer_widths[:-1], layer_widths[1:]):
        VW = V[:, offset : offset + n_in * n_out].reshape(B, n_in, n_out)
        offset += n_in * n_out
        out.append((VW, V[:, offset : offset + n_out]))
        offset += n_out
    return out


def _forward_acts(layers, x):
    acts = [x]
    a = x
    for W, b in layers[:-1]:
        a = np.tanh(a @ W + b)
        acts.append(a)
    W, b = layers[-1]
    return acts, a @ W + b


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite value", where=what)


def _output_terms(head: Head, f: np.ndarray, targets: np.ndarray):
    """Per-point NLL, dNLL/df and d2NLL/df2 (diagonal) for the head."""
    if isinstance(head, GaussianRegression):
        s2 = head.noise_sigma**2
        resid = f - targets
        nll = 0.5 * resid**2 / s2 + math.log(head.noise_sigma) + 0.5 * LOG_2PI
        return nll.sum(axis=1), resid / s2, np.full_like(f, 1.0 / s2)
    y = targets.reshape(-1, 1).astype(float)
    p = _sigmoid(f)
    nll = np.logaddexp(0.0, f) - y * f
    return nll[:, 0], p - y, p * (1.0 - p)


def _sigmoid(f):
    return 0.5 * (1.0 + np.tanh(0.5 * f))


def _validate_inputs(model: MlpModel, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != model.layer_widths[0]:
        raise ShapeError(f"expected inputs with {model.layer_widths[0]} columns, got shape {x.shape}")


def _validate_task(model: MlpModel, data: Dataset):
    if data.task != model.task:
        raise ShapeError(f"dataset task {data.task!r} does not match model head ({model.task!r})")
    _validate_inputs(model, data.inputs)
    if data.task == "regression" and data.targets.shape[1] != model.layer_widths[-1]:
        raise ShapeError("target dimension does not match network output")


# --------------------------------------------------------------------------
# public operations


def forward(model: MlpModel, x: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
    """Raw network outputs (regression mean or logits), shape ``(N, C)``."""
    x = np.asarray(x, dtype=float)
    _validate_inputs(model, x)
    layers = unpack(model.layer_widths, model.theta if theta is None else theta)
    return _forward_acts(layers, x)[1]


def forward_batch(model: MlpModel, x: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Outputs for a stack of parameter vectors ``(S, K)`` -> ``(S, N, C)``."""
    x = np.asarray(x, dtype=float)
    _validate_inputs(model, x)
    a = x
    layers = _unpack_batch(model.layer_widths, np.asarray(thetas, dtype=float))
    for VW, Vb in layers[:-1]:
        a = np.tanh(a @ VW + Vb[:, None, :])
    VW, Vb = layers[-1]
    return a @ VW + Vb[:, None, :]


def data_nll(model: MlpModel, data: Dataset, theta: np.ndarray | None = None) -> float:
    _validate_task(model, data)
    theta = model.theta if theta is None else theta
    layers = unpack(model.layer_widths, theta)
    acts, f = _forward_acts(layers, data.inputs)
    for i, a in enumerate(acts[1:] + [f]):
        _check_finite(a, f"layer {i}")
    nll, _, _ = _output_terms(model.head, f, data.targets)
    return float(nll.sum())


def neg_log_posterior(model: MlpModel, data: Dataset, prior: PriorSpec,
                      theta: np.ndarray | None = None) -> float:
    theta = model.theta if theta is None else theta
    return data_nll(model, data, theta) + 0.5 * prior.lam * float(theta @ theta)


def gradient(model: MlpModel, data: Dataset, prior: PriorSpec,
             theta: np.ndarray | None = None) -> np.ndarray:
    """Exact reverse-mode gradient of the negative log posterior."""
    return _loss_and_grad(model, data, prior, theta)[1]


def _loss_and_grad(model, data, prior, theta=None, scale=1.0):
    _validate_task(model, data)
    theta = model.theta if theta is None else theta
    widths = model.layer_widths
    layers = unpack(widths, theta)
    acts, f = _forward_acts(layers, data.inputs)
    nll, delta, _ = _output_terms(model.head, f, data.targets)
    grad = np.empty_like(theta)
    gl = unpack(widths, grad)
    for l in range(len(layers) - 1, -1, -1):
        gW, gb = gl[l]
        gW[...] = acts[l].T @ delta
        gb[...] = delta.sum(axis=0)
        if l:
            delta = (delta @ layers[l][0].T) * (1.0 - acts[l] ** 2)
    grad *= scale
    grad += prior.lam * theta
    loss = scale * float(nll.sum()) + 0.5 * prior.lam * float(theta @ theta)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite loss or gradient", where="gradient")
    return loss, grad


def curvature_matvec(model: MlpModel, data: Dataset, prior: PriorSpec | None, V: np.ndarray,
                     theta: np.ndarray | None = None, ggn: bool = False,
                     scale: float = 1.0) -> np.ndarray:
    """``(scale * C + lam I) V`` with ``C`` the data Hessian or the GGN.

    ``V`` may be a vector ``(K,)`` or a stack of columns ``(K, B)``.
    """
    _validate_task(model, data)
    theta = model.theta if theta is None else theta
    V = np.asarray(V, dtype=float)
    single = V.ndim == 1
    Vb = V[None, :] if single else V.T  # (B, K)
    if Vb.shape[1] != theta.shape[0]:
        raise ShapeError(f"direction has length {Vb.shape[1]}, expected {theta.shape[0]}")

    widths = model.layer_widths
    layers = unpack(widths, theta)
    dirs = _unpack_batch(widths, Vb)
    acts, f = _forward_acts(layers, data.inputs)
    _, delta, lam_out = _output_terms(model.head, f, data.targets)

    # forward R-pass: Ra[l] is the directional derivative of acts[l]
    Ra = [None]
    Rz = None
    for l, ((W, _), (VW, Vbias)) in enumerate(zip(layers, dirs)):
        Rz = acts[l] @ VW + Vbias[:, None, :]
        if Ra[l] is not None:
            Rz += Ra[l] @ W
        if l < len(layers) - 1:
            Ra.append((1.0 - acts[l + 1] ** 2) * Rz)

    Rdelta = lam_out * Rz  # (B, N, C)
    B = Vb.shape[0]
    out = np.empty((B, theta.shape[0]))
    gl = _unpack_batch(widths, out)
    for l in range(len(layers) - 1, -1, -1):
        W = layers[l][0]
        RgW, Rgb = gl[l]
        RgW[...] = acts[l].T @ Rdelta
        if not ggn and Ra[l] is not None:
            RgW += Ra[l].transpose(0, 2, 1) @ delta
        Rgb[...] = Rdelta.sum(axis=1)
        if l:
            dact = 1.0 - acts[l] ** 2
            back = Rdelta @ W.T
            if ggn:
                back *= dact
            else:
                dW = delta @ W.T
                back += delta @ dirs[l][0].transpose(0, 2, 1)
                back *= dact
                if Ra[l] is not None:
                    back -= 2.0 * acts[l] * Ra[l] * dW
                delta = dW * dact
            Rdelta = back
    out *= scale
    if prior is not None:
        out += prior.lam * Vb
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite curvature product", where="ggn_vp" if ggn else "hvp")
    return out[0] if single else out.T


def hvp(model: MlpModel, data: Dataset, prior: PriorSpec, v: np.ndarray,
        theta: np.ndarray | None = None) -> np.ndarray:
    """Exact ``(H + lam I) v`` by forward-over-reverse differentiation."""
    return curvature_matvec(model, data, prior, v, theta=theta, ggn=False)


def ggn_vp(model: MlpModel, data: Dataset, prior: PriorSpec, v: np.ndarray,
           theta: np.ndarray | None = None) -> np.ndarray:
    """``(J^T Lambda J + lam I) v`` with ``Lambda`` the output-space Hessian of the NLL."""
    return curvature_matvec(model, data, prior, v, theta=theta, ggn=True)


def jacobian(model: MlpModel, x: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
    """Per-point Jacobian of the outputs, shape ``(N, C, K)``."""
    x = np.asarray(x, dtype=float)
    _validate_inputs(model, x)
    theta = model.theta if theta is None else theta
    widths = model.layer_widths
    layers = unpack(widths, theta)
    acts, f = _forward_acts(layers, x)
    N, C = f.shape
    J = np.empty((N, C, theta.shape[0]))
    delta = np.broadcast_to(np.eye(C)[:, None, :], (C, N, C))  # (C, N, out)
    offsets = [b.offset for b in mlp_layout(widths) if b.name == "weight"]
    for l in range(len(layers) - 1, -1, -1):
        n_in, n_out = widths[l], widths[l + 1]
        off = offsets[l]
        J[:, :, off : off + n_in * n_out] = np.einsum(
            "ni,cnj->ncij", acts[l], delta).reshape(N, C, n_in * n_out)
        J[:, :, off + n_in * n_out : off + n_in * n_out + n_out] = delta.transpose(1, 0, 2)
        if l:
            delta = (delta @ layers[l][0].T) * (1.0 - acts[l] ** 2)
    return J


def train_map(model: MlpModel, data: Dataset, prior: PriorSpec, epochs: int, lr: float = 1e-2,
              seed: int | None = None, betas=(0.9, 0.999), eps: float = 1e-8) -> MlpModel:
    """Full-batch Adam on the negative log posterior.

    With ``seed`` given the parameters are re-initialised first; otherwise
    training starts from ``model.params``.  Returns a new model.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if seed is not None:
        model = replace(model, params=init_params(model.layer_widths, seed))
    theta = model.theta.copy()
    if epochs == 0:
        return model.with_theta(theta)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = betas
    initial, _ = _loss_and_grad(model, data, prior, theta)
    limit = 1e6 * max(abs(initial), 1.0)
    for step in range(1, epochs + 1):
        loss, g = _loss_and_grad(model, data, prior, theta)
        if loss > limit:
            raise TrainingDivergenceError(f"loss {loss:.3g} exceeded divergence limit", where=f"epoch {step}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**step)
        vhat = v / (1 - b2**step)
        theta -= lr * mhat / (np.sqrt(vhat) + eps)
    return model.with_theta(theta)


def polish_map(model: MlpModel, data: Dataset, prior: PriorSpec, max_iter: int = 20000,
               gtol: float = 1e-8) -> MlpModel:
    """Drive the gradient towards zero with L-BFGS, starting from ``model``.

    A few hundred Adam epochs leave the gradient norm far from zero; the
    tube construction expects a stationary point.
    """
    if max_iter <= 0:
        return model
    res = minimize(lambda th: _loss_and_grad(model, data, prior, th), model.theta, jac=True,
                   method="L-BFGS-B", options={"maxiter": max_iter, "gtol": gtol})
    if not np.all(np.isfinite(res.x)):
        raise TrainingDivergenceError("non-finite parameters after L-BFGS", where="polish")
    theta = res.x
    # L-BFGS never returns a worse point than it was given, but guard anyway
    if _loss_and_grad(model, data, prior, theta)[0] > _loss_and_grad(model, data, prior)[0]:
        theta = model.theta
    return model.with_theta(theta)


def grad_norm(model: MlpModel, data: Dataset, prior: PriorSpec) -> float:
    return float(np.linalg.norm(_loss_and_grad(model, data, prior)[1]))


# --------------------------------------------------------------------------
# checkpoints


def model_to_dict(model: MlpModel, seed: int | None = None) -> dict:
    head = model.head
    return {
        "layer_widths": list(model.layer_widths),
        "activation": model.activation,
        "head": head.name,
        "noise_sigma": head.noise_sigma if isinstance(head, GaussianRegression) else None,
        "K": model.num_params,
        "seed": seed,
        # repr of a float is the shortest string that round-trips exactly
        "values": [float(x) for x in model.theta],
    }


def model_from_dict(d: dict) -> MlpModel:
    head = GaussianRegression(d["noise_sigma"]) if d["head"] == "gaussian" else BernoulliLogit()
    widths = tuple(int(w) for w in d["layer_widths"])
    values = np.array(d["values"], dtype=float)
    if d.get("K") is not None and d["K"] != values.shape[0]:
        raise ShapeError(f"checkpoint says K={d['K']} but holds {values.shape[0]} values")
    return MlpModel(widths, head, FlatParams(values, mlp_layout(widths)), d.get("activation", "tanh"))


def save_checkpoint(model: MlpModel, path, seed: int | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, seed), indent=1))


def load_checkpoint(path) -> MlpModel:
    return model_from_dict(json.loads(Path(path).read_text()))
