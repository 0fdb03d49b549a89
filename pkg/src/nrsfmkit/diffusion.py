"""Desk-scale conditional denoising diffusion prior over 3D poses.

The forward chain perturbs a flattened pose y0 with Gaussian noise under a
linear beta schedule; a two-hidden-layer perceptron predicts the clean pose
directly from (noisy pose, flattened 2D condition, sinusoidal timestep
embedding).  Once frozen, the model scores how well a candidate pose fits the
learned distribution (prior_loss) or generates poses by ancestral sampling.

Inputs are standardized internally by a single scalar (`data_scale`) so
training behaves identically for unit-scale and millimeter-scale poses; all
loss values stay in data units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import load_checkpoint, save_checkpoint
from .errors import NumericalError
from .nn import linear, sinusoidal_embedding
from .optim import Adam

EMBED_DIM = 16
HIDDEN_DIM = 128


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta schedule with cached alpha products; timesteps are 1..T."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-d array")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie strictly in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @classmethod
    def linear(cls, timesteps=50, beta_start=1e-4, beta_end=0.1):
        return cls(np.linspace(beta_start, beta_end, timesteps))

    @property
    def timesteps(self):
        return self.betas.size

    def alpha_bar(self, t):
        """Cumulative alpha product at step t (alpha_bar(0) == 1 by convention)."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.timesteps):
            raise ValueError(f"timestep out of range 0..{self.timesteps}: {t}")
        padded = np.concatenate([[1.0], self.alpha_bars])
        return padded[t]


def forward_noise(schedule, y0, t, eps):
    """Noised pose sqrt(abar_t) y0 + sqrt(1 - abar_t) eps.

    Scalar t applies to the whole array; a vector t of length N pairs with a
    batch of N rows in y0/eps.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != y0.shape:
        raise ValueError(f"eps shape {eps.shape} must match y0 shape {y0.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > schedule.timesteps):
        raise ValueError(f"timestep out of range 1..{schedule.timesteps}: {t}")
    ab = schedule.alpha_bar(t_arr)
    if t_arr.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (y0.ndim - 1))
    return np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps


class Denoiser:
    """Two-hidden-layer perceptron predicting the clean pose from (y_t, c, t)."""

    PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    def __init__(self, pose_dim, cond_dim, hidden=HIDDEN_DIM, data_scale=1.0, seed=0, params=None):
        self.pose_dim = int(pose_dim)
        self.cond_dim = int(cond_dim)
        self.hidden = int(hidden)
        self.data_scale = float(data_scale)
        self.frozen = False
        self.calls = 0
        in_dim = self.pose_dim + self.cond_dim + EMBED_DIM
        if params is None:
            rng = np.random.default_rng(seed)
            params = {
                "w1": rng.standard_normal((in_dim, hidden)) / np.sqrt(in_dim),
                "b1": np.zeros(hidden),
                "w2": rng.standard_normal((hidden, hidden)) / np.sqrt(hidden),
                "b2": np.zeros(hidden),
                "w3": rng.standard_normal((hidden, self.pose_dim)) / np.sqrt(hidden),
                "b3": np.zeros(self.pose_dim),
            }
        shapes = {
            "w1": (in_dim, self.hidden),
            "b1": (self.hidden,),
            "w2": (self.hidden, self.hidden),
            "b2": (self.hidden,),
            "w3": (self.hidden, self.pose_dim),
            "b3": (self.pose_dim,),
        }
        self.params = {}
        for name in self.PARAM_NAMES:
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise ValueError(f"parameter '{name}' has shape {arr.shape}, expected {shapes[name]}")
            self.params[name] = ad.parameter(arr, name=f"denoiser.{name}")

    def parameters(self):
        return {p.name: p for p in self.params.values()}

    def freeze(self):
        self.frozen = True
        for p in self.params.values():
            p.requires_grad = False
        return self

    def parameter_vector(self):
        return np.concatenate([self.params[n].data.ravel() for n in self.PARAM_NAMES])

    def forward_graph(self, y_t, cond, t):
        """Graph forward pass: y_t is a Tensor or array (N, pose_dim)."""
        self.calls += 1
        y_t = y_t if isinstance(y_t, ad.Tensor) else ad.constant(np.asarray(y_t, dtype=np.float64))
        cond = np.asarray(cond, dtype=np.float64)
        if y_t.data.ndim != 2 or y_t.data.shape[1] != self.pose_dim:
            raise ValueError(f"y_t must be (N, {self.pose_dim}), got {y_t.data.shape}")
        if cond.shape != (y_t.data.shape[0], self.cond_dim):
            raise ValueError(f"condition must be (N, {self.cond_dim}), got {cond.shape}")
        s = self.data_scale
        emb = sinusoidal_embedding(t, EMBED_DIM)
        x = ad.concat([ad.scale(y_t, 1.0 / s), ad.constant(cond / s), ad.constant(emb)], axis=1)
        h = ad.gelu(linear(x, self.params["w1"], self.params["b1"]))
        h = ad.gelu(linear(h, self.params["w2"], self.params["b2"]))
        out = linear(h, self.params["w3"], self.params["b3"])
        return ad.scale(out, s)

    def predict(self, y_t, cond, t):
        """Numpy forward pass (same computation as forward_graph)."""
        return self.forward_graph(ad.constant(np.atleast_2d(np.asarray(y_t, dtype=np.float64))), np.atleast_2d(cond), t).data


def _flatten_poses(poses):
    poses = np.asarray(poses, dtype=np.float64)
    return poses.reshape(poses.shape[0], -1)


def train_denoiser(dataset, schedule, epochs, lr, seed=0, batch_size=64, hidden=HIDDEN_DIM):
    """Train a denoiser on (poses, conditions) pairs by regressing clean poses.

    Minimizes the Monte-Carlo estimate of E ||y0 - g(y_t, c, t)||^2 with t
    uniform over 1..T and fresh Gaussian noise per epoch.  The recorded
    loss trace is a fixed-draw probe evaluated before training and after
    every epoch, so it is constant when lr == 0.
    """
    poses, conds = dataset
    poses = _flatten_poses(poses)
    conds = _flatten_poses(conds)
    if poses.shape[0] == 0:
        raise ValueError("empty dataset")
    if conds.shape[0] != poses.shape[0]:
        raise ValueError(f"{poses.shape[0]} poses but {conds.shape[0]} conditions")
    n = poses.shape[0]
    rng = np.random.default_rng(seed)
    scale = float(np.sqrt((poses**2).mean()))
    model = Denoiser(poses.shape[1], conds.shape[1], hidden=hidden,
                     data_scale=scale if scale > 0 else 1.0, seed=seed)
    opt = Adam(model.parameters(), lr=lr)

    t_probe = rng.integers(1, schedule.timesteps + 1, size=n)
    eps_probe = rng.standard_normal(poses.shape)
    y_probe = forward_noise(schedule, poses, t_probe, eps_probe)

    def probe_loss():
        pred = model.predict(y_probe, conds, t_probe)
        return float(((poses - pred) ** 2).sum(axis=1).mean())

    trace = [probe_loss()]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            t = rng.integers(1, schedule.timesteps + 1, size=idx.size)
            eps = rng.standard_normal((idx.size, poses.shape[1]))
            y_t = forward_noise(schedule, poses[idx], t, eps)
            pred = model.forward_graph(ad.constant(y_t), conds[idx], t)
            diff = ad.sub(ad.constant(poses[idx]), pred)
            loss = ad.scale(ad.frobenius_sq(diff), 1.0 / idx.size)
            if not np.isfinite(loss.data):
                raise NumericalError("non-finite training loss")
            grads = ad.gradients(loss, model.parameters())
            opt.step(grads)
        trace.append(probe_loss())
    model.loss_trace = trace
    return model


@dataclass
class DiffusionPrior:
    """A noise schedule plus a frozen denoiser."""

    schedule: NoiseSchedule
    denoiser: Denoiser

    def __post_init__(self):
        if not self.denoiser.frozen:
            raise ValueError("prior requires a frozen denoiser")


def sample(prior, cond, seed=0):
    """Ancestral reverse-process sample conditioned on a single measurement.

    Starts from y_T ~ N(0, I) and steps the posterior mean of the clean-pose
    prediction; noise is added at every step except the last.  Deterministic
    for a fixed seed.  Returns a flat pose (pose_dim,).
    """
    rng = np.random.default_rng(seed)
    den = prior.denoiser
    sched = prior.schedule
    cond = np.asarray(cond, dtype=np.float64).reshape(1, -1)
    y = rng.standard_normal(den.pose_dim)
    for t in range(sched.timesteps, 0, -1):
        y0_hat = den.predict(y[None], cond, [t])[0]
        ab_t = sched.alpha_bar(t)
        ab_prev = sched.alpha_bar(t - 1)
        beta = sched.betas[t - 1]
        alpha = sched.alphas[t - 1]
        mean = (np.sqrt(ab_prev) * beta * y0_hat + np.sqrt(alpha) * (1.0 - ab_prev) * y) / (1.0 - ab_t)
        if t > 1:
            var = (1.0 - ab_prev) / (1.0 - ab_t) * beta
            y = mean + np.sqrt(var) * rng.standard_normal(den.pose_dim)
        else:
            y = mean
    return y


def sample_draws(schedule, rng, batch, pose_dim, mc_samples):
    """Monte-Carlo (t, eps) draws for prior_loss, one pair per batch row."""
    return [
        (rng.integers(1, schedule.timesteps + 1, size=batch), rng.standard_normal((batch, pose_dim)))
        for _ in range(mc_samples)
    ]


def prior_loss_graph(prior, y0, cond, mc_samples=1, rng=None, draws=None, detach_noised=False):
    """Differentiable prior score of a batch of poses: mean ||y0 - g(y_t, c, t)||^2.

    y0 is a Tensor (N, pose_dim); gradient flows into y0 both directly and
    through the noised pose unless detach_noised is set.  Supplying `draws`
    fixes the Monte-Carlo (t, eps) pairs (used by gradient checks).
    """
    if not prior.denoiser.frozen:
        raise ValueError("prior_loss requires a frozen denoiser")
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    n = y0.data.shape[0]
    cond = np.asarray(cond, dtype=np.float64).reshape(n, -1)
    if draws is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        draws = sample_draws(prior.schedule, rng, n, prior.denoiser.pose_dim, mc_samples)
    total = None
    for t, eps in draws:
        a = np.sqrt(prior.schedule.alpha_bar(t))
        b = np.sqrt(1.0 - prior.schedule.alpha_bar(t))
        y_t = ad.add(ad.scale_rows(y0, ad.constant(a)), ad.constant(b[:, None] * eps))
        if detach_noised:
            y_t = ad.constant(y_t.data)
        pred = prior.denoiser.forward_graph(y_t, cond, t)
        term = ad.frobenius_sq(ad.sub(y0, pred))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / (len(draws) * n))


def prior_loss(prior, y0, cond, mc_samples=1, seed=0, draws=None, detach_noised=False):
    """Prior score of a single pose (flat or (P, 3)); see prior_loss_graph."""
    y0 = np.asarray(y0, dtype=np.float64).reshape(1, -1)
    y0_t = ad.constant(y0)
    rng = np.random.default_rng(seed)
    return prior_loss_graph(
        prior, y0_t, cond, mc_samples=mc_samples, rng=rng, draws=draws, detach_noised=detach_noised
    ).item()


def save_prior(path, prior):
    den = prior.denoiser
    header = {
        "timesteps": prior.schedule.timesteps,
        "betas": prior.schedule.betas.tolist(),
        "pose_dim": den.pose_dim,
        "cond_dim": den.cond_dim,
        "hidden_dim": den.hidden,
        "embed_dim": EMBED_DIM,
        "data_scale": den.data_scale,
    }
    save_checkpoint(path, "diffusion_prior", header, {n: den.params[n].data for n in den.PARAM_NAMES})


def load_prior(path):
    from .errors import FileFormatError

    doc, params = load_checkpoint(path, "diffusion_prior")
    for key in ("timesteps", "betas", "pose_dim", "cond_dim", "hidden_dim", "data_scale"):
        if key not in doc:
            raise FileFormatError(f"{path}: missing field '{key}'")
    betas = np.asarray(doc["betas"], dtype=np.float64)
    if betas.size != doc["timesteps"]:
        raise FileFormatError(
            f"{path}: field 'betas' has {betas.size} entries, field 'timesteps' says {doc['timesteps']}"
        )
    if doc.get("embed_dim", EMBED_DIM) != EMBED_DIM:
        raise FileFormatError(f"{path}: unsupported field 'embed_dim' {doc['embed_dim']}")
    schedule = NoiseSchedule(betas)
    try:
        denoiser = Denoiser(
            doc["pose_dim"],
            doc["cond_dim"],
            hidden=doc["hidden_dim"],
            data_scale=doc["data_scale"],
            params=params,
        )
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: inconsistent parameters: {exc}") from exc
    denoiser.freeze()
    return DiffusionPrior(schedule=schedule, denoiser=denoiser)
