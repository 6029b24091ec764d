"""Training engines for the voxel autoencoders.

Four modes over one network graph:

* pe         point estimate, SGD with momentum on the reconstruction error
* bayesian   mean-field Gaussian variational inference over every trainable
             parameter (angles and dense weights alike), trained on the
             negative evidence lower bound with the reparameterization trick
* mcd        point estimate with dropout kept active at inference
* ensemble   independently seeded point-estimate replicas, averaged

The variational posterior is theta_i = mu_i + softplus(rho_i) * eps_i with a
standard normal prior; the reconstruction likelihood is Gaussian with fixed
scale sigma_lik, so the per-batch objective is

    sum_batch ||model_theta(x) - x||^2 / (2 sigma_lik^2) + kl_scale * KL(q || N(0, I))

with kl_scale defaulting to 1/num_batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .layers import Sequential
from .models import AutoencoderSpec, build_autoencoder

MODES = ("pe", "bayesian", "mcd", "ensemble")
INIT_POSTERIOR_SCALE = 0.01
ORTHO_DEFECT_LIMIT = 1e-6

DEFAULT_LEARNING_RATES = {"pe": 0.02, "mcd": 0.02, "ensemble": 0.02, "bayesian": 1e-5}


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite."""


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class VariationalParams:
    """Mean-field Gaussian posterior: one (mu, rho) pair per parameter."""

    mu: np.ndarray
    rho: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.mu.shape != self.rho.shape or self.mu.ndim != 1:
            raise ValueError("mu and rho must be equal-length vectors")

    def sigma(self) -> np.ndarray:
        return softplus(self.rho)

    def sample(self, eps: np.ndarray) -> np.ndarray:
        return self.mu + self.sigma() * eps


def sample_params(vp: VariationalParams, rng: np.random.Generator) -> np.ndarray:
    """One reparameterized draw theta = mu + softplus(rho) * eps."""
    return vp.sample(rng.normal(size=vp.mu.shape))


def init_variational(model: Sequential, posterior_scale: float = INIT_POSTERIOR_SCALE) -> VariationalParams:
    """Posterior centred on the model's current init with small spread."""
    mu = model.get_flat()
    rho = np.full(mu.shape, softplus_inv(posterior_scale))
    return VariationalParams(mu=mu, rho=rho)


def kl_term(vp: VariationalParams) -> float:
    """KL(q || N(0, I)) = 1/2 sum(sigma^2 + mu^2 - log sigma^2 - 1), exactly."""
    sig2 = vp.sigma() ** 2
    return float(0.5 * np.sum(sig2 + vp.mu**2 - np.log(sig2) - 1.0))


def elbo_loss(
    model: Sequential,
    vp: VariationalParams,
    x: np.ndarray,
    rng: np.random.Generator,
    mc_samples: int = 1,
    kl_scale: float = 1.0,
    sigma_lik: float = 0.1,
) -> float:
    """Negative ELBO estimate (scalar) with ``mc_samples`` likelihood draws."""
    eps_draws = [rng.normal(size=vp.mu.shape) for _ in range(mc_samples)]
    loss, _, _, _, _ = elbo_terms(model, vp, x, eps_draws, kl_scale, sigma_lik)
    return loss


def elbo_terms(
    model: Sequential,
    vp: VariationalParams,
    x: np.ndarray,
    eps_draws: list[np.ndarray],
    kl_scale: float,
    sigma_lik: float,
):
    """Negative ELBO estimate and its gradients wrt (mu, rho).

    The likelihood term averages over the supplied reparameterization draws,
    which makes the whole function deterministic given ``eps_draws`` (common
    random numbers for derivative checks).  Returns
    (loss, grad_mu, grad_rho, nll, kl).
    """
    if x.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    inv_var = 1.0 / (sigma_lik**2)
    nll_acc = 0.0
    gmu = np.zeros_like(vp.mu)
    grho_lik = np.zeros_like(vp.rho)
    sig = vp.sigma()
    for eps in eps_draws:
        model.set_flat(vp.mu + sig * eps)
        out = model.forward(x)
        resid = out - x
        nll_acc += 0.5 * inv_var * float(np.sum(resid**2))
        model.backward(inv_var * resid)
        g = model.grad_flat()
        gmu += g
        grho_lik += g * eps
    t = len(eps_draws)
    nll = nll_acc / t
    gmu /= t
    grho_lik /= t
    kl = kl_term(vp)
    srho = sigmoid(vp.rho)
    grad_mu = gmu + kl_scale * vp.mu
    grad_rho = (grho_lik + kl_scale * (sig - 1.0 / sig)) * srho
    return nll + kl_scale * kl, grad_mu, grad_rho, nll, kl


@dataclass
class TrainConfig:
    mode: str = "pe"
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float | None = None
    momentum: float = 0.9
    optimizer: str = "sgd"
    sigma_lik: float = 0.1
    kl_scale: float | None = None
    mc_samples: int = 1
    eval_draws: int = 16
    ensemble_size: int = 5
    dropout_rate: float = 0.1
    orthogonality_check: str = "epoch"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.orthogonality_check not in ("step", "epoch", "off"):
            raise ValueError("orthogonality_check must be 'step', 'epoch', or 'off'")
        if self.epochs < 0 or self.batch_size < 1 or self.mc_samples < 1 or self.eval_draws < 1:
            raise ValueError("epochs must be >= 0; batch_size, draws >= 1")
        if self.kl_scale is not None and self.kl_scale <= 0:
            raise ValueError("kl_scale must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.mode == "ensemble" and self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")

    def resolved_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LEARNING_RATES[self.mode]


class SgdMomentum:
    def __init__(self, size: int, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity = np.zeros(size)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.velocity = self.momentum * self.velocity - self.lr * grad
        return params + self.velocity

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"velocity": self.velocity}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.velocity = np.asarray(arrays["velocity"], dtype=np.float64)


class Adam:
    def __init__(self, size: int, lr: float, momentum: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"adam_m": self.m, "adam_v": self.v, "adam_t": np.array([float(self.t)])}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.m = np.asarray(arrays["adam_m"], dtype=np.float64)
        self.v = np.asarray(arrays["adam_v"], dtype=np.float64)
        self.t = int(arrays["adam_t"][0])


def _make_optimizer(config: TrainConfig, size: int):
    cls = SgdMomentum if config.optimizer == "sgd" else Adam
    return cls(size, config.resolved_learning_rate(), config.momentum)


@dataclass
class TrainedModel:
    """A trained artifact: one or more networks plus mode-specific state."""

    arch: AutoencoderSpec
    mode: str
    seed: int
    eval_draws: int
    models: list[Sequential]
    vp: VariationalParams | None = None
    history: list[dict] = field(default_factory=list)
    training_state: dict | None = None

    @property
    def model(self) -> Sequential:
        return self.models[0]

    def passes(
        self,
        x: np.ndarray,
        rng: np.random.Generator | None = None,
        draws: int | None = None,
    ) -> np.ndarray:
        """Stochastic reconstruction passes, shape (T, B, E, E, E).

        pe: the single deterministic pass; bayesian: ``draws`` posterior
        samples; mcd: ``draws`` dropout-active passes; ensemble: one pass
        per member.  ``draws`` defaults to the artifact's eval_draws.
        """
        t = self.eval_draws if draws is None else draws
        if t < 1:
            raise ValueError("draws must be >= 1")
        if self.mode == "pe":
            return self.model.forward(x)[None]
        if self.mode == "ensemble":
            return np.stack([m.forward(x) for m in self.models])
        if rng is None:
            raise ValueError(f"mode {self.mode!r} needs an rng for stochastic passes")
        if self.mode == "mcd":
            return np.stack(
                [self.model.forward(x, stochastic=True, rng=rng) for _ in range(t)]
            )
        outs = []
        for _ in range(t):
            self.model.set_flat(sample_params(self.vp, rng))
            outs.append(self.model.forward(x))
        self.model.set_flat(self.vp.mu)
        return np.stack(outs)

    def mean_reconstruction(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        return self.passes(x, rng).mean(axis=0)

    def angle_summary(self) -> dict | None:
        """Mean |mu| and mean sigma over the circuit-angle parameters."""
        if self.vp is None:
            return None
        idx = []
        for name, start, stop in self.model.param_slices():
            if name.endswith(".angles"):
                idx.extend(range(start, stop))
        if not idx:
            return None
        idx = np.asarray(idx)
        return {
            "mean_abs_mu": float(np.mean(np.abs(self.vp.mu[idx]))),
            "mean_sigma": float(np.mean(self.vp.sigma()[idx])),
        }


def predictive(
    trained: TrainedModel,
    x: np.ndarray,
    rng: np.random.Generator | None = None,
    draws: int | None = None,
):
    """Per-voxel predictive mean and variance across stochastic passes."""
    outs = trained.passes(x, rng, draws=draws)
    return outs.mean(axis=0), outs.var(axis=0)


def _gen_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _gen_from_state(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def _val_mse(model: Sequential, val: np.ndarray, batch: int) -> float:
    if val.shape[0] == 0:
        return math.nan
    total = 0.0
    for lo in range(0, val.shape[0], batch):
        chunk = val[lo : lo + batch]
        total += float(np.sum((model.forward(chunk) - chunk) ** 2))
    return total / val.size


def _check_orthogonality(model: Sequential) -> None:
    defect = model.max_orthogonality_defect()
    if defect > ORTHO_DEFECT_LIMIT:
        raise TrainingDivergedError(f"orthogonality defect {defect:.3e} exceeds {ORTHO_DEFECT_LIMIT}")


def _train_single(
    arch: AutoencoderSpec,
    data: np.ndarray,
    config: TrainConfig,
    seed: int,
    val_data: np.ndarray,
    resume_state: dict | None,
) -> tuple[Sequential, VariationalParams | None, list[dict], dict]:
    n = data.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    stochastic = config.mode == "mcd"
    n_batches = -(-n // config.batch_size)
    kl_scale = config.kl_scale if config.kl_scale is not None else 1.0 / n_batches

    init_ss, shuffle_ss, noise_ss = np.random.SeedSequence([seed]).spawn(3)
    model = build_autoencoder(arch)
    model.init(np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    noise_rng = np.random.default_rng(noise_ss)

    bayesian = config.mode == "bayesian"
    if bayesian:
        vp = init_variational(model)
        params = np.concatenate([vp.mu, vp.rho])
    else:
        vp = None
        params = model.get_flat()
    opt = _make_optimizer(config, params.size)
    history: list[dict] = []
    epoch_start = 0

    if resume_state is not None:
        params = np.asarray(resume_state["params"], dtype=np.float64)
        opt.load_state(resume_state["optimizer"])
        shuffle_rng = _gen_from_state(resume_state["shuffle_rng"])
        noise_rng = _gen_from_state(resume_state["noise_rng"])
        epoch_start = int(resume_state["epoch"])
        history = list(resume_state.get("history", []))

    p = model.num_params

    def sync_model_from(vec: np.ndarray) -> None:
        if bayesian:
            vp.mu, vp.rho = vec[:p].copy(), vec[p:].copy()
            model.set_flat(vp.mu)
        else:
            model.set_flat(vec)

    sync_model_from(params)

    step = epoch_start * n_batches
    for epoch in range(epoch_start, config.epochs):
        perm = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            x = data[perm[lo : lo + config.batch_size]]
            if bayesian:
                eps_draws = [noise_rng.normal(size=p) for _ in range(config.mc_samples)]
                loss, gmu, grho, _, _ = elbo_terms(model, vp, x, eps_draws, kl_scale, config.sigma_lik)
                grad = np.concatenate([gmu, grho])
            else:
                out = model.forward(x, stochastic=stochastic, rng=noise_rng)
                resid = out - x
                loss = float(np.sum(resid**2)) / x.shape[0]
                model.backward(2.0 * resid / x.shape[0])
                grad = model.grad_flat()
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(f"non-finite loss/gradient at step {step} (epoch {epoch})")
            step += 1
            params = opt.step(params, grad)
            sync_model_from(params)
            losses.append(loss)
            if config.orthogonality_check == "step":
                _check_orthogonality(model)
        if config.orthogonality_check in ("step", "epoch"):
            _check_orthogonality(model)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_mse": _val_mse(model, val_data, config.batch_size),
        }
        if bayesian:
            record["mean_abs_mu"] = float(np.mean(np.abs(vp.mu)))
            record["mean_sigma"] = float(np.mean(vp.sigma()))
        history.append(record)

    state = {
        "epoch": config.epochs,
        "params": params.copy(),
        "optimizer": opt.state_arrays(),
        "shuffle_rng": _gen_state(shuffle_rng),
        "noise_rng": _gen_state(noise_rng),
        "history": history,
    }
    return model, vp, history, state


def train(
    arch: AutoencoderSpec,
    data: np.ndarray,
    config: TrainConfig,
    val_data: np.ndarray | None = None,
    resume_state: dict | None = None,
) -> TrainedModel:
    """Train an autoencoder on (N, E, E, E) blocks and return the artifact.

    With epochs=0 this returns the freshly initialized model, which is how
    untrained checkpoints are produced.  ``resume_state`` (from a checkpoint)
    continues a pe/mcd/bayesian run exactly where it stopped.
    """
    data = np.asarray(data, dtype=np.float64)
    val_data = np.zeros((0,) + data.shape[1:]) if val_data is None else np.asarray(val_data, dtype=np.float64)
    if config.mode == "mcd":
        arch = replace(arch, dropout_rate=config.dropout_rate)
    if config.mode == "ensemble":
        if resume_state is not None:
            raise ValueError("resume is not supported for ensemble mode")
        members = []
        histories = []
        for k in range(config.ensemble_size):
            m, _, hist, _ = _train_single(arch, data, config, config.seed + k, val_data, None)
            members.append(m)
            histories.append(hist)
        merged = [
            {**rec, "member": k}
            for k, hist in enumerate(histories)
            for rec in hist
        ]
        return TrainedModel(
            arch=arch,
            mode="ensemble",
            seed=config.seed,
            eval_draws=config.ensemble_size,
            models=members,
            history=merged,
        )
    model, vp, history, state = _train_single(arch, data, config, config.seed, val_data, resume_state)
    return TrainedModel(
        arch=arch,
        mode=config.mode,
        seed=config.seed,
        eval_draws=1 if config.mode == "pe" else config.eval_draws,
        models=[model],
        vp=vp,
        history=history,
        training_state=state,
    )
