"""Run configurations: schema-validated JSON specs built into library objects.

A run configuration is a single JSON document naming the problem (prior,
measurement model, noise scheme, ground-truth source), one sampler, optional
diagnostics, the master seed, and the output directory.  The JSON schema
lives in ``rdplab/schema/run_config.schema.json`` and is enforced before any
object is built; semantic checks the schema cannot express (dimension
agreement, mutually exclusive fields) raise :class:`ConfigError` with a
message naming the offending field.

Randomness layout: every stochastic ingredient draws from its own child of
the master seed, so reruns of the same config are bit-exact and changing one
ingredient never shifts another's stream.

==========================  =========================================
stream                      seed
==========================  =========================================
model construction          SeedSequence([master, 0x3A5C])
ground truth                SeedSequence([master, 0x6007])
measurement noise           SeedSequence([master, 0x4015])
diagnostics / probes        SeedSequence([master, 0xD1A6])
sampler chains              SeedSequence(master).spawn(n_chains)
==========================  =========================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import mixtures, noise, operators, samplers, schedules, weights

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_schema",
    "validate_config",
]

_STREAM_TAGS = {
    "model": 0x3A5C,
    "ground_truth": 0x6007,
    "noise": 0x4015,
    "diagnostics": 0xD1A6,
}


class ConfigError(ValueError):
    """A run configuration failed schema or semantic validation."""


@lru_cache(maxsize=1)
def load_schema() -> dict:
    text = resources.files("rdplab.schema").joinpath("run_config.schema.json").read_text()
    return json.loads(text)


def validate_config(raw: dict) -> None:
    """Schema validation plus the semantic checks listed in the module doc."""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as err:
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {err.message}") from err
    _check_semantics(raw)


def _check_semantics(raw: dict) -> None:
    prior = raw["problem"]["prior"]
    if "preset" not in prior:
        n_comp = len(prior["weights"])
        if len(prior["means"]) != n_comp:
            raise ConfigError("prior: weights and means disagree on component count")
        has_var = "variances" in prior
        has_cov = "covariances" in prior
        if has_var == has_cov:
            raise ConfigError("prior: exactly one of variances/covariances required")
        spreads = prior["variances"] if has_var else prior["covariances"]
        if len(spreads) != n_comp:
            raise ConfigError("prior: covariance count must match component count")
        dim = len(prior["means"][0])
        if any(len(m) != dim for m in prior["means"]):
            raise ConfigError("prior: means must share one dimension")

    model = raw["problem"]["model"]
    if model["variant"] == "mask":
        has_obs = "observed" in model
        has_frac = "keep_fraction" in model
        if has_obs == has_frac:
            raise ConfigError("mask model: exactly one of observed/keep_fraction required")
        if has_obs and max(model["observed"]) >= model["dim"]:
            raise ConfigError("mask model: observed index out of range")
    if model["variant"] == "conv":
        has_kernel = "kernel" in model
        has_blur = "blur_sigma" in model or "blur_size" in model
        if has_kernel == has_blur:
            raise ConfigError("conv model: exactly one of kernel/blur_sigma+blur_size required")
        if has_blur and not ("blur_sigma" in model and "blur_size" in model):
            raise ConfigError("conv model: blur_sigma and blur_size go together")

    gt = raw["problem"].get("ground_truth", {"source": "prior"})
    if gt["source"] == "csv" and "path" not in gt:
        raise ConfigError("ground_truth: csv source requires a path")
    if gt["source"] == "prior" and "path" in gt:
        raise ConfigError("ground_truth: path only applies to the csv source")

    weight = raw["sampler"].get("weight", {"variant": "uniform"})
    variant = weight["variant"]
    adaptive = "adaptive_q" in weight
    if variant == "uniform" and adaptive:
        raise ConfigError("weight: uniform weights take no adaptive_q")
    if variant in ("imq", "huber", "mahalanobis") and not adaptive:
        scale_key = "delta" if variant == "huber" else "c"
        if scale_key not in weight:
            raise ConfigError(f"weight: {variant} needs {scale_key} or adaptive_q")
    if variant == "mahalanobis" and "scales" not in weight:
        raise ConfigError("weight: mahalanobis needs per-component scales")
    if variant == "global" and raw["sampler"].get("differentiate_weights", False):
        raise ConfigError("weight: global scaling has no per-component derivative")


def _load_csv_vector(path: Path) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return np.asarray(data, dtype=float).ravel()


def smooth_field_prior(
    dim: int,
    n_components: int = 3,
    amplitude: float = 0.8,
    length_scale: float = 0.1,
    variance: float = 0.09,
) -> mixtures.GaussianMixture:
    """Mixture of sinusoid means with a shared squared-exponential covariance.

    A stand-in for smooth natural signals on [0, 1]: component k has mean
    amplitude * sin(2 pi (k+1) u + k pi / 3) on the regular grid u and every
    component shares K[i, j] = variance * exp(-(u_i-u_j)^2 / (2 l^2)), plus a
    small jitter for positive definiteness.
    """
    u = np.linspace(0.0, 1.0, dim)
    means = np.stack(
        [
            amplitude * np.sin(2.0 * np.pi * (k + 1) * u + k * np.pi / 3.0)
            for k in range(n_components)
        ]
    )
    dist2 = (u[:, None] - u[None, :]) ** 2
    cov = variance * np.exp(-dist2 / (2.0 * length_scale**2)) + 1e-6 * np.eye(dim)
    return mixtures.GaussianMixture(
        weights=np.full(n_components, 1.0 / n_components),
        means=means,
        covs=np.broadcast_to(cov, (n_components, dim, dim)).copy(),
    )


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration plus the directory its paths resolve from."""

    raw: dict
    base_dir: Path

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path = ".") -> "RunConfig":
        validate_config(raw)
        return cls(raw=raw, base_dir=Path(base_dir))

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path} is not valid JSON: {err}") from err
        return cls.from_dict(raw, base_dir=path.parent)

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def master_seed(self) -> int:
        return int(self.raw["seeds"]["master"])

    @property
    def output_dir(self) -> Path:
        out = self.raw.get("output", {}).get("directory", f"runs/{self.name}")
        path = Path(out)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def n_chains(self) -> int:
        return int(self.raw["sampler"]["n_chains"])

    def stream(self, which: str) -> np.random.Generator:
        """Named child generator of the master seed; see the module doc table."""
        return np.random.default_rng(
            np.random.SeedSequence([self.master_seed, _STREAM_TAGS[which]])
        )

    def build_prior(self) -> mixtures.GaussianMixture:
        prior = self.raw["problem"]["prior"]
        if "preset" in prior:
            kwargs = {k: v for k, v in prior.items() if k != "preset"}
            return smooth_field_prior(**kwargs)
        means = np.asarray(prior["means"], dtype=float)
        if "variances" in prior:
            covs = np.asarray(prior["variances"], dtype=float)
        else:
            covs = np.asarray(prior["covariances"], dtype=float)
        return mixtures.GaussianMixture(
            weights=np.asarray(prior["weights"], dtype=float),
            means=means,
            covs=covs,
        )

    def build_model(self) -> operators.ForwardModel:
        spec = self.raw["problem"]["model"]
        variant = spec["variant"]
        if variant == "identity":
            dim = spec.get("dim", self.build_prior().dim)
            return operators.Mask(np.ones(dim))
        if variant == "dense":
            return operators.DenseLinear(np.asarray(spec["matrix"], dtype=float))
        if variant == "mask":
            dim = spec["dim"]
            mask = np.zeros(dim)
            if "observed" in spec:
                mask[np.asarray(spec["observed"], dtype=int)] = 1.0
            else:
                k = max(1, round(spec["keep_fraction"] * dim))
                mask[self.stream("model").permutation(dim)[:k]] = 1.0
            grid = spec.get("grid_shape")
            return operators.Mask(mask, grid_shape=tuple(grid) if grid else None)
        if variant == "conv":
            grid = tuple(spec["grid_shape"])
            if "kernel" in spec:
                kernel = np.asarray(spec["kernel"], dtype=float)
            else:
                kernel = operators.make_gaussian_blur_kernel(
                    spec["blur_sigma"], spec["blur_size"]
                )
            return operators.CircularConv(kernel, grid)
        if variant == "scattering":
            grid = tuple(spec["grid_shape"])
            H = operators.make_scattering_propagator(
                grid,
                spec["scale"],
                self.stream("model"),
                n_receivers=spec.get("n_receivers"),
                amplitude=spec.get("amplitude", 1.0),
            )
            return operators.LinearScattering(H)
        if variant == "phase":
            return operators.PhaseRetrieval(
                tuple(spec["grid_shape"]), eps_mag=spec.get("eps_mag", 1e-8)
            )
        raise ConfigError(f"unknown model variant {variant!r}")

    def build_noise(self) -> noise.NoiseScheme:
        spec = self.raw["problem"]["noise"]
        scheme = spec["scheme"]
        if scheme == "gaussian":
            return noise.GaussianNoise(sigma_y=spec["sigma_y"])
        if scheme == "student_t":
            return noise.StudentTNoise(sigma_y=spec["sigma_y"], nu=spec["nu"])
        if scheme == "impulsive":
            return noise.ImpulsiveNoise(
                sigma_y=spec["sigma_y"],
                fraction=spec["fraction"],
                multiplier=spec["multiplier"],
                replace_range=spec.get("replace_range"),
            )
        raise ConfigError(f"unknown noise scheme {scheme!r}")

    @property
    def sigma_y(self) -> float:
        return float(self.raw["problem"]["noise"]["sigma_y"])

    def build_schedule(self) -> schedules.Schedule:
        spec = self.raw["sampler"]["schedule"]
        return schedules.make_linear_schedule(
            spec["beta_min"], spec["beta_max"], spec["n_steps"]
        )

    def build_weight_fn(self) -> weights.WeightFn | None:
        spec = self.raw["sampler"].get("weight", {"variant": "uniform"})
        variant = spec["variant"]
        if variant == "uniform":
            return weights.Uniform()
        if variant == "imq":
            return weights.IMQ(c=spec.get("c", 1.0))
        if variant == "huber":
            return weights.Huber(delta=spec.get("delta", 1.0))
        if variant == "mahalanobis":
            return weights.Mahalanobis(
                c=spec.get("c", 1.0), scales=np.asarray(spec["scales"], dtype=float)
            )
        if variant == "global":
            return weights.GlobalScale(
                c_g=spec.get("c_g", 1.0), eps_g=spec.get("eps_g", 1e-3)
            )
        raise ConfigError(f"unknown weight variant {variant!r}")

    def build_sampler_config(self) -> samplers.SamplerConfig:
        spec = self.raw["sampler"]
        weight_spec = spec.get("weight", {"variant": "uniform"})
        temp_spec = spec.get("temperature", {})
        lgd_spec = spec.get("lgd", {})
        kwargs: dict[str, Any] = dict(
            method=spec["method"],
            schedule=self.build_schedule(),
            weight_fn=self.build_weight_fn(),
            adaptive_q=weight_spec.get("adaptive_q"),
            temperature=samplers.TemperatureRule(
                mode=temp_spec.get("mode", "fixed"),
                value=temp_spec.get("value", 1.0),
                eps=temp_spec.get("eps", 1e-8),
                prior_var=temp_spec.get("prior_var", 1.0),
            ),
            jacobian=spec.get("jacobian", "exact"),
            differentiate_weights=spec.get("differentiate_weights", False),
            deterministic_last_step=spec.get("deterministic_last_step", True),
            lgd_n_mc=lgd_spec.get("n_mc", 10),
            lgd_kappa=lgd_spec.get("kappa", 1.0),
            pigdm_r2=spec.get("pigdm_r2", "snr"),
            seed=self.master_seed,
            record_trajectory=spec.get("record_trajectory", False),
            trajectory_stride=spec.get("trajectory_stride", 1),
        )
        if "c_min" in weight_spec:
            kwargs["c_min"] = weight_spec["c_min"]
        return samplers.SamplerConfig(**kwargs)

    def ground_truth(self, gm: mixtures.GaussianMixture) -> np.ndarray:
        spec = self.raw["problem"].get("ground_truth", {"source": "prior"})
        if spec["source"] == "prior":
            return mixtures.sample(gm, 1, self.stream("ground_truth"))[0]
        path = Path(spec["path"])
        if not path.is_absolute():
            path = self.base_dir / path
        x_star = _load_csv_vector(path)
        if x_star.shape[0] != gm.dim:
            raise ConfigError(
                f"ground truth has length {x_star.shape[0]}, prior dimension is {gm.dim}"
            )
        return x_star
