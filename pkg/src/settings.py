"""
Flat key=value configuration for the simulator.

Config files use the dotenv syntax (``key=value``, ``#`` comments) and are
read with python-dotenv; ``--set key=value`` overrides win over file values.
Unknown keys are rejected.
"""

from pathlib import Path
from typing import Dict, Iterable, Literal, Optional, Tuple, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field

from choice_model import (DiscernibilityThreshold, Exact, GaussianNoise, RationalityModel,
                          as_act)
from decision_policy import DominanceCriterion
from errors import ConfigError
from experiments import GridSpec, StudyConfig
from game_engine import GameConfig
from gauss_kernels import ConstantMean, SquaredExponential
from payoff_engine import CostParams
from posterior_inference import EP, MAP, InferenceMethod, Laplace, Sampling


class Settings(BaseModel):
    """Every tunable of the game, the inference arms and the experiments"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0

    # act space and the pair under decision
    grid_lower: float = 1.0
    grid_upper: float = 9.0
    grid_points: int = Field(default=41, ge=2)
    x: float = 6.5
    o: float = 3.5

    # common-knowledge prior
    kernel_variance: float = Field(default=1.0, ge=0.0)
    kernel_lengthscale: float = Field(default=1.0, gt=0.0)
    mean_value: float = 0.0

    # sender; sigma = 0 selects the exact model
    model: Literal["exact", "gaussian_noise", "threshold"] = "gaussian_noise"
    sigma: float = Field(default=1.0, ge=0.0)
    epsilon: float = Field(default=0.1, gt=0.0)
    n_prefs: int = Field(default=30, ge=1)

    # receiver
    method: str = "laplace"
    sigma_fit: Optional[float] = Field(default=None, gt=0.0)
    newton_max_iter: int = Field(default=100, ge=1)
    newton_tol: float = Field(default=1e-6, gt=0.0)
    ep_damping: float = Field(default=0.8, gt=0.0, le=1.0)
    ep_tol: float = Field(default=1e-6, gt=0.0)
    ep_max_sweeps: int = Field(default=200, ge=1)
    n_samples: int = Field(default=10_000, ge=1)
    burn_in: int = Field(default=1_000, ge=0)
    criterion: DominanceCriterion = DominanceCriterion.PESSIMISTIC_A
    gamma: float = Field(default=0.0, ge=0.0)

    # experiments
    methods: str = "map,laplace,ep,sampling"
    n_runs: int = Field(default=200, ge=1)
    lengthscale_min: float = Field(default=0.5, gt=0.0)
    lengthscale_max: float = Field(default=3.0, gt=0.0)
    variance_min: float = Field(default=0.5, gt=0.0)
    variance_max: float = Field(default=2.0, gt=0.0)
    prefs: int = Field(default=8, ge=0)
    sweep_param: Literal["sigma", "gamma"] = "sigma"
    sweep_grid: str = "0,0.5,1,2"

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None,
             overrides: Iterable[str] = (), **flags) -> "Settings":
        """
        File values, then ``key=value`` overrides, then explicit flags
        (None flags are ignored).

        Raises:
            ConfigError: missing file or malformed override
            pydantic.ValidationError: unknown key or invalid value
        """
        values: Dict[str, object] = {}
        if path is not None:
            if not Path(path).is_file():
                raise ConfigError(f"config file {path} not found")
            for key, value in dotenv_values(path).items():
                if value is None:
                    raise ConfigError(f"{path}: key {key!r} has no value")
                values[key.strip()] = value
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"override {item!r} is not key=value")
            values[key.strip()] = value.strip()
        values.update({k: v for k, v in flags.items() if v is not None})
        return cls(**values)

    # --- builders ---------------------------------------------------------

    def rationality_model(self) -> RationalityModel:
        if self.model == "exact" or self.sigma == 0.0:
            return Exact()
        if self.model == "gaussian_noise":
            return GaussianNoise(sigma=self.sigma)
        return DiscernibilityThreshold(sigma=self.sigma, epsilon=self.epsilon)

    def inference_method(self, name: Optional[str] = None) -> InferenceMethod:
        kind = (name or self.method).strip().lower()
        if kind == "map":
            return MAP(max_iter=self.newton_max_iter, tol=self.newton_tol)
        if kind == "laplace":
            return Laplace(max_iter=self.newton_max_iter, tol=self.newton_tol)
        if kind == "ep":
            return EP(damping=self.ep_damping, tol=self.ep_tol, max_sweeps=self.ep_max_sweeps)
        if kind == "sampling":
            return Sampling(n_samples=self.n_samples, burn_in=self.burn_in)
        raise ConfigError(f"unknown inference method {kind!r}")

    def inference_methods(self) -> Tuple[InferenceMethod, ...]:
        names = [n for n in self.methods.split(",") if n.strip()]
        if not names:
            raise ConfigError("methods must name at least one inference method")
        return tuple(self.inference_method(n) for n in names)

    def kernel(self) -> SquaredExponential:
        return SquaredExponential(variance=self.kernel_variance, lengthscale=self.kernel_lengthscale)

    def mean(self) -> ConstantMean:
        return ConstantMean(value=self.mean_value)

    def grid(self) -> GridSpec:
        return GridSpec(lower=self.grid_lower, upper=self.grid_upper, n_points=self.grid_points)

    def sweep_values(self) -> Tuple[float, ...]:
        try:
            values = tuple(float(v) for v in self.sweep_grid.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"sweep grid {self.sweep_grid!r} is not a list of numbers")
        if not values:
            raise ConfigError("sweep grid must hold at least one value")
        return values

    def game_config(self) -> GameConfig:
        return GameConfig(act_grid=self.grid().acts(), x=as_act(self.x), o=as_act(self.o),
                          kernel=self.kernel(), mean=self.mean(),
                          model=self.rationality_model(), n_prefs=self.n_prefs,
                          method=self.inference_method(), cost=CostParams(gamma=self.gamma),
                          criterion=self.criterion, sigma_fit=self.sigma_fit, seed=self.seed)

    def study_config(self) -> StudyConfig:
        """Studies draw senders that are exact or Gaussian-noise; sigma = 0 is exact"""
        if self.model == "threshold":
            raise ConfigError("study and sweep support model=exact or model=gaussian_noise only")
        sigma = 0.0 if self.model == "exact" else self.sigma
        return StudyConfig(n_runs=self.n_runs, n_prefs=self.n_prefs, sigma=sigma,
                           gamma=self.gamma, methods=self.inference_methods(),
                           lengthscale_range=(self.lengthscale_min, self.lengthscale_max),
                           variance_range=(self.variance_min, self.variance_max),
                           mean_value=self.mean_value, grid=self.grid(), seed=self.seed)
