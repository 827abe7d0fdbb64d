import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, \
    model_validator

from SkorokhodDual.lattice.Lattice import DEFAULT_STATE_BUDGET
from SkorokhodDual.measures.DiscreteMeasure import DiscreteMeasure, PeacockVector, load_measure, \
    make_discrete_measure, make_peacock, quantize_uniform, snap_to_lattice
from SkorokhodDual.oracles.Oracles import MIN_MC_SAMPLES
from SkorokhodDual.payoffs.PayoffSpec import PayoffSpec, payoff_from_dict
from SkorokhodDual.utils.errors import ConfigInvalid, SkorokhodError


def _resolve(path: Path, info: ValidationInfo) -> Path:
    base_path = (info.context or {}).get('base_path')
    if base_path is not None and not path.is_absolute():
        path = Path(base_path) / path
    return path


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class UniformMarginal(StrictModel):
    low: float
    high: float
    count: int = Field(ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.low < self.high:
            raise ValueError(f"low must be below high, received [{self.low}, {self.high}]")
        return self


class MarginalsConfig(StrictModel):
    """
    Exactly one source: inline [position, weight] pairs, JSON measure files or uniform quantizations
    """
    atoms: Optional[List[List[Tuple[float, float]]]] = None
    files: Optional[List[Path]] = None
    uniform: Optional[List[UniformMarginal]] = None
    snap: bool = False
    centered: bool = True

    @field_validator('files', mode='after')
    @classmethod
    def _files_exist(cls, files: Optional[List[Path]], info: ValidationInfo):
        if files is None:
            return None
        resolved = [_resolve(f, info) for f in files]
        missing = [str(f) for f in resolved if not f.is_file()]
        if missing:
            raise ValueError(f"marginal files not found: {missing}")
        return resolved

    @model_validator(mode="after")
    def _single_source(self):
        sources = [s for s in (self.atoms, self.files, self.uniform) if s is not None]
        if len(sources) != 1:
            raise ValueError("give exactly one of 'atoms', 'files' or 'uniform'")
        if not sources[0]:
            raise ValueError("at least one marginal is needed")
        return self


class StabilizeConfig(StrictModel):
    tolerance: float = Field(1e-3, gt=0)
    max_steps: Optional[int] = Field(None, ge=1)


class LatticeConfig(StrictModel):
    steps: int = Field(ge=1)
    dt: float = Field(gt=0)
    budget: int = Field(DEFAULT_STATE_BUDGET, ge=1)
    monroe_eps: float = Field(0.1, gt=0, le=1)
    stabilize: Optional[StabilizeConfig] = None

    @model_validator(mode="after")
    def _horizon_range(self):
        if self.stabilize is not None and self.stabilize.max_steps is not None \
                and self.stabilize.max_steps < self.steps:
            raise ValueError("stabilize.max_steps must be at least steps")
        return self


class TransportConfig(StrictModel):
    kind: Literal['lookback', 'barrier', 'variance', 'forward_start', 'local_time', 'asian', 'calendar_max']
    maturities: List[float] = Field(default_factory=lambda: [1.])
    side: Literal['upper', 'lower', 'both'] = 'both'
    weight: float = 1.
    cap: Optional[float] = None
    floor: Optional[float] = None
    extreme: Literal['max', 'min'] = 'max'
    extreme_floor: Optional[float] = None
    upper: Optional[float] = None
    lower: Optional[float] = None
    knock: Literal['in', 'out'] = 'in'
    shape: Literal['linear', 'call', 'put'] = 'linear'
    strike: float = 0.
    coefficients: Optional[List[float]] = None
    maturity: Optional[int] = Field(None, ge=1)

    def to_transport_payoff(self):
        from SkorokhodDual.transport.MartingaleTransport import TransportPayoff
        params = self.model_dump(exclude={'side', 'maturities', 'coefficients'})
        return TransportPayoff(maturities=tuple(self.maturities),
                               coefficients=None if self.coefficients is None else tuple(self.coefficients),
                               **params)


class DualConfig(StrictModel):
    enabled: bool = True
    iterations: int = Field(1000, ge=1, le=10 ** 6)
    step_rule: Literal['sqrt', 'polyak'] = 'polyak'
    step_scale: Optional[float] = Field(None, gt=0)
    positive: bool = True
    stop_gap: Optional[float] = Field(None, gt=0)


class PrimalConfig(StrictModel):
    enabled: bool = True
    max_iterations: int = Field(50000, ge=1)
    pricing: Literal['dantzig', 'bland'] = 'dantzig'
    feasibility_tolerance: float = Field(1e-8, ge=0)
    refactor_every: int = Field(100, ge=1)


class HittingTimeConfig(StrictModel):
    levels: Tuple[float, float]
    steps: Optional[int] = Field(None, ge=1)

    @field_validator('levels')
    @classmethod
    def _positive(cls, levels):
        if min(levels) <= 0:
            raise ValueError("the exit levels (a, b) of the band (-a, b) must be positive")
        return levels


class AzemaYorConfig(StrictModel):
    cap: Optional[float] = None
    max_atom: float = Field(0.05, gt=0, le=1)


class MonteCarloConfig(StrictModel):
    samples: int = Field(MIN_MC_SAMPLES, ge=MIN_MC_SAMPLES)
    bootstrap: int = Field(200, ge=10)
    batch_size: int = Field(10 ** 4, ge=1)


class OraclesConfig(StrictModel):
    hitting_time: Optional[HittingTimeConfig] = None
    azema_yor: Optional[AzemaYorConfig] = None
    monte_carlo: Optional[MonteCarloConfig] = None


class VerificationConfig(StrictModel):
    enabled: bool = True
    mode: Literal['auto', 'exhaustive', 'sampled'] = 'auto'
    samples: int = Field(10 ** 6, ge=1)


class TolerancesConfig(StrictModel):
    gap: float = Field(1e-2, gt=0)
    weak_duality: float = Field(1e-9, ge=0)
    representability: float = Field(1e-9, ge=0)
    oracle_absolute: float = Field(1e-9, ge=0)
    oracle_relative: float = Field(5e-2, ge=0)
    superhedge: float = Field(1e-8, ge=0)


class RunConfig(StrictModel):
    """
    Validated run configuration, see the configuration page of the documentation for the keys
    """
    marginals: MarginalsConfig
    lattice: LatticeConfig
    payoff: Optional[Dict[str, Any]] = None
    transport: Optional[TransportConfig] = None
    dual: DualConfig = DualConfig()
    primal: PrimalConfig = PrimalConfig()
    oracles: OraclesConfig = OraclesConfig()
    verification: VerificationConfig = VerificationConfig()
    tolerances: TolerancesConfig = TolerancesConfig()
    seed: int = Field(0, ge=0)
    output_dir: Optional[Path] = None
    log_level: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR'] = 'WARNING'
    show_progress: bool = False
    base_path: Optional[Path] = Field(None, exclude=True)

    @field_validator('output_dir', mode='after')
    @classmethod
    def _resolve_output(cls, output_dir: Optional[Path], info: ValidationInfo):
        return None if output_dir is None else _resolve(output_dir, info)

    @model_validator(mode="after")
    def _payoff_source(self):
        if self.payoff is not None and self.transport is not None:
            raise ValueError("give either 'payoff' or 'transport', not both")
        if self.payoff is not None:
            try:
                self.build_payoff()
            except (SkorokhodError, KeyError, TypeError, ValueError) as err:
                raise ValueError(f"invalid payoff: {err}") from err
        if self.transport is not None and self.transport.maturities \
                and len(self.transport.maturities) != self.marginal_count:
            raise ValueError(f"{len(self.transport.maturities)} maturities for {self.marginal_count} marginals")
        return self

    @property
    def marginal_count(self) -> int:
        m = self.marginals
        return len(m.atoms or m.files or m.uniform)

    def build_payoff(self) -> Optional[PayoffSpec]:
        if self.payoff is None:
            return None
        return payoff_from_dict(self.payoff, self.base_path)

    def build_measures(self) -> Tuple[List[DiscreteMeasure], List[float]]:
        """
        Load the marginals and snap them on the lattice values when configured

        :return: the measures and the W1 snapping error of every marginal (zeros without snapping)
        :rtype: Tuple[List[DiscreteMeasure], List[float]]
        """
        m = self.marginals
        if m.atoms is not None:
            measures = [make_discrete_measure(atoms) for atoms in m.atoms]
        elif m.files is not None:
            measures = [load_measure(path) for path in m.files]
        else:
            measures = [quantize_uniform(u.low, u.high, u.count) for u in m.uniform]
        errors = [0.] * len(measures)
        if m.snap:
            snapped = [snap_to_lattice(measure, math.sqrt(self.lattice.dt)) for measure in measures]
            measures = [s for s, _ in snapped]
            errors = [e for _, e in snapped]
        return measures, errors

    def build_marginals(self, validate: bool = True) -> Tuple[PeacockVector, List[float]]:
        """
        The marginals as a peacock, validated unless ``validate`` is False (the flow program then reports the
        infeasibility of a vector which is not in convex order)
        """
        measures, errors = self.build_measures()
        if validate:
            return make_peacock(measures, centered=self.marginals.centered), errors
        return PeacockVector(tuple(measures), self.marginals.centered), errors

    def solver_kwargs(self) -> Dict[str, Any]:
        """
        keyword arguments of :class:`SkorokhodDual.SkorokhodSolver.SkorokhodSolver` set by this configuration
        """
        return {
            'steps': self.lattice.steps,
            'dt': self.lattice.dt,
            'budget': self.lattice.budget,
            'monroe_eps': self.lattice.monroe_eps,
            'stabilize_tolerance': None if self.lattice.stabilize is None else self.lattice.stabilize.tolerance,
            'max_steps': None if self.lattice.stabilize is None else self.lattice.stabilize.max_steps,
            'run_primal': self.primal.enabled,
            'max_pivots': self.primal.max_iterations,
            'pricing': self.primal.pricing,
            'feasibility_tolerance': self.primal.feasibility_tolerance,
            'refactor_every': self.primal.refactor_every,
            'run_dual': self.dual.enabled,
            'dual_iterations': self.dual.iterations,
            'step_rule': self.dual.step_rule,
            'step_scale': self.dual.step_scale,
            'positive': self.dual.positive,
            'dual_stop_gap': self.dual.stop_gap,
            'verify': self.verification.enabled,
            'verification_mode': self.verification.mode,
            'verification_samples': self.verification.samples,
            'gap_tolerance': self.tolerances.gap,
            'weak_duality_tolerance': self.tolerances.weak_duality,
            'representability_tolerance': self.tolerances.representability,
            'seed': self.seed,
            'show_progress': self.show_progress,
        }


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a JSON run configuration, relative paths are resolved against the folder of the file

    :param path: path of the configuration file
    :type path: Union[str, Path]
    :return: the validated configuration
    :rtype: RunConfig
    """
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigInvalid(f"cannot read the configuration {path}: {err}") from err
    return parse_run_config(data, path.parent)


def parse_run_config(data: Dict, base_path: Optional[Union[str, Path]] = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid("the configuration must be a JSON object")
    if 'base_path' in data:
        raise ConfigInvalid("'base_path' is not a configuration key")
    base_path = None if base_path is None else Path(base_path).resolve()
    try:
        return RunConfig.model_validate({**data, 'base_path': base_path}, context={'base_path': base_path})
    except ValidationError as err:
        raise ConfigInvalid(str(err)) from err
