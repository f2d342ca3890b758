from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.bounds import AssumptionTier
from app.schemas.dgp import DgpConfig
from app.schemas.estimation import PropensityConfig, SmootherConfig

Command = Literal["simulate", "bounds-oracle", "estimate-np", "estimate-param", "weights", "aggregate",
                  "discrete", "dmte", "diagnose", "montecarlo"]

# команды, которые могут работать без --input, сгенерировав выборку из панели
SAMPLE_COMMANDS = {"estimate-np", "estimate-param", "discrete", "dmte", "diagnose"}
MONOTONE_ONLY = {"discrete", "dmte"}


class RunConfig(BaseModel):
    """Полностью разрешённая конфигурация одного запуска; эхо пишется в manifest.json."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Command
    output_dir: str
    seed: int

    # источник данных
    input: Optional[str] = None
    panel: Optional[str] = None
    dgp: Optional[DgpConfig] = None
    n: int = Field(10_000, ge=1)
    n_covariates: int = Field(0, ge=0)
    with_latent: bool = False

    # сетки и предпосылки
    p_grid: List[float] = Field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    tiers: List[AssumptionTier] = Field(default_factory=lambda: [AssumptionTier.monotone])
    n_edges: int = Field(11, ge=2)
    fractional: bool = False

    propensity: PropensityConfig = Field(default_factory=PropensityConfig)
    smoother: SmootherConfig = Field(default_factory=SmootherConfig)

    # параметрический путь
    covariates: Optional[List[str]] = None

    # агрегирование
    weights: List[str] = Field(default_factory=lambda: ["ATE", "ATT", "ATU"])
    policy: Optional[str] = None
    oracle: bool = False

    # discrete / dmte
    instrument: Optional[str] = None
    outcome_sets: List[str] = Field(default_factory=list)

    # diagnose
    tolerance: Optional[float] = Field(None, ge=0.0)
    permutations: int = Field(200, ge=1)
    fail_on_violation: bool = False

    # montecarlo
    reps: int = Field(200, ge=1)
    workers: int = Field(1, ge=1)

    @field_validator("p_grid")
    @classmethod
    def _grid_inside_unit_interval(cls, v):
        if not v:
            raise ValueError("evaluation grid is empty")
        if any(not 0.0 <= p <= 1.0 for p in v):
            raise ValueError("evaluation grid points must lie in [0, 1]")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("evaluation grid must be strictly increasing")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if self.panel is not None and self.dgp is not None:
            raise ValueError("give either a named panel or explicit DGP parameters, not both")
        has_model = self.panel is not None or self.dgp is not None
        if self.command in ("simulate", "bounds-oracle", "montecarlo") and not has_model:
            raise ValueError(f"'{self.command}' needs --panel or DGP parameters")
        if self.command in SAMPLE_COMMANDS and self.input is None and not has_model:
            raise ValueError(f"'{self.command}' needs --input or a panel to simulate from")
        if self.command in ("weights", "aggregate") and self.input is None and not (self.oracle and has_model):
            raise ValueError(f"'{self.command}' needs --input, or --oracle with a panel")
        if self.command in MONOTONE_ONLY and self.tiers != [AssumptionTier.monotone]:
            raise ValueError(f"'{self.command}' is defined under the monotone tier only")
        if self.command == "dmte" and not self.outcome_sets:
            raise ValueError("'dmte' needs at least one --set")
        if any(w.upper().startswith("PRTE") for w in self.weights) and self.policy is None:
            raise ValueError("PRTE weights need --policy")
        return self


class RunManifest(BaseModel):
    version: str
    command: str
    seed: int
    started_at: str
    wall_time_s: float
    config: Dict[str, Any]
    settings: Dict[str, Any]
    artifacts: List[str] = []
    exit_code: int = 0
