"""Simulation study: HPGRF against IPGRF on three-type Thomas data.

Each replicate draws ``n_per_type`` studies per type, fits both models and
scores the type-averaged IMSE and IWMSE over the window and the four
component regions (95% ellipses).
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .evalx import imse_iwmse
from .geometry import BoxWindow, Ellipsoid, make_grid
from .mcmc import ChainConfig, posterior_intensity, run_chain
from .procgen import ThomasConfig, table1_config, thomas_dataset

__all__ = ["StudyConfig", "ReplicateResult", "StudyResult", "run_replicate", "run_study", "format_table", "REGION_NAMES"]

log = logging.getLogger(__name__)
REGION_NAMES = ["A", "1", "2", "3", "4"]
MODELS = ("hpgrf", "ipgrf")


@dataclass
class StudyConfig:
    replicates: int = 50
    n_per_type: int = 10
    M: int = 2000
    iterations: int = 2000
    burn_in: int = 1000
    thin: int = 5
    spacing: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1 or self.n_per_type < 1:
            raise ValueError("replicates and studies per type must be positive")

    def chain_config(self, seed: int) -> ChainConfig:
        return ChainConfig(M=self.M, burn_in=self.burn_in, iterations=self.iterations, thin=self.thin, seed=seed)


@dataclass
class ReplicateResult:
    index: int
    imse: np.ndarray  # (region, model)
    iwmse: np.ndarray
    seconds: float = 0.0


@dataclass
class StudyResult:
    config: StudyConfig
    replicates: list = field(default_factory=list)

    def _stack(self, metric: str) -> np.ndarray:
        return np.stack([getattr(r, metric) for r in self.replicates])

    def mean_se(self, metric: str = "imse") -> tuple[np.ndarray, np.ndarray]:
        x = self._stack(metric)
        n = x.shape[0]
        se = x.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(x.shape[1:], np.nan)
        return x.mean(axis=0), se

    def win_fraction(self, region: str = "2", metric: str = "imse") -> float:
        """Share of replicates where HPGRF has the smaller error."""
        x = self._stack(metric)[:, REGION_NAMES.index(region)]
        return float(np.mean(x[:, 0] < x[:, 1]))

    def relative_gap(self, region: str, metric: str = "imse") -> float:
        """``(mean_HPGRF - mean_IPGRF) / mean_IPGRF``."""
        m, _ = self.mean_se(metric)
        r = REGION_NAMES.index(region)
        return float((m[r, 0] - m[r, 1]) / m[r, 1])

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "replicates": [
                {"index": r.index, "imse": r.imse.tolist(), "iwmse": r.iwmse.tolist()} for r in self.replicates
            ],
        }


def _regions(cfg: ThomasConfig, window):
    return [None] + [Ellipsoid(f"region{k + 1}", window, c.mean, c.cov) for k, c in enumerate(cfg.components)]


def replicate_seeds(seed: int, k: int) -> tuple[np.random.Generator, int]:
    """Data generator and chain seed for replicate ``k``, derived from ``(seed, k)``."""
    ss = np.random.SeedSequence([seed, k])
    data_ss, chain_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), int(chain_ss.generate_state(1)[0])


def run_replicate(config: StudyConfig, k: int, thomas: ThomasConfig | None = None) -> ReplicateResult:
    thomas = thomas or table1_config()
    window = BoxWindow([0.0, 0.0], [100.0, 100.0])
    grid = make_grid(window, config.spacing)
    regions = _regions(thomas, window)
    rng, chain_seed = replicate_seeds(config.seed, k)
    data = thomas_dataset(thomas, config.n_per_type, window, rng)
    truths = [grid.scatter(thomas.intensity(j, grid.points)) for j in range(thomas.J)]
    imse = np.zeros((len(regions), 2))
    iwmse = np.zeros((len(regions), 2))
    t0 = time.perf_counter()
    for mi, model in enumerate(MODELS):
        fit = run_chain(data, config.chain_config(chain_seed), model=model)
        for j in range(thomas.J):
            est = posterior_intensity(fit, grid, j)
            for r, reg in enumerate(regions):
                a, b = imse_iwmse(est, truths[j], reg)
                imse[r, mi] += a / thomas.J
                iwmse[r, mi] += b / thomas.J
    return ReplicateResult(k, imse, iwmse, time.perf_counter() - t0)


def run_study(config: StudyConfig, progress=None) -> StudyResult:
    res = StudyResult(config)
    for k in range(config.replicates):
        rep = run_replicate(config, k)
        res.replicates.append(rep)
        log.info("replicate %d: region-2 IMSE %.4g vs %.4g", k, rep.imse[2, 0], rep.imse[2, 1])
        if progress is not None:
            progress(k, rep)
    return res


def format_table(result: StudyResult) -> str:
    """Region x model table of mean IMSE and IWMSE with standard errors."""
    mi, si = result.mean_se("imse")
    mw, sw = result.mean_se("iwmse")
    out = ["region,imse_hpgrf,se,imse_ipgrf,se,iwmse_hpgrf,se,iwmse_ipgrf,se"]
    for r, name in enumerate(REGION_NAMES):
        vals = [mi[r, 0], si[r, 0], mi[r, 1], si[r, 1], mw[r, 0], sw[r, 0], mw[r, 1], sw[r, 1]]
        out.append(name + "," + ",".join(f"{v:.6g}" for v in vals))
    return "\n".join(out)
