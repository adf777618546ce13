"""Spatially correlated process-variation maps and victim/target bank pairing."""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .dram import TimingParams
from .errors import ConfigError, VariationError

BankId = Tuple[int, int]  # (rank, bank)
Region = Tuple[int, int, int, int]  # row0, row1, col0, col1 (half-open)

MAX_FIELD_CELLS = 96 * 96
DELTA_TRAS_MAX_NS = 18.0


class InsufficientVictimsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class VariationParams:
    mean: float = 1.0
    sigma_over_mean: float = 0.09
    systematic_fraction: float = 0.5
    phi: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.sigma_over_mean < 0:
            raise ConfigError("sigma_over_mean must be >= 0")
        if not 0.0 <= self.systematic_fraction <= 1.0:
            raise ConfigError("systematic_fraction must lie in [0, 1]")
        if not 0.0 < self.phi <= 1.0:
            raise ConfigError("phi must lie in (0, 1]")

    @property
    def sigma(self) -> float:
        return self.sigma_over_mean * self.mean


def spherical_correlation(d, phi: float):
    """Spherical correlation 1 - 3d/(2 phi) + d^3/(2 phi^3) for d <= phi, else 0.

    Accepts a scalar or an array of distances.
    """
    if phi <= 0:
        raise ValueError("phi must be positive")
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise ValueError("distance must be non-negative")
    r = d_arr / phi
    rho = np.where(d_arr <= phi, 1.0 - 1.5 * r + 0.5 * r**3, 0.0)
    return float(rho) if rho.ndim == 0 else rho


def default_floorplan(grid_dims: Tuple[int, int], ranks: int, banks: int) -> Dict[BankId, Region]:
    """Split the grid into one horizontal strip per rank, each cut into per-bank columns."""
    rows, cols = grid_dims
    if rows < ranks or cols < banks:
        raise ConfigError(f"grid {rows}x{cols} too small for {ranks} ranks x {banks} banks")
    r_edges = np.linspace(0, rows, ranks + 1).round().astype(int)
    c_edges = np.linspace(0, cols, banks + 1).round().astype(int)
    return {
        (r, b): (int(r_edges[r]), int(r_edges[r + 1]), int(c_edges[b]), int(c_edges[b + 1]))
        for r in range(ranks)
        for b in range(banks)
    }


def check_floorplan(floorplan: Dict[BankId, Region], grid_dims: Tuple[int, int]) -> None:
    cover = np.zeros(grid_dims, dtype=int)
    for bank, (r0, r1, c0, c1) in floorplan.items():
        if not (0 <= r0 < r1 <= grid_dims[0] and 0 <= c0 < c1 <= grid_dims[1]):
            raise ConfigError(f"floorplan region for {bank} is empty or out of the grid")
        cover[r0:r1, c0:c1] += 1
    if not np.all(cover == 1):
        raise ConfigError("floorplan regions must tile the grid without overlap")


@dataclass
class VariationMap:
    grid: np.ndarray
    floorplan: Dict[BankId, Region]

    @property
    def grid_dims(self) -> Tuple[int, int]:
        return self.grid.shape

    def region(self, bank: BankId) -> np.ndarray:
        r0, r1, c0, c1 = self.floorplan[bank]
        return self.grid[r0:r1, c0:c1]

    def severity(self) -> Dict[BankId, float]:
        """Mean absolute deviation over each bank's region."""
        return {b: float(np.mean(np.abs(self.region(b)))) for b in sorted(self.floorplan)}

    def save(self, path) -> None:
        path = Path(path)
        rows, cols = self.grid.shape
        lines = [f"# grid {rows} {cols}"]
        for (rank, bank), (r0, r1, c0, c1) in sorted(self.floorplan.items()):
            lines.append(f"# region {rank} {bank} {r0} {r1} {c0} {c1}")
        for row in self.grid:
            lines.append(" ".join(repr(float(v)) for v in row))
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "VariationMap":
        dims = None
        floorplan: Dict[BankId, Region] = {}
        rows: List[List[float]] = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "grid":
                    dims = (int(parts[1]), int(parts[2]))
                elif parts and parts[0] == "region":
                    rank, bank, r0, r1, c0, c1 = map(int, parts[1:7])
                    floorplan[(rank, bank)] = (r0, r1, c0, c1)
                continue
            try:
                rows.append([float(x) for x in line.split()])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad matrix row") from exc
        grid = np.array(rows, dtype=float)
        if dims is None or grid.shape != dims:
            raise ConfigError(f"{path}: grid header {dims} does not match body {grid.shape}")
        if not np.all(np.isfinite(grid)):
            raise ConfigError(f"{path}: non-finite grid values")
        check_floorplan(floorplan, dims)
        return cls(grid, floorplan)


def cell_centers(grid_dims: Tuple[int, int]) -> np.ndarray:
    rows, cols = grid_dims
    y = (np.arange(rows) + 0.5) / rows
    x = (np.arange(cols) + 0.5) / cols
    yy, xx = np.meshgrid(y, x, indexing="ij")
    return np.column_stack([yy.ravel(), xx.ravel()])


@functools.lru_cache(maxsize=8)
def _correlation_factor(rows: int, cols: int, phi: float) -> np.ndarray:
    pts = cell_centers((rows, cols))
    corr = spherical_correlation(cdist(pts, pts), phi)
    # tiny diagonal load; the spherical model is PSD in 2-D but can be near singular
    corr[np.diag_indices_from(corr)] += 1e-10
    try:
        factor = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as exc:
        raise VariationError(
            f"correlation matrix for {rows}x{cols} grid with phi={phi} is not positive definite"
        ) from exc
    factor.setflags(write=False)
    return factor


def generate_variation_map(
    params: VariationParams,
    grid_dims: Tuple[int, int],
    floorplan: Dict[BankId, Region],
    max_cells: int = MAX_FIELD_CELLS,
) -> VariationMap:
    rows, cols = grid_dims
    if rows < 2 or cols < 2:
        raise ConfigError("grid must be at least 2x2")
    if rows * cols > max_cells:
        raise VariationError(f"grid {rows}x{cols} exceeds field budget of {max_cells} cells")
    check_floorplan(floorplan, grid_dims)
    sigma2 = params.sigma**2
    sys_sd = np.sqrt(params.systematic_fraction * sigma2)
    rand_sd = np.sqrt((1.0 - params.systematic_fraction) * sigma2)
    rng = np.random.default_rng(params.seed)
    n = rows * cols
    z_sys = rng.standard_normal(n)
    z_rand = rng.standard_normal(n)
    if sys_sd > 0:
        field_sys = _correlation_factor(rows, cols, float(params.phi)) @ z_sys * sys_sd
    else:
        field_sys = np.zeros(n)
    grid = (field_sys + rand_sd * z_rand).reshape(rows, cols)
    return VariationMap(grid, dict(floorplan))


@dataclass
class VariationMatrix:
    pairs: List[Tuple[int, int, int, int]] = field(default_factory=list)
    victim_timing: Dict[BankId, TimingParams] = field(default_factory=dict)
    severity: Dict[BankId, float] = field(default_factory=dict)

    def __post_init__(self):
        victims = {(p[0], p[1]) for p in self.pairs}
        targets = {(p[2], p[3]) for p in self.pairs}
        if victims & targets:
            raise ConfigError("a bank appears as both victim and target")
        if len(victims) != len(self.pairs) or len(targets) != len(self.pairs):
            raise ConfigError("victim/target pairs must be disjoint")

    @property
    def victims(self) -> List[BankId]:
        return [(p[0], p[1]) for p in self.pairs]

    @property
    def targets(self) -> List[BankId]:
        return [(p[2], p[3]) for p in self.pairs]

    def target_of(self, victim: BankId):
        for vr, vb, tr, tb in self.pairs:
            if (vr, vb) == victim:
                return (tr, tb)
        return None


def derate_timing(
    nominal: TimingParams,
    severity: float,
    severity_max: float,
    delta_tras_max: float = DELTA_TRAS_MAX_NS,
) -> TimingParams:
    """Stretch tRAS linearly with severity, saturating at ``delta_tras_max``."""
    if severity < 0:
        raise ValueError("severity must be non-negative")
    if severity_max <= 0:
        raise ValueError("severity_max must be positive")
    return nominal.with_tras(nominal.tRAS + delta_tras_max * min(severity / severity_max, 1.0))


def classify_banks(
    vmap: VariationMap,
    threshold: float,
    victim_count: int,
    nominal: TimingParams = TimingParams(),
    severity_max: float = 0.08,
    delta_tras_max: float = DELTA_TRAS_MAX_NS,
) -> VariationMatrix:
    severity = vmap.severity()
    n_banks = len(severity)
    if victim_count < 0 or victim_count > n_banks // 2:
        raise ConfigError(f"victim_count {victim_count} must be within [0, {n_banks // 2}]")
    # worst first; ties broken by bank id so the result is a pure function of the map
    ranked = sorted(severity, key=lambda b: (-severity[b], b))
    qualifying = [b for b in ranked if severity[b] > threshold]
    victims = qualifying[:victim_count]
    if len(victims) < victim_count:
        warnings.warn(
            f"only {len(victims)} of {victim_count} requested banks exceed threshold {threshold}",
            InsufficientVictimsWarning,
            stacklevel=2,
        )
    ranks = sorted({b[0] for b in severity})
    free = [b for b in severity if b not in victims]
    pairs = []
    for v in victims:
        target = _pick_target(v, free, severity, ranks)
        free.remove(target)
        pairs.append((v[0], v[1], target[0], target[1]))
    timing = {
        v: derate_timing(nominal, severity[v], severity_max, delta_tras_max) for v in victims
    }
    return VariationMatrix(pairs, timing, severity)


def _pick_target(victim: BankId, free: Sequence[BankId], severity, ranks) -> BankId:
    start = ranks.index(victim[0])
    for step in range(len(ranks)):
        rank = ranks[(start + step) % len(ranks)]
        candidates = [b for b in free if b[0] == rank]
        if candidates:
            return min(candidates, key=lambda b: (severity[b], b))
    raise ConfigError("no healthy bank left to pair with a victim")


def explicit_matrix(
    pairs: Sequence[Sequence[int]],
    nominal: TimingParams,
    tras_delta: float = DELTA_TRAS_MAX_NS,
) -> VariationMatrix:
    """Build a matrix from manufacturer-supplied pairs; victims get the full derate."""
    pairs = [tuple(int(x) for x in p) for p in pairs]
    timing = {(p[0], p[1]): nominal.with_tras(nominal.tRAS + tras_delta) for p in pairs}
    return VariationMatrix(list(pairs), timing, {})
