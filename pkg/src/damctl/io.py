"""Config ingestion and result persistence.

Configs are TOML documents with fixed sections; unknown sections or keys are
rejected and storm probabilities must already sum to one (no silent
normalization).  Grids are persisted as delimiter-separated text with 17
significant digits, which round-trips doubles exactly and keeps the outputs
usable by any plotting toolchain.
"""

from __future__ import annotations

import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import solver
from .model import ConfigError, ModelConfig
from .solver import Grid, PolicyField, SolveResult, ValueField

__all__ = [
    "default_config_path",
    "load_config",
    "config_hash",
    "export_grid",
    "import_grid",
    "ResultBundle",
    "save_bundle",
    "load_bundle",
    "verify_bundle",
]

_FLOAT_FMT = "%.17g"


def default_config_path() -> Path:
    """Location of the packaged default configuration."""
    return Path(resources.files("damctl") / "data" / "default.config")


def load_config(path: str | Path) -> ModelConfig:
    """Parse and validate a TOML config file into a :class:`ModelConfig`."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ModelConfig.from_dict(doc)


def config_hash(cfg: ModelConfig) -> str:
    """Order-insensitive hash of the semantic configuration content."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# --- grid import/export ---------------------------------------------------------


def export_grid(field: np.ndarray, grid: Grid, path: str | Path, fmt: str = "csv") -> None:
    """Write one lattice field, one row per node, level-major then intensity.

    ``csv`` writes a ``h,ell,value`` table; ``json`` writes a single
    structured document with the node axes and the value matrix.  Both
    round-trip bit-exact through :func:`import_grid`.
    """
    field = np.asarray(field, dtype=float)
    if field.shape != (grid.nh, grid.nl):
        raise ValueError(f"field shape {field.shape} does not match the lattice")
    path = Path(path)
    if fmt == "csv":
        lines = ["h,ell,value"]
        for ih, h in enumerate(grid.h_nodes):
            for il, ell in enumerate(grid.ell_nodes):
                lines.append(
                    f"{_FLOAT_FMT % h},{_FLOAT_FMT % ell},{_FLOAT_FMT % field[ih, il]}"
                )
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "json":
        doc = {
            "h": [_FLOAT_FMT % h for h in grid.h_nodes],
            "ell": [_FLOAT_FMT % e for e in grid.ell_nodes],
            "values": [[_FLOAT_FMT % x for x in row] for row in field],
        }
        path.write_text(json.dumps(doc, sort_keys=True))
    else:
        raise ValueError(f"unknown export format: {fmt!r}")


def import_grid(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a field written by :func:`export_grid`; returns (h, ell, values)."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        h = np.array([float(x) for x in doc["h"]])
        ell = np.array([float(x) for x in doc["ell"]])
        values = np.array([[float(x) for x in row] for row in doc["values"]])
        return h, ell, values
    lines = text.strip().splitlines()
    if not lines or lines[0] != "h,ell,value":
        raise ValueError(f"{path}: not a grid export")
    rows = [line.split(",") for line in lines[1:]]
    h_col = np.array([float(r[0]) for r in rows])
    l_col = np.array([float(r[1]) for r in rows])
    v_col = np.array([float(r[2]) for r in rows])
    nl = int(np.argmax(h_col != h_col[0])) or len(h_col)
    nh = len(h_col) // nl
    if nh * nl != len(h_col):
        raise ValueError(f"{path}: ragged grid export")
    return h_col[::nl], l_col[:nl], v_col.reshape(nh, nl)


# --- result bundles ---------------------------------------------------------------


@dataclass
class ResultBundle:
    """Everything needed to reuse or re-verify one solve."""

    cfg: ModelConfig
    values: ValueField
    policy: PolicyField
    thresholds: np.ndarray  # (2, nl) level per intensity node
    iterations: int
    residual: float
    tol: float
    seed: int | None = None
    wall_time_s: float | None = None

    @property
    def grid(self) -> Grid:
        return Grid.from_config(self.cfg)

    @classmethod
    def from_solve(
        cls,
        cfg: ModelConfig,
        result: SolveResult,
        tol: float,
        seed: int | None = None,
        wall_time_s: float | None = None,
    ) -> "ResultBundle":
        grid = Grid.from_config(cfg)
        thresholds = np.stack(
            [solver.extract_threshold(result.policy, grid, i) for i in (0, 1)]
        )
        return cls(
            cfg=cfg,
            values=result.values,
            policy=result.policy,
            thresholds=thresholds,
            iterations=result.iterations,
            residual=result.residual,
            tol=tol,
            seed=seed,
            wall_time_s=wall_time_s,
        )


_GRID_FILES = {
    "v0": ("values", 0),
    "v1": ("values", 1),
    "beta0": ("beta", 0),
    "beta1": ("beta", 1),
    "switch0": ("switch", 0),
    "switch1": ("switch", 1),
    "maximal0": ("maximal", 0),
    "maximal1": ("maximal", 1),
}


def save_bundle(bundle: ResultBundle, out_dir: str | Path) -> Path:
    """Persist a bundle as CSV grids plus a metadata document.

    Timing lives in its own metadata section so that everything else is
    byte-reproducible for identical inputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = bundle.grid
    export_grid(bundle.values.v0, grid, out / "v0.csv")
    export_grid(bundle.values.v1, grid, out / "v1.csv")
    export_grid(bundle.policy.beta_choice[0], grid, out / "beta0.csv")
    export_grid(bundle.policy.beta_choice[1], grid, out / "beta1.csv")
    export_grid(bundle.policy.switch[0].astype(float), grid, out / "switch0.csv")
    export_grid(bundle.policy.switch[1].astype(float), grid, out / "switch1.csv")
    export_grid(bundle.policy.maximal[0].astype(float), grid, out / "maximal0.csv")
    export_grid(bundle.policy.maximal[1].astype(float), grid, out / "maximal1.csv")

    lines = ["ell,regime0,regime1"]
    for il, ell in enumerate(grid.ell_nodes):
        lines.append(
            f"{_FLOAT_FMT % ell},{_FLOAT_FMT % bundle.thresholds[0, il]},"
            f"{_FLOAT_FMT % bundle.thresholds[1, il]}"
        )
    (out / "thresholds.csv").write_text("\n".join(lines) + "\n")

    meta = {
        "config": bundle.cfg.to_dict(),
        "config_hash": config_hash(bundle.cfg),
        "solver": {
            "iterations": bundle.iterations,
            "residual": bundle.residual,
            "tol": bundle.tol,
        },
        "seed": bundle.seed,
        "timing": {"wall_time_s": bundle.wall_time_s},
    }
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return out


def load_bundle(in_dir: str | Path) -> ResultBundle:
    """Reconstruct a bundle saved by :func:`save_bundle`."""
    src = Path(in_dir)
    meta = json.loads((src / "metadata.json").read_text())
    cfg = ModelConfig.from_dict(meta["config"])
    stored_hash = meta.get("config_hash")
    if stored_hash and stored_hash != config_hash(cfg):
        raise ConfigError(f"{src}: config hash mismatch, bundle corrupted")

    arrays = {}
    for stem in _GRID_FILES:
        _, _, arrays[stem] = import_grid(src / f"{stem}.csv")
    values = ValueField(arrays["v0"], arrays["v1"])
    policy = PolicyField(
        switch=np.stack([arrays["switch0"], arrays["switch1"]]).astype(bool),
        beta_choice=np.stack([arrays["beta0"], arrays["beta1"]]),
        maximal=np.stack([arrays["maximal0"], arrays["maximal1"]]).astype(bool),
    )
    rows = (src / "thresholds.csv").read_text().strip().splitlines()[1:]
    thresholds = np.array([[float(x) for x in r.split(",")[1:]] for r in rows]).T
    return ResultBundle(
        cfg=cfg,
        values=values,
        policy=policy,
        thresholds=thresholds,
        iterations=int(meta["solver"]["iterations"]),
        residual=float(meta["solver"]["residual"]),
        tol=float(meta["solver"]["tol"]),
        seed=meta.get("seed"),
        wall_time_s=meta.get("timing", {}).get("wall_time_s"),
    )


def verify_bundle(bundle: ResultBundle) -> tuple[bool, float]:
    """Recompute the fixed-point defect of the stored grids.

    Returns whether it matches the stored residual within 1e-12, plus the
    recomputed value.
    """
    res = solver.hjb_residual(bundle.cfg, bundle.grid, bundle.values)
    recomputed = float(np.max(np.abs(res)))
    return abs(recomputed - bundle.residual) <= 1e-12, recomputed


def semantic_fingerprint(bundle_dir: str | Path) -> str:
    """Hash of a bundle's reproducible content (metadata timing excluded)."""
    src = Path(bundle_dir)
    digest = hashlib.sha256()
    for name in sorted(p.name for p in src.iterdir() if p.suffix == ".csv"):
        digest.update(name.encode())
        digest.update((src / name).read_bytes())
    meta = json.loads((src / "metadata.json").read_text())
    meta.pop("timing", None)
    digest.update(json.dumps(meta, sort_keys=True).encode())
    return digest.hexdigest()
