"""Dataset ingestion, run configuration and posterior archives."""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .circular import DISTANCES, wrap
from .exceptions import ConfigError, IngestionError, InvalidArgumentError
from .mcmc import ChainConfig, ChainOutput
from .projected import PgspPosterior, PgspPriors
from .spatial import SiteTable
from .wrapped import WgspPosterior, WgspPriors

#: mean Earth radius (km) for the local tangent-plane projection
EARTH_RADIUS_KM = 6371.0088

SITE_COLUMNS = ("site_id", "x", "y", "direction")
TARGET_COLUMNS = ("target_id", "x", "y")
COORD_FORMATS = ("utm_m", "lonlat_deg")
DIRECTION_UNITS = ("deg", "rad")
MODELS = ("wrapped", "projected")

PathLike = Union[str, os.PathLike]


# --------------------------------------------------------------------------- #
# CSV ingestion
# --------------------------------------------------------------------------- #


def _read_rows(path: PathLike, required: Sequence[str]) -> List[Tuple[int, Dict[str, str]]]:
    """Rows of a headed CSV with their 1-based file line numbers."""
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise IngestionError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise IngestionError(f"{path}: missing column(s) {missing}; header is {header}")
        reader.fieldnames = header
        rows = []
        for row in reader:
            if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
                continue
            rows.append((reader.line_num, {k: (row[k] or "").strip() for k in required}))
    return rows


def _number(value: str, column: str, path, line: int) -> float:
    try:
        out = float(value)
    except ValueError:
        raise IngestionError(f"{path}, line {line}: cannot parse {column}={value!r} as a number") from None
    if not math.isfinite(out):
        raise IngestionError(f"{path}, line {line}: {column} must be finite, got {value!r}")
    return out


def _check_unique(ids: Sequence[str], lines: Sequence[int], path) -> None:
    where: Dict[str, List[int]] = {}
    for sid, ln in zip(ids, lines):
        where.setdefault(sid, []).append(ln)
    dups = {sid: lns for sid, lns in where.items() if len(lns) > 1}
    if dups:
        detail = "; ".join(f"{sid!r} on lines {lns}" for sid, lns in sorted(dups.items()))
        raise IngestionError(f"{path}: duplicate ids: {detail}")


def lonlat_origin(lon, lat) -> Tuple[float, float]:
    """Centroid used as the tangent point of the local projection."""
    return float(np.mean(lon)), float(np.mean(lat))


def project_lonlat(lon, lat, origin: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    """Equirectangular projection to km about ``origin = (lon0, lat0)``."""
    lon0, lat0 = origin
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    east = EARTH_RADIUS_KM * np.deg2rad(lon - lon0) * math.cos(math.radians(lat0))
    north = EARTH_RADIUS_KM * np.deg2rad(lat - lat0)
    return east, north


def _to_km(x, y, fmt: str, origin=None):
    if fmt == "utm_m":
        return np.asarray(x) / 1000.0, np.asarray(y) / 1000.0
    if fmt == "lonlat_deg":
        if origin is None:
            origin = lonlat_origin(x, y)
        return project_lonlat(x, y, origin)
    raise InvalidArgumentError(f"unknown coordinate format {fmt!r}; expected one of {COORD_FORMATS}")


def _check_choice(value: str, allowed, what: str) -> None:
    if value not in allowed:
        raise InvalidArgumentError(f"unknown {what} {value!r}; expected one of {allowed}")


def read_sites(path: PathLike, format: str = "utm_m", direction_unit: str = "deg") -> SiteTable:
    """Read a ``site_id,x,y,direction`` CSV into a :class:`SiteTable`.

    ``utm_m`` coordinates are metres and are scaled to km; ``lonlat_deg``
    coordinates are longitude/latitude projected about their centroid.
    Degrees must lie in ``[0, 360]``.
    """
    _check_choice(format, COORD_FORMATS, "coordinate format")
    _check_choice(direction_unit, DIRECTION_UNITS, "direction unit")
    ids, xs, ys, dirs, lines = [], [], [], [], []
    for line, row in _read_rows(path, SITE_COLUMNS):
        if not row["site_id"]:
            raise IngestionError(f"{path}, line {line}: empty site_id")
        d = _number(row["direction"], "direction", path, line)
        if direction_unit == "deg" and not 0.0 <= d <= 360.0:
            raise IngestionError(f"{path}, line {line}: direction {d} deg is outside [0, 360]")
        ids.append(row["site_id"])
        xs.append(_number(row["x"], "x", path, line))
        ys.append(_number(row["y"], "y", path, line))
        dirs.append(math.radians(d) if direction_unit == "deg" else d)
        lines.append(line)
    _check_unique(ids, lines, path)
    east, north = _to_km(np.array(xs), np.array(ys), format)
    return SiteTable(site_id=tuple(ids), easting=east, northing=north, direction=wrap(np.array(dirs)))


def read_targets(path: PathLike, format: str = "utm_m", origin=None) -> Tuple[Tuple[str, ...], np.ndarray]:
    """Read a ``target_id,x,y`` CSV; returns ids and km coordinates.

    For ``lonlat_deg`` pass the ``origin`` of the observed sites so both
    share one projection.
    """
    _check_choice(format, COORD_FORMATS, "coordinate format")
    ids, xs, ys, lines = [], [], [], []
    for line, row in _read_rows(path, TARGET_COLUMNS):
        ids.append(row["target_id"])
        xs.append(_number(row["x"], "x", path, line))
        ys.append(_number(row["y"], "y", path, line))
        lines.append(line)
    _check_unique(ids, lines, path)
    if not ids:
        return (), np.zeros((0, 2))
    east, north = _to_km(np.array(xs), np.array(ys), format, origin)
    return tuple(ids), np.column_stack([east, north])


def read_site_origin(path: PathLike) -> Tuple[float, float]:
    """Projection origin implied by a lon/lat site file."""
    rows = _read_rows(path, SITE_COLUMNS)
    lon = [_number(r["x"], "x", path, ln) for ln, r in rows]
    lat = [_number(r["y"], "y", path, ln) for ln, r in rows]
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return lonlat_origin(lon, lat)


def fmt6(v) -> str:
    """Fixed 6-significant-digit formatting used by every CSV output."""
    v = float(v)
    return "0" if v == 0 else f"{v:.6g}"


def write_csv(path: PathLike, header: Sequence[str], rows) -> None:
    """Write rows atomically; floats are formatted with :func:`fmt6`."""

    def cell(v):
        if isinstance(v, (float, np.floating)):
            return fmt6(v)
        return str(v)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([cell(v) for v in row])
    os.replace(tmp, path)


def write_sites(path: PathLike, data: SiteTable, direction_unit: str = "deg") -> None:
    """Write a site table as ``site_id,x,y,direction`` with x, y in metres."""
    _check_choice(direction_unit, DIRECTION_UNITS, "direction unit")
    conv = np.rad2deg if direction_unit == "deg" else np.asarray
    d = conv(data.direction)
    rows = zip(data.site_id, data.easting * 1000.0, data.northing * 1000.0, d)
    write_csv(path, SITE_COLUMNS, rows)


# --------------------------------------------------------------------------- #
# run configuration
# --------------------------------------------------------------------------- #

_PATH_KEYS = ("data", "output")
_STR_KEYS = {"model": MODELS, "distance": DISTANCES, "format": COORD_FORMATS, "direction_unit": DIRECTION_UNITS}
_CHAIN_KEYS = tuple(f.name for f in fields(ChainConfig))
_WRAPPED_KEYS = tuple(f.name for f in fields(WgspPriors))
_PROJECTED_KEYS = tuple(f.name for f in fields(PgspPriors))


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to fit, krige or evaluate one model."""

    model: str = "wrapped"
    priors: Union[WgspPriors, PgspPriors] = field(default_factory=WgspPriors)
    chain: ChainConfig = field(default_factory=ChainConfig)
    distance: str = "cosine"
    data: Optional[str] = None
    output: Optional[str] = None
    format: str = "utm_m"
    direction_unit: str = "deg"
    threads: int = 1

    def __post_init__(self):
        for key, allowed in _STR_KEYS.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}: expected one of {allowed}, got {getattr(self, key)!r}")
        want = WgspPriors if self.model == "wrapped" else PgspPriors
        if not isinstance(self.priors, want):
            raise ConfigError(f"priors: model {self.model!r} needs {want.__name__}")
        if int(self.threads) != self.threads or self.threads == 0 or self.threads < -1:
            raise ConfigError(f"threads: expected a positive integer or -1, got {self.threads!r}")

    def snapshot(self) -> dict:
        """JSON-ready dictionary; :func:`config_from_snapshot` inverts it."""
        priors = {k: _jsonable(v) for k, v in asdict(self.priors).items()}
        return {
            "model": self.model,
            "priors": priors,
            "chain": asdict(self.chain),
            "distance": self.distance,
            "data": self.data,
            "output": self.output,
            "format": self.format,
            "direction_unit": self.direction_unit,
            "threads": self.threads,
        }


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def _priors_from_dict(model: str, values: dict):
    if model == "wrapped":
        return WgspPriors(**values)
    values = dict(values)
    if "mu_mean" in values:
        values["mu_mean"] = tuple(values["mu_mean"])
    if "mu_cov" in values:
        values["mu_cov"] = tuple(tuple(row) for row in values["mu_cov"])
    return PgspPriors(**values)


def config_from_snapshot(snap: dict) -> RunConfig:
    try:
        return RunConfig(
            model=snap["model"],
            priors=_priors_from_dict(snap["model"], snap["priors"]),
            chain=ChainConfig(**snap["chain"]),
            distance=snap["distance"],
            data=snap.get("data"),
            output=snap.get("output"),
            format=snap.get("format", "utm_m"),
            direction_unit=snap.get("direction_unit", "deg"),
            threads=snap.get("threads", 1),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config snapshot: {exc}") from exc


def _parse_floats(key: str, text: str, count: int) -> List[float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != count:
        raise ConfigError(f"{key}: expected {count} comma-separated numbers, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as numbers") from None


def _parse_scalar(key: str, text: str, integer: bool):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as a number") from None
    if integer:
        if value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {text!r}")
        return int(value)
    return value


def parse_config(text: str, env: Optional[Dict[str, str]] = None, base_dir: Optional[PathLike] = None) -> RunConfig:
    """Parse a flat ``key = value`` configuration.

    Blank lines and ``#`` / ``;`` comments are ignored. ``CIRCSPACE_SEED``
    and ``CIRCSPACE_THREADS`` in ``env`` override ``seed`` and ``threads``.
    Relative ``data`` and ``output`` paths resolve against ``base_dir``.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    raw = dict(parser["run"])
    env = {} if env is None else env
    if env.get("CIRCSPACE_SEED"):
        raw["seed"] = env["CIRCSPACE_SEED"]
    if env.get("CIRCSPACE_THREADS"):
        raw["threads"] = env["CIRCSPACE_THREADS"]

    model = raw.pop("model", "wrapped")
    if model not in MODELS:
        raise ConfigError(f"model: expected one of {MODELS}, got {model!r}")
    prior_keys = _WRAPPED_KEYS if model == "wrapped" else _PROJECTED_KEYS
    other_keys = set(_PROJECTED_KEYS if model == "wrapped" else _WRAPPED_KEYS) - set(prior_keys)

    top: dict = {"model": model}
    chain: dict = {}
    priors: dict = {}
    for key, text in raw.items():
        if key in _STR_KEYS:
            top[key] = text
        elif key in _PATH_KEYS:
            p = Path(text)
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            top[key] = str(p)
        elif key == "threads":
            top[key] = _parse_scalar(key, text, integer=True)
        elif key in _CHAIN_KEYS:
            chain[key] = _parse_scalar(key, text, integer=key != "target_accept")
        elif key == "mu_mean" and model == "projected":
            priors[key] = tuple(_parse_floats(key, text, 2))
        elif key == "mu_cov":
            if model != "projected":
                raise ConfigError("mu_cov: only valid for the projected model")
            v = _parse_floats(key, text, 4)
            priors[key] = ((v[0], v[1]), (v[2], v[3]))
        elif key in prior_keys:
            priors[key] = _parse_scalar(key, text, integer=key == "k_max")
        elif key in other_keys:
            raise ConfigError(f"{key}: not a {model}-model setting")
        else:
            raise ConfigError(f"{key}: unknown configuration key")
    chain_cfg = ChainConfig(**chain)
    try:
        prior_obj = _priors_from_dict(model, priors)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(priors=prior_obj, chain=chain_cfg, **top)


def load_config(path: PathLike, env: Optional[Dict[str, str]] = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return parse_config(text, env=os.environ if env is None else env, base_dir=Path(path).parent)


# --------------------------------------------------------------------------- #
# posterior archives
# --------------------------------------------------------------------------- #

MANIFEST = "manifest.json"
ARCHIVE_VERSION = 1


def _draw_columns(name: str, width: int, site_ids) -> List[str]:
    if name == "mu" and width == 2:
        return ["mu1", "mu2"]
    if name in ("k", "r"):
        return [f"{name}[{sid}]" for sid in site_ids]
    return [name]


def _write_draws(path: Path, name: str, post) -> None:
    first = post.chains[0].draws[name]
    width = 1 if first.ndim == 1 else first.shape[1]
    header = ["chain", "draw"] + _draw_columns(name, width, post.site_ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for c, chain in enumerate(post.chains):
            d = chain.draws[name].reshape(chain.n_draws, -1)
            for i, row in enumerate(d):
                w.writerow([c, i] + [repr(float(v)) for v in row])


def _read_draws(path: Path, n_chains: int, vector: bool) -> List[np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        width = len(next(reader)) - 2
        chain_of, values = [], []
        for row in reader:
            chain_of.append(int(row[0]))
            values.append([float(v) for v in row[2:]])
    chain_of = np.asarray(chain_of, dtype=int)
    values = np.asarray(values, dtype=float).reshape(-1, width)
    out = []
    for c in range(n_chains):
        vals = values[chain_of == c]
        out.append(vals if vector else vals[:, 0])
    return out


def write_archive(post, path: PathLike, run: Optional[RunConfig] = None) -> Path:
    """Write a posterior to directory ``path`` via a temporary sibling.

    The manifest holds the model tag, run configuration, observed sites,
    seeds, acceptance rates and PSRF; each parameter gets a CSV with one
    row per retained draw at full precision.
    """
    path = Path(path)
    if run is None:
        run = RunConfig(model=post.model, priors=post.priors, chain=post.config)
    params = list(post.chains[0].draws)
    manifest = {
        "archive_version": ARCHIVE_VERSION,
        "model": post.model,
        "config": run.snapshot(),
        "sites": {
            "site_id": list(post.site_ids),
            "easting_km": [float(v) for v in post.coords[:, 0]],
            "northing_km": [float(v) for v in post.coords[:, 1]],
            "direction_rad": [float(v) for v in post.x],
        },
        "chains": [
            {
                "seed": int(c.seed),
                "n_draws": int(c.n_draws),
                "acceptance": {k: float(v) for k, v in c.acceptance.items()},
                "invalid_proposals": {k: int(v) for k, v in c.invalid_proposals.items()},
            }
            for c in post.chains
        ],
        "psrf": {k: float(v) for k, v in post.psrf().items()},
        "parameters": {
            name: {"file": f"{name}.csv", "vector": bool(post.chains[0].draws[name].ndim > 1)}
            for name in params
        },
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        for name in params:
            _write_draws(tmp / f"{name}.csv", name, post)
        text = json.dumps(manifest, sort_keys=True, indent=2, allow_nan=True) + "\n"
        (tmp / MANIFEST).write_text(text, encoding="utf-8")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def read_manifest(path: PathLike) -> dict:
    try:
        return json.loads((Path(path) / MANIFEST).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidArgumentError(f"{path}: not a posterior archive ({exc.strerror})") from exc


def read_archive(path: PathLike):
    """Load an archive written by :func:`write_archive`.

    Returns ``(posterior, run_config)``.
    """
    path = Path(path)
    man = read_manifest(path)
    run = config_from_snapshot(man["config"])
    n_chains = len(man["chains"])
    per_param = {
        name: _read_draws(path / meta["file"], n_chains, meta["vector"])
        for name, meta in man["parameters"].items()
    }
    if "k" in per_param:
        per_param["k"] = [v.astype(np.int64) for v in per_param["k"]]
    chains = []
    for c, meta in enumerate(man["chains"]):
        chains.append(
            ChainOutput(
                draws={name: per_param[name][c] for name in man["parameters"]},
                acceptance=dict(meta["acceptance"]),
                seed=int(meta["seed"]),
                invalid_proposals=dict(meta["invalid_proposals"]),
            )
        )
    sites = man["sites"]
    cls = WgspPosterior if man["model"] == "wrapped" else PgspPosterior
    post = cls(
        chains=chains,
        site_ids=tuple(sites["site_id"]),
        coords=np.column_stack([sites["easting_km"], sites["northing_km"]]).reshape(-1, 2),
        x=np.asarray(sites["direction_rad"], dtype=float),
        priors=run.priors,
        config=run.chain,
    )
    return post, run
