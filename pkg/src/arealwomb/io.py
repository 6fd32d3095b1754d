"""File formats, ingestion and run configuration.

All identifiers in files are 1-based. Every CSV written here starts with a
``# run <hash>`` comment line; readers skip ``#`` lines. Floats are written
with 17 significant digits so that a write/read cycle is exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import jsonschema
import numpy as np

from .dagar import EdgeDissimilarity
from .data import ObservedData
from .graph import DiseaseGraphSpec, RegionGraph
from .sampler import BLOCKS, ChainConfig, PosteriorSamples, PriorSpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent input files."""


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialise {type(o)}")


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_csv(path: Path, header: Iterable[str], rows: Iterable[Iterable], run_hash: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# run {run_hash}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(header))
        for r in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in r])


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    with open(path, newline="") as f:
        lines = [ln for ln in f if ln.strip() and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise InputError(f"{path.name}: empty file")
    return [h.strip() for h in rows[0]], [[c.strip() for c in r] for r in rows[1:]]


def _col(header, name, path):
    try:
        return header.index(name)
    except ValueError:
        raise InputError(f"{Path(path).name}: missing column {name!r}") from None


def _int(text: str, what: str) -> int:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{what}: {text!r} is not a number") from None
    if v != int(v):
        raise InputError(f"{what}: {text!r} is not an integer")
    return int(v)


# Expected counts ------------------------------------------------------------------


def expected_counts(cases, population) -> np.ndarray:
    """Internally standardised expected counts.

    ``cases`` is ``(n, q, G)`` and ``population`` is ``(n, G)`` or
    ``(n, q, G)``. Returns ``E`` of shape ``(n, q)``.
    """
    y = np.asarray(cases, dtype=float)
    N = np.asarray(population, dtype=float)
    if N.ndim == 2:
        N = np.broadcast_to(N[:, None, :], y.shape)
    if N.shape != y.shape:
        raise ValueError("population and case arrays disagree in shape")
    tot_y = y.sum(axis=0)  # (q, G)
    tot_N = N.sum(axis=0)
    bad = (tot_y > 0) & (tot_N <= 0)
    if bad.any():
        d, k = np.argwhere(bad)[0]
        raise ValueError(f"group {k + 1} has cases for disease {d + 1} but zero population")
    rate = np.divide(tot_y, tot_N, out=np.zeros_like(tot_y), where=tot_N > 0)
    E = np.einsum("qg,iqg->iq", rate, N)
    if np.any(E <= 0):
        flagged = np.argwhere(E <= 0)
        log.warning("%d cell(s) have zero expected count", len(flagged))
    return E


# Graph files ----------------------------------------------------------------------


def write_graph(out: Path, graph: RegionGraph, run_hash: str) -> None:
    write_csv(out / "edges.csv", ["region_i", "region_j"], [(a + 1, b + 1) for a, b in graph.edges], run_hash)
    rows = []
    for i in range(graph.n):
        row = [i + 1, int(graph.order[i]) + 1]
        if graph.centroids is not None:
            row += [graph.centroids[i, 0], graph.centroids[i, 1]]
        rows.append(row)
    header = ["region_id", "order"] + (["x", "y"] if graph.centroids is not None else [])
    write_csv(out / "regions.csv", header, rows, run_hash)


def read_graph(edges_path: Path, regions_path: Path | None, n: int | None = None) -> RegionGraph:
    order = cent = None
    if regions_path is not None and Path(regions_path).exists():
        h, rows = read_csv(regions_path)
        ids = [_int(r[_col(h, "region_id", regions_path)], "region_id") for r in rows]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise InputError("regions.csv must list regions 1..n exactly once")
        n = len(ids)
        perm = np.argsort(ids)
        if "order" in h:
            order = np.array([_int(rows[p][h.index("order")], "order") - 1 for p in perm])
        if "x" in h and "y" in h:
            cent = np.array([[float(rows[p][h.index("x")]), float(rows[p][h.index("y")])] for p in perm])
    h, rows = read_csv(edges_path)
    ci, cj = _col(h, "region_i", edges_path), _col(h, "region_j", edges_path)
    edges = []
    for r in rows:
        a, b = _int(r[ci], "region_i"), _int(r[cj], "region_j")
        for v in (a, b):
            if n is not None and not 1 <= v <= n:
                raise InputError(f"edge ({a}, {b}) references unknown region {v}")
        edges.append((a - 1, b - 1))
    if n is None:
        n = max(max(e) for e in edges) + 1
    try:
        return RegionGraph(n, tuple(edges), order=order, centroids=cent)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# Data files ------------------------------------------------------------------------


def write_counts(path: Path, y: np.ndarray, E: np.ndarray | None, run_hash: str) -> None:
    n, q = y.shape
    rows = []
    for d in range(q):
        for i in range(n):
            row = [i + 1, d + 1, int(y[i, d])]
            if E is not None:
                row.append(float(E[i, d]))
            rows.append(row)
    header = ["region_id", "disease_id", "count"] + (["expected"] if E is not None else [])
    write_csv(path, header, rows, run_hash)


def read_counts(path: Path, n: int) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    h, rows = read_csv(path)
    cr, cd, cc = (_col(h, c, path) for c in ("region_id", "disease_id", "count"))
    ce = h.index("expected") if "expected" in h else None
    q = max(_int(r[cd], "disease_id") for r in rows)
    y = np.zeros((n, q), dtype=np.int64)
    E = np.zeros((n, q)) if ce is not None else None
    seen = np.zeros((n, q), dtype=bool)
    for r in rows:
        i, d = _int(r[cr], "region_id"), _int(r[cd], "disease_id")
        if not 1 <= i <= n:
            raise InputError(f"count for unknown region {i}")
        if d < 1:
            raise InputError(f"invalid disease id {d}")
        if seen[i - 1, d - 1]:
            raise InputError(f"duplicate cell (region {i}, disease {d})")
        seen[i - 1, d - 1] = True
        c = _int(r[cc], f"count (region {i}, disease {d})")
        if c < 0:
            raise InputError(f"negative count at (region {i}, disease {d})")
        y[i - 1, d - 1] = c
        if ce is not None:
            E[i - 1, d - 1] = float(r[ce])
    return y, E, seen


def read_strata(path: Path, n: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    h, rows = read_csv(path)
    cols = [_col(h, c, path) for c in ("region_id", "disease_id", "group_id", "cases", "population")]
    G = max(_int(r[cols[2]], "group_id") for r in rows)
    cases = np.zeros((n, q, G))
    pop = np.zeros((n, q, G))
    seen = set()
    for r in rows:
        i, d, k = (_int(r[c], nm) for c, nm in zip(cols[:3], ("region_id", "disease_id", "group_id")))
        key = (i, d, k)
        if key in seen:
            raise InputError(f"duplicate stratum (region {i}, disease {d}, group {k})")
        seen.add(key)
        if not (1 <= i <= n and 1 <= d <= q and k >= 1):
            raise InputError(f"stratum (region {i}, disease {d}, group {k}) out of range")
        cv = _int(r[cols[3]], "cases")
        if cv < 0:
            raise InputError(f"negative cases in stratum (region {i}, disease {d}, group {k})")
        cases[i - 1, d - 1, k - 1] = cv
        pop[i - 1, d - 1, k - 1] = float(r[cols[4]])
    return cases, pop


def write_covariates(path: Path, names: list[str], X: np.ndarray, run_hash: str) -> None:
    """Non-intercept design columns; a column constant across diseases is
    written once with ``disease_id = 0`` (shared)."""
    n, q, p = X.shape
    rows = []
    for c, name in enumerate(names):
        if c == 0 and name == "intercept":
            continue
        shared = np.all(X[:, :, c] == X[:, :1, c])
        for i in range(n):
            if shared:
                rows.append([i + 1, 0, name, float(X[i, 0, c])])
            else:
                for d in range(q):
                    rows.append([i + 1, d + 1, name, float(X[i, d, c])])
    write_csv(path, ["region_id", "disease_id", "name", "value"], rows, run_hash)


def read_covariates(path: Path | None, n: int, q: int) -> tuple[np.ndarray, tuple[str, ...]]:
    names = ["intercept"]
    cols: dict[str, np.ndarray] = {}
    filled: dict[str, np.ndarray] = {}
    if path is not None and Path(path).exists():
        h, rows = read_csv(path)
        cr, cd, cn, cv = (_col(h, c, path) for c in ("region_id", "disease_id", "name", "value"))
        for r in rows:
            i, d, name = _int(r[cr], "region_id"), _int(r[cd], "disease_id"), r[cn]
            if not 1 <= i <= n or not 0 <= d <= q:
                raise InputError(f"covariate {name!r} row for unknown cell (region {i}, disease {d})")
            if name not in cols:
                names.append(name)
                cols[name] = np.zeros((n, q))
                filled[name] = np.zeros((n, q), dtype=bool)
            targets = range(q) if d == 0 else [d - 1]
            for dd in targets:
                if filled[name][i - 1, dd]:
                    raise InputError(f"duplicate covariate {name!r} at (region {i}, disease {dd + 1})")
                filled[name][i - 1, dd] = True
                cols[name][i - 1, dd] = float(r[cv])
        for name, f in filled.items():
            if not f.all():
                i, d = np.argwhere(~f)[0]
                raise InputError(f"covariate {name!r} missing at (region {i + 1}, disease {d + 1})")
    X = np.ones((n, q, len(names)))
    for c, name in enumerate(names[1:], start=1):
        X[:, :, c] = cols[name]
    return X, tuple(names)


def write_dissimilarity(path: Path, graph: RegionGraph, z: EdgeDissimilarity, run_hash: str) -> None:
    header = ["region_i", "region_j"] + [f"z{r + 1}" for r in range(z.R)]
    rows = [[a + 1, b + 1, *z.values[k]] for k, (a, b) in enumerate(graph.edges)]
    write_csv(path, header, rows, run_hash)


def read_dissimilarity(path: Path, graph: RegionGraph) -> EdgeDissimilarity:
    h, rows = read_csv(path)
    ci, cj = _col(h, "region_i", path), _col(h, "region_j", path)
    zc = [k for k, name in enumerate(h) if name.startswith("z")]
    if not zc:
        raise InputError(f"{Path(path).name}: no z columns")
    table = {}
    for r in rows:
        key = (_int(r[ci], "region_i") - 1, _int(r[cj], "region_j") - 1)
        if key in table or key[::-1] in table:
            raise InputError(f"{Path(path).name}: duplicate pair ({key[0] + 1}, {key[1] + 1})")
        table[key] = np.array([float(r[k]) for k in zc])
    try:
        return EdgeDissimilarity.from_pairs(graph, table)
    except KeyError as exc:
        raise InputError(f"{Path(path).name}: {exc.args[0]}") from None
    except ValueError as exc:
        raise InputError(f"{Path(path).name}: {exc}") from None


@dataclass
class Dataset:
    data: ObservedData
    graph: RegionGraph
    report: list[str] = field(default_factory=list)


def ingest(directory: Path, counts: str = "counts.csv", standardize: bool = False) -> Dataset:
    """Read a data directory.

    Expected files: ``edges.csv``, optional ``regions.csv``, ``counts.csv``
    (with an ``expected`` column, or a ``strata.csv`` alongside),
    optional ``covariates.csv``, and ``dissimilarity_<d>.csv`` per disease
    (``dissimilarity.csv`` is used for any disease without its own file).
    """
    directory = Path(directory)
    report: list[str] = []
    regions = directory / "regions.csv"
    graph = read_graph(directory / "edges.csv", regions if regions.exists() else None)
    n = graph.n
    y, E, seen = read_counts(directory / counts, n)
    q = y.shape[1]
    strata = directory / "strata.csv"
    if E is None:
        if not strata.exists():
            raise InputError("counts file has no expected column and no strata.csv is present")
        cases, pop = read_strata(strata, n, q)
        E = expected_counts(cases, pop)
        report.append("expected counts standardised from strata")
    observed = seen.copy()
    drop = observed & (E <= 0)
    if drop.any():
        for i, d in np.argwhere(drop):
            report.append(f"cell (region {i + 1}, disease {d + 1}) has non-positive expected count; excluded")
        observed &= ~drop
    if (~seen).any():
        report.append(f"{int((~seen).sum())} cell(s) absent from the counts file; excluded")
    X, names = read_covariates(directory / "covariates.csv", n, q)
    z = []
    scales = []
    for d in range(q):
        p = directory / f"dissimilarity_{d + 1}.csv"
        if not p.exists():
            p = directory / "dissimilarity.csv"
        if not p.exists():
            raise InputError(f"no dissimilarity file for disease {d + 1}")
        zd = read_dissimilarity(p, graph)
        if standardize:
            zd, sc = zd.standardized()
            scales.append(sc)
        z.append(zd)
    E_safe = np.where(observed, E, 1.0)
    try:
        data = ObservedData(y, E_safe, X, z, observed, names, scales or None)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return Dataset(data, graph, report)


# Configuration ----------------------------------------------------------------------


def load_schema() -> dict:
    text = (resources.files("arealwomb") / "schema" / "config.schema.json").read_text()
    return json.loads(text)


@dataclass
class RunConfig:
    variant: str = "unstructured"
    priors: PriorSpec = field(default_factory=PriorSpec)
    chain: ChainConfig = field(default_factory=ChainConfig)
    disease_graph: dict = field(default_factory=dict)
    probes: list[str] = field(default_factory=list)
    zeta: float = 0.05
    adjacency_cutoff: float = 0.5
    standardize_dissimilarity: bool = True
    correlogram_bins: list[float] | None = None

    def disease_spec(self, q: int) -> DiseaseGraphSpec:
        from .simulate import default_disease_graph

        g = self.disease_graph
        if self.variant == "unstructured":
            return DiseaseGraphSpec(q)
        if self.variant == "directed":
            if "parents" in g:
                if len(g["parents"]) != q:
                    raise InputError(f"disease_graph.parents lists {len(g['parents'])} diseases, data has {q}")
                return DiseaseGraphSpec(q, "directed", parents=tuple(tuple(h - 1 for h in pa) for pa in g["parents"]))
            return default_disease_graph("directed", q)
        if "adjacency" in g:
            return DiseaseGraphSpec(q, "undirected", adjacency=np.array(g["adjacency"]))
        return default_disease_graph("undirected", q)

    def to_dict(self) -> dict:
        pr = asdict(self.priors)
        ch = asdict(self.chain)
        ch["update"] = list(ch["update"])
        ch.pop("record_proposals")
        return {
            "schema_version": SCHEMA_VERSION,
            "variant": self.variant,
            "disease_graph": self.disease_graph,
            "priors": {k: v for k, v in pr.items() if v is not None},
            "chain": ch,
            "probes": list(self.probes),
            "zeta": self.zeta,
            "adjacency_cutoff": self.adjacency_cutoff,
            "standardize_dissimilarity": self.standardize_dissimilarity,
            **({"correlogram_bins": self.correlogram_bins} if self.correlogram_bins else {}),
        }


def parse_config(obj: dict) -> RunConfig:
    try:
        jsonschema.validate(obj, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"config invalid at {where}: {exc.message}") from None
    pr = dict(obj.get("priors", {}))
    if "eta_upper" in pr:
        pr["eta_upper"] = [np.asarray(m, dtype=float) for m in pr["eta_upper"]]
    if "psi" in pr:
        pr["psi"] = np.asarray(pr["psi"], dtype=float)
    ch = dict(obj.get("chain", {}))
    if "update" in ch:
        ch["update"] = tuple(ch["update"])
    if "seed" in obj:
        ch["seed"] = obj["seed"]
    try:
        return RunConfig(
            variant=obj.get("variant", "unstructured"),
            priors=PriorSpec(**pr),
            chain=ChainConfig(**ch),
            disease_graph=obj.get("disease_graph", {}),
            probes=list(obj.get("probes", [])),
            zeta=obj.get("zeta", 0.05),
            adjacency_cutoff=obj.get("adjacency_cutoff", 0.5),
            standardize_dissimilarity=obj.get("standardize_dissimilarity", True),
            correlogram_bins=obj.get("correlogram_bins"),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"config invalid: {exc}") from None


def load_config(path: Path) -> RunConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{Path(path).name}: not valid JSON ({exc.msg})") from None
    return parse_config(obj)


# Sample store -----------------------------------------------------------------------


def _block_columns(samples: PosteriorSamples) -> dict[str, tuple[list[str], np.ndarray]]:
    S, q, n = samples.size, samples.q, samples.n
    p = samples.beta.shape[2]
    out = {
        "beta": ([f"beta_{d + 1}_{j + 1}" for d in range(q) for j in range(p)], samples.beta.reshape(S, -1)),
        "theta": ([f"theta_{k + 1}" for k in range(samples.K)], samples.theta),
        "tau_s": (["tau_s"], samples.tau_s[:, None]),
        "V": ([f"V_{k + 1}" for k in range(samples.K)], samples.V),
        "gamma": ([f"gamma_{d + 1}_{i + 1}" for d in range(q) for i in range(n)], samples.gamma),
        "labels": ([f"u_{d + 1}_{i + 1}" for d in range(q) for i in range(n)], samples.labels + 1),
        "rho": ([f"rho_{d + 1}" for d in range(q)], samples.rho),
    }
    eta_names, eta_cols = [], []
    for d, e in enumerate(samples.eta):
        eta_names += [f"eta_{d + 1}_{r + 1}" for r in range(e.shape[1])]
        eta_cols.append(e)
    out["eta"] = (eta_names, np.concatenate(eta_cols, axis=1) if eta_cols else np.empty((S, 0)))
    c = samples.cross.reshape(S, -1)
    if samples.variant == "unstructured":
        names = [f"A_{a + 1}_{b + 1}" for a in range(q) for b in range(q)]
    elif samples.variant == "directed":
        names = [f"alpha_{e + 1}_{j}" for e in range(samples.cross.shape[1]) for j in (0, 1)]
    else:
        names = ["rho_dis"]
    out["cross"] = (names, c)
    return out


def write_samples(run_dir: Path, samples: PosteriorSamples, run_hash: str) -> None:
    d = Path(run_dir) / "samples"
    for name, (header, arr) in _block_columns(samples).items():
        write_csv(d / f"{name}.csv", header, arr.tolist(), run_hash)


def _read_block(path: Path, dtype=float) -> tuple[list[str], np.ndarray]:
    h, rows = read_csv(path)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(h)) if rows else np.empty((0, len(h)))
    return h, arr.astype(dtype)


def read_samples(run_dir: Path, manifest: dict) -> PosteriorSamples:
    d = Path(run_dir) / "samples"
    q, n, K, p = manifest["q"], manifest["n"], manifest["K"], manifest["p"]
    _, beta = _read_block(d / "beta.csv")
    S = beta.shape[0]
    _, theta = _read_block(d / "theta.csv")
    _, tau = _read_block(d / "tau_s.csv")
    _, V = _read_block(d / "V.csv")
    _, gamma = _read_block(d / "gamma.csv")
    _, labels = _read_block(d / "labels.csv", np.int64)
    _, rho = _read_block(d / "rho.csv")
    _, eta_all = _read_block(d / "eta.csv")
    _, cross = _read_block(d / "cross.csv")
    eta, c0 = [], 0
    for R in manifest["eta_dims"]:
        eta.append(eta_all[:, c0 : c0 + R])
        c0 += R
    shape = tuple(manifest["cross_shape"])
    return PosteriorSamples(
        variant=manifest["variant"],
        n=n,
        q=q,
        K=K,
        beta=beta.reshape(S, q, p),
        theta=theta,
        tau_s=tau[:, 0],
        V=V,
        gamma=gamma,
        labels=labels - 1,
        rho=rho,
        eta=eta,
        cross=cross.reshape((S,) + shape),
        acceptance=manifest.get("acceptance", {}),
        step_sizes={},
        seed=manifest.get("seed", 0),
    )


def write_json(path: Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(obj, sort_keys=True, indent=2, default=_json_default, allow_nan=True)
    Path(path).write_text(text + "\n")


def acceptance_json(samples: PosteriorSamples) -> dict:
    return {b: (None if not np.isfinite(samples.acceptance.get(b, np.nan)) else samples.acceptance[b]) for b in BLOCKS}
