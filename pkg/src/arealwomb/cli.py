"""Command-line interface: ``arealwomb {simulate,fit,detect,diagnose,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .boundary import Probe, adjacency_detection, boundary_probs, fdr_curve
from .diagnostics import diagnose as run_diagnostics
from .io import (
    InputError,
    RunConfig,
    acceptance_json,
    digest,
    file_digest,
    ingest,
    load_config,
    read_samples,
    write_counts,
    write_csv,
    write_dissimilarity,
    write_graph,
    write_json,
    write_samples,
)
from .sampler import Sampler
from .simulate import SimScenario, generate, reference_map

log = logging.getLogger("arealwomb")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_probes(q: int) -> list[Probe]:
    probes = [Probe("single", d) for d in range(q)]
    for d in range(q):
        for e in range(d + 1, q):
            probes += [Probe("shared", d, e), Probe("mutual", d, e)]
    return probes


def _data_digest(directory: Path) -> dict:
    return {p.name: file_digest(p) for p in sorted(Path(directory).glob("*.csv"))}


# simulate ---------------------------------------------------------------------------------


def cmd_simulate(args) -> dict:
    from .graph import grid_graph

    if args.grid:
        r, c = (int(v) for v in args.grid.lower().split("x"))
        graph = grid_graph(r, c)
    else:
        graph = reference_map()
    sc = SimScenario(variant=args.variant, seed=args.seed, replicates=args.replicates)
    out = generate(sc, graph)
    q = sc.q
    dest = Path(args.out)
    run_hash = digest({"command": "simulate", "variant": sc.variant, "seed": sc.seed,
                       "replicates": sc.replicates, "graph": [graph.n, list(graph.edges)]})
    write_graph(dest, graph, run_hash)
    for r in range(sc.replicates):
        name = "counts.csv" if r == 0 else f"counts_rep{r + 1:03d}.csv"
        write_counts(dest / name, out.y[r], out.E, run_hash)
    for d in range(q):
        write_dissimilarity(dest / f"dissimilarity_{d + 1}.csv", graph, out.z, run_hash)
    write_csv(dest / "covariates.csv", ["region_id", "disease_id", "name", "value"], [], run_hash)
    n = graph.n
    write_csv(
        dest / "truth_labels.csv",
        ["region_id", "disease_id", "label", "phi", "gamma"],
        [[i + 1, d + 1, int(out.labels[d * n + i]) + 1, out.theta[out.labels[d * n + i]], out.gamma[d * n + i]]
         for d in range(q) for i in range(n)],
        run_hash,
    )
    rows = []
    for pr in _default_probes(q):
        flags = out.truth(pr)
        for k, (a, b) in enumerate(graph.edges):
            rows.append([pr.name, a + 1, b + 1, int(flags[k])])
    write_csv(dest / "truth_boundaries.csv", ["probe", "edge_i", "edge_j", "flag"], rows, run_hash)
    arows = []
    for d in range(q):
        for a, b in graph.edges:
            i, j = (a, b) if graph.order[a] > graph.order[b] else (b, a)
            arows.append([d + 1, a + 1, b + 1, int(out.W[d][i, j])])
    write_csv(dest / "truth_adjacency.csv", ["disease_d", "edge_i", "edge_j", "w"], arows, run_hash)
    cfg = RunConfig(variant=sc.variant)
    if sc.variant != "unstructured":
        g = sc.disease_graph
        cfg.disease_graph = (
            {"parents": [[h + 1 for h in pa] for pa in g.parents]}
            if sc.variant == "directed"
            else {"adjacency": g.adjacency.astype(int).tolist()}
        )
    write_json(dest / "config.json", cfg.to_dict())
    write_json(dest / "scenario.json", {
        "run_hash": run_hash, "variant": sc.variant, "seed": sc.seed, "replicates": sc.replicates,
        "K": sc.K, "alpha": sc.alpha, "tau_s": sc.tau_s, "beta": list(sc.beta), "rho": list(sc.rho),
        "eta": list(sc.eta), "A": sc.A, "alpha_pairs": sc.alpha_pairs, "rho_dis": sc.rho_dis,
        "z_sigma": out.z_sigma, "x": out.x, "V": out.V, "theta": out.theta,
    })
    return {"command": "simulate", "out": str(dest), "run_hash": run_hash}


# fit ------------------------------------------------------------------------------------------


def cmd_fit(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.chain.seed = args.seed
    ds = ingest(args.data, counts=args.counts, standardize=cfg.standardize_dissimilarity)
    for line in ds.report:
        log.info(line)
    spec = cfg.disease_spec(ds.data.q)
    run_hash = digest({"command": "fit", "config": cfg.to_dict(), "data": _data_digest(args.data),
                       "counts": args.counts})
    sampler = Sampler(ds.data, ds.graph, spec, cfg.priors, cfg.chain)
    samples = sampler.run()
    dest = Path(args.out)
    write_samples(dest, samples, run_hash)
    manifest = {
        "run_hash": run_hash,
        "command": "fit",
        "config": cfg.to_dict(),
        "data_dir": str(args.data),
        "counts": args.counts,
        "data_digest": _data_digest(args.data),
        "variant": samples.variant,
        "n": samples.n,
        "q": samples.q,
        "K": samples.K,
        "p": ds.data.p,
        "covariates": list(ds.data.covariate_names),
        "eta_dims": [e.shape[1] for e in samples.eta],
        "cross_shape": list(samples.cross.shape[1:]),
        "draws": samples.size,
        "seed": cfg.chain.seed,
        "acceptance": acceptance_json(samples),
        "final_step_sizes": {b: v.tolist() for b, v in sampler.step_sizes().items()},
        "dissimilarity_scale": [s.tolist() for s in ds.data.z_scale] if ds.data.z_scale else None,
        "backend": _kernels.backend(),
    }
    write_json(dest / "manifest.json", manifest)
    return {"command": "fit", "out": str(dest), "run_hash": run_hash, "draws": samples.size}


def _load_run(run_dir: Path):
    manifest = json.loads((Path(run_dir) / "manifest.json").read_text())
    from .io import parse_config

    cfg = parse_config(manifest["config"])
    ds = ingest(manifest["data_dir"], counts=manifest["counts"], standardize=cfg.standardize_dissimilarity)
    samples = read_samples(run_dir, manifest)
    return manifest, cfg, ds, samples


# detect ----------------------------------------------------------------------------------------


def cmd_detect(args) -> dict:
    manifest, cfg, ds, samples = _load_run(args.run)
    zeta = cfg.zeta if args.zeta is None else args.zeta
    if not 0 < zeta < 1:
        raise InputError("zeta must lie in (0, 1)")
    probes = [Probe.parse(p) for p in (args.probe or cfg.probes)] or _default_probes(samples.q)
    for pr in probes:
        for dd in (pr.d, pr.d2):
            if dd is not None and dd >= samples.q:
                raise InputError(f"probe {pr.name} references disease {dd + 1}; data has {samples.q}")
    run_hash = digest({"fit": manifest["run_hash"], "zeta": zeta, "probes": [p.name for p in probes],
                       "cutoff": cfg.adjacency_cutoff})
    dest = Path(args.out or args.run)
    brows, crows, summary = [], [], {}
    for pr in probes:
        bp = boundary_probs(samples, ds.graph, pr)
        curve = fdr_curve(bp.v, zeta)
        if not curve.selected.any():
            log.warning("probe %s: no threshold satisfies the FDR budget %g", pr.name, zeta)
        d2 = pr.d2 + 1 if pr.d2 is not None else ""
        for k, (a, b) in enumerate(ds.graph.edges):
            brows.append([pr.name, a + 1, b + 1, pr.d + 1, d2, bp.v[k], int(curve.selected[k])])
        for r in range(curve.t.size):
            crows.append([pr.name, curve.t[r], curve.fdr[r], curve.fnr[r], int(curve.n_selected[r])])
        summary[pr.name] = {"selected": int(curve.selected.sum()), "t_star": curve.t_star,
                            "fdr_hat": curve.fdr_at_selection}
    write_csv(dest / "boundaries.csv",
              ["probe", "edge_i", "edge_j", "disease_d", "disease_dprime", "v", "selected"], brows, run_hash)
    write_csv(dest / "fdr_curve.csv", ["probe", "t", "fdr_hat", "fnr_hat", "n_selected"], crows, run_hash)
    arows, nonadj = [], {}
    for d, z in enumerate(ds.data.z):
        p = adjacency_detection(samples.eta[d], z)
        det = p > cfg.adjacency_cutoff
        nonadj[f"disease_{d + 1}"] = int(det.sum())
        for k, (a, b) in enumerate(ds.graph.edges):
            arows.append([d + 1, a + 1, b + 1, p[k], int(det[k])])
    write_csv(dest / "adjacency.csv", ["disease_d", "edge_i", "edge_j", "p_nonadjacent", "detected"], arows, run_hash)
    write_json(dest / "detect.json", {"run_hash": run_hash, "zeta": zeta, "probes": summary,
                                      "non_adjacencies": nonadj})
    return {"command": "detect", "out": str(dest), "run_hash": run_hash, "probes": summary}


# diagnose ---------------------------------------------------------------------------------------


def cmd_diagnose(args) -> dict:
    manifest, cfg, ds, samples = _load_run(args.run)
    rep = run_diagnostics(samples, ds.data, ds.graph, cfg.correlogram_bins)
    run_hash = digest({"fit": manifest["run_hash"], "command": "diagnose"})
    body = {"run_hash": run_hash, **rep.as_dict(),
            "shapes": {"draws": samples.size, "cells": samples.n * samples.q,
                       "observed_cells": int(ds.data.observed.sum())}}
    dest = Path(args.out or args.run)
    write_json(dest / "diagnostics.json", body)
    return {"command": "diagnose", "out": str(dest / "diagnostics.json"), "run_hash": run_hash,
            "waic": rep.waic.waic, "ess": rep.ess_multivariate}


# validate ---------------------------------------------------------------------------------------


def cmd_validate(args) -> dict:
    out = {"command": "validate", "ok": True}
    if args.config:
        cfg = load_config(args.config)
        out["config"] = {"variant": cfg.variant}
    if args.data:
        ds = ingest(args.data, counts=args.counts)
        out["data"] = {"n": ds.data.n, "q": ds.data.q, "edges": ds.graph.m, "covariates": list(ds.data.covariate_names),
                       "report": ds.report}
        if args.config:
            cfg.disease_spec(ds.data.q)
    if not args.config and not args.data:
        raise UsageError("validate needs --data and/or --config")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="arealwomb", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic data directory")
    s.add_argument("--out", required=True)
    s.add_argument("--variant", choices=("unstructured", "directed", "undirected"), default="unstructured")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--grid", help="use an RxC lattice instead of the reference map, e.g. 4x5")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the sampler and write a sample store")
    f.add_argument("--data", required=True)
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--counts", default="counts.csv")
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("detect", help="boundary probabilities and FDR selections")
    d.add_argument("--run", required=True)
    d.add_argument("--zeta", type=float)
    d.add_argument("--probe", action="append", help="e.g. single:1, shared:1,2 (repeatable)")
    d.add_argument("--out")
    d.set_defaults(func=cmd_detect)

    g = sub.add_parser("diagnose", help="WAIC, MCSE, multivariate ESS, Moran's I")
    g.add_argument("--run", required=True)
    g.add_argument("--out")
    g.set_defaults(func=cmd_diagnose)

    v = sub.add_parser("validate", help="schema and consistency checks only")
    v.add_argument("--data")
    v.add_argument("--config")
    v.add_argument("--counts", default="counts.csv")
    v.set_defaults(func=cmd_validate)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except InputError as exc:
        return _fail("input", str(exc), 1)
    except (FileNotFoundError, KeyError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    sys.stdout.write(json.dumps(result, sort_keys=True, default=str) + "\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
