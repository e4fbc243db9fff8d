"""Batch front end: `fit`, `simulate`, and `summarize` subcommands.

Configuration is a flat key = value text file (comments with `#`); every
key must be known, typed, and single-valued — unknown or duplicate keys are
errors, because a silently ignored hyperparameter is the worst failure mode
a batch sampler can have. Curves travel as long-format CSV with header
`id,dim,t,y`; covariates as `id,<name>,...` with a second `type` row tagging
each column cont or cat. All artifacts are deterministic functions of
(config, seed): no timestamps, sorted JSON keys, fixed float formatting.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from multiprocessing import get_context

import numpy as np
import pandas as pd

from curvemix import __version__ as _pkg_version
from curvemix.analysis import (
    cluster_count_series,
    coclustering,
    dahl_partition,
    lpml,
    pairwise_theta_distances,
    rand_index,
    singleton_count_series,
    waic,
)
from curvemix.basis import build_centered_design
from curvemix.model import CurveData, Hyperparams
from curvemix.sampler import MODES, SamplerError, SamplerSchedule, run_chain
from curvemix.simgen import SimScenario, generate_covariates, generate_dataset

__all__ = ["main", "parse_config", "ingest_curves", "ingest_covariates",
           "read_truth", "run_fit", "run_simulate", "run_summarize"]


class CliError(ValueError):
    """Configuration or data validation failure; message is user-facing."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _to_int(s):
    return int(s)


def _to_float(s):
    return float(s)


def _to_str(s):
    return s


def _to_onoff(s):
    if s not in ("on", "off"):
        raise ValueError("expected on or off")
    return s == "on"


def _to_floats(s):
    vals = [float(tok) for tok in s.split(",")]
    return vals[0] if len(vals) == 1 else vals


# key -> (converter, default). Defaults of None mean "required for fit"
# (data, n_coef) or "derived later" (n_adapt, out).
CONFIG_SPEC = {
    # run plumbing
    "data": (_to_str, None),
    "covariate_data": (_to_str, ""),
    "truth": (_to_str, ""),
    "out": (_to_str, ""),
    "mode": (_to_str, "mfrmmx"),
    "covariates": (_to_onoff, False),
    "seed": (_to_int, 0),
    "chains": (_to_int, 1),
    # schedule
    "n_burn": (_to_int, 1000),
    "n_keep": (_to_int, 1000),
    "thin": (_to_int, 1),
    "n_adapt": (_to_int, -1),
    "split_merge_per_iter": (_to_int, 1),
    "gibbs_scans_in_launch": (_to_int, 5),
    # model constants
    "n_coef": (_to_int, None),
    "n_components": (_to_int, 10),
    "lam_sd_bound": (_to_floats, 10.0),
    "repulsion": (_to_floats, 0.0),
    "repulsion_power": (_to_float, 2.0),
    "distance_exponent": (_to_float, 2.0),
    "tau_shape": (_to_float, 1.0),
    "tau_rate_shape": (_to_float, 1.0),
    "tau_rate_rate": (_to_float, 0.1),
    "comp_mean_var": (_to_float, 1.0e4),
    "intercept_mean_var": (_to_float, 1.0e4),
    "intercept_var_shape": (_to_float, 1.0),
    "intercept_var_scale": (_to_float, 1.0),
    "error_df": (_to_float, 1.0),
    "error_scale": (_to_float, 1.0),
    "error_var_shape": (_to_float, 1.0),
    "error_var_scale": (_to_float, 1.0),
    "weight_conc": (_to_float, 0.0),
    "alpha_prior_var": (_to_float, 25.0),
    "cohesion_mass": (_to_float, 1.0),
    "cat_sim_conc": (_to_float, 1.0),
    "dist_grid": (_to_int, 0),
    # artifact switches
    "emit_draws": (_to_onoff, True),
    "emit_coclustering": (_to_onoff, True),
    "emit_summary": (_to_onoff, True),
    "emit_distance_series": (_to_onoff, True),
}


def parse_config(text):
    """Parse flat key = value text into a typed dict; reject anything not
    in the schema, duplicates, and unparseable values, naming the line."""
    cfg = {k: default for k, (_, default) in CONFIG_SPEC.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"config line {lineno}: expected key = value, "
                           f"got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in CONFIG_SPEC:
            raise CliError(f"config line {lineno}: unknown key {key!r}")
        if key in seen:
            raise CliError(f"config line {lineno}: duplicate key {key!r}")
        seen.add(key)
        conv, _ = CONFIG_SPEC[key]
        try:
            cfg[key] = conv(val)
        except ValueError as exc:
            raise CliError(
                f"config line {lineno}: bad value for {key!r}: {exc}"
            ) from None
    return cfg


def _resolved_config(cfg):
    """JSON-ready copy of the typed config (stable key order)."""
    return {k: cfg[k] for k in sorted(cfg)}


def _config_hash(cfg):
    blob = json.dumps(_resolved_config(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# data ingestion
# ---------------------------------------------------------------------------


def ingest_curves(path):
    """Read long-format curves: header id,dim,t,y; dim in 1..D and t in
    1..n_i, contiguous within every (id, dim) block."""
    df = pd.read_csv(path, float_precision="round_trip")
    want = ["id", "dim", "t", "y"]
    if list(df.columns) != want:
        raise CliError(f"{path}: expected columns {want}, got "
                       f"{list(df.columns)}")
    if len(df) == 0:
        raise CliError(f"{path}: no observations")
    dims = np.unique(df["dim"])
    D = int(dims.max())
    if not np.array_equal(dims, np.arange(1, D + 1)):
        raise CliError(f"{path}: dim values must cover 1..{D}, got "
                       f"{list(dims)}")
    ids = list(dict.fromkeys(df["id"]))  # first-appearance order
    curves = []
    for ident in ids:
        block = df[df["id"] == ident]
        lengths = {}
        cols = {}
        for d in range(1, D + 1):
            sub = block[block["dim"] == d]
            if len(sub) == 0:
                raise CliError(f"{path}: id {ident!r} has no rows for "
                               f"dim {d}")
            tvals = sub["t"].to_numpy()
            order = np.argsort(tvals, kind="stable")
            tvals = tvals[order]
            if not np.array_equal(tvals, np.arange(1, len(tvals) + 1)):
                rows = [int(r) + 2 for r in sub.index[:3]]
                raise CliError(
                    f"{path}: id {ident!r} dim {d}: t must be contiguous "
                    f"1..n (near file lines {rows})")
            lengths[d] = len(sub)
            cols[d] = sub["y"].to_numpy()[order]
        if len(set(lengths.values())) != 1:
            raise CliError(
                f"{path}: id {ident!r} has ragged lengths across dims: "
                f"{lengths}")
        n_i = lengths[1]
        curves.append(np.column_stack([cols[d] for d in range(1, D + 1)])
                      .reshape(n_i, D))
    return CurveData(curves, ids=ids)


def ingest_covariates(path, data):
    """Read covariates: header id,<name>,...; first data row is the `type`
    row tagging every column cont or cat; remaining rows one per id."""
    df = pd.read_csv(path, dtype=str)
    if list(df.columns)[0] != "id" or df.shape[1] < 2:
        raise CliError(f"{path}: expected header id,<name>,...")
    if len(df) == 0 or df.iloc[0, 0] != "type":
        raise CliError(f"{path}: first data row must be the `type` row")
    kinds = [str(v) for v in df.iloc[0, 1:]]
    bad = [k for k in kinds if k not in ("cont", "cat")]
    if bad:
        raise CliError(f"{path}: type row entries must be cont or cat, "
                       f"got {bad}")
    body = df.iloc[1:].reset_index(drop=True)
    known = {str(i): pos for pos, i in enumerate(data.ids)}
    rows = np.full(data.m, -1, dtype=int)
    for r, ident in enumerate(body["id"]):
        if str(ident) not in known:
            raise CliError(f"{path}: file line {r + 3}: unknown id "
                           f"{ident!r} (not in the curve data)")
        rows[known[str(ident)]] = r
    missing = [data.ids[i] for i in range(data.m) if rows[i] < 0]
    if missing:
        raise CliError(f"{path}: no covariate row for ids {missing}")
    cont_cols, cat_cols = [], []
    for k, kind in enumerate(kinds):
        col = body.iloc[rows, k + 1]
        if kind == "cont":
            try:
                cont_cols.append(col.astype(float).to_numpy())
            except ValueError as exc:
                raise CliError(f"{path}: column {df.columns[k + 1]!r}: "
                               f"{exc}") from None
        else:
            _, codes = np.unique(col.to_numpy(), return_inverse=True)
            cat_cols.append(codes)
    cont = np.column_stack(cont_cols) if cont_cols else None
    cat = np.column_stack(cat_cols) if cat_cols else None
    return CurveData(data.Y, cont, cat, ids=data.ids)


def read_truth(path, data):
    """Read a reference partition: CSV with columns id,cluster."""
    df = pd.read_csv(path, dtype=str)
    if list(df.columns) != ["id", "cluster"]:
        raise CliError(f"{path}: expected columns ['id', 'cluster']")
    lookup = {str(i): c for i, c in zip(df["id"], df["cluster"])}
    missing = [i for i in data.ids if str(i) not in lookup]
    if missing:
        raise CliError(f"{path}: no cluster for ids {missing}")
    labels = np.array([lookup[str(i)] for i in data.ids])
    _, codes = np.unique(labels, return_inverse=True)
    return codes


# ---------------------------------------------------------------------------
# artifact emission
# ---------------------------------------------------------------------------


def _write_csv(df, path):
    # shortest-exact float text so every artifact re-reads bit-identically
    out = df.copy()
    for col in out.columns:
        if out[col].dtype.kind == "f":
            out[col] = out[col].map(lambda v: repr(float(v)))
    out.to_csv(path, index=False, lineterminator="\n")


def _write_matrix_csv(mat, ids, path, value_name):
    cols = {"draw": np.arange(1, mat.shape[0] + 1)}
    for k, ident in enumerate(ids):
        cols[f"{value_name}_{ident}"] = mat[:, k]
    _write_csv(pd.DataFrame(cols), path)


def _write_theta_trace(draws, path):
    rec = {"draw": [], "component": [], "dim": [], "coef": [], "value": []}
    for r, th in enumerate(draws.theta):
        J, D, p = th.shape
        idx = np.indices((J, D, p)).reshape(3, -1)
        rec["draw"].append(np.full(idx.shape[1], r + 1))
        rec["component"].append(idx[0] + 1)
        rec["dim"].append(idx[1] + 1)
        rec["coef"].append(idx[2] + 1)
        rec["value"].append(th.reshape(-1))
    _write_csv(pd.DataFrame({k: np.concatenate(v) for k, v in rec.items()}),
               path)


def _read_theta_trace(path):
    df = pd.read_csv(path, float_precision="round_trip")
    thetas = []
    for _, grp in df.groupby("draw", sort=True):
        J = int(grp["component"].max())
        D = int(grp["dim"].max())
        p = int(grp["coef"].max())
        th = np.empty((J, D, p))
        th[grp["component"] - 1, grp["dim"] - 1, grp["coef"] - 1] = \
            grp["value"].to_numpy()
        thetas.append(th)
    return thetas


class _TraceBundle:
    """Draws reloaded from artifact files, shaped for the analysis ops."""

    def __init__(self, z, theta):
        self.z = z
        self.theta = theta


def write_chain_artifacts(out_dir, draws, ids, emit_draws=True):
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if emit_draws:
        _write_matrix_csv(draws.z, ids, os.path.join(out_dir, "draws_z.csv"),
                          "z")
        _write_matrix_csv(draws.loglik, ids,
                          os.path.join(out_dir, "loglik.csv"), "ll")
        _write_theta_trace(draws, os.path.join(out_dir, "theta_trace.csv"))
        written += ["draws_z.csv", "loglik.csv", "theta_trace.csv"]
    return written


def write_aggregates(out_dir, cfg, bundles, logliks, ids, truth, n_max):
    """Pooled co-clustering, summary, and distance-series artifacts."""
    written = []
    Z = np.vstack([b.z for b in bundles])
    if cfg["emit_coclustering"]:
        C = coclustering(Z)
        df = pd.DataFrame(C, columns=[str(i) for i in ids])
        df.insert(0, "id", [str(i) for i in ids])
        _write_csv(df, os.path.join(out_dir, "coclustering.csv"))
        written.append("coclustering.csv")
    if cfg["emit_summary"]:
        point = dahl_partition(Z)
        ll = np.vstack(logliks)
        summary = {
            "mode": cfg["mode"],
            "covariates": bool(cfg["covariates"]),
            "chains": len(bundles),
            "n_kept_total": int(Z.shape[0]),
            "n_clusters_mean": float(cluster_count_series(Z).mean()),
            "n_singletons_mean": float(singleton_count_series(Z).mean()),
            "waic": waic(ll) if ll.shape[0] >= 2 else None,
            "lpml": lpml(ll) if ll.shape[0] >= 2 else None,
            "dahl_partition": [int(v) for v in point],
            "rand_vs_truth": None if truth is None
            else rand_index(point, truth),
        }
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append("summary.json")
    if cfg["emit_distance_series"]:
        grid = cfg["dist_grid"] if cfg["dist_grid"] > 0 else n_max
        Hdist = build_centered_design(grid, cfg["n_coef"])
        frames = []
        for ch, b in enumerate(bundles, start=1):
            series = pairwise_theta_distances(b, Hdist,
                                              q=cfg["distance_exponent"])
            R, D = series.shape
            frames.append(pd.DataFrame({
                "chain": np.repeat(ch, R * D),
                "draw": np.tile(np.arange(1, R + 1), D),
                "dim": np.repeat(np.arange(1, D + 1), R),
                "mean_distance": series.T.reshape(-1),
            }))
        _write_csv(pd.concat(frames, ignore_index=True),
                   os.path.join(out_dir, "distance_series.csv"))
        written.append("distance_series.csv")
    return written


def _write_manifest(out_dir, payload):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _hyperparams_from_config(cfg, D):
    return Hyperparams(
        n_coef=cfg["n_coef"],
        n_components=cfg["n_components"],
        n_dims=D,
        lam_sd_bound=cfg["lam_sd_bound"],
        repulsion=cfg["repulsion"],
        repulsion_power=cfg["repulsion_power"],
        distance_exponent=cfg["distance_exponent"],
        tau_shape=cfg["tau_shape"],
        tau_rate_shape=cfg["tau_rate_shape"],
        tau_rate_rate=cfg["tau_rate_rate"],
        comp_mean_var=cfg["comp_mean_var"],
        intercept_mean_var=cfg["intercept_mean_var"],
        intercept_var_shape=cfg["intercept_var_shape"],
        intercept_var_scale=cfg["intercept_var_scale"],
        error_df=cfg["error_df"],
        error_scale=cfg["error_scale"] * np.eye(D),
        error_var_shape=cfg["error_var_shape"],
        error_var_scale=cfg["error_var_scale"],
        weight_conc=cfg["weight_conc"] if cfg["weight_conc"] > 0 else None,
        alpha_cov=None,  # scaled identity built per design below
        cohesion_mass=cfg["cohesion_mass"],
        cat_sim_conc=cfg["cat_sim_conc"],
        dist_grid=cfg["dist_grid"] if cfg["dist_grid"] > 0 else None,
    )


def _schedule_from_config(cfg):
    return SamplerSchedule(
        n_burn=cfg["n_burn"],
        n_keep=cfg["n_keep"],
        thin=cfg["thin"],
        n_adapt=None if cfg["n_adapt"] < 0 else cfg["n_adapt"],
        split_merge_per_iter=cfg["split_merge_per_iter"],
        gibbs_scans_in_launch=cfg["gibbs_scans_in_launch"],
    )


def _chain_seeds(seed, chains):
    return [list(ss.spawn_key) for ss in
            np.random.SeedSequence(seed).spawn(chains)]


def _run_one_chain(args):
    data, hp, cfg, chain_index = args
    ss = np.random.SeedSequence(cfg["seed"]).spawn(cfg["chains"])[chain_index]
    rng = np.random.default_rng(ss)
    return run_chain(data, hp, mode=cfg["mode"],
                     covariates=cfg["covariates"],
                     schedule=_schedule_from_config(cfg), rng=rng)


def run_fit(cfg, out_dir, dry_run=False):
    """Execute one fit command; returns the process exit status."""
    for key in ("data", "n_coef"):
        if cfg[key] is None:
            raise CliError(f"config is missing required key {key!r}")
    if cfg["mode"] not in MODES:
        raise CliError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    if cfg["chains"] < 1:
        raise CliError("chains must be >= 1")

    data = ingest_curves(cfg["data"])
    if cfg["covariate_data"]:
        data = ingest_covariates(cfg["covariate_data"], data)
    if cfg["covariates"] and not data.has_covariates:
        raise CliError("covariates = on but no covariate_data was given")
    truth = read_truth(cfg["truth"], data) if cfg["truth"] else None

    hp = _hyperparams_from_config(cfg, data.D)
    if cfg["covariates"]:
        n_cov = data.stick_design().shape[1]
        hp.alpha_cov = cfg["alpha_prior_var"] * np.eye(n_cov)
    schedule = _schedule_from_config(cfg)  # validates lengths eagerly

    manifest = {
        "command": "fit",
        "package_version": _pkg_version,
        "config": _resolved_config(cfg),
        "config_hash": _config_hash(cfg),
        "seed": cfg["seed"],
        "chain_spawn_keys": _chain_seeds(cfg["seed"], cfg["chains"]),
        "n_individuals": data.m,
        "n_dims": data.D,
        "n_max": int(data.n.max()),
        "status": "dry-run" if dry_run else "running",
        "error": None,
        "artifacts": [],
    }
    if dry_run:
        _write_manifest(out_dir, manifest)
        return 0

    os.makedirs(out_dir, exist_ok=True)
    workers = int(os.environ.get("CURVEMIX_WORKERS", "1"))
    jobs = [(data, hp, cfg, c) for c in range(cfg["chains"])]
    artifacts = []
    try:
        if workers > 1 and cfg["chains"] > 1:
            with get_context("spawn").Pool(min(workers, cfg["chains"])) as pool:
                all_draws = pool.map(_run_one_chain, jobs)
        else:
            all_draws = [_run_one_chain(job) for job in jobs]
    except SamplerError as exc:
        manifest["status"] = "failed"
        manifest["error"] = str(exc)
        _write_manifest(out_dir, manifest)
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for c, draws in enumerate(all_draws, start=1):
        sub = f"chain{c:02d}"
        names = write_chain_artifacts(os.path.join(out_dir, sub), draws,
                                      data.ids, emit_draws=cfg["emit_draws"])
        artifacts += [f"{sub}/{name}" for name in names]
    bundles = [_TraceBundle(d.z, d.theta) for d in all_draws]
    logliks = [d.loglik for d in all_draws]
    if all_draws[0].n_kept > 0:
        artifacts += write_aggregates(out_dir, cfg, bundles, logliks,
                                      data.ids, truth, int(data.n.max()))
    manifest["status"] = "complete"
    manifest["artifacts"] = sorted(artifacts)
    _write_manifest(out_dir, manifest)
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _write_dataset_csv(data, path):
    ids, dims, ts, ys = [], [], [], []
    for i in range(data.m):
        n_i, D = data.Y[i].shape
        for d in range(1, D + 1):
            ids += [data.ids[i]] * n_i
            dims += [d] * n_i
            ts += list(range(1, n_i + 1))
            ys += list(data.Y[i][:, d - 1])
    _write_csv(pd.DataFrame({"id": ids, "dim": dims, "t": ts, "y": ys}), path)


def _write_covariates_csv(cont, cat, ids, path):
    header = ["id"] + [f"x{k + 1}" for k in range(cont.shape[1])] + \
        [f"c{k + 1}" for k in range(cat.shape[1])]
    rows = [["type"] + ["cont"] * cont.shape[1] + ["cat"] * cat.shape[1]]
    for i, ident in enumerate(ids):
        rows.append([ident] + [repr(float(v)) for v in cont[i]] +
                    [int(v) for v in cat[i]])
    _write_csv(pd.DataFrame(rows, columns=header), path)


def run_simulate(out_dir, seed, replicates, covariates):
    """Write `replicates` synthetic datasets under out_dir/repXX/."""
    seqs = np.random.SeedSequence(seed).spawn(replicates)
    scn = SimScenario()
    for r, ss in enumerate(seqs, start=1):
        rng = np.random.default_rng(ss)
        sub = os.path.join(out_dir, f"rep{r:02d}")
        os.makedirs(sub, exist_ok=True)
        data, truth = generate_dataset(scn, rng)
        _write_dataset_csv(data, os.path.join(sub, "curves.csv"))
        _write_csv(pd.DataFrame({"id": data.ids, "cluster": truth.z}),
                   os.path.join(sub, "truth.csv"))
        if covariates:
            cont, cat = generate_covariates(truth.z, rng,
                                            cont_var=scn.cont_cov_var)
            _write_covariates_csv(cont, cat, data.ids,
                                  os.path.join(sub, "covariates.csv"))
    _write_manifest(out_dir, {
        "command": "simulate",
        "package_version": _pkg_version,
        "seed": seed,
        "replicates": replicates,
        "covariates": covariates,
        "replicate_spawn_keys": [list(ss.spawn_key) for ss in seqs],
        "status": "complete",
    })
    return 0


# ---------------------------------------------------------------------------
# summarize
# ---------------------------------------------------------------------------


def run_summarize(out_dir, truth_path=None):
    """Recompute the aggregated artifacts of a completed fit directory."""
    manifest_path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise CliError(f"{out_dir}: no manifest.json (not a fit output?)")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("command") != "fit" or manifest.get("status") != "complete":
        raise CliError(f"{out_dir}: manifest is not a completed fit")
    cfg = manifest["config"]
    chains = cfg["chains"]
    bundles, logliks, ids = [], [], None
    for c in range(1, chains + 1):
        sub = os.path.join(out_dir, f"chain{c:02d}")
        zdf = pd.read_csv(os.path.join(sub, "draws_z.csv"))
        lldf = pd.read_csv(os.path.join(sub, "loglik.csv"),
                           float_precision="round_trip")
        ids = [col[len("z_"):] for col in zdf.columns if col != "draw"]
        Z = zdf.drop(columns="draw").to_numpy(dtype=int)
        ll = lldf.drop(columns="draw").to_numpy(dtype=float)
        theta = _read_theta_trace(os.path.join(sub, "theta_trace.csv"))
        bundles.append(_TraceBundle(Z, theta))
        logliks.append(ll)
    truth = None
    if truth_path:
        ref = pd.read_csv(truth_path, dtype=str)
        if list(ref.columns) != ["id", "cluster"]:
            raise CliError(f"{truth_path}: expected columns "
                           f"['id', 'cluster']")
        lookup = {i: c for i, c in zip(ref["id"], ref["cluster"])}
        missing = [i for i in ids if i not in lookup]
        if missing:
            raise CliError(f"{truth_path}: no cluster for ids {missing}")
        _, truth = np.unique([lookup[i] for i in ids], return_inverse=True)
    write_aggregates(out_dir, cfg, bundles, logliks, ids, truth,
                     manifest["n_max"])
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="curvemix",
        description="Bayesian mixture clustering of multivariate curves. "
        "Chains run in one process by default; set CURVEMIX_WORKERS to run "
        "chains of a fit in parallel processes.")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run chains on a dataset")
    fit.add_argument("--config", required=True, help="flat key = value file")
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--chains", type=int, default=None)
    fit.add_argument("--out", default=None, help="output directory")
    fit.add_argument("--mode", choices=MODES, default=None)
    fit.add_argument("--covariates", choices=["on", "off"], default=None)
    fit.add_argument("--dry-run", action="store_true",
                     help="validate config and data plumbing; write only "
                     "the manifest")

    sim = sub.add_parser("simulate", help="write synthetic datasets")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--replicates", type=int, default=1)
    sim.add_argument("--covariates", choices=["on", "off"], default="on")

    summ = sub.add_parser("summarize",
                          help="recompute aggregates of a finished fit")
    summ.add_argument("--out", required=True, help="fit output directory")
    summ.add_argument("--truth", default=None,
                      help="reference partition CSV (id,cluster)")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            with open(args.config) as fh:
                cfg = parse_config(fh.read())
            for key in ("seed", "chains", "mode"):
                if getattr(args, key) is not None:
                    cfg[key] = getattr(args, key)
            if args.covariates is not None:
                cfg["covariates"] = args.covariates == "on"
            out_dir = args.out if args.out is not None else cfg["out"]
            if not out_dir:
                raise CliError("no output directory: pass --out or set "
                               "out = ... in the config")
            return run_fit(cfg, out_dir, dry_run=args.dry_run)
        if args.command == "simulate":
            if args.replicates < 1:
                raise CliError("replicates must be >= 1")
            return run_simulate(args.out, args.seed, args.replicates,
                                args.covariates == "on")
        return run_summarize(args.out, truth_path=args.truth)
    except (CliError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
